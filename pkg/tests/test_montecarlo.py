import json
import math

import numpy as np
import pytest

from quadvar import montecarlo
from quadvar.errors import InvalidInputError, NumericalError
from quadvar.estimators import estimate_regularity
from quadvar.gp_sim import FBM, GaussianModel, IntegratedFBM, Wiener, substream
from quadvar.montecarlo import (
    PRESETS,
    ExperimentConfig,
    load_config,
    misspecification_study,
    rate_regression,
    run_experiment,
)


def _cfg(**kw):
    base = dict(
        model=GaussianModel(FBM(0.6)),
        n_grid=(50, 100),
        replications=20,
        master_seed=42,
        metrics=("prob_r_hat", "bias_H", "mse_H", "sd_H"),
        p_values=(1, 2),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_determinism_byte_identical():
    a = run_experiment(_cfg()).to_csv()
    b = run_experiment(_cfg()).to_csv()
    assert a == b
    assert run_experiment(_cfg(master_seed=43)).to_csv() != a


@pytest.mark.parametrize("model", [GaussianModel(FBM(0.6)), GaussianModel(IntegratedFBM(0.4)), GaussianModel(Wiener())])
def test_threads_do_not_change_results(model):
    cfg = _cfg(model=model)
    one = run_experiment(cfg, threads=1)
    four = run_experiment(cfg, threads=4)
    assert one.to_csv() == four.to_csv()
    assert one.replications_csv() == four.replications_csv()


def test_single_replication_passthrough():
    cfg = _cfg(n_grid=(200,), replications=1, p_values=(1,))
    s = run_experiment(cfg)
    path = montecarlo._PathFactory(cfg.model, montecarlo._design(200)).path(substream(42, 200, 0))
    est = estimate_regularity(path)
    assert s.get("bias_H_p1", 200) == pytest.approx(est.H_hat - 1.2, abs=1e-14)
    assert s.get(f"prob_r_hat={est.r_hat}", 200) == 1.0


def test_summary_invariants():
    s = run_experiment(_cfg(model=GaussianModel(FBM(0.9)), replications=40))
    for n in (50, 100):
        probs = [r.value for r in s.rows if r.n == n and r.metric.startswith("prob_r_hat")]
        assert all(0 <= p <= 1 for p in probs) and sum(probs) <= 1 + 1e-12
        for p in (1, 2):
            assert s.get(f"mse_H_p{p}", n) >= s.get(f"bias_H_p{p}", n) ** 2


def test_csv_layout():
    s = run_experiment(_cfg(n_grid=(30,), replications=3))
    lines = s.to_csv().splitlines()
    assert lines[0].startswith("# quadvar")
    assert any(l.startswith("# config_hash ") for l in lines)
    assert "n,metric,value,stderr,failures" in lines
    rep = s.replications_csv().splitlines()
    assert "n,j,r_hat,H_p1,H_p2,stat,error" in rep
    assert sum(1 for l in rep if l.startswith("30,")) == 3


def test_wiener_table1_cell():
    s = run_experiment(_cfg(model=GaussianModel(Wiener()), n_grid=(10,), replications=200, metrics=("prob_r_hat",)))
    assert s.get("prob_r_hat=0", 10) == 1.0


def test_failures_are_recorded_not_fatal(monkeypatch):
    orig = montecarlo._PathFactory.path
    calls = {"k": 0}

    def flaky(self, rng):
        calls["k"] += 1
        if calls["k"] % 5 == 0:
            raise NumericalError("injected")
        return orig(self, rng)

    monkeypatch.setattr(montecarlo._PathFactory, "path", flaky)
    s = run_experiment(_cfg(n_grid=(60,), replications=10, p_values=(1,)))
    row = next(r for r in s.rows if r.metric == "bias_H_p1")
    assert row.failures == 2 and math.isfinite(row.value)
    assert s.flagged == [60]
    assert sum("injected" in (r.error or "") for r in s.replications) == 2


def test_rate_regression_exact_power_law():
    n = np.array([500, 750, 1000, 1250])
    slope, r2 = rate_regression(n, 3.0 * n**-0.5)
    assert slope == pytest.approx(-0.5, abs=1e-12) and r2 == pytest.approx(1.0, abs=1e-12)


def test_rate_regression_drops_bad_rows():
    n = [10, 20, 40, 80, 160]
    with pytest.warns(UserWarning):
        slope, _ = rate_regression(n, [1.0, 0.5, 0.0, 0.125, -1.0])
    assert slope == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(InvalidInputError), pytest.warns(UserWarning):
        rate_regression([1, 2, 3], [1.0, 0.0, 0.0])


def test_rate_slope_rows():
    s = run_experiment(_cfg(n_grid=(100, 200, 400), metrics=("mae_H", "rate_slope"), p_values=(2,), replications=30))
    slope, r2 = s.regression["mae_H_p2"]
    assert slope == s.get("slope[mae_H_p2]", "all") and 0 <= r2 <= 1
    assert slope < 0


@pytest.mark.parametrize(
    "spec",
    [
        {"n_grid": [100, 50]},
        {"n_grid": []},
        {"replications": 0},
        {"replications": "huge"},
        {"metrics": ["accuracy"]},
        {"study": "misspecification"},
        {"colour": "red"},
        {"p_values": [3]},
    ],
)
def test_config_validation(spec):
    d = {"model": {"kernel": "wiener"}, "n_grid": [10, 20]}
    d.update(spec)
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_dict(d)


def test_presets_and_hash(tmp_path):
    c = ExperimentConfig.from_dict({"model": {"kernel": "wiener"}, "n_grid": [10], "replications": "paper"})
    assert c.replications == PRESETS["paper"] == 1000 and PRESETS["desk"] == 200
    assert c.config_hash == ExperimentConfig.from_dict(c.to_dict()).config_hash
    assert c.with_overrides(replications=5).config_hash != c.config_hash
    assert c.with_overrides(replications=None) == c
    f = tmp_path / "c.json"
    f.write_text(json.dumps(c.to_dict()))
    assert load_config(str(f)).config_hash == c.config_hash


@pytest.mark.parametrize(
    "name",
    ["table1_wiener", "table2_fbm", "table2_ifbm", "table3_fbm05", "table3_fbm095", "table3_ifbm05",
     "table4_fbm05", "table4_fbm095", "table5_ifbm05", "table5_ifbm02", "fig1_imse", "fig1_imse_ou"],
)
def test_bundled_configs_load(name):
    c = load_config(name)
    assert c.name == name and c.replications == 200


def test_load_config_missing():
    with pytest.raises(FileNotFoundError):
        load_config("no_such_config")


def test_misspecification_wiener_control():
    mean, sd = misspecification_study(GaussianModel(Wiener()), 400, 1, 100, master_seed=3)
    assert mean == pytest.approx(1.0, abs=0.05) and sd > 0


def test_misspecification_integrated_wiener():
    mean, sd = misspecification_study(GaussianModel(IntegratedFBM(0.5)), 500, 1, 100, master_seed=3)
    assert mean == pytest.approx(2.0, abs=0.02) and sd < 0.02


def test_quadrature_study_requires_wiener():
    cfg = _cfg(study="quadrature", metrics=("imse_slope",))
    with pytest.raises(InvalidInputError):
        run_experiment(cfg)


def test_statistical_sanity_sd_stabilises():
    cfg = _cfg(model=GaussianModel(Wiener()), n_grid=(1000,), replications=1000, metrics=("sd_H",), p_values=(1,),
               master_seed=7)
    full = run_experiment(cfg, threads=4)
    half = run_experiment(cfg.with_overrides(replications=500), threads=4)
    a, b = half.get("sd_H_p1", 1000), full.get("sd_H_p1", 1000)
    assert abs(a / b - 1) < 0.10
