"""Seeded Monte Carlo harness for the estimation, misspecification and approximation studies.

Replication ``j`` at grid size ``n`` always draws from ``substream(master_seed, n, j)``,
so summaries do not depend on how replications are spread over worker threads.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from quadvar.design import DensitySpec, SamplingDesign, build_design
from quadvar.errors import InvalidInputError, QuadvarError
from quadvar.estimators import EstimatorConfig, estimate_regularity, h_statistic
from quadvar.gp_sim import (
    FBM,
    CirculantFGN,
    GaussianModel,
    GaussianSampler,
    SamplePath,
    Wiener,
    substream,
)
from quadvar.interp import (
    PiecewiseLagrange,
    empirical_imse,
    exact_imse,
    plugin_approximation,
    plugin_quadrature,
)

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "ExperimentSummary",
    "SummaryRow",
    "run_experiment",
    "rate_regression",
    "misspecification_study",
    "load_config",
]

PRESETS = {"desk": 200, "paper": 1000}
STUDIES = ("estimation", "misspecification", "imse", "quadrature")
METRICS = ("prob_r_hat", "bias_H", "mse_H", "mae_H", "sd_H", "rate_slope", "imse_slope", "misspec_order")
FAILURE_FLAG = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    model: GaussianModel
    n_grid: tuple
    replications: int
    master_seed: int
    estimator: EstimatorConfig = EstimatorConfig()
    metrics: tuple = ("prob_r_hat",)
    name: str = "experiment"
    study: str = "estimation"
    p_values: tuple = (1,)
    r_forced: int | None = None
    imse_mode: str = "exact"
    imse_order: int | str = 1
    stride: int = 8
    rate_error: str = "mae_H"

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidInputError("n_grid must be a non-empty strictly increasing list")
        if grid[0] < 3:
            raise InvalidInputError("grid sizes must be >= 3")
        object.__setattr__(self, "n_grid", grid)
        if int(self.replications) < 1:
            raise InvalidInputError("replications must be >= 1")
        if self.study not in STUDIES:
            raise InvalidInputError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise InvalidInputError(f"unknown metrics {bad}; expected a subset of {METRICS}")
        if any(p not in (1, 2) for p in self.p_values):
            raise InvalidInputError("p_values must be drawn from {1, 2}")
        if self.study == "misspecification" and (self.r_forced is None or self.r_forced < 1):
            raise InvalidInputError("a misspecification study needs r_forced >= 1")
        if self.imse_mode not in ("exact", "empirical"):
            raise InvalidInputError("imse_mode must be 'exact' or 'empirical'")
        if self.stride < 2:
            raise InvalidInputError("stride must be >= 2")

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        spec = dict(spec)
        try:
            model = GaussianModel.from_dict(spec.pop("model"))
            grid = spec.pop("n_grid")
        except KeyError as exc:
            raise InvalidInputError(f"experiment config is missing {exc.args[0]!r}") from None
        reps = spec.pop("replications", "desk")
        if isinstance(reps, str):
            if reps not in PRESETS:
                raise InvalidInputError(f"unknown replication preset {reps!r}; expected {sorted(PRESETS)}")
            reps = PRESETS[reps]
        est = EstimatorConfig.from_dict(spec.pop("estimator", {}))
        imse = spec.pop("imse", {})
        kwargs = dict(
            model=model,
            n_grid=tuple(grid),
            replications=int(reps),
            master_seed=int(spec.pop("master_seed", 0)),
            estimator=est,
            metrics=tuple(spec.pop("metrics", ["prob_r_hat"])),
            name=str(spec.pop("name", "experiment")),
            study=spec.pop("study", "estimation"),
            p_values=tuple(spec.pop("p_values", [est.p])),
            r_forced=spec.pop("r_forced", None),
            imse_mode=imse.get("mode", "exact"),
            imse_order=imse.get("r", 1),
            stride=int(imse.get("stride", 8)),
            rate_error=spec.pop("rate_error", "mae_H"),
        )
        spec.pop("description", None)
        if spec:
            raise InvalidInputError(f"unknown experiment fields {sorted(spec)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "study": self.study,
            "model": self.model.to_dict(),
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "estimator": self.estimator.to_dict(),
            "metrics": list(self.metrics),
            "p_values": list(self.p_values),
            "r_forced": self.r_forced,
            "imse": {"mode": self.imse_mode, "r": self.imse_order, "stride": self.stride},
            "rate_error": self.rate_error,
        }

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig(**data)


def load_config(source) -> ExperimentConfig:
    """Config from a JSON file path, a bundled config name or a JSON string."""
    text = None
    p = Path(str(source))
    if p.exists():
        text = p.read_text()
    else:
        bundled = Path(__file__).with_name("configs") / (p.name if p.suffix else p.name + ".json")
        if bundled.exists():
            text = bundled.read_text()
        elif str(source).lstrip().startswith("{"):
            text = str(source)
    if text is None:
        raise FileNotFoundError(f"no experiment config at {source!r}")
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config is not valid JSON: {exc}") from None
    if not isinstance(spec, dict):
        raise InvalidInputError("config must be a JSON object")
    return ExperimentConfig.from_dict(spec)


# ---------------------------------------------------------------------------
# path generation


def _is_plain(model: GaussianModel, kind) -> bool:
    return isinstance(model.kernel, kind) and model.scale is None and not model.has_mean


class _PathFactory:
    """Sampler for one design: independent increments, circulant or exact factorization."""

    def __init__(self, model: GaussianModel, design: SamplingDesign):
        self.model, self.design = model, design
        if _is_plain(model, Wiener):
            self.kind = "wiener"
            self.sd = np.sqrt(np.diff(design.points))
        elif _is_plain(model, FBM) and design.is_equidistant:
            self.kind = "circulant"
            self.gen = CirculantFGN(model.kernel.beta, design.n, design.delta_n)
        else:
            self.kind = "exact"
            self.sampler = GaussianSampler(model, design)

    def draw(self, rng) -> np.ndarray:
        if self.kind == "wiener":
            return np.concatenate([[0.0], np.cumsum(self.sd * rng.standard_normal(self.sd.size))])
        if self.kind == "circulant":
            return np.concatenate([[0.0], np.cumsum(self.gen.draw(rng))])
        return self.sampler.draw(rng)

    def path(self, rng) -> SamplePath:
        return SamplePath(self.design, self.draw(rng), self.model.model_id, self.model.truth)


def _design(n: int) -> SamplingDesign:
    return build_design(DensitySpec.uniform(1.0), n, 1.0)


# ---------------------------------------------------------------------------
# per-replication work


@dataclass
class Replication:
    n: int
    j: int
    r_hat: int | None = None
    H: dict = field(default_factory=dict)
    stat: float = math.nan
    error: str | None = None


def _one_estimation(cfg: ExperimentConfig, factory: _PathFactory, n: int, j: int) -> Replication:
    rec = Replication(n, j)
    try:
        path = factory.path(substream(cfg.master_seed, n, j))
        if cfg.study == "misspecification":
            rec.stat = h_statistic(path, cfg.r_forced, cfg.estimator.u, cfg.estimator.v)
            return rec
        for p in cfg.p_values:
            est = estimate_regularity(path, replace(cfg.estimator, p=p))
            rec.r_hat = est.r_hat if est.found else None
            rec.H[p] = est.H_hat if est.found else math.nan
    except (QuadvarError, ValueError, ArithmeticError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _one_quadrature(cfg: ExperimentConfig, design: SamplingDesign, n: int, j: int) -> Replication:
    """Plug-in quadrature error for Brownian motion with its exactly simulated integral."""
    rec = Replication(n, j)
    try:
        rng = substream(cfg.master_seed, n, j)
        t = design.points
        h = np.diff(t)
        x = np.concatenate([[0.0], np.cumsum(np.sqrt(h) * rng.standard_normal(h.size))])
        tail = design.T - t[-1]
        bridge = np.sqrt(h**3 / 12.0) @ rng.standard_normal(h.size)
        exact = float(np.sum(0.5 * h * (x[1:] + x[:-1])) + bridge)
        if tail > 0:
            exact += tail * x[-1] + math.sqrt(tail**3 / 3.0) * rng.standard_normal()
        path = SamplePath(design, x, "wiener", cfg.model.truth)
        est = estimate_regularity(path, cfg.estimator)
        rec.r_hat = est.r_hat if est.found else None
        rec.stat = plugin_quadrature(path, est).value - exact
    except (QuadvarError, ValueError, ArithmeticError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _one_empirical_imse(cfg: ExperimentConfig, factory: _PathFactory, n: int, j: int) -> Replication:
    rec = Replication(n, j)
    try:
        fine = factory.path(substream(cfg.master_seed, n, j))
        s = cfg.stride
        coarse = SamplePath(_design(n), fine.values[::s], fine.provenance, fine.truth)
        if cfg.imse_order == "plugin":
            est = estimate_regularity(coarse, cfg.estimator)
            rec.r_hat = est.r_hat if est.found else None
            interp = plugin_approximation(coarse, est)
        else:
            interp = PiecewiseLagrange.from_path(coarse, int(cfg.imse_order))
        rec.stat = empirical_imse(interp, fine.design.points, fine.values)
    except (QuadvarError, ValueError, ArithmeticError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


# ---------------------------------------------------------------------------
# summary


@dataclass(frozen=True)
class SummaryRow:
    n: int | str
    metric: str
    value: float
    stderr: float = math.nan
    failures: int = 0


@dataclass
class ExperimentSummary:
    config: ExperimentConfig
    rows: list
    replications: list = field(default_factory=list, repr=False)
    flagged: list = field(default_factory=list)
    regression: dict = field(default_factory=dict)

    def get(self, metric: str, n=None) -> float:
        for row in self.rows:
            if row.metric == metric and (n is None or row.n == n):
                return row.value
        raise KeyError((metric, n))

    def header(self) -> str:
        from quadvar import __version__

        return (
            f"# quadvar {__version__}\n# config {self.config.name}\n"
            f"# config_hash {self.config.config_hash}\n# seed {self.config.master_seed}\n"
            f"# replications {self.config.replications}\n"
        )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(self.header())
        buf.write("n,metric,value,stderr,failures\n")
        for r in self.rows:
            buf.write(f"{r.n},{r.metric},{_fmt(r.value)},{_fmt(r.stderr)},{r.failures}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def replications_csv(self, path=None) -> str:
        """One line per replication, for boxplots."""
        buf = io.StringIO()
        buf.write(self.header())
        ps = list(self.config.p_values)
        buf.write("n,j,r_hat," + ",".join(f"H_p{p}" for p in ps) + ",stat,error\n")
        for rec in self.replications:
            r = "l0" if rec.r_hat is None else rec.r_hat
            hs = ",".join(_fmt(rec.H.get(p, math.nan)) for p in ps)
            err = "" if rec.error is None else rec.error.replace(",", ";").replace("\n", " ")
            buf.write(f"{rec.n},{rec.j},{r},{hs},{_fmt(rec.stat)},{err}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return format(float(x), ".12g")


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(np.mean(x)), se


def _summarise_estimation(cfg: ExperimentConfig, n: int, recs: list) -> list:
    rows = []
    N = len(recs)
    failed = [r for r in recs if r.error is not None]
    ok = [r for r in recs if r.error is None]
    if cfg.study == "misspecification":
        stats = np.array([r.stat for r in ok])
        m, se = _mean_se(stats)
        sd = float(np.std(stats, ddof=1)) if stats.size > 1 else math.nan
        rows += [SummaryRow(n, "misspec_mean", m, se, len(failed)), SummaryRow(n, "misspec_sd", sd, math.nan, len(failed))]
        return rows
    if "prob_r_hat" in cfg.metrics:
        cats = sorted({r.r_hat for r in ok if r.r_hat is not None})
        for c in cats:
            pr = sum(r.r_hat == c for r in ok) / N
            rows.append(SummaryRow(n, f"prob_r_hat={c}", pr, math.sqrt(pr * (1 - pr) / N), len(failed)))
        pl = sum(r.r_hat is None for r in ok) / N
        rows.append(SummaryRow(n, "prob_r_hat=l0", pl, math.sqrt(pl * (1 - pl) / N), len(failed)))
    truth = cfg.model.truth
    if truth is None:
        return rows
    for p in cfg.p_values:
        h = np.array([r.H.get(p, math.nan) for r in ok])
        bad = len(failed) + int(np.sum(np.isnan(h)))
        err = h[~np.isnan(h)] - truth.H
        if "bias_H" in cfg.metrics:
            rows.append(SummaryRow(n, f"bias_H_p{p}", *_mean_se(err), bad))
        if "mse_H" in cfg.metrics:
            rows.append(SummaryRow(n, f"mse_H_p{p}", *_mean_se(err**2), bad))
        if "mae_H" in cfg.metrics or "rate_slope" in cfg.metrics:
            rows.append(SummaryRow(n, f"mae_H_p{p}", *_mean_se(np.abs(err)), bad))
        if "sd_H" in cfg.metrics:
            sd = float(np.std(err, ddof=1)) if err.size > 1 else math.nan
            rows.append(SummaryRow(n, f"sd_H_p{p}", sd, math.nan, bad))
    return rows


def _run_cells(cfg: ExperimentConfig, n: int, work, threads: int) -> list:
    reps = range(cfg.replications)
    if threads <= 1:
        return [work(cfg, n, j) for j in reps]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: work(cfg, n, j), reps))


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentSummary:
    """Run every ``(n, j)`` cell and fold the results in ``(n, j)`` order."""
    cfg = config
    rows: list = []
    all_recs: list = []
    flagged: list = []
    regression: dict = {}
    series: dict = {}
    for n in cfg.n_grid:
        if cfg.study == "imse" and cfg.imse_mode == "exact":
            order = 1 if cfg.imse_order == "plugin" else int(cfg.imse_order)
            val = exact_imse(cfg.model, _design(n), order)
            rows += [SummaryRow(n, "imse", val), SummaryRow(n, "ln_n", math.log(n)), SummaryRow(n, "ln_imse", math.log(val))]
            series.setdefault("imse", []).append((n, val))
            continue
        if cfg.study == "quadrature":
            if not _is_plain(cfg.model, Wiener):
                raise InvalidInputError("the quadrature study simulates the exact integral of Brownian motion only")
            design = _design(n)
            recs = _run_cells(cfg, n, lambda c, n_, j: _one_quadrature(c, design, n_, j), threads)
        elif cfg.study == "imse":
            fine = build_design(DensitySpec.uniform(1.0), cfg.stride * (n + 1) - 1, 1.0)
            factory = _PathFactory(cfg.model, fine)
            recs = _run_cells(cfg, n, lambda c, n_, j: _one_empirical_imse(c, factory, n_, j), threads)
        else:
            factory = _PathFactory(cfg.model, _design(n))
            recs = _run_cells(cfg, n, lambda c, n_, j: _one_estimation(c, factory, n_, j), threads)
        all_recs += recs
        nfail = sum(r.error is not None for r in recs)
        if nfail > FAILURE_FLAG * len(recs):
            flagged.append(n)
        if cfg.study == "quadrature":
            e = np.array([r.stat for r in recs if r.error is None])
            rms = float(np.sqrt(np.mean(e**2))) if e.size else math.nan
            rows.append(SummaryRow(n, "rms_quad_error", rms, math.nan, nfail))
            series.setdefault("rms_quad_error", []).append((n, rms))
        elif cfg.study == "imse":
            v = np.array([r.stat for r in recs if r.error is None])
            m, se = _mean_se(v)
            rows += [SummaryRow(n, "imse", m, se, nfail), SummaryRow(n, "ln_n", math.log(n)), SummaryRow(n, "ln_imse", math.log(m))]
            series.setdefault("imse", []).append((n, m))
        else:
            cell = _summarise_estimation(cfg, n, recs)
            rows += cell
            for row in cell:
                series.setdefault(row.metric, []).append((n, row.value))
    targets = []
    if "rate_slope" in cfg.metrics:
        targets = [f"{cfg.rate_error}_p{p}" for p in cfg.p_values] if cfg.study == "estimation" else [cfg.rate_error]
    if "imse_slope" in cfg.metrics:
        targets.append("rms_quad_error" if cfg.study == "quadrature" else "imse")
    for name in targets:
        pts = series.get(name, [])
        if len(pts) >= 3:
            slope, r2 = rate_regression([n for n, _ in pts], [v for _, v in pts])
            regression[name] = (slope, r2)
            rows += [SummaryRow("all", f"slope[{name}]", slope), SummaryRow("all", f"r2[{name}]", r2)]
    return ExperimentSummary(cfg, rows, all_recs, flagged, regression)


def rate_regression(n_values, errors) -> tuple[float, float]:
    """OLS slope and ``R**2`` of ``ln(error)`` on ``ln(n)``; non-positive errors are dropped."""
    n = np.asarray(n_values, float)
    e = np.asarray(errors, float)
    keep = np.isfinite(e) & (e > 0)
    if not np.all(keep):
        warnings.warn(f"dropping {int(np.sum(~keep))} rows with non-positive or missing error", stacklevel=2)
    n, e = n[keep], e[keep]
    if n.size < 3:
        raise InvalidInputError("rate regression needs at least 3 positive grid points")
    x, y = np.log(n), np.log(e)
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[1]), r2


def misspecification_study(model: GaussianModel, n: int, r_forced: int, reps: int, master_seed: int = 0,
                           u: int = 1, v: int = 4, threads: int = 1) -> tuple[float, float]:
    """Mean and SD of the log-ratio H statistic evaluated at a forced order."""
    cfg = ExperimentConfig(
        model, (n,), reps, master_seed, EstimatorConfig(u=u, v=v), ("misspec_order",),
        name="misspecification", study="misspecification", r_forced=r_forced,
    )
    s = run_experiment(cfg, threads)
    return s.get("misspec_mean", n), s.get("misspec_sd", n)
