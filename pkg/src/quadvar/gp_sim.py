"""Gaussian process models and exact path simulators."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

from quadvar.design import DensitySpec, SamplingDesign, build_design
from quadvar.errors import InvalidInputError, NumericalError

__all__ = [
    "Regularity",
    "Kernel",
    "Wiener",
    "FBM",
    "IntegratedFBM",
    "IntegratedWiener",
    "OrnsteinUhlenbeck",
    "Matern",
    "CustomKernel",
    "PowerScale",
    "Polynomial",
    "GaussianModel",
    "SamplePath",
    "GaussianSampler",
    "substream",
    "kernel_eval",
    "gram_matrix",
    "simulate_exact",
    "simulate_fbm_circulant",
    "transform_path",
    "ingest_csv",
]

MAX_EXACT_POINTS = 5000


# ---------------------------------------------------------------------------
# small serializable callables


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.value)


@dataclass(frozen=True)
class PowerScale:
    """``a(t) = c0 + c1 * t**power``."""

    c0: float = 1.0
    c1: float = 1.0
    power: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.c0 + self.c1 * t**self.power

    def to_dict(self):
        return {"c0": self.c0, "c1": self.c1, "power": self.power}


@dataclass(frozen=True)
class Polynomial:
    """``m(t) = sum_i coeffs[i] * t**i``."""

    coeffs: tuple = (0.0,)

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), self.coeffs)

    def to_dict(self):
        return list(self.coeffs)


@dataclass(frozen=True)
class ScaledD0:
    """``a(t)**2 * d0(t)`` for transformed processes."""

    a: Callable
    d0: Callable

    def __call__(self, t):
        return np.asarray(self.a(t)) ** 2 * np.asarray(self.d0(t))


@dataclass(frozen=True)
class Regularity:
    """Ground-truth smoothness ``(r0, beta0)`` and local-stationarity intensity ``d0``."""

    r0: int
    beta0: float
    d0: Callable | None = field(default_factory=Constant)

    @property
    def H(self) -> float:
        return 2.0 * (self.r0 + self.beta0)


# ---------------------------------------------------------------------------
# kernels


class Kernel:
    """Covariance function ``K(s, t)``; subclasses may supply an exact variogram."""

    name = "kernel"

    def cov(self, s, t):
        raise NotImplementedError

    def variogram(self, s, t):
        """``E (X(s) - X(t))**2`` for the centred process."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return self.cov(s, s) + self.cov(t, t) - 2.0 * self.cov(s, t)

    def truth(self) -> Regularity | None:
        return None

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"kernel": self.name, **self.params()}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class Wiener(Kernel):
    name = "wiener"

    def cov(self, s, t):
        return np.minimum(s, t)

    def variogram(self, s, t):
        return np.abs(np.asarray(s, float) - np.asarray(t, float))

    def truth(self):
        return Regularity(0, 0.5)


class FBM(Kernel):
    """Fractional Brownian motion with Hurst index ``beta``."""

    name = "fbm"

    def __init__(self, beta: float):
        if not 0 < beta < 1:
            raise InvalidInputError("fbm requires beta in (0, 1)")
        self.beta = float(beta)

    def cov(self, s, t):
        h = 2.0 * self.beta
        s = np.asarray(s, float)
        t = np.asarray(t, float)
        return 0.5 * (np.abs(s) ** h + np.abs(t) ** h - np.abs(s - t) ** h)

    def variogram(self, s, t):
        return np.abs(np.asarray(s, float) - np.asarray(t, float)) ** (2.0 * self.beta)

    def truth(self):
        return Regularity(0, self.beta)

    def params(self):
        return {"beta": self.beta}


class IntegratedFBM(Kernel):
    """Pathwise integral ``X(t) = int_0^t B(u) du`` of a fractional Brownian motion."""

    name = "integrated_fbm"

    def __init__(self, beta: float):
        if not 0 < beta < 1:
            raise InvalidInputError("integrated_fbm requires beta in (0, 1)")
        self.beta = float(beta)

    def cov(self, s, t):
        h = 2.0 * self.beta
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        lo = np.minimum(s, t)
        hi = np.maximum(s, t)
        return 0.5 * (
            (hi * lo ** (h + 1) + lo * hi ** (h + 1)) / (h + 1)
            - (lo ** (h + 2) + hi ** (h + 2) - (hi - lo) ** (h + 2)) / ((h + 1) * (h + 2))
        )

    def variogram(self, s, t):
        h = 2.0 * self.beta
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        lo = np.minimum(s, t)
        hi = np.maximum(s, t)
        gap = hi - lo
        return gap * (hi ** (h + 1) - lo ** (h + 1)) / (h + 1) - gap ** (h + 2) / ((h + 1) * (h + 2))

    def cov_quadrature(self, s: float, t: float) -> float:
        """Double integral of the fBm kernel over ``[0, s] x [0, t]`` (fallback path)."""
        fbm = FBM(self.beta)
        val, _ = integrate.dblquad(lambda v, u: fbm.cov(u, v), 0.0, s, 0.0, t, epsabs=1e-12, epsrel=1e-11)
        return float(val)

    def truth(self):
        return Regularity(1, self.beta)

    def params(self):
        return {"beta": self.beta}


class IntegratedWiener(Kernel):
    name = "integrated_wiener"

    def cov(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        lo = np.minimum(s, t)
        hi = np.maximum(s, t)
        return lo * lo * hi / 2.0 - lo**3 / 6.0

    def variogram(self, s, t):
        return IntegratedFBM(0.5).variogram(s, t)

    def truth(self):
        return Regularity(1, 0.5)


class OrnsteinUhlenbeck(Kernel):
    """Stationary OU: ``K(h) = sigma**2 / (2 theta) * exp(-theta |h|)``."""

    name = "ou"

    def __init__(self, theta: float = 1.0, sigma: float = 1.0):
        if theta <= 0 or sigma <= 0:
            raise InvalidInputError("ou requires theta > 0 and sigma > 0")
        self.theta = float(theta)
        self.sigma = float(sigma)

    def cov(self, s, t):
        h = np.abs(np.asarray(s, float) - np.asarray(t, float))
        return self.sigma**2 / (2 * self.theta) * np.exp(-self.theta * h)

    def variogram(self, s, t):
        h = np.abs(np.asarray(s, float) - np.asarray(t, float))
        return -(self.sigma**2 / self.theta) * np.expm1(-self.theta * h)

    def truth(self):
        return Regularity(0, 0.5, Constant(self.sigma**2))

    def params(self):
        return {"theta": self.theta, "sigma": self.sigma}


class Matern(Kernel):
    """``K(h) = sqrt(pi) phi / (2**(nu-1) Gamma(nu+1/2)) (alpha|h|)**nu K_nu(alpha|h|)``."""

    name = "matern"

    def __init__(self, nu: float, alpha: float = 1.0, phi: float = 1.0):
        if nu <= 0 or alpha <= 0 or phi <= 0:
            raise InvalidInputError("matern requires nu, alpha, phi > 0")
        self.nu = float(nu)
        self.alpha = float(alpha)
        self.phi = float(phi)

    @property
    def _prefactor(self):
        return math.sqrt(math.pi) * self.phi / (2 ** (self.nu - 1) * math.gamma(self.nu + 0.5))

    @property
    def variance(self) -> float:
        return math.sqrt(math.pi) * self.phi * math.gamma(self.nu) / math.gamma(self.nu + 0.5)

    def cov(self, s, t):
        x = self.alpha * np.abs(np.asarray(s, float) - np.asarray(t, float))
        shape = x.shape
        x = np.atleast_1d(x)
        out = np.full(x.shape, self.variance)
        pos = x > 0
        out[pos] = self._prefactor * x[pos] ** self.nu * special.kv(self.nu, x[pos])
        return out.reshape(shape)

    def truth(self):
        r0 = math.floor(self.nu)
        beta = self.nu - r0
        if beta == 0:
            return None
        d0 = None
        if r0 == 0:
            nu = self.nu
            c = (
                2 * math.sqrt(math.pi) * self.phi * math.gamma(nu) * math.gamma(1 - nu)
                / (math.gamma(nu + 0.5) * math.gamma(1 + nu))
                * (self.alpha / 2) ** (2 * nu)
            )
            d0 = Constant(c)
        return Regularity(r0, beta, d0)

    def params(self):
        return {"nu": self.nu, "alpha": self.alpha, "phi": self.phi}


class CustomKernel(Kernel):
    """User covariance ``func(s, t)`` (vectorized over broadcast arrays)."""

    name = "custom"

    def __init__(self, func: Callable, truth: Regularity | None = None, label: str = "custom"):
        self.func = func
        self._truth = truth
        self.label = label

    def cov(self, s, t):
        val = np.asarray(self.func(np.asarray(s, float), np.asarray(t, float)), dtype=float)
        if np.any(np.isnan(val)):
            raise InvalidInputError(f"custom kernel {self.label!r} returned NaN")
        return val

    def truth(self):
        return self._truth

    def params(self):
        return {"label": self.label}


_KERNELS = {
    "wiener": lambda p: Wiener(),
    "fbm": lambda p: FBM(p["beta"]),
    "integrated_fbm": lambda p: IntegratedFBM(p["beta"]),
    "ifbm": lambda p: IntegratedFBM(p["beta"]),
    "integrated_wiener": lambda p: IntegratedWiener(),
    "ou": lambda p: OrnsteinUhlenbeck(p.get("theta", 1.0), p.get("sigma", 1.0)),
    "matern": lambda p: Matern(p["nu"], p.get("alpha", 1.0), p.get("phi", 1.0)),
}


# ---------------------------------------------------------------------------
# model


@dataclass(eq=False)
class GaussianModel:
    """Process ``X(t) = a(t) (Y(t) + mu(t)) + m(t)`` with ``Y`` centred with kernel ``kernel``.

    ``scale`` (``a``) and ``trend`` (``m``) are the optional transform; ``truth``
    defaults to the kernel's known regularity with ``d0`` rescaled by ``a**2``.
    """

    kernel: Kernel
    mean: Callable | None = None
    scale: Callable | None = None
    trend: Callable | None = None
    truth: Regularity | None = None

    def __post_init__(self):
        if self.truth is None:
            base = self.kernel.truth()
            if base is not None and self.scale is not None and base.d0 is not None:
                base = replace(base, d0=ScaledD0(self.scale, base.d0))
            self.truth = base

    @classmethod
    def from_dict(cls, spec: dict) -> "GaussianModel":
        spec = dict(spec)
        name = spec.pop("kernel", None)
        if name not in _KERNELS:
            raise InvalidInputError(f"unknown kernel {name!r}; expected one of {sorted(_KERNELS)}")
        try:
            kernel = _KERNELS[name](spec)
        except KeyError as exc:
            raise InvalidInputError(f"kernel {name!r} is missing parameter {exc.args[0]!r}") from None
        mean = Polynomial(tuple(spec["mean"])) if spec.get("mean") else None
        scale = PowerScale(**spec["scale"]) if spec.get("scale") else None
        trend = Polynomial(tuple(spec["trend"])) if spec.get("trend") else None
        return cls(kernel, mean, scale, trend)

    @classmethod
    def from_json(cls, text_or_path) -> "GaussianModel":
        p = Path(str(text_or_path))
        text = p.read_text() if p.suffix == ".json" and p.exists() else str(text_or_path)
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        out = self.kernel.to_dict()
        for key in ("mean", "scale", "trend"):
            f = getattr(self, key)
            if f is not None and hasattr(f, "to_dict"):
                out[key] = f.to_dict()
        return out

    @property
    def model_id(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def _a(self, t):
        return np.ones_like(np.asarray(t, float)) if self.scale is None else np.asarray(self.scale(t), float)

    def cov(self, s, t):
        s = np.asarray(s, float)
        t = np.asarray(t, float)
        k = self.kernel.cov(s, t)
        if self.scale is None:
            return k
        return self._a(s) * self._a(t) * k

    def variogram(self, s, t):
        """Variogram of the centred (zero mean) part."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        g = self.kernel.variogram(s, t)
        if self.scale is None:
            return g
        a_s, a_t = self._a(s), self._a(t)
        kss, ktt = self.kernel.cov(s, s), self.kernel.cov(t, t)
        da = a_s - a_t
        return a_s**2 * g + da**2 * ktt + a_s * da * (kss - ktt - g)

    def mean_at(self, t):
        t = np.asarray(t, float)
        mu = np.zeros_like(t) if self.mean is None else np.asarray(self.mean(t), float)
        if self.scale is not None:
            mu = self._a(t) * mu
        if self.trend is not None:
            mu = mu + np.asarray(self.trend(t), float)
        return mu

    @property
    def has_mean(self) -> bool:
        return self.mean is not None or self.trend is not None


def kernel_eval(model: GaussianModel | Kernel, s, t):
    """Covariance of the model's process at ``(s, t)``."""
    val = model.cov(s, t)
    if np.any(np.isnan(val)):
        raise InvalidInputError("kernel returned NaN")
    return val


def gram_matrix(model: GaussianModel | Kernel, points) -> np.ndarray:
    t = np.asarray(points, float)
    return np.asarray(model.cov(t[:, None], t[None, :]), dtype=float)


# ---------------------------------------------------------------------------
# sample paths


@dataclass(frozen=True, eq=False)
class SamplePath:
    design: SamplingDesign
    values: np.ndarray
    provenance: str = "ingested"
    truth: Regularity | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (self.design.n + 1,):
            raise InvalidInputError(f"path has {v.size} values but the design has {self.design.n + 1} points")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("path values must be finite")

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def t(self) -> np.ndarray:
        return self.design.points

    def scaled(self, c: float) -> "SamplePath":
        return replace(self, values=c * self.values)

    def to_csv(self, path=None, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            for line in header.splitlines():
                buf.write(f"# {line}\n")
        buf.write("t,x\n")
        for t, x in zip(self.design.points + self.design.origin, self.values):
            buf.write(f"{t:.17g},{x:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` (e.g. ``(n, j)``) under ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _difference(mat: np.ndarray, q: int, axis: int) -> np.ndarray:
    out = np.array(mat, dtype=float)
    for _ in range(q):
        out = np.moveaxis(out, axis, 0)
        out = np.concatenate([out[:1], out[1:] - out[:-1]], axis=0)
        out = np.moveaxis(out, 0, axis)
    return out


class GaussianSampler:
    """Factorized Gram matrix of ``model`` on ``design``, reusable across seeds.

    The factorization works on the covariance of ``q``-fold differenced values
    (``q = r0 + 1`` when the regularity is known) and integrates back by cumulative
    sums. Diagonal jitter starts at ``1e-12 * trace / size`` and escalates tenfold
    up to ``1e-6 * trace / size``.
    """

    def __init__(self, model: GaussianModel, design: SamplingDesign, diff_order: int | None = None):
        m = design.n + 1
        if m > MAX_EXACT_POINTS:
            raise InvalidInputError(f"exact simulation is limited to {MAX_EXACT_POINTS} points, got {m}")
        if diff_order is None:
            diff_order = model.truth.r0 + 1 if model.truth is not None else 1
        self.model = model
        self.design = design
        self.q = int(min(max(diff_order, 0), design.n))
        t = design.points
        gram = gram_matrix(model, t)
        if np.any(~np.isfinite(gram)):
            raise InvalidInputError("kernel produced non-finite covariances on this design")
        cov = _difference(_difference(gram, self.q, 0), self.q, 1)
        cov = 0.5 * (cov + cov.T)
        diag = np.diag(cov)
        active = diag > 1e-15 * max(float(diag.max()), 1e-300)
        self.active = np.flatnonzero(active)
        sub = cov[np.ix_(self.active, self.active)]
        base = float(np.trace(sub)) / max(sub.shape[0], 1)
        jitter = 1e-12
        while True:
            try:
                self.factor = np.linalg.cholesky(sub + jitter * base * np.eye(sub.shape[0]))
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
                if jitter > 1e-6 * (1 + 1e-9):
                    raise NumericalError(
                        "Gram matrix factorization failed at maximal jitter; "
                        "the model is numerically degenerate on this design"
                    ) from None
        self.jitter = jitter
        self.mean = model.mean_at(t) if model.has_mean else None

    def draw(self, rng) -> np.ndarray:
        rng = _as_rng(rng)
        z = rng.standard_normal(self.active.size)
        y = np.zeros(self.design.n + 1)
        y[self.active] = self.factor @ z
        for _ in range(self.q):
            y = np.cumsum(y)
        if self.mean is not None:
            y = y + self.mean
        return y

    def path(self, rng, provenance: str = "") -> SamplePath:
        return SamplePath(self.design, self.draw(rng), provenance or self.model.model_id, self.model.truth)


def simulate_exact(model: GaussianModel, design: SamplingDesign, seed=None, diff_order: int | None = None) -> SamplePath:
    """Exact Gaussian draw on ``design`` via Cholesky factorization."""
    sampler = GaussianSampler(model, design, diff_order)
    return sampler.path(seed, f"{model.model_id} seed={seed}")


# ---------------------------------------------------------------------------
# circulant embedding


def fgn_autocovariance(beta: float, lags, step: float = 1.0) -> np.ndarray:
    """Autocovariance of fBm increments over steps of length ``step``."""
    k = np.abs(np.asarray(lags, dtype=float))
    h = 2.0 * beta
    return 0.5 * step**h * (np.abs(k + 1) ** h - 2 * k**h + np.abs(k - 1) ** h)


class CirculantFGN:
    """Circulant embedding of fractional Gaussian noise of length ``size``."""

    def __init__(self, beta: float, size: int, step: float):
        if not 0 < beta < 1:
            raise InvalidInputError("beta must be in (0, 1)")
        self.size = int(size)
        m = 2 ** max(1, math.ceil(math.log2(max(2 * (self.size - 1), 2))))
        limit = 2**16 * max(self.size, 1)
        while True:
            half = m // 2
            gam = fgn_autocovariance(beta, np.arange(half + 1), step)
            row = np.concatenate([gam, gam[-2:0:-1]])
            lam = np.fft.fft(row).real
            if lam.min() >= -1e-9 * lam.max():
                break
            m *= 2
            if m > limit:
                raise NumericalError("circulant embedding has negative eigenvalues at maximal size")
        self.m = m
        self.sqrt_lam = np.sqrt(np.clip(lam, 0.0, None) / m)

    def draw(self, rng) -> np.ndarray:
        rng = _as_rng(rng)
        z = rng.standard_normal(self.m) + 1j * rng.standard_normal(self.m)
        w = np.fft.fft(self.sqrt_lam * z)
        return w.real[: self.size]


def simulate_fbm_circulant(beta: float, n: int, T: float = 1.0, seed=None) -> SamplePath:
    """fBm path on the equidistant design of ``n + 1`` points via circulant embedding."""
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    design = build_design(DensitySpec.uniform(T), n, T)
    gen = CirculantFGN(beta, n, design.delta_n)
    values = np.concatenate([[0.0], np.cumsum(gen.draw(seed))])
    return SamplePath(design, values, f"fbm-circulant beta={beta} seed={seed}", Regularity(0, float(beta)))


# ---------------------------------------------------------------------------
# transforms and ingestion


def transform_path(path: SamplePath, a: Callable | None = None, m: Callable | None = None) -> SamplePath:
    """``a(t) x + m(t)``; the truth's ``d0`` becomes ``a**2 d0``."""
    t = path.design.points
    av = np.ones_like(t) if a is None else np.broadcast_to(np.asarray(a(t), float), t.shape)
    if np.any(av <= 0):
        raise InvalidInputError("scale function a must be positive on the design")
    mv = np.zeros_like(t) if m is None else np.broadcast_to(np.asarray(m(t), float), t.shape)
    truth = path.truth
    if truth is not None and a is not None and truth.d0 is not None:
        truth = replace(truth, d0=ScaledD0(a, truth.d0))
    return SamplePath(path.design, av * path.values + mv, path.provenance + " transformed", truth)


def _parse_float(cell: str, row: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise InvalidInputError(f"non-numeric cell {cell!r} on data row {row}") from None


def ingest_csv(source) -> SamplePath:
    """Read ``t,x`` or single-column ``x`` data; ``#`` lines are comments.

    A single column is placed on the equidistant design of ``[0, 1]``.
    """
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        raise InvalidInputError(f"cannot read {source!r}")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise InvalidInputError("empty input")
    header = [c.strip().lower() for c in rows[0]]
    if all(_is_number(c) for c in header):
        columns = ["t", "x"] if len(header) == 2 else ["x"]
        data = rows
    else:
        columns = header
        data = rows[1:]
    if not data:
        raise InvalidInputError("input has a header but no data rows")
    if "x" not in columns:
        raise InvalidInputError("input needs an 'x' column")
    ix = columns.index("x")
    it = columns.index("t") if "t" in columns else None
    x = np.array([_parse_float(r[ix], i) for i, r in enumerate(data, 1)])
    if it is None:
        if x.size < 3:
            raise InvalidInputError("need at least 3 observations")
        design = build_design(DensitySpec.uniform(1.0), x.size - 1, 1.0)
    else:
        t = np.array([_parse_float(r[it], i) for i, r in enumerate(data, 1)])
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("t column must be strictly increasing")
        design = SamplingDesign.from_points(t)
    return SamplePath(design, x, "ingested")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
