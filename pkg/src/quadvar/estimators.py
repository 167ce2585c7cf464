"""Two-step estimation of the global smoothness ``(r0, beta0)``.

Step 1 picks ``r0`` as the first order whose quadratic variation (dilation 1)
crosses the threshold ``n**2 b_n``, minus two. Step 2 compares the quadratic
variations at order ``r0 + p`` for two dilations ``u < v``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from quadvar.design import DensitySpec
from quadvar.divdiff import finite_difference_qv, quadratic_variation
from quadvar.errors import InvalidInputError, NumericalError, OrderNotFoundError

__all__ = [
    "NOT_FOUND",
    "EstimatorConfig",
    "OrderQV",
    "RegularityEstimate",
    "estimate_r0",
    "estimate_beta",
    "beta_from_qv",
    "estimate_regularity",
    "estimate_H",
    "h_statistic",
    "h_statistic_finite",
    "kw_ols",
    "theoretical_limit",
]


class _Sentinel(enum.Enum):
    NOT_FOUND = "l0"

    def __repr__(self):
        return "NOT_FOUND"


NOT_FOUND = _Sentinel.NOT_FOUND
"""Step-1 outcome when no order in ``2..m_n`` crosses the threshold."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning of the two-step estimator.

    ``bn_rule`` is ``"inv_log"`` (``1/ln n``), ``"const"`` (``bn_param``) or
    ``"power_log"`` (``(ln n)**bn_param``). ``m_n=None`` selects
    ``min(8, floor(ln n) + 2)``.

    ``step1_scale`` chooses what Step 1 compares with ``n**2 b_n``: the mean squared
    divided difference (``"divided"``) or that mean times ``(r!)**2``
    (``"finite"``, the default), which on equidistant designs is the mean of
    ``(Delta_r X / delta**r)**2``. Only Step 1 is affected.
    """

    bn_rule: str = "inv_log"
    bn_param: float = 1.0
    m_n: int | None = None
    p: int = 1
    u: int = 1
    v: int = 4
    clamp: bool = False
    clamp_eps: float = 1e-6
    step1_scale: str = "finite"

    def __post_init__(self):
        if self.step1_scale not in ("divided", "finite"):
            raise InvalidInputError("step1_scale must be 'divided' or 'finite'")
        if self.bn_rule not in ("inv_log", "const", "power_log"):
            raise InvalidInputError(f"unknown b_n rule {self.bn_rule!r}")
        if self.bn_rule == "const" and not self.bn_param > 0:
            raise InvalidInputError("constant b_n must be positive")
        if self.p not in (1, 2):
            raise InvalidInputError("p must be 1 or 2")
        if not (1 <= self.u < self.v):
            raise InvalidInputError("dilations must satisfy 1 <= u < v")
        if self.m_n is not None and self.m_n < 2:
            raise InvalidInputError("m_n must be >= 2")

    @classmethod
    def parse_bn(cls, text: str) -> tuple[str, float]:
        """``"inv_log"``, ``"const:1"`` or ``"power_log:-1"``."""
        name, _, arg = text.partition(":")
        name = name.strip()
        if name == "inv_log":
            return name, 1.0
        if name in ("const", "power_log"):
            try:
                return name, float(arg) if arg else 1.0
            except ValueError:
                raise InvalidInputError(f"bad b_n parameter in {text!r}") from None
        raise InvalidInputError(f"unknown b_n rule {text!r}")

    @classmethod
    def from_dict(cls, spec: dict) -> "EstimatorConfig":
        spec = dict(spec)
        if "bn" in spec:
            spec["bn_rule"], spec["bn_param"] = cls.parse_bn(spec.pop("bn"))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(spec) - known
        if unknown:
            raise InvalidInputError(f"unknown estimator fields {sorted(unknown)}")
        return cls(**spec)

    def to_dict(self) -> dict:
        return {
            "bn": self.bn_label,
            "m_n": self.m_n,
            "p": self.p,
            "u": self.u,
            "v": self.v,
            "clamp": self.clamp,
            "step1_scale": self.step1_scale,
        }

    @property
    def bn_label(self) -> str:
        return "inv_log" if self.bn_rule == "inv_log" else f"{self.bn_rule}:{self.bn_param:g}"

    def b_n(self, n: int) -> float:
        if self.bn_rule == "inv_log":
            return 1.0 / math.log(n)
        if self.bn_rule == "const":
            return self.bn_param
        return math.log(n) ** self.bn_param

    def m_n_for(self, n: int) -> int:
        if self.m_n is not None:
            return self.m_n
        return min(8, int(math.floor(math.log(n))) + 2)


@dataclass(frozen=True)
class OrderQV:
    r: int
    value: float
    threshold: float
    crossed: bool

    def to_dict(self):
        return {"r": self.r, "qv": self.value, "threshold": self.threshold, "crossed": self.crossed}


@dataclass(frozen=True)
class RegularityEstimate:
    r_hat: int | _Sentinel
    beta_hat: float | None
    H_hat: float | None
    p: int
    u: int
    v: int
    b_n: float
    m_n: int
    qv_by_order: list = field(default_factory=list)
    qv_dilated: tuple | None = None
    H_finite_diff: float | None = None

    @property
    def found(self) -> bool:
        return self.r_hat is not NOT_FOUND

    @property
    def H_label(self) -> str:
        if self.H_finite_diff is not None:
            return "finite-difference log-ratio (equidistant)"
        return "2*(r_hat + beta_hat)"

    def to_dict(self) -> dict:
        return {
            "r_hat": self.r_hat if self.found else "l0",
            "beta_hat": self.beta_hat,
            "H_hat": self.H_hat,
            "H_definition": self.H_label,
            "p": self.p,
            "u": self.u,
            "v": self.v,
            "b_n": self.b_n,
            "m_n": self.m_n,
            "qv_by_order": [q.to_dict() for q in self.qv_by_order],
            "qv_dilated": None
            if self.qv_dilated is None
            else [{"r": q.r, "u": q.u, "qv": q.value} for q in self.qv_dilated],
        }


def estimate_r0(path, config: EstimatorConfig = EstimatorConfig()):
    """Return ``(r_hat, qv_by_order)``; ``r_hat`` is :data:`NOT_FOUND` without a crossing."""
    n = path.design.n
    m_n = config.m_n_for(n)
    if not n > m_n + 1:
        raise InvalidInputError(f"n={n} too small for the order scan up to m_n={m_n}; need n > m_n + 1")
    threshold = n * n * config.b_n(n)
    trace = []
    r_hat = NOT_FOUND
    for r in range(2, m_n + 1):
        qv = quadratic_variation(path, r, 1).value
        if config.step1_scale == "finite":
            qv *= math.factorial(r) ** 2
        if math.isnan(qv):
            raise NumericalError(f"quadratic variation is NaN at order r={r}")
        crossed = qv >= threshold
        trace.append(OrderQV(r, qv, threshold, crossed))
        if crossed and r_hat is NOT_FOUND:
            r_hat = r - 2
    return r_hat, trace


def beta_from_qv(qv_u: float, qv_v: float, p: int, u: int, v: int) -> float:
    """``p + (ln qv_u - ln qv_v) / (2 ln(u/v))``."""
    if not (qv_u > 0 and qv_v > 0):
        raise NumericalError("zero quadratic variation: the estimate is undefined (deterministic path?)")
    return p + 0.5 * (math.log(qv_u) - math.log(qv_v)) / math.log(u / v)


def _dilated_traces(path, r: int, u: int, v: int):
    n = path.design.n
    if n - v * r < 1:
        raise InvalidInputError(f"n={n} too small for order {r} with dilation v={v}; need n - v r >= 1")
    return quadratic_variation(path, r, u), quadratic_variation(path, r, v)


def _clamp(beta: float, eps: float) -> float:
    return min(max(beta, eps), 1.0 - eps)


def estimate_beta(path, r_base: int, config: EstimatorConfig = EstimatorConfig(), clamp: bool | None = None) -> float:
    """Log-ratio estimate of ``beta0`` from orders ``r_base + p`` at dilations ``u``, ``v``."""
    if r_base is NOT_FOUND or int(r_base) != r_base or r_base < 0:
        raise InvalidInputError("r_base must be a non-negative integer")
    r = int(r_base) + config.p
    qu, qv = _dilated_traces(path, r, config.u, config.v)
    beta = beta_from_qv(qu.value, qv.value, config.p, config.u, config.v)
    if config.clamp if clamp is None else clamp:
        beta = _clamp(beta, config.clamp_eps)
    return beta


def h_statistic(path, r: int, u: int = 1, v: int = 4) -> float:
    """``2 r + (ln QV_r^(u) - ln QV_r^(v)) / ln(u/v)`` from divided differences (any design)."""
    qu, qv = _dilated_traces(path, r, u, v)
    if not (qu.value > 0 and qv.value > 0):
        raise NumericalError("zero quadratic variation: the statistic is undefined")
    return 2 * r + (math.log(qu.value) - math.log(qv.value)) / math.log(u / v)


def h_statistic_finite(path, r: int, u: int = 1, v: int = 4) -> float:
    """Finite-difference log-ratio on an equidistant design."""
    if not path.design.is_equidistant:
        raise InvalidInputError("the finite-difference statistic needs an equidistant design")
    n = path.design.n
    if n - v * r < 1:
        raise InvalidInputError(f"n={n} too small for order {r} with dilation v={v}")
    fu = finite_difference_qv(path.values, r, u)
    fv = finite_difference_qv(path.values, r, v)
    if not (fu > 0 and fv > 0):
        raise NumericalError("zero quadratic variation: the statistic is undefined")
    return (math.log(fu) - math.log(fv)) / math.log(u / v)


def estimate_regularity(path, config: EstimatorConfig = EstimatorConfig()) -> RegularityEstimate:
    """Both steps; a sentinel ``r_hat`` leaves ``beta_hat`` and ``H_hat`` as ``None``."""
    n = path.design.n
    r_hat, trace = estimate_r0(path, config)
    common = dict(p=config.p, u=config.u, v=config.v, b_n=config.b_n(n), m_n=config.m_n_for(n), qv_by_order=trace)
    if r_hat is NOT_FOUND:
        return RegularityEstimate(NOT_FOUND, None, None, **common)
    r = r_hat + config.p
    qu, qv = _dilated_traces(path, r, config.u, config.v)
    beta = beta_from_qv(qu.value, qv.value, config.p, config.u, config.v)
    if config.clamp:
        beta = _clamp(beta, config.clamp_eps)
    h_fd = h_statistic_finite(path, r, config.u, config.v) if path.design.is_equidistant else None
    return RegularityEstimate(r_hat, beta, 2.0 * (r_hat + beta), qv_dilated=(qu, qv), H_finite_diff=h_fd, **common)


def estimate_H(path, config: EstimatorConfig = EstimatorConfig()) -> RegularityEstimate:
    """Full estimate; raises :class:`OrderNotFoundError` when Step 1 finds no crossing."""
    est = estimate_regularity(path, config)
    if not est.found:
        raise OrderNotFoundError(
            f"no quadratic variation crossed n^2 b_n for orders 2..{est.m_n}; raise m_n",
            est.qv_by_order,
        )
    return est


def kw_ols(path, p: int = 1, m: int = 2) -> float:
    """OLS slope of ``ln`` mean squared order-``p`` finite differences on ``ln u``, ``u = 1..m``."""
    if not path.design.is_equidistant:
        raise InvalidInputError("the least-squares comparator is defined for equally spaced data")
    if m < 2 or p < 1:
        raise InvalidInputError("need m >= 2 and p >= 1")
    n = path.design.n
    if n - m * p < 1:
        raise InvalidInputError(f"n={n} too small for order {p} at dilations up to {m}")
    qs = np.array([finite_difference_qv(path.values, p, u) for u in range(1, m + 1)])
    if np.any(qs <= 0):
        raise NumericalError("zero variations: the least-squares slope is undefined")
    q = np.log(qs)
    x = np.log(np.arange(1, m + 1))
    one = np.ones(m)
    num = (one @ one) * (x @ q) - (one @ x) * (one @ q)
    den = (one @ one) * (x @ x) - (one @ x) ** 2
    return float(num / den)


def _lagrange_double_sum(r: int, exponent: float) -> float:
    idx = np.arange(r + 1)
    w = np.array([1.0 / np.prod([i - m for m in idx if m != i]) for i in idx])
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float) ** exponent
    return float(w @ dist @ w)


def theoretical_limit(
    p: int,
    r0: int,
    beta0: float,
    d0: Callable | float = 1.0,
    psi: DensitySpec | None = None,
    T: float | None = None,
) -> float:
    """Limit of ``n**(-2(p - beta0)) E QV`` at order ``r0 + p`` with dilation 1."""
    if p not in (1, 2) or r0 < 0 or not 0 < beta0 < 1:
        raise InvalidInputError("need p in {1, 2}, r0 >= 0 and beta0 in (0, 1)")
    if psi is None:
        psi = DensitySpec.uniform(1.0 if T is None else T)
    T = psi.T if T is None else float(T)
    d0f = d0 if callable(d0) else (lambda t, c=float(d0): c)
    expo = 2 * p + 1 - 2 * beta0
    points = getattr(psi, "_grid", None)
    kw = {"points": points[1:-1].tolist()} if points is not None and points.size > 2 else {}
    integral, _ = integrate.quad(
        lambda t: float(np.asarray(d0f(t))) * float(psi.pdf(t)) ** expo,
        0.0,
        T,
        epsabs=1e-12,
        epsrel=1e-10,
        limit=200,
        **kw,
    )
    rising = math.prod(2 * beta0 + j for j in range(1, 2 * r0 + 1))
    s = _lagrange_double_sum(r0 + p, 2 * (r0 + beta0))
    return (-1) ** (r0 + 1) * integral / (2 * rising) * s
