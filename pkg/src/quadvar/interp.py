"""Piecewise Lagrange interpolation, plug-in quadrature and integrated mean-square error.

Blocks hold ``r + 1`` consecutive knots with stride ``r``:
``I_k = [t_{kr}, t_{kr+r}]`` for ``k = 0..K-2`` and ``I_{K-1} = [t_{(K-1)r}, T]``
with ``K = n // r``. A time on a block boundary belongs to the left block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from quadvar.design import SamplingDesign
from quadvar.errors import InvalidInputError

__all__ = [
    "PiecewiseLagrange",
    "QuadratureResult",
    "lagrange_weights",
    "evaluate",
    "plugin_approximation",
    "plugin_quadrature",
    "exact_imse",
    "pointwise_mse",
    "empirical_imse",
    "resolve_rho",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def resolve_rho(rho) -> Callable:
    """Weight function from a callable, ``"one"``, ``("affine", c0, c1)`` or ``{"kind": ...}``."""
    if rho is None or rho == "one":
        return lambda t: np.ones_like(np.asarray(t, float))
    if callable(rho):
        return rho
    if isinstance(rho, dict):
        kind = rho.get("kind", "one")
        if kind == "one":
            return resolve_rho("one")
        if kind == "affine":
            return resolve_rho(("affine", rho["c0"], rho["c1"]))
    if isinstance(rho, (tuple, list)) and len(rho) == 3 and rho[0] == "affine":
        c0, c1 = float(rho[1]), float(rho[2])
        return lambda t: c0 + c1 * np.asarray(t, float)
    if isinstance(rho, str) and rho.startswith("affine:"):
        c0, c1 = (float(x) for x in rho.split(":", 1)[1].split(","))
        return lambda t: c0 + c1 * np.asarray(t, float)
    raise InvalidInputError(f"unsupported weight function {rho!r}")


def _block_count(n: int, r: int) -> int:
    if r < 1:
        raise InvalidInputError("interpolation order must be >= 1")
    K = n // r
    if K < 1:
        raise InvalidInputError(f"n={n} too small for interpolation order {r}")
    return K


def _weights(knots: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Lagrange basis values; ``knots`` is ``(N, r+1)``, ``t`` is ``(N,)``."""
    r1 = knots.shape[1]
    num = t[:, None, None] - knots[:, None, :]
    den = knots[:, :, None] - knots[:, None, :]
    eye = np.eye(r1, dtype=bool)
    num = np.where(eye[None], 1.0, np.broadcast_to(num, den.shape))
    den = np.where(eye[None], 1.0, den)
    return np.prod(num / den, axis=2)


def _block_bounds(design: SamplingDesign, r: int, k: int) -> tuple[float, float]:
    K = _block_count(design.n, r)
    if not 0 <= k < K:
        raise InvalidInputError(f"block index {k} outside 0..{K - 1}")
    t = design.points
    hi = design.T if k == K - 1 else t[k * r + r]
    return float(t[k * r]), float(hi)


def lagrange_weights(design: SamplingDesign, k: int, r: int, t: float) -> np.ndarray:
    """Weights ``L_{0..r}`` of block ``k`` at time ``t`` (which must lie in the block)."""
    lo, hi = _block_bounds(design, r, k)
    if not lo <= t <= hi:
        raise InvalidInputError(f"t={t} outside block {k} = [{lo}, {hi}]")
    knots = design.points[k * r + np.arange(r + 1)]
    return _weights(knots[None, :], np.array([float(t)]))[0]


@dataclass(frozen=True, eq=False)
class PiecewiseLagrange:
    design: SamplingDesign
    values: np.ndarray
    r: int

    def __post_init__(self):
        _block_count(self.design.n, self.r)
        if np.asarray(self.values).shape != (self.design.n + 1,):
            raise InvalidInputError("values must match the design")

    @classmethod
    def from_path(cls, path, r: int) -> "PiecewiseLagrange":
        return cls(path.design, np.asarray(path.values), int(r))

    @property
    def n_blocks(self) -> int:
        return self.design.n // self.r

    @property
    def block_edges(self) -> np.ndarray:
        t = self.design.points
        starts = t[np.arange(self.n_blocks) * self.r]
        return np.concatenate([starts, [self.design.T]])

    def block_index(self, t) -> np.ndarray:
        starts = self.block_edges[:-1]
        k = np.searchsorted(starts, np.asarray(t, float), side="left") - 1
        return np.clip(k, 0, self.n_blocks - 1)

    def knots(self, k) -> np.ndarray:
        return np.asarray(k)[..., None] * self.r + np.arange(self.r + 1)

    def weights_at(self, t, k=None):
        t = np.atleast_1d(np.asarray(t, float))
        k = self.block_index(t) if k is None else np.broadcast_to(np.asarray(k), t.shape)
        idx = self.knots(k)
        return idx, _weights(self.design.points[idx], t)

    def __call__(self, t):
        return evaluate(self, t)


def evaluate(interp: PiecewiseLagrange, t):
    """Value of the interpolant at ``t`` (scalar or array in ``[0, T]``)."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, float))
    if np.any(tt < 0) or np.any(tt > interp.design.T * (1 + 1e-12)):
        raise InvalidInputError("evaluation times must lie in [0, T]")
    idx, w = interp.weights_at(tt)
    out = np.einsum("ki,ki->k", w, np.asarray(interp.values)[idx])
    return float(out[0]) if scalar else out


def _fallback_order(estimate, offset: int) -> tuple[int, bool]:
    if estimate.found:
        return int(estimate.r_hat) + offset, False
    return int(estimate.m_n) - 1 + offset, True


def plugin_approximation(path, estimate) -> PiecewiseLagrange:
    """Interpolant of order ``max(r_hat, 1)`` (``m_n - 1`` when ``r_hat`` is the sentinel)."""
    order, _ = _fallback_order(estimate, 0)
    return PiecewiseLagrange.from_path(path, max(order, 1))


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    order: int
    fallback: bool
    levels: int

    def __float__(self):
        return self.value


def _integrate_interpolant(interp: PiecewiseLagrange, rho: Callable, level: int) -> tuple[float, float]:
    edges = interp.block_edges
    K = interp.n_blocks
    pieces = 2**level
    frac = np.linspace(0.0, 1.0, pieces + 1)
    width = np.diff(edges)
    lo = edges[:-1, None] + width[:, None] * frac[None, :-1]
    h = (width / pieces)[:, None]
    nodes = lo[:, :, None] + 0.5 * h[:, :, None] * (_GL_NODES[None, None, :] + 1.0)
    blocks = np.broadcast_to(np.arange(K)[:, None, None], nodes.shape).ravel()
    tt = nodes.ravel()
    idx, w = interp.weights_at(tt, blocks)
    vals = np.einsum("ki,ki->k", w, np.asarray(interp.values)[idx])
    rv = np.asarray(rho(tt), float)
    scale = np.broadcast_to(0.5 * h[:, :, None] * _GL_WEIGHTS[None, None, :], nodes.shape).ravel()
    return float(np.sum(scale * vals * rv)), float(np.sum(scale * np.abs(rv)))


def integrate_interpolant(interp: PiecewiseLagrange, rho=None, max_levels: int = 10) -> tuple[float, int]:
    """``int_0^T interp(t) rho(t) dt`` by blockwise 16-node Gauss-Legendre with halving."""
    rho = resolve_rho(rho)
    prev, l1 = _integrate_interpolant(interp, rho, 0)
    xmax = float(np.max(np.abs(interp.values))) or 1.0
    for level in range(1, max_levels + 1):
        cur, l1 = _integrate_interpolant(interp, rho, level)
        if abs(cur - prev) <= 1e-10 * max(abs(cur), l1 * xmax * 1e-3, 1e-300):
            return cur, level
        prev = cur
    return prev, max_levels


def plugin_quadrature(path, estimate, rho=None) -> QuadratureResult:
    """``int_0^T X_{r_hat+1}(t) rho(t) dt``; the sentinel falls back to order ``m_n``."""
    order, fallback = _fallback_order(estimate, 1)
    interp = PiecewiseLagrange.from_path(path, order)
    value, levels = integrate_interpolant(interp, rho)
    return QuadratureResult(value, order, fallback, levels)


def pointwise_mse(model, design: SamplingDesign, r: int, t) -> np.ndarray:
    """``E |X(t) - X_r(t)|**2`` from the model's variogram and mean."""
    interp = PiecewiseLagrange(design, np.zeros(design.n + 1), r)
    tt = np.atleast_1d(np.asarray(t, float))
    idx, w = interp.weights_at(tt)
    knots = design.points[idx]
    g_t = model.variogram(tt[:, None], knots)
    g_kk = model.variogram(knots[:, :, None], knots[:, None, :])
    mse = np.einsum("ki,ki->k", w, g_t) - 0.5 * np.einsum("ki,kij,kj->k", w, g_kk, w)
    if getattr(model, "has_mean", False):
        bias = model.mean_at(tt) - np.einsum("ki,ki->k", w, model.mean_at(knots))
        mse = mse + bias * bias
    return np.maximum(mse, 0.0)


def exact_imse(model, design: SamplingDesign, r: int, rho=None, epsrel: float = 1e-9) -> float:
    """``int_0^T E |X(t) - X_r(t)|**2 rho(t) dt`` by adaptive quadrature between knots."""
    rho = resolve_rho(rho)
    interp = PiecewiseLagrange(design, np.zeros(design.n + 1), r)
    t = design.points
    last = interp.n_blocks * r
    cuts = np.concatenate([t[: last + 1], [design.T]] if t[last] < design.T else [t[: last + 1]])
    a, b = cuts[:-1], cuts[1:]
    width = b - a
    # interior of each piece belongs to a single block; pin it explicitly
    blocks = np.minimum(np.arange(a.size) // r, interp.n_blocks - 1)

    def integrand(s):
        tt = a + s * width
        idx = interp.knots(blocks)
        knots = t[idx]
        w = _weights(knots, tt)
        g_t = model.variogram(tt[:, None], knots)
        g_kk = model.variogram(knots[:, :, None], knots[:, None, :])
        mse = np.einsum("ki,ki->k", w, g_t) - 0.5 * np.einsum("ki,kij,kj->k", w, g_kk, w)
        if getattr(model, "has_mean", False):
            bias = model.mean_at(tt) - np.einsum("ki,ki->k", w, model.mean_at(knots))
            mse = mse + bias * bias
        return mse * np.asarray(rho(tt), float) * width

    # all pieces share the reference interval, so integrate their sum at once
    val, _ = integrate.quad(lambda s: float(np.sum(integrand(s))), 0.0, 1.0, epsabs=0.0, epsrel=epsrel, limit=500)
    return float(val)


def empirical_imse(interp: PiecewiseLagrange, t_fine, x_fine, rho=None) -> float:
    """Trapezoid estimate of ``int (x - interp)**2 rho`` on a fine grid of one path."""
    rho = resolve_rho(rho)
    t_fine = np.asarray(t_fine, float)
    err = (np.asarray(x_fine, float) - evaluate(interp, t_fine)) ** 2 * np.asarray(rho(t_fine), float)
    return float(integrate.trapezoid(err, t_fine))
