"""Divided differences on arbitrary designs and their quadratic variations."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from quadvar.design import SamplingDesign
from quadvar.errors import InvalidInputError

__all__ = [
    "DividedDiffCoeffs",
    "QuadraticVariationTrace",
    "coeffs",
    "coeff_matrix",
    "divided_difference",
    "quadratic_variation",
    "expected_qv",
    "finite_difference_weights",
    "finite_difference_qv",
    "newton_divided_difference",
]


@dataclass(frozen=True)
class DividedDiffCoeffs:
    k: int
    r: int
    u: int
    b: np.ndarray
    log_scaled: bool = False


@dataclass(frozen=True)
class QuadraticVariationTrace:
    r: int
    u: int
    n_r: int
    value: float
    per_k: np.ndarray | None = None


def _check_order(n: int, r: int, u: int) -> None:
    if r < 1 or u < 1:
        raise InvalidInputError("order r and dilation u must be >= 1")
    if n - u * r < 0:
        raise InvalidInputError(
            f"n={n} is too small for order r={r} with dilation u={u}; max admissible r is {n // u}"
        )


def _needs_log_form(points: np.ndarray, r: int) -> bool:
    return r >= 8 or float(np.min(np.diff(points))) <= 1e-6


def _coeff_block(knots: np.ndarray, log_form: bool) -> np.ndarray:
    """Product-formula coefficients for each row of ``knots`` (shape ``(N, r+1)``)."""
    diff = knots[:, :, None] - knots[:, None, :]
    r1 = knots.shape[1]
    eye = np.eye(r1, dtype=bool)
    diff[:, eye] = 1.0
    if np.any(diff == 0):
        raise InvalidInputError("coincident knots in divided difference")
    if not log_form:
        return 1.0 / np.prod(diff, axis=2)
    sign = np.prod(np.sign(diff), axis=2)
    return sign * np.exp(-np.sum(np.log(np.abs(diff)), axis=2))


@lru_cache(maxsize=128)
def _cached_matrix(design: SamplingDesign, r: int, u: int):
    t = design.points
    n_r = design.n - u * r
    idx = np.arange(n_r + 1)[:, None] + u * np.arange(r + 1)[None, :]
    b = _coeff_block(t[idx], _needs_log_form(t, r))
    idx.setflags(write=False)
    b.setflags(write=False)
    return idx, b


def coeff_matrix(design: SamplingDesign, r: int, u: int):
    """Knot indices and coefficients for every base index ``k = 0..n - u r``."""
    _check_order(design.n, r, u)
    return _cached_matrix(design, int(r), int(u))


def coeffs(design: SamplingDesign, k: int, r: int, u: int = 1) -> DividedDiffCoeffs:
    """``b_i = 1 / prod_{m != i} (t_{k+iu} - t_{k+mu})`` for ``i = 0..r``."""
    _check_order(design.n, r, u)
    if not 0 <= k <= design.n - u * r:
        raise InvalidInputError(f"base index k={k} needs k + u r <= n = {design.n}")
    t = design.points
    knots = t[k + u * np.arange(r + 1)][None, :]
    log_form = _needs_log_form(t, r)
    return DividedDiffCoeffs(int(k), int(r), int(u), _coeff_block(knots, log_form)[0], log_form)


def divided_difference(path, k: int, r: int, u: int = 1) -> float:
    c = coeffs(path.design, k, r, u)
    x = np.asarray(path.values)[k + u * np.arange(r + 1)]
    return float(c.b @ x)


def quadratic_variation(path, r: int, u: int = 1, keep_per_k: bool = False) -> QuadraticVariationTrace:
    """Mean of squared ``u``-dilated order-``r`` divided differences over ``k = 0..n - u r``."""
    idx, b = coeff_matrix(path.design, r, u)
    d = np.einsum("ki,ki->k", b, np.asarray(path.values)[idx])
    sq = d * d
    value = float(np.mean(sq))
    return QuadraticVariationTrace(int(r), int(u), path.design.n - u * r, value, sq if keep_per_k else None)


def expected_qv(model, design: SamplingDesign, r: int, u: int = 1, centered: bool = True) -> float:
    """Exact expectation of :func:`quadratic_variation` under ``model``.

    With ``centered`` the quadratic form uses the variogram (valid since the
    coefficients sum to zero), which avoids cancellation in ``b' K b``.
    """
    idx, b = coeff_matrix(design, r, u)
    knots = design.points[idx]
    s, t = knots[:, :, None], knots[:, None, :]
    if centered:
        quad = -0.5 * np.einsum("ki,kij,kj->k", b, model.variogram(s, t), b)
    else:
        quad = np.einsum("ki,kij,kj->k", b, model.cov(s, t), b)
    if getattr(model, "has_mean", False):
        quad = quad + np.einsum("ki,ki->k", b, model.mean_at(knots)) ** 2
    return float(np.mean(quad))


def finite_difference_weights(r: int) -> np.ndarray:
    """``a_{i,r} = C(r, i) (-1)**(r - i)``."""
    return np.array([comb(r, i) * (-1) ** (r - i) for i in range(r + 1)], dtype=float)


def finite_difference_qv(values, r: int, u: int = 1) -> float:
    """Mean of squared ``u``-dilated order-``r`` finite differences of equally spaced values."""
    x = np.asarray(values, dtype=float)
    n = x.size - 1
    _check_order(n, r, u)
    a = finite_difference_weights(r)
    n_r = n - u * r
    delta = sum(a[i] * x[i * u : i * u + n_r + 1] for i in range(r + 1))
    return float(np.mean(delta * delta))


def newton_divided_difference(knots, values) -> float:
    """Leading divided difference by the Newton recursion (reference implementation)."""
    x = np.asarray(knots, dtype=float)
    c = np.array(values, dtype=float)
    for j in range(1, x.size):
        c[j:] = (c[j:] - c[j - 1 : -1]) / (x[j:] - x[: x.size - j])
    return float(c[-1])
