"""Regular sequence sampling designs.

Observation points are quantiles of a positive continuous density ``psi`` on
``[0, T]``: ``t_k`` solves ``F(t_k) = k * delta_n / T`` where ``F`` is the
cumulative distribution of ``psi``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from quadvar.errors import InvalidInputError, NumericalError

__all__ = [
    "DensitySpec",
    "SamplingDesign",
    "SpacingReport",
    "build_design",
    "spacing_report",
    "simpson",
]

_MASS_TOL = 1e-10
_MAX_BISECTION = 200


def simpson(f, a: float, b: float, m: int = 2048) -> float:
    """Composite Simpson rule with ``m`` (even) subintervals."""
    if m % 2:
        m += 1
    x = np.linspace(a, b, m + 1)
    y = np.asarray(f(x), dtype=float)
    h = (b - a) / m
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


@dataclass(frozen=True)
class DensitySpec:
    """A sampling density on ``[0, T]``.

    ``kind`` is one of ``"uniform"``, ``"affine"`` (``psi(t) = c0 + c1 t``)
    or ``"tabulated"`` (piecewise-linear through ``(grid, values)``, renormalized
    to unit mass). ``holder_exponent`` and ``lower_bound`` are the declared
    constants of the Hölder and positivity conditions on ``psi``.
    """

    kind: str
    T: float = 1.0
    params: tuple = ()
    holder_exponent: float = 1.0
    lower_bound: float | None = None
    _grid: np.ndarray | None = field(default=None, repr=False, compare=False)
    _values: np.ndarray | None = field(default=None, repr=False, compare=False)
    _cum: np.ndarray | None = field(default=None, repr=False, compare=False)

    # constructors -------------------------------------------------------
    @classmethod
    def uniform(cls, T: float = 1.0) -> "DensitySpec":
        return cls("uniform", float(T))

    @classmethod
    def affine(cls, c0: float, c1: float, T: float = 1.0, holder_exponent: float = 1.0) -> "DensitySpec":
        return cls("affine", float(T), (float(c0), float(c1)), holder_exponent)

    @classmethod
    def tabulated(cls, grid, values, T: float | None = None) -> "DensitySpec":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise InvalidInputError("tabulated density needs matching 1-d grid and values (>= 2 nodes)")
        if np.any(np.diff(grid) <= 0):
            raise InvalidInputError("tabulated density grid must be strictly increasing")
        T = float(grid[-1]) if T is None else float(T)
        if grid[0] != 0.0 or not math.isclose(grid[-1], T, rel_tol=0, abs_tol=1e-12 * T):
            raise InvalidInputError("tabulated density grid must span [0, T]")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise InvalidInputError("tabulated density values must be finite and positive")
        mass = float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(grid)))
        values = values / mass
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(grid))])
        return cls("tabulated", T, (), 1.0, None, grid, values, cum)

    @classmethod
    def from_dict(cls, spec: dict) -> "DensitySpec":
        kind = spec.get("kind", "uniform")
        T = float(spec.get("T", 1.0))
        if kind == "uniform":
            return cls.uniform(T)
        if kind == "affine":
            return cls.affine(spec["c0"], spec["c1"], T)
        if kind == "tabulated":
            return cls.tabulated(spec["grid"], spec["values"], T)
        raise InvalidInputError(f"unknown density kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "affine":
            return {"kind": "affine", "T": self.T, "c0": self.params[0], "c1": self.params[1]}
        if self.kind == "tabulated":
            return {"kind": "tabulated", "T": self.T, "grid": self._grid.tolist(), "values": self._values.tolist()}
        return {"kind": "uniform", "T": self.T}

    # evaluation ---------------------------------------------------------
    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "uniform":
            return np.full_like(t, 1.0 / self.T)
        if self.kind == "affine":
            c0, c1 = self.params
            return c0 + c1 * t
        return np.interp(t, self._grid, self._values)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "uniform":
            return t / self.T
        if self.kind == "affine":
            c0, c1 = self.params
            return c0 * t + 0.5 * c1 * t * t
        g, v, cum = self._grid, self._values, self._cum
        j = np.clip(np.searchsorted(g, t, side="right") - 1, 0, g.size - 2)
        h = t - g[j]
        slope = (v[j + 1] - v[j]) / (g[j + 1] - g[j])
        return cum[j] + v[j] * h + 0.5 * slope * h * h

    @property
    def sup(self) -> float:
        if self.kind == "uniform":
            return 1.0 / self.T
        if self.kind == "affine":
            c0, c1 = self.params
            return max(c0, c0 + c1 * self.T)
        return float(self._values.max())

    @property
    def inf(self) -> float:
        if self.kind == "uniform":
            return 1.0 / self.T
        if self.kind == "affine":
            c0, c1 = self.params
            return min(c0, c0 + c1 * self.T)
        return float(self._values.min())

    def validate(self) -> None:
        """Raise :class:`InvalidInputError` unless ``psi`` is a positive unit-mass density."""
        if self.kind not in ("uniform", "affine", "tabulated"):
            raise InvalidInputError(f"unknown density kind {self.kind!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidInputError("time horizon T must be positive and finite")
        if not (0 < self.holder_exponent <= 1):
            raise InvalidInputError("Hölder exponent must lie in (0, 1]")
        if not (self.inf > 0 and math.isfinite(self.sup)):
            raise InvalidInputError("density must be finite and bounded away from zero on [0, T]")
        if self.lower_bound is not None and self.inf < self.lower_bound:
            raise InvalidInputError(
                f"density infimum {self.inf:g} is below the declared lower bound {self.lower_bound:g}"
            )
        if self.kind == "tabulated":
            # Simpson per linear piece, exact away from the kinks
            g = self._grid
            mass = sum(simpson(self.pdf, a, b, 2) for a, b in zip(g[:-1], g[1:]))
        else:
            mass = simpson(self.pdf, 0.0, self.T)
        if abs(mass - 1.0) > _MASS_TOL:
            raise InvalidInputError(f"density must integrate to 1 on [0, T], got {mass:.15g}")

    def quantiles(self, levels) -> np.ndarray:
        """Solve ``F(t) = level`` by vectorized bisection, then two Newton steps."""
        levels = np.asarray(levels, dtype=float)
        lo = np.zeros_like(levels)
        hi = np.full_like(levels, self.T)
        tol = 1e-12 * self.T
        for _ in range(_MAX_BISECTION):
            if np.all(hi - lo <= tol):
                break
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < levels
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        else:
            bad = int(np.argmax(hi - lo > tol))
            raise NumericalError(f"quantile solver did not converge for k={bad}")
        t = 0.5 * (lo + hi)
        for _ in range(2):
            step = (self.cdf(t) - levels) / self.pdf(t)
            t = np.clip(t - step, lo, hi)
        return t


@dataclass(frozen=True, eq=False)
class SamplingDesign:
    """Observation grid ``t_0 < ... < t_n`` on ``[0, T]``.

    ``origin`` records the shift applied to adopted (ingested) time stamps so that
    ``points[0] == 0`` always holds.
    """

    T: float
    n: int
    delta_n: float
    points: np.ndarray
    density: DensitySpec | None = None
    origin: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size != self.n + 1:
            raise InvalidInputError("design must hold n + 1 points")
        if pts[0] != 0.0:
            raise InvalidInputError("design must start at t_0 = 0")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInputError("design points must be strictly increasing")
        if pts[-1] > self.T * (1 + 1e-12):
            raise InvalidInputError("design points must not exceed T")

    def __len__(self) -> int:
        return self.points.size

    @property
    def is_equidistant(self) -> bool:
        d = np.diff(self.points)
        return bool(np.max(np.abs(d - self.delta_n)) <= 1e-9 * self.delta_n)

    @property
    def C1(self) -> float | None:
        return None if self.density is None else 1.0 / (self.T * self.density.sup)

    @property
    def C2(self) -> float | None:
        return None if self.density is None else 1.0 / (self.T * self.density.inf)

    @classmethod
    def from_points(cls, points, T: float | None = None) -> "SamplingDesign":
        """Adopt arbitrary increasing time stamps (shifted so the first is 0)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 3:
            raise InvalidInputError("need at least 3 time stamps")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("time stamps must be finite")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInputError("time stamps must be strictly increasing")
        origin = float(pts[0])
        rel = pts - origin
        n = rel.size - 1
        T = float(rel[-1]) if T is None else float(T) - origin
        uniform = DensitySpec.uniform(T) if n > 0 else None
        delta = float(rel[-1]) / n
        d = np.diff(rel)
        density = uniform if np.max(np.abs(d - delta)) <= 1e-9 * delta else None
        return cls(T, n, delta, rel, density, origin)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("k,t\n")
        for k, t in enumerate(self.points + self.origin):
            buf.write(f"{k},{t:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "SamplingDesign":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        if not rows or [c.strip() for c in rows[0]] != ["k", "t"]:
            raise InvalidInputError("design CSV must have header 'k,t'")
        try:
            t = np.array([float(r[1]) for r in rows[1:]])
        except (ValueError, IndexError) as exc:
            raise InvalidInputError(f"malformed design CSV: {exc}") from exc
        return cls.from_points(t)


def build_design(density: DensitySpec, n: int, T: float | None = None, delta: float | None = None) -> SamplingDesign:
    """Quantile design with ``n + 1`` points; default step ``delta_n = T / (n + 1)``."""
    if T is None:
        T = density.T
    if not math.isclose(T, density.T, rel_tol=1e-12):
        raise InvalidInputError(f"design horizon T={T} differs from the density horizon {density.T}")
    if int(n) != n or n < 2:
        raise InvalidInputError("n must be an integer >= 2")
    n = int(n)
    density.validate()
    if delta is None:
        delta = T / (n + 1)
    elif not (delta > 0 and n * delta <= T * (1 + 1e-15)):
        raise InvalidInputError("delta override must satisfy 0 < n * delta <= T")
    levels = np.arange(n + 1) * delta / T
    pts = density.quantiles(levels)
    pts[0] = 0.0
    return SamplingDesign(float(T), n, float(delta), pts, density)


@dataclass(frozen=True)
class SpacingReport:
    min_ratio: float
    max_ratio: float
    C1: float | None
    C2: float | None
    i_max: int

    @property
    def within_bounds(self) -> bool:
        if self.C1 is None:
            return True
        return self.min_ratio >= self.C1 - 1e-9 and self.max_ratio <= self.C2 + 1e-9


def spacing_report(design: SamplingDesign, i_max: int | None = None) -> SpacingReport:
    """Extremes of ``(t_{k+i} - t_k) / (i delta_n)`` over all ``k`` and ``i <= i_max``."""
    t = design.points
    n = design.n
    i_max = n if i_max is None else min(int(i_max), n)
    lo, hi = math.inf, -math.inf
    for i in range(1, i_max + 1):
        ratio = (t[i:] - t[:-i]) / (i * design.delta_n)
        lo = min(lo, float(ratio.min()))
        hi = max(hi, float(ratio.max()))
    return SpacingReport(lo, hi, design.C1, design.C2, i_max)
