"""Affine parametric diffusion coefficients a(y) = a0 + sum_j y_j a_j.

Three concrete families are provided, all with a0 = 1 and terms depending
on the first coordinate only:

* ``global-trig``: a_j = scale j^-theta sin(j pi x1), supports cover D.
* ``disjoint-indicator``: a_j = scale j^-theta on the j-th of ``s_max``
  equal-width cells of [0, 1]; supports are pairwise disjoint.
* ``haar-overlap``: multilevel hats, term j = 2^l + k at level l is
  scale 2^(-theta l) times a tent of half-width 2^-l centred at
  (k + 1/2) 2^-l.  Within one level each point meets at most two supports.

For every family the weight sequence rho is nondecreasing and normalised so
that ``Lambda1 = || sum_j rho_j |a_j| ||_inf`` equals 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fem import ScalarField

FAMILIES = ("global-trig", "disjoint-indicator", "haar-overlap")

# sampling grids for sup norms; the 1D grid contains every element midpoint of
# uniform meshes with up to 1024 cells
GRID_1D = np.linspace(0.0, 1.0, 10241)
GRID_2D_SIDE = 256


@dataclass(frozen=True, eq=False)
class CoefficientExpansion:
    a0: ScalarField
    terms: tuple[ScalarField, ...]
    rho: np.ndarray
    decay_p: float
    family: str = "custom"
    x1_only: bool = False
    exact: Optional[dict] = None
    theta: Optional[float] = None
    scale: Optional[float] = None

    @property
    def s_max(self) -> int:
        return len(self.terms)

    @property
    def beta(self) -> np.ndarray:
        """Sup norms ||a_j||_inf (analytic when the field records it)."""
        out = np.empty(self.s_max)
        grid = _sup_grid(self, "unit-square")
        for j, t in enumerate(self.terms):
            out[j] = t.sup_abs if t.sup_abs is not None else np.max(np.abs(t(grid)))
        return out

    def term_values(self, x: np.ndarray, s: Optional[int] = None) -> np.ndarray:
        """Values a_j(x) for j = 1..s as an array of shape (m, s)."""
        s = self.s_max if s is None else s
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if s == 0:
            return np.zeros((x.shape[0], 0))
        return np.column_stack([t(x) for t in self.terms[:s]])


@dataclass(frozen=True)
class AdmissibilityReport:
    alpha_min: float
    alpha_max: float
    Lambda0: float
    Lambda1: float
    admissible: bool


def custom_expansion(a0, terms: Sequence, rho=None, decay_p: float = 1.0) -> CoefficientExpansion:
    """Expansion from user fields; constants and callables are wrapped as fields."""
    wrap = lambda f: f if isinstance(f, ScalarField) else (  # noqa: E731
        ScalarField.constant(f) if np.isscalar(f) else ScalarField(f))
    terms = tuple(wrap(t) for t in terms)
    rho = np.ones(len(terms)) if rho is None else np.asarray(rho, dtype=float)
    if rho.shape != (len(terms),):
        raise ValueError("rho must have one entry per term")
    return CoefficientExpansion(wrap(a0), terms, rho, float(decay_p))


def _indicator(lo: float, hi: float, value: float, closed_right: bool) -> ScalarField:
    def f(x, lo=lo, hi=hi, value=value):
        x1 = x[:, 0]
        inside = (x1 >= lo) & ((x1 <= hi) if closed_right else (x1 < hi))
        return np.where(inside, value, 0.0)
    return ScalarField(f, (lo, hi), abs(value), True)


def _sine(j: int, amp: float) -> ScalarField:
    return ScalarField(lambda x: amp * np.sin(j * math.pi * x[:, 0]), (0.0, 1.0), abs(amp))


def _hat(center: float, half_width: float, amp: float) -> ScalarField:
    def f(x):
        return amp * np.maximum(0.0, 1.0 - np.abs(x[:, 0] - center) / half_width)
    lo, hi = max(0.0, center - half_width), min(1.0, center + half_width)
    return ScalarField(f, (lo, hi), abs(amp))


def _haar_level(j: int) -> tuple[int, int]:
    level = j.bit_length() - 1
    return level, j - (1 << level)


def make_expansion(
    family: str,
    s_max: int,
    theta: float,
    scale: float,
    p: Optional[float] = None,
) -> CoefficientExpansion:
    """Build one of the shipped coefficient families with a0 = 1.

    ``p`` is the summability exponent of (1/rho_j); when given it must make
    that sequence p-summable.  Raises ``ValueError`` for theta <= 1 and for
    families whose Lambda0 reaches alpha_min = 1.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if s_max < 1:
        raise ValueError(f"s_max must be >= 1, got {s_max}")
    if not theta > 1:
        raise ValueError(f"decay exponent theta must exceed 1, got {theta}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if p is not None and not 0 < p <= 1:
        raise ValueError(f"summability exponent p must lie in (0, 1], got {p}")
    j = np.arange(1, s_max + 1, dtype=float)
    exact = None
    if family == "global-trig":
        terms = tuple(_sine(int(k), scale * k**-theta) for k in j)
        growth = theta - 1.0
        raw = j**growth / scale
        norm = _grid_sup_sum(terms, raw)
        rho = raw / norm
    elif family == "disjoint-indicator":
        terms = tuple(
            _indicator((k - 1) / s_max, k / s_max, scale * k**-theta, k == s_max) for k in j
        )
        growth = theta
        rho = j**theta / scale
        exact = {"alpha_min": 1.0, "alpha_max": 1.0, "Lambda0": 0.5 * scale, "Lambda1": 1.0}
    else:
        levels = np.array([_haar_level(int(k))[0] for k in j], dtype=float)
        terms = []
        for k in j:
            lev, off = _haar_level(int(k))
            w = 2.0**-lev
            terms.append(_hat((off + 0.5) * w, w, scale * 2.0 ** (-theta * lev)))
        terms = tuple(terms)
        # 1/rho_j ~ j^{-(theta-1)} since level l carries 2^l terms
        growth = theta - 1.0
        raw = 2.0 ** ((theta - 1.0) * levels) / scale
        rho = raw / _grid_sup_sum(terms, raw)
    if p is not None and p * growth <= 1.0:
        raise ValueError(
            f"1/rho_j decays like j^-{growth:g}, which is not p-summable for p={p:g}"
        )
    exp = CoefficientExpansion(
        a0=ScalarField.constant(1.0),
        terms=terms,
        rho=rho,
        decay_p=1.0 if p is None else float(p),
        family=family,
        x1_only=True,
        exact=exact,
        theta=float(theta),
        scale=float(scale),
    )
    rep = validate_assumption(exp)
    if not rep.admissible:
        raise ValueError(
            f"{family} with theta={theta}, scale={scale} is not admissible: "
            f"Lambda0={rep.Lambda0:.6g} >= alpha_min={rep.alpha_min:.6g}"
        )
    return exp


def _grid_sup_sum(terms: Sequence[ScalarField], weights: np.ndarray) -> float:
    pts = GRID_1D[:, None]
    acc = np.zeros(pts.shape[0])
    for w, t in zip(weights, terms):
        acc += w * np.abs(t(pts))
    return float(acc.max())


def _sup_grid(exp: CoefficientExpansion, domain_kind: str) -> np.ndarray:
    if exp.x1_only or domain_kind == "unit-interval":
        return np.column_stack([GRID_1D, np.full(GRID_1D.size, 0.5)])
    g = np.linspace(0.0, 1.0, GRID_2D_SIDE)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def validate_assumption(exp: CoefficientExpansion, domain_kind: str = "unit-interval") -> AdmissibilityReport:
    """Bounds of a0 and the sums Lambda0, Lambda1 on D, plus the admissibility flag.

    Piecewise-constant families carry exact values; other sup norms are grid
    maxima.  Inadmissible expansions are reported, never raised.
    """
    if exp.exact is not None:
        v = exp.exact
        a_min, a_max, lam0, lam1 = v["alpha_min"], v["alpha_max"], v["Lambda0"], v["Lambda1"]
    else:
        pts = _sup_grid(exp, domain_kind)
        a0 = exp.a0(pts)
        a_min, a_max = float(a0.min()), float(a0.max())
        s0 = np.zeros(pts.shape[0])
        s1 = np.zeros(pts.shape[0])
        for r, t in zip(exp.rho, exp.terms):
            v = np.abs(t(pts))
            s0 += 0.5 * v
            s1 += r * v
        lam0 = float(s0.max()) if exp.s_max else 0.0
        lam1 = float(s1.max()) if exp.s_max else 0.0
    admissible = a_min > 0 and lam0 < a_min
    return AdmissibilityReport(a_min, a_max, lam0, lam1, bool(admissible))


def as_parameter(y, s_max: Optional[int] = None) -> np.ndarray:
    """Validate a parameter vector: every component must lie in [-1/2, 1/2]."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("parameter vector must be one-dimensional")
    if np.any(np.abs(y) > 0.5):
        raise ValueError("parameter components must lie in [-1/2, 1/2]")
    if s_max is not None and y.size > s_max:
        raise ValueError(f"parameter has {y.size} components, expansion has {s_max}")
    return y


def evaluate_coefficient(exp: CoefficientExpansion, y, x) -> float:
    """a(y)(x) with components of y beyond its length taken as zero."""
    y = as_parameter(y, exp.s_max)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise ValueError(f"point {x} lies outside D")
    pts = x[None, :]
    val = float(exp.a0(pts)[0])
    for yj, t in zip(y, exp.terms):
        if yj != 0.0:
            val += yj * float(t(pts)[0])
    return val


def lp_norm(values: np.ndarray, p: float) -> float:
    """The l_p quasi-norm (sum |v|^p)^(1/p)."""
    v = np.abs(np.asarray(values, dtype=float))
    return float(np.sum(v**p) ** (1.0 / p))


def stechkin_tail(rho, p: float, s: int) -> tuple[float, float]:
    """Tail sum of 1/rho_j beyond s and the Stechkin bound on it.

    Both are taken over the available ``len(rho)`` terms.  For p = 1 the
    bound is reported as +inf.
    """
    rho = np.asarray(rho, dtype=float)
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if np.any(rho <= 0) or np.any(np.diff(rho) < 0):
        raise ValueError("rho must be positive and nondecreasing")
    if not 1 <= s <= rho.size:
        raise ValueError(f"s must lie in [1, {rho.size}], got {s}")
    inv = 1.0 / rho
    tail = float(inv[s:].sum())
    if p == 1.0:
        return tail, math.inf
    c0 = min(p / (1.0 - p), 1.0) * lp_norm(inv, p)
    return tail, c0 * s ** (-(1.0 / p - 1.0))
