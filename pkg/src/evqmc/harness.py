"""Numerical experiments on the parametric eigenvalue problem.

Each study returns a :class:`StudyTable`: named columns, one tuple per row,
an optional fitted log-log slope, and a set of named PASS/FAIL checks.

Work is split into fixed-size chunks of parameter samples.  The chunks may
run on a thread pool (``EVQMC_WORKERS``), but every sample is solved
independently and results are reassembled in sample order, so the output
does not depend on the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .coefficients import CoefficientExpansion, lp_norm, validate_assumption
from .eigen import DEFAULT_TOL, solve_space, two_smallest
from .fem import FemSpace, laplace_eigen_reference
from .lattice import (
    ProductWeights,
    cbc_construct,
    default_lambda_w,
    draw_shifts,
    lattice_points,
    point_mean,
    stream,
    summarize_shifts,
    theoretical_error_bound,
    weights_from_rho,
)

CHUNK = 256
WORKERS_ENV = "EVQMC_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def _chunked(func: Callable[[np.ndarray], np.ndarray], Y: np.ndarray) -> np.ndarray:
    chunks = [Y[a:a + CHUNK] for a in range(0, Y.shape[0], CHUNK)]
    if not chunks:
        return np.zeros((0,))
    n = worker_count()
    if n == 1 or len(chunks) == 1:
        parts = [func(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            parts = list(pool.map(func, chunks))
    return np.concatenate(parts, axis=0)


def lambda1_values(space: FemSpace, Y: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Smallest eigenvalue for each row of Y."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return _chunked(lambda c: solve_space(space, c, tol=tol).lambda1, Y)


def functional_values(space: FemSpace, Y: np.ndarray, g: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """G(omega_1) = g^T M omega_1 for each row of Y."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    mg = space.mass @ np.asarray(g, dtype=float)
    return _chunked(lambda c: solve_space(space, c, tol=tol).omega1 @ mg, Y)


def pair_values(space: FemSpace, Y: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """(lambda_1, lambda_2) for each row of Y, shape (B, 2)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))

    def run(c):
        bp = solve_space(space, c, tol=tol, second=True)
        return np.column_stack([bp.lambda1, bp.lambda2])

    return _chunked(run, Y)


def functional_weights(space: FemSpace, kind: str) -> Optional[np.ndarray]:
    """Nodal weights g of a named functional: none, mean (g = 1) or left-half-indicator."""
    x1 = space.mesh.interior_coords[:, 0]
    if kind == "none":
        return None
    if kind == "mean":
        return np.ones_like(x1)
    if kind == "left-half-indicator":
        return (x1 <= 0.5).astype(float)
    raise ValueError(f"unknown functional {kind!r}; expected none, mean or left-half-indicator")


# ---------------------------------------------------------------- tables


@dataclass
class StudyTable:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    slope: Optional[float] = None
    slope_ci: Optional[tuple[float, float]] = None
    checks: dict[str, bool] = field(default_factory=dict)
    summary: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])


def fit_rate(points: Iterable[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through (log x, log y); returns (slope, intercept, r^2)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 points to fit a rate")
    if np.any(pts <= 0):
        raise ValueError("rate fit needs positive x and y")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    res = stats.linregress(lx, ly)
    return float(res.slope), float(res.intercept), float(res.rvalue**2)


def slope_interval(points, level: float = 0.95) -> tuple[float, float]:
    """Two-sided t confidence interval of the fitted slope."""
    pts = np.asarray(list(points), dtype=float)
    res = stats.linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    dof = pts.shape[0] - 2
    if dof < 1:
        return (math.nan, math.nan)
    half = stats.t.ppf(0.5 + level / 2, dof) * res.stderr
    return (float(res.slope - half), float(res.slope + half))


def _fit_table(table: StudyTable, xcol: str, ycol: str) -> None:
    x, y = table.column(xcol), table.column(ycol)
    keep = y > 0
    if keep.sum() >= 3:
        pts = list(zip(x[keep], y[keep]))
        table.slope = fit_rate(pts)[0]
        table.slope_ci = slope_interval(pts)


# ---------------------------------------------------------------- constants


@dataclass(frozen=True)
class ConstantsReport:
    alpha_min: float
    alpha_max: float
    Lambda0: float
    Lambda1: float
    chi1: float
    chi2: float
    chi1_h: float
    chi2_h: float
    gamma_min_emp: float
    gamma_max_emp: float
    delta_min_emp: float
    delta_max_emp: float
    gamma_max_bound: float
    kappa: float
    eta: float
    eta_global: float
    K_lambda: float
    K_omega: float
    C1: float
    gap_samples: int = 0

    KINDS = {
        "alpha_min": "input", "alpha_max": "input", "Lambda0": "input", "Lambda1": "input",
        "chi1": "input", "chi2": "input", "chi1_h": "derived", "chi2_h": "derived",
        "gamma_min_emp": "empirical", "gamma_max_emp": "empirical",
        "delta_min_emp": "empirical", "delta_max_emp": "empirical",
        "gamma_max_bound": "rigorous", "kappa": "derived", "eta": "derived", "eta_global": "derived",
        "K_lambda": "rigorous", "K_omega": "derived", "C1": "derived", "gap_samples": "input",
    }

    def items(self) -> list[tuple[str, float, str]]:
        return [(k, getattr(self, k), v) for k, v in self.KINDS.items()]


def derived_constants(alpha_min, alpha_max, Lambda0, Lambda1, chi1, chi2, delta_min) -> dict:
    """eta, kappa, K_lambda, K_omega, C1 and gamma_max_bound from the basic constants.

    ``chi1``, ``chi2`` are whichever Laplacian eigenvalues the caller wants
    the bounds to refer to (discrete ones for discrete eigenvalues).
    """
    lo, hi = alpha_min - Lambda0, alpha_max + Lambda0
    if not lo > 0:
        raise ValueError(f"alpha_min - Lambda0 = {lo} must be positive")
    if not delta_min > 0:
        raise ValueError(f"relative gap bound must be positive, got {delta_min}")
    factor = 1.0 + 1.0 / delta_min
    eta = math.inf if Lambda1 == 0 else lo / (2.0 * Lambda1 * factor)
    kappa = 1.0 / (2.0 * factor)
    gmax = hi * chi2
    K_lambda = gmax / 2.0 + hi * chi1
    K_omega = math.sqrt((gmax + 2.0 * hi * chi1) / (2.0 * (1.0 - kappa) * lo))
    C1 = (hi * chi1) ** 2 / math.sqrt(chi1) * hi / lo**2
    return {
        "gamma_max_bound": gmax, "kappa": kappa, "eta": eta, "eta_global": lo / (2.0 * factor),
        "K_lambda": K_lambda, "K_omega": K_omega, "C1": C1,
    }


def sample_parameters(seed: int, purpose: str, count: int, s: int) -> np.ndarray:
    """Uniform samples on U^s from stream (seed, purpose)."""
    if count == 0:
        return np.zeros((0, s))
    return stream(seed, purpose).random((count, s)) - 0.5


def discrete_laplace_pair(space: FemSpace, tol: float = DEFAULT_TOL) -> tuple[float, float]:
    p1, p2 = two_smallest(space.laplacian, space.mass, tol=tol, coords=space.mesh.interior_coords)
    return p1.eigenvalue, p2.eigenvalue


def gap_scan(
    exp: CoefficientExpansion,
    space: FemSpace,
    M: int,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    chi_h: Optional[tuple[float, float]] = None,
) -> StudyTable:
    """lambda_1, lambda_2 and the gaps over M uniform samples of y."""
    if M < 1:
        raise ValueError(f"need at least one sample, got {M}")
    rep = validate_assumption(exp, space.mesh.domain_kind)
    s = min(exp.s_max, space.n_terms)
    Y = sample_parameters(seed, "gap", M, s)
    lam = pair_values(space, Y, tol)
    gap = lam[:, 1] - lam[:, 0]
    rel = gap / lam[:, 0]
    chi_h = discrete_laplace_pair(space, tol) if chi_h is None else chi_h
    bound = (rep.alpha_max + rep.Lambda0) * chi_h[1]
    # discrete enclosure, widened by 10 tol as in eigenvalue_bounds_check
    chi = np.asarray(chi_h, dtype=float)
    lower = (rep.alpha_min - rep.Lambda0) * chi * (1 - 10 * tol)
    upper = (rep.alpha_max + rep.Lambda0) * chi * (1 + 10 * tol)
    inside = np.all((lam >= lower) & (lam <= upper), axis=1)
    table = StudyTable("gap-scan", ("sample", "lambda1", "lambda2", "gap", "rel_gap",
                                    "lower1", "upper1", "lower2", "upper2", "enclosed"))
    table.rows = [
        (i, *map(float, (lam[i, 0], lam[i, 1], gap[i], rel[i], lower[0], upper[0], lower[1], upper[1])),
         int(inside[i]))
        for i in range(M)
    ]
    table.summary = {
        "gamma_min": float(gap.min()), "gamma_max": float(gap.max()),
        "delta_min": float(rel.min()), "delta_max": float(rel.max()), "gamma_max_bound": float(bound),
    }
    table.checks = {
        "gap_positive": bool(gap.min() > 0),
        "rel_gap_positive": bool(rel.min() > 0),
        "gap_below_bound": bool(gap.max() <= bound),
        "enclosure": bool(inside.all()),
    }
    return table


def constants_report(
    exp: CoefficientExpansion,
    space: FemSpace,
    gap_samples: int = 1000,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> ConstantsReport:
    """Admissibility data, Laplacian eigenvalues, empirical gaps and derived constants."""
    kind = space.mesh.domain_kind
    rep = validate_assumption(exp, kind)
    if not rep.admissible:
        raise ValueError(
            f"expansion is not admissible: alpha_min={rep.alpha_min!r}, Lambda0={rep.Lambda0!r}"
        )
    chi_h = discrete_laplace_pair(space, tol)
    if gap_samples > 0:
        scan = gap_scan(exp, space, gap_samples, seed, tol, chi_h)
        sm = scan.summary
        g_min, g_max, d_min, d_max = sm["gamma_min"], sm["gamma_max"], sm["delta_min"], sm["delta_max"]
    else:
        lam = pair_values(space, np.zeros((1, min(exp.s_max, space.n_terms))), tol)[0]
        g_min = g_max = float(lam[1] - lam[0])
        d_min = d_max = g_min / float(lam[0])
    if not d_min > 0:
        raise ValueError(f"sampled relative gap is not positive (min {d_min!r})")
    der = derived_constants(rep.alpha_min, rep.alpha_max, rep.Lambda0, rep.Lambda1, chi_h[0], chi_h[1], d_min)
    return ConstantsReport(
        alpha_min=rep.alpha_min, alpha_max=rep.alpha_max, Lambda0=rep.Lambda0, Lambda1=rep.Lambda1,
        chi1=laplace_eigen_reference(kind, 1), chi2=laplace_eigen_reference(kind, 2),
        chi1_h=chi_h[0], chi2_h=chi_h[1],
        gamma_min_emp=g_min, gamma_max_emp=g_max, delta_min_emp=d_min, delta_max_emp=d_max,
        gap_samples=int(gap_samples), **der,
    )


# ---------------------------------------------------------------- derivatives


@dataclass(frozen=True)
class MultiIndex:
    """Finitely supported multi-index, stored as sorted (j, nu_j) pairs with j >= 1."""

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        clean = {}
        for j, v in self.entries:
            if j < 1 or v < 0:
                raise ValueError(f"invalid multi-index entry ({j}, {v})")
            if v:
                clean[j] = clean.get(j, 0) + v
        object.__setattr__(self, "entries", tuple(sorted(clean.items())))

    @classmethod
    def of(cls, *coords: int) -> "MultiIndex":
        """MultiIndex.of(1, 1, 3) is 2 e_1 + e_3."""
        return cls(tuple((j, 1) for j in coords))

    @property
    def order(self) -> int:
        return sum(v for _, v in self.entries)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.entries)

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(v) for _, v in self.entries)

    def power(self, base: np.ndarray) -> float:
        """prod_j base_j^nu_j with base indexed from j = 1."""
        return float(math.prod(base[j - 1] ** v for j, v in self.entries))

    def label(self) -> str:
        return "0" if not self.entries else "+".join(
            (f"{v}e{j}" if v > 1 else f"e{j}") for j, v in self.entries)


# relative eigenvalue noise assumed for the FD stencils
_FD_NOISE = 100 * np.finfo(float).eps + DEFAULT_TOL**2
_FD_NOISE_LIMIT = 1e-4


def _stencil(nu: MultiIndex, steps: dict[int, float]) -> list[tuple[float, dict[int, float]]]:
    """Central-difference weights and evaluation offsets for |nu| <= 2."""
    e = nu.entries
    if nu.order == 0:
        return [(1.0, {})]
    if nu.order == 1:
        (j, _), = e
        t = steps[j]
        return [(1 / (2 * t), {j: t}), (-1 / (2 * t), {j: -t})]
    if nu.order == 2 and len(e) == 1:
        (j, _), = e
        t = steps[j]
        return [(1 / t**2, {j: t}), (-2 / t**2, {}), (1 / t**2, {j: -t})]
    if nu.order == 2:
        (i, _), (j, _) = e
        ti, tj = steps[i], steps[j]
        w = 1 / (4 * ti * tj)
        return [(w * si * sj, {i: si * ti, j: sj * tj}) for si in (1, -1) for sj in (1, -1)]
    raise ValueError(f"finite differences are implemented for |nu| <= 2, got {nu.label()}")


def _fd_estimates(space, s, orders, steps_for, tol):
    """Evaluate every stencil in one batch; returns one estimate per multi-index."""
    points, plan = [], []
    for nu in orders:
        st_ = _stencil(nu, steps_for(nu))
        plan.append([(w, len(points) + k) for k, (w, _) in enumerate(st_)])
        for _, off in st_:
            y = np.zeros(s)
            for j, v in off.items():
                y[j - 1] = v
            points.append(y)
    lam = lambda1_values(space, np.array(points), tol)
    return [sum(w * lam[k] for w, k in terms) for terms in plan]


def derivative_check(
    exp: CoefficientExpansion,
    space: FemSpace,
    orders: Sequence[MultiIndex],
    fd_step: float,
    consts: ConstantsReport,
    tol: float = DEFAULT_TOL,
) -> StudyTable:
    """Central-difference derivatives of lambda_1 at y = 0 against both bound forms.

    The step in direction j is ``fd_step * min(1/2, eta rho_j)``.  A second
    estimate at half the step gives a Richardson value and a consistency
    measure.  PASS iff |FD| / bound <= 1 for every multi-index and form.
    """
    if not fd_step > 0:
        raise ValueError(f"fd_step must be positive, got {fd_step}")
    s = max([max(nu.support, default=0) for nu in orders] + [1])
    if s > exp.s_max or s > space.n_terms:
        raise ValueError(f"multi-index uses coordinate {s} but only {exp.s_max} terms exist")
    rho = exp.rho
    beta = exp.beta
    eta = consts.eta
    cap = np.minimum(0.5, eta * rho) if math.isfinite(eta) else np.full(rho.size, 0.5)

    def steps(scale):
        def f(nu):
            return {j: scale * fd_step * cap[j - 1] for j in nu.support}
        return f

    for nu in orders:
        if nu.order:
            t = min(fd_step * cap[j - 1] for j in nu.support)
            if _FD_NOISE / t ** nu.order > _FD_NOISE_LIMIT:
                raise ValueError(
                    f"fd_step {fd_step} is too small for {nu.label()}: eigenvalue noise "
                    f"{_FD_NOISE:.1e} / step^{nu.order} exceeds {_FD_NOISE_LIMIT:.0e}; use a larger step"
                )
    fd1 = _fd_estimates(space, s, orders, steps(1.0), tol)
    fd2 = _fd_estimates(space, s, orders, steps(0.5), tol)
    table = StudyTable(
        "derivative-check",
        ("nu", "order", "fd", "fd_half", "richardson", "fd_consistency",
         "bound_local", "ratio_local", "bound_global", "ratio_global", "pass"),
    )
    ok_all = True
    K = consts.K_lambda
    for nu, a, b in zip(orders, fd1, fd2):
        if nu.order == 0:
            b_loc = b_glob = K
        else:
            b_loc = K * nu.factorial / nu.power(eta * rho) if math.isfinite(eta) else 0.0
            b_glob = K * math.factorial(nu.order) * nu.power(math.e * beta / consts.eta_global)
        rich = (4 * b - a) / 3 if nu.order else a
        cons = abs(a - b) / max(abs(a), abs(b), 1e-300)
        r_loc = abs(a) / b_loc if b_loc > 0 else (0.0 if a == 0 else math.inf)
        r_glob = abs(a) / b_glob if b_glob > 0 else (0.0 if a == 0 else math.inf)
        ok = bool(r_loc <= 1 and r_glob <= 1)
        ok_all &= ok
        table.rows.append((nu.label(), nu.order, float(a), float(b), float(rich), float(cons),
                           float(b_loc), float(r_loc), float(b_glob), float(r_glob), int(ok)))
    table.checks = {"ratios_at_most_one": bool(ok_all)}
    return table


def default_orders(first: int = 8, second: int = 4) -> list[MultiIndex]:
    """e_j for j <= first, then e_i + e_j for i <= j <= second."""
    out = [MultiIndex.of(j) for j in range(1, first + 1)]
    out += [MultiIndex.of(i, j) for i in range(1, second + 1) for j in range(i, second + 1)]
    return out


# ---------------------------------------------------------------- truncation


def qmc_weights(exp: CoefficientExpansion, s: int, consts: ConstantsReport, lambda_w: Optional[float]):
    lam = default_lambda_w(exp.decay_p) if lambda_w is None else lambda_w
    eta = consts.eta if math.isfinite(consts.eta) else 1.0
    return weights_from_rho(exp.rho[:s], eta, lam)


def qmc_norm_bound(weights: ProductWeights, exp: CoefficientExpansion, s: int, consts: ConstantsReport,
                   K: Optional[float] = None) -> float:
    """Bound on the weighted norm of lambda_1 restricted to s coordinates.

    norm^2 <= sum_u gamma_u^-1 (K prod_{j in u} (eta rho_j)^-1)^2
           = K^2 prod_j (1 + (eta rho_j)^-2 / gamma_j).
    """
    K = consts.K_lambda if K is None else K
    if not math.isfinite(consts.eta):
        return K
    a = (consts.eta * exp.rho[:s]) ** -2.0 / weights.gamma[:s]
    return K * math.exp(0.5 * float(np.sum(np.log1p(a))))


def _truncation_constants(exp: CoefficientExpansion, consts: ConstantsReport) -> float:
    p = exp.decay_p
    if p >= 1.0:
        return math.inf
    return min(p / (1 - p), 1.0) * lp_norm(1.0 / exp.rho, p)


def truncation_study(
    exp: CoefficientExpansion,
    space: FemSpace,
    s_list: Sequence[int],
    N_ref: int,
    R: int,
    consts: ConstantsReport,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    g: Optional[np.ndarray] = None,
    lambda_w: Optional[float] = None,
) -> StudyTable:
    """Truncation errors |E[F_s] - E[F_sref]| on common lattice points, sref = 2 max(s_list).

    F is lambda_1, or G(omega_1) = g^T M omega_1 when the nodal weights ``g``
    are given.  The bound column is the smaller of the two available
    truncation bounds.
    """
    s_list = [int(s) for s in s_list]
    if not s_list or any(b <= a for a, b in zip(s_list, s_list[1:])) or s_list[0] < 1:
        raise ValueError(f"s_list must be increasing positive integers, got {s_list}")
    s_ref = 2 * s_list[-1]
    if s_ref > exp.s_max or s_ref > space.n_terms:
        raise ValueError(f"s_ref = 2 max(s_list) = {s_ref} exceeds s_max = {exp.s_max}")
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    rule = cbc_construct(s_ref, N_ref, qmc_weights(exp, s_ref, consts, lambda_w))
    shifts = draw_shifts(seed, s_ref, R, "truncation")
    levels = s_list + [s_ref]
    per = np.empty((len(levels), R))
    for r, d in enumerate(shifts):
        pts = lattice_points(rule, d)
        Y = np.concatenate([np.where(np.arange(s_ref) < s, pts, 0.0) for s in levels])
        vals = lambda1_values(space, Y, tol) if g is None else functional_values(space, Y, g, tol)
        per[:, r] = [point_mean(v) for v in vals.reshape(len(levels), rule.N)]
    ref = per[-1]
    p = exp.decay_p
    C0 = _truncation_constants(exp, consts)
    eta = consts.eta
    if g is None:
        lead = consts.K_lambda
    else:
        g_norm = math.sqrt(float(g @ (space.mass @ g))) / math.sqrt(consts.chi1_h)
        lead = g_norm * consts.K_omega
    table = StudyTable(
        "truncation" if g is None else "functional-truncation",
        ("s", "estimate", "error", "stderr", "bound_tail", "bound_rate", "bound", "pass"),
    )
    ok_all = True
    for k, s in enumerate(levels):
        diff = per[k] - ref
        est = summarize_shifts(per[k])
        d = summarize_shifts(diff)
        err = abs(d.mean)
        rate = C0**2 * lead / (4 * eta**2) * s ** (-2 * (1 / p - 1)) if math.isfinite(C0) else math.inf
        if g is None:
            tail = (1.0 / exp.rho[s]) * consts.C1 * consts.Lambda1 / 2 if s < exp.s_max else 0.0
        else:
            tail = math.inf
        bound = min(tail, rate)
        ok = bool(err <= bound)
        ok_all &= ok
        table.rows.append((s, est.mean, err, d.stderr, float(tail), float(rate), float(bound), int(ok)))
    # the s_ref row is zero by construction and stays out of the fit
    sub = StudyTable(table.name, table.columns, table.rows[:-1])
    _fit_table(sub, "s", "error")
    table.slope, table.slope_ci = sub.slope, sub.slope_ci
    errs, ses = sub.column("error"), sub.column("stderr")
    table.checks = {"errors_below_bound": bool(ok_all)}
    table.summary = {
        "s_ref": s_ref, "N_ref": rule.N, "R": R,
        "monotone_within_noise": float(all(b <= a + 2 * (sa + sb) for a, b, sa, sb in
                                           zip(errs, errs[1:], ses, ses[1:]))),
    }
    return table


# ---------------------------------------------------------------- convergence


def convergence_study(
    exp: CoefficientExpansion,
    space: FemSpace,
    s: int,
    N_list: Sequence[int],
    R: int,
    consts: ConstantsReport,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    baseline: bool = True,
    g: Optional[np.ndarray] = None,
    lambda_w: Optional[float] = None,
) -> StudyTable:
    """RMS error of randomly shifted lattice rules (and plain MC) against a reference.

    The reference is the lattice estimate at the largest N with 2R shifts
    drawn from a separate stream.  The MC baseline uses R independent
    batches of N points.
    """
    N_list = [int(n) for n in N_list]
    if not N_list or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError(f"N_list must be increasing, got {N_list}")
    if R < 8:
        raise ValueError(f"R must be >= 8, got {R}")
    if s > exp.s_max or s > space.n_terms:
        raise ValueError(f"s = {s} exceeds s_max = {exp.s_max}")
    weights = qmc_weights(exp, s, consts, lambda_w)

    def F(Y):
        return lambda1_values(space, Y, tol) if g is None else functional_values(space, Y, g, tol)

    rules = {N: cbc_construct(s, N, weights) for N in N_list}
    top = rules[N_list[-1]]
    ref_shift = draw_shifts(seed, s, 2 * R, "reference")
    reference = summarize_shifts([point_mean(F(lattice_points(top, d))) for d in ref_shift])
    K = consts.K_lambda
    if g is not None:
        K = math.sqrt(float(g @ (space.mass @ g))) / math.sqrt(consts.chi1_h) * consts.K_omega
    nb = qmc_norm_bound(weights, exp, s, consts, K)
    table = StudyTable(
        "convergence" if g is None else "functional-convergence",
        ("N", "qmc_mean", "qmc_rms", "qmc_stderr", "mc_mean", "mc_rms", "mc_stderr",
         "wce", "bound_phi", "bound_N"),
    )
    shifts = draw_shifts(seed, s, R, "convergence")
    for N in N_list:
        rule = rules[N]
        q = summarize_shifts([point_mean(F(lattice_points(rule, d))) for d in shifts])
        q_rms = float(np.sqrt(np.mean((q.per_shift - reference.mean) ** 2)))
        if baseline:
            mc = [point_mean(F(stream(seed, f"mc-{N}", r).random((N, s)) - 0.5)) for r in range(R)]
            m = summarize_shifts(mc)
            m_rms = float(np.sqrt(np.mean((m.per_shift - reference.mean) ** 2)))
            m_mean, m_se = m.mean, m.stderr
        else:
            m_mean = m_rms = m_se = math.nan
        table.rows.append((
            N, q.mean, q_rms, q.stderr, m_mean, m_rms, m_se, rule.wce,
            theoretical_error_bound(weights, s, N, nb), theoretical_error_bound(weights, s, N, nb, use_totient=False),
        ))
    _fit_table(table, "N", "qmc_rms")
    table.summary = {"reference": reference.mean, "reference_stderr": reference.stderr, "norm_bound": nb,
                     "lambda_w": weights.lambda_w}
    if baseline:
        mc_pts = list(zip(table.column("N"), table.column("mc_rms")))
        mc_pts = [(x, y) for x, y in mc_pts if y > 0]
        if len(mc_pts) >= 3:
            table.summary["mc_slope"] = fit_rate(mc_pts)[0]
            lo, hi = slope_interval(mc_pts)
            table.summary["mc_slope_lo"], table.summary["mc_slope_hi"] = lo, hi
    table.summary["qmc_slope"] = table.slope if table.slope is not None else math.nan
    # empirical C in rms ~ C N^slope; the theoretical constant is not explicit
    pos = [(x, y) for x, y in zip(table.column("N"), table.column("qmc_rms")) if y > 0]
    table.summary["qmc_rate_constant"] = math.exp(fit_rate(pos)[1]) if len(pos) >= 3 else math.nan
    rms = table.column("qmc_rms")
    table.checks = {"qmc_below_bound": bool(np.all(rms <= table.column("bound_phi")))}
    if baseline:
        mc_rms = table.column("mc_rms")
        table.checks["qmc_below_mc_at_largest_N"] = bool(rms[-1] <= mc_rms[-1])
        if "mc_slope" in table.summary and table.slope is not None:
            table.checks["qmc_slope_below_mc_slope"] = bool(table.slope <= table.summary["mc_slope"] - 0.2)
    return table


def functional_study(
    exp: CoefficientExpansion,
    space: FemSpace,
    g: np.ndarray,
    consts: ConstantsReport,
    *,
    s_list: Optional[Sequence[int]] = None,
    N_ref: int = 2017,
    s: Optional[int] = None,
    N_list: Optional[Sequence[int]] = None,
    R: int = 16,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    baseline: bool = True,
) -> list[StudyTable]:
    """Truncation and/or convergence studies for the integrand G(omega_1)."""
    out = []
    if s_list is not None:
        out.append(truncation_study(exp, space, s_list, N_ref, R, consts, seed, tol, g=g))
    if N_list is not None:
        if s is None:
            raise ValueError("convergence part needs s")
        out.append(convergence_study(exp, space, s, N_list, R, consts, seed, tol, baseline, g=g))
    return out
