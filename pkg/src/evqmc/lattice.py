"""Randomly shifted rank-1 lattice rules with product weights.

Points live on U^s = [-1/2, 1/2)^s:  x_i = frac(i z / N + shift) - 1/2 for
i = 1..N.  Generating vectors come from plain component-by-component (CBC)
search over the shift-averaged worst-case error of the weighted Sobolev space
with mixed first derivatives, whose squared value is

    e^2(z, N) = -1 + (1/N) sum_k prod_j (1 + gamma_j B2({k z_j / N})),

with B2(x) = x^2 - x + 1/6.  Only prime N is supported.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, TextIO

import numpy as np
from scipy.special import zeta as _zeta

# candidates whose error is within this relative margin of the best count as
# tied, and the smallest one wins; this makes the pick independent of the
# summation order used to evaluate the error
TIE_RTOL = 1e-11
_CBC_CHUNK = 1 << 22  # entries of the (candidates x N) work array


def zeta(x: float) -> float:
    """Riemann zeta for real x > 1."""
    if not x > 1:
        raise ValueError(f"zeta diverges for argument {x} <= 1")
    return float(_zeta(x, 1))


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    return all(n % k for k in range(3, math.isqrt(n) + 1, 2))


def euler_totient(n: int) -> int:
    """Euler's phi by trial-division factorisation; phi(1) = 1."""
    if n < 1:
        raise ValueError(f"totient needs n >= 1, got {n}")
    out, m, k = n, n, 2
    while k * k <= m:
        if m % k == 0:
            while m % k == 0:
                m //= k
            out -= out // k
        k += 1
    if m > 1:
        out -= out // m
    return out


def default_lambda_w(p: float) -> float:
    """CBC exponent: 1/(2(1 - 0.05)) for p <= 2/3, else the root of 2l/(1+l) = p."""
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if p <= 2.0 / 3.0:
        return 1.0 / (2.0 * (1.0 - 0.05))
    return p / (2.0 - p)


def zeta_factor(lambda_w: float) -> float:
    """c(lambda) = 2 zeta(2 lambda) / (2 pi^2)^lambda."""
    return 2.0 * zeta(2.0 * lambda_w) / (2.0 * math.pi**2) ** lambda_w


@dataclass(frozen=True, eq=False)
class ProductWeights:
    gamma: np.ndarray
    lambda_w: float

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float).reshape(-1)
        object.__setattr__(self, "gamma", g)
        if np.any(~np.isfinite(g)) or np.any(g < 0):
            raise ValueError("product weights must be finite and nonnegative")
        if not 0.5 < self.lambda_w <= 1.0:
            raise ValueError(f"lambda_w must lie in (1/2, 1], got {self.lambda_w}")

    @property
    def s(self) -> int:
        return self.gamma.size

    def head(self, s: int) -> "ProductWeights":
        return ProductWeights(self.gamma[:s], self.lambda_w)


def weights_from_rho(rho, eta: float, lambda_w: float, zeta_2lw: Optional[float] = None) -> ProductWeights:
    """gamma_j = [ (eta rho_j)^-2 / c(lambda_w) ]^(1/(1+lambda_w))."""
    if not 0.5 < lambda_w <= 1.0:
        raise ValueError(f"lambda_w must lie in (1/2, 1], got {lambda_w}")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    z = zeta(2.0 * lambda_w) if zeta_2lw is None else float(zeta_2lw)
    c = 2.0 * z / (2.0 * math.pi**2) ** lambda_w
    gamma = ((eta * rho) ** -2.0 / c) ** (1.0 / (1.0 + lambda_w))
    return ProductWeights(gamma, float(lambda_w))


def _b2_table(N: int) -> np.ndarray:
    """B2(i/N) for i = 0..N-1, exactly symmetric under i -> N - i."""
    i = np.arange(N)
    x = np.minimum(i, N - i) / N
    return x * x - x + 1.0 / 6.0


def _as_gamma(weights) -> np.ndarray:
    if isinstance(weights, ProductWeights):
        return weights.gamma
    return np.asarray(weights, dtype=float).reshape(-1)


def _extend(q: np.ndarray, g: float, b2: np.ndarray) -> np.ndarray:
    # q = prod - 1 is carried instead of the product to avoid cancellation
    return q + g * b2 * (1.0 + q)


def worst_case_error_sq(z, N: int, weights) -> float:
    """Squared shift-averaged worst-case error of the rank-1 rule (z, N)."""
    z = np.asarray(z, dtype=np.int64).reshape(-1)
    gamma = _as_gamma(weights)
    if gamma.size < z.size:
        raise ValueError(f"{z.size} components but only {gamma.size} weights")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    table = _b2_table(N)
    k = np.arange(N, dtype=np.int64)
    q = np.zeros(N)
    for zj, gj in zip(z, gamma):
        q = _extend(q, gj, table[(k * zj) % N])
    return float(q.mean())


def _pick(errors: np.ndarray) -> int:
    best = errors.min()
    tied = errors <= best + TIE_RTOL * abs(best) + 1e-300
    return int(np.flatnonzero(tied)[0])


@dataclass(frozen=True, eq=False)
class LatticeRule:
    s: int
    N: int
    z: np.ndarray
    weights: ProductWeights
    wce: float
    partial_wce: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def project(self, s: int) -> "LatticeRule":
        """Rule on the first s coordinates (the CBC prefix)."""
        if not 1 <= s <= self.s:
            raise ValueError(f"cannot project an {self.s}-dimensional rule to {s}")
        wce = float(self.partial_wce[s - 1]) if self.partial_wce.size >= s else worst_case_error_sq(
            self.z[:s], self.N, self.weights)
        return LatticeRule(s, self.N, self.z[:s].copy(), self.weights.head(s), wce, self.partial_wce[:s].copy())


def cbc_construct(s: int, N: int, weights) -> LatticeRule:
    """Plain CBC: z_j minimises the partial squared error, smallest z on ties."""
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    if not is_prime(N):
        raise ValueError(f"N = {N} is not prime")
    pw = weights if isinstance(weights, ProductWeights) else ProductWeights(weights, 1.0)
    if pw.s < s:
        raise ValueError(f"{s} dimensions requested but only {pw.s} weights given")
    table = _b2_table(N)
    k = np.arange(N, dtype=np.int64)
    cand = np.arange(1, N, dtype=np.int64)
    q = np.zeros(N)
    z = np.empty(s, dtype=np.int64)
    partial = np.empty(s)
    step = max(1, _CBC_CHUNK // N)
    for j in range(s):
        gj = pw.gamma[j]
        errs = np.empty(cand.size)
        for a in range(0, cand.size, step):
            c = cand[a:a + step]
            errs[a:a + step] = _extend(q, gj, table[(c[:, None] * k[None, :]) % N]).mean(axis=1)
        pick = _pick(errs)
        z[j] = cand[pick]
        q = _extend(q, gj, table[(z[j] * k) % N])
        partial[j] = errs[pick]
    return LatticeRule(s, N, z, pw.head(s), worst_case_error_sq(z, N, pw), partial)


def _check_shift(shift, s: int) -> np.ndarray:
    shift = np.asarray(shift, dtype=float).reshape(-1)
    if shift.size != s:
        raise ValueError(f"shift has {shift.size} components, rule has {s}")
    return shift


def lattice_points(rule: LatticeRule, shift, i: Optional[int] = None) -> np.ndarray:
    """Shifted lattice point i (1..N), or all N points as an (N, s) array when i is None."""
    shift = _check_shift(shift, rule.s)
    if i is None:
        idx = np.arange(1, rule.N + 1, dtype=np.int64)
    else:
        if not 1 <= i <= rule.N:
            raise ValueError(f"point index must lie in [1, {rule.N}], got {i}")
        idx = np.array([i], dtype=np.int64)
    base = ((idx[:, None] * rule.z[None, :]) % rule.N) / rule.N
    pts = np.mod(base + np.mod(shift, 1.0)[None, :], 1.0) - 0.5
    return pts if i is None else pts[0]


_PURPOSES = {}


def purpose_code(purpose: str) -> int:
    """Stable integer tag for a named random stream."""
    if purpose not in _PURPOSES:
        _PURPOSES[purpose] = zlib.crc32(purpose.encode("utf-8"))
    return _PURPOSES[purpose]


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, index)."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), purpose_code(purpose), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def draw_shifts(seed: int, s: int, R: int, purpose: str = "shift") -> np.ndarray:
    """R uniform shifts in [0, 1)^s; shift r comes from stream (seed, purpose, r)."""
    return np.array([stream(seed, purpose, r).random(s) for r in range(R)]).reshape(R, s)


@dataclass(frozen=True, eq=False)
class QmcEstimate:
    mean: float
    stderr: float
    R: int
    per_shift: np.ndarray


def summarize_shifts(per_shift) -> QmcEstimate:
    """Shift average and standard error; identical shift means give stderr exactly 0."""
    v = np.asarray(per_shift, dtype=float).reshape(-1)
    R = v.size
    if R == 0:
        raise ValueError("need at least one shift")
    if np.all(v == v[0]):
        return QmcEstimate(float(v[0]), 0.0, R, v)
    mean = float(v.mean())
    stderr = float(v.std(ddof=1) / math.sqrt(R)) if R > 1 else math.inf
    return QmcEstimate(mean, stderr, R, v)


def point_mean(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float).reshape(-1)
    if np.all(values == values[0]):
        return float(values[0])
    return float(values.mean())


def qmc_estimate(
    F: Callable[[np.ndarray], np.ndarray],
    rule: LatticeRule,
    R: int,
    rng_seed: int,
    purpose: str = "shift",
) -> QmcEstimate:
    """Randomly shifted lattice estimate of the integral of F over U^s.

    ``F`` maps an (N, s) array of points to N values.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    shifts = draw_shifts(rng_seed, rule.s, R, purpose)
    means = [point_mean(F(lattice_points(rule, d))) for d in shifts]
    return summarize_shifts(means)


def theoretical_error_bound(weights, s: int, N: int, norm_bound: float, use_totient: bool = True) -> float:
    """prod_j (1 + gamma_j^l c(l))^(1/(2l)) phi(N)^(-1/(2l)) norm_bound, l = lambda_w.

    With ``use_totient=False`` N itself replaces phi(N).
    """
    if not isinstance(weights, ProductWeights):
        raise TypeError("weights must be ProductWeights")
    lam = weights.lambda_w
    g = weights.gamma[:s]
    if g.size < s:
        raise ValueError(f"{s} dimensions requested but only {g.size} weights given")
    c = zeta_factor(lam)
    log_sum = float(np.sum(np.log1p(g**lam * c)))
    count = euler_totient(N) if use_totient else N
    return math.exp(log_sum / (2.0 * lam)) * count ** (-1.0 / (2.0 * lam)) * norm_bound


def write_generating_vector(rule: LatticeRule, out: TextIO) -> None:
    """Header "s N lambda_w", then "j z_j gamma_j" per dimension."""
    out.write(f"{rule.s} {rule.N} {rule.weights.lambda_w!r}\n")
    for j in range(rule.s):
        out.write(f"{j + 1} {int(rule.z[j])} {float(rule.weights.gamma[j])!r}\n")


def read_generating_vector(lines: Iterable[str]) -> LatticeRule:
    """Inverse of write_generating_vector; the stored error is recomputed."""
    rows = [ln.split() for ln in lines if ln.strip()]
    if not rows or len(rows[0]) != 3:
        raise ValueError("generating vector file must start with 's N lambda_w'")
    s, N, lam = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
    body = rows[1:]
    if len(body) != s:
        raise ValueError(f"header announces {s} dimensions, found {len(body)} lines")
    z = np.empty(s, dtype=np.int64)
    gamma = np.empty(s)
    for j, row in enumerate(body):
        if len(row) != 3 or int(row[0]) != j + 1:
            raise ValueError(f"malformed line for dimension {j + 1}: {' '.join(row)!r}")
        z[j], gamma[j] = int(row[1]), float(row[2])
    pw = ProductWeights(gamma, lam)
    return LatticeRule(s, N, z, pw, worst_case_error_sq(z, N, pw))
