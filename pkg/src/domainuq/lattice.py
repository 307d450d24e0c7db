"""Rank-1 lattice rules in weighted Korobov spaces with SPOD weights.

The squared worst-case error of a lattice rule with SPOD weights

    gamma_u = sum_{m_u in {1:alpha}^|u|} Gamma(|m_u|) prod_{j in u} gamma_{j, m_j}

is evaluated through a per-point state indexed by the running order ell,

    P_j(k, ell) = P_{j-1}(k, ell) + sum_m gamma_{j,m} omega({k z_j / n}) P_{j-1}(k, ell - m),

so that e^2 = (1/n) sum_k sum_{ell>=1} Gamma(ell) P_s(k, ell). Internally the
state is kept pre-multiplied by Gamma(ell) to avoid overflowing factorials.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sympy import isprime, primitive_root

from .combinatorics import order_factor, stirling2
from .errors import DimensionZero, LambdaOutOfRange, NotPrime, UnsupportedAlpha
from .random_field import BSequence, zeta

SUPPORTED_ALPHA = (2, 4, 6)
TIE_RTOL = 1e-12


def _bernoulli(alpha: int, x: np.ndarray) -> np.ndarray:
    if alpha == 2:
        return x * x - x + 1.0 / 6.0
    if alpha == 4:
        x2 = x * x
        return x2 * x2 - 2.0 * x2 * x + x2 - 1.0 / 30.0
    x2 = x * x
    return x2 * x2 * x2 - 3.0 * x2 * x2 * x + 2.5 * x2 * x2 - 0.5 * x2 + 1.0 / 42.0


def korobov_kernel(alpha: int, x):
    """omega_alpha(x) = sum_{h != 0} exp(2 pi i h x) / |h|^alpha for x in [0, 1)."""
    if alpha not in SUPPORTED_ALPHA:
        raise UnsupportedAlpha(f"alpha must be one of {SUPPORTED_ALPHA}, got {alpha}")
    x = np.asarray(x, dtype=float)
    sign = (-1.0) ** (alpha // 2 + 1)
    return sign * (2.0 * math.pi) ** alpha / math.factorial(alpha) * _bernoulli(alpha, x)


def alpha_from_p(p: float) -> int:
    """floor(1/p) + 1, rounded up to the next even integer."""
    alpha = math.floor(1.0 / p) + 1
    return alpha + (alpha % 2)


@dataclass(frozen=True)
class LatticeRule:
    n: int
    z: tuple[int, ...]
    e2_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not isprime(self.n):
            raise NotPrime(f"n must be prime, got {self.n}")
        for zj in self.z:
            if not 1 <= zj <= self.n - 1:
                raise ValueError(f"generating vector entry {zj} outside 1..{self.n - 1}")

    @property
    def s(self) -> int:
        return len(self.z)

    def points(self) -> np.ndarray:
        return lattice_points(self)


def lattice_points(rule: LatticeRule) -> np.ndarray:
    """Points (i z mod n)/n for i = 1..n, shape (n, s); the last point is the origin."""
    i = np.arange(1, rule.n + 1, dtype=np.int64)[:, None]
    z = np.asarray(rule.z, dtype=np.int64)[None, :]
    return ((i * z) % rule.n) / rule.n


@dataclass(frozen=True)
class SpodWeightParams:
    alpha: int
    d: int
    gamma_jm: np.ndarray  # shape (s, alpha), entry [j-1, m-1]
    order_factor: np.ndarray  # Gamma(ell) for ell = 0..alpha*s (float, may be inf)
    c_tilde: float
    beta: tuple[float, ...]

    @property
    def s(self) -> int:
        return self.gamma_jm.shape[0]

    def restrict(self, s: int) -> SpodWeightParams:
        return SpodWeightParams(
            self.alpha,
            self.d,
            self.gamma_jm[:s].copy(),
            self.order_factor[: self.alpha * s + 1].copy(),
            self.c_tilde,
            self.beta[:s],
        )

    def order_ratio(self, ell: int, m: int) -> float:
        """Gamma(ell)/Gamma(ell-m) = (ell+d-1)!/(ell-m+d-1)!."""
        return float(math.prod(range(ell - m + self.d, ell + self.d)))


def _order_table(max_order: int, d: int) -> np.ndarray:
    out = np.empty(max_order + 1)
    for ell in range(max_order + 1):
        try:
            out[ell] = float(order_factor(ell, d))
        except OverflowError:
            out[ell:] = math.inf
            break
    return out


def build_spod_params(
    b: BSequence,
    alpha: int = 2,
    d: int = 2,
    sigma_min: float = 1.0,
    rho: float = 1.0,
    weight_amplitude: float = 1.0,
) -> SpodWeightParams:
    """SPOD weight tables from the decay sequence ``b``.

    ``weight_amplitude`` multiplies b and xi_b before use, so passing the
    unit-amplitude sequence gives the weights of a field with that amplitude.
    """
    if alpha not in SUPPORTED_ALPHA:
        raise UnsupportedAlpha(f"alpha must be one of {SUPPORTED_ALPHA}, got {alpha}")
    if not 0.0 < sigma_min <= 1.0:
        raise ValueError("sigma_min must lie in (0, 1]")
    if rho < 1.0:
        raise ValueError("rho must be >= 1")
    bj = np.asarray(b.b, dtype=float) * weight_amplitude
    xi = b.xi_b * weight_amplitude
    c_tilde = 2.0 * math.factorial(d) * (2.0 + xi) ** d * (1.0 + xi) ** 3 / sigma_min ** (d + 4)
    beta = (2.0 + math.sqrt(2.0)) * max(1.0 + math.sqrt(3.0), rho) * bj
    m = np.arange(1, alpha + 1)
    mfact = np.array([math.factorial(int(k)) for k in m], dtype=float)
    stir = np.array([stirling2(alpha, int(k)) for k in m], dtype=float)
    gamma_jm = c_tilde**alpha * mfact[None, :] * beta[:, None] ** m[None, :] * stir[None, :]
    order = _order_table(alpha * len(bj), d)
    return SpodWeightParams(alpha, d, gamma_jm, order, c_tilde, tuple(beta.tolist()))


def product_weight_params(gammas, alpha: int = 2, d: int = 2) -> SpodWeightParams:
    """Weights with gamma_{j,1} = gammas[j] and all higher orders switched off (testing aid)."""
    g = np.zeros((len(gammas), alpha))
    g[:, 0] = gammas
    return SpodWeightParams(alpha, d, g, _order_table(alpha * len(gammas), d), 1.0, tuple(float(v) for v in gammas))


def set_weight(params: SpodWeightParams, u) -> float:
    """gamma_u for a subset u of {1..s} (1-based), by a small order DP."""
    u = sorted(u)
    if not u:
        return 1.0
    poly = np.zeros(params.alpha * len(u) + 1)
    poly[0] = 1.0
    for count, j in enumerate(u, start=1):
        new = np.zeros_like(poly)
        for m in range(1, params.alpha + 1):
            new[m:] += params.gamma_jm[j - 1, m - 1] * poly[:-m]
        poly = new
    return math.fsum(params.order_factor[: len(poly)] * poly)


@dataclass(frozen=True)
class WorstCaseError:
    e_squared: float
    n: int
    s: int
    alpha: int

    def __float__(self) -> float:
        return self.e_squared


class _State:
    """Gamma-scaled order state P~(k, ell) = Gamma(ell) P(k, ell)."""

    def __init__(self, n: int, params: SpodWeightParams, dims: int):
        self.n = n
        self.params = params
        self.width = params.alpha * dims + 1
        self.table = np.zeros((n, self.width))
        self.table[:, 0] = 1.0
        alpha = params.alpha
        self.ratio = np.zeros((alpha, self.width))
        for m in range(1, alpha + 1):
            for ell in range(m, self.width):
                self.ratio[m - 1, ell] = params.order_ratio(ell, m)

    def increment(self, j: int) -> np.ndarray:
        """sum_m gamma_{j,m} (Gamma(ell)/Gamma(ell-m)) P~(k, ell-m) for the orders reachable after j steps."""
        w = min(self.params.alpha * j + 1, self.width)
        inc = np.zeros((self.n, w))
        for m in range(1, self.params.alpha + 1):
            g = self.params.gamma_jm[j - 1, m - 1]
            if g == 0.0 or m >= w:
                continue
            inc[:, m:] += (g * self.ratio[m - 1, m:w])[None, :] * self.table[:, : w - m]
        return inc

    def apply(self, omega_k: np.ndarray, inc: np.ndarray):
        self.table[:, : inc.shape[1]] += omega_k[:, None] * inc

    def e2(self) -> float:
        rows = self.table[:, 1:].sum(axis=1)
        return math.fsum(rows) / self.n


def _kernel_column(alpha: int, n: int, zj: int) -> np.ndarray:
    k = np.arange(n, dtype=np.int64)
    return korobov_kernel(alpha, ((k * zj) % n) / n)


def worst_case_error_sq(rule: LatticeRule, params: SpodWeightParams) -> WorstCaseError:
    """Squared worst-case error of ``rule`` in the SPOD-weighted Korobov space."""
    if rule.s > params.s:
        raise ValueError(f"rule has {rule.s} dimensions but weights only {params.s}")
    state = _State(rule.n, params, rule.s)
    for j, zj in enumerate(rule.z, start=1):
        state.apply(_kernel_column(params.alpha, rule.n, zj), state.increment(j))
    return WorstCaseError(state.e2(), rule.n, rule.s, params.alpha)


def _scores_naive(alpha: int, n: int, q: np.ndarray, chunk: int = 512) -> np.ndarray:
    """(1/n) sum_k omega({k z / n}) q(k) for every z = 1..n-1."""
    k = np.arange(n, dtype=np.int64)
    out = np.empty(n - 1)
    for start in range(1, n, chunk):
        z = np.arange(start, min(start + chunk, n), dtype=np.int64)
        omega = korobov_kernel(alpha, ((z[:, None] * k[None, :]) % n) / n)
        out[start - 1 : start - 1 + len(z)] = omega @ q / n
    return out


def _scores_fft(alpha: int, n: int, q: np.ndarray, generator: int) -> np.ndarray:
    """Same as ``_scores_naive`` via the cyclic structure of (Z/nZ)^* (Rader)."""
    order = n - 1
    powers = np.empty(order, dtype=np.int64)
    acc = 1
    for b in range(order):
        powers[b] = acc
        acc = (acc * generator) % n
    w = korobov_kernel(alpha, powers / n)
    qq = q[powers]
    corr = np.fft.irfft(np.fft.rfft(w) * np.conj(np.fft.rfft(qq)), order)
    const = korobov_kernel(alpha, 0.0) * q[0]
    out = np.empty(order)
    out[powers - 1] = (const + corr) / n
    return out


def cbc_construct(n: int, s: int, params: SpodWeightParams, method: str = "fft") -> LatticeRule:
    """Component-by-component construction of a generating vector.

    Each z_j minimizes e^2 given z_1..z_{j-1}; candidates whose scores agree to
    within ``TIE_RTOL`` of the summand scale are treated as tied and the
    smallest one wins.
    """
    if s < 1:
        raise DimensionZero("s must be >= 1")
    if not isprime(n):
        raise NotPrime(f"n must be prime, got {n}")
    if s > params.s:
        raise ValueError(f"requested s = {s} but weights only cover {params.s} dimensions")
    if method not in ("fft", "naive"):
        raise ValueError("method must be 'fft' or 'naive'")
    alpha = params.alpha
    generator = int(primitive_root(n)) if method == "fft" else 0
    state = _State(n, params, s)
    z: list[int] = []
    history: list[float] = []
    omega0 = float(korobov_kernel(alpha, 0.0))
    for j in range(1, s + 1):
        inc = state.increment(j)
        q = inc[:, 1:].sum(axis=1)
        if n == 2:
            scores = np.array([korobov_kernel(alpha, 0.0) * q[0] + korobov_kernel(alpha, 0.5) * q[1]]) / n
        elif method == "fft":
            scores = _scores_fft(alpha, n, q, generator)
        else:
            scores = _scores_naive(alpha, n, q)
        scale = omega0 * np.abs(q).sum() / n
        best = float(scores.min())
        zj = int(np.flatnonzero(scores <= best + TIE_RTOL * scale)[0]) + 1
        z.append(zj)
        state.apply(_kernel_column(alpha, n, zj), inc)
        history.append(state.e2())
    return LatticeRule(n, tuple(z), tuple(history))


def error_bound_constant(params: SpodWeightParams, lam: float, s: int | None = None, mode: str = "spod") -> float:
    """C_{alpha,gamma}(lambda, s) = sum_{u != 0} gamma_u^lambda (2 zeta(alpha lambda))^|u|.

    ``mode="spod"`` evaluates the order-state recursion on lambda-powered
    summands, which bounds the exact value from above (Jensen). ``mode="exact"``
    enumerates every subset and is limited to s <= 20.
    """
    alpha = params.alpha
    if not (1.0 / alpha < lam <= 1.0):
        raise LambdaOutOfRange(f"lambda must lie in (1/{alpha}, 1], got {lam}")
    s = params.s if s is None else s
    two_zeta = 2.0 * zeta(alpha * lam)
    if mode == "exact":
        if s > 20:
            raise ValueError("exact enumeration is limited to s <= 20")
        terms = [
            set_weight(params, u) ** lam * two_zeta ** len(u)
            for size in range(1, s + 1)
            for u in itertools.combinations(range(1, s + 1), size)
        ]
        return math.fsum(terms)
    if mode != "spod":
        raise ValueError("mode must be 'spod' or 'exact'")
    width = alpha * s + 1
    poly = np.zeros(width)
    poly[0] = 1.0
    for j in range(1, s + 1):
        new = poly.copy()
        for m in range(1, alpha + 1):
            g = params.gamma_jm[j - 1, m - 1]
            if g > 0.0:
                new[m:] += g**lam * two_zeta * poly[:-m]
        poly = new
    return math.fsum(params.order_factor[1:width] ** lam * poly[1:])


def cbc_error_bound(params: SpodWeightParams, lam: float, n: int, s: int | None = None) -> float:
    """(C(lambda, s)/(n-1))^(1/lambda), the guaranteed e^2 bound of the CBC rule."""
    return (error_bound_constant(params, lam, s) / (n - 1)) ** (1.0 / lam)


def write_generating_vector(path, rule: LatticeRule, alpha: int) -> None:
    lines = [f"{rule.n} {rule.s} {alpha}"] + [str(zj) for zj in rule.z]
    Path(path).write_text("\n".join(lines) + "\n")


def read_generating_vector(path) -> tuple[LatticeRule, int]:
    tokens = Path(path).read_text().split("\n")
    header = tokens[0].split()
    if len(header) != 3:
        raise ValueError("header must read 'n s alpha'")
    n, s, alpha = (int(t) for t in header)
    body = [t.strip() for t in tokens[1:] if t.strip()]
    if len(body) != s:
        raise ValueError(f"expected {s} generating vector entries, found {len(body)}")
    if alpha not in SUPPORTED_ALPHA:
        raise UnsupportedAlpha(f"alpha {alpha} not supported")
    return LatticeRule(n, tuple(int(t) for t in body)), alpha


def write_cbc_csv(path, rule: LatticeRule) -> None:
    rows = ["j,z_j,e2_after_j"]
    for j, (zj, e2) in enumerate(zip(rule.z, rule.e2_history), start=1):
        rows.append(f"{j},{zj},{e2!r}")
    Path(path).write_text("\n".join(rows) + "\n")
