"""Periodic random perturbation field and the transported PDE data.

The domain is parameterized as

    V(x, y) = x + 1/sqrt(6) * sum_j sin(2 pi y_j) psi_j(x),

and the Poisson problem on V(D_ref, y) is pulled back onto D_ref = [0, 1]^2
with the coefficient A = (J^T J)^{-1} det J and source f(V) det J.

All evaluators accept a single point of shape ``(2,)`` or a stack ``(N, 2)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import NonPositiveJacobian, ThetaTooSmall

INV_SQRT6 = 1.0 / math.sqrt(6.0)
ZETA_TERMS = 10**6


class Family(enum.Enum):
    COSINE_VERTICAL = "COSINE_VERTICAL"
    CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class CustomFluctuations:
    """Caller-supplied fluctuations.

    ``psi(j, x)`` returns shape ``(N, 2)``, ``dpsi(j, x)`` returns the Jacobians
    with shape ``(N, 2, 2)`` (row = output component), and ``b`` holds b_1..b_s.
    """

    psi: Callable[[int, np.ndarray], np.ndarray]
    dpsi: Callable[[int, np.ndarray], np.ndarray]
    b: tuple[float, ...]


@dataclass(frozen=True)
class FieldSpec:
    theta: float
    amplitude: float
    s: int
    family: Family = Family.COSINE_VERTICAL
    custom: CustomFluctuations | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.theta > 1.0:
            raise ThetaTooSmall(f"theta must be > 1, got {self.theta}")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.family is Family.CUSTOM and self.custom is None:
            raise ValueError("CUSTOM family needs a CustomFluctuations object")

    def with_s(self, s: int) -> FieldSpec:
        return FieldSpec(self.theta, self.amplitude, s, self.family, self.custom)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "c": self.amplitude, "s": self.s, "family": self.family.value}

    @classmethod
    def from_dict(cls, d: dict) -> FieldSpec:
        unknown = set(d) - {"theta", "c", "s", "family"}
        if unknown:
            raise ValueError(f"unknown field keys: {sorted(unknown)}")
        family = Family(d.get("family", "COSINE_VERTICAL"))
        if family is Family.CUSTOM:
            raise ValueError("CUSTOM fields cannot be loaded from JSON")
        return cls(float(d["theta"]), float(d["c"]), int(d["s"]), family)


@dataclass(frozen=True)
class BSequence:
    b: tuple[float, ...]
    xi_b: float


@dataclass(frozen=True)
class SigmaBounds:
    sigma_min: float
    sigma_max: float
    near_degenerate: bool
    det_positive: bool


def default_source(x: np.ndarray) -> np.ndarray:
    """f(x) = x_2."""
    return np.asarray(x, dtype=float)[..., 1]


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _as_samples(y, s: int) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] > s:
        raise ValueError(f"parameter vector has {y.shape[1]} entries but the field has s = {s}")
    return y, single


def fluctuation_values(spec: FieldSpec, x: np.ndarray, nterms: int) -> tuple[np.ndarray, np.ndarray]:
    """psi_j(x) and psi_j'(x) for j = 1..nterms; shapes (nterms, N, 2) and (nterms, N, 2, 2)."""
    npts = x.shape[0]
    psi = np.zeros((nterms, npts, 2))
    dpsi = np.zeros((nterms, npts, 2, 2))
    if nterms == 0:
        return psi, dpsi
    if spec.family is Family.COSINE_VERTICAL:
        j = np.arange(1, nterms + 1, dtype=float)[:, None]
        scale = spec.amplitude * j ** (-spec.theta)
        arg = j * math.pi * x[None, :, 0]
        cos, sin = np.cos(arg), np.sin(arg)
        x2 = x[None, :, 1]
        psi[:, :, 1] = scale * x2 * cos
        dpsi[:, :, 1, 0] = -scale * j * math.pi * x2 * sin
        dpsi[:, :, 1, 1] = scale * cos
    else:
        for j in range(1, nterms + 1):
            psi[j - 1] = spec.custom.psi(j, x)
            dpsi[j - 1] = spec.custom.dpsi(j, x)
    return psi, dpsi


def _weights(y: np.ndarray) -> np.ndarray:
    return INV_SQRT6 * np.sin(2.0 * math.pi * y)


def displacement(spec: FieldSpec, x, y) -> np.ndarray:
    """V(x, y). ``y`` may be shorter than ``spec.s``; missing entries act as 0."""
    pts, single_x = _as_points(x)
    ys, single_y = _as_samples(y, spec.s)
    if spec.family is Family.COSINE_VERTICAL:
        # only x_2 moves: V = (x_1, x_2 a(x_1, y))
        out = np.broadcast_to(pts, (ys.shape[0],) + pts.shape).copy()
        out[..., 1] *= _height(spec, pts[:, 0], ys)
    else:
        psi, _ = fluctuation_values(spec, pts, ys.shape[1])
        out = pts[None] + np.einsum("bj,jnk->bnk", _weights(ys), psi)
    if single_y:
        out = out[0]
        return out[0] if single_x else out
    return out[:, 0] if single_x else out


def jacobian(spec: FieldSpec, x, y) -> np.ndarray:
    """J(x, y) = I + 1/sqrt(6) sum_j sin(2 pi y_j) psi_j'(x)."""
    pts, single_x = _as_points(x)
    ys, single_y = _as_samples(y, spec.s)
    _, dpsi = fluctuation_values(spec, pts, ys.shape[1])
    out = np.eye(2) + np.einsum("bj,jnkl->bnkl", _weights(ys), dpsi)
    if single_y:
        out = out[0]
        return out[0] if single_x else out
    return out[:, 0] if single_x else out


def top_boundary_height(spec: FieldSpec, x1, y) -> np.ndarray:
    """a(x_1, y) = 1 + c/sqrt(6) sum_j sin(2 pi y_j) j^-theta cos(j pi x_1)."""
    if spec.family is not Family.COSINE_VERTICAL:
        raise ValueError("the top-boundary height is only defined for COSINE_VERTICAL")
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    ys, _ = _as_samples(y, spec.s)
    out = _height(spec, x1, ys)
    return out[0] if np.ndim(y) == 1 else out


def _height(spec: FieldSpec, x1: np.ndarray, ys: np.ndarray) -> np.ndarray:
    j = np.arange(1, ys.shape[1] + 1, dtype=float)
    coeff = spec.amplitude * j ** (-spec.theta)
    basis = np.cos(np.outer(j, math.pi * x1)) * coeff[:, None]
    return 1.0 + _weights(ys) @ basis


def transport_matrix(jac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A = (J^T J)^{-1} det J and det J for a stack of 2x2 Jacobians."""
    jac = np.asarray(jac, dtype=float)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    b = np.swapaxes(jac, -1, -2) @ jac
    det_b = b[..., 0, 0] * b[..., 1, 1] - b[..., 0, 1] * b[..., 1, 0]
    adj = np.empty_like(b)
    adj[..., 0, 0] = b[..., 1, 1]
    adj[..., 1, 1] = b[..., 0, 0]
    adj[..., 0, 1] = -b[..., 0, 1]
    adj[..., 1, 0] = -b[..., 1, 0]
    a = adj * (det / det_b)[..., None, None]
    return a, det


def verification_grid(resolution: int = 33) -> np.ndarray:
    t = np.linspace(0.0, 1.0, resolution)
    g1, g2 = np.meshgrid(t, t, indexing="xy")
    return np.column_stack([g1.ravel(), g2.ravel()])


@dataclass(frozen=True)
class TransportData:
    """Transported coefficient and source for one parameter vector ``y``."""

    spec: FieldSpec
    y: tuple[float, ...]
    source: Callable[[np.ndarray], np.ndarray] = field(default=default_source, compare=False)

    def _jac(self, x):
        return jacobian(self.spec, x, np.asarray(self.y))

    def a_matrix(self, x) -> np.ndarray:
        return transport_matrix(self._jac(x))[0]

    def b_matrix(self, x) -> np.ndarray:
        jac = self._jac(x)
        return np.swapaxes(jac, -1, -2) @ jac

    def det_j(self, x) -> np.ndarray:
        return transport_matrix(self._jac(x))[1]

    def f_ref(self, x) -> np.ndarray:
        mapped = displacement(self.spec, x, np.asarray(self.y))
        return self.source(mapped) * self.det_j(x)


def transport_data(spec: FieldSpec, y, source=default_source, grid_resolution: int = 33) -> TransportData:
    """Build the transported data after checking det J > 0 on a verification grid."""
    y = np.asarray(y, dtype=float)
    grid = verification_grid(grid_resolution)
    det = transport_matrix(jacobian(spec, grid, y))[1]
    worst = int(np.argmin(det))
    if det[worst] <= 0.0:
        raise NonPositiveJacobian(
            f"det J = {det[worst]:.3e} <= 0 at x = {grid[worst].tolist()}",
            point=grid[worst],
            value=float(det[worst]),
        )
    return TransportData(spec, tuple(float(v) for v in y), source)


@lru_cache(maxsize=64)
def zeta(s: float, terms: int = ZETA_TERMS) -> float:
    """Riemann zeta for s > 1: direct sum of ``terms`` terms plus Euler-Maclaurin tail."""
    if not s > 1.0:
        raise ThetaTooSmall(f"zeta({s}) diverges")
    k = np.arange(1, terms + 1, dtype=float)
    head = math.fsum(k ** (-s))
    n = float(terms)
    # sum_{k>N} k^-s = N^{1-s}/(s-1) - N^-s/2 + s N^{-s-1}/12 - s(s+1)(s+2) N^{-s-3}/720 + ...
    tail = (
        n ** (1.0 - s) / (s - 1.0)
        - 0.5 * n ** (-s)
        + s * n ** (-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n ** (-s - 3.0) / 720.0
    )
    return head + tail


def b_sequence(spec: FieldSpec) -> BSequence:
    """b_j = ||psi_j||_{W^{1,inf}}/sqrt(6) for j <= s and xi_b = sum over all j."""
    if spec.family is Family.CUSTOM:
        b = tuple(float(v) for v in spec.custom.b)
        return BSequence(b, math.fsum(b))
    if spec.theta <= 2.0:
        raise ThetaTooSmall(f"xi_b = sum_j j^(1-theta) diverges for theta = {spec.theta} <= 2")
    lead = spec.amplitude * math.pi * INV_SQRT6
    b = tuple(lead * j ** (1.0 - spec.theta) for j in range(1, spec.s + 1))
    return BSequence(b, lead * zeta(spec.theta - 1.0))


def low_discrepancy_samples(s: int, count: int) -> np.ndarray:
    """Deterministic Korobov-type lattice points in [0,1)^s (prime count rounded up)."""
    from sympy import nextprime

    n = int(nextprime(max(count, 2) - 1))
    a = max(2, int(round(n**0.5 * 0.618)))
    z = np.array([pow(a, j, n) for j in range(s)], dtype=np.int64)
    i = np.arange(n, dtype=np.int64)[:, None]
    return ((i * z[None, :]) % n) / n


def sigma_bounds(
    spec: FieldSpec,
    grid_resolution: int = 33,
    sample_count: int = 257,
    y_samples: np.ndarray | None = None,
    warn_threshold: float = 0.1,
) -> SigmaBounds:
    """Estimate min/max singular values of J over an x-grid and a set of y samples."""
    grid = verification_grid(grid_resolution)
    if y_samples is None:
        y_samples = low_discrepancy_samples(spec.s, sample_count)
    ys = np.atleast_2d(np.asarray(y_samples, dtype=float))
    _, dpsi = fluctuation_values(spec, grid, ys.shape[1])
    smin, smax, det_ok = math.inf, 0.0, True
    for start in range(0, ys.shape[0], 64):
        w = _weights(ys[start : start + 64])
        jac = np.eye(2) + np.einsum("bj,jnkl->bnkl", w, dpsi)
        sv = np.linalg.svd(jac, compute_uv=False)
        smin = min(smin, float(sv[..., 1].min()))
        smax = max(smax, float(sv[..., 0].max()))
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        det_ok = det_ok and bool(np.all(det > 0))
    return SigmaBounds(smin, smax, smin < warn_threshold, det_ok)


def sup_fluctuation_jacobian_norm(spec: FieldSpec, j: int, resolution: int = 401) -> tuple[float, np.ndarray]:
    """Grid search for sup_x ||psi_j'(x)||_2; returns the value and the maximizer."""
    t = np.linspace(0.0, 1.0, resolution)
    x1 = np.union1d(t, [1.0 / (2 * j)])
    g1, g2 = np.meshgrid(x1, t, indexing="xy")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    _, dpsi = fluctuation_values(spec, pts, j)
    norms = np.linalg.norm(dpsi[j - 1], ord=2, axis=(1, 2))
    k = int(np.argmax(norms))
    return float(norms[k]), pts[k]


def parameter_truncate(y: np.ndarray, s: int) -> np.ndarray:
    """Zero every coordinate beyond the first ``s``."""
    out = np.array(y, dtype=float, copy=True)
    out[..., s:] = 0.0
    return out


__all__ = [
    "BSequence",
    "CustomFluctuations",
    "Family",
    "FieldSpec",
    "SigmaBounds",
    "TransportData",
    "b_sequence",
    "default_source",
    "displacement",
    "jacobian",
    "parameter_truncate",
    "sigma_bounds",
    "top_boundary_height",
    "transport_data",
    "transport_matrix",
    "zeta",
]
