"""P1 finite elements on the unit square and its random images.

Solves are batched: a block of parameter samples shares one sparsity pattern,
its element matrices are scattered into a block-diagonal CSR matrix, and a
Jacobi-preconditioned conjugate gradient runs on all blocks at once. Each
sample's iterates depend only on its own block, so results do not depend on
how samples are grouped.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElement, MeshMismatch, SolverDivergence
from .random_field import FieldSpec, default_source, displacement, jacobian, transport_matrix

CG_TOL = 1e-10
DEFAULT_BATCH = 128


class BoundaryTag(enum.IntFlag):
    INTERIOR = 0
    BOTTOM = 1
    TOP = 2
    LEFT = 4
    RIGHT = 8


class BcKind(enum.Enum):
    DIRICHLET_ZERO = "dirichlet_zero"
    CAPACITY_PRIMAL = "capacity_primal"
    CAPACITY_CONJUGATE = "capacity_conjugate"


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (N, 2)
    triangles: np.ndarray  # (T, 3), counterclockwise
    boundary_tags: np.ndarray  # (N,) int flags
    h: float
    m: int

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def tagged(self, tags: BoundaryTag) -> np.ndarray:
        return (self.boundary_tags & int(tags)) != 0

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed triangle areas; ``vertices`` may carry a leading batch axis."""
    p = vertices[..., triangles, :]
    d1 = p[..., 1, :] - p[..., 0, :]
    d2 = p[..., 2, :] - p[..., 0, :]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def structured_mesh(m: int) -> Mesh:
    """(m+1)^2 vertices, 2 m^2 triangles, every cell cut along its (0,0)-(1,1) diagonal."""
    if m < 2:
        raise ValueError("m must be >= 2")
    t = np.arange(m + 1) / m
    x1, x2 = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([x1.ravel(), x2.ravel()])
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    v00 = (i + j * (m + 1)).ravel()
    v10, v01 = v00 + 1, v00 + m + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    idx = np.arange(m + 1)
    col, row = np.meshgrid(idx, idx, indexing="xy")
    col, row = col.ravel(), row.ravel()
    tags = np.zeros(len(vertices), dtype=np.int64)
    tags[row == 0] |= BoundaryTag.BOTTOM
    tags[row == m] |= BoundaryTag.TOP
    tags[col == 0] |= BoundaryTag.LEFT
    tags[col == m] |= BoundaryTag.RIGHT
    return Mesh(vertices, triangles, tags, 1.0 / m, m)


@dataclass(frozen=True, eq=False)
class MappedMesh:
    base: Mesh
    mapped_vertices: np.ndarray
    y: tuple[float, ...] | None = None

    def areas(self) -> np.ndarray:
        return signed_areas(self.mapped_vertices, self.base.triangles)


def _check_areas(areas: np.ndarray, offset: int = 0, ys: np.ndarray | None = None) -> None:
    """Raise DegenerateElement for the worst non-positive triangle in a (B, T) area block."""
    areas = np.atleast_2d(areas)
    if np.all(areas > 0.0):
        return
    b, t = np.unravel_index(int(np.argmin(areas)), areas.shape)
    y = None if ys is None else np.atleast_2d(ys)[b].copy()
    raise DegenerateElement(
        f"mapped triangle {t} has signed area {areas[b, t]:.3e} (sample {offset + b})",
        triangle=int(t),
        area=float(areas[b, t]),
        sample_index=int(offset + b),
        y=y,
    )


def mapped_from_vertices(mesh: Mesh, vertices, y=None) -> MappedMesh:
    vertices = np.asarray(vertices, dtype=float)
    if vertices.shape != mesh.vertices.shape:
        raise MeshMismatch("mapped vertex array does not match the base mesh")
    _check_areas(signed_areas(vertices, mesh.triangles))
    return MappedMesh(mesh, vertices, None if y is None else tuple(float(v) for v in y))


def map_mesh(mesh: Mesh, spec: FieldSpec, y) -> MappedMesh:
    """Move every vertex by V(., y) and verify all images keep positive orientation."""
    y = np.asarray(y, dtype=float)
    return mapped_from_vertices(mesh, displacement(spec, mesh.vertices, y), y)


def map_vertices_batch(mesh: Mesh, spec: FieldSpec, ys, offset: int = 0) -> np.ndarray:
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    verts = displacement(spec, mesh.vertices, ys)
    if verts.ndim == 2:
        verts = verts[None]
    _check_areas(signed_areas(verts, mesh.triangles), offset, ys)
    return verts


@dataclass(frozen=True, eq=False)
class FemSolution:
    nodal_values: np.ndarray
    mesh: MappedMesh
    bc_kind: BcKind


# element kernels ------------------------------------------------------------


def _element_geometry(verts: np.ndarray, triangles: np.ndarray):
    """Gradients of the barycentric functions (B, T, 3, 2) and areas (B, T)."""
    p = verts[:, triangles, :]
    edges = np.stack([p[:, :, 2] - p[:, :, 1], p[:, :, 0] - p[:, :, 2], p[:, :, 1] - p[:, :, 0]], axis=2)
    area = signed_areas(verts, triangles)
    grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / (2.0 * area)[..., None, None]
    return grads, area


def _element_stiffness(grads: np.ndarray, area: np.ndarray, coeff: np.ndarray | None = None) -> np.ndarray:
    if coeff is None:
        k = grads @ np.swapaxes(grads, -1, -2)
    else:
        k = grads @ coeff @ np.swapaxes(grads, -1, -2)
    return k * area[..., None, None]


def _element_load(verts: np.ndarray, triangles: np.ndarray, area: np.ndarray, f, quadrature: str) -> np.ndarray:
    p = verts[:, triangles, :]
    if quadrature == "centroid":
        val = f(p.mean(axis=2))
        return np.repeat((val * area / 3.0)[..., None], 3, axis=-1)
    if quadrature == "midpoint":
        # midpoint of the edge opposite vertex i has phi_i = 0 and phi_k = 1/2 elsewhere
        mids = 0.5 * (p[:, :, [1, 2, 0]] + p[:, :, [2, 0, 1]])
        fm = f(mids)
        total = fm.sum(axis=-1, keepdims=True)
        return (total - fm) * (area / 6.0)[..., None]
    raise ValueError("quadrature must be 'centroid' or 'midpoint'")


class _Assembler:
    """Sparsity pattern on the free nodes and the scatter maps into it."""

    def __init__(self, mesh: Mesh, dirichlet: np.ndarray):
        self.mesh = mesh
        self.dirichlet = dirichlet
        self.free = np.flatnonzero(~dirichlet)
        self.nf = len(self.free)
        g2f = np.full(mesh.num_vertices, -1, dtype=np.int64)
        g2f[self.free] = np.arange(self.nf)
        tri = mesh.triangles
        rows = np.broadcast_to(tri[:, :, None], tri.shape + (3,)).ravel()
        cols = np.broadcast_to(tri[:, None, :], tri.shape + (3,)).ravel()
        r, c = g2f[rows], g2f[cols]
        self.ff = (r >= 0) & (c >= 0)
        keys = r[self.ff] * self.nf + c[self.ff]
        uniq, self.scatter = np.unique(keys, return_inverse=True)
        self.nnz = len(uniq)
        self.indices = uniq % self.nf
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // self.nf, minlength=self.nf))])
        self.diag_pos = np.flatnonzero(self.indices == np.repeat(np.arange(self.nf), np.diff(self.indptr)))
        self.fd = (r >= 0) & (c < 0)
        self.lift_rows = r[self.fd]
        self.lift_cols = cols[self.fd]
        self.load_rows = g2f[tri.ravel()]
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _block_structure(self, batch: int):
        hit = self._cache.get(batch)
        if hit is None:
            b = np.arange(batch)
            indices = (self.indices[None, :] + (b * self.nf)[:, None]).ravel()
            indptr = np.concatenate([(self.indptr[:-1][None, :] + (b * self.nnz)[:, None]).ravel(), [batch * self.nnz]])
            hit = self._cache[batch] = (indices, indptr)
        return hit

    def _scatter(self, flat_vals: np.ndarray, index: np.ndarray, size: int) -> np.ndarray:
        batch = flat_vals.shape[0]
        offs = (np.arange(batch) * size)[:, None]
        out = np.bincount((index[None, :] + offs).ravel(), weights=flat_vals.ravel(), minlength=batch * size)
        return out.reshape(batch, size)

    def system(self, kel: np.ndarray, fel: np.ndarray | None, boundary_values: np.ndarray | None):
        """Block-diagonal matrix, Jacobi diagonal and right-hand side on the free nodes."""
        batch = kel.shape[0]
        flat = kel.reshape(batch, -1)
        data = self._scatter(flat[:, self.ff], self.scatter, self.nnz)
        rhs = np.zeros((batch, self.nf))
        if fel is not None:
            loads = fel.reshape(batch, -1)
            keep = self.load_rows >= 0
            rhs += self._scatter(loads[:, keep], self.load_rows[keep], self.nf)
        if boundary_values is not None:
            lift = flat[:, self.fd] * boundary_values[self.lift_cols][None, :]
            rhs -= self._scatter(lift, self.lift_rows, self.nf)
        indices, indptr = self._block_structure(batch)
        n = batch * self.nf
        mat = sp.csr_matrix((data.ravel(), indices, indptr), shape=(n, n))
        return mat, data[:, self.diag_pos], rhs


def batched_pcg(mat, diag: np.ndarray, rhs: np.ndarray, tol: float = CG_TOL, max_iter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned CG on a block-diagonal system, one block per row of ``rhs``.

    Each block stops once ||r|| <= tol ||rhs||; its iterate is then frozen.
    """
    batch, nf = rhs.shape
    max_iter = 10 * nf if max_iter is None else max_iter
    x = np.zeros_like(rhs)
    r = rhs.copy()
    target = tol * np.sqrt((rhs * rhs).sum(axis=1))
    active = np.sqrt((r * r).sum(axis=1)) > target
    z = r / diag
    p = z.copy()
    rz = (r * z).sum(axis=1)
    it = 0
    while active.any():
        if it >= max_iter:
            worst = float(np.max(np.sqrt((r * r).sum(axis=1)) / np.where(target > 0, target / tol, 1.0)))
            raise SolverDivergence(f"CG did not reach relative residual {tol} in {max_iter} iterations (at {worst:.2e})")
        ap = (mat @ p.ravel()).reshape(batch, nf)
        pap = (p * ap).sum(axis=1)
        step = np.where(active, rz / np.where(active, pap, 1.0), 0.0)
        x += step[:, None] * p
        r -= step[:, None] * ap
        active &= np.sqrt((r * r).sum(axis=1)) > target
        z = r / diag
        rz_new = (r * z).sum(axis=1)
        beta = np.where(active, rz_new / np.where(active, rz, 1.0), 0.0)
        p = z + beta[:, None] * p
        rz = rz_new
        it += 1
    return x


_ASSEMBLERS: dict[tuple[int, int], _Assembler] = {}


def _assembler(mesh: Mesh, tags: BoundaryTag) -> _Assembler:
    key = (id(mesh), int(tags))
    hit = _ASSEMBLERS.get(key)
    if hit is None or hit.mesh is not mesh:
        hit = _ASSEMBLERS[key] = _Assembler(mesh, mesh.tagged(tags))
    return hit


_ALL_SIDES = BoundaryTag.BOTTOM | BoundaryTag.TOP | BoundaryTag.LEFT | BoundaryTag.RIGHT


def _solve_dirichlet(asm: _Assembler, kel, fel, boundary_values, tol) -> np.ndarray:
    mat, diag, rhs = asm.system(kel, fel, boundary_values)
    xf = batched_pcg(mat, diag, rhs, tol)
    out = np.zeros((kel.shape[0], asm.mesh.num_vertices))
    if boundary_values is not None:
        out[:] = np.where(asm.dirichlet, boundary_values, 0.0)
    out[:, asm.free] = xf
    return out


def _source_block(mesh: Mesh, verts: np.ndarray, f, quadrature: str, tol: float) -> np.ndarray:
    grads, area = _element_geometry(verts, mesh.triangles)
    kel = _element_stiffness(grads, area)
    fel = _element_load(verts, mesh.triangles, area, f, quadrature)
    return _solve_dirichlet(_assembler(mesh, _ALL_SIDES), kel, fel, None, tol)


def _energy(kel: np.ndarray, u: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    ut = u[:, triangles]
    per_tri = np.einsum("bti,btij,btj->bt", ut, kel, ut)
    return np.array([math.fsum(row) for row in per_tri])


def _capacity_block(mesh: Mesh, verts: np.ndarray, tol: float):
    grads, area = _element_geometry(verts, mesh.triangles)
    kel = _element_stiffness(grads, area)
    primal_bc = np.where(mesh.tagged(BoundaryTag.TOP), 1.0, 0.0)
    conj_bc = np.where(mesh.tagged(BoundaryTag.RIGHT), 1.0, 0.0)
    # corners on TOP|LEFT etc. take the value of the side that is Dirichlet for each problem
    u = _solve_dirichlet(_assembler(mesh, BoundaryTag.BOTTOM | BoundaryTag.TOP), kel, None, primal_bc, tol)
    v = _solve_dirichlet(_assembler(mesh, BoundaryTag.LEFT | BoundaryTag.RIGHT), kel, None, conj_bc, tol)
    return u, v, _energy(kel, u, mesh.triangles), _energy(kel, v, mesh.triangles)


# single-sample interface ----------------------------------------------------


def solve_source(mapped: MappedMesh, f=default_source, quadrature: str = "centroid", tol: float = CG_TOL) -> FemSolution:
    """P1 solution of -Lap u = f on the mapped geometry, u = 0 on the whole boundary."""
    values = _source_block(mapped.base, mapped.mapped_vertices[None], f, quadrature, tol)[0]
    return FemSolution(values, mapped, BcKind.DIRICHLET_ZERO)


def solve_capacity_pair(mapped: MappedMesh, tol: float = CG_TOL):
    """Capacity problem (0 bottom, 1 top) and its conjugate (0 left, 1 right); returns (u, v, cap, cap_conj)."""
    u, v, cap, cap_conj = _capacity_block(mapped.base, mapped.mapped_vertices[None], tol)
    return (
        FemSolution(u[0], mapped, BcKind.CAPACITY_PRIMAL),
        FemSolution(v[0], mapped, BcKind.CAPACITY_CONJUGATE),
        float(cap[0]),
        float(cap_conj[0]),
    )


def solve_source_reference(
    mesh: Mesh,
    spec: FieldSpec,
    y,
    f=default_source,
    jacobian_mode: str = "element",
    tol: float = CG_TOL,
) -> np.ndarray:
    """Solve the transported problem -div(A grad u) = f_ref on the reference mesh.

    ``jacobian_mode="element"`` uses the Jacobian of the piecewise-affine
    vertex interpolant of V on each triangle, which reproduces the mapped-mesh
    discretization. ``"analytic"`` evaluates J(x, y) at reference centroids.
    """
    y = np.asarray(y, dtype=float)
    ref = mesh.vertices[None]
    grads, area = _element_geometry(ref, mesh.triangles)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    if jacobian_mode == "element":
        mapped = displacement(spec, mesh.vertices, y)[mesh.triangles]
        jac = np.einsum("tik,tij->tkj", mapped, grads[0])
        image = mapped.mean(axis=1)
    elif jacobian_mode == "analytic":
        jac = jacobian(spec, centroids, y)
        image = displacement(spec, centroids, y)
    else:
        raise ValueError("jacobian_mode must be 'element' or 'analytic'")
    coeff, det = transport_matrix(jac)
    if np.any(det <= 0.0):
        _check_areas(det[None] * area)
    kel = _element_stiffness(grads, area, coeff[None])
    fval = f(image) * det
    fel = np.repeat((fval * area[0] / 3.0)[None, :, None], 3, axis=-1)
    return _solve_dirichlet(_assembler(mesh, _ALL_SIDES), kel, fel, None, tol)[0]


# batched interface ----------------------------------------------------------


def _chunks(count: int, batch_size: int):
    return [(start, min(start + batch_size, count)) for start in range(0, count, batch_size)]


def _run_chunks(fn, count: int, batch_size: int, threads: int):
    chunks = _chunks(count, batch_size)
    if threads <= 1 or len(chunks) == 1:
        return [fn(a, b) for a, b in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), chunks))


def solve_source_batch(
    mesh: Mesh,
    spec: FieldSpec,
    ys,
    f=default_source,
    quadrature: str = "centroid",
    tol: float = CG_TOL,
    batch_size: int = DEFAULT_BATCH,
    threads: int = 1,
    offset: int = 0,
) -> np.ndarray:
    """Reference-node values of the source solution for every row of ``ys``, shape (B, N)."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))

    def work(a, b):
        verts = map_vertices_batch(mesh, spec, ys[a:b], offset + a)
        return _source_block(mesh, verts, f, quadrature, tol)

    parts = _run_chunks(work, len(ys), batch_size, threads)
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, mesh.num_vertices))


def grad_norms_batch(mesh: Mesh, spec: FieldSpec, ys, values: np.ndarray, domain: str = "mapped") -> np.ndarray:
    """||grad u_h|| for each sample, on the mapped geometry or on the reference square."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if domain == "mapped":
        verts = displacement(spec, mesh.vertices, ys)
        if verts.ndim == 2:
            verts = verts[None]
    elif domain == "reference":
        verts = np.broadcast_to(mesh.vertices, (len(ys),) + mesh.vertices.shape)
    else:
        raise ValueError("domain must be 'mapped' or 'reference'")
    grads, area = _element_geometry(verts, mesh.triangles)
    return np.sqrt(_energy(_element_stiffness(grads, area), values, mesh.triangles))


def solve_capacity_batch(
    mesh: Mesh,
    spec: FieldSpec,
    ys,
    tol: float = CG_TOL,
    batch_size: int = DEFAULT_BATCH,
    threads: int = 1,
    offset: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """(cap, cap_conj) for every row of ``ys``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))

    def work(a, b):
        verts = map_vertices_batch(mesh, spec, ys[a:b], offset + a)
        _, _, cap, conj = _capacity_block(mesh, verts, tol)
        return cap, conj

    parts = _run_chunks(work, len(ys), batch_size, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# post-processing ------------------------------------------------------------


def _values(sol) -> np.ndarray:
    return sol.nodal_values if isinstance(sol, FemSolution) else np.asarray(sol, dtype=float)


def qoi_mean_field(solutions, base: Mesh) -> np.ndarray:
    """Equal-weight nodal average, correctly rounded per node (order independent)."""
    if not solutions:
        raise ValueError("no solutions to average")
    for sol in solutions:
        if isinstance(sol, FemSolution) and sol.mesh.base is not base:
            raise MeshMismatch("solution lives on a different base mesh")
        if _values(sol).shape != (base.num_vertices,):
            raise MeshMismatch("nodal vector length does not match the base mesh")
    stack = np.stack([_values(s) for s in solutions])
    return np.array([math.fsum(col) for col in stack.T]) / len(solutions)


def qoi_grad_norm(sol: FemSolution, domain: str = "mapped") -> float:
    """||grad u_h||_{L^2}; ``domain="reference"`` uses the pulled-back nodal function on the square."""
    geom = sol.mesh.mapped_vertices if domain == "mapped" else sol.mesh.base.vertices
    if domain not in ("mapped", "reference"):
        raise ValueError("domain must be 'mapped' or 'reference'")
    grads, area = _element_geometry(geom[None], sol.mesh.base.triangles)
    return float(np.sqrt(_energy(_element_stiffness(grads, area), sol.nodal_values[None], sol.mesh.base.triangles)[0]))


@dataclass(frozen=True)
class Norms:
    l1: float
    l2: float
    h1_semi: float


def _positive_part_integral(a, b, c, area):
    """Exact integral of max(u, 0) for the P1 function with vertex values a, b, c."""
    vals = np.sort(np.stack([a, b, c], axis=-1), axis=-1)[..., ::-1]
    hi, mid, lo = vals[..., 0], vals[..., 1], vals[..., 2]
    mean = (hi + mid + lo) / 3.0
    npos = (vals > 0).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        one = hi**3 / (3.0 * (hi - mid) * (hi - lo))
        neg_one = (-lo) ** 3 / (3.0 * (hi - lo) * (mid - lo))
    out = np.where(npos == 3, mean, 0.0)
    out = np.where(npos == 1, np.nan_to_num(one), out)
    out = np.where(npos == 2, mean + np.nan_to_num(neg_one), out)
    return out * area


def norms(sol, mesh) -> Norms:
    """L^1, L^2 and H^1-seminorm of a nodal P1 function on ``mesh`` (Mesh or MappedMesh)."""
    if isinstance(mesh, MappedMesh):
        verts, tri = mesh.mapped_vertices, mesh.base.triangles
    else:
        verts, tri = mesh.vertices, mesh.triangles
    u = _values(sol)
    if u.shape != (verts.shape[0],):
        raise MeshMismatch("nodal vector length does not match the mesh")
    area = signed_areas(verts, tri)
    a, b, c = u[tri[:, 0]], u[tri[:, 1]], u[tri[:, 2]]
    pos = _positive_part_integral(a, b, c, area)
    neg = _positive_part_integral(-a, -b, -c, area)
    l1 = math.fsum(pos) + math.fsum(neg)
    l2sq = math.fsum(area / 6.0 * (a * a + b * b + c * c + a * b + b * c + c * a))
    grads, _ = _element_geometry(verts[None], tri)
    h1sq = _energy(_element_stiffness(grads, area[None]), u[None], tri)[0]
    return Norms(l1, math.sqrt(max(l2sq, 0.0)), math.sqrt(max(h1sq, 0.0)))


# degree-5 seven-point rule on the reference triangle (barycentric coordinates, weights sum to 1)
_A1, _B1, _W1 = 0.059715871789770, 0.470142064105115, 0.132394152788506
_A2, _B2, _W2 = 0.797426985353087, 0.101286507323456, 0.125939180544827
_QUAD_BARY = np.array(
    [[1 / 3, 1 / 3, 1 / 3], [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1], [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]]
)
_QUAD_W = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])


def error_norms(values, mesh: Mesh, exact, exact_grad) -> tuple[float, float]:
    """L^2 and H^1-seminorm of u_h - u by a degree-5 quadrature on every triangle."""
    u = _values(values)
    tri = mesh.triangles
    p = mesh.vertices[tri]  # (T, 3, 2)
    pts = np.einsum("qi,tik->tqk", _QUAD_BARY, p)
    uh = np.einsum("qi,ti->tq", _QUAD_BARY, u[tri])
    grads, area = _element_geometry(mesh.vertices[None], tri)
    guh = np.einsum("ti,tik->tk", u[tri], grads[0])
    diff = uh - exact(pts)
    gdiff = guh[:, None, :] - exact_grad(pts)
    l2sq = math.fsum((diff**2 @ _QUAD_W) * area[0])
    h1sq = math.fsum(((gdiff**2).sum(axis=-1) @ _QUAD_W) * area[0])
    return math.sqrt(l2sq), math.sqrt(h1sq)


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    tri = mesh.triangles
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    vals = mesh.areas()[:, None, None] * local[None]
    rows = np.broadcast_to(tri[:, :, None], vals.shape).ravel()
    cols = np.broadcast_to(tri[:, None, :], vals.shape).ravel()
    n = mesh.num_vertices
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh) -> sp.csr_matrix:
    """Full (unconstrained) P1 stiffness matrix of a Mesh or MappedMesh."""
    if isinstance(mesh, MappedMesh):
        verts, tri = mesh.mapped_vertices, mesh.base.triangles
    else:
        verts, tri = mesh.vertices, mesh.triangles
    grads, area = _element_geometry(verts[None], tri)
    kel = _element_stiffness(grads, area)[0]
    rows = np.broadcast_to(tri[:, :, None], kel.shape).ravel()
    cols = np.broadcast_to(tri[:, None, :], kel.shape).ravel()
    n = verts.shape[0]
    return sp.csr_matrix((kel.ravel(), (rows, cols)), shape=(n, n))


def load_vector(mapped: MappedMesh, f=default_source, quadrature: str = "centroid") -> np.ndarray:
    verts = mapped.mapped_vertices[None]
    tri = mapped.base.triangles
    fel = _element_load(verts, tri, signed_areas(verts, tri), f, quadrature)[0]
    return np.bincount(tri.ravel(), weights=fel.ravel(), minlength=verts.shape[1])


def prolongate(values, coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Interpolate a P1 function on a structured mesh at the vertices of a refinement."""
    if fine.m % coarse.m:
        raise MeshMismatch("fine mesh is not a refinement of the coarse mesh")
    u = np.asarray(values, dtype=float)
    m = coarse.m
    x = fine.vertices * m
    i = np.minimum(np.floor(x[:, 0]).astype(np.int64), m - 1)
    j = np.minimum(np.floor(x[:, 1]).astype(np.int64), m - 1)
    xi, eta = x[:, 0] - i, x[:, 1] - j
    v00 = i + j * (m + 1)
    u00, u10, u01, u11 = u[v00], u[v00 + 1], u[v00 + m + 1], u[v00 + m + 2]
    lower = u00 + xi * (u10 - u00) + eta * (u11 - u10)
    upper = u00 + eta * (u01 - u00) + xi * (u11 - u01)
    return np.where(xi >= eta, lower, upper)


def write_nodal_csv(path, mesh: Mesh, values) -> None:
    u = _values(values)
    lines = ["x1,x2,value"] + [f"{p[0]!r},{p[1]!r},{v!r}" for p, v in zip(mesh.vertices.tolist(), u.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def write_mesh_csv(prefix, mesh: Mesh) -> tuple[Path, Path]:
    prefix = Path(prefix)
    vpath = prefix.with_name(prefix.name + "_vertices.csv")
    tpath = prefix.with_name(prefix.name + "_triangles.csv")
    vpath.write_text("x1,x2,tag\n" + "".join(f"{p[0]!r},{p[1]!r},{int(t)}\n" for p, t in zip(mesh.vertices.tolist(), mesh.boundary_tags)))
    tpath.write_text("v0,v1,v2\n" + "".join(f"{a},{b},{c}\n" for a, b, c in mesh.triangles.tolist()))
    return vpath, tpath
