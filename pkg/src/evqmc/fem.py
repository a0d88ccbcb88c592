"""P1 finite elements on the unit interval and the unit square.

Homogeneous Dirichlet conditions are imposed by eliminating boundary nodes,
so every matrix here is indexed by interior nodes only.  Coefficients enter
the stiffness matrix through one-point (element barycenter) quadrature, which
is exact for fields that are constant on each element.

All stiffness matrices built on one mesh share a single CSR sparsity pattern.
That lets an affine family ``A0 + sum_j y_j A_j`` be stored as a stack of data
arrays and combined with a matrix-vector product instead of sparse additions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

DOMAIN_KINDS = ("unit-interval", "unit-square")


@dataclass(frozen=True)
class ScalarField:
    """A real function on D, evaluated on arrays of points of shape (m, d).

    ``support`` optionally records the closed x1-interval outside of which
    the field vanishes.  ``piecewise_constant`` marks fields for which sup
    norms may be taken from ``sup_abs`` instead of sampling.
    """

    func: Callable[[np.ndarray], np.ndarray]
    support: Optional[tuple[float, float]] = None
    sup_abs: Optional[float] = None
    piecewise_constant: bool = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.asarray(self.func(x), dtype=float)
        return np.broadcast_to(out, (x.shape[0],)).copy()

    @classmethod
    def constant(cls, c: float) -> "ScalarField":
        return cls(lambda x: np.full(x.shape[0], float(c)), None, abs(float(c)), True)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform simplicial mesh of the unit interval or unit square."""

    domain_kind: str
    h: float
    n: int
    nodes: np.ndarray
    elements: np.ndarray
    interior: np.ndarray

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_interior(self) -> int:
        return self.interior.size

    @cached_property
    def dof_of_node(self) -> np.ndarray:
        """Map node index -> interior index, or -1 for boundary nodes."""
        dof = np.full(self.nodes.shape[0], -1, dtype=np.int64)
        dof[self.interior] = np.arange(self.interior.size)
        return dof

    @cached_property
    def midpoints(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def interior_coords(self) -> np.ndarray:
        return self.nodes[self.interior]

    @cached_property
    def measures(self) -> np.ndarray:
        p = self.nodes[self.elements]
        if self.dim == 1:
            return p[:, 1, 0] - p[:, 0, 0]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def _assembler(self) -> "_Assembler":
        return _Assembler(self)


def build_mesh(domain_kind: str, h: float) -> Mesh:
    """Uniform mesh with ``1/h`` cells per direction.

    The unit square is split into ``n x n`` cells, each cut into two
    triangles along the diagonal from its lower-left to upper-right corner.
    """
    if domain_kind not in DOMAIN_KINDS:
        raise ValueError(f"unknown domain_kind {domain_kind!r}; expected one of {DOMAIN_KINDS}")
    if not h > 0:
        raise ValueError(f"mesh size must be positive, got {h}")
    n = int(round(1.0 / h))
    if n < 2 or abs(n * h - 1.0) > 1e-12:
        raise ValueError(f"mesh size h={h} is not of the form 1/n with integer n >= 2")
    h = 1.0 / n
    if domain_kind == "unit-interval":
        nodes = (np.arange(n + 1) * h)[:, None]
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        interior = np.arange(1, n)
    else:
        idx = np.arange(n + 1)
        gx, gy = np.meshgrid(idx, idx, indexing="xy")
        nodes = np.column_stack([gx.ravel(), gy.ravel()]).astype(float) * h
        node = lambda i, j: j * (n + 1) + i  # noqa: E731
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        i, j = i.ravel(), j.ravel()
        ll, lr, ul, ur = node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1)
        lower = np.column_stack([ll, lr, ur])
        upper = np.column_stack([ll, ur, ul])
        elements = np.empty((2 * n * n, 3), dtype=np.int64)
        elements[0::2] = lower
        elements[1::2] = upper
        inner = (gx.ravel() > 0) & (gx.ravel() < n) & (gy.ravel() > 0) & (gy.ravel() < n)
        interior = np.flatnonzero(inner)
    return Mesh(domain_kind, h, n, nodes, elements.astype(np.int64), interior.astype(np.int64))


def _local_matrices(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Unit-coefficient local stiffness and exact local mass, shape (E, k, k)."""
    meas = mesh.measures
    if mesh.dim == 1:
        ks = np.array([[1.0, -1.0], [-1.0, 1.0]])
        km = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        return ks[None] / meas[:, None, None], km[None] * meas[:, None, None]
    p = mesh.nodes[mesh.elements]
    mat = np.concatenate([np.ones((p.shape[0], 3, 1)), p], axis=2)
    grads = np.linalg.inv(mat)[:, 1:, :].transpose(0, 2, 1)  # (E, 3 vertices, 2)
    ks = meas[:, None, None] * np.einsum("ead,ebd->eab", grads, grads)
    km = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return ks, km[None] * meas[:, None, None]


class _Assembler:
    """Element-to-CSR scatter maps for one mesh.

    Only the upper triangle (i <= j) is accumulated; the lower triangle is a
    copy, so assembled matrices are symmetric bit for bit.
    """

    def __init__(self, mesh: Mesh):
        n = mesh.n_interior
        dof = mesh.dof_of_node[mesh.elements]  # (E, k)
        k = dof.shape[1]
        ks, km = _local_matrices(mesh)
        a, b = (g.ravel() for g in np.meshgrid(np.arange(k), np.arange(k), indexing="ij"))
        gi = dof[:, a]
        gj = dof[:, b]
        elem = np.broadcast_to(np.arange(dof.shape[0])[:, None], gi.shape)
        keep = (gi >= 0) & (gj >= 0) & (gi <= gj)
        # each unordered local pair appears once after the gi <= gj filter
        rows, cols, el = gi[keep], gj[keep], elem[keep]
        kval = ks[:, a, b][keep]
        mval = km[:, a, b][keep]
        keys, inv = np.unique(rows * n + cols, return_inverse=True)
        n_upper = keys.size
        n_elem = dof.shape[0]
        self.stiff_map = sp.csr_matrix((kval, (inv, el)), shape=(n_upper, n_elem))
        self.mass_map = sp.csr_matrix((mval, (inv, el)), shape=(n_upper, n_elem))
        ui, uj = keys // n, keys % n
        off = ui != uj
        fr = np.concatenate([ui, uj[off]])
        fc = np.concatenate([uj, ui[off]])
        src = np.concatenate([np.arange(n_upper), np.flatnonzero(off)])
        order = np.lexsort((fc, fr))
        self.select = src[order]
        self.indices = fc[order].astype(np.int32)
        self.indptr = np.searchsorted(fr[order], np.arange(n + 1)).astype(np.int32)
        self.n = n

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def stiffness_data(self, elem_coef: np.ndarray) -> np.ndarray:
        """CSR data for one (E,) or several (E, s) element coefficient arrays."""
        upper = self.stiff_map @ elem_coef
        return upper[self.select]


def assemble_stiffness(mesh: Mesh, field: ScalarField | Callable | float) -> sp.csr_matrix:
    """Weighted stiffness matrix with entries int_D field grad(phi_i).grad(phi_j)."""
    if np.isscalar(field):
        coef = np.full(mesh.elements.shape[0], float(field))
    else:
        coef = np.broadcast_to(np.asarray(field(mesh.midpoints), dtype=float), (mesh.elements.shape[0],))
    asm = mesh._assembler
    return asm.csr(asm.stiffness_data(np.ascontiguousarray(coef)))


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix (exact integration)."""
    asm = mesh._assembler
    data = (asm.mass_map @ np.ones(mesh.elements.shape[0]))[asm.select]
    return asm.csr(data)


def laplace_eigen_reference(domain_kind: str, k: int) -> float:
    """k-th Dirichlet Laplacian eigenvalue of the continuous domain (with multiplicity)."""
    if k < 1:
        raise ValueError(f"eigenvalue index must be >= 1, got {k}")
    if domain_kind == "unit-interval":
        return (k * math.pi) ** 2
    if domain_kind == "unit-square":
        m = np.arange(1, k + 2)
        vals = np.sort((m[:, None] ** 2 + m[None, :] ** 2).ravel())
        return float(vals[k - 1]) * math.pi**2
    raise ValueError(f"unknown domain_kind {domain_kind!r}")


@dataclass(frozen=True, eq=False)
class FemSpace:
    """Discrete carrier of an affine coefficient family on one mesh.

    ``term_data[j]`` holds the CSR data of the stiffness matrix for the
    (j+1)-th expansion term; all share the CSR structure of ``stiffness0``.
    """

    mesh: Mesh
    mass: sp.csr_matrix
    stiffness0: sp.csr_matrix
    term_data: np.ndarray
    laplacian: sp.csr_matrix

    @property
    def n_terms(self) -> int:
        return self.term_data.shape[0]

    @classmethod
    def from_fields(cls, mesh: Mesh, a0: ScalarField, terms: Sequence[ScalarField]) -> "FemSpace":
        asm = mesh._assembler
        mid = mesh.midpoints
        a0_data = asm.stiffness_data(np.ascontiguousarray(a0(mid)))
        if len(terms):
            coefs = np.column_stack([t(mid) for t in terms])
            term_data = np.ascontiguousarray(asm.stiffness_data(coefs).T)
        else:
            term_data = np.zeros((0, a0_data.size))
        return cls(
            mesh=mesh,
            mass=assemble_mass(mesh),
            stiffness0=asm.csr(a0_data),
            term_data=term_data,
            laplacian=assemble_stiffness(mesh, 1.0),
        )

    @classmethod
    def from_expansion(cls, mesh: Mesh, expansion) -> "FemSpace":
        return cls.from_fields(mesh, expansion.a0, expansion.terms)

    def operator_data(self, y: np.ndarray) -> np.ndarray:
        """CSR data of A(y) = A0 + sum_j y_j A_j for y of shape (s,) or (B, s)."""
        y = np.asarray(y, dtype=float)
        s = y.shape[-1]
        if s > self.n_terms:
            raise ValueError(f"parameter has {s} components but only {self.n_terms} terms are assembled")
        if s == 0:
            return np.broadcast_to(self.stiffness0.data, y.shape[:-1] + self.stiffness0.data.shape).copy()
        return self.stiffness0.data + y @ self.term_data[:s]

    def operator(self, y: np.ndarray) -> sp.csr_matrix:
        y = np.asarray(y, dtype=float)
        if y.ndim != 1:
            raise ValueError("operator() takes a single parameter vector")
        return self.mesh._assembler.csr(self.operator_data(y))
