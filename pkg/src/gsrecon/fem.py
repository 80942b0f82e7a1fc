"""P1 finite elements for the weighted operator div((1/(mu0 r)) grad psi).

Dirichlet conditions are imposed by row replacement: every boundary row of the
Neumann stiffness matrix becomes a unit row, so the matrix (and its sparse LU
factorization) never changes and each solve only rebuilds the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DataError, FactorizationError
from .mesh import Mesh

MU0 = 4e-7 * np.pi

# 3-point Gauss rule on the reference triangle, exact for quadratics.
QUAD_BARY = np.array(
    [[2 / 3, 1 / 6, 1 / 6],
     [1 / 6, 2 / 3, 1 / 6],
     [1 / 6, 1 / 6, 2 / 3]]
)
QUAD_WEIGHTS = np.array([1 / 3, 1 / 3, 1 / 3])


def quad_points(mesh: Mesh) -> np.ndarray:
    """(T, 3, 2) physical coordinates of the quadrature points."""
    return np.einsum("qk,tkd->tqd", QUAD_BARY, mesh.nodes[mesh.triangles])


def quad_weights(mesh: Mesh) -> np.ndarray:
    """(T, 3) quadrature weights (area already included)."""
    return mesh.areas[:, None] * QUAD_WEIGHTS[None, :]


def at_quad_points(mesh: Mesh, nodal) -> np.ndarray:
    """Interpolate a nodal P1 field to the (T, 3) quadrature points."""
    return np.asarray(nodal, dtype=float)[mesh.triangles] @ QUAD_BARY.T


def element_stiffness(mesh: Mesh) -> np.ndarray:
    """(T, 3, 3) element matrices of int (1/(mu0 r)) grad v_i . grad v_j."""
    rq = quad_points(mesh)[..., 0]
    coef = (quad_weights(mesh) / (MU0 * rq)).sum(axis=1)
    g = mesh.hat_gradients
    return coef[:, None, None] * np.einsum("tid,tjd->tij", g, g)


def load_vector(mesh: Mesh, f) -> np.ndarray:
    """Consistent load vector int f v_i for a callable f(r, z) (vectorised)."""
    q = quad_points(mesh)
    fq = np.asarray(f(q[..., 0], q[..., 1]), dtype=float) * quad_weights(mesh)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.triangles, fq @ QUAD_BARY)
    return out


def scatter_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Sparse (n_nodes, 3T) map from quadrature-point values to int g v_i.

    Column ``3t + q`` carries weight_q * v_i(x_q) for the three nodes i of
    triangle t, so ``S @ g.ravel()`` is the load vector of the quadrature
    samples ``g``.
    """
    T = mesh.n_triangles
    w = quad_weights(mesh)
    rows = np.repeat(mesh.triangles[:, None, :], 3, axis=1)  # (T, q, k)
    vals = w[:, :, None] * QUAD_BARY[None, :, :]
    cols = np.broadcast_to(np.arange(3 * T).reshape(T, 3, 1), rows.shape)
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_nodes, 3 * T))


@dataclass(eq=False)
class StiffnessSystem:
    """Neumann stiffness matrix, its Dirichlet-modified copy and the LU factors."""

    K_raw: sp.csr_matrix
    boundary_nodes: np.ndarray
    K_mod: sp.csr_matrix | None = None
    lu: object = None
    n_factorizations: int = 0
    boundary_index_map: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.K_raw.shape[0]

    def solve(self, rhs, trans: str = "N") -> np.ndarray:
        if self.lu is None:
            raise FactorizationError("Dirichlet conditions not applied; call apply_dirichlet first")
        rhs = np.asarray(rhs, dtype=float)
        x = self.lu.solve(rhs, trans=trans)
        # one refinement step; LU round-off on the unit rows is otherwise ~1e-10
        A = self.K_mod if trans == "N" else self.K_mod.T
        return x + self.lu.solve(rhs - A @ x, trans=trans)


def assemble_stiffness(mesh: Mesh) -> StiffnessSystem:
    Ke = element_stiffness(mesh)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return StiffnessSystem(K_raw=K, boundary_nodes=mesh.boundary_nodes.copy())


def apply_dirichlet(system: StiffnessSystem, mesh: Mesh) -> StiffnessSystem:
    """Replace boundary rows by unit rows and factorize once."""
    b = mesh.boundary_nodes
    K = system.K_raw.tolil(copy=True)
    for i in b:
        K.rows[i] = [int(i)]
        K.data[i] = [1.0]
    K = K.tocsc()
    try:
        lu = splu(K)
    except RuntimeError as exc:
        raise FactorizationError(f"sparse LU of the modified stiffness matrix failed: {exc}") from None
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) == 0.0:
        raise FactorizationError("modified stiffness matrix is singular (degenerate mesh)")
    return StiffnessSystem(
        K_raw=system.K_raw,
        boundary_nodes=b.copy(),
        K_mod=K.tocsr(),
        lu=lu,
        n_factorizations=system.n_factorizations + 1,
        boundary_index_map={int(node): int(node) for node in b},
    )


def build_system(mesh: Mesh) -> StiffnessSystem:
    return apply_dirichlet(assemble_stiffness(mesh), mesh)


def dirichlet_rhs(system: StiffnessSystem, y, h) -> np.ndarray:
    """Right-hand side y + H: interior entries of y, boundary entries of h."""
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    if y.shape != (system.n,):
        raise DataError(f"source vector has length {y.size}, expected {system.n}")
    if h.shape != system.boundary_nodes.shape:
        raise DataError(f"boundary data has length {h.size}, expected {system.boundary_nodes.size}")
    rhs = y.copy()
    rhs[system.boundary_nodes] = h
    return rhs


def solve_direct(system: StiffnessSystem, y, h) -> np.ndarray:
    """Solve K_mod psi = y + H with the stored factorization."""
    return system.solve(dirichlet_rhs(system, y, h))
