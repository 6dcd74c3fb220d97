"""P1 tetrahedral assembly of the forms used by the state, tangent and adjoint systems.

Nonlinear coefficients are evaluated once per element at the centroid
temperature (the mean of the four vertex values), so every Jacobian block
below is the exact derivative of the corresponding discrete residual.
"""

import logging
import weakref
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from tools.mesh import BoundaryTag, Mesh, signed_volumes, triangle_areas
from tools.sparse import from_triplets

logger = logging.getLogger(__name__)

_GEOMETRY_CACHE: "weakref.WeakKeyDictionary[Mesh, ElementGradients]" = weakref.WeakKeyDictionary()


class AssemblyError(ValueError):
    """Raised when an operator cannot be assembled on the given mesh and dof map."""


@dataclass(frozen=True)
class ElementGradients:
    """Constant shape-function gradients (m × 4 × 3) and volumes (m,) per tet."""

    grads: np.ndarray
    volumes: np.ndarray


def element_gradients(mesh: Mesh) -> ElementGradients:
    cached = _GEOMETRY_CACHE.get(mesh)
    if cached is not None:
        return cached
    p = mesh.vertices[mesh.tets]
    edges = p[:, 1:, :] - p[:, :1, :]
    inverse = np.linalg.inv(edges)
    grads = np.empty((mesh.n_tets, 4, 3))
    grads[:, 1:, :] = np.transpose(inverse, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    geometry = ElementGradients(grads=grads, volumes=signed_volumes(mesh.vertices, mesh.tets))
    _GEOMETRY_CACHE[mesh] = geometry
    return geometry


@dataclass(frozen=True)
class DofMap:
    """Vertex bookkeeping for the Dirichlet-eliminated potential systems.

    ``free_index[v]`` is the reduced index of vertex ``v`` or -1 on the
    grounded contact. Control vertices on the grounded contact are
    eliminated like every other Dirichlet vertex.
    """

    n_vertices: int
    dirichlet: np.ndarray
    free: np.ndarray
    free_index: np.ndarray
    control_vertices: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def n_control(self) -> int:
        return len(self.control_vertices)

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.free]

    def extend(self, free_values: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_vertices)
        full[self.free] = free_values
        return full


def build_dofmap(mesh: Mesh) -> DofMap:
    dirichlet = mesh.vertices_with_tag(BoundaryTag.DIRICHLET)
    if dirichlet.size == 0:
        raise AssemblyError("the grounded contact is empty; the potential equation would be singular")
    control = mesh.vertices_with_tag(BoundaryTag.CONTROL)
    if control.size == 0:
        raise AssemblyError("the control contact is empty")
    free = np.setdiff1d(np.arange(mesh.n_vertices), dirichlet)
    free_index = np.full(mesh.n_vertices, -1, dtype=np.int64)
    free_index[free] = np.arange(len(free))
    return DofMap(mesh.n_vertices, dirichlet, free, free_index, control)


def centroid_values(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    return np.asarray(nodal)[mesh.tets].mean(axis=1)


def element_field_gradients(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Elementwise constant gradient (m × 3) of a P1 field."""
    grads = element_gradients(mesh).grads
    return np.einsum("eij,ei->ej", grads, np.asarray(nodal)[mesh.tets])


def _assemble_local(mesh: Mesh, local: np.ndarray, cells: Optional[np.ndarray] = None) -> sp.csr_matrix:
    tets = mesh.tets if cells is None else mesh.tets[cells]
    rows = np.broadcast_to(tets[:, :, None], local.shape)
    cols = np.broadcast_to(tets[:, None, :], local.shape)
    return from_triplets(mesh.n_vertices, mesh.n_vertices, (rows.ravel(), cols.ravel(), local.ravel()))


def _scatter(mesh: Mesh, local: np.ndarray) -> np.ndarray:
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.tets.ravel(), local.ravel())
    return out


def lump(matrix: sp.spmatrix) -> np.ndarray:
    """Row-sum lumping; returns the diagonal as a vector."""
    return np.asarray(matrix.sum(axis=1)).ravel()


def assemble_mass(mesh: Mesh, coeff: float = 1.0, cells: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Consistent P1 mass matrix, optionally restricted to a subset of cells."""
    volumes = element_gradients(mesh).volumes
    if cells is not None:
        volumes = volumes[cells]
    pattern = (np.ones((4, 4)) + np.eye(4)) / 20.0
    local = coeff * volumes[:, None, None] * pattern
    return _assemble_local(mesh, local, cells)


def assemble_stiffness(mesh: Mesh, coefficient: np.ndarray) -> sp.csr_matrix:
    """∫ c ∇N_j·∇N_i with an elementwise constant coefficient ``c``."""
    geometry = element_gradients(mesh)
    coefficient = np.broadcast_to(np.asarray(coefficient, dtype=float), geometry.volumes.shape)
    local = (coefficient * geometry.volumes)[:, None, None] * np.einsum("eik,ejk->eij", geometry.grads, geometry.grads)
    return _assemble_local(mesh, local)


def assemble_heat_stiffness(mesh: Mesh, material, theta: np.ndarray) -> sp.csr_matrix:
    """Heat conduction stiffness with coefficient η(θ̄) per element."""
    return assemble_stiffness(mesh, material.eta(centroid_values(mesh, theta)))


def assemble_boundary_mass(mesh: Mesh, coeff: float = 1.0, tag: Optional[BoundaryTag] = None) -> sp.csr_matrix:
    """Consistent P1 triangle mass on all boundary faces or on one tag."""
    faces = mesh.faces if tag is None else mesh.faces_with_tag(tag)
    areas = triangle_areas(mesh.vertices, faces)
    local = coeff * areas[:, None, None] * (np.ones((3, 3)) + np.eye(3)) / 12.0
    rows = np.broadcast_to(faces[:, :, None], local.shape)
    cols = np.broadcast_to(faces[:, None, :], local.shape)
    return from_triplets(mesh.n_vertices, mesh.n_vertices, (rows.ravel(), cols.ravel(), local.ravel()))


def assemble_robin(mesh: Mesh, alpha: float, theta_l):
    """Robin boundary mass α·M_∂Ω and the matching load for the ambient temperature."""
    if alpha < 0.0:
        raise AssemblyError(f"Robin coefficient must be nonnegative, got {alpha}")
    matrix = assemble_boundary_mass(mesh, alpha)
    ambient = np.broadcast_to(np.asarray(theta_l, dtype=float), (mesh.n_vertices,))
    return matrix, matrix @ ambient


def control_mass(mesh: Mesh, dofmap: DofMap) -> np.ndarray:
    """Lumped boundary mass of the control contact at the control vertices."""
    return lump(assemble_boundary_mass(mesh, 1.0, BoundaryTag.CONTROL))[dofmap.control_vertices]


def assemble_potential_system(mesh: Mesh, dofmap: DofMap, material, theta: np.ndarray) -> sp.csr_matrix:
    """Stiffness with coefficient σ(θ̄), grounded-contact rows and columns eliminated."""
    if dofmap.dirichlet.size == 0:
        raise AssemblyError("potential system needs a non-empty grounded contact")
    full = assemble_stiffness(mesh, material.sigma(centroid_values(mesh, theta)))
    return full[dofmap.free][:, dofmap.free].tocsr()


def assemble_control_load(mesh: Mesh, dofmap: DofMap, u_slice: np.ndarray,
                          weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Boundary current load ∫_ΓN u N_i with lumped contact mass; full vertex vector."""
    u_slice = np.asarray(u_slice, dtype=float)
    if u_slice.shape != (dofmap.n_control,):
        raise AssemblyError(f"control slice has shape {u_slice.shape}, expected ({dofmap.n_control},)")
    if weights is None:
        weights = control_mass(mesh, dofmap)
    load = np.zeros(mesh.n_vertices)
    load[dofmap.control_vertices] = weights * u_slice
    return load


def assemble_joule_load(mesh: Mesh, material, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Joule heat σ(θ̄)|∇φ|² per element, lumped to the vertices with weight V/4."""
    volumes = element_gradients(mesh).volumes
    density = material.sigma(centroid_values(mesh, theta)) * np.sum(element_field_gradients(mesh, phi) ** 2, axis=1)
    return _scatter(mesh, np.repeat((density * volumes / 4.0)[:, None], 4, axis=1))


def gradient_lq_power(mesh: Mesh, theta: np.ndarray, q_exp: float) -> float:
    """Σ_e V_e |∇θ|_e^q, the q-th power of the discrete L^q norm of ∇θ."""
    volumes = element_gradients(mesh).volumes
    norms = np.linalg.norm(element_field_gradients(mesh, theta), axis=1)
    return float(np.sum(volumes * norms**q_exp))


def assemble_qlaplacian(mesh: Mesh, theta: np.ndarray, q_exp: float) -> np.ndarray:
    """Weak q-Laplacian ξ ↦ ∫ |∇θ|^{q−2} ∇θ·∇ξ tested with every hat function."""
    if q_exp < 2.0:
        raise AssemblyError(f"q exponent must be at least 2, got {q_exp}")
    geometry = element_gradients(mesh)
    g = element_field_gradients(mesh, theta)
    weight = geometry.volumes * np.linalg.norm(g, axis=1) ** (q_exp - 2.0)
    local = weight[:, None] * np.einsum("eik,ek->ei", geometry.grads, g)
    return _scatter(mesh, local)


def assemble_linearization_blocks(mesh: Mesh, material, theta: np.ndarray, phi: np.ndarray) -> Dict[str, sp.csr_matrix]:
    """Coefficient-derivative blocks of the coupled step residual, all n × n.

    K_eta_p   ∂/∂θ of K_η(θ)θ beyond K_η itself
    C_theta   ∂/∂θ of the Joule load
    C_phi     ∂/∂φ of the Joule load
    A_sigma_p ∂/∂θ of A_σ(θ)φ (callers keep the free rows)
    """
    geometry = element_gradients(mesh)
    volumes, grads = geometry.volumes, geometry.grads
    theta_bar = centroid_values(mesh, theta)
    grad_theta = element_field_gradients(mesh, theta)
    grad_phi = element_field_gradients(mesh, phi)
    sig = material.sigma(theta_bar)
    sig_p = material.sigma_prime(theta_bar)
    eta_p = material.eta_prime(theta_bar)

    def outer_ones(rows):
        return np.repeat(rows[:, :, None], 4, axis=2)

    flux_theta = np.einsum("eik,ek->ei", grads, grad_theta)
    flux_phi = np.einsum("eik,ek->ei", grads, grad_phi)
    phi_sq = np.sum(grad_phi**2, axis=1)

    k_eta_p = outer_ones((eta_p * volumes / 4.0)[:, None] * flux_theta)
    c_theta = outer_ones(np.repeat((sig_p * phi_sq * volumes / 16.0)[:, None], 4, axis=1))
    c_phi = np.repeat(((2.0 * sig * volumes / 4.0)[:, None] * flux_phi)[:, None, :], 4, axis=1)
    a_sigma_p = outer_ones((sig_p * volumes / 4.0)[:, None] * flux_phi)

    return {
        "K_eta_p": _assemble_local(mesh, k_eta_p),
        "C_theta": _assemble_local(mesh, c_theta),
        "C_phi": _assemble_local(mesh, c_phi),
        "A_sigma_p": _assemble_local(mesh, a_sigma_p),
    }


def projected_gradient_magnitude(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Nodal |∇v| by lumped L² projection of the elementwise constant magnitude."""
    volumes = element_gradients(mesh).volumes
    magnitude = np.linalg.norm(element_field_gradients(mesh, nodal), axis=1)
    weights = np.repeat((volumes / 4.0)[:, None], 4, axis=1)
    numerator = _scatter(mesh, weights * magnitude[:, None])
    return numerator / _scatter(mesh, weights)
