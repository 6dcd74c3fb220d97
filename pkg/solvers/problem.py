"""The nondimensional discretization shared by the forward, tangent and adjoint sweeps."""

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp

from models.materials import MaterialModel, ScaledMaterial, ScalingSet, make_scaling
from tools.fem import (
    DofMap,
    assemble_boundary_mass,
    assemble_mass,
    build_dofmap,
    control_mass,
    lump,
)
from tools.mesh import Mesh, build_box_mesh, load_mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReferenceScales:
    L_ref: float
    t_ref: float
    theta_ref: float
    u_ref: float
    theta_cond: float


@dataclass(frozen=True, eq=False)
class ThermistorProblem:
    """Everything a time sweep needs, in scaled units.

    Lengths are divided by ``L_ref``, times by ``t_ref``, temperatures by
    ``theta_ref`` and currents by ``u_ref``. The lumped mass, lumped Robin
    matrix, contact weights and design-region mass do not depend on the
    state and are assembled once here.
    """

    physical_mesh: Mesh
    mesh: Mesh
    dofmap: DofMap
    model: MaterialModel
    scaling: ScalingSet
    material: ScaledMaterial
    n_steps: int
    dt: float
    t0: float
    theta0: np.ndarray
    theta_l: float
    mass_lumped: np.ndarray = field(repr=False)
    robin_lumped: np.ndarray = field(repr=False)
    robin_load: np.ndarray = field(repr=False)
    control_weights: np.ndarray = field(repr=False)
    design_mass: sp.csr_matrix = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_control(self) -> int:
        return self.dofmap.n_control

    @property
    def times(self) -> np.ndarray:
        """Physical time levels in seconds."""
        return self.t0 + self.scaling.t_ref * self.dt * np.arange(self.n_steps + 1)

    @property
    def diffusion(self) -> float:
        return self.scaling.diffusion

    @property
    def joule(self) -> float:
        return self.scaling.joule

    def to_kelvin(self, theta_hat):
        return self.scaling.theta_ref * np.asarray(theta_hat)

    def from_kelvin(self, theta):
        return np.asarray(theta, dtype=float) / self.scaling.theta_ref

    def zero_control(self) -> np.ndarray:
        return np.zeros((self.n_steps + 1, self.n_control))


def build_problem(
    mesh: Mesh,
    model: MaterialModel,
    scales: Any,
    t0: float,
    t1: float,
    n_steps: int,
    theta0,
    theta_l: float,
) -> ThermistorProblem:
    """Scale a physical mesh and material set and assemble the constant operators.

    ``theta0`` is the initial temperature in Kelvin, either one value or one
    value per vertex.
    """
    if not t1 > t0:
        raise ValueError(f"final time {t1} must exceed initial time {t0}")
    if n_steps < 1:
        raise ValueError(f"need at least one time step, got {n_steps}")

    scaling = make_scaling(model, scales)
    material = ScaledMaterial(model, scaling)
    scaled_mesh = mesh.scaled(1.0 / scaling.L_ref)
    dofmap = build_dofmap(scaled_mesh)

    theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), (mesh.n_vertices,)) / scaling.theta_ref
    theta_l_hat = float(theta_l) / scaling.theta_ref
    robin_lumped = lump(assemble_boundary_mass(scaled_mesh, scaling.robin))

    problem = ThermistorProblem(
        physical_mesh=mesh,
        mesh=scaled_mesh,
        dofmap=dofmap,
        model=model,
        scaling=scaling,
        material=material,
        n_steps=int(n_steps),
        dt=(t1 - t0) / scaling.t_ref / n_steps,
        t0=float(t0),
        theta0=np.array(theta0),
        theta_l=theta_l_hat,
        mass_lumped=lump(assemble_mass(scaled_mesh)),
        robin_lumped=robin_lumped,
        robin_load=robin_lumped * theta_l_hat,
        control_weights=control_mass(scaled_mesh, dofmap),
        design_mass=assemble_mass(scaled_mesh, cells=scaled_mesh.design_cells),
    )
    logger.info(
        f"Problem: {scaled_mesh.n_vertices} vertices, {dofmap.n_free} free potential dofs, "
        f"{dofmap.n_control} control vertices, {n_steps} steps of dt={problem.dt:.4g}"
    )
    return problem


def mesh_from_config(mesh_cfg: Any) -> Mesh:
    if getattr(mesh_cfg, "file", None):
        return load_mesh(mesh_cfg.file)
    return build_box_mesh(*mesh_cfg.cells, mesh_cfg.dims, mesh_cfg.contact_fraction, mesh_cfg.design_depth)


def problem_from_config(cfg: Any, mesh: Optional[Mesh] = None) -> ThermistorProblem:
    """Build the problem described by a RunConfig.

    Unset reference scales default to the time horizon (``t_ref``), the
    current bound (``u_ref``) and the initial temperature (``theta_cond``).
    """
    mesh = mesh if mesh is not None else mesh_from_config(cfg.mesh)
    s = cfg.scaling
    scales = ReferenceScales(
        L_ref=s.L_ref,
        t_ref=s.t_ref if s.t_ref is not None else cfg.time.T1 - cfg.time.T0,
        theta_ref=s.theta_ref,
        u_ref=s.u_ref if s.u_ref is not None else cfg.objective.u_max,
        theta_cond=cfg.problem.theta0,
    )
    return build_problem(
        mesh,
        cfg.materials,
        scales,
        cfg.time.T0,
        cfg.time.T1,
        cfg.time.steps,
        cfg.problem.theta0,
        cfg.problem.theta_l,
    )
