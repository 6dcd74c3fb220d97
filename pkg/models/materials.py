"""Temperature-dependent conductivity laws, material constants and scaling.

The electrical conductivity is the reciprocal of a cubic and the thermal
conductivity is affine in temperature. Both laws are only trusted on
[0, 10000] K; outside that range they are continued by a constant, joined to
the exact law by a cubic Hermite blend so that the result stays C¹ and
bounded on the whole real line.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Tuple

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Any


class MaterialError(ValueError):
    """Raised for non-finite temperatures or non-positive reference scales."""


@dataclass(frozen=True)
class MaterialModel:
    """Material data of the heated workpiece, in SI units.

    :param sigma_coeffs: (a, b, c, d) of sigma(T) = 1 / (a + bT + cT² + dT³)
    :param eta_coeffs: (a, b) of eta(T) = 100 (a + bT)
    :param theta_lo: lower end of the trusted temperature range (K)
    :param theta_hi: upper end of the trusted temperature range (K)
    :param blend: half width of the Hermite blend zones (K)
    :param rho: density (kg/m³)
    :param cp: specific heat (J/(kg K))
    :param alpha: heat transfer coefficient of the Robin condition
    :param eps_scalar: multiplier of the identity electric permittivity tensor
    :param kappa_scalar: multiplier of the identity heat conduction tensor
    """

    sigma_coeffs: Tuple[float, float, float, float] = (4.9659e-7, 8.4121e-10, -3.7246e-13, 6.1960e-17)
    eta_coeffs: Tuple[float, float] = (0.11215, 1.4087e-4)
    theta_lo: float = 0.0
    theta_hi: float = 10000.0
    blend: float = 100.0
    rho: float = 7900.0
    cp: float = 455.0
    alpha: float = 20.0
    eps_scalar: float = 1.0
    kappa_scalar: float = 1.0

    def __post_init__(self):
        if not self.blend > 0.0 or not self.theta_hi - self.theta_lo > 2.0 * self.blend:
            raise MaterialError(
                f"blend zone of {self.blend} K does not fit into [{self.theta_lo}, {self.theta_hi}]"
            )
        for name in ("rho", "cp", "eps_scalar", "kappa_scalar"):
            if not getattr(self, name) > 0.0:
                raise MaterialError(f"{name} must be positive, got {getattr(self, name)}")
        if self.alpha < 0.0:
            raise MaterialError(f"alpha must be nonnegative, got {self.alpha}")

    @property
    def heat_capacity(self) -> float:
        """Volumetric heat capacity rho·cp."""
        return self.rho * self.cp


def _check_finite(theta: ArrayLike) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise MaterialError("temperature contains non-finite values")
    return theta


def _sigma_law(model: MaterialModel, theta):
    a, b, c, d = model.sigma_coeffs
    return 1.0 / (a + theta * (b + theta * (c + theta * d)))


def _sigma_law_prime(model: MaterialModel, theta):
    a, b, c, d = model.sigma_coeffs
    denom = a + theta * (b + theta * (c + theta * d))
    return -(b + theta * (2.0 * c + 3.0 * d * theta)) / denom**2


def _eta_law(model: MaterialModel, theta):
    a, b = model.eta_coeffs
    return 100.0 * (a + b * theta)


def _eta_law_prime(model: MaterialModel, theta):
    return 100.0 * model.eta_coeffs[1] * np.ones_like(theta)


def _extended(model: MaterialModel, law: Callable, law_prime: Callable, theta, derivative: bool):
    """Evaluate a law or its derivative with the constant C¹ continuation."""
    lo, hi, delta = model.theta_lo, model.theta_hi, model.blend
    theta = _check_finite(theta)
    scalar = theta.ndim == 0
    theta = np.atleast_1d(theta)

    out = np.empty_like(theta)
    inner = (theta >= lo + delta) & (theta <= hi - delta)
    below = theta <= lo - delta
    above = theta >= hi + delta
    out[inner] = law_prime(model, theta[inner]) if derivative else law(model, theta[inner])
    out[below] = 0.0 if derivative else law(model, lo)
    out[above] = 0.0 if derivative else law(model, hi)

    zones = (
        ((theta > lo - delta) & (theta < lo + delta), lo - delta, law(model, lo), 0.0,
         lo + delta, law(model, lo + delta), law_prime(model, lo + delta)),
        ((theta > hi - delta) & (theta < hi + delta), hi - delta, law(model, hi - delta),
         law_prime(model, hi - delta), hi + delta, law(model, hi), 0.0),
    )
    for mask, a, y0, m0, b, y1, m1 in zones:
        if not np.any(mask):
            continue
        h = b - a
        t = (theta[mask] - a) / h
        if derivative:
            out[mask] = ((6 * t**2 - 6 * t) * y0 / h + (3 * t**2 - 4 * t + 1) * m0
                         + (-6 * t**2 + 6 * t) * y1 / h + (3 * t**2 - 2 * t) * m1)
        else:
            out[mask] = ((2 * t**3 - 3 * t**2 + 1) * y0 + (t**3 - 2 * t**2 + t) * h * m0
                         + (-2 * t**3 + 3 * t**2) * y1 + (t**3 - t**2) * h * m1)
    return out[0] if scalar else out


def sigma(model: MaterialModel, theta: ArrayLike):
    """Electrical conductivity in 1/(Ohm m)."""
    return _extended(model, _sigma_law, _sigma_law_prime, theta, derivative=False)


def sigma_prime(model: MaterialModel, theta: ArrayLike):
    return _extended(model, _sigma_law, _sigma_law_prime, theta, derivative=True)


def eta(model: MaterialModel, theta: ArrayLike):
    """Thermal conductivity in W/(m K)."""
    return _extended(model, _eta_law, _eta_law_prime, theta, derivative=False)


def eta_prime(model: MaterialModel, theta: ArrayLike):
    return _extended(model, _eta_law, _eta_law_prime, theta, derivative=True)


@dataclass(frozen=True)
class ScalingSet:
    """Reference scales and the dimensionless groups they produce.

    With x = L_ref·x̂, t = t_ref·t̂, θ = θ_ref·θ̂, u = u_ref·û and
    φ = phi_ref·φ̂, phi_ref = u_ref·L_ref/(σ_ref·ε), the heat equation reads

        ∂θ̂/∂t̂ − diffusion ∇·η̂∇θ̂ = joule σ̂|∇φ̂|²,   η̂∇θ̂·ν + robin (θ̂ − θ̂_l) = 0,

    and the potential equation −∇·σ̂∇φ̂ = 0 with σ̂∇φ̂·ν = û on the contact.
    σ̂ and η̂ are the conductivities divided by their values at theta_cond.
    """

    L_ref: float
    t_ref: float
    theta_ref: float
    u_ref: float
    theta_cond: float
    sigma_ref: float
    eta_ref: float
    phi_ref: float
    diffusion: float
    joule: float
    robin: float

    def groups(self) -> dict:
        return {"diffusion": self.diffusion, "joule": self.joule, "robin": self.robin}


def make_scaling(model: MaterialModel, config: Any) -> ScalingSet:
    """Derive the dimensionless groups from reference scales.

    ``config`` is any object exposing ``L_ref``, ``t_ref``, ``theta_ref``,
    ``u_ref`` and ``theta_cond`` (the temperature at which the conductivities
    are normalised, usually the initial temperature).
    """
    scales = {name: float(getattr(config, name)) for name in ("L_ref", "t_ref", "theta_ref", "u_ref", "theta_cond")}
    for name in ("L_ref", "t_ref", "theta_ref", "u_ref"):
        if not scales[name] > 0.0 or not np.isfinite(scales[name]):
            raise MaterialError(f"reference scale {name} must be positive, got {scales[name]}")

    L, t, th, u = scales["L_ref"], scales["t_ref"], scales["theta_ref"], scales["u_ref"]
    sigma_ref = float(sigma(model, scales["theta_cond"]))
    eta_ref = float(eta(model, scales["theta_cond"]))
    capacity = model.heat_capacity
    # the contact flux sigma·eps·dphi/dn equals u, so the potential scales with 1/eps
    phi_ref = u * L / (sigma_ref * model.eps_scalar)

    scaling = ScalingSet(
        L_ref=L,
        t_ref=t,
        theta_ref=th,
        u_ref=u,
        theta_cond=scales["theta_cond"],
        sigma_ref=sigma_ref,
        eta_ref=eta_ref,
        phi_ref=phi_ref,
        diffusion=eta_ref * model.kappa_scalar * t / (capacity * L**2),
        joule=sigma_ref * model.eps_scalar * phi_ref**2 * t / (capacity * th * L**2),
        robin=model.alpha * t / (capacity * L),
    )
    logger.info(
        f"Scaling groups: diffusion={scaling.diffusion:.6e} joule={scaling.joule:.6e} "
        f"robin={scaling.robin:.6e} phi_ref={scaling.phi_ref:.6e} V"
    )
    return scaling


@dataclass(frozen=True)
class ScaledMaterial:
    """Dimensionless conductivities as functions of the scaled temperature."""

    model: MaterialModel
    scaling: ScalingSet = field(repr=False)

    def sigma(self, theta_hat):
        return sigma(self.model, self.scaling.theta_ref * np.asarray(theta_hat)) / self.scaling.sigma_ref

    def sigma_prime(self, theta_hat):
        s = self.scaling
        return s.theta_ref * sigma_prime(self.model, s.theta_ref * np.asarray(theta_hat)) / s.sigma_ref

    def eta(self, theta_hat):
        return eta(self.model, self.scaling.theta_ref * np.asarray(theta_hat)) / self.scaling.eta_ref

    def eta_prime(self, theta_hat):
        s = self.scaling
        return s.theta_ref * eta_prime(self.model, s.theta_ref * np.asarray(theta_hat)) / s.eta_ref
