import numpy as np
import pytest

from models.materials import (
    MaterialError,
    MaterialModel,
    ScaledMaterial,
    eta,
    eta_prime,
    make_scaling,
    sigma,
    sigma_prime,
)
from solvers.problem import ReferenceScales

MODEL = MaterialModel()


def central(f, x, h=1e-3):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_laws_at_room_temperature():
    assert eta(MODEL, 290.0) == pytest.approx(15.30023, rel=1e-6)
    assert sigma(MODEL, 290.0) == pytest.approx(1.40701e6, rel=1e-5)


def test_scalar_in_scalar_out_and_vectorized():
    assert np.ndim(sigma(MODEL, 500.0)) == 0
    values = sigma(MODEL, np.array([290.0, 500.0, 1500.0]))
    assert values.shape == (3,)
    assert values[1] == pytest.approx(sigma(MODEL, 500.0))


def test_constant_continuation_outside_trusted_range():
    assert eta(MODEL, -1000.0) == pytest.approx(eta(MODEL, 0.0))
    assert sigma(MODEL, 20000.0) == pytest.approx(sigma(MODEL, 10000.0))
    assert eta_prime(MODEL, -1000.0) == 0.0
    assert sigma_prime(MODEL, 20000.0) == 0.0


@pytest.mark.parametrize("theta", [-150.0, -50.0, 50.0, 150.0, 1500.0, 9850.0, 9950.0, 10050.0])
def test_derivatives_match_finite_differences(theta):
    for law, law_prime in ((sigma, sigma_prime), (eta, eta_prime)):
        fd = central(lambda t: law(MODEL, t), theta)
        exact = law_prime(MODEL, theta)
        assert exact == pytest.approx(fd, rel=1e-6, abs=1e-9 * abs(law(MODEL, theta)))


@pytest.mark.parametrize("joint", [-100.0, 100.0, 9900.0, 10100.0])
def test_blend_joints_are_c1(joint):
    inner_joint = 100.0 if joint < 5000.0 else 9900.0
    for law, law_prime in ((sigma, sigma_prime), (eta, eta_prime)):
        slope_scale = abs(law_prime(MODEL, inner_joint))
        left, right = law(MODEL, joint - 1e-7), law(MODEL, joint + 1e-7)
        assert left == pytest.approx(right, rel=1e-9)
        slope_left, slope_right = law_prime(MODEL, joint - 1e-7), law_prime(MODEL, joint + 1e-7)
        assert slope_left == pytest.approx(slope_right, rel=1e-6, abs=1e-6 * slope_scale)


def test_non_finite_temperature_rejected():
    with pytest.raises(MaterialError):
        sigma(MODEL, np.nan)
    with pytest.raises(MaterialError):
        eta(MODEL, np.array([300.0, np.inf]))


def test_model_validation():
    with pytest.raises(MaterialError):
        MaterialModel(blend=6000.0)
    with pytest.raises(MaterialError):
        MaterialModel(rho=0.0)
    assert MODEL.heat_capacity == pytest.approx(7900.0 * 455.0)


def test_scaling_groups():
    scales = ReferenceScales(L_ref=0.1, t_ref=2.0, theta_ref=1500.0, u_ref=1e8, theta_cond=290.0)
    s = make_scaling(MODEL, scales)
    capacity = 7900.0 * 455.0
    assert s.sigma_ref == pytest.approx(sigma(MODEL, 290.0))
    assert s.phi_ref == pytest.approx(1e8 * 0.1 / s.sigma_ref)
    assert s.diffusion == pytest.approx(15.30023 * 2.0 / (capacity * 0.01), rel=1e-6)
    assert s.joule == pytest.approx(s.sigma_ref * s.phi_ref**2 * 2.0 / (capacity * 1500.0 * 0.01))
    assert s.robin == pytest.approx(20.0 * 2.0 / (capacity * 0.1))
    assert set(s.groups()) == {"diffusion", "joule", "robin"}


def test_scaling_rejects_non_positive_reference():
    with pytest.raises(MaterialError):
        make_scaling(MODEL, ReferenceScales(L_ref=0.0, t_ref=2.0, theta_ref=1500.0, u_ref=1e8, theta_cond=290.0))


def test_scaled_material_is_normalised_at_reference_temperature():
    scales = ReferenceScales(L_ref=0.1, t_ref=2.0, theta_ref=1500.0, u_ref=1e8, theta_cond=290.0)
    scaled = ScaledMaterial(MODEL, make_scaling(MODEL, scales))
    theta_hat = 290.0 / 1500.0
    assert scaled.sigma(theta_hat) == pytest.approx(1.0)
    assert scaled.eta(theta_hat) == pytest.approx(1.0)
    fd = central(scaled.sigma, 0.5, h=1e-6)
    assert scaled.sigma_prime(0.5) == pytest.approx(fd, rel=1e-6)


def test_permittivity_scales_potential_and_joule_group():
    scales = ReferenceScales(L_ref=0.1, t_ref=2.0, theta_ref=1500.0, u_ref=1e8, theta_cond=290.0)
    plain = make_scaling(MODEL, scales)
    doubled = make_scaling(MaterialModel(eps_scalar=2.0), scales)
    assert doubled.phi_ref == pytest.approx(0.5 * plain.phi_ref)
    assert doubled.joule == pytest.approx(0.5 * plain.joule)
    assert doubled.diffusion == plain.diffusion
