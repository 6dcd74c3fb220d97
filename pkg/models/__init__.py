from .materials import (
    MaterialError,
    MaterialModel,
    ScaledMaterial,
    ScalingSet,
    make_scaling,
    sigma,
    sigma_prime,
    eta,
    eta_prime
)
