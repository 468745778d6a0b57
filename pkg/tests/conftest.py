"""Shared builders for the test suite."""

import numpy as np
import pytest

from skwsim.grid import Domain
from skwsim.model import DiffusionSpec, FrictionSpec, ModelSpec, ReactionSpec


def build_model(
    M=64,
    L=np.pi,
    a=1.0,
    b=0.5,
    kappa=0.2,
    beta=0.1,
    s0=0.2,
    s1=0.2,
    n_modes=16,
    q_power=2.0,
    q_weights=None,
):
    dom = Domain(L=L, M=M)
    if q_weights is not None:
        diff = DiffusionSpec(s0=s0, s1=s1, n_modes=n_modes, q_weights=q_weights)
    else:
        diff = DiffusionSpec(s0=s0, s1=s1, n_modes=n_modes, q_power=q_power)
    return ModelSpec(
        dom=dom,
        friction=FrictionSpec.lorentzian(a, b),
        reaction=ReactionSpec.arctan_sine(kappa, beta),
        diffusion=diff,
    )


@pytest.fixture
def default_model():
    """The shipped desk-scale coefficient set."""
    return build_model()


@pytest.fixture
def linear_model():
    """Constant friction, no reaction, additive noise: everything closed form."""
    return build_model(a=1.0, b=0.0, kappa=0.0, beta=0.0, s0=0.2, s1=0.0)
