"""Numerical laboratory for the small-mass limit of stochastic damped wave
equations with state-dependent friction.

The package simulates the second-order system

    mu * u_tt = Laplace(u) - gamma(u) * u_t + f(x, u) + sigma(u) * dW_Q

on a one-dimensional Dirichlet interval, together with its quasilinear
parabolic limit (in both divergence form and friction form), and provides
the transport, ergodic-sampling, and reporting machinery needed to verify
trajectory convergence, H^-1 contraction, invariant-moment uniformity, and
Wasserstein convergence of stationary marginals at desk scale.
"""

__version__ = "0.1.0"
