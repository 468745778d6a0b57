"""Transforms, eigenvalues, Sobolev norms, and the tridiagonal solver."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skwsim.grid import (
    Domain,
    Field,
    TridiagonalSolveError,
    discrete_eigenvalue,
    dst_forward,
    dst_inverse,
    l2_inner,
    laplacian_apply,
    sample_mode,
    sobolev_norm,
    solve_tridiagonal,
)

# closed form (4/h^2) sin^2(i pi h / (2L)), evaluated by hand
ALPHA1_PI_M3 = 0.9496412035517837
ALPHA1_PI_M63 = 0.999799218511597
ALPHA2_PI_M63 = 3.996788270156925


def rand_field(dom, rng, scale=1.0):
    return scale * rng.standard_normal(dom.M)


class TestDomain:
    def test_spacing_exact(self):
        dom = Domain(L=np.pi, M=63)
        assert dom.h == np.pi / 64
        assert dom.x.shape == (63,)
        assert dom.x[0] == dom.h

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            Domain(L=0.0, M=16)
        with pytest.raises(ValueError):
            Domain(L=-1.0, M=16)
        with pytest.raises(ValueError):
            Domain(L=1.0, M=2)

    def test_field_validation(self):
        dom = Domain(L=1.0, M=4)
        Field(dom, [0.0, 1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            Field(dom, [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            Field(dom, [np.inf, 0.0, 0.0, 0.0])


class TestDst:
    def test_mode_one_is_unit_vector(self):
        dom = Domain(L=np.pi, M=63)
        c = dst_forward(dom, sample_mode(dom, 1))
        expect = np.zeros(63)
        expect[0] = 1.0
        assert np.max(np.abs(c - expect)) < 1e-12

    def test_zero_maps_to_zero(self):
        dom = Domain(L=np.pi, M=63)
        assert np.all(dst_forward(dom, np.zeros(63)) == 0.0)
        assert np.all(dst_inverse(dom, np.zeros(63)) == 0.0)

    def test_two_mode_mix_against_direct_sum(self):
        # oracle: coefficients recomputed by explicit summation
        dom = Domain(L=np.pi, M=63)
        f = (sample_mode(dom, 1) + sample_mode(dom, 2)) / np.sqrt(2.0)
        c = dst_forward(dom, f)
        oracle = np.array(
            [
                dom.h * np.sum(f * np.sqrt(2.0 / dom.L) * np.sin(i * np.pi * dom.x / dom.L))
                for i in range(1, 64)
            ]
        )
        assert np.max(np.abs(c - oracle)) < 1e-12
        assert abs(c[0] - 1.0 / np.sqrt(2.0)) < 1e-12
        assert abs(c[1] - 1.0 / np.sqrt(2.0)) < 1e-12
        assert np.max(np.abs(c[2:])) < 1e-12

    def test_coefficient_unit_vector_reconstructs_mode(self):
        dom = Domain(L=np.pi, M=31)
        c = np.zeros(31)
        c[0] = 1.0
        assert np.max(np.abs(dst_inverse(dom, c) - sample_mode(dom, 1))) < 1e-12

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_round_trip(self, seed):
        dom = Domain(L=np.pi, M=17)
        f = np.random.default_rng(seed).standard_normal(17)
        back = dst_inverse(dom, dst_forward(dom, f))
        assert np.max(np.abs(back - f)) < 1e-12

    @pytest.mark.parametrize("M", [15, 63, 127])
    def test_parseval(self, M):
        dom = Domain(L=np.pi, M=M)
        rng = np.random.default_rng(M)
        for _ in range(5):
            f = rand_field(dom, rng)
            c = dst_forward(dom, f)
            lhs = np.sum(c**2)
            rhs = l2_inner(dom, f, f)
            assert abs(lhs - rhs) < 1e-12 * max(rhs, 1.0)

    def test_fft_path_matches_direct(self):
        dom = Domain(L=2.5, M=63)
        rng = np.random.default_rng(5)
        f = rand_field(dom, rng)
        assert np.max(np.abs(dst_forward(dom, f, "fft") - dst_forward(dom, f))) < 1e-12
        c = rng.standard_normal(63)
        assert np.max(np.abs(dst_inverse(dom, c, "fft") - dst_inverse(dom, c))) < 1e-12

    def test_unknown_method_rejected(self):
        dom = Domain(L=1.0, M=7)
        with pytest.raises(ValueError):
            dst_forward(dom, np.zeros(7), method="wavelet")

    def test_batched_input(self):
        dom = Domain(L=np.pi, M=15)
        f = np.random.default_rng(0).standard_normal((4, 15))
        c = dst_forward(dom, f)
        assert c.shape == (4, 15)
        for k in range(4):
            assert np.max(np.abs(c[k] - dst_forward(dom, f[k]))) < 1e-14


class TestEigenvalues:
    def test_hand_value_small_grid(self):
        dom = Domain(L=np.pi, M=3)
        assert abs(discrete_eigenvalue(dom, 1) - ALPHA1_PI_M3) < 1e-15

    def test_continuum_limit(self):
        # alpha_1 -> 1 on (0, pi); defect is O(h^2)
        prev_gap = None
        for M in (63, 127, 255, 2047):
            gap = abs(discrete_eigenvalue(Domain(L=np.pi, M=M), 1) - 1.0)
            if prev_gap is not None:
                assert gap < prev_gap / 3.5
            prev_gap = gap
        assert prev_gap < 1e-6

    def test_strictly_increasing(self):
        dom = Domain(L=np.pi, M=63)
        assert np.all(np.diff(dom.eigenvalues) > 0)

    def test_out_of_range_index(self):
        dom = Domain(L=np.pi, M=8)
        with pytest.raises(ValueError):
            discrete_eigenvalue(dom, 0)
        with pytest.raises(ValueError):
            discrete_eigenvalue(dom, 9)
        with pytest.raises(ValueError):
            sample_mode(dom, 9)


class TestSobolevNorm:
    def test_single_mode_hm1(self):
        dom = Domain(L=np.pi, M=63)
        want = discrete_eigenvalue(dom, 1) ** -0.5
        assert abs(sobolev_norm(dom, sample_mode(dom, 1), -1.0) - want) < 1e-12

    def test_zero_field(self):
        dom = Domain(L=np.pi, M=15)
        for delta in (-1.0, 0.0, 1.0):
            assert sobolev_norm(dom, np.zeros(15), delta) == 0.0

    def test_two_mode_h1_oracle(self):
        dom = Domain(L=np.pi, M=63)
        f = sample_mode(dom, 1) + sample_mode(dom, 2)
        got = sobolev_norm(dom, f, 1.0) ** 2
        assert abs(got - (ALPHA1_PI_M63 + ALPHA2_PI_M63)) < 1e-12

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_delta_zero_is_l2(self, seed):
        dom = Domain(L=np.pi, M=31)
        f = np.random.default_rng(seed).standard_normal(31)
        direct = np.sqrt(l2_inner(dom, f, f))
        assert abs(sobolev_norm(dom, f, 0.0) - direct) < 1e-12 * max(direct, 1.0)

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_poincare(self, seed):
        dom = Domain(L=np.pi, M=31)
        f = np.random.default_rng(seed).standard_normal(31)
        a1 = discrete_eigenvalue(dom, 1)
        assert sobolev_norm(dom, f, 0.0) <= a1**-0.5 * sobolev_norm(dom, f, 1.0) * (1 + 1e-12)

    def test_poincare_equality_at_first_mode(self):
        dom = Domain(L=np.pi, M=31)
        e1 = sample_mode(dom, 1)
        a1 = discrete_eigenvalue(dom, 1)
        lhs = sobolev_norm(dom, e1, 0.0)
        rhs = a1**-0.5 * sobolev_norm(dom, e1, 1.0)
        assert abs(lhs - rhs) < 1e-12

    def test_continuum_weights(self):
        dom = Domain(L=np.pi, M=31)
        got = sobolev_norm(dom, sample_mode(dom, 2), 1.0, weights="continuum")
        assert abs(got - 2.0) < 1e-12  # (2 pi / L)^2 = 4 on (0, pi)
        with pytest.raises(ValueError):
            sobolev_norm(dom, np.zeros(31), 1.0, weights="mixed")


class TestLaplacian:
    def test_eigenvector_property(self):
        dom = Domain(L=np.pi, M=63)
        e1 = sample_mode(dom, 1)
        a1 = discrete_eigenvalue(dom, 1)
        assert np.max(np.abs(laplacian_apply(dom, e1) + a1 * e1)) < 1e-10

    def test_zero(self):
        dom = Domain(L=np.pi, M=15)
        assert np.all(laplacian_apply(dom, np.zeros(15)) == 0.0)

    def test_stencil_by_hand(self):
        # M=3, L=4 so h=1; f=(1,0,0) hits the boundary zero on the left
        dom = Domain(L=4.0, M=3)
        got = laplacian_apply(dom, np.array([1.0, 0.0, 0.0]))
        assert np.array_equal(got, np.array([-2.0, 1.0, 0.0]))

    def test_matches_spectral_multiplication(self):
        dom = Domain(L=np.pi, M=63)
        rng = np.random.default_rng(11)
        for _ in range(5):
            f = rand_field(dom, rng)
            via_stencil = laplacian_apply(dom, f)
            via_dst = dst_inverse(dom, -dom.eigenvalues * dst_forward(dom, f))
            assert np.max(np.abs(via_stencil - via_dst)) < 1e-10


class TestSolveTridiagonal:
    def test_identity(self):
        rhs = np.array([3.0, -1.0, 2.0, 0.5])
        x = solve_tridiagonal(np.ones(4), np.zeros(3), np.zeros(3), rhs)
        assert np.max(np.abs(x - rhs)) < 1e-14

    def test_two_by_two_by_hand(self):
        x = solve_tridiagonal(
            np.array([2.0, 2.0]), np.array([1.0]), np.array([1.0]), np.array([3.0, 3.0])
        )
        assert np.max(np.abs(x - 1.0)) < 1e-14

    def test_residual_on_random_spd(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = 50
            sub = rng.standard_normal(m - 1)
            sup = rng.standard_normal(m - 1)
            diag = 1.0 + np.abs(rng.standard_normal(m))
            diag[:-1] += np.abs(sup)
            diag[1:] += np.abs(sub)
            rhs = rng.standard_normal(m)
            x = solve_tridiagonal(diag, sub, sup, rhs)
            resid = diag * x
            resid[:-1] += sup * x[1:]
            resid[1:] += sub * x[:-1]
            assert np.max(np.abs(resid - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(4)
        m = 17
        sub = rng.standard_normal(m - 1)
        sup = rng.standard_normal(m - 1)
        diag = 4.0 + rng.random(m)
        rhs = rng.standard_normal((6, m))
        batch = solve_tridiagonal(diag, sub, sup, rhs)
        for k in range(6):
            single = solve_tridiagonal(diag, sub, sup, rhs[k])
            assert np.max(np.abs(batch[k] - single)) < 1e-12

    def test_tiny_pivot_rejected_batched(self):
        with pytest.raises(TridiagonalSolveError, match="row 1"):
            solve_tridiagonal(
                np.array([[1.0, 1e-16, 1.0]]),
                np.zeros((1, 2)),
                np.zeros((1, 2)),
                np.ones((1, 3)),
            )

    def test_singular_rejected_both_layouts(self):
        diag = np.array([1.0, 0.0, 1.0])
        off = np.zeros(2)
        rhs = np.ones(3)
        with pytest.raises(TridiagonalSolveError):
            solve_tridiagonal(diag, off, off, rhs)
        with pytest.raises(TridiagonalSolveError):
            solve_tridiagonal(diag[None], off[None], off[None], rhs[None])

    def test_broadcast_over_diagonal_batch(self):
        # one shared off-diagonal, per-replica diagonals, as the steppers use it
        rng = np.random.default_rng(9)
        m = 12
        off = np.full(m - 1, -0.25)
        diag = 3.0 + rng.random((5, m))
        rhs = rng.standard_normal((5, m))
        x = solve_tridiagonal(diag, off, off, rhs)
        assert x.shape == (5, m)
        resid = diag * x
        resid[:, :-1] += off * x[:, 1:]
        resid[:, 1:] += off * x[:, :-1]
        assert np.max(np.abs(resid - rhs)) < 1e-10
