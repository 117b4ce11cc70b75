import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from limitfield.kernels import (
    TRIANGULAR,
    UNIFORM,
    AffinePiece,
    Kernel,
    KernelError,
    MaxFunction,
    SmoothScalarKernel,
    abs_function,
    build_envelope,
    closed_form_kernel,
    conv_smooth,
    eval_max,
    lipschitz_bound,
    plus_function,
)
from oracles import brute_max, quad_smooth, triangular_density, uniform_density

THREE = [(0.0, 0.0), (1.0, 0.0), (2.0, -1.0)]


def random_pieces(rng, k_max=10):
    k = int(rng.integers(1, k_max + 1))
    return [tuple(v) for v in rng.uniform(-5, 5, (k, 2))]


class TestEnvelope:
    def test_abs(self):
        p = build_envelope([(1, 0), (-1, 0)])
        assert p.pieces == (AffinePiece(-1, 0), AffinePiece(1, 0))
        assert p.breakpoints == (0.0,)

    def test_single_piece(self):
        p = build_envelope([(1, 0)])
        assert len(p.pieces) == 1 and p.breakpoints == ()

    def test_three_pieces(self):
        p = build_envelope(THREE)
        assert [(q.slope, q.intercept) for q in p.pieces] == THREE
        assert p.breakpoints == (0.0, 1.0)
        t = np.linspace(-3, 3, 60001)
        assert np.max(np.abs(eval_max(p, t) - brute_max(THREE, t))) <= 1e-12

    def test_dominated_and_tied_pieces_removed(self):
        p = build_envelope([(0, 0), (0, 1), (1, -10), (2, 0), (0.5, -100)])
        assert [q.slope for q in p.pieces] == [0.0, 2.0]
        assert p.pieces[0].intercept == 1.0

    def test_empty(self):
        with pytest.raises(KernelError, match="empty max-function"):
            build_envelope([])

    def test_nonfinite_rejected(self):
        with pytest.raises(KernelError):
            AffinePiece(math.nan, 0.0)

    def test_random_envelopes_match_brute_force(self):
        rng = np.random.default_rng(1)
        t = np.linspace(-10, 10, 1000)
        for _ in range(200):
            pieces = random_pieces(rng)
            p = build_envelope(pieces)
            slopes = [q.slope for q in p.pieces]
            assert all(s1 < s2 for s1, s2 in zip(slopes, slopes[1:]))
            assert all(b1 < b2 for b1, b2 in zip(p.breakpoints, p.breakpoints[1:]))
            for b, q1, q2 in zip(p.breakpoints, p.pieces, p.pieces[1:]):
                assert q1(b) == pytest.approx(q2(b), abs=1e-9)
            assert np.max(np.abs(eval_max(p, t) - brute_max(pieces, t))) <= 1e-12

    def test_json_roundtrip(self):
        p = build_envelope(THREE)
        assert MaxFunction.from_json(p.to_json()) == p


class TestEvalMax:
    def test_abs(self):
        assert eval_max(abs_function(), -2.0) == 2.0

    def test_single(self):
        assert eval_max(build_envelope([(3, 1)]), 2.0) == 7.0

    def test_three(self):
        assert eval_max(build_envelope(THREE), 0.5) == brute_max(THREE, 0.5) == 0.5


class TestKernelDensities:
    def test_constants(self):
        assert UNIFORM.half_width == 0.5 and TRIANGULAR.half_width == 1.0
        assert UNIFORM.abs_moment == 0.25
        assert TRIANGULAR.abs_moment == pytest.approx(1 / 3)

    @pytest.mark.parametrize("k", [UNIFORM, TRIANGULAR])
    def test_cdf_and_moment_consistent_with_density(self, k):
        u = np.linspace(-k.half_width, k.half_width, 20001)
        dens = k.density(u)
        cdf = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(u))])
        assert np.max(np.abs(cdf - k.cdf(u))) < 1e-6
        mom = np.concatenate([[0], np.cumsum(0.5 * (u[1:] * dens[1:] + u[:-1] * dens[:-1]) * np.diff(u))])
        assert np.max(np.abs(mom + k.first_moment(-k.half_width) - k.first_moment(u))) < 1e-6

    def test_roundtrip_kind(self):
        assert Kernel("triangular") == TRIANGULAR


class TestConvSmooth:
    def test_plus_at_zero(self):
        assert conv_smooth(plus_function(), UNIFORM, 0.0, 1.0)[0] == pytest.approx(0.125, abs=1e-15)

    def test_plus_outside_band(self):
        assert conv_smooth(plus_function(), UNIFORM, 1.0, 1.0)[0] == pytest.approx(1.0, abs=1e-15)

    def test_three_piece_triangular_against_quadrature(self):
        # frozen from quad_smooth(THREE, triangular, t=0.3, a=0.2)
        value, _ = conv_smooth(build_envelope(THREE), TRIANGULAR, 0.3, 0.2)
        assert value == pytest.approx(0.3, abs=1e-8)
        assert value == pytest.approx(quad_smooth(THREE, triangular_density, 1.0, 0.3, 0.2), abs=1e-8)

    @pytest.mark.parametrize("t", [-0.7, -0.05, 0.0, 0.45, 0.9, 1.05, 2.5])
    @pytest.mark.parametrize("a", [1.0, 0.3])
    def test_three_piece_both_kernels_against_quadrature(self, t, a):
        p = build_envelope(THREE)
        for k, dens in ((UNIFORM, uniform_density), (TRIANGULAR, triangular_density)):
            ref = quad_smooth(THREE, dens, k.half_width, t, a)
            assert conv_smooth(p, k, t, a)[0] == pytest.approx(ref, abs=1e-8)

    def test_nonpositive_parameter(self):
        with pytest.raises(KernelError, match="parameter must be positive"):
            conv_smooth(plus_function(), UNIFORM, 0.0, 0.0)

    def test_matches_huber_plus(self):
        t = np.linspace(-2, 2, 1000)
        for a in (1.0, 0.1, 0.01):
            v, d = conv_smooth(plus_function(), UNIFORM, t, a)
            w, e = closed_form_kernel("huber_plus", t, a)
            assert np.max(np.abs(v - w)) <= 1e-12
            assert np.max(np.abs(d - e)) <= 1e-12

    @pytest.mark.parametrize("k", [UNIFORM, TRIANGULAR])
    def test_derivative_matches_finite_differences(self, k):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(20):
            p = build_envelope(random_pieces(rng, 6))
            a = float(rng.uniform(0.05, 1.0))
            t = rng.uniform(-4, 4, 200)
            # stay away from points where t - a u hits a breakpoint at the support edge
            edges = np.array([b + s * a * k.half_width for b in p.breakpoints for s in (-1, 1)] + list(p.breakpoints))
            if len(edges):
                t = t[np.min(np.abs(t[:, None] - edges[None, :]), axis=1) > 1e-3]
            _, d = conv_smooth(p, k, t, a)
            fd = (conv_smooth(p, k, t + h, a)[0] - conv_smooth(p, k, t - h, a)[0]) / (2 * h)
            assert np.all(np.abs(fd - d) <= 1e-6 * np.maximum(1.0, np.abs(d)))

    @pytest.mark.parametrize("k", [UNIFORM, TRIANGULAR])
    def test_uniform_error_bound(self, k):
        p = build_envelope(THREE)
        t = np.linspace(-5, 5, 4001)
        for a in (1.0, 0.1, 0.01):
            err = np.max(np.abs(conv_smooth(p, k, t, a)[0] - eval_max(p, t)))
            assert err <= a * lipschitz_bound(p) * k.abs_moment + 1e-12

    def test_sup_derivative_approaches_lipschitz_bound(self):
        p = build_envelope(THREE)
        t = np.linspace(-5, 5, 4001)
        d = np.abs(conv_smooth(p, TRIANGULAR, t, 0.1)[1])
        assert np.max(d) <= lipschitz_bound(p) + 1e-9
        assert np.max(d) >= lipschitz_bound(p) - 1e-9


@settings(max_examples=60, deadline=None)
@given(
    pieces=st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=10),
    a=st.floats(1e-3, 2.0),
)
def test_smoothed_derivative_bounded_by_max_slope(pieces, a):
    p = build_envelope(pieces)
    t = np.linspace(-12, 12, 500)
    for k in (UNIFORM, TRIANGULAR):
        _, d = conv_smooth(p, k, t, a)
        assert np.max(np.abs(d)) <= lipschitz_bound(p) + 1e-9


class TestClosedForms:
    def test_sqrt_plus(self):
        assert closed_form_kernel("sqrt_plus", 0.0, 1.0) == (1.0, 0.5)

    def test_soft_plus(self):
        assert closed_form_kernel("soft_plus", 0.0, 1.0)[0] == pytest.approx(math.log(2), abs=1e-15)

    def test_huber_abs(self):
        assert closed_form_kernel("huber_abs", 0.0, 0.4) == (pytest.approx(0.2), 0.0)

    def test_soft_plus_no_overflow(self):
        v, d = closed_form_kernel("soft_plus", np.array([-1e4, 1e4]), 1.0)
        assert np.all(np.isfinite(v)) and v[1] == pytest.approx(1e4) and d[1] == 1.0

    def test_nonpositive_parameter(self):
        with pytest.raises(KernelError):
            closed_form_kernel("huber_abs", 0.0, -1.0)

    @pytest.mark.parametrize("kind", ["huber_plus", "sqrt_plus", "soft_plus", "huber_abs", "sqrt_abs"])
    def test_c1_and_convergence(self, kind):
        t = np.linspace(-3, 3, 601) + 1e-3
        h = 1e-6
        for a in (1.0, 0.1):
            v, d = closed_form_kernel(kind, t, a)
            fd = (closed_form_kernel(kind, t + h, a)[0] - closed_form_kernel(kind, t - h, a)[0]) / (2 * h)
            assert np.all(np.abs(fd - d) <= 1e-6 * np.maximum(1, np.abs(d)))
        k = SmoothScalarKernel(kind)
        errs = [np.max(np.abs(k(t, a)[0] - k.target(t))) for a in (1e-1, 1e-2, 1e-3)]
        assert errs[0] > errs[1] > errs[2] and errs[2] < 5e-3

    def test_conv_max_kernel_json(self):
        k = SmoothScalarKernel("conv_max", build_envelope(THREE), TRIANGULAR)
        k2 = SmoothScalarKernel.from_json(k.to_json())
        assert k2 == k
        assert k2(0.3, 0.2) == k(0.3, 0.2)


class TestLipschitz:
    def test_values(self):
        assert lipschitz_bound(abs_function()) == 1
        assert lipschitz_bound(build_envelope([(2, 0), (-1, 0)])) == 2
        assert lipschitz_bound(build_envelope(THREE)) == 2
