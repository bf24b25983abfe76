import io
import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlsa.algorithms import LinearTdSpec, QLearningSpec, StepSchedule, eval_F_f_q, eval_F_f_td, run_iterates, td_noise_functions
from rlsa.errors import DriftViolated, GrowthViolated, NuOutOfRange, RecursionInfeasible, TraceTooShort
from rlsa.markov import StochasticMatrix
from rlsa.mdp import (FeatureMap, InducedChain, Policy, augmented_td_kernel, induce_chain, pair_law,
                      pseudo_contraction_modulus, random_features, random_mdp)
from rlsa.sa import (AnchorSequence, LyapunovP, NoiseDecomposition, build_anchors, check_lyapunov_conditions,
                     check_mds, check_noise_growth, choose_p_for_q, conditional_expectation_G, decompose_noise,
                     fundamental_recursion_check, inv_poly_sum, kernel_power, phi_gradient, phi_value,
                     robbins_siegmund_envelope)
from rlsa.textio import write_anchor_csv
from rlsa.trajectory import PathSpec, sample_iid_pairs, sample_path

SKEW = [[0.9, 0.1], [0.5, 0.5]]


def td_spec(nu=0.8, seed=0):
    ch = induce_chain(random_mdp(5, 1, 0.9, seed=seed), Policy.uniform(5, 1))
    return LinearTdSpec(ch, random_features(5, 3, seed=seed), StepSchedule.inv_poly(nu))


def td_markov_run(spec, horizon, seed=3):
    K = augmented_td_kernel(spec.chain)
    init = (np.full(5, 0.2)[:, None] * spec.chain.P_pi.rows).ravel()
    path = sample_path(PathSpec(K, init, horizon, seed)).states
    return K, path, run_iterates(spec, path, range(horizon + 1)).iterates


# ------------------------------------------------------------------ Lyapunov

def test_phi_examples():
    assert phi_value(4, np.zeros(3)) == 0.0
    assert phi_value(2, [3.0, 4.0]) == 12.5
    np.testing.assert_allclose(phi_value(4, [1.0, 1.0]), 0.5 * math.sqrt(2.0), rtol=1e-15)
    np.testing.assert_array_equal(phi_gradient(8, np.zeros(4)), 0.0)
    with pytest.raises(ValueError):
        LyapunovP(1.5)


def test_phi_large_p_no_overflow():
    x = np.array([1e100, -3e99])  # |x|^128 alone would overflow
    assert np.isfinite(phi_value(128, x))
    np.testing.assert_allclose(phi_value(1024, [2.0, 1.0]), 2.0, rtol=1e-12)


def test_gradient_p2_is_identity():
    x = np.random.default_rng(0).normal(size=7)
    np.testing.assert_array_equal(phi_gradient(2, x), x)


@pytest.mark.parametrize("p", [2, 4, 8, 16])
def test_gradient_central_differences(p):
    gen = np.random.default_rng(p)
    h = 1e-6
    for _ in range(100):
        x = gen.normal(size=4)
        num = np.array([(phi_value(p, x + h * e) - phi_value(p, x - h * e)) / (2 * h) for e in np.eye(4)])
        g = phi_gradient(p, x)
        assert np.linalg.norm(g - num) <= 1e-5 * np.linalg.norm(g)


def test_euler_identity_and_norm_sandwich():
    gen = np.random.default_rng(1)
    for p in (2.0, 3.0, 4.0, 16.0):
        for _ in range(250):
            x = gen.normal(size=5) * gen.exponential()
            ph = phi_value(p, x)
            np.testing.assert_allclose(phi_gradient(p, x) @ x, 2 * ph, rtol=1e-10)
            n2 = np.linalg.norm(x)
            assert math.sqrt(2 * ph) <= n2 * (1 + 1e-12)
            assert n2 <= 5 ** (0.5 - 1 / p) * math.sqrt(2 * ph) * (1 + 1e-12)
            np.testing.assert_allclose(math.sqrt(2 * ph), np.linalg.norm(x, p), rtol=1e-12)


def test_lyapunov_report_td():
    spec = td_spec()
    _, f = eval_F_f_td(spec)
    rep = check_lyapunov_conditions(LyapunovP(2), f, spec.fixed_point, sample_count=2000)
    lam = np.linalg.eigvalsh(-(spec.td.A + spec.td.A.T) / 2).min()
    # phi = |x|^2 / 2, so the fitted rate is twice the quadratic-form rate
    assert rep.drift_eta >= 2 * lam * (1 - 1e-9) > 0
    np.testing.assert_allclose(rep.smoothness_C, 0.5, rtol=1e-9)
    nc = rep.norm_equiv_constants
    np.testing.assert_allclose([nc["grad_dot_x_over_phi_min"], nc["grad_dot_x_over_phi_max"]], 2.0, rtol=1e-10)
    assert rep.extras["phi_zero_at_origin"] and rep.extras["phi_positive_off_origin"]
    assert rep.witnesses["drift"] is not None
    assert rep.passed


def test_zero_drift_raises():
    with pytest.raises(DriftViolated):
        check_lyapunov_conditions(LyapunovP(2), lambda x: x, np.zeros(3), sample_count=50)
    rep = check_lyapunov_conditions(LyapunovP(2), lambda x: x, np.zeros(3), sample_count=50,
                                    raise_on_violation=False)
    assert rep.drift_eta == 0.0 and not rep.passed


def test_lyapunov_report_q_with_chosen_p():
    m = random_mdp(2, 2, 0.8, seed=1)
    spec = QLearningSpec(m, Policy.uniform(2, 2), StepSchedule.inv_poly(0.8))
    _, fq = eval_F_f_q(spec)
    gp = pseudo_contraction_modulus(m, spec.behavior_policy, spec.chain.d_pi, spec.q_star)
    p, eta = choose_p_for_q(4, gp)
    rep = check_lyapunov_conditions(LyapunovP(p), lambda x: fq(x.reshape(2, 2)).ravel(), spec.q_star.ravel())
    assert eta > 0 and rep.drift_eta > 0


def test_choose_p_examples():
    p, eta = choose_p_for_q(1, 0.7)
    assert p == 2 and eta == pytest.approx(0.3, abs=1e-15)
    p, eta = choose_p_for_q(4, 0.9)
    assert p == 32
    assert 0.9 * 4 ** (1 / 32) <= 0.95
    assert 0.9 * 4 ** (1 / 16) > 0.95


@given(st.integers(1, 10_000), st.floats(0.0, 0.999))
def test_choose_p_eta_bound(n, gp):
    p, eta = choose_p_for_q(n, gp)
    assert p >= 2 and math.log2(p) == int(math.log2(p))
    assert eta >= (1 - gp) / 2 - 1e-12


# ------------------------------------------------------------------- anchors

def test_anchor_exponent_for_nu_08():
    a = build_anchors(StepSchedule.inv_poly(0.8, 2), 10)
    np.testing.assert_allclose(a.exponent_a, 0.5 * (2 / 1.2 + 2.5), rtol=1e-15)
    np.testing.assert_allclose(a.exponent_a, 2.0833333333333335, rtol=1e-12)
    assert a.anchors[0] == 0


def test_anchor_inequality_for_many_anchors():
    a = build_anchors(StepSchedule.inv_poly(0.8, 2), 10_000)
    assert np.all(np.diff(a.anchors) > 0)
    assert a.holds_with(a.C)
    assert np.isfinite(a.C) and a.C > 0
    ev = a.evidence
    assert ev["sum_beta_sq"] < ev["sum_beta"]
    # beta_m^2 is summable: the second-half increment shrinks as M grows
    small = build_anchors(StepSchedule.inv_poly(0.8, 2), 100).evidence
    assert ev["beta_sq_tail_increment"] < small["beta_sq_tail_increment"]
    assert ev["ratio_max_second_half"] <= ev["ratio_max_first_half"]


@pytest.mark.parametrize("nu", [0.7, 0.75, 0.8, 0.9, 0.95])
def test_anchor_inequality_across_nu(nu):
    a = build_anchors(StepSchedule.inv_poly(nu, 2), 300)
    assert a.holds_with(a.C)
    lo, hi = 2 / (2 - nu), 1 / (2 * (1 - nu))
    assert lo < a.exponent_a < hi
    # the ratio stays bounded: second-half max does not exceed the overall constant
    assert a.evidence["ratio_max_second_half"] <= a.C


@pytest.mark.parametrize("nu", [2 / 3, 0.5, 1.0])
def test_anchor_nu_out_of_range(nu):
    with pytest.raises(NuOutOfRange):
        build_anchors(StepSchedule.inv_poly(nu, 2), 10)


def test_declared_anchor_constant_checked():
    s = StepSchedule.inv_poly(0.8, 2)
    a = build_anchors(s, 50)
    assert build_anchors(s, 50, C=a.C * 1.01).C == a.C * 1.01
    with pytest.raises(ValueError):
        build_anchors(s, 50, C=a.C * 0.5)


@pytest.mark.parametrize("nu,off,a,b", [(0.8, 2, 0, 10), (0.8, 2, 5, 50_000), (0.7, 2, 0, 3_000_000),
                                        (0.95, 1, 123, 10**9), (0.75, 2, 4_000_000, 9_000_000)])
def test_inv_poly_sum_against_hurwitz_zeta(nu, off, a, b):
    mpmath.mp.dps = 40
    exact = mpmath.zeta(nu, a + off) - mpmath.zeta(nu, b + off)
    np.testing.assert_allclose(inv_poly_sum(nu, off, a, b), float(exact), rtol=1e-12)


def test_anchor_from_times_and_csv():
    s = StepSchedule.inv_poly(0.6, 2)
    a = AnchorSequence.from_times(range(6), s)
    np.testing.assert_array_equal(a.betas, s.alphas(5))
    with pytest.raises(ValueError):
        AnchorSequence.from_times([1, 2], s)
    buf = io.StringIO()
    write_anchor_csv(build_anchors(StepSchedule.inv_poly(0.8, 2), 4), buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 5
    assert lines[1].split(",")[:2] == ["0", "0"]


# ---------------------------------------------------- conditional expectation

def enumerate_expectation(P, y0, k, G, w):
    n = P.shape[0]
    acc = 0.0
    for path in itertools.product(range(n), repeat=k):
        prob, prev = 1.0, y0
        for y in path:
            prob *= P[prev, y]
            prev = y
        acc = acc + prob * np.asarray(G(w, path[-1]))
    return acc


def test_conditional_expectation_examples():
    G = lambda w, y: np.array([w[0] * (y + 1.0), y ** 2])
    w = np.array([2.0])
    np.testing.assert_array_equal(conditional_expectation_G([[1.0]], 0, 4, G, w), G(w, 0))
    P = np.array(SKEW)
    np.testing.assert_allclose(conditional_expectation_G(P, 1, 1, G, w), 0.5 * G(w, 0) + 0.5 * G(w, 1))
    with pytest.raises(ValueError):
        conditional_expectation_G(P, 0, 0, G, w)


def test_conditional_expectation_matches_path_enumeration():
    gen = np.random.default_rng(7)
    for n in (2, 3, 4):
        M = gen.random((n, n)) + 0.05
        P = M / M.sum(axis=1, keepdims=True)
        coef = gen.normal(size=(n, 2))
        G = lambda w, y: coef[y] * w + np.sin(y + w)
        for k in range(1, 6):
            for _ in range(20):
                w = gen.normal(size=2)
                y0 = int(gen.integers(n))
                np.testing.assert_allclose(conditional_expectation_G(P, y0, k, G, w),
                                           enumerate_expectation(P, y0, k, G, w), rtol=0, atol=1e-12)


def test_kernel_power_cache_is_read_only():
    K = StochasticMatrix(np.array(SKEW))
    P5 = kernel_power(K, 5)
    np.testing.assert_allclose(P5, np.linalg.matrix_power(np.array(SKEW), 5), atol=1e-15)
    assert kernel_power(K, 5) is P5
    with pytest.raises(ValueError):
        P5[0, 0] = 1.0


# ------------------------------------------------------- noise decomposition

def test_reconstruction_and_mds_on_td_run():
    spec = td_spec()
    anchors = build_anchors(spec.schedule, 50)
    K, path, W = td_markov_run(spec, anchors.anchors[-1])
    G, g = td_noise_functions(spec)
    dec = decompose_noise(W, path, anchors, G, g, K, spec.schedule)
    assert dec.reconstruction_residual < 1e-9
    np.testing.assert_allclose(dec.betas, anchors.betas, rtol=1e-12)
    res = check_mds(dec, K, G, mc_samples=10_000, seed=1)
    assert res.analytic_violation <= 1e-10
    assert res.mc_max_z <= 3.0
    assert res.passed


def test_growth_constants_on_td_run():
    spec = td_spec()
    anchors = build_anchors(spec.schedule, 100)
    K, path, W = td_markov_run(spec, anchors.anchors[-1], seed=5)
    G, g = td_noise_functions(spec)
    dec = decompose_noise(W, path, anchors, G, g, K, spec.schedule)
    C1, C2 = check_noise_growth(dec)
    assert 0 < C1 < 1e3 and 0 < C2 < 1e3


def test_mislagged_centering_is_detected():
    ch = InducedChain.from_mrp(SKEW, [1.0, 0.0], 0.9)
    spec = LinearTdSpec(ch, FeatureMap(np.array([[1.0], [-1.0]])), StepSchedule.inv_poly(0.8, 2))
    K = augmented_td_kernel(ch)
    anchors = build_anchors(spec.schedule, 8)
    T = anchors.anchors[-1]
    path = sample_path(PathSpec(K, (np.array([0.0, 1.0])[:, None] * ch.P_pi.rows).ravel(), T, 2)).states
    W = run_iterates(spec, path, range(T + 1)).iterates
    G, g = td_noise_functions(spec)
    good = decompose_noise(W, path, anchors, G, g, K, spec.schedule)
    bad = decompose_noise(W, path, anchors, G, g, K, spec.schedule, lag_offset=1)
    assert check_mds(good, K, G, seed=4).passed
    res = check_mds(bad, K, G, seed=4, mc_anchors=[0, 1])
    assert res.analytic_violation > 1e-3
    assert res.mc_max_z > 3.0
    # the reconstruction is an identity whatever centering is used
    assert bad.reconstruction_residual < 1e-9


def test_iid_degenerate_anchors_have_no_bias():
    spec = td_spec(nu=0.6)
    law = pair_law(spec.chain)
    K = StochasticMatrix(np.tile(law, (law.size, 1)))
    pairs = sample_iid_pairs(spec.chain.d_pi, spec.chain.P_pi, 201, 8)
    y = pairs[:, 0] * 5 + pairs[:, 1]
    W = run_iterates(spec, y, range(201)).iterates
    G, g = td_noise_functions(spec)
    anchors = AnchorSequence.from_times(range(201), spec.schedule)
    dec = decompose_noise(W, y, anchors, G, g, K, spec.schedule)
    np.testing.assert_allclose(dec.e2, 0.0, atol=1e-9)
    assert dec.reconstruction_residual < 1e-9
    assert check_mds(dec, K, G, seed=2).passed


def test_one_state_chain_has_no_martingale_noise():
    ch = InducedChain.from_mrp([[1.0]], [1.0], 0.9)
    spec = LinearTdSpec(ch, FeatureMap(np.ones((1, 1))), StepSchedule.inv_poly(0.8))
    anchors = build_anchors(spec.schedule, 10)
    T = anchors.anchors[-1]
    y = np.zeros(T + 1, dtype=np.int64)
    W = run_iterates(spec, y, range(T + 1)).iterates
    G, g = td_noise_functions(spec)
    dec = decompose_noise(W, y, anchors, G, g, [[1.0]], spec.schedule)
    np.testing.assert_array_equal(dec.e1, 0.0)
    assert check_mds(dec, [[1.0]], G, mc_samples=100).passed


class ZeroSteps:
    def alphas(self, n):
        return np.zeros(n)


def test_zero_steps_give_zero_noise():
    spec = td_spec()
    zero = ZeroSteps()
    anchors = AnchorSequence(tuple(range(0, 41, 4)), np.ones(10), None, np.zeros(10), 0.0, zero)
    K, path, _ = td_markov_run(spec, 40)
    W = np.tile(spec.w0, (41, 1))
    G, g = td_noise_functions(spec)
    dec = decompose_noise(W, path, anchors, G, g, K, zero)
    np.testing.assert_array_equal(dec.e1, 0.0)
    np.testing.assert_array_equal(dec.e2, 0.0)
    np.testing.assert_array_equal(dec.skeleton_iterates, np.tile(spec.w0, (11, 1)))


def test_short_trace_raises():
    spec = td_spec()
    anchors = build_anchors(spec.schedule, 20)
    K, path, W = td_markov_run(spec, 50)
    G, g = td_noise_functions(spec)
    with pytest.raises(TraceTooShort):
        decompose_noise(W, path, anchors, G, g, K, spec.schedule)


def fake_decomp(e1, e2, betas):
    M, d = e1.shape
    return NoiseDecomposition(e1, e2, np.zeros((M + 1, d)), np.zeros((M, d)), tuple(range(M + 1)),
                              np.zeros(M, dtype=np.int64), betas, betas, 0, 0.0)


def test_growth_examples():
    b = 1.0 / (np.arange(200) + 2.0) ** 0.8
    assert check_noise_growth(fake_decomp(np.zeros((200, 2)), np.zeros((200, 2)), b)) == (0.0, 0.0)
    with pytest.raises(GrowthViolated):
        check_noise_growth(fake_decomp(np.zeros((200, 2)), np.ones((200, 2)), b), cap=1e2)
    b = 1.0 / (np.arange(10_000) + 2.0)
    with pytest.raises(GrowthViolated):
        check_noise_growth(fake_decomp(np.zeros((10_000, 1)), np.ones((10_000, 1)), b))


# ------------------------------------------------- Robbins-Siegmund envelope

T_HARMONIC = StepSchedule.inv_poly(1.0, 2)


def test_envelope_pure_contraction():
    final, trace = robbins_siegmund_envelope(3.0, T_HARMONIC, 0.0, 100)
    np.testing.assert_allclose(final, 3.0 / 101, rtol=1e-12)
    np.testing.assert_allclose(trace, 3.0 / (np.arange(101) + 1.0), rtol=1e-12)
    final, trace = robbins_siegmund_envelope(0.0, T_HARMONIC, 0.0, 50)
    np.testing.assert_array_equal(trace, 0.0)


def test_envelope_with_noise_term_decays():
    final, _ = robbins_siegmund_envelope(1.0, T_HARMONIC, 1.0, 1_000_000)
    assert final < 1e-4


def test_envelope_input_forms_agree():
    a = robbins_siegmund_envelope(2.0, T_HARMONIC, 0.5, 200)[1]
    b = robbins_siegmund_envelope(2.0, lambda n: 1.0 / (n + 2), 0.5, 200)[1]
    c = robbins_siegmund_envelope(2.0, 1.0 / (np.arange(200) + 2.0), 0.5, 200)[1]
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    with pytest.raises(ValueError):
        robbins_siegmund_envelope(-1.0, T_HARMONIC, 0.5, 3)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.floats(0.5, 1.0))
def test_envelope_monotone_in_C(z0, c_lo, extra, nu):
    s = StepSchedule.inv_poly(nu, 2)
    _, lo = robbins_siegmund_envelope(z0, s, c_lo, 300)
    _, hi = robbins_siegmund_envelope(z0, s, c_lo + extra, 300)
    assert np.all(hi >= lo)


# ---------------------------------------------------------------- recursion

def test_recursion_at_fixed_point():
    b = build_anchors(StepSchedule.inv_poly(0.8, 2), 30).betas
    fit = fundamental_recursion_check(np.zeros(31), np.zeros((30, 2)), np.zeros((30, 2)), b)
    assert fit.C2 == 0.0 and fit.C1 > 0 and fit.n0 == 0


def test_recursion_noiseless_td():
    spec = td_spec()
    _, f = eval_F_f_td(spec)
    b = 0.05 / (np.arange(200) + 2.0) ** 0.8
    x = [np.array([3.0, -2.0, 1.0])]
    for bm in b:
        x.append(x[-1] + bm * (f(x[-1]) - x[-1]))
    d = np.array(x) - spec.fixed_point
    phi = np.array([phi_value(2, v) for v in d])
    fit = fundamental_recursion_check(phi, np.zeros((200, 3)), np.array([phi_gradient(2, v) for v in d[:-1]]), b)
    lam = np.linalg.eigvalsh(-(spec.td.A + spec.td.A.T) / 2).min()
    assert fit.C1 > 0 and fit.n0 == 0
    assert fit.C2 < 1.0
    # the decrease rate fitted on phi is at least the quadratic-form rate
    assert fit.C1 >= 2 * lam * 0.99


def test_recursion_doubling_is_infeasible():
    b = build_anchors(StepSchedule.inv_poly(0.8, 2), 60).betas
    phi = 2.0 ** np.arange(61)
    with pytest.raises(RecursionInfeasible):
        fundamental_recursion_check(phi, np.zeros((60, 1)), np.zeros((60, 1)), b)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.integers(0, 2**31))
def test_recursion_fit_is_sound(M, seed):
    gen = np.random.default_rng(seed)
    b = gen.uniform(0.01, 0.5, M)
    phi = gen.exponential(size=M + 1)
    e1 = gen.normal(size=(M, 2))
    gp = gen.normal(size=(M, 2))
    fit = fundamental_recursion_check(phi, e1, gp, b)
    sl = slice(fit.n0, M)
    rhs = (1 - fit.C1 * b) * phi[:-1] + (gp * e1).sum(axis=1) + fit.C2 * b ** 2
    assert np.all(phi[1:][sl] <= rhs[sl] + 1e-9 * (1 + np.abs(rhs[sl])))
