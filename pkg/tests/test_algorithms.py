import numpy as np
import pytest

from rlsa import kernels
from rlsa.algorithms import (LinearTdSpec, QLearningSpec, RMClass, StepSchedule, eval_F_f_q, eval_F_f_td,
                             linear_td_step, q_learning_step, robbins_monro_class, run_iterates,
                             tabular_td_step)
from rlsa.errors import HorizonExceeded
from rlsa.mdp import (FeatureMap, InducedChain, MdpSpec, Policy, augmented_q_kernel, augmented_td_kernel,
                      induce_chain, pair_law, random_features, random_mdp, triple_law,
                      value_function, weighted_bellman_apply)
from rlsa.trajectory import PathSpec, sample_path


def td_instance(seed=0, nu=0.8):
    m = random_mdp(5, 1, 0.9, seed=seed)
    ch = induce_chain(m, Policy.uniform(5, 1))
    return LinearTdSpec(ch, random_features(5, 3, seed=seed), StepSchedule.inv_poly(nu))


def q_instance(seed=0, gamma=0.8, nu=0.8):
    m = random_mdp(4, 2, gamma, seed=seed)
    return QLearningSpec(m, Policy.uniform(4, 2), StepSchedule.inv_poly(nu))


def test_schedules():
    s = StepSchedule.inv_poly(0.8, 2)
    np.testing.assert_allclose(s.alphas(3), [2**-0.8, 3**-0.8, 4**-0.8])
    assert s.alpha(5) == 1.0 / 7**0.8
    assert StepSchedule.parse("inv_poly:0.8:2") == s
    assert StepSchedule.parse("constant:0.1") == StepSchedule.constant(0.1)
    assert StepSchedule.parse(s.name()) == s
    with pytest.raises(ValueError):
        StepSchedule.parse("bogus:1")
    with pytest.raises(ValueError):
        StepSchedule.inv_poly(0.8, 0)
    with pytest.raises(HorizonExceeded):
        StepSchedule.explicit([0.5, 0.25]).alphas(3)


def test_robbins_monro_classes():
    assert robbins_monro_class(StepSchedule.inv_poly(0.8, 2)) is RMClass.SATISFIES
    assert robbins_monro_class(StepSchedule.inv_poly(0.4, 2)) is RMClass.FAILS_SQUARE_SUMMABLE
    assert robbins_monro_class(StepSchedule.constant(0.1)) is RMClass.FAILS_SQUARE_SUMMABLE
    assert robbins_monro_class(StepSchedule.inv_poly(1.5, 2)) is RMClass.FAILS_DIVERGENCE
    assert robbins_monro_class(StepSchedule.inv_poly(1.0, 2)) is RMClass.SATISFIES
    assert robbins_monro_class(StepSchedule.explicit([0.1])) is RMClass.UNKNOWN


def test_linear_td_expected_update_vanishes_at_fixed_point():
    spec = td_instance()
    law = pair_law(spec.chain).reshape(5, 5)
    w = spec.fixed_point
    mean = sum(law[s, sp] * (linear_td_step(w, (s, sp), 1.0, spec) - w) for s in range(5) for sp in range(5))
    assert np.abs(mean).max() <= 1e-8


def test_linear_td_trivial_steps():
    spec = td_instance()
    w = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(linear_td_step(w, (1, 2), 0.0, spec), w)
    zero = LinearTdSpec(spec.chain, FeatureMap(np.zeros((5, 3))), spec.schedule, strict=False)
    np.testing.assert_array_equal(linear_td_step(w, (1, 2), 0.7, zero), w)


def test_q_step_examples():
    spec = q_instance()
    m = spec.mdp
    qs = spec.q_star
    for s in range(4):
        for a in range(2):
            inc = sum(m.transition[s, a, sp] * (q_learning_step(qs, (s, a, sp), 1.0, m) - qs)[s, a]
                      for sp in range(4))
            assert abs(inc) <= 1e-8
    q = np.ones((4, 2))
    np.testing.assert_array_equal(q_learning_step(q, (0, 1, 2), 0.0, m), q)
    m0 = MdpSpec(m.reward, m.transition, 0.0, m.init_dist)
    out = q_learning_step(q, (2, 1, 3), 1.0, m0)
    assert out[2, 1] == m.reward[2, 1]
    assert np.count_nonzero(out != q) <= 1


def test_tabular_td_steps():
    ch = InducedChain.from_mrp([[1.0]], [1.0], 0.9)
    np.testing.assert_array_equal(tabular_td_step(np.zeros(1), (0, 0), 1.0, ch), [1.0])
    np.testing.assert_array_equal(tabular_td_step(np.array([2.0]), (0, 0), 0.0, ch), [2.0])
    spec = td_instance()
    v = value_function(spec.chain)
    law = pair_law(spec.chain).reshape(5, 5)
    mean = sum(law[s, sp] * (tabular_td_step(v, (s, sp), 1.0, spec.chain) - v) for s in range(5) for sp in range(5))
    assert np.abs(mean).max() <= 1e-8


def test_F_f_td_consistency():
    spec = td_instance()
    F, f = eval_F_f_td(spec)
    gen = np.random.default_rng(0)
    law = pair_law(spec.chain).reshape(5, 5)
    np.testing.assert_allclose(f(spec.fixed_point), spec.fixed_point, atol=1e-8)
    for _ in range(100):
        w = gen.normal(size=3)
        y = tuple(gen.integers(0, 5, 2))
        alpha = gen.random()
        np.testing.assert_array_equal(linear_td_step(w, y, alpha, spec), w + alpha * (F(w, y) - w))
        avg = sum(law[s, sp] * F(w, (s, sp)) for s in range(5) for sp in range(5))
        np.testing.assert_allclose(avg, f(w), atol=1e-12)


def test_F_f_q_consistency():
    spec = q_instance()
    F, f = eval_F_f_q(spec)
    m, pol, d = spec.mdp, spec.behavior_policy, spec.chain.d_pi
    law = triple_law(m, pol, d).reshape(4, 2, 4)
    gen = np.random.default_rng(1)
    np.testing.assert_allclose(f(spec.q_star), spec.q_star, atol=1e-9)
    for _ in range(100):
        q = gen.normal(size=(4, 2))
        y = (int(gen.integers(4)), int(gen.integers(2)), int(gen.integers(4)))
        assert np.count_nonzero(F(q, y) != q) <= 1
        avg = sum(law[s, a, sp] * F(q, (s, a, sp)) for s in range(4) for a in range(2) for sp in range(4))
        np.testing.assert_allclose(avg, weighted_bellman_apply(m, pol, d, q), atol=1e-12)


def test_run_iterates_checkpoint_zero_and_determinism():
    spec = td_instance()
    K = augmented_td_kernel(spec.chain)
    path = sample_path(PathSpec(K, pair_law(spec.chain), 2000, 5))
    tr = run_iterates(spec, path, [0])
    np.testing.assert_array_equal(tr.iterates[0], spec.w0)
    np.testing.assert_allclose(tr.errors[0], np.linalg.norm(spec.w0 - spec.fixed_point))
    a = run_iterates(spec, path, [0, 10, 2000])
    b = run_iterates(spec, path, [0, 10, 2000])
    np.testing.assert_array_equal(a.iterates, b.iterates)
    with pytest.raises(HorizonExceeded):
        run_iterates(spec, path, [2001])


def test_run_iterates_matches_step_functions():
    # index alignment: step t consumes element t + 1
    spec = td_instance()
    K = augmented_td_kernel(spec.chain)
    path = sample_path(PathSpec(K, pair_law(spec.chain), 300, 9)).states
    w = spec.w0.copy()
    al = spec.schedule.alphas(300)
    for t in range(300):
        w = linear_td_step(w, divmod(int(path[t + 1]), 5), al[t], spec)
    tr = run_iterates(spec, path, [300])
    np.testing.assert_allclose(tr.iterates[-1], w, rtol=1e-13, atol=1e-14)

    qspec = q_instance()
    Kq = augmented_q_kernel(qspec.mdp, qspec.behavior_policy)
    qpath = sample_path(PathSpec(Kq, triple_law(qspec.mdp, qspec.behavior_policy, qspec.chain.d_pi),
                                 300, 9)).states
    q = qspec.q0.copy()
    for t in range(300):
        sa, sp = divmod(int(qpath[t + 1]), 4)
        q_new = q_learning_step(q, (sa // 2, sa % 2, sp), al[t], qspec.mdp)
        assert np.count_nonzero(q_new != q) <= 1
        q = q_new
    np.testing.assert_array_equal(run_iterates(qspec, qpath, [300]).iterates[-1], q)


def test_linear_td_orthogonal_component_is_constant():
    # features span a 1-d subspace of R^2: the component of w orthogonal to it never moves
    ch = induce_chain(random_mdp(3, 1, 0.9, seed=2), Policy.uniform(3, 1))
    X = np.array([[1.0, 2.0], [-0.5, -1.0], [2.0, 4.0]])
    spec = LinearTdSpec(ch, FeatureMap(X), StepSchedule.inv_poly(0.8), w0=np.array([1.0, -3.0]), strict=False)
    path = sample_path(PathSpec(augmented_td_kernel(ch), pair_law(ch), 500, 1))
    tr = run_iterates(spec, path, [0, 50, 500])
    perp = np.array([2.0, -1.0]) / np.sqrt(5.0)
    proj = tr.iterates @ perp
    np.testing.assert_allclose(proj, proj[0], atol=1e-12)


def test_scalar_td_reaches_ten():
    ch = InducedChain.from_mrp([[1.0]], [1.0], 0.9)
    spec = LinearTdSpec(ch, FeatureMap(np.ones((1, 1))), StepSchedule.inv_poly(0.8))
    tr = run_iterates(spec, np.zeros(100_001, dtype=np.int64), [0, 100_000])
    assert abs(tr.iterates[-1, 0] - 10.0) < 0.5


def test_backends_agree_bitwise():
    backs = kernels.backends()
    spec = td_instance()
    K = augmented_td_kernel(spec.chain)
    u = np.random.default_rng(0).random(5001)
    from rlsa.trajectory import categorical_cdf
    cdf, icdf = categorical_cdf(K.rows), categorical_cdf(pair_law(spec.chain))[0]
    paths = [b.sample_path(cdf, icdf, u) for b in backs.values()]
    for p in paths[1:]:
        np.testing.assert_array_equal(p, paths[0])
    y = paths[0]
    s, sp = y // 5, y % 5
    al = spec.schedule.alphas(5000)
    rec = np.array([0, 17, 5000], dtype=np.int64)
    outs = [b.linear_td_run(s, sp, spec.features.X, spec.chain.r_pi, 0.9, al, spec.w0, rec) for b in backs.values()]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])
    qspec = q_instance()
    R = qspec.mdp.reward
    gen = np.random.default_rng(3)
    qs, qa, qsp = gen.integers(0, 4, 5001), gen.integers(0, 2, 5001), gen.integers(0, 4, 5001)
    outs = [b.q_learning_run(qs, qa, qsp, R, 0.8, al, qspec.q0, rec) for b in backs.values()]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])
    T = 1.0 / (np.arange(1000) + 2.0)
    outs = [b.rs_envelope(1.0, T, 0.5) for b in backs.values()]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_pure_python_switch():
    import os
    import subprocess
    import sys
    env = dict(os.environ, RLSA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import rlsa; print(rlsa.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
