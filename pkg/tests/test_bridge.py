import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_factors
from cyclicqm.bridge import (
    BridgeProblem,
    MessagePair,
    backward_transition,
    born_marginal,
    bp_backward,
    bp_forward,
    chain_messages,
    continuum_residual,
    endpoint_residuals,
    forward_transition,
    internal_messages,
    solve_bridge,
    solve_mixed_bridge,
    sqrt_markov_kernel,
)
from cyclicqm.enumeration import chain_backward_partition, chain_marginals
from cyclicqm.errors import (
    DimensionError,
    InconsistentMarginalsError,
    NonConvergenceError,
    ProbabilityError,
    ZeroSupportError,
)
from cyclicqm.experiments import fit_slope
from cyclicqm.kernels import Factor, build_factor, free_particle, harmonic, matrix_factor
from cyclicqm.lattice import make_grid
from cyclicqm.runners import gaussian_bridge_moments


def gauss(x, mean, var):
    return np.exp(-((x - mean) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


# --------------------------------------------------------------------------
# message passing


def test_bp_identity_and_dimension_check():
    v = np.array([0.3, 1.2, 2.0])
    I = Factor(np.eye(3))
    assert np.array_equal(bp_forward(v, I), v)
    assert np.array_equal(bp_backward(v, I), v)
    with pytest.raises(DimensionError):
        bp_forward(np.ones(4), I)
    with pytest.raises(DimensionError):
        bp_backward(np.ones(2), I)


def test_flat_message_stays_flat():
    g = make_grid(-10, 10, 401)
    F = build_factor(free_particle(), g, 0.05)
    out = bp_forward(np.ones(g.n_points), F)
    inner = np.abs(g.points) < 7
    assert np.max(np.abs(out[inner] - 1.0)) < 1e-8


def test_gaussian_message_spreads():
    g = make_grid(-12, 12, 481)
    x = g.points
    hbar, m, eps, var = 1.3, 0.8, 0.2, 0.7
    F = build_factor(free_particle(m), g, eps, hbar)
    out = bp_forward(gauss(x, 0.4, var), F)
    assert np.max(np.abs(out - gauss(x, 0.4, var + hbar * eps / m))) < 1e-6


def test_backward_symmetric_equals_forward(rng):
    M = rng.random((4, 4))
    F = matrix_factor(M + M.T, 0.5)
    v = rng.random(4)
    np.testing.assert_allclose(bp_backward(v, F), bp_forward(v, F), rtol=1e-15)


def test_backward_partial_partitions(rng):
    fs = random_factors(rng, 3, 3)
    end = rng.random(3) + 0.1
    pair = chain_messages(fs, end=end)
    ref = chain_backward_partition([f.operator for f in fs], end)
    assert np.max(np.abs(pair.backward - ref)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_chain_exactness(S, n, seed):
    rng = np.random.default_rng(seed)
    fs = random_factors(rng, S, n)
    start, end = rng.random(S) + 0.05, rng.random(S) + 0.05
    pair = chain_messages(fs, start, end)
    ref = chain_marginals([f.operator for f in fs], start, end)
    for l in range(n + 1):
        assert np.max(np.abs(born_marginal(pair, l) - ref[l])) < 1e-12
    # gauge: rescaling one step's messages in opposite directions changes nothing
    c = float(rng.uniform(0.1, 10))
    fwd = pair.forward.copy()
    bwd = pair.backward.copy()
    fwd[0] *= c
    bwd[0] /= c
    gauged = MessagePair(fwd, bwd, pair.weight)
    np.testing.assert_allclose(gauged.born(), pair.born(), rtol=1e-13, atol=1e-15)


def test_born_sqrt_parametrization():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    pair = MessagePair(np.sqrt(p)[None, :], np.sqrt(p)[None, :])
    np.testing.assert_allclose(born_marginal(pair, 0), p, rtol=1e-15)
    with pytest.raises(ZeroSupportError):
        born_marginal(MessagePair(np.zeros((1, 3)), np.ones((1, 3))), 0)


def test_chain_log_offset_normalizes(rng):
    fs = random_factors(rng, 3, 4)
    pair = chain_messages(fs)
    f = pair.forward[2] * math.exp(pair.log_offset)
    b = pair.backward[2] * math.exp(pair.log_offset)
    assert (f * b).sum() * pair.weight == pytest.approx(1.0, rel=1e-12)


# --------------------------------------------------------------------------
# bridges


def test_static_bridge_with_identity_factors():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    fs = [Factor(np.eye(4))] * 3
    pair = solve_bridge(BridgeProblem(fs, p, p))
    for l in range(4):
        np.testing.assert_allclose(pair.forward[l] * pair.backward[l], p, rtol=1e-12)
        np.testing.assert_array_equal(pair.forward[l], pair.forward[0])
        np.testing.assert_array_equal(pair.backward[l], pair.backward[0])
    # identity factors allow a per-site gauge; the balanced choice gives sqrt(p) both ways
    h = np.sqrt(pair.backward[0] / pair.forward[0])
    np.testing.assert_allclose(pair.forward[0] * h, np.sqrt(p), rtol=1e-12)
    np.testing.assert_allclose(pair.backward[0] / h, np.sqrt(p), rtol=1e-12)


def test_gaussian_bridge_closed_form():
    g = make_grid(-8, 8, 64)
    x = g.points
    eps, n, hbar, m = 0.1, 10, 1.0, 1.0
    fs = [build_factor(free_particle(m), g, eps, hbar)] * n
    p0, pn = gauss(x, -2, 0.5), gauss(x, 2, 0.5)
    p0 /= p0.sum() * g.dx
    pn /= pn.sum() * g.dx
    pair = solve_bridge(BridgeProblem(fs, p0, pn, max_iterations=1000))
    assert pair.residual <= 1e-8 and pair.iterations <= 1000
    r0, rn = endpoint_residuals(pair, p0, pn)
    assert r0 + rn == pytest.approx(pair.residual)
    born = pair.born()
    tau = n * hbar * eps / m
    for l in range(1, n):
        mean, var = gaussian_bridge_moments(-2, 0.5, 2, 0.5, tau, l / n)
        assert np.max(np.abs(born[l] - gauss(x, mean, var))) < 1e-4
    # equivalent Markov transitions integrate to one over the destination
    for l in range(n):
        P = forward_transition(pair, fs[l], l)
        assert np.max(np.abs(P.sum(axis=0) * g.dx - 1.0)) < 1e-8
        Q = backward_transition(pair, fs[l], l)
        assert np.max(np.abs(Q.sum(axis=0) * g.dx - 1.0)) < 1e-8


def test_gaussian_bridge_formula_limits():
    # at the ends the formula returns the prescribed moments
    assert gaussian_bridge_moments(-1, 0.3, 2, 0.7, 0.5, 0.0) == pytest.approx((-1, 0.3))
    assert gaussian_bridge_moments(-1, 0.3, 2, 0.7, 0.5, 1.0) == pytest.approx((2, 0.7))


def test_small_random_bridge_against_enumeration(rng):
    fs = random_factors(rng, 3, 4)
    p0 = rng.random(3) + 0.1
    pn = rng.random(3) + 0.1
    p0 /= p0.sum()
    pn /= pn.sum()
    pair = solve_bridge(BridgeProblem(fs, p0, pn))
    assert pair.residual < 1e-10
    # the solution is the chain with leaf potentials start/end, verified by brute force
    start = pair.forward[0]
    end = pair.backward[-1]
    ref = chain_marginals([f.operator for f in fs], start, end)
    np.testing.assert_allclose(pair.born(), ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ref[0], p0, atol=1e-10)
    np.testing.assert_allclose(ref[-1], pn, atol=1e-10)


def test_bridge_validation(rng):
    fs = random_factors(rng, 3, 2)
    good = np.array([0.2, 0.3, 0.5])
    with pytest.raises(ZeroSupportError):
        BridgeProblem(fs, np.array([0.5, 0.5, 0.0]), good)
    clipped = BridgeProblem(fs, np.array([0.5, 0.5, 0.0]), good, clip_zeros=True)
    assert clipped.p0.min() > 0
    with pytest.raises(ProbabilityError):
        BridgeProblem(fs, good * 2, good)
    with pytest.raises(DimensionError):
        BridgeProblem(fs, np.ones(2) / 2, good)


def test_bridge_non_convergence_reports_residual():
    g = make_grid(-8, 8, 64)
    x = g.points
    fs = [build_factor(free_particle(), g, 0.1)] * 10
    p0, pn = gauss(x, -2, 0.5), gauss(x, 2, 0.5)
    p0 /= p0.sum() * g.dx
    pn /= pn.sum() * g.dx
    with pytest.raises(NonConvergenceError) as info:
        solve_bridge(BridgeProblem(fs, p0, pn, max_iterations=1))
    assert info.value.residual > 1e-10 and info.value.iterations == 1
    pair = solve_bridge(BridgeProblem(fs, p0, pn, max_iterations=1), raise_on_failure=False)
    assert pair.residual == pytest.approx(info.value.residual)


def test_mixed_bridge(rng):
    fs = random_factors(rng, 3, 3)
    comps = []
    for lam in (0.25, 0.75):
        a, b = rng.random(3) + 0.1, rng.random(3) + 0.1
        comps.append((lam, a / a.sum(), b / b.sum()))
    pairs, mixed = solve_mixed_bridge(fs, comps)
    np.testing.assert_allclose(mixed[0], 0.25 * comps[0][1] + 0.75 * comps[1][1], atol=1e-10)
    with pytest.raises(ProbabilityError):
        solve_mixed_bridge(fs, [(0.5, comps[0][1], comps[0][2])])


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_internal_chain_duality(S, n, seed):
    # the swapped messages solve the mirrored chain G_j = F_{n-1-j}^T
    rng = np.random.default_rng(seed)
    fs = random_factors(rng, S, n)
    pair = chain_messages(fs, rng.random(S) + 0.1, rng.random(S) + 0.1)
    inner = internal_messages(pair)
    G = [fs[n - 1 - j].T for j in range(n)]
    for j in range(n):
        np.testing.assert_allclose(bp_forward(inner.forward[j], G[j]), inner.forward[j + 1], rtol=1e-12)
        np.testing.assert_allclose(bp_backward(inner.backward[j + 1], G[j]), inner.backward[j], rtol=1e-12)
    np.testing.assert_array_equal(inner.forward[0], pair.backward[n])
    np.testing.assert_array_equal(inner.backward[n], pair.forward[0])


# --------------------------------------------------------------------------
# square-root kernels


def test_sqrt_kernel_permutation():
    perm = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    p = np.array([0.2, 0.3, 0.5])
    K = sqrt_markov_kernel(perm, p, perm @ p)
    np.testing.assert_array_equal(K, perm)


def test_sqrt_kernel_two_state_hand_case():
    P = np.array([[0.9, 0.2], [0.1, 0.8]])  # columns sum to one
    p = np.array([0.5, 0.5])
    q = P @ p  # (0.55, 0.45)
    K = sqrt_markov_kernel(P, p, q)
    # Bayes: P-(x | x') = P+(x' | x) p(x) / q(x')
    back = np.array([[0.9 * 0.5 / 0.55, 0.1 * 0.5 / 0.45], [0.2 * 0.5 / 0.55, 0.8 * 0.5 / 0.45]])
    hand = np.sqrt(P * back.T)
    np.testing.assert_allclose(K, hand, rtol=1e-14)
    np.testing.assert_allclose(K @ np.sqrt(p), np.sqrt(q), rtol=1e-12)


def test_sqrt_kernel_symmetric_stationary():
    P = np.array([[0.7, 0.2, 0.1], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]])
    u = np.full(3, 1 / 3)
    np.testing.assert_allclose(sqrt_markov_kernel(P, u, u), P, rtol=1e-14)


def test_sqrt_kernel_inconsistent():
    P = np.array([[0.9, 0.2], [0.1, 0.8]])
    with pytest.raises(InconsistentMarginalsError):
        sqrt_markov_kernel(P, np.array([0.5, 0.5]), np.array([0.5, 0.5]))


# --------------------------------------------------------------------------
# continuum limit


def test_flat_messages_have_zero_residual():
    g = make_grid(-5, 5, 101)
    pair = MessagePair(np.ones((4, 101)), np.ones((4, 101)), g.dx, g)
    rf, rb = continuum_residual(pair, free_particle(), 0.1, 1.0, 1.0)
    assert rf == 0.0 and rb == 0.0


def test_ground_state_profile_residual_first_order():
    # phi0 = exp(-m w x^2 / 2 hbar) decays at rate w/2 forward and grows backward
    g = make_grid(-6, 6, 241)
    x = g.points
    m, kappa, lam, T = 1.0, 1.0, 1.0, 1.0  # hbar = T / lam = 1
    w = math.sqrt(kappa / m)
    phi = np.exp(-m * w * x**2 / 2)
    eps_list = [0.04, 0.02, 0.01]
    res = []
    for eps in eps_list:
        t = np.arange(6) * eps
        fwd = phi[None, :] * np.exp(-w * t / 2)[:, None]
        bwd = phi[None, :] * np.exp(w * t / 2)[:, None]
        pair = MessagePair(fwd, bwd, g.dx, g)
        res.append(max(continuum_residual(pair, harmonic(m, kappa), eps, lam, T)))
    assert res[-1] < 5e-3
    assert abs(fit_slope(eps_list, res) - 1.0) < 0.2


def test_chain_message_residual_first_order():
    g = make_grid(-6, 6, 401)
    x = g.points
    spec = harmonic(1.0, 1.0)
    eps_list = [0.04, 0.02, 0.01]
    res = []
    for eps in eps_list:
        n = int(round(0.4 / eps))
        T = (2 * n + 1) * eps
        fs = [build_factor(spec, g, eps, 1.0, t=l * eps) for l in range(n)]
        pair = chain_messages(fs, np.exp(-(x**2) / 2), np.exp(-((x - 0.5) ** 2)))
        res.append(max(continuum_residual(pair, spec, eps, T, T)))
    assert abs(fit_slope(eps_list, res) - 1.0) < 0.2


def test_residual_needs_position_grid():
    with pytest.raises(DimensionError):
        continuum_residual(MessagePair(np.ones((2, 3)), np.ones((2, 3))), free_particle(), 0.1, 1.0, 1.0)
