import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semrd import solver
from semrd.distortion import SemanticSource, hamming_matrix, random_source
from semrd.prob import ConditionalDistribution, Distribution
from semrd.solver import (
    BAState,
    InfeasibleError,
    SolverConfig,
    ba_step,
    brute_force_solve,
    count_literal_candidates,
    gibbs_mapping,
    initial_state,
    lagrangian_terms,
    rd_curve,
    simplex_grid,
    verify_self_consistency,
)

seeds = st.integers(0, 2**32 - 1)


def solve(*a, **k):
    # late lookup so the suite-wide fixed-point guard applies
    return solver.solve(*a, **k)


def hb(d):
    return -d * math.log2(d) - (1 - d) * math.log2(1 - d)


def binary_source():
    return SemanticSource(Distribution.uniform(2), ConditionalDistribution(np.eye(2)), np.zeros(2),
                          d_rd=np.asarray(hamming_matrix(2)))


def lam_for_distortion(D):
    # binary Hamming test channel: D = 1 / (1 + exp(1/lam))
    return 1.0 / math.log((1 - D) / D)


def classical_ba(px, d, s, iters=20000, tol=1e-15):
    """Textbook Blahut-Arimoto at slope s, written without the package."""
    px = np.asarray(px, dtype=float)
    q = np.full(d.shape[1], 1.0 / d.shape[1])
    A = np.exp(-s * d)
    for _ in range(iters):
        Q = q * A
        Q /= Q.sum(axis=1, keepdims=True)
        q_new = px @ Q
        if np.max(np.abs(q_new - q)) < tol:
            q = q_new
            break
        q = q_new
    Q = q * A
    Q /= Q.sum(axis=1, keepdims=True)
    R = sum(px[i] * Q[i, j] * math.log(Q[i, j] / q[j])
            for i in range(len(px)) for j in range(len(q)) if Q[i, j] > 0)
    D = float(np.sum(px[:, None] * Q * d))
    return Q, R, D


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(lam=0), dict(lam=1, beta=-1), dict(lam=1, tol=0),
                                    dict(lam=1, max_iters=0), dict(lam=1, init_pxhat="zeros")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


class TestStep:
    def test_zero_rate_one_step(self):
        src = random_source(0, 4, 3, 2)
        cfg = SolverConfig(lam=1e9)
        st0 = initial_state(src, 3, cfg)
        st1 = ba_step(st0, src, src.pixel_distortion(), cfg)
        np.testing.assert_allclose(st1.mapping, np.tile(st0.pxhat, (4, 1)), atol=1e-8)

    def test_hand_coded_step(self):
        src = random_source(21, 4, 3, 2)
        d = np.asarray(src.pixel_distortion())
        px, pyx = np.asarray(src.px), np.asarray(src.py_given_x)
        lam, beta = 0.7, 1.3
        pxhat0 = np.array([0.2, 0.5, 0.3])
        pred0 = np.array([[0.9, 0.1], [0.4, 0.6], [0.25, 0.75]])
        # four formulas evaluated literally
        ds = np.empty((4, 3))
        for x, z in itertools.product(range(4), range(3)):
            kl = sum(pyx[x, y] * math.log(pyx[x, y] / pred0[z, y]) for y in range(2))
            ds[x, z] = d[x, z] + beta * kl
        m = np.empty((4, 3))
        for x in range(4):
            w = [pxhat0[z] * math.exp(-ds[x, z] / lam) for z in range(3)]
            m[x] = np.array(w) / sum(w)
        pz = np.array([sum(px[x] * m[x, z] for x in range(4)) for z in range(3)])
        pred = np.array([[sum(pyx[x, y] * px[x] * m[x, z] / pz[z] for x in range(4)) for y in range(2)]
                         for z in range(3)])
        out = ba_step(BAState(pxhat0, pred0), src, d, SolverConfig(lam=lam, beta=beta))
        np.testing.assert_allclose(out.mapping, m, atol=1e-14)
        np.testing.assert_allclose(out.pxhat, pz, atol=1e-14)
        np.testing.assert_allclose(out.py_given_xhat, pred, atol=1e-14)

    def test_infeasible_row(self):
        with pytest.raises(InfeasibleError):
            gibbs_mapping(np.array([0.5, 0.5]), np.array([[np.inf, np.inf], [0.0, 1.0]]), 1.0)

    def test_infinite_entry_forbids_assignment(self):
        m = gibbs_mapping(np.array([0.5, 0.5]), np.array([[np.inf, 0.0], [0.0, 1.0]]), 1.0)
        assert m[0, 0] == 0.0 and m[0, 1] == 1.0

    def test_solve_infeasible(self):
        src = binary_source()
        with pytest.raises(InfeasibleError):
            solve(src, np.array([[np.inf, np.inf], [0.0, 1.0]]), SolverConfig(lam=1))

    def test_initial_predictor_is_label_marginal(self):
        src = random_source(3, 4, 3, 2)
        st0 = initial_state(src, 3, SolverConfig(lam=1))
        np.testing.assert_allclose(st0.py_given_xhat, np.tile(src.label_marginal(), (3, 1)))
        np.testing.assert_allclose(st0.pxhat, np.full(3, 1 / 3))


class TestClassicalReduction:
    @pytest.mark.parametrize("D", [0.05, 0.1, 0.2])
    def test_binary_rd_function(self, D):
        src = binary_source()
        res = solve(src, None, SolverConfig(lam=lam_for_distortion(D)))
        assert res.converged
        assert res.pixel_distortion == pytest.approx(D, abs=1e-9)
        assert res.rate_nats / math.log(2) == pytest.approx(1 - hb(D), abs=1e-3)

    def test_tenth_distortion_value(self):
        res = solve(binary_source(), None, SolverConfig(lam=lam_for_distortion(0.1)))
        assert res.rate_nats / math.log(2) == pytest.approx(0.531, abs=1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_textbook_ba(self, seed):
        src = random_source(seed, 4, 3, 2)
        d = np.asarray(src.pixel_distortion())
        lam = 0.8
        res = solve(src, None, SolverConfig(lam=lam))
        Q, R, D = classical_ba(src.px, d, 1 / lam)
        np.testing.assert_allclose(np.asarray(res.mapping), Q, atol=1e-8)
        assert res.rate_nats == pytest.approx(R, abs=1e-9)
        assert res.pixel_distortion == pytest.approx(D, abs=1e-9)

    def test_binary_matches_textbook(self):
        src = binary_source()
        res = solve(src, None, SolverConfig(lam=0.4))
        Q, R, D = classical_ba(src.px, np.asarray(hamming_matrix(2)), 1 / 0.4)
        np.testing.assert_allclose(np.asarray(res.mapping), Q, atol=1e-8)
        assert (res.rate_nats, res.pixel_distortion) == pytest.approx((R, D), abs=1e-9)


class TestLimits:
    def test_zero_temperature(self):
        src = random_source(8, 4, 3, 2)
        d = np.asarray(src.pixel_distortion())
        res = solve(src, None, SolverConfig(lam=1e-3))
        hard = np.argmax(np.asarray(res.mapping), axis=1)
        np.testing.assert_array_equal(hard, np.argmin(d, axis=1))
        assert res.pixel_distortion == pytest.approx(float(np.asarray(src.px) @ d.min(axis=1)), abs=1e-6)

    def test_zero_rate(self):
        src = random_source(8, 4, 3, 2)
        lam = 1e4 * float(np.max(np.asarray(src.pixel_distortion())))
        res = solve(src, None, SolverConfig(lam=lam, max_iters=500))
        assert res.rate_nats < 1e-6

    def test_zero_rate_fixed_point_residual(self):
        src = random_source(8, 4, 3, 2)
        d = np.asarray(src.pixel_distortion())
        lam = 1e4 * float(np.max(d))
        # all mass on the reconstruction with the lowest average cost
        best = int(np.argmin(np.asarray(src.px) @ d))
        m = np.zeros((4, 3))
        m[:, best] = 1.0
        cfg = SolverConfig(lam=lam)
        L, rate, dr, dt, pxhat, pred = lagrangian_terms(src, d, m, lam, 0.0)
        res = solver.SolverResult(ConditionalDistribution(m), Distribution(pxhat), ConditionalDistribution(pred),
                                  rate, dr, dt, L, 0, True)
        assert verify_self_consistency(res, src, d, cfg) < 1e-8

    def test_scale_covariance(self):
        src = random_source(12, 4, 3, 2)
        d = np.asarray(src.pixel_distortion())
        a = solve(src, d, SolverConfig(lam=0.5))
        b = solve(src, 3.7 * d, SolverConfig(lam=0.5 * 3.7))
        np.testing.assert_allclose(np.asarray(a.mapping), np.asarray(b.mapping), atol=1e-8)


class TestDescentAndFixedPoint:
    @settings(max_examples=40, deadline=None)
    @given(seeds, st.sampled_from([0.2, 0.5, 1.0, 3.0]), st.sampled_from([0.0, 0.1, 1.0, 5.0]),
           st.integers(2, 5), st.integers(2, 5), st.integers(2, 3))
    def test_monotone_descent(self, seed, lam, beta, nx, nz, ny):
        src = random_source(seed, nx, nz, ny)
        res = solve(src, None, SolverConfig(lam=lam, beta=beta, max_iters=3000))
        assert res.monotone
        assert np.all(np.diff(res.history) <= 1e-10)
        if res.converged:
            assert res.residual < 1e-6

    def test_seeded_random_init(self):
        src = random_source(2, 4, 3, 2)
        cfg = SolverConfig(lam=0.5, beta=1.0, init_pxhat="seeded-random", seed=4)
        a, b = solve(src, None, cfg), solve(src, None, cfg)
        np.testing.assert_array_equal(np.asarray(a.mapping), np.asarray(b.mapping))

    def test_perturbed_mapping_residual(self):
        src = binary_source()
        cfg = SolverConfig(lam=lam_for_distortion(0.1))
        res = solve(src, None, cfg)
        assert res.residual < 1e-6
        m = np.asarray(res.mapping).copy()
        m[0, 1] += 0.01
        m /= m.sum(axis=1, keepdims=True)
        res.mapping = ConditionalDistribution(m)
        assert verify_self_consistency(res, src, np.asarray(hamming_matrix(2)), cfg) > 1e-3

    def test_reported_terms_consistent(self):
        src = random_source(5, 4, 3, 2)
        cfg = SolverConfig(lam=0.6, beta=0.8)
        res = solve(src, None, cfg)
        L, rate, dr, dt, _, _ = lagrangian_terms(src, src.pixel_distortion(), res.mapping, cfg.lam, cfg.beta)
        assert L == pytest.approx(res.lagrangian, abs=1e-12)
        assert L == pytest.approx(cfg.lam * rate + dr + cfg.beta * dt, abs=1e-12)

    def test_nonconvergence_flagged(self):
        src = random_source(5, 4, 3, 2)
        res = solve(src, None, SolverConfig(lam=0.3, beta=1.0, max_iters=2))
        assert not res.converged and res.iterations == 2

    def test_support_pruning(self):
        src = SemanticSource(Distribution.uniform(2), ConditionalDistribution(np.eye(2)), np.zeros(2),
                             d_rd=[[0.0, 5.0, 0.5], [5.0, 0.0, 0.5]])
        res = solve(src, None, SolverConfig(lam=0.05))
        assert res.support.tolist() == [0, 1]
        assert np.asarray(res.mapping).shape == (2, 3)
        np.testing.assert_allclose(np.asarray(res.py_given_xhat)[2], src.label_marginal())


class TestRDCurve:
    def test_binary_curve_on_analytic(self):
        lams = [lam_for_distortion(D) for D in np.linspace(0.02, 0.45, 10)]
        pts = rd_curve(binary_source(), None, lams)
        for p in pts:
            assert p.rate_bits == pytest.approx(1 - hb(p.pixel_distortion), abs=1e-3)

    def test_singleton(self):
        src = random_source(1, 4, 3, 2)
        [p] = rd_curve(src, None, [0.7], beta=0.5)
        res = solve(src, None, SolverConfig(lam=0.7, beta=0.5))
        assert p.rate_bits == pytest.approx(res.rate_nats / math.log(2), abs=1e-15)
        assert p.pixel_distortion == res.pixel_distortion

    @pytest.mark.parametrize("seed", range(3))
    def test_rate_decreases_with_lambda(self, seed):
        src = random_source(seed, 4, 4, 2)
        lams = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0]
        pts = sorted(rd_curve(src, None, lams), key=lambda p: p.lam)
        rates = [p.rate_bits for p in pts]
        assert all(b <= a + 1e-9 for a, b in zip(rates, rates[1:]))

    def test_threads_do_not_change_output(self):
        src = random_source(1, 4, 3, 2)
        a = rd_curve(src, None, [0.3, 1.0, 2.0], beta=0.2, threads=1)
        b = rd_curve(src, None, [0.3, 1.0, 2.0], beta=0.2, threads=3)
        assert a == b

    def test_infeasible_points_flagged(self):
        src = binary_source()
        pts = rd_curve(src, np.array([[np.inf, np.inf], [0.0, 1.0]]), [0.5, 1.0])
        assert all(not p.feasible and math.isnan(p.rate_bits) for p in pts)

    def test_validation(self):
        with pytest.raises(ValueError):
            rd_curve(binary_source(), None, [])
        with pytest.raises(ValueError):
            rd_curve(binary_source(), None, [1.0, -1.0])


class TestBruteForce:
    def test_candidate_count(self):
        assert simplex_grid(2, 0.05).shape[0] == 21
        assert count_literal_candidates(2, 2, 0.05) == 21 ** 2

    def test_simplex_grid_rows(self):
        g = simplex_grid(3, 0.25)
        assert g.shape[0] == 15
        np.testing.assert_allclose(g.sum(axis=1), 1.0)

    def test_binary_oracle_analytic(self):
        D = 0.1
        lam = lam_for_distortion(D)
        _, best = brute_force_solve(binary_source(), None, SolverConfig(lam=lam), 0.05)
        analytic = lam * (1 - hb(D)) * math.log(2) + D
        assert best == pytest.approx(analytic, abs=1e-3)
        assert best >= analytic - 1e-12

    @pytest.mark.parametrize("seed,lam,beta", [(0, 0.5, 0.0), (1, 2.0, 1.0), (2, 0.5, 1.0)])
    def test_solver_at_least_matches_grid(self, seed, lam, beta):
        src = random_source(seed, 4, 3, 2)
        cfg = SolverConfig(lam=lam, beta=beta)
        m, best = brute_force_solve(src, None, cfg, 0.05)
        assert best == pytest.approx(lagrangian_terms(src, src.pixel_distortion(), m, lam, beta)[0])
        assert solve(src, None, cfg).lagrangian <= best + 1e-3

    def test_literal_path_small_instance(self):
        src = random_source(3, 2, 2, 2)
        cfg = SolverConfig(lam=0.5, beta=1.0)
        _, best = brute_force_solve(src, None, cfg, 0.05)
        assert solve(src, None, cfg).lagrangian <= best + 1e-3

    def test_caps(self):
        with pytest.raises(ValueError):
            brute_force_solve(random_source(0, 5, 3, 2), None, SolverConfig(lam=1), 0.1)
        with pytest.raises(ValueError):
            brute_force_solve(random_source(0, 4, 3, 2), None, SolverConfig(lam=1), 0.3)
