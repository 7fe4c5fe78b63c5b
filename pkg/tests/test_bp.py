import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackbench.association import AssociationMarginals, AssociationWeights, bp_association_marginals
from trackbench.bp import (
    BpConfig,
    BpState,
    BpTracker,
    PtBelief,
    bp_predict,
    bp_step,
    bp_update,
    compute_weights,
    extract_estimates,
    init_new_pts,
    systematic_resample,
)
from trackbench.models import Scan, build_motion_model, build_sensor_model

from .conftest import ROI, kalman_filter

PEAK = 1.0 / (2 * np.pi * 100.0)
LAM = 10.0 / 1500.0**2
H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])


def particle_pt(id_, mean, std, r=0.9, J=5000, seed=0):
    rng = np.random.default_rng(seed)
    return PtBelief(id_, r, particles=np.asarray(mean, float) + std * rng.standard_normal((J, 4)))


def marginals(beta, kappa=None):
    beta = np.atleast_2d(np.asarray(beta, float))
    kappa = np.ones(beta.shape[1] - 1) if kappa is None else np.asarray(kappa, float)
    return AssociationMarginals(beta, kappa)


class TestPredict:
    def test_survival(self, mm):
        out = bp_predict([PtBelief(1, 1.0, mean=np.zeros(4), cov=np.eye(4))], mm, None)
        assert out[0].existence == pytest.approx(0.995)

    def test_zero_existence(self, mm):
        assert bp_predict([PtBelief(1, 0.0, mean=np.zeros(4), cov=np.eye(4))], mm, None)[0].existence == 0.0

    def test_deterministic_advection(self):
        mm0 = build_motion_model(1.0, 0.0)
        b = particle_pt(1, [0, 0, 1, 2], 1.0, J=50)
        X = b.particles.copy()
        out = bp_predict(bp_predict([b], mm0, None), mm0, None)[0]
        out.materialize(50, np.random.default_rng(0), mm0)
        A2 = mm0.A @ mm0.A
        assert np.allclose(out.particles, X @ A2.T)

    def test_lazy_moments_are_exact(self, mm):
        b = particle_pt(1, [0, 0, 1, 2], 1.0, J=200)
        m0, P0 = b.moments()
        out = bp_predict([b], mm, None)[0]
        m, P = out.moments()
        assert np.allclose(m, mm.A @ m0) and np.allclose(P, mm.A @ P0 @ mm.A.T + mm.Sigma_u)

    def test_lazy_propagation_distribution(self, mm):
        b = particle_pt(1, [0, 0, 1, 2], 1.0, J=100_000)
        m0, P0 = b.moments()
        out = [b]
        for _ in range(3):
            out = bp_predict(out, mm, None)
        out[0].materialize(100_000, np.random.default_rng(3), mm)
        A3 = np.linalg.matrix_power(mm.A, 3)
        X = out[0].particles
        se = np.sqrt(np.diag(np.cov(X.T)) / len(X))
        expected = A3 @ m0
        assert np.all(np.abs(X.mean(0) - expected) < 4 * se)


class TestComputeWeights:
    def test_nonexistent_pt(self, sm):
        b = particle_pt(1, [0, 0, 0, 0], 1.0, r=0.0, J=100)
        w = compute_weights([b], Scan(1, np.array([[0.0, 0.0]])), sm)
        assert w.psi[0, 0] == 1.0 and w.psi[0, 1] == 0.0

    def test_new_target_weight(self, sm):
        w = compute_weights([], Scan(1, np.array([[0.0, 0.0], [100.0, 200.0]])), sm)
        assert np.allclose(w.xi, 9e-4)

    def test_single_particle_peak(self, sm):
        b = PtBelief(1, 0.8, particles=np.array([[3.0, 4.0, 0.0, 0.0]]))
        w = compute_weights([b], Scan(1, np.array([[3.0, 4.0]])), sm)
        assert w.psi[0, 1] == pytest.approx(0.8 * 0.9 * 1.5915e-3 / LAM, rel=1e-4)
        assert w.psi[0, 0] == pytest.approx(1 - 0.8 * 0.9)

    def test_gaussian_matches_particles(self, sm):
        mean, cov = np.array([0.0, 0.0, 1.0, 0.0]), np.diag([30.0, 30.0, 2.0, 2.0])
        g = PtBelief(1, 0.7, mean=mean, cov=cov)
        X = np.random.default_rng(4).multivariate_normal(mean, cov, 200_000)
        p = PtBelief(2, 0.7, particles=X)
        Z = np.array([[5.0, -3.0], [12.0, 10.0]])
        wg = compute_weights([g], Scan(1, Z), sm)
        wp = compute_weights([p], Scan(1, Z), sm)
        assert np.allclose(wg.psi, wp.psi, rtol=0.02)

    def test_outside_gate(self, sm):
        b = PtBelief(1, 1.0, mean=np.zeros(4), cov=np.diag([1.0, 1.0, 1.0, 1.0]))
        w = compute_weights([b], Scan(1, np.array([[400.0, 0.0]])), sm)
        assert w.psi[0, 1] == 0.0


class TestResample:
    def test_counts_within_one(self):
        r = np.random.default_rng(5)
        for _ in range(200):
            w = r.dirichlet(np.ones(int(r.integers(1, 30))))
            n = int(r.integers(1, 100))
            idx = systematic_resample(w, r, n)
            assert len(idx) == n
            counts = np.bincount(idx, minlength=len(w))
            assert np.all(np.abs(counts - n * w) < 1 + 1e-9)

    def test_point_mass(self):
        idx = systematic_resample(np.array([0.0, 1.0, 0.0]), np.random.default_rng(0), 7)
        assert np.array_equal(idx, np.ones(7, dtype=int))

    def test_preserves_weighted_mean(self):
        r = np.random.default_rng(6)
        x = r.normal(0, 1, 500)
        w = r.dirichlet(np.ones(500))
        target = w @ x
        means = [x[systematic_resample(w, r)].mean() for _ in range(400)]
        se = np.std(means) / np.sqrt(len(means))
        assert abs(np.mean(means) - target) < 3 * se + 1e-12


class TestUpdate:
    def test_miss_only_keeps_particles(self, sm):
        b = particle_pt(1, [0, 0, 0, 0], 3.0, r=0.8, J=100)
        X = b.particles.copy()
        w = AssociationWeights([[1 - 0.8 * 0.9, 0.0]], [9e-4])
        out, flagged = bp_update([b], w, marginals([[1.0, 0.0]]), Scan(1, np.array([[500.0, 0.0]])), sm, None)
        assert flagged == []
        assert np.array_equal(out[0].particles, X)
        assert out[0].existence == pytest.approx(0.8 * 0.1 / (1 - 0.72))

    def test_bernoulli_closed_form(self, mm, sm):
        """One PT and one measurement: the association graph is a tree, so BP is exact."""
        mean, cov = np.array([0.0, 0.0, 2.0, 0.0]), np.diag([60.0, 60.0, 4.0, 4.0])
        r, z = 0.7, np.array([8.0, -4.0])
        S = H @ cov @ H.T + sm.R
        nu = z - H @ mean
        L = np.exp(-0.5 * nu @ np.linalg.solve(S, nu)) / (2 * np.pi * np.sqrt(np.linalg.det(S)))
        xi = sm.p_d * sm.mu_b / sm.mu_c
        psi1, psi0 = r * sm.p_d * L / LAM, 1 - r * sm.p_d
        total = psi1 + psi0 * (1 + xi)
        ex_ref = (psi1 + r * (1 - sm.p_d) * (1 + xi)) / total
        K = cov @ H.T @ np.linalg.inv(S)
        w_det = psi1 / (psi1 + r * (1 - sm.p_d) * (1 + xi))
        mean_ref = mean + w_det * K @ nu
        ests, exs = [], []
        for rep in range(20):
            b = PtBelief(1, r, mean=mean, cov=cov)
            scan = Scan(1, z[None])
            w = compute_weights([b], scan, sm)
            marg = bp_association_marginals(w, w.psi[:, 1:] > 0, 100, 1e-12)
            out, _ = bp_update([b], w, marg, scan, sm, np.random.default_rng(rep), 5000)
            ests.append(out[0].state_mean())
            exs.append(out[0].existence)
        ests = np.array(ests)
        assert np.std(exs) < 0.01 and np.mean(exs) == pytest.approx(ex_ref, abs=0.01)
        se = ests.std(0) / np.sqrt(len(ests))
        assert np.all(np.abs(ests.mean(0) - mean_ref) < 3 * se + 0.05)

    def test_concentrated_beta(self, sm):
        b = particle_pt(1, [0, 0, 0, 0], 10.0, r=1.0, J=20_000, seed=2)
        X = b.particles.copy()
        z = np.array([[6.0, 2.0]])
        w = compute_weights([b], Scan(1, z), sm)
        out, _ = bp_update([b], w, marginals([[0.0, 1.0]]), Scan(1, z), sm, np.random.default_rng(1))
        f = np.exp(-0.5 * ((X[:, :2] - z) ** 2).sum(1) / 100.0)
        ref = f @ X / f.sum()
        assert np.allclose(out[0].state_mean()[:2], ref[:2], atol=0.3)
        assert out[0].existence == pytest.approx(1.0)

    def test_zero_weight_flagged(self, sm):
        b = PtBelief(1, 0.5, particles=np.zeros((10, 4)))
        w = AssociationWeights([[0.0, 1.0]], [0.0])
        out, flagged = bp_update([b], w, marginals([[0.0, 1.0]]), Scan(1, np.array([[1e5, 0.0]])), sm, np.random.default_rng(0))
        assert flagged == [1] and out[0].existence == 0.0


class TestNewPts:
    def test_no_births(self):
        sm0 = build_sensor_model(0.9, 10.0, 10.0, ROI, 0.0)
        scan = Scan(1, np.array([[0.0, 0.0]]))
        w = compute_weights([], scan, sm0)
        m = bp_association_marginals(w, np.zeros((0, 1), bool), 100, 1e-9)
        assert init_new_pts(scan, m, w, sm0, BpConfig(), 1)[0].existence == 0.0

    def test_isolated_measurement(self, sm):
        scan = Scan(1, np.array([[0.0, 0.0]]))
        w = compute_weights([], scan, sm)
        m = bp_association_marginals(w, np.zeros((0, 1), bool), 100, 1e-9)
        pt = init_new_pts(scan, m, w, sm, BpConfig(), 4)[0]
        assert pt.existence == pytest.approx(9e-4 / (1 + 9e-4))
        assert pt.id == 4 and np.array_equal(pt.mean, [0, 0, 0, 0])
        assert np.allclose(np.diag(pt.cov), [100, 100, 100, 100])

    def test_explained_measurement(self, sm):
        b = PtBelief(1, 0.999, mean=np.zeros(4), cov=np.diag([4.0, 4.0, 1.0, 1.0]))
        scan = Scan(1, np.array([[1.0, 1.0]]))
        w = compute_weights([b], scan, sm)
        m = bp_association_marginals(w, w.psi[:, 1:] > 0, 100, 1e-12)
        assert init_new_pts(scan, m, w, sm, BpConfig(), 2)[0].existence < 1e-3


class TestExtract:
    def test_thresholds(self):
        b = [
            PtBelief(1, 0.51, mean=np.ones(4), cov=np.eye(4)),
            PtBelief(2, 0.5, mean=np.ones(4), cov=np.eye(4)),
            PtBelief(3, 1e-6, mean=np.ones(4), cov=np.eye(4)),
        ]
        est, kept = extract_estimates(b, BpConfig())
        assert [i for i, _ in est] == [1]
        assert [k.id for k in kept] == [1, 2]

    def test_bimodal_mean(self):
        X = np.vstack([np.tile([-20.0, 0, 0, 0], (50, 1)), np.tile([20.0, 0, 0, 0], (50, 1))])
        est, _ = extract_estimates([PtBelief(1, 0.9, particles=X)], BpConfig())
        assert np.allclose(est[0][1], 0.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BpConfig(p_pr=0.6)


class TestStep:
    def test_empty(self, mm, sm):
        state, est = bp_step(BpState(), Scan(1), mm, sm, BpConfig(), np.random.default_rng(0))
        assert state.beliefs == [] and est == []

    def test_pt_count(self, mm, sm):
        cfg = BpConfig(n_particles=200, p_pr=1e-300)
        state = BpState([PtBelief(1, 0.9, mean=np.zeros(4), cov=np.eye(4))], 2)
        Z = np.array([[1.0, 0.0], [300.0, 0.0], [-200.0, 50.0]])
        out, _ = bp_step(state, Scan(1, Z), mm, sm, cfg, np.random.default_rng(0))
        assert len(out.beliefs) == 1 + 3
        assert out.next_id == 5

    def test_far_targets_factorize(self, mm, sm):
        cfg = BpConfig(n_particles=300)
        a = PtBelief(1, 0.9, mean=np.array([0.0, 0, 4, 0]), cov=np.diag([20.0, 20, 2, 2]))
        b = PtBelief(2, 0.9, mean=np.array([0.0, 500, 4, 0]), cov=np.diag([20.0, 20, 2, 2]))
        Z = np.array([[4.0, 498.0], [3.0, 2.0]])
        joint, _ = bp_step(BpState([a, b], 3), Scan(1, Z), mm, sm, cfg, np.random.default_rng(0))
        alone, _ = bp_step(BpState([a], 3), Scan(1, Z), mm, sm, cfg, np.random.default_rng(0))
        assert joint.beliefs[0].existence == pytest.approx(alone.beliefs[0].existence, rel=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_existence_bounds(self, seed):
        mm = build_motion_model()
        sm = build_sensor_model(0.9, 10.0, 10.0, ROI, 0.01)
        r = np.random.default_rng(seed)
        cfg = BpConfig(n_particles=100)
        state = BpState()
        for k in range(1, 6):
            Z = r.uniform(-100, 100, (int(r.integers(0, 6)), 2))
            state, est = bp_step(state, Scan(k, Z), mm, sm, cfg, r)
            for b in state.beliefs:
                assert 0.0 <= b.existence <= 1.0
            assert all(np.all(np.isfinite(x)) for _, x in est)


def test_rmse_close_to_kalman(mm):
    sm = build_sensor_model(1.0, 10.0, 0.0, ROI, 0.01)
    bp_se, kf_se = [], []
    for run in range(10):
        r = np.random.default_rng(100 + run)
        x = np.array([0.0, 0.0, 3.0, -2.0])
        X, Z = [], []
        for _ in range(100):
            x = mm.A @ x + r.multivariate_normal(np.zeros(4), mm.Sigma_u)
            X.append(x)
            Z.append(x[:2] + r.normal(0, 10, 2))
        tr = BpTracker(mm, sm, BpConfig())
        est = [tr.step(Scan(k + 1, z[None]), r) for k, z in enumerate(Z)]
        ref = kalman_filter(Z[1:], np.r_[Z[0], 0, 0], np.diag([100.0, 100, 100, 100]), mm, sm.R)
        for k in range(1, 100):
            assert len(est[k]) == 1
            bp_se.append(np.sum((est[k][0][1][:2] - X[k][:2]) ** 2))
            kf_se.append(np.sum((ref[k - 1][:2] - X[k][:2]) ** 2))
    ratio = np.sqrt(np.mean(bp_se) / np.mean(kf_se))
    assert abs(ratio - 1) < 0.15
