from collections import deque

import numpy as np
import pytest

from trackbench.association import AssociationWeights
from trackbench.jpda import (
    JpdaConfig,
    JpdaState,
    JpdaTrack,
    JpdaTracker,
    event_posterior,
    jpda_step,
    manage_tracks,
    pda_update,
)
from trackbench.models import GaussianBelief, Scan, build_motion_model, build_sensor_model

from .conftest import ROI, kalman_filter

H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])


def track(id_, mean, cov=None, status="confirmed"):
    cov = np.diag([25.0, 25.0, 4.0, 4.0]) if cov is None else cov
    return JpdaTrack(id_, GaussianBelief(mean, cov), status, deque([True] * 10, maxlen=16))


def pda_oracle(mean, cov, z, mm, sm):
    """Two-event PDA closed form for one track and one measurement."""
    x = mm.A @ mean
    P = mm.A @ cov @ mm.A.T + mm.Sigma_u
    S = H @ P @ H.T + sm.R
    nu = z - H @ x
    lik = np.exp(-0.5 * nu @ np.linalg.solve(S, nu)) / (2 * np.pi * np.sqrt(np.linalg.det(S)))
    w = sm.p_d * lik / (sm.mu_c / sm.area)
    b1 = w / (w + 1 - sm.p_d)
    K = P @ H.T @ np.linalg.inv(S)
    Pu = P - K @ S @ K.T
    mean = x + b1 * K @ nu
    cov = (1 - b1) * P + b1 * Pu + b1 * (1 - b1) * K @ np.outer(nu, nu) @ K.T
    return b1, mean, cov


class TestEventPosterior:
    def test_all_miss(self):
        w = AssociationWeights([[0.1, 2.0], [0.1, 3.0]], [0.0])
        assert event_posterior([0, 0], w) == pytest.approx(0.01)

    def test_single(self):
        w = AssociationWeights([[0.1, 2.0, 7.0]], [0.0, 0.0])
        assert event_posterior([2], w) == 7.0

    def test_permutation(self):
        w = AssociationWeights([[0.1, 2.0, 3.0], [0.1, 2.0, 3.0]], [0.0, 0.0])
        assert event_posterior([1, 2], w) == event_posterior([2, 1], w)


class TestPdaUpdate:
    def setup_method(self):
        self.sm = build_sensor_model(0.9, 10.0, 10.0, ROI, 0.01)
        self.b = GaussianBelief([0.0, 0.0, 1.0, 0.0], np.diag([50.0, 50.0, 4.0, 4.0]))

    def test_pure_miss(self):
        out = pda_update(self.b, [1.0, 0.0], np.array([[5.0, 5.0]]), self.sm)
        assert np.array_equal(out.mean, self.b.mean) and np.array_equal(out.cov, self.b.cov)

    def test_certain_association_is_kalman(self):
        z = np.array([4.0, -3.0])
        out = pda_update(self.b, [0.0, 1.0], z[None], self.sm)
        P = self.b.cov
        S = H @ P @ H.T + self.sm.R
        K = P @ H.T @ np.linalg.inv(S)
        assert np.allclose(out.mean, self.b.mean + K @ (z - H @ self.b.mean), atol=1e-12)
        assert np.allclose(out.cov, (np.eye(4) - K @ H) @ P, atol=1e-10)

    def test_symmetric_split(self):
        Z = np.array([[0.0, 6.0], [0.0, -6.0]])
        out = pda_update(self.b, [0.0, 0.5, 0.5], Z, self.sm)
        kal = pda_update(self.b, [0.0, 1.0], np.array([[0.0, 0.0]]), self.sm)
        assert np.allclose(out.mean, self.b.mean, atol=1e-12)
        # the spread-of-means term inflates the y variance only
        assert out.cov[1, 1] > kal.cov[1, 1]
        assert out.cov[0, 0] == pytest.approx(kal.cov[0, 0])


class TestJpdaStep:
    def test_empty(self, mm, sm):
        state, betas = jpda_step(JpdaState(), Scan(1), mm, sm, JpdaConfig())
        assert state.tracks == [] and betas == {}

    def test_single_track_closed_form(self, mm, sm):
        mean, cov = np.array([0.0, 0.0, 4.0, 0.0]), np.diag([30.0, 30.0, 5.0, 5.0])
        z = np.array([7.0, 3.0])
        state, betas = jpda_step(JpdaState([track(1, mean, cov)]), Scan(1, z[None]), mm, sm, JpdaConfig())
        b1, m_ref, P_ref = pda_oracle(mean, cov, z, mm, sm)
        assert betas[1][1] == pytest.approx(b1, abs=1e-12)
        assert np.max(np.abs(state.tracks[0].belief.mean - m_ref)) < 1e-10
        assert np.max(np.abs(state.tracks[0].belief.cov - P_ref)) < 1e-10

    def test_separated_tracks_factorize(self, mm, sm):
        m1, m2 = np.array([0.0, 0.0, 4.0, 0.0]), np.array([0.0, 400.0, 4.0, 0.0])
        Z = np.array([[3.0, 402.0], [5.0, -2.0]])
        joint, _ = jpda_step(JpdaState([track(1, m1), track(2, m2)]), Scan(1, Z), mm, sm, JpdaConfig())
        a, _ = jpda_step(JpdaState([track(1, m1)]), Scan(1, Z), mm, sm, JpdaConfig())
        b, _ = jpda_step(JpdaState([track(2, m2)]), Scan(1, Z), mm, sm, JpdaConfig())
        assert np.array_equal(joint.tracks[0].belief.mean, a.tracks[0].belief.mean)
        assert np.array_equal(joint.tracks[1].belief.mean, b.tracks[0].belief.mean)

    def test_identical_priors_coalesce(self, mm, sm):
        m = np.array([0.0, 0.0, 4.0, 0.0])
        Z = np.array([[4.0, 5.0], [4.0, -5.0]])
        state, _ = jpda_step(JpdaState([track(1, m), track(2, m)]), Scan(1, Z), mm, sm, JpdaConfig())
        assert np.array_equal(state.tracks[0].belief.mean, state.tracks[1].belief.mean)

    def test_duplicate_ids(self, mm, sm):
        m = np.zeros(4)
        with pytest.raises(ValueError):
            jpda_step(JpdaState([track(1, m), track(1, m)]), Scan(1), mm, sm, JpdaConfig())

    def test_betas_are_exact_without_new_targets(self, mm, sm):
        from trackbench.association import exact_association_marginals, gate_matrix
        from .oracles import association_marginals

        r = np.random.default_rng(3)
        means = [np.array([0.0, y, 4.0, 0.0]) for y in (-6.0, 0.0, 6.0)]
        Z = np.array([[4.0, 0.0], [4.0, 8.0], [5.0, -9.0]]) + r.normal(0, 2, (3, 2))
        tracks = [track(i + 1, m) for i, m in enumerate(means)]
        _, betas = jpda_step(JpdaState(tracks), Scan(1, Z), mm, sm, JpdaConfig())
        # rebuild the weights independently and compare with the brute-force marginals
        psi = np.zeros((3, 4))
        for j, m in enumerate(means):
            x = mm.A @ m
            P = mm.A @ tracks[j].belief.cov @ mm.A.T + mm.Sigma_u
            S = H @ P @ H.T + sm.R
            psi[j, 0] = 1 - sm.p_d
            for i, z in enumerate(Z):
                nu = z - H @ x
                d2 = nu @ np.linalg.solve(S, nu)
                if d2 <= 13.82:
                    lik = np.exp(-0.5 * d2) / (2 * np.pi * np.sqrt(np.linalg.det(S)))
                    psi[j, i + 1] = sm.p_d * lik / (sm.mu_c / sm.area)
        beta, _ = association_marginals(psi, np.zeros(3), psi[:, 1:] > 0)
        for j in range(3):
            assert np.max(np.abs(betas[j + 1] - beta[j])) < 1e-10


class TestManageTracks:
    def setup_method(self):
        self.cfg = JpdaConfig()
        self.mm = build_motion_model()
        self.sm = build_sensor_model(0.9, 10.0, 10.0, ROI, 0.01)

    def _tentative(self, hist, streak=0):
        t = JpdaTrack(1, GaussianBelief(np.zeros(4), np.eye(4)), "tentative", deque(hist, maxlen=16), streak)
        return t

    def test_confirm_10_of_16(self):
        hist = [True] * 10 + [False] * 6
        out, _ = manage_tracks([self._tentative(hist)], np.zeros((0, 2)), self.cfg, self.mm, self.sm)
        assert out[0].status == "confirmed"

    def test_nine_hits_stay_tentative(self):
        hist = [True] * 9 + [False] * 5
        out, _ = manage_tracks([self._tentative(hist)], np.zeros((0, 2)), self.cfg, self.mm, self.sm)
        assert out[0].status == "tentative"

    def test_terminate_after_14_misses(self):
        t = track(1, np.zeros(4))
        t.missed_streak = 14
        out, _ = manage_tracks([t], np.zeros((0, 2)), self.cfg, self.mm, self.sm)
        assert out == []
        t = track(1, np.zeros(4))
        t.missed_streak = 13
        out, _ = manage_tracks([t], np.zeros((0, 2)), self.cfg, self.mm, self.sm)
        assert len(out) == 1

    def test_speed_gate(self):
        out, _ = manage_tracks([], np.array([[300.0, 0.0]]), self.cfg, self.mm, self.sm, np.array([[0.0, 0.0]]))
        assert out == []

    def test_two_point_initiation(self):
        out, nid = manage_tracks([], np.array([[4.0, 1.0]]), self.cfg, self.mm, self.sm, np.array([[0.0, 0.0]]), 7)
        assert len(out) == 1 and out[0].id == 7 and nid == 8
        assert np.allclose(out[0].belief.mean, [4.0, 1.0, 4.0, 1.0])
        assert out[0].belief.cov[2, 2] == pytest.approx(200.0)
        assert out[0].status == "tentative"


def test_tracker_reduces_to_kalman_filter(mm):
    """p_d = 1 and no clutter: the confirmed track is a Kalman filter started by two-point differencing."""
    sm = build_sensor_model(1.0, 10.0, 0.0, ROI, 0.01)
    r = np.random.default_rng(5)
    x = np.array([-300.0, 50.0, 4.0, -1.0])
    Z = []
    for _ in range(60):
        x = mm.A @ x + r.multivariate_normal(np.zeros(4), mm.Sigma_u)
        Z.append(x[:2] + r.normal(0, 10, 2))
    tr = JpdaTracker(mm, sm, JpdaConfig(gate_gamma=np.inf))
    est = [tr.step(Scan(k + 1, z[None])) for k, z in enumerate(Z)]
    s2 = 100.0
    cov0 = np.zeros((4, 4))
    for ax in range(2):
        cov0[np.ix_([ax, ax + 2], [ax, ax + 2])] = [[s2, s2], [s2, 2 * s2]]
    ref = kalman_filter(Z[2:], np.r_[Z[1], Z[1] - Z[0]], cov0, mm, sm.R)
    emitted = [(k, e[0][1]) for k, e in enumerate(est) if e]
    assert emitted and emitted[0][0] <= 10
    for k, m in emitted:
        assert np.max(np.abs(m - ref[k - 2])) < 1e-8
