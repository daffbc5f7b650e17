import math

import numpy as np
import pytest

from dpkf.kalman import (
    KalmanState,
    LinearSystem,
    NumericalError,
    ScalarGainState,
    kf_correct,
    kf_gain_multiplicative,
    kf_predict,
    random_stable_system,
    scalar_fixed_point,
    scalar_gain_step,
    simulate_estimation,
)


def scalar_system(sigma_v_sq=1.0, sigma_w_sq=1.0, a=1.0, c=1.0):
    return LinearSystem(
        A=np.array([[a]]), C_obs=np.array([[c]]),
        Sigma_v=np.array([[sigma_v_sq]]), Sigma_w=np.array([[sigma_w_sq]]),
    )


# ---------------------------------------------------------------------------
# predict / correct
# ---------------------------------------------------------------------------


def test_predict_identity_is_noop():
    sys = LinearSystem(A=np.eye(2), C_obs=np.eye(2), Sigma_v=np.zeros((2, 2)), Sigma_w=np.eye(2))
    st = KalmanState(theta=np.array([1.0, 2.0]), P=np.eye(2))
    out = kf_predict(st, sys, np.zeros(2))
    assert np.array_equal(out.theta, st.theta)
    assert np.array_equal(out.P, st.P)


def test_predict_scalar_covariance():
    sys = scalar_system(sigma_v_sq=3.0, a=2.0)
    st = KalmanState(theta=np.array([0.5]), P=np.array([[1.0]]))
    out = kf_predict(st, sys, np.zeros(1))
    assert out.P[0, 0] == pytest.approx(7.0)  # 4*1 + 3


def test_predict_rotation():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    sys = LinearSystem(A=rot, C_obs=np.eye(2), Sigma_v=np.zeros((2, 2)), Sigma_w=np.eye(2))
    st = KalmanState(theta=np.array([1.0, 0.0]), P=np.eye(2))
    out = kf_predict(st, sys, np.zeros(2))
    assert np.allclose(out.theta, [0.0, 1.0], atol=1e-15)


def test_correct_huge_observation_noise_ignores_observation():
    sys = scalar_system(sigma_w_sq=1e12)
    st = KalmanState(theta=np.array([2.0]), P=np.array([[1.0]]))
    out = kf_correct(st, sys, np.array([100.0]))
    assert abs(out.K[0, 0]) <= 1e-10
    assert out.theta[0] == pytest.approx(2.0, abs=1e-8)


def test_correct_perfect_observation():
    sys = LinearSystem(A=np.eye(2), C_obs=np.eye(2), Sigma_v=np.eye(2), Sigma_w=np.zeros((2, 2)))
    st = KalmanState(theta=np.zeros(2), P=np.eye(2))
    psi = np.array([3.0, -1.0])
    out = kf_correct(st, sys, psi)
    assert np.allclose(out.K, np.eye(2), atol=1e-12)
    assert np.allclose(out.theta, psi, atol=1e-12)


def test_correct_scalar_hand_value():
    sys = scalar_system(sigma_w_sq=1.0)
    st = KalmanState(theta=np.array([0.0]), P=np.array([[1.0]]))
    out = kf_correct(st, sys, np.array([1.0]))
    assert out.K[0, 0] == pytest.approx(0.5)
    assert out.P[0, 0] == pytest.approx(0.5)


def test_correct_singular_innovation_raises():
    sys = LinearSystem(
        A=np.eye(2), C_obs=np.array([[1.0, 0.0], [1.0, 0.0]]),
        Sigma_v=np.eye(2), Sigma_w=np.zeros((2, 2)),
    )
    st = KalmanState(theta=np.zeros(2), P=np.eye(2))
    with pytest.raises(NumericalError):
        kf_correct(st, sys, np.zeros(2))


def test_covariance_stays_psd_along_trajectory():
    rng = np.random.default_rng(0)
    sys = random_stable_system(3, seed=4)
    st = KalmanState(theta=np.zeros(3), P=np.eye(3))
    for _ in range(200):
        st = kf_predict(st, sys, np.zeros(3))
        st = kf_correct(st, sys, rng.standard_normal(3))
        assert np.allclose(st.P, st.P.T)
        assert np.linalg.eigvalsh(st.P)[0] >= -1e-10


def test_state_dim_cap():
    with pytest.raises(ValueError, match="capped"):
        LinearSystem(A=np.eye(65), C_obs=np.eye(65), Sigma_v=np.eye(65), Sigma_w=np.eye(65))


# ---------------------------------------------------------------------------
# gain with multiplicative observation noise
# ---------------------------------------------------------------------------


def test_gain_collapses_to_standard():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((4, 4))
    P = M @ M.T / 4 + 0.5 * np.eye(4)
    sigma_w_sq = 0.8
    K = kf_gain_multiplicative(P, np.eye(4), 0.0, sigma_w_sq, 0.0)
    expected = P @ np.linalg.inv(P + sigma_w_sq * np.eye(4))
    assert np.abs(K - expected).max() <= 1e-12


def test_gain_scalar_hand_values():
    K = kf_gain_multiplicative(np.array([[1.0]]), np.eye(1), 0.0, 1.0, 0.0)
    assert K[0, 0] == pytest.approx(0.5)
    K = kf_gain_multiplicative(np.array([[2.0]]), np.eye(1), 0.0, 3.0, np.array([[1.0]]))
    assert K[0, 0] == pytest.approx(0.5)  # 2 / (2 + 3 - 1)


def test_gain_reports_offending_eigenvalue():
    with pytest.raises(NumericalError, match="min eigenvalue"):
        kf_gain_multiplicative(np.array([[1.0]]), np.eye(1), 0.0, 0.5, np.array([[2.0]]))


# ---------------------------------------------------------------------------
# scalar-gain chain
# ---------------------------------------------------------------------------


def test_scalar_step_hand_values():
    s = ScalarGainState(p=0.0, k=1.0, sigma_h_sq=0.0, sigma_v_sq=1.0, sigma_w_sq=1.0)
    out = scalar_gain_step(s)
    assert out.k == pytest.approx(0.5)
    assert out.p == pytest.approx(0.5)


def test_scalar_step_equal_noise_pins_p_at_zero():
    s = ScalarGainState(p=0.3, k=0.5, sigma_h_sq=1.0, sigma_v_sq=0.7, sigma_w_sq=1.0)
    for _ in range(5):
        s = scalar_gain_step(s)
        assert s.p == 0.0
    assert s.k == pytest.approx(1.0)


def test_scalar_step_rejects_w_below_h():
    with pytest.raises(ValueError):
        ScalarGainState(p=0.0, k=1.0, sigma_h_sq=2.0, sigma_v_sq=0.0, sigma_w_sq=1.0)


def test_scalar_iteration_reaches_golden_ratio():
    s = ScalarGainState(p=0.0, k=1.0, sigma_h_sq=0.0, sigma_v_sq=1.0, sigma_w_sq=1.0)
    prev = math.inf
    while abs(s.p - prev) > 1e-12:
        prev = s.p
        s = scalar_gain_step(s)
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    assert s.p == pytest.approx(golden, abs=1e-10)
    assert s.k == pytest.approx(golden, abs=1e-10)


def test_fixed_point_examples():
    fp = scalar_fixed_point(0.0, 1.0, 1.0)
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    assert fp.p_inf == pytest.approx(golden, abs=1e-12)
    assert fp.k_inf == pytest.approx(golden, abs=1e-12)
    assert fp.c_k == pytest.approx(0.1459, abs=1e-4)

    fp = scalar_fixed_point(1.0, 1.0, 1.0)
    assert fp.p_inf == pytest.approx(0.0, abs=1e-12)
    assert fp.k_inf == pytest.approx(1.0)

    fp = scalar_fixed_point(0.0, 0.0, 1.0)
    assert fp.p_inf == 0.0
    assert fp.k_inf == 0.0


def test_random_triples_converge_to_fixed_point_at_rate_c_k():
    # The closed-form c_k upper-bounds the decay everywhere and equals the
    # exact local rate when the Hessian-noise level is zero.
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        sh, sv, sw = rng.uniform(0.0, 2.0, size=3)
        if checked % 2 == 0:
            sh = 0.0  # half the triples exercise the exact-rate regime
        if sw < sh or sv + sh < 1e-3 or 4 * sw + sv <= 3 * sh:
            continue
        fp = scalar_fixed_point(sh, sv, sw)
        if not 0 < fp.contraction < 0.95:
            continue
        s = ScalarGainState(p=0.0, k=1.0, sigma_h_sq=sh, sigma_v_sq=sv, sigma_w_sq=sw)
        ratios = []
        prev_err = None
        for _ in range(400):
            s = scalar_gain_step(s)
            err = abs(s.k - fp.k_inf)
            # measure the geometric regime, above the float plateau near k_inf
            if prev_err is not None and 1e-7 < err < 1e-3 and 1e-7 < prev_err:
                ratios.append(err / prev_err)
            prev_err = err
        assert abs(s.p - fp.p_inf) <= 1e-9
        assert abs(s.k - fp.k_inf) <= 1e-9
        assert fp.contraction <= fp.c_k + 1e-12
        if ratios:
            measured = float(np.median(ratios))
            assert abs(measured - fp.contraction) <= 0.05 * fp.contraction
            if sh == 0.0:
                assert abs(measured - fp.c_k) <= 0.05 * fp.c_k
        checked += 1


# ---------------------------------------------------------------------------
# estimator-quality simulation
# ---------------------------------------------------------------------------


def test_filter_beats_raw_observation():
    sys = random_stable_system(3, seed=0)
    runs = simulate_estimation(sys, steps=2000, runs=5, seed=0)
    for r in runs:
        assert r.mse_kf < 0.9 * r.mse_raw
        assert r.min_P_eig >= -1e-10


def test_simulation_deterministic():
    sys = random_stable_system(3, seed=1)
    a = simulate_estimation(sys, steps=500, runs=3, seed=2)
    b = simulate_estimation(sys, steps=500, runs=3, seed=2)
    assert [r.mse_kf for r in a] == [r.mse_kf for r in b]
