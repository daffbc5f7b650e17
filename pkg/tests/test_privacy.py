import math

import numpy as np
import pytest

from dpkf.privacy import (
    DEFAULT_ORDERS,
    PrivacyError,
    calibrate_gaussian,
    calibrate_noise_multiplier,
    classical_gaussian_sigma,
    clip_automatic,
    clip_batch,
    clip_normalized,
    clip_standard,
    compose_and_convert,
    delta_convention,
    gaussian_privacy_profile,
    noise_scaling_rule,
    rdp_gaussian,
    rdp_subsampled,
    subsampled_curve,
)

# ---------------------------------------------------------------------------
# clipping
# ---------------------------------------------------------------------------


def test_clip_standard_examples():
    assert np.array_equal(clip_standard(np.array([3.0, 4.0]), 10.0), [3.0, 4.0])
    assert np.allclose(clip_standard(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    assert np.array_equal(clip_standard(np.zeros(2), 1.0), [0.0, 0.0])
    with pytest.raises(PrivacyError):
        clip_standard(np.ones(2), 0.0)


def test_clip_automatic_examples():
    assert np.allclose(clip_automatic(np.array([3.0, 4.0]), 2.0), [1.2, 1.6])
    # small gradients are scaled up on purpose
    assert np.allclose(clip_automatic(np.array([0.3, 0.4]), 1.0), [0.6, 0.8])
    assert np.array_equal(clip_automatic(np.zeros(2), 1.0), [0.0, 0.0])


def test_clip_normalized_examples():
    assert np.allclose(clip_normalized(np.array([3.0, 4.0]), 2.0), [0.6, 0.8])
    assert np.allclose(clip_normalized(np.array([0.3, 0.4]), 1.0), [0.3, 0.4])


@pytest.mark.parametrize("dim", [1, 10, 1000])
def test_clip_direction_and_norm_bounds(dim):
    rng = np.random.default_rng(dim)
    C = 0.7
    for _ in range(1000 // (1 if dim == 1 else 1)):
        g = rng.standard_normal(dim) * rng.choice([1e-3, 1.0, 50.0])
        for fn, bound in (
            (clip_standard, C),
            (clip_automatic, C),
            (clip_normalized, 1.0),
        ):
            out = fn(g, C)
            assert np.linalg.norm(out) <= bound + 1e-9
            # non-negative scalar multiple of the input
            ng = np.linalg.norm(g)
            if ng > 0:
                scale = out @ g / (ng * ng)
                assert scale >= 0
                assert np.allclose(out, scale * g, atol=1e-9)


def test_clip_batch_matches_single_vector_ops():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((6, 4)) * 3
    for variant, fn in (
        ("standard", clip_standard),
        ("automatic", clip_automatic),
        ("normalized", clip_normalized),
    ):
        out = clip_batch(G, 1.3, variant)
        for i in range(len(G)):
            assert np.allclose(out[i], fn(G[i], 1.3), atol=1e-12)
    assert clip_batch(G, None, "none") is G


@pytest.mark.parametrize("variant", ["standard", "automatic"])
def test_batch_mean_sensitivity(variant):
    # Removing any one sample (divisor held at B) moves the averaged clipped
    # sum by at most C/B; enumerated over every sample of small batches.
    rng = np.random.default_rng(5)
    C = 1.0
    for B in (2, 3, 4):
        for trial in range(25):
            G = rng.standard_normal((B, 3)) * rng.choice([0.1, 1.0, 10.0])
            clipped = clip_batch(G, C, variant)
            mean_all = clipped.sum(axis=0) / B
            for i in range(B):
                mean_wo = (clipped.sum(axis=0) - clipped[i]) / B
                assert np.linalg.norm(mean_all - mean_wo) <= C / B + 1e-12


# ---------------------------------------------------------------------------
# Gaussian mechanism calibration
# ---------------------------------------------------------------------------


def test_calibration_beats_classical_bound():
    for eps in (0.1, 1.0, 4.0):
        sigma = calibrate_gaussian(1.0, eps, 1e-6)
        assert sigma < classical_gaussian_sigma(1.0, eps, 1e-6)


def test_calibration_meets_condition_with_tiny_slack():
    sigma = calibrate_gaussian(1.0, 1.0, 1e-6)
    resid = gaussian_privacy_profile(1.0, 1.0, sigma) - 1e-6
    assert resid <= 1e-8
    assert abs(resid) <= 1e-8


def test_calibration_is_minimal():
    for eps in (0.1, 1.0, 4.0):
        sigma = calibrate_gaussian(1.0, eps, 1e-6)
        shrunk = sigma * (1 - 1e-6)
        assert gaussian_privacy_profile(1.0, eps, shrunk) > 1e-6


def test_calibration_homogeneous_in_sensitivity():
    s1 = calibrate_gaussian(1.0, 1.0, 1e-6)
    s2 = calibrate_gaussian(2.0, 1.0, 1e-6)
    assert abs(s2 - 2.0 * s1) <= 1e-7


def test_calibration_rejects_bad_inputs():
    with pytest.raises(PrivacyError):
        calibrate_gaussian(1.0, -1.0, 1e-6)
    with pytest.raises(PrivacyError):
        calibrate_gaussian(1.0, 1.0, 1.5)
    with pytest.raises(PrivacyError):
        calibrate_gaussian(0.0, 1.0, 1e-6)


# ---------------------------------------------------------------------------
# RDP accountant
# ---------------------------------------------------------------------------


def test_rdp_gaussian_values():
    assert rdp_gaussian(1.0, 2) == 1.0
    assert rdp_gaussian(2.0, 8) == 1.0
    alphas = np.arange(2, 50)
    vals = [rdp_gaussian(1.3, a) for a in alphas]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert rdp_gaussian(2.0, 4) < rdp_gaussian(1.0, 4)


def test_rdp_subsampled_q1_reduces_to_gaussian():
    for sigma in (0.7, 1.0, 1.7, 4.0):
        for alpha in DEFAULT_ORDERS:
            assert abs(rdp_subsampled(1.0, sigma, alpha) - rdp_gaussian(sigma, alpha)) <= 1e-12


def test_rdp_subsampled_amplification():
    v = rdp_subsampled(0.01, 1.0, 2)
    assert 0.0 <= v <= rdp_gaussian(1.0, 2)


def test_rdp_subsampled_against_high_precision_oracle():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 60

    def oracle(q, sigma, alpha):
        total = mp.mpf(0)
        for k in range(alpha + 1):
            total += (
                mp.binomial(alpha, k)
                * mp.mpf(1 - q) ** (alpha - k)
                * mp.mpf(q) ** k
                * mp.e ** (mp.mpf(k * (k - 1)) / (2 * sigma**2))
            )
        return float(mp.log(total) / (alpha - 1))

    for q, sigma, alpha in ((0.01, 2.0, 16), (0.05, 1.0, 8), (0.3, 0.8, 32)):
        assert abs(rdp_subsampled(q, sigma, alpha) - oracle(q, sigma, alpha)) <= 1e-10


def test_rdp_subsampled_rejects_low_orders():
    with pytest.raises(PrivacyError):
        rdp_subsampled(0.1, 1.0, 1)
    with pytest.raises(PrivacyError):
        rdp_subsampled(0.1, 1.0, 2.5)


# ---------------------------------------------------------------------------
# composition + conversion
# ---------------------------------------------------------------------------


def test_compose_and_convert_single_step_value():
    # Continuous-order optimum of alpha/2 + ln(1e5)/(alpha-1) sits at
    # alpha* = 1 + sqrt(2 ln 1e5); the integer grid lands just above it.
    curve = subsampled_curve(1.0, 1.0)
    eps = compose_and_convert(curve, 1, 1e-5)
    alpha_star = 1 + math.sqrt(2 * math.log(1e5))
    continuous = alpha_star / 2 + math.log(1e5) / (alpha_star - 1)
    assert continuous <= eps <= continuous + 0.005
    assert abs(eps - 5.2985) < 0.01


def test_compose_monotone_in_steps():
    curve = subsampled_curve(0.05, 1.2)
    vals = [compose_and_convert(curve, t, 1e-5) for t in (1, 10, 100, 1000)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_conversion_penalty_vanishes_as_delta_grows():
    curve = subsampled_curve(1.0, 1.0)
    floor = min(2 * eps for eps in curve.values.values())
    eps = compose_and_convert(curve, 2, 1 - 1e-12)
    assert abs(eps - floor) < 1e-9


def test_compose_monotone_in_curve_values():
    from dpkf.privacy import RdpCurve

    curve = subsampled_curve(0.05, 1.2)
    base = compose_and_convert(curve, 50, 1e-5)
    for alpha in curve.orders():
        bumped = RdpCurve(dict(curve.values))
        bumped.values[alpha] += 0.01
        assert compose_and_convert(bumped, 50, 1e-5) >= base


def test_budget_and_calibration_record_validation():
    from dpkf.privacy import NoiseCalibration, PrivacyBudget

    PrivacyBudget(1.0, 1e-5)
    with pytest.raises(PrivacyError):
        PrivacyBudget(0.0, 1e-5)
    with pytest.raises(PrivacyError):
        PrivacyBudget(1.0, 1.0)
    NoiseCalibration(clip=1.0, sigma_dp=0.1, q=0.01, steps=100)
    with pytest.raises(PrivacyError):
        NoiseCalibration(clip=0.0, sigma_dp=0.1, q=0.01, steps=100)
    with pytest.raises(PrivacyError):
        NoiseCalibration(clip=1.0, sigma_dp=0.1, q=1.5, steps=100)


# ---------------------------------------------------------------------------
# noise-multiplier inversion
# ---------------------------------------------------------------------------


def test_noise_multiplier_round_trip():
    delta = delta_convention(50_000)
    for eps in (0.5, 1.0, 2.0, 4.0, 8.0):
        z = calibrate_noise_multiplier(eps, delta, 0.01, 2000)
        back = compose_and_convert(subsampled_curve(0.01, z), 2000, delta)
        assert abs(back - eps) <= 1e-3
        assert back <= eps  # returned multiplier is on the feasible side


def test_noise_multiplier_monotone_in_epsilon():
    delta = 1e-5
    zs = [calibrate_noise_multiplier(e, delta, 0.02, 500) for e in (0.5, 1, 2, 4, 8)]
    assert all(a > b for a, b in zip(zs, zs[1:]))


def test_noise_multiplier_sqrt_t_scaling():
    # In the amplified regime sigma^2 grows linearly with T; measure the
    # log-log slope on the large-T tail of the {100..10000} range.
    delta = 1e-5
    Ts = [100, 300, 1000, 3000, 10000]
    zs = [calibrate_noise_multiplier(1.0, delta, 0.01, t) for t in Ts]
    assert all(b > a for a, b in zip(zs, zs[1:]))
    tail_slope = (math.log(zs[-1]) - math.log(zs[-3])) / (
        math.log(Ts[-1]) - math.log(Ts[-3])
    )
    assert 0.35 <= tail_slope <= 0.6


def test_noise_multiplier_infeasible_target():
    with pytest.raises(PrivacyError, match="infeasible at sigma<="):
        calibrate_noise_multiplier(1e-4, 1e-6, 0.5, 100_000, sigma_max=50.0)


# ---------------------------------------------------------------------------
# scaling rule and delta convention
# ---------------------------------------------------------------------------


def test_noise_scaling_rule_values():
    assert noise_scaling_rule(1.0, 1, 1, 1.0, math.exp(-1.0), 1.0) == pytest.approx(1.0)
    base = noise_scaling_rule(1.0, 100, 50, 1.0, 1e-5, 2.0)
    assert noise_scaling_rule(1.0, 400, 50, 1.0, 1e-5, 2.0) == pytest.approx(2 * base)
    assert noise_scaling_rule(1.0, 100, 100, 1.0, 1e-5, 2.0) == pytest.approx(base / 2)


def test_delta_convention_values():
    assert delta_convention(50_000) == pytest.approx(6.8e-6, rel=0.02)
    assert delta_convention(60_000) == pytest.approx(5.5e-6, rel=0.02)
    with pytest.raises(PrivacyError):
        delta_convention(1)
