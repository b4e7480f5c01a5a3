import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from diffamp import analytic as an
from diffamp.analytic import MeterConfig, PpsConfig
from diffamp.errors import ConfigError, DegenerateError

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
angles = st.floats(min_value=0.0, max_value=math.pi, allow_nan=False)
signed_unit = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


def theta_of(y):
    return math.acos(y)


# -- quadrature oracle built directly from the mixture model ---------------


def _raw_densities(pps, meter):
    up = norm(meter.d, meter.sigma).pdf
    down = norm(-meter.d, meter.sigma).pdf
    acc = lambda x: pps.alpha2 * pps.a2 * up(x) + pps.beta2 * pps.b2 * down(x)
    rej = lambda x: pps.alpha2 * (1 - pps.a2) * up(x) + pps.beta2 * (1 - pps.b2) * down(x)
    return acc, rej


def _quad(f, meter):
    lo = -abs(meter.d) - 10 * meter.sigma
    hi = abs(meter.d) + 10 * meter.sigma
    return integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)[0]


def quad_moments(pps, meter):
    out = []
    for dens in _raw_densities(pps, meter):
        mass = _quad(dens, meter)
        mean = _quad(lambda x: x * dens(x), meter) / mass
        var = _quad(lambda x: (x - mean) ** 2 * dens(x), meter) / mass
        out.append((mass, mean, var))
    return out


# -- types ------------------------------------------------------------------


@given(unit, angles)
def test_pps_invariants_from_alpha2(alpha2, theta):
    p = PpsConfig.from_alpha2(alpha2, theta)
    assert p.alpha2 + p.beta2 == 1.0
    assert p.a2 + p.b2 == 1.0
    assert p.B == p.alpha2 - p.beta2
    assert abs(p.y - (1 - 2 * p.b2)) <= 2e-16
    assert -1 <= p.B <= 1 and -1 <= p.y <= 1


@given(signed_unit, angles)
def test_pps_invariants_from_B(B, theta):
    p = PpsConfig.from_B(B, theta)
    assert p.alpha2 + p.beta2 == 1.0
    assert p.a2 + p.b2 == 1.0
    assert abs(p.B - (p.alpha2 - p.beta2)) <= 2e-16
    assert p.a2 == pytest.approx(math.cos(theta / 2) ** 2, abs=1e-15)


@pytest.mark.parametrize(
    "kwargs",
    [dict(alpha2=-0.1, theta=0.3), dict(alpha2=1.1, theta=0.3), dict(alpha2=0.5, theta=-0.01),
     dict(alpha2=0.5, theta=3.2), dict(alpha2=float("nan"), theta=0.3)],
)
def test_pps_rejects_out_of_range(kwargs):
    with pytest.raises(ConfigError):
        PpsConfig.from_alpha2(**kwargs)


def test_pps_theta_half_pi_gives_zero_y():
    assert PpsConfig.from_B(0.3, math.pi / 2).y == 0.0
    assert PpsConfig.from_B(0.3, np.linspace(0, math.pi, 101)[50]).y == 0.0
    assert PpsConfig.from_B(0.3, math.pi).y == -1.0


def test_meter_config():
    m = MeterConfig(d=0.3, sigma=1.5)
    assert m.g == (0.3 / 3.0) ** 2
    m = MeterConfig.from_g(0.1)
    assert m.g == pytest.approx(0.1, rel=1e-15)
    for bad in (0.0, -1.0, float("inf")):
        with pytest.raises(ConfigError):
            MeterConfig(d=0.1, sigma=bad)


def test_mixture_density_contract():
    with pytest.raises(ConfigError):
        an.MixtureDensity(((-0.1, 0, 1),))
    with pytest.raises(ConfigError):
        an.MixtureDensity(((0.5, 0, 1),), normalized=True)
    m = an.MixtureDensity(((1, -1, 1), (3, 1, 2))).normalize()
    assert m.normalized
    assert m.mean() == pytest.approx(0.5)


# -- postselection_probs ----------------------------------------------------


@pytest.mark.parametrize("theta", [0.0, 0.4, 1.0, 2.0, math.pi])
def test_probs_balanced_preselection(theta):
    assert an.postselection_probs(PpsConfig.from_B(0.0, theta)) == (0.5, 0.5)


@pytest.mark.parametrize("B", [-1.0, -0.3, 0.2, 0.9, 1.0])
def test_probs_at_right_angle(B):
    assert an.postselection_probs(PpsConfig.from_B(B, math.pi / 2)) == (0.5, 0.5)


def test_probs_example():
    p_f, p_fbar = an.postselection_probs(PpsConfig.from_B(0.2, 0.0))
    assert p_f == pytest.approx(0.6, abs=1e-15)
    assert p_fbar == pytest.approx(0.4, abs=1e-15)


@given(signed_unit, angles)
def test_probs_sum_to_one(B, theta):
    p_f, p_fbar = an.postselection_probs(PpsConfig.from_B(B, theta))
    assert p_f + p_fbar == pytest.approx(1.0, abs=1e-15)
    assert 0 <= p_f <= 1


# -- conditional means ------------------------------------------------------


@pytest.mark.parametrize("B", [-0.9, 0.0, 0.3, 0.99])
def test_mean_at_theta_zero_is_d(B):
    x_f, _ = an.psa_psr_means(PpsConfig.from_B(B, 0.0), MeterConfig(0.37))
    assert x_f == pytest.approx(0.37, rel=1e-15)


def test_mean_example_against_quadrature():
    pps = PpsConfig.from_B(0.5, theta_of(0.5))
    meter = MeterConfig(d=0.3, sigma=1.0)
    x_f, x_fbar = an.psa_psr_means(pps, meter)
    assert x_f == pytest.approx(0.8 * 0.3, rel=1e-12)
    assert x_fbar == pytest.approx(0.0, abs=1e-15)
    (_, m1, _), (_, m2, _) = quad_moments(pps, meter)
    assert m1 == pytest.approx(0.24, rel=1e-9)
    assert m2 == pytest.approx(0.0, abs=1e-10)


def test_means_degenerate_postselection():
    with pytest.raises(DegenerateError) as e:
        an.psa_psr_means(PpsConfig.from_B(1.0, 0.0), MeterConfig(0.1))
    assert e.value.kind == "postselection"


GRID = list(itertools.product([-0.7, -0.1, 0.3, 0.6, 0.95], [0.2, 0.9, 1.4, 2.1, 2.9], [0.01, 0.1, 0.5, 2.0]))


def test_normalization_and_moments_against_quadrature():
    assert len(GRID) >= 100
    for B, theta, g in GRID:
        pps, meter = PpsConfig.from_B(B, theta), MeterConfig.from_g(g, sigma=1.3)
        (mass1, mean1, var1), (mass2, mean2, var2) = quad_moments(pps, meter)
        assert abs(mass1 + mass2 - 1.0) < 1e-10
        p_f, p_fbar = an.postselection_probs(pps)
        assert mass1 == pytest.approx(p_f, rel=1e-8)
        x_f, x_fbar = an.psa_psr_means(pps, meter)
        v1, v2 = an.subensemble_variances(pps, meter)
        assert mean1 == pytest.approx(x_f, rel=1e-8, abs=1e-12)
        assert mean2 == pytest.approx(x_fbar, rel=1e-8, abs=1e-12)
        assert var1 == pytest.approx(v1, rel=1e-8)
        assert var2 == pytest.approx(v2, rel=1e-8)


def test_mixture_density_matches_closed_forms():
    pps, meter = PpsConfig.from_B(0.4, 1.1), MeterConfig(0.7, 0.9)
    acc = an.psa_density(pps, meter)
    rej = an.psr_density(pps, meter)
    assert acc.mass() + rej.mass() == pytest.approx(1.0, abs=1e-15)
    assert acc.mean() == pytest.approx(an.psa_psr_means(pps, meter)[0], rel=1e-13)
    assert rej.variance() == pytest.approx(an.subensemble_variances(pps, meter)[1], rel=1e-13)
    xs = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(acc.pdf(xs), _raw_densities(pps, meter)[0](xs), rtol=1e-13)


# -- ratio factors and the DSA signal ---------------------------------------


def test_ratio_factors_examples():
    b1, b2 = an.ratio_factors(PpsConfig.from_B(0.5, theta_of(0.5)))
    assert (b1, b2) == (pytest.approx(2.5, rel=1e-14), pytest.approx(1.5, rel=1e-14))
    assert an.ratio_factors(PpsConfig.from_B(1.0, 0.0)) == (1.0, 0.0)


@given(signed_unit, angles)
def test_ratio_factor_difference_is_one(B, theta):
    pps = PpsConfig.from_B(B, theta)
    try:
        b1, b2 = an.ratio_factors(pps)
    except DegenerateError as e:
        assert e.kind == "balance" and abs(B * pps.y) < 1e-300
        return
    assert b1 - b2 == pytest.approx(1.0, rel=0, abs=4 * np.finfo(float).eps * max(1.0, abs(b1)))
    p_f, p_fbar = an.postselection_probs(pps)
    if abs(B * pps.y) > 1e-6:
        assert b1 == pytest.approx(p_f / (p_f - p_fbar), rel=1e-9)


@pytest.mark.parametrize("d", [0.05, -0.3, 2.0])
def test_dsa_signal_no_amplification_at_pure_preselection(d):
    assert an.dsa_signal(PpsConfig.from_B(1.0, 0.7), MeterConfig(d)) == d


def test_dsa_signal_example():
    assert an.dsa_signal(PpsConfig.from_B(0.1, 0.4), MeterConfig(0.05)) == pytest.approx(0.5, rel=1e-15)


def test_dsa_signal_independent_of_postselection():
    meter = MeterConfig(0.1)
    vals = [an.dsa_signal_from_moments(PpsConfig.from_B(0.2, t), meter) for t in (0.3, 1.0, 2.5)]
    for v in vals:
        assert v == pytest.approx(0.5, rel=1e-12)
    assert {an.dsa_signal(PpsConfig.from_B(0.2, t), meter) for t in (0.3, 1.0, 2.5)} == {0.1 / 0.2}


def test_dsa_signal_degenerate_kinds():
    with pytest.raises(DegenerateError) as e:
        an.dsa_signal(PpsConfig.from_B(0.0, 0.3), MeterConfig(0.1))
    assert e.value.kind == "preselection"
    with pytest.raises(DegenerateError) as e:
        an.dsa_signal(PpsConfig.from_B(0.4, math.pi / 2), MeterConfig(0.1))
    assert e.value.kind == "balance"


# -- variances and SNR ------------------------------------------------------


@pytest.mark.parametrize("B", [-0.5, 0.0, 0.4, 0.99])
def test_variances_at_theta_zero(B):
    meter = MeterConfig(0.3, 1.7)
    assert an.subensemble_variances(PpsConfig.from_B(B, 0.0), meter) == (1.7**2, 1.7**2)


def test_variances_example():
    meter = MeterConfig(0.3, 1.2)
    v1, v2 = an.subensemble_variances(PpsConfig.from_B(0.0, math.pi / 2), meter)
    assert v1 == v2 == pytest.approx(1.44 + 0.09, rel=1e-15)


@given(st.floats(-0.99, 0.99), angles, st.floats(0.01, 3.0))
def test_variances_at_least_meter_width(B, theta, d):
    meter = MeterConfig(d)
    v1, v2 = an.subensemble_variances(PpsConfig.from_B(B, theta), meter)
    assert v1 >= meter.sigma**2 and v2 >= meter.sigma**2


def test_dsa_variance_example_frozen():
    # hand evaluation: p = (0.625, 0.375), beta = (2.5, 1.5),
    # sigma_1^2 = 1.0144, sigma_2^2 = 1.04 -> 6.25*1.0144/6250 + 2.25*1.04/3750
    pps, meter = PpsConfig.from_B(0.5, theta_of(0.5)), MeterConfig(0.2, 1.0)
    assert an.dsa_variance(pps, meter, 10_000) == pytest.approx(1.6384e-3, rel=1e-12)
    # independent quadrature route
    (m1, _, v1), (m2, _, v2) = quad_moments(pps, meter)
    b1, b2 = m1 / (m1 - m2), m2 / (m1 - m2)
    assert b1**2 * v1 / (1e4 * m1) + b2**2 * v2 / (1e4 * m2) == pytest.approx(1.6384e-3, rel=1e-8)


@given(st.floats(0.05, 0.95), st.floats(0.1, 1.4), st.integers(1, 10**7))
def test_dsa_variance_scales_inverse_N(B, theta, N):
    pps, meter = PpsConfig.from_B(B, theta), MeterConfig(0.3)
    assert an.dsa_variance(pps, meter, 2 * N) == pytest.approx(an.dsa_variance(pps, meter, N) / 2, rel=1e-14)


def test_dsa_variance_diverges_towards_right_angle():
    meter = MeterConfig(0.3)
    vals = [an.dsa_variance(PpsConfig.from_B(0.5, math.pi / 2 - eps), meter, 100) for eps in (1e-1, 1e-3, 1e-6)]
    assert vals[0] < vals[1] < vals[2] and vals[2] > 1e9


@pytest.mark.parametrize("B", [0.1, 0.5, 0.9, -0.4])
@pytest.mark.parametrize("theta", [0.0, math.pi])
def test_reduced_snr_endpoints(B, theta):
    assert an.dsa_snr(PpsConfig.from_B(B, theta), MeterConfig.from_g(0.1), 100).reduced_snr == pytest.approx(1.0, abs=1e-12)


def test_snr_zero_at_right_angle():
    s = an.dsa_snr(PpsConfig.from_B(0.3, math.pi / 2), MeterConfig.from_g(0.1), 1000)
    assert s.snr == 0.0 and s.reduced_snr == 0.0


def test_reduced_snr_example():
    # oracle: written out with trig functions of theta directly
    g, B, th = 0.1, 0.2, math.pi / 4
    c2, s2 = math.cos(th) ** 2, math.sin(th) ** 2
    oracle = math.sqrt(c2) * math.sqrt((1 - B * B * c2) / (4 * g * (1 - B * B) * s2 + 1 - B * B * c2))
    got = an.dsa_snr(PpsConfig.from_B(B, th), MeterConfig.from_g(g), 50)
    assert oracle == pytest.approx(0.6466, abs=5e-5)
    assert got.reduced_snr == pytest.approx(oracle, rel=1e-12)
    assert an.dsa_snr_from_moments(PpsConfig.from_B(B, th), MeterConfig.from_g(g), 50).reduced_snr == pytest.approx(
        oracle, rel=1e-9
    )


@settings(max_examples=300)
@given(st.floats(-0.99, 0.99).filter(lambda b: abs(b) > 1e-3), angles, st.floats(1e-4, 5.0), st.integers(1, 10**6))
def test_snr_routes_agree(B, theta, g, N):
    pps = PpsConfig.from_B(B, theta)
    if abs(pps.y) < 1e-3:
        return
    meter = MeterConfig.from_g(g, sigma=0.7)
    a = an.dsa_snr(pps, meter, N)
    b = an.dsa_snr_from_moments(pps, meter, N)
    assert a.snr == pytest.approx(b.snr, rel=1e-9)
    assert 0.0 <= a.reduced_snr <= 1.0 + 1e-15


def test_weak_limit_b_independence():
    g = 1e-4
    vals = [an.dsa_snr(PpsConfig.from_B(B, math.pi / 3), MeterConfig.from_g(g), 1).reduced_snr
            for B in np.linspace(0, 0.9, 19)]
    assert max(vals) - min(vals) < 10 * g


# -- weak values ------------------------------------------------------------


def test_weak_value_classical_deterministic():
    assert an.weak_value((1.0, 0.0), (1.0, 0.0), "classical") == 1.0


def test_weak_value_quantum_singular():
    with pytest.raises(DegenerateError) as e:
        an.weak_value((0.8, 0.6), (0.6, -0.8), "quantum")
    assert e.value.kind == "weak_value"


def test_weak_value_quantum_anomalous_near_orthogonal():
    eps = 1e-3
    a, b = math.cos(math.atan2(-0.8, 0.6) + eps), math.sin(math.atan2(-0.8, 0.6) + eps)
    assert abs(an.weak_value((0.8, 0.6), (a, b), "quantum")) > 100


def test_weak_value_classical_bounded_grid():
    grid = np.linspace(0, 1, 60)
    degenerate = 0
    for alpha2, a2 in itertools.product(grid, grid):
        try:
            w = an.weak_value((alpha2, 1 - alpha2), (a2, 1 - a2), "classical")
        except DegenerateError:
            degenerate += 1
            continue
        assert abs(w) <= 1.0
    assert degenerate == 2


def test_weak_value_bad_mode():
    with pytest.raises(ConfigError):
        an.weak_value((1, 0), (1, 0), "both")


# -- biased signal ----------------------------------------------------------


def _bdsa_literal(pps, meter, beta):
    p_f, p_fbar = an.postselection_probs(pps)
    eta = p_f / p_fbar
    x_f, x_fbar = an.psa_psr_means(pps, meter)
    return (eta * x_f - beta * x_fbar) / (eta - beta)


@pytest.mark.parametrize("B,theta", [(0.3, 0.4), (-0.6, 2.0), (0.9, 1.2)])
def test_bdsa_zero_bias_is_psa_mean(B, theta):
    pps, meter = PpsConfig.from_B(B, theta), MeterConfig(0.25)
    assert an.bdsa_signal(pps, meter, 0.0).exact == pytest.approx(an.psa_psr_means(pps, meter)[0], rel=1e-14)


@pytest.mark.parametrize("B,theta,beta", [(0.3, 0.4, 0.4), (-0.6, 2.0, 2.0), (0.9, 1.2, 1.7), (0.5, 0.8, 3.0)])
def test_bdsa_matches_literal_form(B, theta, beta):
    pps, meter = PpsConfig.from_B(B, theta), MeterConfig(0.25)
    assert an.bdsa_signal(pps, meter, beta).exact == pytest.approx(_bdsa_literal(pps, meter, beta), rel=1e-12)


def test_bdsa_singular_ridge_location():
    # eta = 2 <=> (1 + By) / (1 - By) = 2 <=> By = 1/3
    B = 0.5
    y_star = 2.0 / 3.0
    meter = MeterConfig(1.0)
    for dy in (1e-2, 1e-4, 1e-6):
        v = an.bdsa_signal(PpsConfig.from_B(B, math.acos(y_star + dy)), meter, 2.0).exact
        assert abs(v) > 0.5 / dy
    pps = PpsConfig(alpha2=0.75, beta2=0.25, B=0.5, theta=math.acos(2 / 3), a2=5 / 6, b2=1 / 6, y=2 / 3)
    if an.biased_probability(pps, 2.0) == 0.0:
        with pytest.raises(DegenerateError):
            an.bdsa_signal(pps, meter, 2.0)
    pps = PpsConfig.from_B(1.0, math.acos(1 / 3))
    if an.biased_probability(pps, 2.0) == 0.0:
        with pytest.raises(DegenerateError) as e:
            an.bdsa_signal(pps, meter, 2.0)
        assert e.value.kind == "bias"


def test_bdsa_exact_singular_error():
    # B = 0.5, y = 0 gives eta = 1 exactly
    with pytest.raises(DegenerateError) as e:
        an.bdsa_signal(PpsConfig.from_B(0.5, math.pi / 2), MeterConfig(0.1), 1.0)
    assert e.value.kind == "bias"


@pytest.mark.parametrize("B,theta", [(0.2, 0.3), (0.5, 1.0), (-0.7, 2.5), (0.9, 0.1), (0.05, 2.9)])
def test_bdsa_unit_bias_is_unbiased_dsa(B, theta):
    pps, meter = PpsConfig.from_B(B, theta), MeterConfig(0.3)
    assert an.bdsa_signal(pps, meter, 1.0).exact == pytest.approx(an.dsa_signal(pps, meter), rel=1e-12)
    v = an.bdsa_variance_snr(pps, meter, 1.0, 1000).variance
    assert v == pytest.approx(an.dsa_variance(pps, meter, 1000), rel=1e-12)


@pytest.mark.parametrize("beta", [0.4, 2.0, 7.0])
def test_bdsa_approx_snr_zero_at_right_angle(beta):
    r = an.bdsa_variance_snr(PpsConfig.from_B(0.3, math.pi / 2), MeterConfig.from_g(0.1), beta, 100)
    assert r.snr_approx == 0.0


@pytest.mark.parametrize("B", [0.1, 0.5, 0.8])
@pytest.mark.parametrize("beta", [0.4, 2.0])
def test_bdsa_max_snr_below_conventional(B, beta):
    meter = MeterConfig.from_g(0.1)
    for theta in (0.0, math.pi):
        pps = PpsConfig.from_B(B, theta)
        if an.biased_probability(pps, beta) == 0:
            continue
        r = an.bdsa_variance_snr(pps, meter, beta, 1)
        assert 0.5 < r.reduced_snr <= 1.0
        assert 0.5 < r.reduced_snr_approx <= 1.0
        assert r.reduced_snr_approx == pytest.approx(math.sqrt(1 - B * B), rel=1e-12)


def test_bdsa_approx_is_consistent_near_resonance():
    pps, meter = PpsConfig.from_B(0.5, math.acos(2 / 3 + 1e-7)), MeterConfig(0.2)
    s = an.bdsa_signal(pps, meter, 2.0)
    assert s.approx == pytest.approx(s.exact, rel=1e-5)
    r = an.bdsa_variance_snr(pps, meter, 2.0, 1000)
    assert r.variance_approx == pytest.approx(r.variance, rel=1e-5)
    assert r.snr_approx == pytest.approx(r.snr, rel=1e-5)


@pytest.mark.parametrize("theta", [0.0, math.pi])
def test_bdsa_with_one_empty_channel(theta):
    # B = 1 and y = +-1 leave one sub-ensemble empty; the biased signal stays defined
    pps, meter = PpsConfig.from_B(1.0, theta), MeterConfig(0.3, 1.2)
    s = an.bdsa_signal(pps, meter, 2.0)
    assert s.exact == pytest.approx(0.3, rel=1e-15)
    assert s.approx is None
    r = an.bdsa_variance_snr(pps, meter, 2.0, 100)
    expected_var = 1.44 / 100 if theta == 0.0 else 4 * 1.44 / (100 * 4)
    assert r.variance == pytest.approx(expected_var, rel=1e-14)
    assert r.reduced_snr == pytest.approx(1.0, rel=1e-14)
    assert r.snr_approx is None and r.reduced_snr_approx is None
