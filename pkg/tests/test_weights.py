import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from polymer_lab.rng import generator
from polymer_lab.weights import (
    BaseNoise,
    CENTERINGS,
    DegenerateMoments,
    PolymerParams,
    WeightFamily,
    WeightRejected,
    centering_scaling,
    check_validity,
    crossover_time,
    exact_power,
    exponent_lambda,
    exponent_report,
    feasibility_boundary,
    fluctuation_centering,
    log_binom,
    log_mgf,
    mgf,
    moment_profile,
    sample_weight,
    sample_weights,
    strip_feasible,
    theta_match,
)

NOISES = [BaseNoise(k, variance=v) for k in ("gaussian", "rademacher", "uniform_centered", "shifted_exponential")
          for v in (0.5, 1.0)]


# --- noise and mgf ----------------------------------------------------------


def test_mgf_closed_forms():
    assert mgf(BaseNoise("gaussian"), 0.1) == pytest.approx(math.exp(0.005), rel=1e-15)
    assert mgf(BaseNoise("gaussian"), 0.1) == pytest.approx(1.005012521, abs=1e-9)
    assert mgf(BaseNoise("rademacher"), 0.1) == pytest.approx(math.cosh(0.1), rel=1e-15)
    for nz in NOISES:
        assert mgf(nz, 0.0) == 1.0


def _numeric_log_mgf(noise, t):
    """log E exp(t xi) by quadrature against the density (independent route)."""
    s = noise.sigma
    if noise.kind == "gaussian":
        f = lambda x: math.exp(t * x) * stats.norm.pdf(x, scale=s)
        val = integrate.quad(f, -40 * s, 40 * s, epsabs=0, epsrel=1e-13, limit=200)[0]
    elif noise.kind == "rademacher":
        val = 0.5 * (math.exp(t * s) + math.exp(-t * s))
    elif noise.kind == "uniform_centered":
        w = math.sqrt(3) * s
        val = integrate.quad(lambda x: math.exp(t * x) / (2 * w), -w, w, epsabs=0, epsrel=1e-13)[0]
    else:
        f = lambda y: math.exp(t * (y - s) - y / s) / s
        val = integrate.quad(f, 0, math.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    return math.log(val) + t * noise.mean


@pytest.mark.parametrize("noise", NOISES, ids=lambda n: f"{n.kind}-{n.variance}")
@pytest.mark.parametrize("t", [1e-4, 0.05, 0.3])
def test_log_mgf_matches_quadrature(noise, t):
    assert log_mgf(noise, t) == pytest.approx(_numeric_log_mgf(noise, t), rel=1e-9)


def test_exponential_mgf_radius():
    nz = BaseNoise("shifted_exponential")
    assert nz.exponential_rate == 1.0
    with pytest.raises(ValueError):
        log_mgf(nz, 1.0)


def test_noise_validation():
    with pytest.raises(ValueError):
        BaseNoise("cauchy")
    with pytest.raises(ValueError):
        BaseNoise("gaussian", variance=0.0)


# --- sampling -------------------------------------------------------------


def test_standard_beta_zero_is_one():
    assert sample_weight(WeightFamily.standard(), 0.0, generator(1)) == 1.0
    w, rej = sample_weights(WeightFamily.standard(), 0.0, 100, generator(1))
    assert np.all(w == 1.0) and rej == 0


@pytest.mark.parametrize("family", [WeightFamily.standard(), WeightFamily.log_gamma_matched(),
                                    WeightFamily.linear(), WeightFamily.standard(BaseNoise("rademacher"))],
                         ids=lambda f: f.description)
def test_unit_mean_by_monte_carlo(family):
    w, _ = sample_weights(family, 0.3, 10 ** 6, generator(7))
    se = w.std() / math.sqrt(len(w))
    assert abs(w.mean() - 1.0) <= 4 * se


def test_log_gamma_second_moment():
    fam = WeightFamily.log_gamma(102.0)
    w, _ = sample_weights(fam, 0.1, 10 ** 6, generator(3))
    w2 = w ** 2
    assert abs(w2.mean() - 101 / 100) <= 4 * w2.std() / 1e3


def test_linear_rejection_counted():
    fam = WeightFamily.linear()
    w, rej = sample_weights(fam, 0.8, 200_000, generator(4))
    assert rej > 0 and np.all(w > 0)
    # each site is redrawn until positive: expected redraws p / (1 - p), p = Phi(-1.25)
    p = stats.norm.cdf(-1.25)
    assert rej / 200_000 == pytest.approx(p / (1 - p), rel=0.05)


def test_sample_weight_rejects_nonpositive_linear():
    fam = WeightFamily.linear()
    rng = generator(5)
    with pytest.raises(WeightRejected):
        for _ in range(10_000):
            sample_weight(fam, 2.0, rng)


def test_family_validation():
    with pytest.raises(DegenerateMoments):
        WeightFamily.log_gamma(2.0)
    with pytest.raises(ValueError):
        WeightFamily("linear", noise=BaseNoise(mean=0.5))
    with pytest.raises(ValueError):
        WeightFamily("bogus", noise=BaseNoise())


@pytest.mark.parametrize("family", [WeightFamily.standard(BaseNoise("uniform_centered", variance=2.0)),
                                    WeightFamily.log_gamma(7.5), WeightFamily.log_gamma_matched(BaseNoise("rademacher")),
                                    WeightFamily.linear()], ids=lambda f: f.description)
def test_family_record_round_trip(family):
    assert WeightFamily.from_record(family.to_record()) == family


# --- moments --------------------------------------------------------------


def test_moment_profiles_closed_forms():
    assert moment_profile(WeightFamily.log_gamma(102.0), 0.1).rho2 == pytest.approx(0.01, rel=1e-15)
    assert moment_profile(WeightFamily.linear(), 0.1).rho2 == pytest.approx(0.01, rel=1e-15)
    assert moment_profile(WeightFamily.standard(), 0.1).rho2 == pytest.approx(math.expm1(0.01), rel=1e-14)
    assert moment_profile(WeightFamily.standard(), 0.1).rho2 == pytest.approx(0.0100502, abs=1e-7)


@pytest.mark.parametrize("theta", [3.5, 6.0, 20.0, 102.0])
def test_log_gamma_moments_match_quadrature(theta):
    # E omega^k = (theta-1)^k E X^-k, X ~ Gamma(theta), integrated numerically
    def ek(k):
        f = lambda x: ((theta - 1) / x) ** k * stats.gamma.pdf(x, theta)
        return integrate.quad(f, 0, math.inf, epsabs=0, epsrel=1e-12, limit=400)[0]

    mp = moment_profile(WeightFamily.log_gamma(theta), 0.0)
    e1, e2, e3 = ek(1), ek(2), ek(3)
    assert e1 == pytest.approx(1.0, rel=1e-10)
    assert mp.rho2 == pytest.approx(e2 - 1, rel=1e-9)
    assert mp.third_moment == pytest.approx(e3, rel=1e-9)
    assert mp.rho3 == pytest.approx(e3 - 3 * e2 + 2, rel=1e-8, abs=1e-14)


@pytest.mark.parametrize("beta", [1e-3, 0.1, 0.4])
def test_standard_moments_match_quadrature(beta):
    nz = BaseNoise()
    lp = log_mgf(nz, beta)

    def ek(k):
        f = lambda x: math.exp(k * (beta * x - lp)) * stats.norm.pdf(x)
        return integrate.quad(f, -40, 40, epsabs=0, epsrel=1e-13, limit=200)[0]

    mp = moment_profile(WeightFamily.standard(nz), beta)
    e2, e3 = ek(2), ek(3)
    assert mp.rho2 == pytest.approx(e2 - 1, rel=1e-7)
    assert mp.third_moment == pytest.approx(e3, rel=1e-12)


def test_theta_match_values():
    assert theta_match(BaseNoise("gaussian"), 0.1) == pytest.approx(2 + 1 / math.expm1(0.01), rel=1e-14)
    assert theta_match(BaseNoise("gaussian"), 0.1) == pytest.approx(101.50083, abs=1e-5)
    assert theta_match(BaseNoise("rademacher"), 0.1) == pytest.approx(2 + 1 / math.tanh(0.1) ** 2, rel=1e-13)
    assert theta_match(BaseNoise("rademacher"), 0.1) == pytest.approx(102.6673, abs=1e-4)


@pytest.mark.parametrize("noise", NOISES, ids=lambda n: f"{n.kind}-{n.variance}")
def test_theta_match_small_beta_asymptotics(noise):
    b = 1e-3
    assert theta_match(noise, b) * noise.variance * b * b == pytest.approx(1.0, rel=0.01)


@given(st.floats(1e-3, 0.45), st.sampled_from(NOISES))
@settings(max_examples=50)
def test_matched_second_moments_agree(beta, noise):
    # the moment profile evaluates the MGF at 3 beta
    beta = min(beta, 0.3 * noise.exponential_rate)
    std = moment_profile(WeightFamily.standard(noise), beta)
    lg = moment_profile(WeightFamily.log_gamma_matched(noise), beta)
    assert lg.rho2 == pytest.approx(std.rho2, rel=1e-12)


def test_theta_match_degenerate():
    with pytest.raises(DegenerateMoments):
        theta_match(BaseNoise(), 0.0)


# --- params and centering --------------------------------------------------


def test_beta_exact_power():
    assert PolymerParams(1024, 0.22).beta == pytest.approx(2 ** -2.2, rel=1e-16)
    assert exact_power(1024, 0.25) == 2 ** -2.5
    with pytest.raises(ValueError):
        PolymerParams(0)
    with pytest.raises(ValueError):
        PolymerParams(10, alpha=0.6)
    assert PolymerParams(0, beta=0.3).sites == 1


def test_centering_scaling_values():
    p = PolymerParams(1024, 0.22)
    cs = centering_scaling(BaseNoise(), p)
    assert cs.a_n == pytest.approx(1466.54, abs=5e-3)
    assert cs.scale == pytest.approx(2.0946, abs=5e-5)
    assert cs.scale ** 3 / (4 * p.beta ** 4 * 1024) == pytest.approx(1.0, rel=1e-14)


def test_centering_beta_zero_limit():
    p = PolymerParams(50, beta=0.0)
    assert centering_scaling(BaseNoise(), p).a_n == pytest.approx(100 * math.log(2), rel=1e-15)


def test_fluctuation_centering_modes():
    p = PolymerParams(256, 0.22)
    fam = WeightFamily.log_gamma(theta_match(BaseNoise(), p.beta))
    nominal = fluctuation_centering(fam, p, "nominal", noise=BaseNoise())
    corr = fluctuation_centering(fam, p, "corrected", noise=BaseNoise())
    cs = centering_scaling(BaseNoise(), p)
    assert nominal[0] == pytest.approx(cs.a_n - 513 * log_mgf(BaseNoise(), p.beta), rel=1e-14)
    assert corr[0] - nominal[0] == pytest.approx(2 * 256 * p.beta ** 4 / 6, rel=1e-12)
    t = crossover_time(fam, p)
    cc, sc = fluctuation_centering(fam, p, "crossover")
    assert cc == pytest.approx(log_binom(512, 256) - t / 24 + 0.5 * math.log(2 * math.pi * t), rel=1e-14)
    assert sc == pytest.approx((t / 2) ** (1 / 3), rel=1e-14)
    assert set(CENTERINGS) == {"nominal", "corrected", "crossover"}
    with pytest.raises(ValueError):
        fluctuation_centering(fam, p, "other")


# --- validity -------------------------------------------------------------


def test_validity_standard_gaussian():
    rep = check_validity(WeightFamily.standard(), [0.05, 0.1, 0.2, 0.3], [2, 4], 0.5, 100_000, generator(8))
    assert all(rep.verdicts.values()), rep.verdicts
    for b, r in zip(rep.betas, rep.moment_ratios[2]):
        exact = math.expm1(b * b) / (b * b)
        assert r == pytest.approx(exact, rel=0.05)


def test_validity_matched_log_gamma():
    rep = check_validity(WeightFamily.log_gamma_matched(), [0.05, 0.1, 0.2], [2, 3], 0.5, 100_000, generator(9))
    assert rep.verdicts["unit_mean"] and rep.verdicts["positivity"] and rep.verdicts["moment_bound"]
    assert len(list(rep.rows())) == 3


def test_validity_preconditions():
    with pytest.raises(ValueError):
        check_validity(WeightFamily.standard(), [0.0], [2], 0.5, 10_000, generator(1))
    with pytest.raises(ValueError):
        check_validity(WeightFamily.standard(), [0.1], [2], 0.5, 100, generator(1))


# --- exponents ------------------------------------------------------------


def test_exponent_values():
    assert exponent_lambda(0.22, 0.01) == pytest.approx(-0.546154, abs=1e-6)
    assert exponent_lambda(Fraction(2, 17), 0) == 0
    assert exponent_lambda(2 / 17, 0) == pytest.approx(0.0, abs=1e-15)
    assert strip_feasible(0.22, 0.01, 0.8)
    assert not strip_feasible(0.22, 0.01, 0.69)
    r = exponent_report(0.22, 0.01, 0.8, 2)
    assert r.lam_k == pytest.approx(r.lam, abs=1e-15)
    assert r.alpha_floor_conjectured == pytest.approx(2 / 17)


@given(st.floats(0.01, 0.49), st.floats(0, 0.5))
def test_lambda_k2_matches_general_formula(alpha, delta):
    r = exponent_report(alpha, delta)
    assert r.lam_k == pytest.approx(r.lam, abs=1e-12)


@pytest.mark.parametrize("delta", [1e-4, 1e-3, 1e-2])
def test_feasibility_boundary(delta):
    a = feasibility_boundary(delta)
    assert abs(a - 0.2) <= delta
    assert a == pytest.approx((1 + 4 * delta) / (5 + 4 * delta), abs=2e-5)
