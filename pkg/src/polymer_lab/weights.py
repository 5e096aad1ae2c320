"""Site-weight laws, their exact moments and derived constants.

A weight family is a positive random variable omega(beta) with unit mean:

* standard:  exp(beta * xi) / psi(beta), psi the MGF of the noise xi
* log_gamma: (theta - 1) / X with X ~ Gamma(theta, 1)
* linear:    1 + beta * xi with mean-zero xi (non-positive draws rejected)

The log-gamma family can also be "matched": theta is then chosen at each
beta so that its second moment equals that of a standard family.
"""

import math
from dataclasses import dataclass, field, replace
from decimal import Decimal, localcontext

import numpy as np

NOISE_KINDS = ("gaussian", "rademacher", "uniform_centered", "shifted_exponential")
VARIANTS = ("standard", "log_gamma", "linear")


class WeightRejected(ValueError):
    """A linear weight draw came out non-positive."""


class DegenerateMoments(ValueError):
    pass


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseNoise:
    """Noise xi = mean + (centered law with the given variance).

    uniform_centered is uniform on [-w, w] with w = sqrt(3 var);
    shifted_exponential is Exp(rate) - 1/rate with rate = 1/sqrt(var).
    """

    kind: str = "gaussian"
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.variance > 0:
            raise ValueError("noise variance must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @property
    def exponential_rate(self) -> float:
        """Radius of finiteness of the MGF."""
        if self.kind == "shifted_exponential":
            return 1.0 / self.sigma
        return math.inf

    def third_central_moment(self) -> float:
        if self.kind == "shifted_exponential":
            return 2.0 * self.sigma ** 3
        return 0.0

    def sample(self, rng: np.random.Generator, size=None):
        s = self.sigma
        if self.kind == "gaussian":
            x = rng.standard_normal(size)
        elif self.kind == "rademacher":
            x = 2.0 * rng.integers(0, 2, size) - 1.0
        elif self.kind == "uniform_centered":
            x = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
        else:
            x = rng.standard_exponential(size) - 1.0
        return self.mean + s * x


def _log1p_sinhc_minus_one(u):
    """log(sinh(u)/u), accurate for small u."""
    u = abs(u)
    if u < 0.1:
        u2 = u * u
        return math.log1p(u2 / 6.0 * (1.0 + u2 / 20.0 * (1.0 + u2 / 42.0 * (1.0 + u2 / 72.0))))
    return math.log(math.sinh(u) / u) if u < 700 else u - math.log(2.0 * u)


def log_mgf(noise: BaseNoise, t: float) -> float:
    """log E exp(t xi), evaluated without cancellation near t = 0."""
    if abs(t) >= noise.exponential_rate:
        raise ValueError(f"MGF of {noise.kind} noise is infinite at t={t}")
    s = noise.sigma
    shift = noise.mean * t
    if noise.kind == "gaussian":
        return shift + 0.5 * noise.variance * t * t
    if noise.kind == "rademacher":
        x = abs(s * t)
        if x > 20:
            return shift + x - math.log(2.0) + math.log1p(math.exp(-2 * x))
        return shift + math.log1p(2.0 * math.sinh(0.5 * x) ** 2)
    if noise.kind == "uniform_centered":
        return shift + _log1p_sinhc_minus_one(math.sqrt(3.0) * s * t)
    rate = 1.0 / s
    return shift - math.log1p(-t / rate) - t / rate


def mgf(noise: BaseNoise, t: float) -> float:
    """psi(t) = E exp(t xi)."""
    return math.exp(log_mgf(noise, t))


# ---------------------------------------------------------------------------
# Families and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightFamily:
    variant: str
    noise: BaseNoise | None = None
    theta: float | None = None
    description: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown weight variant {self.variant!r}")
        if self.variant in ("standard", "linear") and self.noise is None:
            raise ValueError(f"{self.variant} weights need a noise law")
        if self.variant == "linear" and self.noise.mean != 0.0:
            raise ValueError("linear weights need mean-zero noise")
        if self.variant == "log_gamma":
            if self.theta is None and self.noise is None:
                raise ValueError("log_gamma needs theta or a noise law to match")
            if self.theta is not None and not self.theta > 2:
                raise DegenerateMoments("log_gamma needs theta > 2")
        if not self.description:
            object.__setattr__(self, "description", self._describe())

    def _describe(self):
        if self.variant == "log_gamma":
            if self.theta is not None:
                return f"log_gamma(theta={self.theta:g})"
            return f"log_gamma(matched to {self.noise.kind})"
        return f"{self.variant}({self.noise.kind}, var={self.noise.variance:g})"

    @classmethod
    def standard(cls, noise=None):
        return cls("standard", noise=noise or BaseNoise())

    @classmethod
    def log_gamma(cls, theta):
        return cls("log_gamma", theta=float(theta))

    @classmethod
    def log_gamma_matched(cls, noise=None):
        """Log-gamma weights with theta = theta_match(noise, beta) at each beta."""
        return cls("log_gamma", noise=noise or BaseNoise())

    @classmethod
    def linear(cls, noise=None):
        return cls("linear", noise=noise or BaseNoise())

    @property
    def is_matched(self) -> bool:
        return self.variant == "log_gamma" and self.theta is None

    def theta_at(self, beta: float) -> float:
        if self.theta is not None:
            return self.theta
        return theta_match(self.noise, beta)

    def to_record(self) -> dict:
        rec = {"variant": self.variant}
        if self.noise is not None:
            rec["noise.kind"] = self.noise.kind
            rec["noise.variance"] = self.noise.variance
            rec["noise.mean"] = self.noise.mean
        if self.variant == "log_gamma":
            rec["theta"] = "match" if self.theta is None else self.theta
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "WeightFamily":
        variant = rec["variant"]
        noise = None
        if "noise.kind" in rec:
            noise = BaseNoise(
                kind=rec["noise.kind"],
                mean=float(rec.get("noise.mean", 0.0)),
                variance=float(rec.get("noise.variance", 1.0)),
            )
        if variant == "log_gamma":
            theta = rec.get("theta", "match")
            if theta in (None, "match"):
                return cls("log_gamma", noise=noise or BaseNoise())
            return cls("log_gamma", theta=float(theta))
        return cls(variant, noise=noise)


def exact_power(n: int, alpha: float) -> float:
    """n ** -alpha computed with 40 significant digits, rounded once."""
    with localcontext() as ctx:
        ctx.prec = 40
        return float((-Decimal(alpha) * Decimal(n).ln()).exp())


@dataclass(frozen=True)
class PolymerParams:
    """Half-length n (paths have 2n + 1 sites) and beta = n ** -alpha.

    ``beta`` may be given explicitly, which is only meant for degenerate
    (beta = 0) or oracle setups.
    """

    n: int
    alpha: float = 0.22
    beta: float = field(default=None)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError("n must be a nonnegative integer")
        object.__setattr__(self, "n", int(self.n))
        if self.beta is None:
            if self.n == 0:
                raise ValueError("beta must be given explicitly when n = 0")
            if not 0 < self.alpha < 0.5:
                raise ValueError("alpha must lie in (0, 1/2)")
            object.__setattr__(self, "beta", exact_power(self.n, self.alpha))
        elif self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def sites(self) -> int:
        return (self.n + 1) ** 2


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_weight(family: WeightFamily, beta: float, rng: np.random.Generator) -> float:
    """One draw of omega(beta); raises WeightRejected for a non-positive linear draw."""
    if family.variant == "standard":
        return math.exp(beta * family.noise.sample(rng) - log_mgf(family.noise, beta))
    if family.variant == "log_gamma":
        theta = family.theta_at(beta)
        return (theta - 1.0) / rng.standard_gamma(theta)
    w = 1.0 + beta * family.noise.sample(rng)
    if w <= 0:
        raise WeightRejected(f"linear weight {w} <= 0")
    return w


def sample_weights(family: WeightFamily, beta: float, size: int, rng: np.random.Generator):
    """``size`` i.i.d. draws; returns (weights, rejected) where ``rejected``
    counts non-positive linear draws that were replaced by fresh ones."""
    if family.variant == "standard":
        xi = family.noise.sample(rng, size)
        return np.exp(beta * xi - log_mgf(family.noise, beta)), 0
    if family.variant == "log_gamma":
        theta = family.theta_at(beta)
        return (theta - 1.0) / rng.standard_gamma(theta, size), 0
    w = 1.0 + beta * family.noise.sample(rng, size)
    rejected = 0
    bad = w <= 0
    while bad.any():
        k = int(bad.sum())
        rejected += k
        w[bad] = 1.0 + beta * family.noise.sample(rng, k)
        bad = w <= 0
    return w, rejected


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentProfile:
    rho2: float
    rho3: float

    @property
    def second_moment(self) -> float:
        return 1.0 + self.rho2

    @property
    def third_moment(self) -> float:
        """E omega^3 = 1 + 3 rho2 + rho3."""
        return 1.0 + 3.0 * self.rho2 + self.rho3


def _standard_excess(noise, beta, k):
    """E omega^k - 1 for standard weights: psi(k b)/psi(b)^k - 1."""
    return math.expm1(log_mgf(noise, k * beta) - k * log_mgf(noise, beta))


def moment_profile(family: WeightFamily, beta: float) -> MomentProfile:
    """rho2 = E(omega-1)^2 and rho3 = E(omega-1)^3 in closed form."""
    if family.variant == "standard":
        e2 = _standard_excess(family.noise, beta, 2)
        e3 = _standard_excess(family.noise, beta, 3)
        return MomentProfile(rho2=e2, rho3=e3 - 3.0 * e2)
    if family.variant == "log_gamma":
        theta = family.theta_at(beta)
        if theta <= 3:
            return MomentProfile(rho2=1.0 / (theta - 2.0), rho3=math.inf)
        r = 1.0 / (theta - 2.0)
        # E omega^3 = (theta-1)^2 / ((theta-2)(theta-3)) = (1+r)^2/(1-r)
        return MomentProfile(rho2=r, rho3=4.0 * r * r / (1.0 - r))
    # Moments of the untruncated law; the rejection step is ignored.
    return MomentProfile(
        rho2=family.noise.variance * beta * beta,
        rho3=family.noise.third_central_moment() * beta ** 3,
    )


def theta_match(noise: BaseNoise, beta: float) -> float:
    """theta with (theta-1)/(theta-2) = psi(2 beta)/psi(beta)^2."""
    excess = _standard_excess(noise, beta, 2)
    if not excess > 0:
        raise DegenerateMoments("psi(2 beta) <= psi(beta)^2; nothing to match")
    return 2.0 + 1.0 / excess


# ---------------------------------------------------------------------------
# Centering and scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CenteringScaling:
    a_n: float
    scale: float
    lindeberg_scale: float


def centering_scaling(noise: BaseNoise, params: PolymerParams) -> CenteringScaling:
    """a_n = 2n (log psi(beta) + log 2 - sigma^4 beta^4 / 3) and
    scale = (4 sigma^4 beta^4 n)^(1/3), for unnormalized exp(beta xi) weights."""
    n, beta = params.n, params.beta
    s4b4 = noise.variance ** 2 * beta ** 4
    a_n = 2 * n * (log_mgf(noise, beta) + math.log(2.0) - s4b4 / 3.0)
    scale = (4.0 * s4b4 * n) ** (1.0 / 3.0)
    return CenteringScaling(a_n=a_n, scale=scale, lindeberg_scale=beta ** (4.0 / 3.0) * n ** (1.0 / 3.0))


def log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


CENTERINGS = ("nominal", "corrected", "crossover")


def crossover_time(family: WeightFamily, params: PolymerParams) -> float:
    """Effective continuum time T = 8 n rho2^2 (matches the variance of Z/C(2n,n))."""
    rho2 = moment_profile(family, params.beta).rho2
    return 8.0 * params.n * rho2 * rho2


def fluctuation_centering(family: WeightFamily, params: PolymerParams, mode: str = "nominal",
                          noise: BaseNoise | None = None) -> tuple[float, float]:
    """(center, scale) for the statistic (log Z - center)/scale of a unit-mean family.

    nominal:   the stated a_n and (4 sigma^4 beta^4 n)^(1/3), shifted by
               (2n+1) log psi(beta) because our standard weights are divided
               by psi(beta) at each of the 2n+1 sites (2n log psi for linear
               weights, whose a_n has no log psi term).
    corrected: the same with sigma^4 beta^4 / 6 in place of / 3.
    crossover: log C(2n,n) - T/24 + log sqrt(2 pi T) with scale (T/2)^(1/3),
               T = 8 n rho2^2; the finite-T form of the same limit.

    ``noise`` is the reference noise for nominal/corrected; it defaults to
    the family's own noise (the matched noise for log-gamma).
    """
    n, beta = params.n, params.beta
    if mode == "crossover":
        t = crossover_time(family, params)
        return log_binom(2 * n, n) - t / 24.0 + 0.5 * math.log(2 * math.pi * t), (t / 2.0) ** (1.0 / 3.0)
    noise = noise or family.noise or BaseNoise()
    cs = centering_scaling(noise, params)
    if family.variant == "linear":
        shift = 2 * n * log_mgf(noise, beta)
    else:
        shift = (2 * n + 1) * log_mgf(noise, beta)
    if mode == "nominal":
        return cs.a_n - shift, cs.scale
    if mode == "corrected":
        s4b4 = noise.variance ** 2 * beta ** 4
        return cs.a_n - shift + 2 * n * s4b4 / 6.0, cs.scale
    raise ValueError(f"unknown centering {mode!r}")


# ---------------------------------------------------------------------------
# Validity checker
# ---------------------------------------------------------------------------


@dataclass
class ValidityReport:
    betas: list
    k_list: list
    s: float
    moment_ratios: dict  # k -> list over betas of E|omega-1|^k / beta^k
    c_k: dict  # k -> sup over betas
    tail_probs: list  # per beta, P(omega outside [exp(-beta^s), exp(beta^s)])
    tail_fit_slope: float  # slope of -log P against beta^(s-1); nan if all tails empty
    mean_error: list  # per beta |mean - 1|
    mean_stderr: list
    min_weight: float
    rejected: int
    verdicts: dict

    def rows(self):
        for ib, b in enumerate(self.betas):
            row = {"beta": b, "mean_error": self.mean_error[ib], "tail_prob": self.tail_probs[ib]}
            for k in self.k_list:
                row[f"C{k}"] = self.moment_ratios[k][ib]
            yield row


def check_validity(family: WeightFamily, beta_grid, k_list, s: float, samples_per_point: int,
                   rng: np.random.Generator) -> ValidityReport:
    """Empirical check of the four weight conditions over a grid of betas.

    Positivity (min draw > 0), unit mean (|mean-1| within 5 stderr), bounded
    E|omega-1|^k / beta^k across the grid, and tail probabilities outside
    [exp(-beta^s), exp(beta^s)] that decay in beta^(s-1) (fitted slope > 0).
    """
    betas = [float(b) for b in beta_grid]
    if not betas or any(not b > 0 for b in betas):
        raise ValueError("beta grid must be nonempty and strictly positive")
    if samples_per_point < 10_000:
        raise ValueError("samples_per_point must be at least 1e4")
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    ratios = {k: [] for k in k_list}
    tails, merr, mse = [], [], []
    wmin = math.inf
    rejected = 0
    for b in betas:
        w, rej = sample_weights(family, b, samples_per_point, rng)
        rejected += rej
        wmin = min(wmin, float(w.min()))
        z = w - 1.0
        merr.append(abs(float(z.mean())))
        mse.append(float(z.std(ddof=1)) / math.sqrt(len(z)))
        for k in k_list:
            ratios[k].append(float(np.mean(np.abs(z) ** k)) / b ** k)
        lw = np.log(w)
        tails.append(float(np.mean(np.abs(lw) > b ** s)))
    xs = np.array([b ** (s - 1) for b in betas])
    ps = np.array(tails)
    keep = ps > 0
    slope = math.nan
    if keep.sum() >= 2:
        slope = float(np.polyfit(xs[keep], -np.log(ps[keep]), 1)[0])
    c_k = {k: max(v) for k, v in ratios.items()}
    verdicts = {
        "positivity": wmin > 0,
        "unit_mean": all(e <= 5 * se + 1e-15 for e, se in zip(merr, mse)),
        "moment_bound": all(np.isfinite(v) for v in c_k.values())
        and all(max(v) <= 10 * min(v) for v in ratios.values()),
        "concentration": bool(keep.sum() < 2 or slope > 0),
    }
    return ValidityReport(betas, list(k_list), s, ratios, c_k, tails, slope, merr, mse, wmin, rejected, verdicts)


# ---------------------------------------------------------------------------
# Exponent arithmetic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentReport:
    alpha: float
    delta: float
    s: float
    k: int
    lam: float
    lam_k: float
    strip_feasible: bool
    alpha_floor_conjectured: float
    alpha_floor_proved: float = 0.2


def exponent_lambda(alpha: float, delta: float) -> float:
    return ((2 - 17 * alpha) + 8 * delta - 20 * alpha * delta) / (3 * (1 + 4 * delta))


def exponent_lambda_k(alpha: float, delta: float, k: int) -> float:
    """Error exponent when the first k moments match (k = 2 gives exponent_lambda)."""
    return 2.0 / 3.0 - (k + 1) * alpha + 4.0 * alpha / 3.0 - 4.0 * alpha / (1 + 4 * delta)


def strip_feasible(alpha: float, delta: float, s: float) -> bool:
    return 1 - s * alpha < 4 * alpha / (1 + 4 * delta)


def exponent_report(alpha: float, delta: float, s: float = 0.8, k: int = 2) -> ExponentReport:
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    if delta < 0 or not 0 < s < 1 or k < 2:
        raise ValueError("need delta >= 0, s in (0,1), k >= 2")
    return ExponentReport(
        alpha=alpha,
        delta=delta,
        s=s,
        k=k,
        lam=exponent_lambda(alpha, delta),
        lam_k=exponent_lambda_k(alpha, delta, k),
        strip_feasible=strip_feasible(alpha, delta, s),
        alpha_floor_conjectured=2.0 / (3 * k + 11),
    )


def feasibility_boundary(delta: float, s_grid=None, alpha_grid=None) -> float:
    """Smallest alpha on ``alpha_grid`` for which some s on ``s_grid`` is strip-feasible."""
    s_grid = np.linspace(1e-3, 1 - 1e-6, 2001) if s_grid is None else np.asarray(s_grid)
    alpha_grid = np.linspace(0.15, 0.25, 10001) if alpha_grid is None else np.asarray(alpha_grid)
    ok = (1 - s_grid[None, :] * alpha_grid[:, None]) < 4 * alpha_grid[:, None] / (1 + 4 * delta)
    hit = np.flatnonzero(ok.any(axis=1))
    return float(alpha_grid[hit[0]]) if len(hit) else math.nan


def with_theta(family: WeightFamily, theta: float) -> WeightFamily:
    return replace(family, theta=float(theta), noise=None, description="")
