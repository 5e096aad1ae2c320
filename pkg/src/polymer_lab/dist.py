"""Special functions and reference laws.

Airy function, digamma, the standard normal, the Tracy-Widom GUE
distribution function (Fredholm determinant of the Airy kernel) and the
one-sample Kolmogorov-Smirnov statistic.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.integrate import simpson
from scipy.special import erfc


class ConvergenceError(RuntimeError):
    """Raised when a quadrature refinement check fails."""


# ---------------------------------------------------------------------------
# Airy function
# ---------------------------------------------------------------------------

# Ai(0) and -Ai'(0)
_AI0 = 0.355028053887817239260063186004
_AIP0 = 0.258819403792806798405183560189

# Region boundaries.  The Maclaurin series is used on [AIRY_NEG_MACLAURIN,
# AIRY_POS_SWITCH].  Beyond AIRY_ANCHOR the decaying asymptotic expansion is
# used; in between, Ai is continued backwards from the anchor by its Taylor
# series (all terms share a sign there, so there is no cancellation).  Left
# of AIRY_NEG_SWITCH the oscillatory asymptotic expansion is used, and on
# [AIRY_NEG_SWITCH, AIRY_NEG_MACLAURIN) Ai is continued forwards from
# AIRY_NEG_SWITCH by its Taylor series: the Maclaurin terms there alternate
# with magnitudes up to exp(2/3 |x|^1.5) and would lose ~10 digits.
AIRY_NEG_SWITCH = -8.0
AIRY_NEG_MACLAURIN = -5.5
AIRY_POS_SWITCH = 3.0
AIRY_ANCHOR = 8.0

_N_MACLAURIN = 70
_N_TAYLOR = 90


def _u_coefficients(count):
    u = [1.0]
    for k in range(1, count):
        u.append(u[-1] * (6 * k - 5) * (6 * k - 3) * (6 * k - 1) / ((2 * k - 1) * 216 * k))
    v = [1.0] + [-(6 * k + 1) / (6 * k - 1) * u[k] for k in range(1, count)]
    return np.array(u), np.array(v)


_U, _V = _u_coefficients(60)


def _maclaurin(x):
    x3 = x ** 3
    f = np.ones_like(x)
    g = x.copy()
    df = np.zeros_like(x)
    dg = np.ones_like(x)
    tf = np.ones_like(x)
    tg = x.copy()
    tdf = x * x / 2.0
    tdg = np.ones_like(x)
    df = df + tdf
    for k in range(1, _N_MACLAURIN):
        tf = tf * x3 / ((3 * k - 1) * (3 * k))
        tg = tg * x3 / ((3 * k) * (3 * k + 1))
        tdg = tdg * x3 / ((3 * k - 2) * (3 * k))
        f += tf
        g += tg
        dg += tdg
        if k >= 2:
            tdf = tdf * x3 / ((3 * k - 3) * (3 * k - 1))
            df += tdf
    return _AI0 * f - _AIP0 * g, _AI0 * df - _AIP0 * dg


def _optimal_sum(coeffs, z, alternate=True, start=0, step=1):
    """Sum sign * coeffs[k] / z**k over k = start, start+step, ..., truncating
    each entry at its smallest term."""
    total = np.zeros_like(z)
    last = np.full_like(z, np.inf)
    live = np.ones(z.shape, dtype=bool)
    for i, k in enumerate(range(start, len(coeffs), step)):
        sign = -1.0 if (alternate and i % 2) else 1.0
        term = sign * coeffs[k] / z ** k
        mag = np.abs(term)
        live &= mag < last
        total = np.where(live, total + term, total)
        last = mag
        if not live.any():
            break
    return total


def _asymptotic_positive(x):
    z = 2.0 / 3.0 * x ** 1.5
    e = np.exp(-z) / (2.0 * math.sqrt(math.pi))
    ai = e / x ** 0.25 * _optimal_sum(_U, z)
    aip = -e * x ** 0.25 * _optimal_sum(_V, z)
    return ai, aip


def _asymptotic_negative(x):
    a = -x
    z = 2.0 / 3.0 * a ** 1.5
    c = np.cos(z - math.pi / 4)
    s = np.sin(z - math.pi / 4)
    p = _optimal_sum(_U, z, start=0, step=2)
    q = _optimal_sum(_U, z, start=1, step=2)
    r = _optimal_sum(_V, z, start=0, step=2)
    t = _optimal_sum(_V, z, start=1, step=2)
    ai = (c * p + s * q) / (math.sqrt(math.pi) * a ** 0.25)
    aip = a ** 0.25 * (s * r - c * t) / math.sqrt(math.pi)
    return ai, aip


def _anchor_coefficients(x0, asymptotic):
    """Taylor coefficients of Ai about x0 from Ai'' = x Ai, seeded by the asymptotic values."""
    a0, a1 = asymptotic(np.array([x0]))
    coef = np.zeros(_N_TAYLOR)
    coef[0], coef[1] = a0[0], a1[0]
    coef[2] = x0 * coef[0] / 2.0
    for k in range(1, _N_TAYLOR - 2):
        coef[k + 2] = (x0 * coef[k] + coef[k - 1]) / ((k + 2) * (k + 1))
    return coef, coef[1:] * np.arange(1, _N_TAYLOR)


_ANCHOR_COEF, _ANCHOR_DCOEF = _anchor_coefficients(AIRY_ANCHOR, _asymptotic_positive)
_NEG_COEF, _NEG_DCOEF = _anchor_coefficients(AIRY_NEG_SWITCH, _asymptotic_negative)


def _anchor_taylor(x):
    h = x - AIRY_ANCHOR
    ai = np.polynomial.polynomial.polyval(h, _ANCHOR_COEF)
    aip = np.polynomial.polynomial.polyval(h, _ANCHOR_DCOEF)
    return ai, aip


def _negative_taylor(x):
    h = x - AIRY_NEG_SWITCH
    ai = np.polynomial.polynomial.polyval(h, _NEG_COEF)
    aip = np.polynomial.polynomial.polyval(h, _NEG_DCOEF)
    return ai, aip


def airy_ai_and_prime(x):
    """Return ``(Ai(x), Ai'(x))`` for scalar or array ``x``."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    ai = np.empty_like(xa)
    aip = np.empty_like(xa)
    regions = [
        (xa < AIRY_NEG_SWITCH, _asymptotic_negative),
        ((xa >= AIRY_NEG_SWITCH) & (xa < AIRY_NEG_MACLAURIN), _negative_taylor),
        ((xa >= AIRY_NEG_MACLAURIN) & (xa <= AIRY_POS_SWITCH), _maclaurin),
        ((xa > AIRY_POS_SWITCH) & (xa < AIRY_ANCHOR), _anchor_taylor),
        (xa >= AIRY_ANCHOR, _asymptotic_positive),
    ]
    for mask, fn in regions:
        if mask.any():
            ai[mask], aip[mask] = fn(xa[mask])
    if np.ndim(x) == 0:
        return float(ai[0]), float(aip[0])
    return ai, aip


def airy_ai(x):
    """Airy function Ai(x)."""
    return airy_ai_and_prime(x)[0]


def airy_ai_prime(x):
    return airy_ai_and_prime(x)[1]


# ---------------------------------------------------------------------------
# Digamma
# ---------------------------------------------------------------------------

# Bernoulli-number coefficients B_{2k}/(2k) of the asymptotic series
_DIGAMMA_ASYMP = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_DIGAMMA_SHIFT = 12.0


def digamma(x):
    """Digamma function Psi(x) = Gamma'(x)/Gamma(x) for x > 0.

    Small arguments are shifted above 12 with Psi(x+1) = Psi(x) + 1/x, then
    the asymptotic series log x - 1/(2x) - sum B_2k / (2k x^2k) is applied.
    """
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~(xa > 0)):
        raise ValueError("digamma is only defined here for x > 0")
    acc = np.zeros_like(xa)
    y = xa.copy()
    small = y < _DIGAMMA_SHIFT
    while small.any():
        acc[small] -= 1.0 / y[small]
        y[small] += 1.0
        small = y < _DIGAMMA_SHIFT
    inv2 = 1.0 / (y * y)
    series = np.zeros_like(y)
    for c in reversed(_DIGAMMA_ASYMP):
        series = series * inv2 + c
    out = np.log(y) - 0.5 / y - series * inv2 + acc
    if np.ndim(x) == 0:
        return float(out[0])
    return out


# ---------------------------------------------------------------------------
# Normal law
# ---------------------------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) * _INV_SQRT2)
    return 0.5 * erfc(-np.asarray(x, dtype=float) * _INV_SQRT2)


def normal_pdf(x):
    if np.ndim(x) == 0:
        return _INV_SQRT2PI * math.exp(-0.5 * float(x) ** 2)
    x = np.asarray(x, dtype=float)
    return _INV_SQRT2PI * np.exp(-0.5 * x * x)


# ---------------------------------------------------------------------------
# Tracy-Widom GUE
# ---------------------------------------------------------------------------

DEFAULT_GRID = np.round(np.arange(-10.0, 6.0 + 1e-9, 0.02), 10)
DEFAULT_ORDER = 64
DEFAULT_TAIL_CUT = 16.0
REFINE_ORDERS = (40, 80)
REFINE_TOL = 1e-8
TABLE_FILE = "tw2_gue.csv"


@dataclass(frozen=True, eq=False)
class TWTable:
    """F_2 on an ascending grid, with shape-preserving cubic interpolation."""

    grid: np.ndarray
    cdf: np.ndarray
    quadrature_order: int
    tail_cut: float

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(np.diff(self.cdf) < 0):
            raise ValueError("cdf must be nondecreasing")

    @cached_property
    def _interp(self):
        return PchipInterpolator(self.grid, self.cdf, extrapolate=False)

    def mean(self) -> float:
        a, b = self.grid[0], self.grid[-1]
        return float(b - simpson(self.cdf, x=self.grid) + a * self.cdf[0])

    def variance(self) -> float:
        a, b = self.grid[0], self.grid[-1]
        second = b * b - 2.0 * simpson(self.grid * self.cdf, x=self.grid) + a * a * self.cdf[0]
        return float(second - self.mean() ** 2)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w") as fh:
            fh.write(f"# quadrature_order={self.quadrature_order} tail_cut={self.tail_cut!r}\n")
            fh.write("s,cdf\n")
            for s, f in zip(self.grid, self.cdf):
                fh.write(f"{float(s)!r},{float(f)!r}\n")

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open() as fh:
            header = fh.readline()
        meta = dict(tok.split("=") for tok in header.lstrip("#").split())
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        return cls(
            grid=data[:, 0],
            cdf=data[:, 1],
            quadrature_order=int(meta["quadrature_order"]),
            tail_cut=float(meta["tail_cut"]),
        )


def _airy_kernel_determinants(grid, m, tail_cut):
    t, w = np.polynomial.legendre.leggauss(m)
    half = tail_cut / 2.0
    out = np.empty(len(grid))
    for idx, s in enumerate(grid):
        x = s + half * (t + 1.0)
        sw = np.sqrt(half * w)
        ai, aip = airy_ai_and_prime(x)
        du = x[:, None] - x[None, :]
        np.fill_diagonal(du, 1.0)
        k = (ai[:, None] * aip[None, :] - aip[:, None] * ai[None, :]) / du
        np.fill_diagonal(k, aip * aip - x * ai * ai)
        out[idx] = np.linalg.det(np.eye(m) - sw[:, None] * k * sw[None, :])
    return out


def tw2_build(quadrature_order=DEFAULT_ORDER, tail_cut=DEFAULT_TAIL_CUT, grid=None, refine_check=True):
    """Evaluate F_2(s) = det(I - K_Ai) on L^2(s, s + tail_cut) at every grid point.

    Nystrom discretization with Gauss-Legendre nodes.  With ``refine_check``
    the determinants are also computed at orders 40 and 80 and the build
    fails with :class:`ConvergenceError` if any node moves by more than 1e-8.
    """
    if quadrature_order < 10:
        raise ValueError("quadrature_order must be >= 10")
    if tail_cut < 10:
        raise ValueError("tail_cut must be >= 10")
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be ascending")
    if refine_check:
        lo = _airy_kernel_determinants(grid, REFINE_ORDERS[0], tail_cut)
        hi = _airy_kernel_determinants(grid, REFINE_ORDERS[1], tail_cut)
        worst = float(np.max(np.abs(hi - lo)))
        if worst > REFINE_TOL:
            raise ConvergenceError(f"40-vs-80 refinement moved a node by {worst:.3e}")
    vals = _airy_kernel_determinants(grid, quadrature_order, tail_cut)
    # Rounding noise (~1e-16) in the far left tail can break monotonicity.
    vals = np.maximum.accumulate(np.clip(vals, 0.0, 1.0))
    return TWTable(grid=grid.copy(), cdf=vals, quadrature_order=int(quadrature_order), tail_cut=float(tail_cut))


def tw2_cdf(table: TWTable, s):
    """F_2(s) interpolated from ``table``; constant beyond the grid ends."""
    sa = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.clip(sa, table.grid[0], table.grid[-1])
    vals = table._interp(out)
    vals = np.clip(vals, 0.0, 1.0)
    # Exact node values (PCHIP already reproduces them; this guards rounding).
    idx = np.searchsorted(table.grid, sa)
    hit = (idx < len(table.grid)) & (table.grid[np.minimum(idx, len(table.grid) - 1)] == sa)
    vals[hit] = table.cdf[idx[hit]]
    vals[sa <= table.grid[0]] = table.cdf[0]
    vals[sa >= table.grid[-1]] = table.cdf[-1]
    if np.ndim(s) == 0:
        return float(vals[0])
    return vals


def tw2_quantile(table: TWTable, q: float, tol: float = 1e-13) -> float:
    """Bisection for s with F_2(s) = q."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    lo, hi = float(table.grid[0]), float(table.grid[-1])
    if q <= table.cdf[0] or q >= table.cdf[-1]:
        raise ValueError("q is outside the tabulated range")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if tw2_cdf(table, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_DEFAULT_TABLE = None


def default_table() -> TWTable:
    """The shipped F_2 table (built with the default order, cut and grid)."""
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        ref = resources.files("polymer_lab") / "data" / TABLE_FILE
        with resources.as_file(ref) as p:
            _DEFAULT_TABLE = TWTable.from_csv(p)
    return _DEFAULT_TABLE


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KSResult:
    statistic: float
    sample_count: int
    scaled: float
    p_value: float


def kolmogorov_sf(lam: float) -> float:
    """P(sup |B_t| > lam) for a Brownian bridge (asymptotic KS p-value)."""
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        # Jacobi theta form converges fast for small lam.
        c = math.pi ** 2 / (8.0 * lam * lam)
        s = sum(math.exp(-(2 * k - 1) ** 2 * c) for k in range(1, 20))
        p = 1.0 - math.sqrt(2.0 * math.pi) / lam * s
    else:
        p = 2.0 * sum((-1) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam) for k in range(1, 101))
    return min(1.0, max(0.0, p))


def ks_test(samples, cdf) -> KSResult:
    x = np.sort(np.asarray(samples, dtype=float))
    m = len(x)
    if m == 0:
        raise ValueError("ks_test needs at least one sample")
    try:
        f = np.asarray(cdf(x), dtype=float)
        if f.shape != x.shape:
            raise ValueError
    except (TypeError, ValueError):
        f = np.array([cdf(v) for v in x], dtype=float)
    i = np.arange(1, m + 1)
    d = float(max(np.max(np.abs(i / m - f)), np.max(np.abs((i - 1) / m - f))))
    lam = d * math.sqrt(m)
    return KSResult(statistic=d, sample_count=m, scaled=lam, p_value=kolmogorov_sf(lam))
