"""Disorder fields and exact partition functions on the up-right lattice.

Paths run over times 0..2n with 0/1 steps from (0, 0) to (2n, n); column i
holds the heights max(0, i - n) .. min(i, n).  The partition function is
Z = sum over paths of prod_i omega(i, pi(i)), computed by a column sweep
that renormalizes every column by its maximum and keeps the log scale.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .paths import LatticePath, bridge_heights, enumerate_paths, BridgeSpec
from .rng import KeyedStream, mix64, unit_hash
from .weights import (
    PolymerParams,
    WeightFamily,
    fluctuation_centering,
    log_binom,
    moment_profile,
    sample_weights,
)

TAG_A = 0xA
TAG_B = 0xB
TAG_MASK = 0x3A5C


def column_range(n: int, i: int) -> tuple[int, int]:
    return max(0, i - n), min(i, n)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskSpec:
    """Which sites take family B in a hybrid field.

    kind "site": each site independently with probability ``fraction``.
    kind "strip": whole blocks of ``width`` consecutive columns at once.
    The mask depends only on ``seed``, so it is frozen for a run.
    """

    fraction: float
    kind: str = "site"
    width: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("mask fraction must lie in [0, 1]")
        if self.kind not in ("site", "strip"):
            raise ValueError("mask kind must be 'site' or 'strip'")
        if self.width < 1:
            raise ValueError("strip width must be >= 1")


def resolve_family(family, beta):
    """Replace a second-moment-matched log-gamma family by its concrete theta at beta."""
    if family is not None and family.is_matched:
        return WeightFamily.log_gamma(family.theta_at(beta))
    return family


@dataclass(frozen=True)
class FieldSpec:
    """Everything that determines a disorder field except its seed."""

    params: PolymerParams
    family_a: WeightFamily
    family_b: WeightFamily | None = None
    mask: MaskSpec | None = None

    def __post_init__(self):
        if self.family_b is not None and self.mask is None:
            object.__setattr__(self, "mask", MaskSpec(1.0))

    @property
    def n(self):
        return self.params.n

    @property
    def beta(self):
        return self.params.beta

    def field(self, seed: int) -> "DisorderField":
        return DisorderField(self, seed)

    def with_n(self, n: int) -> "FieldSpec":
        p = self.params
        return replace(self, params=PolymerParams(n, p.alpha))


class DisorderField:
    """Site weights that are a pure function of (seed, i, j, mask(i, j)).

    Nothing is stored: column i of the stream for family A (or B) is the
    Philox substream i of a key derived from (seed, tag), and the weight at
    height j is its (j - lo(i))-th draw.  ``column`` rebuilds it on demand.
    """

    def __init__(self, spec: FieldSpec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        self.n = spec.n
        self.beta = spec.beta
        self.family_a = resolve_family(spec.family_a, self.beta)
        self.family_b = resolve_family(spec.family_b, self.beta)
        self._streams = {}
        self.rejected = 0

    def _stream(self, words):
        s = self._streams.get(words)
        if s is None:
            s = self._streams[words] = KeyedStream(*words)
        return s

    def _draw(self, tag, family, i, size, cache):
        key = (self.seed, tag, family, self.beta)
        if cache is not None and key in cache:
            return cache[key]
        gen = self._stream((self.seed, tag)).at(i)
        w, rej = sample_weights(family, self.beta, size, gen)
        self.rejected += rej
        if cache is not None:
            cache[key] = w
        return w

    def mask_column(self, i: int) -> np.ndarray:
        """True where the site takes family B."""
        lo, hi = column_range(self.n, i)
        m = self.spec.mask
        size = hi - lo + 1
        if self.family_b is None or m.fraction == 0.0:
            return np.zeros(size, dtype=bool)
        if m.fraction == 1.0:
            return np.ones(size, dtype=bool)
        if m.kind == "strip":
            return np.full(size, unit_hash(m.seed, TAG_MASK, i // m.width) < m.fraction)
        return self._stream((m.seed, TAG_MASK)).at(i).random(size) < m.fraction

    def column(self, i: int, cache=None) -> np.ndarray:
        lo, hi = column_range(self.n, i)
        size = hi - lo + 1
        wa = self._draw(TAG_A, self.family_a, i, size, cache)
        if self.family_b is None:
            return wa
        wb = self._draw(TAG_B, self.family_b, i, size, cache)
        return np.where(self.mask_column(i), wb, wa)

    def weight(self, i: int, j: int) -> float:
        lo, hi = column_range(self.n, i)
        if not (0 <= i <= 2 * self.n and lo <= j <= hi):
            raise ValueError(f"site ({i}, {j}) is not on the lattice")
        return float(self.column(i)[j - lo])

    def materialize(self) -> "ExplicitField":
        return ExplicitField([self.column(i) for i in range(2 * self.n + 1)], beta=self.beta, family=self.family_a)


class ExplicitField:
    """A field given by its weight columns (column i has min(i,n)-max(0,i-n)+1 entries)."""

    def __init__(self, columns, beta: float = 0.0, family: WeightFamily | None = None):
        cols = [np.asarray(c, dtype=float) for c in columns]
        if len(cols) % 2 != 1:
            raise ValueError("need 2n + 1 columns")
        self.n = (len(cols) - 1) // 2
        for i, c in enumerate(cols):
            lo, hi = column_range(self.n, i)
            if c.shape != (hi - lo + 1,):
                raise ValueError(f"column {i} must have {hi - lo + 1} entries")
            if np.any(~(c > 0)):
                raise ValueError("weights must be positive")
        self._cols = cols
        self.beta = beta
        self.family_a = family
        self.seed = None

    @classmethod
    def from_function(cls, n: int, fn, **kw):
        cols = []
        for i in range(2 * n + 1):
            lo, hi = column_range(n, i)
            cols.append([fn(i, j) for j in range(lo, hi + 1)])
        return cls(cols, **kw)

    @classmethod
    def unit(cls, n: int):
        return cls.from_function(n, lambda i, j: 1.0)

    def column(self, i: int, cache=None) -> np.ndarray:
        return self._cols[i]

    def weight(self, i: int, j: int) -> float:
        lo, _ = column_range(self.n, i)
        return float(self._cols[i][j - lo])

    def materialize(self):
        return self


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _sweep_forward(fields, unit_columns=None, keep=False, stop=None):
    """Forward column sweep for several fields of equal n at once.

    Returns (vals, logscale) for the last processed column, where the true
    partial partition functions are vals * exp(logscale); with ``keep`` the
    normalized columns and scales of every column are returned instead.
    """
    n = fields[0].n
    last = 2 * n if stop is None else stop
    k = len(fields)
    # f[:, j + 1] holds height j; f[:, 0] stays zero.  Entries outside the
    # current column are never read by the next one, so they are not reset.
    f = np.zeros((k, n + 2))
    logscale = np.zeros(k)
    table = np.zeros((last + 1, k, n + 1)) if keep else None
    scales = np.zeros((last + 1, k)) if keep else None
    for i in range(last + 1):
        lo, hi = column_range(n, i)
        if i == 0:
            g = np.ones((k, 1))
        else:
            g = f[:, lo + 1 : hi + 2] + f[:, lo : hi + 1]
        if unit_columns is None or not unit_columns(i):
            cache = {}
            if k == 1:
                g *= fields[0].column(i, cache)
            else:
                g *= np.stack([fl.column(i, cache) for fl in fields])
        m = g.max(axis=1)
        g /= m[:, None]
        logscale += np.log(m)
        f[:, lo + 1 : hi + 2] = g
        if keep:
            table[i, :, lo : hi + 1] = g
            scales[i] = logscale
    if keep:
        return table, scales
    return f[:, 1:], logscale


def log_partitions(fields) -> np.ndarray:
    """log Z for several fields with the same n, in one sweep."""
    f, logscale = _sweep_forward(list(fields))
    n = fields[0].n
    return np.log(f[:, n]) + logscale


def log_partition(fld, mode: str = "renorm") -> float:
    """log Z by the column sweep.  ``mode="logsumexp"`` runs the slower
    per-cell log-domain recursion instead (used to validate the default)."""
    if mode == "logsumexp":
        return _log_partition_lse(fld)
    if mode != "renorm":
        raise ValueError(f"unknown mode {mode!r}")
    return float(log_partitions([fld])[0])


def _log_partition_lse(fld):
    n = fld.n
    lf = np.full(n + 1, -np.inf)
    for i in range(2 * n + 1):
        lo, hi = column_range(n, i)
        if i == 0:
            g = np.full(n + 1, -np.inf)
            g[0] = 0.0
        else:
            g = lf.copy()
            g[1:] = np.logaddexp(lf[1:], lf[:-1])
            g[:lo] = -np.inf
        g[lo : hi + 1] += np.log(fld.column(i))
        lf = g
    return float(lf[n])


def enumerate_partition(fld) -> float:
    """log Z by summing over all C(2n, n) paths explicitly (2n <= 20)."""
    n = fld.n
    if 2 * n > 20:
        raise ValueError("enumeration limited to 2n <= 20")
    if n == 0:
        return float(math.log(fld.column(0)[0]))
    paths = list(enumerate_paths(BridgeSpec(0, 2 * n, 0, n)))
    h = np.stack([p.heights() for p in paths])
    logw = np.zeros(len(paths))
    for i in range(2 * n + 1):
        lo, _ = column_range(n, i)
        logw += np.log(fld.column(i))[h[:, i] - lo]
    mx = logw.max()
    return float(mx + math.log(np.exp(logw - mx).sum()))


def forward_table(fld, unit_columns=None, stop=None):
    """Normalized forward columns F[i, j] and log scales (true F = F * e^scale).

    F(i, j) sums, over paths from (0, 0) to (i, j), the weights at columns
    0..i (the weight at (i, j) included)."""
    table, scales = _sweep_forward([fld], unit_columns, keep=True, stop=stop)
    return table[:, 0, :], scales[:, 0]


def backward_table(fld, unit_columns=None, stop=None):
    """Normalized backward columns B[i, j] and log scales.

    B(i, j) sums, over paths from (i, j) to (2n, n), the weights at columns
    i+1..2n (the weight at (i, j) excluded).  Columns below ``stop`` are
    left at zero."""
    n = fld.n
    first = 0 if stop is None else stop
    table = np.zeros((2 * n + 1, n + 1))
    scales = np.zeros(2 * n + 1)
    b = np.zeros(n + 1)
    b[n] = 1.0
    table[2 * n] = b
    logscale = 0.0
    for i in range(2 * n - 1, first - 1, -1):
        lo, hi = column_range(n, i + 1)
        wb = b.copy()
        if unit_columns is None or not unit_columns(i + 1):
            wb[lo : hi + 1] *= fld.column(i + 1)
        g = wb.copy()
        g[:-1] += wb[1:]
        lo_i, hi_i = column_range(n, i)
        g[:lo_i] = 0.0
        g[hi_i + 1 :] = 0.0
        m = g.max()
        g /= m
        logscale += math.log(m)
        b = g
        table[i] = b
        scales[i] = logscale
    return table, scales


def log_through_table(fld) -> np.ndarray:
    """log(omega(i,j) W(i,j)) for every site: the log partition function of
    paths forced through (i, j).  -inf off the lattice."""
    f, fs = forward_table(fld)
    b, bs = backward_table(fld)
    with np.errstate(divide="ignore"):
        out = np.log(f) + fs[:, None] + np.log(b) + bs[:, None]
    n = fld.n
    for i in range(2 * n + 1):
        lo, hi = column_range(n, i)
        out[i, :lo] = -np.inf
        out[i, hi + 1 :] = -np.inf
    return out


def log_partition_through(fld, i: int, j: int) -> float:
    n = fld.n
    lo, hi = column_range(n, i)
    if not (0 <= i <= 2 * n and lo <= j <= hi):
        raise ValueError(f"site ({i}, {j}) is not reachable")
    f, fs = forward_table(fld, stop=i)
    b, bs = backward_table(fld, stop=i)
    return float(math.log(f[i, j]) + fs[i] + math.log(b[i, j]) + bs[i])


def site_decomposition(fld, i: int, j: int) -> tuple[float, float]:
    """(log(omega W), log V) with Z = V + omega W at site (i, j)."""
    lz = log_partition(fld)
    lt = log_partition_through(fld, i, j)
    rest = -math.expm1(lt - lz)
    return lt, (lz + math.log(rest)) if rest > 0 else -math.inf


def site_occupation(fld) -> np.ndarray:
    """P(path passes (i, j)) under the quenched polymer measure."""
    lt = log_through_table(fld)
    return np.exp(lt - log_partition(fld))


# ---------------------------------------------------------------------------
# Polymer measure sampling
# ---------------------------------------------------------------------------


def sample_polymer_heights(fld, count: int, rng) -> np.ndarray:
    """``count`` independent paths from the polymer measure, as a
    (count, 2n + 1) height array (backward sampling on the forward table)."""
    n = fld.n
    f, _ = forward_table(fld)
    h = np.empty((count, 2 * n + 1), dtype=np.int64)
    h[:, 2 * n] = n
    cur = np.full(count, n)
    for i in range(2 * n, 0, -1):
        prev = f[i - 1]
        flat = prev[cur]
        up = np.where(cur > 0, prev[np.maximum(cur - 1, 0)], 0.0)
        go_up = rng.random(count) * (flat + up) < up
        cur = cur - go_up
        h[:, i - 1] = cur
    return h


def sample_polymer_path(fld, count: int, rng) -> list:
    h = sample_polymer_heights(fld, count, rng)
    return [LatticePath(0, 0, np.diff(row).astype(np.uint8)) for row in h]


def midpoint_spread(heights: np.ndarray) -> float:
    """Standard deviation of pi(n) - n/2 over sampled paths (exploratory)."""
    n = (heights.shape[1] - 1) // 2
    return float(np.std(heights[:, n] - n / 2.0))


@dataclass(frozen=True)
class OverlapEstimate:
    estimate: float
    stderr: float
    exact: float


def replica_triple_overlap(fld, trials: int, rng) -> OverlapEstimate:
    """Expected number of sites shared by three independent polymer paths.

    MC over sampled triples, reported with the exact quenched value
    sum_{i,j} P(site)^3."""
    h = [sample_polymer_heights(fld, trials, rng) for _ in range(3)]
    shared = np.count_nonzero((h[0] == h[1]) & (h[1] == h[2]), axis=1).astype(float)
    occ = site_occupation(fld)
    exact = float(np.sum(occ ** 3))
    se = float(shared.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
    return OverlapEstimate(float(shared.mean()), se, exact)


# ---------------------------------------------------------------------------
# Strips and the measure mu
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StripSpec:
    a: int
    b: int
    delta: float = 0.01

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise ValueError("need 0 <= a < b")

    @property
    def n0(self) -> int:
        return self.b - self.a

    @classmethod
    def default(cls, params: PolymerParams, delta: float = 0.01, n0: int | None = None):
        """Strip of length round(beta^(-4/(1+4 delta))) centred at time n."""
        if n0 is None:
            n0 = int(round(params.beta ** (-4.0 / (1.0 + 4.0 * delta))))
        n0 = max(2, min(n0, 2 * params.n))
        a = max(0, params.n - n0 // 2)
        return cls(a, a + n0, delta)

    def check(self, n: int):
        if self.b > 2 * n:
            raise ValueError(f"strip [{self.a}, {self.b}] exceeds [0, {2 * n}]")
        if self.n0 < 2:
            raise ValueError("strip length must be >= 2")


def _in_strip(strip):
    return lambda i: strip.a <= i <= strip.b


def strip_partition(fld, strip: StripSpec) -> tuple[float, float]:
    """(log Zcal, log Z_mu): Zcal has the in-strip weights replaced by 1 and
    Z_mu = Z / Zcal."""
    strip.check(fld.n)
    lz = log_partition(fld)
    f, s = _sweep_forward([fld], unit_columns=_in_strip(strip))
    lzc = float(np.log(f[0, fld.n]) + s[0])
    return lzc, lz - lzc


@dataclass
class EndpointLaw:
    """Quenched law of (pi(a), pi(b)) under mu: prob[x - x0, y - y0]."""

    x0: int
    y0: int
    prob: np.ndarray
    n0: int

    def slopes(self):
        xs = self.x0 + np.arange(self.prob.shape[0])
        ys = self.y0 + np.arange(self.prob.shape[1])
        return (ys[None, :] - xs[:, None]) / self.n0

    def pairs(self):
        xs = self.x0 + np.arange(self.prob.shape[0])
        ys = self.y0 + np.arange(self.prob.shape[1])
        return np.broadcast_arrays(xs[:, None], ys[None, :])


def _outside_vectors(fld, strip):
    """Outside-forward f(x) at column a (weights before a only) and
    outside-backward g(y) at column b (weights after b only), with their
    log scales."""
    n = fld.n
    unit = _in_strip(strip)
    ft, fs = forward_table(fld, unit_columns=unit, stop=strip.a)
    bt, bs = backward_table(fld, unit_columns=unit, stop=strip.b)
    return ft[strip.a], fs[strip.a], bt[strip.b], bs[strip.b]


def mu_endpoint_distribution(fld, strip: StripSpec) -> EndpointLaw:
    strip.check(fld.n)
    n = fld.n
    f, _, g, _ = _outside_vectors(fld, strip)
    xlo, xhi = column_range(n, strip.a)
    ylo, yhi = column_range(n, strip.b)
    xs = np.arange(xlo, xhi + 1)
    ys = np.arange(ylo, yhi + 1)
    rise = ys[None, :] - xs[:, None]
    ok = (rise >= 0) & (rise <= strip.n0)
    lc = np.where(ok, [[log_binom(strip.n0, int(r)) if 0 <= r <= strip.n0 else 0.0 for r in row] for row in rise], -np.inf)
    with np.errstate(divide="ignore"):
        lw = np.log(f[xs])[:, None] + lc + np.log(g[ys])[None, :]
    lw -= lw[np.isfinite(lw)].max()
    w = np.exp(lw)
    return EndpointLaw(int(xlo), int(ylo), w / w.sum(), strip.n0)


def mu_bad_slope_mass(fld, strip: StripSpec, good=(0.25, 0.75)) -> float:
    law = mu_endpoint_distribution(fld, strip)
    s = law.slopes()
    bad = (s < good[0]) | (s > good[1])
    return float(law.prob[bad].sum())


# ---------------------------------------------------------------------------
# Replica identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.lhs_stderr, self.rhs_stderr)

    @property
    def z(self) -> float:
        se = self.combined_stderr
        diff = self.lhs - self.rhs
        return 0.0 if diff == 0 else (diff / se if se > 0 else math.inf)


def _strip_z_mu_batch(fld, strip, f, g, weight_columns):
    """Z_mu for a batch of in-strip weight configurations.

    ``weight_columns(i, size)`` returns a (batch, size) array of weights for
    strip column i.  f, g are the outside vectors from _outside_vectors.
    """
    n = fld.n
    xlo, xhi = column_range(n, strip.a)
    cur = None
    for i in range(strip.a, strip.b + 1):
        lo, hi = column_range(n, i)
        w = weight_columns(i, hi - lo + 1)
        if cur is None:
            cur = np.zeros((w.shape[0], n + 1))
            cur[:, lo : hi + 1] = f[None, lo : hi + 1]
        else:
            nxt = cur.copy()
            nxt[:, 1:] += cur[:, :-1]
            nxt[:, :lo] = 0.0
            nxt[:, hi + 1 :] = 0.0
            cur = nxt
        cur[:, lo : hi + 1] *= w
    zcal_unit = _strip_unit_value(fld, strip, f, g)
    return (cur @ g) / zcal_unit


def _strip_unit_value(fld, strip, f, g):
    ones = lambda i, size: np.ones((1, size))
    n = fld.n
    cur = None
    for i in range(strip.a, strip.b + 1):
        lo, hi = column_range(n, i)
        if cur is None:
            cur = np.zeros(n + 1)
            cur[lo : hi + 1] = f[lo : hi + 1]
        else:
            nxt = cur.copy()
            nxt[1:] += cur[:-1]
            nxt[:lo] = 0.0
            nxt[hi + 1 :] = 0.0
            cur = nxt
    return float(cur @ g)


def strip_z_mu_samples(fld, strip: StripSpec, family: WeightFamily, trials: int, rng, chunk: int = 4096):
    """Z_mu with the outside environment of ``fld`` fixed and the in-strip
    weights redrawn i.i.d. from ``family`` in every trial."""
    strip.check(fld.n)
    f, _, g, _ = _outside_vectors(fld, strip)
    family = resolve_family(family, fld.beta)
    out = np.empty(trials)
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)

        def draw(i, width, size=size):
            w, _ = sample_weights(family, fld.beta, size * width, rng)
            return w.reshape(size, width)

        out[start : start + size] = _strip_z_mu_batch(fld, strip, f, g, draw)
    return out


def _bridges_varying(length, x, rise, rng):
    """Uniform bridges of a common length with per-row start x and rise."""
    size = len(x)
    keys = rng.random((size, length))
    rank = np.argsort(np.argsort(keys, axis=1), axis=1)
    steps = rank < rise[:, None]
    h = np.empty((size, length + 1), dtype=np.int64)
    h[:, 0] = x
    h[:, 1:] = x[:, None] + np.cumsum(steps, axis=1)
    return h


def sample_mu_paths(fld, strip: StripSpec, count: int, rng, law: EndpointLaw | None = None) -> np.ndarray:
    """``count`` paths on [a, b] drawn from mu: endpoints from the exact
    endpoint law, then a uniform bridge.  Returns heights (count, n0 + 1)."""
    law = law or mu_endpoint_distribution(fld, strip)
    p = law.prob.ravel()
    idx = rng.choice(len(p), size=count, p=p)
    ix, iy = np.unravel_index(idx, law.prob.shape)
    x = law.x0 + ix
    y = law.y0 + iy
    return _bridges_varying(strip.n0, x, y - x, rng)


def replica_rhs_samples(fld, strip, order, rho2, rho3, trials, rng, chunk=20_000):
    """Per-sample values of the path-replica side of the moment identity."""
    law = mu_endpoint_distribution(fld, strip)
    out = np.empty(trials)
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        hs = [sample_mu_paths(fld, strip, size, rng, law) for _ in range(order)]
        out[start : start + size] = _replica_product(hs, order, rho2, rho3)
    return out


def _replica_product(hs, order, rho2, rho3):
    if order == 2:
        lt = np.count_nonzero(hs[0] == hs[1], axis=1)
        return (1.0 + rho2) ** lt - 1.0
    e12 = hs[0] == hs[1]
    e13 = hs[0] == hs[2]
    e23 = hs[1] == hs[2]
    triple = e12 & e13
    pair_only = (e12 | e13 | e23) & ~triple
    return (1.0 + rho2) ** np.count_nonzero(pair_only, axis=1) * (1.0 + 3.0 * rho2 + rho3) ** np.count_nonzero(
        triple, axis=1
    )


def replica_moment_identity(fld, strip: StripSpec, order: int, disorder_trials: int, path_trials: int, rng,
                            family: WeightFamily | None = None) -> IdentityCheck:
    """Both sides of the replica identity with the outside environment fixed.

    order 2: E(Z_mu - 1)^2 = E_mu[(1 + rho2)^L] - 1
    order 3: E Z_mu^3 = E_mu[(1 + rho2)^(pair-only sites) (1 + 3 rho2 + rho3)^(triple sites)]
    The left side redraws the in-strip weights; the right side samples
    independent replicas from mu.  The two estimates are independent.
    """
    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    family = resolve_family(family or fld.family_a, fld.beta)
    mp = moment_profile(family, fld.beta)
    z = strip_z_mu_samples(fld, strip, family, disorder_trials, rng)
    lhs = (z - 1.0) ** 2 if order == 2 else z ** 3
    rhs = replica_rhs_samples(fld, strip, order, mp.rho2, mp.rho3, path_trials, rng)
    se = lambda v: float(v.std(ddof=1) / math.sqrt(len(v)))
    return IdentityCheck(float(lhs.mean()), se(lhs), float(rhs.mean()), se(rhs))


def replica_rhs_exact(fld, strip: StripSpec, order: int, rho2: float, rho3: float) -> float:
    """Path-replica side by summing over all tuples of paths on [a, b]."""
    law = mu_endpoint_distribution(fld, strip)
    paths, probs = [], []
    for ix in range(law.prob.shape[0]):
        for iy in range(law.prob.shape[1]):
            p = law.prob[ix, iy]
            if p == 0:
                continue
            x, y = law.x0 + ix, law.y0 + iy
            spec = BridgeSpec(strip.a, strip.b, x, y)
            for path in enumerate_paths(spec):
                paths.append(path.heights())
                probs.append(p / spec.count)
    h = np.array(paths)
    pr = np.array(probs)
    if order == 2:
        eq = (h[:, None, :] == h[None, :, :]).sum(axis=2)
        return float(pr @ ((1.0 + rho2) ** eq - 1.0) @ pr)
    e23 = h[:, None, :] == h[None, :, :]
    total = 0.0
    for k in range(len(pr)):
        e12 = (h[k] == h)[:, None, :]
        e13 = (h[k] == h)[None, :, :]
        triple = e12 & e13
        pair_only = (e12 | e13 | e23) & ~triple
        vals = (1.0 + rho2) ** pair_only.sum(axis=2) * (1.0 + 3.0 * rho2 + rho3) ** triple.sum(axis=2)
        total += pr[k] * float(pr @ vals @ pr)
    return total


def replica_lhs_exact_two_point(fld, strip: StripSpec, beta: float, order: int, batch: int = 1 << 18) -> float:
    """Disorder side for weights 1 +/- beta (fair coin) by enumerating every
    sign configuration of the in-strip sites."""
    strip.check(fld.n)
    n = fld.n
    f, _, g, _ = _outside_vectors(fld, strip)
    offsets = {}
    count = 0
    for i in range(strip.a, strip.b + 1):
        lo, hi = column_range(n, i)
        offsets[i] = count
        count += hi - lo + 1
    if count > 30:
        raise ValueError(f"{count} strip sites is too many to enumerate")
    total_configs = 1 << count
    acc = 0.0
    for start in range(0, total_configs, batch):
        idx = np.arange(start, min(start + batch, total_configs), dtype=np.int64)

        def cols(i, width, idx=idx):
            bits = (idx[:, None] >> (offsets[i] + np.arange(width))[None, :]) & 1
            return 1.0 + beta * (2.0 * bits - 1.0)

        z = _strip_z_mu_batch(fld, strip, f, g, cols)
        acc += float(((z - 1.0) ** 2).sum() if order == 2 else (z ** 3).sum())
    return acc / total_configs


# ---------------------------------------------------------------------------
# Free-energy ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FreeEnergySample:
    seed_index: int
    log_z: float
    centered_scaled: float

    CSV_HEADER = "seed_index,log_z,centered_scaled"


def sample_seed(master_seed: int, index: int) -> int:
    return mix64(master_seed, index)


def free_energy_ensemble(spec: FieldSpec, sample_count: int, master_seed: int, centering: str = "nominal",
                         start: int = 0) -> list:
    """log Z for samples start .. start + sample_count - 1, each from the field
    seeded by mix64(master_seed, index)."""
    center, scale = fluctuation_centering(resolve_family(spec.family_a, spec.beta), spec.params, centering,
                                          noise=spec.family_a.noise)
    out = []
    for idx in range(start, start + sample_count):
        lz = log_partition(spec.field(sample_seed(master_seed, idx)))
        cs = (lz - center) / scale if scale > 0 else 0.0
        out.append(FreeEnergySample(idx, lz, cs))
    return out


# ---------------------------------------------------------------------------
# Lindeberg swap
# ---------------------------------------------------------------------------

TEST_BATTERY = {
    "tanh": np.tanh,
    "gauss": lambda x: np.exp(-0.5 * np.asarray(x) ** 2),
    "sin": np.sin,
}


@dataclass
class ArmResult:
    name: str
    fraction: float
    description: str
    means: dict
    stderrs: dict
    diffs: dict = field(default_factory=dict)  # vs the pure-A arm
    diff_stderrs: dict = field(default_factory=dict)

    def z(self, test: str) -> float:
        d, se = self.diffs[test], self.diff_stderrs[test]
        if d == 0:
            return 0.0
        return d / se if se > 0 else math.inf


@dataclass
class SwapReport:
    n: int
    alpha: float
    samples: int
    center: float
    scale: float
    arms: list

    def arm(self, name: str) -> ArmResult:
        for a in self.arms:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha,
            "samples": self.samples,
            "center": self.center,
            "scale": self.scale,
            "arms": [
                {
                    "name": a.name,
                    "fraction": a.fraction,
                    "description": a.description,
                    "means": a.means,
                    "stderrs": a.stderrs,
                    "diffs": a.diffs,
                    "diff_stderrs": a.diff_stderrs,
                }
                for a in self.arms
            ],
        }


def swap_arms(family_a, family_b, params, mask_fractions, control_family=None, mask_kind="site",
              mask_width=1, mask_seed=0):
    """(name, fraction, FieldSpec) for the pure-A arm, each hybrid, pure B and the control."""
    arms = [("A", 0.0, FieldSpec(params, family_a))]
    for f in mask_fractions:
        m = MaskSpec(f, kind=mask_kind, width=mask_width, seed=mask_seed)
        arms.append((f"hybrid_{f:g}", f, FieldSpec(params, family_a, family_b, m)))
    if control_family is not None:
        arms.append(("control", 1.0, FieldSpec(params, family_a, control_family, MaskSpec(1.0, seed=mask_seed))))
    return arms


def swap_log_partitions(arm_specs, seed: int) -> np.ndarray:
    """log Z of every arm for one sample seed, sharing the column draws."""
    return log_partitions([spec.field(seed) for spec in arm_specs])


def summarize_swap(names, fractions, specs, log_z: np.ndarray, center: float, scale: float,
                   tests=None) -> SwapReport:
    """Statistics of a (samples, arms) log Z matrix; differences to arm 0
    are paired by sample index."""
    tests = tests or TEST_BATTERY
    m = log_z.shape[0]
    x = (log_z - center) / scale
    arms = []
    for k, (name, frac, spec) in enumerate(zip(names, fractions, specs)):
        means, ses, diffs, dses = {}, {}, {}, {}
        for tname, fn in tests.items():
            v = fn(x[:, k])
            means[tname] = float(v.mean())
            ses[tname] = float(v.std(ddof=1) / math.sqrt(m))
            d = v - fn(x[:, 0])
            diffs[tname] = float(d.mean())
            dses[tname] = float(d.std(ddof=1) / math.sqrt(m))
        desc = spec.family_a.description if spec.family_b is None else (
            f"{spec.family_a.description} / {spec.family_b.description} @ {frac:g}")
        arms.append(ArmResult(name, frac, desc, means, ses, diffs, dses))
    p = specs[0].params
    return SwapReport(p.n, p.alpha, m, center, scale, arms)


def lindeberg_sweep(family_a, family_b, params, mask_fractions, samples: int, master_seed: int,
                    control_family=None, tests=None, centering="nominal", mask_kind="site", mask_width=1):
    """Swap experiment on the same sample seeds for every arm (common random
    numbers), so arm differences are paired by sample index."""
    arms = swap_arms(family_a, family_b, params, mask_fractions, control_family, mask_kind, mask_width,
                     mask_seed=mix64(master_seed, TAG_MASK))
    names, fracs, specs = zip(*arms)
    lz = np.array([swap_log_partitions(specs, sample_seed(master_seed, s)) for s in range(samples)])
    center, scale = fluctuation_centering(resolve_family(family_a, params.beta), params, centering, noise=family_a.noise)
    return summarize_swap(names, fracs, specs, lz, center, scale, tests)
