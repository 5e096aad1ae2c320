"""Bernoulli walks and bridges with 0/1 steps, and intersection statistics.

Site-counting conventions: ``local_time`` on a window [a, b] counts every
time a..b inclusive at which the two heights agree; ``triple_local_time``
counts times 1..n (time 0 excluded).
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .weights import log_binom


class DomainMismatch(ValueError):
    pass


class CapExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LatticePath:
    """Path on [start_time, start_time + len(steps)] with 0/1 increments."""

    start_time: int
    start_height: int
    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.uint8)
        if steps.ndim != 1 or np.any(steps > 1):
            raise ValueError("steps must be a 1-d array of 0/1")
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.steps)

    @property
    def end_height(self) -> int:
        return self.start_height + int(self.steps.sum())

    def heights(self) -> np.ndarray:
        h = np.empty(len(self.steps) + 1, dtype=np.int64)
        h[0] = self.start_height
        np.cumsum(self.steps, out=h[1:])
        h[1:] += self.start_height
        return h

    def height(self, i: int) -> int:
        if not self.start_time <= i <= self.end_time:
            raise DomainMismatch(f"time {i} outside [{self.start_time}, {self.end_time}]")
        return self.start_height + int(self.steps[: i - self.start_time].sum())

    def restrict(self, a: int, b: int) -> "LatticePath":
        if not self.start_time <= a <= b <= self.end_time:
            raise DomainMismatch("restriction window outside the path's domain")
        return LatticePath(a, self.height(a), self.steps[a - self.start_time : b - self.start_time])

    def __eq__(self, other):
        if not isinstance(other, LatticePath):
            return NotImplemented
        return (
            self.start_time == other.start_time
            and self.start_height == other.start_height
            and np.array_equal(self.steps, other.steps)
        )

    def __hash__(self):
        return hash((self.start_time, self.start_height, self.steps.tobytes()))

    def __repr__(self):
        bits = "".join(map(str, self.steps[:40]))
        more = "..." if len(self.steps) > 40 else ""
        return f"LatticePath(t0={self.start_time}, h0={self.start_height}, steps={bits}{more})"


@dataclass(frozen=True)
class BridgeSpec:
    a: int
    b: int
    x: int
    y: int

    def __post_init__(self):
        if self.b < self.a:
            raise ValueError("need a <= b")
        if not self.x <= self.y <= self.x + (self.b - self.a):
            raise ValueError("endpoints not reachable with 0/1 steps")

    @property
    def length(self) -> int:
        return self.b - self.a

    @property
    def rise(self) -> int:
        return self.y - self.x

    @property
    def slope(self) -> float:
        return self.rise / self.length if self.length else 0.0

    @property
    def count(self) -> int:
        return math.comb(self.length, self.rise)


# ---------------------------------------------------------------------------
# Sampling and enumeration
# ---------------------------------------------------------------------------


def sample_walk(p: float, length: int, start=(0, 0), rng=None) -> LatticePath:
    if length < 0:
        raise ValueError("length must be >= 0")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    steps = (rng.random(length) < p).astype(np.uint8)
    return LatticePath(start[0], start[1], steps)


def sample_bridge(spec: BridgeSpec, rng) -> LatticePath:
    """Uniform bridge: the up-steps are a uniform random subset of positions,
    drawn by a partial Fisher-Yates shuffle."""
    m, k = spec.length, spec.rise
    pos = np.arange(m)
    # shuffle whichever of the up/flat sets is smaller
    r = min(k, m - k)
    for i in range(r):
        j = int(rng.integers(i, m))
        pos[i], pos[j] = pos[j], pos[i]
    steps = np.zeros(m, dtype=np.uint8) if k == r else np.ones(m, dtype=np.uint8)
    steps[pos[:r]] = 1 if k == r else 0
    return LatticePath(spec.a, spec.x, steps)


def bridge_heights(length: int, rise: int, size: int, rng, start_height: int = 0) -> np.ndarray:
    """``size`` independent uniform bridges as a (size, length + 1) height array.

    The up positions are the ``rise`` smallest of ``length`` i.i.d. uniform
    keys, which is a uniform subset.
    """
    h = np.zeros((size, length + 1), dtype=np.int32)
    h[:, 0] = start_height
    if rise == 0 or length == 0:
        h[:, 1:] = start_height
        return h
    if rise == length:
        h[:, 1:] = start_height + np.arange(1, length + 1)
        return h
    keys = rng.random((size, length))
    up = np.argpartition(keys, rise - 1, axis=1)[:, :rise]
    steps = np.zeros((size, length), dtype=np.int32)
    np.put_along_axis(steps, up, 1, axis=1)
    np.cumsum(steps, axis=1, out=h[:, 1:])
    h[:, 1:] += start_height
    return h


def walk_heights(p: float, length: int, size: int, rng, start_height: int = 0) -> np.ndarray:
    h = np.zeros((size, length + 1), dtype=np.int32)
    h[:, 0] = start_height
    np.cumsum(rng.random((size, length)) < p, axis=1, out=h[:, 1:])
    h[:, 1:] += start_height
    return h


ENUMERATION_LIMIT = 10 ** 6


def enumerate_paths(spec: BridgeSpec):
    """All bridges of ``spec`` in increasing lexicographic order of step strings."""
    if spec.count > ENUMERATION_LIMIT:
        raise ValueError(f"{spec.count} bridges exceed the enumeration limit")
    m, k = spec.length, spec.rise
    for flats in itertools.combinations(range(m), m - k):
        steps = np.ones(m, dtype=np.uint8)
        steps[list(flats)] = 0
        yield LatticePath(spec.a, spec.x, steps)


# ---------------------------------------------------------------------------
# Local times
# ---------------------------------------------------------------------------


def _common_window(paths, window):
    lo = max(p.start_time for p in paths)
    hi = min(p.end_time for p in paths)
    if window is None:
        window = (lo, hi)
    a, b = window
    if a > b or a < lo or b > hi:
        raise DomainMismatch(f"window [{a}, {b}] not inside the common domain [{lo}, {hi}]")
    return a, b


def _heights_on(path, a, b):
    return path.heights()[a - path.start_time : b - path.start_time + 1]


def local_time(p1: LatticePath, p2: LatticePath, window=None) -> int:
    """Number of times i in the window (inclusive) with p1(i) == p2(i)."""
    a, b = _common_window((p1, p2), window)
    return int(np.count_nonzero(_heights_on(p1, a, b) == _heights_on(p2, a, b)))


def multi_local_time(paths, window=None) -> int:
    """Times in the window at which all the given paths share a site."""
    a, b = _common_window(paths, window)
    hs = [_heights_on(p, a, b) for p in paths]
    eq = np.ones(b - a + 1, dtype=bool)
    for h in hs[1:]:
        eq &= h == hs[0]
    return int(np.count_nonzero(eq))


def triple_local_time(p1: LatticePath, p2: LatticePath, p3: LatticePath) -> int:
    """Triple coincidences at times start+1 .. end (the start time is excluded)."""
    a, b = _common_window((p1, p2, p3), None)
    if b == a:
        return 0
    return multi_local_time((p1, p2, p3), (a + 1, b))


# ---------------------------------------------------------------------------
# First meeting time of two walks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailEstimate:
    n: int
    estimate: float
    stderr: float
    trials: int


def _meeting_steps(p1, p2):
    up = p1 * (1 - p2)
    down = (1 - p1) * p2
    return up, down


def first_meeting_tails(p1: float, p2: float, n_list, trials: int, rng, chunk: int = 200_000):
    """MC estimates of P(T >= n) for every n in ``n_list`` from one set of trials,
    T = min{k >= 1 : pi1(k) = pi2(k)} for walks started together.

    Simulates the difference walk, which moves +1 w.p. p1(1-p2), -1 w.p.
    (1-p1)p2, and compacts the surviving trials as they meet.
    """
    n_list = sorted(int(n) for n in n_list)
    n_max = n_list[-1]
    up, down = _meeting_steps(p1, p2)
    # survivors[k] = number of trials with T > k, i.e. T >= k + 1
    survive_counts = np.zeros(n_max + 1, dtype=np.int64)
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        done += size
        d = np.zeros(size, dtype=np.int64)
        survive_counts[0] += size
        for k in range(1, n_max + 1):
            u = rng.random(d.size)
            d += (u < up).astype(np.int64) - (u >= 1.0 - down).astype(np.int64)
            d = d[d != 0]
            survive_counts[k] += d.size
            if d.size == 0:
                break
    out = []
    for n in n_list:
        # P(T >= n) = P(no meeting at times 1..n-1)
        p = survive_counts[n - 1] / trials
        out.append(TailEstimate(n, float(p), math.sqrt(p * (1 - p) / trials), trials))
    return out


def first_meeting_tail(p1: float, p2: float, n: int, trials: int, rng) -> TailEstimate:
    return first_meeting_tails(p1, p2, [n], trials, rng)[0]


def first_meeting_tail_exact(p1: float, p2: float, n: int) -> float:
    """P(T >= n) by propagating the difference walk killed at 0."""
    if n <= 1:
        return 1.0
    up, down = _meeting_steps(p1, p2)
    stay = 1.0 - up - down
    size = 2 * n + 3
    off = n + 1
    dist = np.zeros(size)
    dist[off] = 1.0
    for _ in range(1, n):
        new = stay * dist
        new[1:] += up * dist[:-1]
        new[:-1] += down * dist[1:]
        new[off] = 0.0
        dist = new
    return float(dist.sum())


def symmetric_return_tail(n: int) -> float:
    """P(T' >= n) for the simple symmetric walk, T' its first return to 0."""
    # P(T' = 2k) = C(2k,k) / (4^k (2k-1)); P(T' >= n) = 1 - sum_{2k < n} P(T' = 2k)
    total = 0.0
    for k in range(1, (n - 1) // 2 + 1):
        total += math.exp(log_binom(2 * k, k) - k * math.log(4.0)) / (2 * k - 1)
    return 1.0 - total


# ---------------------------------------------------------------------------
# Geometric dominator
# ---------------------------------------------------------------------------


class WalkStream:
    """An unbounded Bernoulli walk produced block by block.

    With ``record`` the generated heights are kept in ``history`` so that
    statistics on a prefix can be recomputed on the very same path.
    """

    def __init__(self, p: float, rng, start_height: int = 0, block: int = 4096, record: bool = False):
        self.p = p
        self.rng = rng
        self.block = block
        self.height = start_height
        self.record = record
        self.history = [] if record else None
        self.first = True

    def next_block(self) -> np.ndarray:
        """Heights at the next ``block`` times (time 0 is emitted first, once)."""
        steps = (self.rng.random(self.block) < self.p).astype(np.int64)
        h = self.height + np.cumsum(steps)
        self.height = int(h[-1])
        if self.first:
            h = np.concatenate(([h[0] - steps[0]], h))
            self.first = False
        if self.record:
            self.history.append(h)
        return h

    def prefix(self, length: int) -> LatticePath:
        """The recorded path on [0, length]."""
        hs = np.concatenate(self.history)
        if len(hs) < length + 1:
            raise ValueError("not enough recorded history")
        return LatticePath(0, int(hs[0]), np.diff(hs[: length + 1]).astype(np.uint8))


GEOMETRIC_CAP = 10 ** 8


def geometric_dominator(w1: WalkStream, w2: WalkStream, gap: int, cap: int = GEOMETRIC_CAP) -> int:
    """Intersections of two walks counted until the first window [c, c + gap]
    (gap + 1 consecutive times) in which they never meet.

    Every meeting inside any window of length ``gap`` starting at time 0 is
    counted, so the windowed local time never exceeds this count.
    """
    if gap < 0:
        raise ValueError("gap must be >= 0")
    count = 0
    last = -1  # time of the last meeting (virtual meeting at -1)
    t0 = 0
    while t0 < cap:
        h1 = w1.next_block()
        h2 = w2.next_block()
        meet = np.flatnonzero(h1 == h2) + t0
        for t in meet:
            if t - last - 1 >= gap + 1:
                return count
            count += 1
            last = int(t)
        t0 += len(h1)
        if t0 - 1 - last >= gap + 1:
            return count
    raise CapExceeded(f"no meeting-free window of length {gap} within {cap} steps")


# ---------------------------------------------------------------------------
# Bridge replacement and local CLT
# ---------------------------------------------------------------------------


def log_binom_pmf(n: int, p: float, k):
    k = np.asarray(k)
    if p in (0.0, 1.0):
        target = 0 if p == 0.0 else n
        return np.where(k == target, 0.0, -np.inf)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1) + k * math.log(p) + (n - k) * math.log1p(-p)


def bridge_replace_ratio(n: int, p: float, half_height: int, y: int) -> float:
    """P_{p, h}(pi(n) = y) / P_p(pi(n) = y) for a walk of length n with
    slope p, where the first half has already risen by h = half_height."""
    if n % 2:
        raise ValueError("n must be even")
    if not 0 <= half_height <= n // 2:
        raise ValueError("half_height must lie in [0, n/2]")
    if not 0 <= y <= n:
        raise ValueError("endpoint y must lie in [0, n]")
    rest = y - half_height
    if rest < 0 or rest > n // 2:
        return 0.0
    num = log_binom(n // 2, rest) + rest * math.log(p) + (n // 2 - rest) * math.log1p(-p)
    den = log_binom(n, y) + y * math.log(p) + (n - y) * math.log1p(-p)
    return math.exp(num - den)


def bridge_replace_sup(n: int, slope_range=(0.25, 0.75)) -> tuple[float, int, int]:
    """max over y with y/n in the slope range and all half heights of the
    ratio (p = y/n); returns (ratio, y, half_height) at the maximum."""
    best = (0.0, -1, -1)
    lo = math.ceil(slope_range[0] * n)
    hi = math.floor(slope_range[1] * n)
    h = np.arange(n // 2 + 1)
    for y in range(lo, hi + 1):
        p = y / n
        rest = y - h
        ok = (rest >= 0) & (rest <= n // 2)
        num = log_binom_pmf(n // 2, p, rest[ok])
        den = float(log_binom_pmf(n, p, y))
        r = np.exp(num - den)
        i = int(np.argmax(r))
        if r[i] > best[0]:
            best = (float(r[i]), y, int(h[ok][i]))
    return best


def empirical_n_star(n_values, bound: float = 2.0, slope_range=(0.25, 0.75)) -> int | None:
    """Smallest scanned n from which the replacement ratio stays <= bound."""
    n_values = sorted(n_values)
    star = None
    for n in reversed(n_values):
        if bridge_replace_sup(n, slope_range)[0] <= bound:
            star = n
        else:
            break
    return star


def platonov_deviation(n: int, p: float) -> float:
    """max_k |s f(k) - phi((k - np)/s)| with s = sqrt(np(1-p)), f the Binomial(n,p) pmf."""
    if n < 1 or not 0 < p < 1:
        raise ValueError("need n >= 1 and p in (0, 1)")
    s = math.sqrt(n * p * (1 - p))
    k = np.arange(n + 1)
    f = np.exp(log_binom_pmf(n, p, k))
    z = (k - n * p) / s
    phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return float(np.max(np.abs(s * f - phi)))


# ---------------------------------------------------------------------------
# Local-time statistics for bridges
# ---------------------------------------------------------------------------


@dataclass
class LocalTimeStats:
    n: int
    p1: float
    p2: float
    m_list: list
    estimates: list
    stderrs: list
    normalized: list
    mgf_estimate: float = math.nan
    mgf_stderr: float = math.nan
    trials: int = 0
    extra: dict = field(default_factory=dict)

    def rows(self):
        for m, e, se, z in zip(self.m_list, self.estimates, self.stderrs, self.normalized):
            yield {"n": self.n, "p1": self.p1, "p2": self.p2, "m": m, "estimate": e, "stderr": se, "normalized": z}

    CSV_HEADER = "n,p1,p2,m,estimate,stderr,normalized"


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan


def bridge_local_time_samples(n: int, slopes, trials: int, rng, chunk: int = 256) -> np.ndarray:
    """L(pi1, pi2) on [0, n] for independent bridges from 0 to round(p_i n)."""
    rises = [int(round(p * n)) for p in slopes]
    out = np.empty(trials, dtype=np.int64)
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        h1 = bridge_heights(n, rises[0], size, rng)
        h2 = bridge_heights(n, rises[1], size, rng)
        out[start : start + size] = np.count_nonzero(h1 == h2, axis=1)
    return out


def bridge_local_time_stats(n: int, slopes, m_list, trials: int, rng, mgf_a: float = 1.0,
                            mgf_delta: float = 0.1) -> LocalTimeStats:
    """Moments E[L^m] of the intersection local time of two bridges on [0, n]
    with the given slopes, plus E[(1 + A n^-(1/2+delta))^(6L)]."""
    p1, p2 = slopes
    lt = bridge_local_time_samples(n, (p1, p2), trials, rng).astype(float)
    est, ses, norm = [], [], []
    for m in m_list:
        e, se = _mean_se(lt ** m)
        est.append(e)
        ses.append(se)
        norm.append(e ** (1.0 / m) / math.sqrt(n))
    g = (1.0 + mgf_a * n ** -(0.5 + mgf_delta)) ** (6.0 * lt)
    ge, gse = _mean_se(g)
    return LocalTimeStats(n, p1, p2, list(m_list), est, ses, norm, ge, gse, trials)


def triple_local_time_samples(n: int, slopes, trials: int, rng, chunk: int = 256) -> np.ndarray:
    rises = [int(round(p * n)) for p in slopes]
    out = np.empty(trials, dtype=np.int64)
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        h = [bridge_heights(n, r, size, rng) for r in rises]
        eq = (h[0] == h[1]) & (h[1] == h[2])
        out[start : start + size] = np.count_nonzero(eq[:, 1:], axis=1)
    return out


def triple_local_time_stats(n: int, slopes, trials: int, rng):
    """(E L3, stderr, E L3^2, stderr) for three independent bridges on [0, n]."""
    if len(slopes) == 2:
        slopes = (slopes[0], slopes[1], slopes[1])
    l3 = triple_local_time_samples(n, slopes, trials, rng).astype(float)
    m1, s1 = _mean_se(l3)
    m2, s2 = _mean_se(l3 ** 2)
    return m1, s1, m2, s2
