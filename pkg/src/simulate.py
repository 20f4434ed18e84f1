"""
Monte Carlo harness for finite chains and superlinear processes.

Every batch of paths draws from its own Philox stream seeded by
SeedSequence([seed, stream, batch]), so results depend only on the seed and
the batch size, never on how batches are scheduled across threads.
"""
import logging
import numpy as np
import scipy.stats

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from tqdm import tqdm

from src.errors import ConfigError, DegenerateKappa, TailNotCertified
from src.markov_core import (hbar_kernel, limit_residual_second_moment, martingale_kernel,
                             residual_second_moment)
from src.sequence_models import partial_sums
from src.util import check_dyadic_grid

logger = logging.getLogger(__name__)

BATCH_SIZE = 10000
SUPERLINEAR_BATCH = 2000
NOISE_CHUNK = 2048
WARMUP_TAIL = 1e-6
MAX_WARMUP = 1 << 24
LEVY_STEPS = 60
KAPPA_FLOOR = 1e-15

KOLMOGOROV = 'kolmogorov'
LEVY = 'levy'
NOISE_KINDS = ('gaussian', 'rademacher', 'centered_uniform', 'two_point')

# stream labels keep the substreams of different estimators apart
CHAIN_STREAM = 0
RESIDUAL_STREAM = 1
AUTOCORR_STREAM = 2
SUPERLINEAR_STREAM = 3
KERNEL_STREAM = 4


@dataclass(frozen=True)
class NoiseSpec:
    """Mean-zero, unit-variance innovation law."""
    kind: str = 'gaussian'
    p: float = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise {self.kind!r}", field='noise')
        if self.kind == 'two_point' and not (self.p is not None and 0 < self.p <= 1):
            raise ConfigError("two_point noise needs 0 < p <= 1", field='noise')

    @classmethod
    def parse(cls, text):
        name, _, param = text.partition(':')
        return cls(name, float(param)) if param else cls(name)

    def draw(self, rng, size):
        if self.kind == 'gaussian':
            return rng.standard_normal(size)
        if self.kind == 'rademacher':
            return 2.0 * rng.integers(0, 2, size) - 1.0
        if self.kind == 'centered_uniform':
            return rng.uniform(-np.sqrt(3), np.sqrt(3), size)
        # +-1/sqrt(p) with probability p/2 each, 0 otherwise
        u = rng.random(size)
        level = 1.0 / np.sqrt(self.p)
        return np.where(u < self.p / 2, level, np.where(u < self.p, -level, 0.0))

    def as_dict(self):
        return {'kind': self.kind, 'p': self.p}


@dataclass(frozen=True, eq=False)
class ChainSamples:
    """S_n / sqrt(n) labeled by the initial state."""
    initial: np.ndarray
    scaled: np.ndarray
    n: int
    seed: int
    pi: np.ndarray


@dataclass(frozen=True, eq=False)
class SuperlinearSamples:
    """S_n / sqrt(n) with the innovation window cut at `warmup`.

    `step_tail` = sum_j sum_{i >= warmup} c_{i,j}^2 is the variance dropped
    from each X_k; `truncation_error` = n * step_tail bounds the variance
    dropped from S_n / sqrt(n).
    """
    scaled: np.ndarray
    n: int
    seed: int
    warmup: int
    truncation_error: float
    step_tail: float


@dataclass(frozen=True)
class CcltReport:
    n: int
    paths: int
    kappa_sq: float
    kappa_sq_hat: float
    kappa_sq_se: float
    distance: float
    distance_kind: str
    per_state: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def as_dict(self):
        return {'n': self.n, 'paths': self.paths, 'kappa_sq': self.kappa_sq,
                'kappa_sq_hat': self.kappa_sq_hat, 'kappa_sq_se': self.kappa_sq_se,
                'distance': self.distance, 'distance_kind': self.distance_kind,
                'per_state': {str(k): v for k, v in self.per_state.items()},
                'flags': list(self.flags)}


@dataclass(frozen=True)
class ResidualEstimate:
    n: int
    cesaro: float
    cesaro_se: float
    cesaro_exact: float
    limit: float
    limit_se: float
    limit_exact: float

    @staticmethod
    def _z(est, se, exact):
        if se == 0:
            return 0.0 if np.isclose(est, exact, rtol=1e-9, atol=1e-12) else float('inf')
        return (est - exact) / se

    @property
    def cesaro_z(self):
        return self._z(self.cesaro, self.cesaro_se, self.cesaro_exact)

    @property
    def limit_z(self):
        return self._z(self.limit, self.limit_se, self.limit_exact)

    def as_dict(self):
        return {'n': self.n, 'cesaro': self.cesaro, 'cesaro_se': self.cesaro_se,
                'cesaro_exact': self.cesaro_exact, 'cesaro_z': self.cesaro_z,
                'limit': self.limit, 'limit_se': self.limit_se,
                'limit_exact': self.limit_exact, 'limit_z': self.limit_z}


def _generator(seed_seq):
    return np.random.Generator(np.random.Philox(seed_seq))


def _run_batches(work, paths, keys, batch_size, workers, progress, desc):
    """Run work(SeedSequence([*keys, batch]), size) per batch and concatenate in order."""
    if paths < 1:
        raise ConfigError("paths must be at least 1", field='paths')
    sizes = [min(batch_size, paths - start) for start in range(0, paths, batch_size)]

    def run(index):
        return work(np.random.SeedSequence([*keys, index]), sizes[index])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(run, range(len(sizes))), total=len(sizes),
                                desc=desc, disable=not progress))
    else:
        results = [run(i) for i in tqdm(range(len(sizes)), desc=desc, disable=not progress)]
    return tuple(np.concatenate(parts) for parts in zip(*results))


def _walk(chain, n, size, rng):
    """Yield (W_{k-1}, W_k) for k = 1..n over `size` stationary paths."""
    cum = np.cumsum(chain.Q, axis=1)
    last = chain.n_states - 1
    state = np.minimum(np.searchsorted(np.cumsum(chain.pi), rng.random(size), side='right'),
                       last)
    for _ in range(n):
        prev = state
        state = np.minimum((rng.random(size)[:, None] >= cum[prev]).sum(axis=1), last)
        yield prev, state


def simulate_chain(chain, g, n, paths, seed, batch_size=BATCH_SIZE, workers=1,
                   progress=False):
    values = g.values

    def work(seed_seq, size):
        rng = _generator(seed_seq)
        total = np.zeros(size)
        initial = None
        for prev, state in _walk(chain, n, size, rng):
            if initial is None:
                initial = prev
            total += values[state]
        return initial, total

    initial, total = _run_batches(work, paths, (seed, CHAIN_STREAM), batch_size, workers,
                                  progress, "simulating chain")
    return ChainSamples(initial, total / np.sqrt(n), n, seed, chain.pi)


def choose_warmup(arr, tail=WARMUP_TAIL):
    """Smallest L with sum_{i >= L} c_{i,j}^2 <= tail summed over columns.

    The tail is the variance dropped from each X_k, not from S_n / sqrt(n).
    """
    sources = list(arr.columns.values())
    if any(s.tail_sq(0) is None for s in sources):
        raise TailNotCertified("a column has no tail certificate; pass warmup explicitly",
                               field='warmup')

    def total(L):
        return sum(s.tail_sq(L) for s in sources)

    hi = 1
    while total(hi) > tail:
        hi *= 2
        if hi > MAX_WARMUP:
            raise TailNotCertified(f"tail above {tail:g} even at warmup {MAX_WARMUP}",
                                   field='warmup')
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if total(mid) <= tail:
            hi = mid
        else:
            lo = mid
    return hi


def simulate_superlinear(arr, noise, n, paths, seed, warmup=None,
                         batch_size=SUPERLINEAR_BATCH, workers=1, progress=False):
    """S_n / sqrt(n) for X_k = sum_j sum_{i < warmup} c_{i,j} xi_{k-i,j}.

    S_n = sum_m w_m xi_m with w = c * ones(n), so each path only needs the
    innovations that reach the window 1..n.
    """
    keys = arr.keys
    if isinstance(noise, NoiseSpec):
        noise = {j: noise for j in keys}
    if warmup is None:
        warmup = choose_warmup(arr)
    tails = [arr.columns[j].tail_sq(warmup) for j in keys]
    step_tail = float('inf') if any(t is None for t in tails) else float(sum(tails))
    truncation = n * step_tail
    if np.isinf(truncation):
        logger.warning("truncation at warmup=%d is not certified", warmup)

    weights = [np.convolve(np.asarray(arr.columns[j].take(warmup)), np.ones(n))
               for j in keys]

    def work(seed_seq, size):
        # one independent substream per column
        seeds = seed_seq.spawn(max(len(keys), 1))
        total = np.zeros(size, dtype=complex if any(np.iscomplexobj(w) for w in weights)
                         else float)
        for j, w, ss in zip(keys, weights, seeds):
            rng = _generator(ss)
            for start in range(0, len(w), NOISE_CHUNK):
                block = w[start:start + NOISE_CHUNK]
                total += noise[j].draw(rng, (size, len(block))) @ block
        return (total,)

    (total,) = _run_batches(work, paths, (seed, SUPERLINEAR_STREAM), batch_size, workers,
                            progress, "simulating superlinear")
    scaled = np.real(total) / np.sqrt(n)
    return SuperlinearSamples(scaled, n, seed, warmup, truncation, step_tail)


def levy_distance(x, cdf, steps=LEVY_STEPS):
    """Levy distance between the empirical law of x and a reference cdf, by bisection."""
    x = np.sort(np.asarray(x, dtype=float))
    size = len(x)
    upper = np.arange(1, size + 1) / size
    lower = np.arange(size) / size

    def within(eps):
        return (np.all(upper <= cdf(x + eps) + eps)
                and np.all(cdf(x - eps) - eps <= lower))

    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = (lo + hi) / 2
        if within(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _point_mass(x):
    return (np.asarray(x) >= 0).astype(float)


def _distance(x, cdf, kind):
    if kind == KOLMOGOROV:
        return float(scipy.stats.kstest(x, cdf).statistic)
    return float(levy_distance(x, cdf))


def cclt_check(samples, kappa_sq, distance_kind=KOLMOGOROV, strict=False):
    """Distance between the law of S_n/sqrt(n) given W_0 and N(0, kappa_sq), pi-averaged."""
    if distance_kind not in (KOLMOGOROV, LEVY):
        raise ConfigError(f"unknown distance {distance_kind!r}", field='distance')
    if kappa_sq < 0:
        raise ValueError("kappa_sq must be nonnegative")
    scaled = samples.scaled
    flags = []

    if kappa_sq <= KAPPA_FLOOR:
        if strict:
            raise DegenerateKappa("kappa_sq is 0; the reference law is a point mass",
                                  field='kappa_sq')
        flags.append('degenerate_kappa')
        distance_kind = LEVY
        cdf = _point_mass
        logger.warning("kappa_sq = 0: comparing to the point mass at 0 in the Levy metric")
    else:
        cdf = scipy.stats.norm(scale=np.sqrt(kappa_sq)).cdf

    per_state = {}
    initial = getattr(samples, 'initial', None)
    if initial is None:
        flags.append('unconditional_surrogate')
        logger.warning("no initial states: using the unconditional law")
        distance = _distance(scaled, cdf, distance_kind)
    else:
        weights = []
        for w, weight in enumerate(samples.pi):
            x = scaled[initial == w]
            if len(x):
                per_state[w] = _distance(x, cdf, distance_kind)
                weights.append((weight, per_state[w]))
        if len(weights) < len(samples.pi):
            flags.append('unvisited_initial_states')
        mass = sum(wt for wt, _ in weights)
        distance = float(sum(wt * d for wt, d in weights) / mass)

    squares = scaled ** 2
    return CcltReport(samples.n, len(scaled), float(kappa_sq), float(squares.mean()),
                      float(squares.std(ddof=1) / np.sqrt(len(squares)))
                      if len(squares) > 1 else 0.0,
                      distance, distance_kind, per_state, flags)


def _mean_se(x):
    if len(x) < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))


def empirical_residual(chain, g, n_grid, paths, seed, batch_size=BATCH_SIZE, workers=1,
                       progress=False):
    """E[R_nn^2]/n for the Cesaro kernel and E[(S_n - M_n)^2]/n for the limiting one."""
    grid = check_dyadic_grid(n_grid, 'n_grid')
    H, _ = martingale_kernel(chain, g)
    values = g.values
    estimates = []

    for index, n in enumerate(grid):
        hbar = hbar_kernel(chain, g, n).values

        def work(seed_seq, size):
            rng = _generator(seed_seq)
            cesaro = np.zeros(size)
            limit = np.zeros(size)
            for prev, state in _walk(chain, n, size, rng):
                cesaro += values[state] - hbar[prev, state]
                limit += values[state] - H.values[prev, state]
            return cesaro ** 2, limit ** 2

        cesaro, limit = _run_batches(work, paths, (seed, RESIDUAL_STREAM, index),
                                     batch_size, workers, progress, f"residual n={n}")
        c_mean, c_se = _mean_se(cesaro / n)
        l_mean, l_se = _mean_se(limit / n)
        estimates.append(ResidualEstimate(
            n, c_mean, c_se, residual_second_moment(chain, g, n, n) / n,
            l_mean, l_se, limit_residual_second_moment(chain, g, n) / n))
        logger.debug("residual n=%d: %.4e (exact %.4e)", n, c_mean,
                     estimates[-1].cesaro_exact)
    return estimates


def increment_autocorrelation(chain, g, n, paths, seed, batch_size=BATCH_SIZE, workers=1,
                              progress=False):
    """Lag-1 autocorrelation of the martingale increments H(W_{k-1}, W_k)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    H, _ = martingale_kernel(chain, g)

    def work(seed_seq, size):
        rng = _generator(seed_seq)
        last = None
        cross = np.zeros(size)
        square = np.zeros(size)
        for prev, state in _walk(chain, n, size, rng):
            d = H.values[prev, state]
            if last is not None:
                cross += last * d
            square += d * d
            last = d
        return cross / (n - 1), square / n

    cross, square = _run_batches(work, paths, (seed, AUTOCORR_STREAM), batch_size, workers,
                                 progress, "increment autocorrelation")
    c_mean, c_se = _mean_se(cross)
    s_mean = float(square.mean())
    if s_mean == 0:
        return {'lag1': 0.0, 'se': 0.0, 'z': 0.0}
    lag1, se = c_mean / s_mean, c_se / s_mean
    return {'lag1': lag1, 'se': se, 'z': lag1 / se if se > 0 else 0.0}


def _cesaro_weights(a, N, start, count):
    """Weights of Vbar_N g on innovations start..start+count-1 steps back from W.

    Q^k g(W) puts a_{j+k} on the innovation j steps back, so V_N g puts
    B_{j+N-1} - B_{j-1} there and Vbar_N averages over N.
    """
    B = np.concatenate([[0.0], np.cumsum(a)])
    C = np.concatenate([[0.0], np.cumsum(B[1:])])
    j = np.arange(start, start + count)
    return (C[j + N] - C[j]) / N - B[j]


def linear_kernel_distance(source, n, m, paths, seed, noise=None, horizon=None,
                           batch_size=BATCH_SIZE, workers=1, progress=False):
    """Monte Carlo ||Hbar_n - Hbar_m|| for a causal linear process with real coefficients.

    Hbar_N(W_0, W_1) = Vbar_N g(W_1) - Q Vbar_N g(W_0) is evaluated on the
    innovations xi_1, xi_0, ..., xi_{2-horizon}; the exact value is
    |bbar_n - bbar_m| for unit-variance noise.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    noise = noise or NoiseSpec()
    horizon = horizon or 2 * max(n, m)
    seq = partial_sums(source, horizon + max(n, m))
    a = np.asarray(seq.a, dtype=float)

    def kernel_weights(N):
        # W_1 sees xi_1 at j = 0; W_0 sees xi_0 at j = 0, which is j = 1 from W_1
        return (_cesaro_weights(a, N, 0, horizon),
                _cesaro_weights(a, N, 1, horizon - 1))

    (now_n, before_n), (now_m, before_m) = kernel_weights(n), kernel_weights(m)

    def work(seed_seq, size):
        xi = noise.draw(_generator(seed_seq), (size, horizon))
        diff = (xi @ now_n - xi[:, 1:] @ before_n) - (xi @ now_m - xi[:, 1:] @ before_m)
        return (diff ** 2,)

    (sq,) = _run_batches(work, paths, (seed, KERNEL_STREAM, n, m), batch_size, workers,
                         progress, "kernel distance")
    mean, se = _mean_se(sq)
    distance = float(np.sqrt(mean))
    exact = float(abs(seq.bbar[n] - seq.bbar[m]))
    se = se / (2 * distance) if distance > 0 else 0.0
    logger.debug("kernel distance n=%d m=%d: %.6f (exact %.6f)", n, m, distance, exact)
    return {'n': n, 'm': m, 'distance': distance, 'se': se, 'exact': exact}
