"""
Coefficient-level analysis of causal linear and superlinear processes.

A column a_0, a_1, ... has partial sums b_n = a_0 + ... + a_n (b_{-1} = 0)
and Cesaro averages bbar_n = (b_0 + ... + b_{n-1})/n, the coefficient of the
current innovation in the averaged martingale kernel. A superlinear process
is a finite family of independent columns indexed by j.
"""
import logging
import numpy as np

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from scipy.signal import fftconvolve
from tqdm import tqdm

from src.errors import (ConfigError, HorizonExceeded, InvalidGrid, RaggedColumns,
                        TailNotCertified)
from src.frac_poisson import sqrt_apply_sequence
from src.util import (CUMSUM_CHUNK, DEFAULT_MARGIN, FAILS, HOLDS, cauchy_verdict,
                      check_dyadic_grid, compensated_cumsum, dyadic_grid, slope_verdict,
                      window_diameter)

logger = logging.getLogger(__name__)

YES = 'yes'
NO = 'no'
INCONCLUSIVE = 'inconclusive'

MAX_HORIZON = 10 ** 7
DEFAULT_N_MAX = 1 << 16
TOL_CAUCHY = 1e-3
MAX_GRID_EXP = 10
EXAMPLE5_K = 100000


class CoeffSource:
    """A rule producing a_0, a_1, ... with an optional tail certificate."""
    name = 'source'
    # lim b_n when known in closed form
    b_limit = None

    def __init__(self, *params):
        self.params = params

    def take(self, n):
        raise NotImplementedError

    def tail_sq(self, start):
        """Upper bound on sum_{i >= start} |a_i|^2, or None when unknown."""
        return None

    def describe(self):
        return {'generator': self.name, 'params': list(self.params)}


class Geometric(CoeffSource):
    name = 'geometric'

    def __init__(self, rho):
        if not -1 < rho < 1:
            raise ConfigError(f"geometric ratio {rho} must lie in (-1, 1)", field='generator')
        super().__init__(rho)
        self.rho = rho
        self.b_limit = 1.0 / (1.0 - rho)

    def take(self, n):
        return self.rho ** np.arange(n, dtype=float)

    def tail_sq(self, start):
        return self.rho ** (2 * start) / (1.0 - self.rho ** 2)


class CustomArray(CoeffSource):
    """Finitely supported coefficients, zero past the supplied values."""
    name = 'custom_array'
    # explicit values; generators below may zero-pad
    supplied = True

    def __init__(self, values):
        values = np.asarray(values)
        values = values.astype(complex if np.iscomplexobj(values) else float)
        super().__init__(len(values))
        self.values = values
        self.b_limit = complex(values.sum()) if np.iscomplexobj(values) else float(values.sum())

    def take(self, n):
        out = np.zeros(n, dtype=self.values.dtype)
        m = min(n, len(self.values))
        out[:m] = self.values[:m]
        return out

    def tail_sq(self, start):
        return float(np.sum(np.abs(self.values[start:]) ** 2))

    def describe(self):
        return {'generator': self.name, 'values': self.values.tolist()
                if not np.iscomplexobj(self.values)
                else [[v.real, v.imag] for v in self.values]}


class Coboundary(CustomArray):
    name = 'coboundary'
    supplied = False

    def __init__(self):
        super().__init__([1.0, -1.0])

    def describe(self):
        return {'generator': self.name, 'params': []}


class Example5(CoeffSource):
    """a_j = 1 / (sqrt(j+1) log(j+2))."""
    name = 'example5'

    def take(self, n):
        j = np.arange(n, dtype=float)
        return 1.0 / (np.sqrt(j + 1) * np.log(j + 2))

    def tail_sq(self, start):
        # a_i^2 <= f(i+1) with f(x) = 1/(x log^2 x) decreasing, so the sum is <= 1/log(start)
        if start >= 2:
            return 1.0 / np.log(start)
        return float(np.sum(self.take(2)[start:] ** 2)) + 1.0 / np.log(2)


class Example5Root(CoeffSource):
    """c_j = sum_{k<=K} beta_k (a_j - a_{j+k}) for the example5 a_j."""
    name = 'example5_root'

    def __init__(self, K=EXAMPLE5_K):
        super().__init__(int(K))
        self.K = int(K)
        self.root = None

    def take(self, n):
        self.root = sqrt_apply_sequence(Example5(), n - 1, self.K)
        return np.array(self.root.c)

    def tail_sq(self, start):
        # 0 <= c_j <= a_j since a is positive and decreasing
        return Example5().tail_sq(start)


class Power(CoeffSource):
    """b_n = (n+1)^p; not square summable for p >= 1/2, so no tail certificate."""
    name = 'power'

    def __init__(self, p):
        super().__init__(p)
        self.p = p

    def take(self, n):
        b = np.arange(1, n + 1, dtype=float) ** self.p
        return np.diff(b, prepend=0.0)


class Example6(CoeffSource):
    """b_n = cos(sqrt(log n)) (or sin) for n >= 2 and b_0 = b_1 = 0."""

    def __init__(self, kind='cos'):
        if kind not in ('cos', 'sin'):
            raise ConfigError(f"unknown example6 column {kind!r}", field='generator')
        super().__init__()
        self.kind = kind
        self.name = f"example6_{kind}"

    def partial(self, idx):
        idx = np.asarray(idx)
        phase = np.sqrt(np.log(np.maximum(idx, 2)))
        b = np.cos(phase) if self.kind == 'cos' else np.sin(phase)
        return np.where(idx >= 2, b, 0.0)

    def take(self, n):
        return np.diff(self.partial(np.arange(n)), prepend=0.0)

    def tail_sq(self, start):
        # |c_n| <= 1/(2(n-1) sqrt(log(n-1))) for n >= 3
        if start >= 3:
            return 1.0 / (4 * (start - 2) * np.log(start - 1))
        return float(np.sum(self.take(3)[start:] ** 2)) + 1.0 / (4 * np.log(2))


GENERATORS = {
    'geometric': Geometric,
    'coboundary': Coboundary,
    'example5': Example5,
    'example5_root': Example5Root,
    'power': Power,
    'example6_cos': lambda: Example6('cos'),
    'example6_sin': lambda: Example6('sin'),
}


def make_generator(name, params=()):
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}",
                          field='generator')
    try:
        return GENERATORS[name](*params)
    except TypeError:
        raise ConfigError(f"bad parameters {list(params)} for generator {name!r}",
                          field='generator')


def _as_source(source):
    return source if isinstance(source, CoeffSource) else CustomArray(source)


@dataclass(frozen=True, eq=False)
class CoeffSeq:
    """Materialized column; bbar[0] is unused and held at 0."""
    a: np.ndarray
    b: np.ndarray
    bbar: np.ndarray
    source: CoeffSource

    @property
    def n_max(self):
        return len(self.b) - 1

    def growth(self):
        """max |b_n| / sqrt(n+1) over the horizon."""
        return float(np.max(np.abs(self.b) / np.sqrt(np.arange(1, len(self.b) + 1))))


@dataclass(frozen=True)
class L2JVector:
    entries: dict

    @property
    def norm_sq(self):
        return float(sum(abs(v) ** 2 for v in self.entries.values()))


@dataclass(frozen=True, eq=False)
class CoeffArray:
    """Columns j -> CoeffSource; raw arrays are finitely supported columns."""
    columns: dict

    def __post_init__(self):
        lengths = {j: len(v) for j, v in self.columns.items()
                   if not isinstance(v, CoeffSource)}
        if len(set(lengths.values())) > 1:
            raise RaggedColumns(f"explicit columns have different lengths {lengths}",
                                field='columns')
        columns = {j: _as_source(v) for j, v in self.columns.items()}
        object.__setattr__(self, 'columns', columns)

    @property
    def keys(self):
        return list(self.columns)


@dataclass(frozen=True, eq=False)
class SuperlinearBars:
    keys: list
    seqs: list

    @property
    def n_max(self):
        return self.seqs[0].n_max if self.seqs else 0

    def _stack(self, attr):
        if not self.seqs:
            return np.zeros((self.n_max + 1, 0))
        return np.column_stack([getattr(s, attr) for s in self.seqs])

    @property
    def b(self):
        return self._stack('b')

    @property
    def bbar(self):
        return self._stack('bbar')

    def at(self, n):
        return (L2JVector({j: s.b[n] for j, s in zip(self.keys, self.seqs)}),
                L2JVector({j: s.bbar[n] for j, s in zip(self.keys, self.seqs)}))

    def bbar_norm_sq(self):
        return np.sum(np.abs(self.bbar) ** 2, axis=1)


@dataclass(frozen=True)
class MAVerdict:
    exists: str
    kappa_sq: object
    condition: object
    cauchy: dict
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {'exists': self.exists, 'kappa_sq': self.kappa_sq,
                'condition': self.condition.as_dict(), 'cauchy': dict(self.cauchy),
                'notes': list(self.notes)}


def partial_sums(source, n_max):
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if n_max + 1 > MAX_HORIZON:
        raise HorizonExceeded(f"horizon {n_max} exceeds {MAX_HORIZON}; "
                              f"stream instead", field='n_max')
    source = _as_source(source)
    a = np.asarray(source.take(n_max + 1))
    b = compensated_cumsum(a)
    bbar = np.zeros_like(b)
    bbar[1:] = compensated_cumsum(b)[:-1] / np.arange(1, n_max + 1)
    for arr in (a, b, bbar):
        arr.setflags(write=False)
    return CoeffSeq(a, b, bbar, source)


def vn_norm_sq_linear(seq, n, i_max=None, strict=True):
    """(||V_n g||^2 truncated at i_max, certified bound on the rest).

    The kept part is |b_{n-1}|^2 + sum_{i=0}^{i_max} |b_{i+n} - b_i|^2; the
    remainder is at most n^2 sum_{i > i_max} |a_i|^2.
    """
    if i_max is None:
        i_max = seq.n_max - n
    if n < 1 or i_max < 0 or i_max + n > seq.n_max:
        raise HorizonExceeded(f"need b up to {i_max + n}, have {seq.n_max}", field='n')
    b = seq.b
    value = abs(b[n - 1]) ** 2 + float(np.sum(np.abs(b[n:n + i_max + 1] - b[:i_max + 1]) ** 2))

    tail = seq.source.tail_sq(i_max + 1)
    if tail is None:
        if strict:
            raise TailNotCertified(f"no tail certificate for {seq.source.name}",
                                   field='generator')
        return float(value), float('inf')
    return float(value), float(n * n * tail)


def default_grid(n_max):
    hi = min(MAX_GRID_EXP, int(np.log2(n_max)) - 2)
    if hi < 2:
        raise InvalidGrid(f"n_max={n_max} is too small for a default grid", field='n_max')
    return dyadic_grid(1, hi)


def _condition(seqs, n_grid, i_max, margin, strict):
    grid = check_dyadic_grid(n_grid or default_grid(min(s.n_max for s in seqs)
                                                    if seqs else DEFAULT_N_MAX), 'n_grid')
    if i_max is None:
        i_max = (min(s.n_max for s in seqs) if seqs else grid[-1]) - grid[-1]
    values, tails = [], []
    for n in grid:
        total, tail = 0.0, 0.0
        for seq in seqs:
            v, t = vn_norm_sq_linear(seq, n, i_max, strict)
            total += v
            tail += t
        values.append(total / n)
        tails.append(tail / n)

    notes = []
    if any(np.isinf(tails)):
        notes.append('tail beyond i_max is not certified')
        logger.warning("coefficient tail beyond i_max=%d is not certified", i_max)
    else:
        notes.append(f"certified tail / n <= {max(tails):.3e}")
    return slope_verdict(grid, values, 0.0, margin, notes=notes)


def condition10_diagnostic(seq, n_grid=None, i_max=None, margin=DEFAULT_MARGIN):
    """Slope of ||V_n g||^2 / n; the limit must vanish."""
    return _condition([seq], n_grid, i_max, margin, strict=False)


def superlinear_bars(arr, n_max, workers=1):
    keys = arr.keys
    sources = [arr.columns[j] for j in keys]
    if workers > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            seqs = list(pool.map(lambda s: partial_sums(s, n_max), sources))
    else:
        seqs = [partial_sums(s, n_max) for s in sources]
    return SuperlinearBars(keys, seqs)


def condition13_diagnostic(arr, n_grid=None, i_max=None, margin=DEFAULT_MARGIN, strict=True):
    """Column-summed analogue of condition10 in l2(J).

    `arr` is a CoeffArray (materialized to i_max + max(n_grid)) or
    SuperlinearBars.
    """
    if isinstance(arr, SuperlinearBars):
        bars = arr
    else:
        if i_max is None:
            raise ValueError("i_max is required to materialize a CoeffArray")
        n_grid = check_dyadic_grid(n_grid or default_grid(i_max), 'n_grid')
        bars = superlinear_bars(arr, i_max + n_grid[-1])
    return _condition(bars.seqs, n_grid, i_max, margin, strict)


def _ma_verdict(seqs, condition, tol_cauchy):
    n_max = min(s.n_max for s in seqs) if seqs else 1
    lo = max(1, n_max // 2)
    window = (np.column_stack([s.bbar[lo:n_max + 1] for s in seqs]) if seqs
              else np.zeros((0, 0)))
    diameter = window_diameter(window)
    cauchy = {'window': [lo, n_max], 'diameter': diameter, 'tol': tol_cauchy,
              'verdict': cauchy_verdict(diameter, tol_cauchy)}

    if condition.verdict == HOLDS and cauchy['verdict'] == HOLDS:
        exists = YES
    elif condition.verdict == FAILS or cauchy['verdict'] == FAILS:
        exists = NO
    else:
        exists = INCONCLUSIVE

    notes = list(condition.notes)
    kappa_sq = None
    if exists == YES:
        limits = [s.source.b_limit for s in seqs]
        if all(lim is not None for lim in limits):
            kappa_sq = float(sum(abs(lim) ** 2 for lim in limits))
            notes.append('kappa_sq from the closed-form limit of b_n')
        else:
            kappa_sq = float(sum(abs(s.bbar[n_max]) ** 2 for s in seqs))
            notes.append(f"kappa_sq from bbar at n={n_max}")
    logger.info("martingale approximation: %s (condition %s, window diameter %.3e)",
                exists, condition.verdict, diameter)
    return MAVerdict(exists, kappa_sq, condition, cauchy, notes)


def corollary2_verdict(seq, n_max=DEFAULT_N_MAX, tol_cauchy=TOL_CAUCHY, n_grid=None,
                       margin=DEFAULT_MARGIN):
    """Linear process: condition10 together with convergence of bbar_n."""
    if not isinstance(seq, CoeffSeq):
        seq = partial_sums(seq, n_max)
    condition = condition10_diagnostic(seq, n_grid, margin=margin)
    return _ma_verdict([seq], condition, tol_cauchy)


def theorem1_verdict(arr, n_max=DEFAULT_N_MAX, tol_cauchy=TOL_CAUCHY, n_grid=None,
                     margin=DEFAULT_MARGIN, workers=1):
    """Superlinear process: condition13 together with l2(J) convergence of bbar_n."""
    bars = arr if isinstance(arr, SuperlinearBars) else superlinear_bars(arr, n_max, workers)
    condition = _condition(bars.seqs, n_grid, None, margin, strict=False)
    return _ma_verdict(bars.seqs, condition, tol_cauchy)


def sn_second_moment_coeffs(arr, n, horizon=None):
    """E[S_n^2] = n gamma(0) + 2 sum_{k<n} (n-k) Re gamma(k), coefficients cut at horizon.

    gamma(k) = sum_j sum_i c_{i,j} conj(c_{i+k,j}) for unit-variance innovations.
    """
    horizon = horizon or max(4 * n, DEFAULT_N_MAX)
    lags = np.arange(n)
    total = 0.0
    for source in arr.columns.values():
        c = np.asarray(source.take(horizon))
        corr = fftconvolve(c, np.conj(c)[::-1], mode='full')
        gamma = np.real(corr[horizon - 1:horizon - 1 + n])
        total += n * gamma[0] + 2 * float(np.sum((n - lags[1:]) * gamma[1:]))
    return float(total)


def example5_build(j_max, K=EXAMPLE5_K, checkpoint=100):
    """Coefficients a_j, their square-root transform c_j, and the growth report."""
    a_source = Example5()
    root = sqrt_apply_sequence(a_source, j_max, K)
    seq_a = partial_sums(a_source, j_max)
    c_source = Example5Root(K)
    c_source.root = root
    # the tail certificate of c comes from a, not from the finite array
    seq_c = replace(partial_sums(CustomArray(root.c), j_max), source=c_source)

    a = seq_a.a
    c = root.c
    j = np.arange(1, j_max + 1)
    envelope = a[1:] / (9 * np.sqrt(j))
    failing = np.flatnonzero(c[1:] < envelope)
    if failing.size == 0:
        j0 = 1
    elif failing[-1] + 1 == j_max:
        j0 = None
    else:
        j0 = int(failing[-1]) + 2

    nonpositive = np.flatnonzero(np.diff(seq_c.b) <= 0)
    n0 = int(nonpositive[-1]) + 1 if nonpositive.size else 0
    b = seq_c.b
    report = {
        'a_0': float(a[0]),
        'K': K,
        'j0': j0,
        'envelope_holds_from_j0': j0 is not None,
        'b_strictly_increasing_from': n0,
        'b_checkpoint': float(b[min(checkpoint, j_max)]),
        'b_j_max': float(b[j_max]),
        'envelope_sum': float(np.sum(envelope)),
        'truncation': root.as_dict(),
    }
    logger.info("example5: j0=%s, b_%d=%.6f, b_%d=%.6f", j0, checkpoint,
                report['b_checkpoint'], j_max, report['b_j_max'])
    return seq_a, seq_c, report


def example6_array():
    return CoeffArray({0: Example6('cos'), 1: Example6('sin')})


def example6_build(n_max, checkpoints=None, progress=False):
    """The two-column array with streamed traces of bbar - b and ||bbar||^2."""
    return example6_array(), stream_example6(n_max, checkpoints, progress=progress)


def stream_example6(n_max, checkpoints=None, chunk=CUMSUM_CHUNK, progress=False):
    """Traces of bbar_n - b_n, ||bbar_n||^2 and bbar_{n,0} at checkpoints.

    Works in chunks of b_n = cos/sin(sqrt(log n)) so n_max is limited only
    by time. Checkpoints default to the dyadic points 4..n_max plus n_max.
    """
    if n_max < 4:
        raise ValueError("n_max must be at least 4")
    if checkpoints is None:
        checkpoints = list(dyadic_grid(2, int(np.log2(n_max)))) + [n_max]
    cols = [Example6('cos'), Example6('sin')]
    wanted = sorted(set(int(p) for p in checkpoints if 1 <= p <= n_max))
    values = {}
    carry = np.zeros(2)
    comp = np.zeros(2)
    lo, hi = np.inf, -np.inf

    starts = range(0, n_max, chunk)
    for start in tqdm(starts, desc="streaming example6", disable=not progress):
        idx = np.arange(start, min(start + chunk, n_max))
        block = np.cumsum(np.column_stack([c.partial(idx) for c in cols]), axis=0) + carry
        # block[m - start] = b_0 + ... + b_m, so bbar_{m+1} = block / (m + 1)
        bbar = block / (idx + 1)[:, None]
        lo = min(lo, float(bbar[:, 0].min()))
        hi = max(hi, float(bbar[:, 0].max()))
        for p in wanted:
            if start < p <= start + len(idx):
                values[p] = bbar[p - 1 - start]

        y = (block[-1] - carry) - comp
        t = carry + y
        comp = (t - carry) - y
        carry = t

    b = {p: np.array([c.partial(p) for c in cols]) for p in wanted}
    logger.info("example6: streamed n_max=%d, bbar_0 in [%.4f, %.4f]", n_max, lo, hi)
    return {
        'n_max': n_max,
        'n': wanted,
        'bbar': {p: values[p].tolist() for p in wanted},
        'gap': [float(np.sqrt(np.sum((values[p] - b[p]) ** 2))) for p in wanted],
        'bbar_norm_sq': [float(np.sum(values[p] ** 2)) for p in wanted],
        'bbar_0': [float(values[p][0]) for p in wanted],
        'bbar_0_min': lo,
        'bbar_0_max': hi,
        'bbar_0_range': hi - lo,
        'convention': 'c_0 = c_1 = 0 in both columns, so b_0 = b_1 = 0',
    }
