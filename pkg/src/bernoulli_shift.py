"""
Fourier-side transition operator of the one-sided Bernoulli shift.

With e_r(w) = exp(2 pi i r w) on [0, 1), Q keeps the coefficient at even r
and moves it to r/2, and Q* doubles every frequency. Frequencies split as
r = j 2^i with j odd, which turns a mean-zero g into columns c_{i,j} of a
superlinear process.
"""
import logging
import numpy as np

from dataclasses import dataclass, field

from src.errors import GridTooCoarse, NotConjugateSymmetric, ZeroIndex
from src.sequence_models import DEFAULT_N_MAX, TOL_CAUCHY, CoeffArray, theorem1_verdict

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class DyadicIndex:
    i: int
    j: int

    @property
    def r(self):
        return self.j << self.i


@dataclass(frozen=True, eq=False)
class FourierObservable:
    """Sparse coefficients r -> c_r of a mean-zero g; `real` asserts c_{-r} = conj(c_r)."""
    coeffs: dict = field(default_factory=dict)
    real: bool = False

    def __post_init__(self):
        coeffs = {}
        for r, c in self.coeffs.items():
            r = int(r)
            if r == 0:
                raise ZeroIndex("frequency 0 is excluded from mean-zero observables",
                                field='coeffs[0]')
            if c != 0:
                coeffs[r] = complex(c)
        if self.real:
            for r, c in coeffs.items():
                if abs(coeffs.get(-r, 0) - c.conjugate()) > SYMMETRY_TOL:
                    raise NotConjugateSymmetric(f"c[{-r}] is not conj(c[{r}])",
                                                field=f"coeffs[{-r}]")
        object.__setattr__(self, 'coeffs', coeffs)

    @property
    def norm_sq(self):
        return float(sum(abs(c) ** 2 for c in self.coeffs.values()))

    def __eq__(self, other):
        return isinstance(other, FourierObservable) and self.coeffs == other.coeffs

    def __sub__(self, other):
        out = dict(self.coeffs)
        for r, c in other.coeffs.items():
            out[r] = out.get(r, 0) - c
        return FourierObservable(out, self.real and other.real)


def dyadic_decompose(r):
    r = int(r)
    if r == 0:
        raise ZeroIndex("0 has no dyadic decomposition", field='r')
    i = (abs(r) & -abs(r)).bit_length() - 1
    return DyadicIndex(i, r >> i)


def apply_q_fourier(g):
    return FourierObservable({r // 2: c for r, c in g.coeffs.items() if r % 2 == 0}, g.real)


def apply_qstar_fourier(g):
    return FourierObservable({2 * r: c for r, c in g.coeffs.items()}, g.real)


def projection_qstar_q(g):
    """Q*Q drops the odd frequencies."""
    return apply_qstar_fourier(apply_q_fourier(g))


def to_coeff_array(g, horizon=None):
    """Column j (odd) holds c_{i,j} = c_{j 2^i}, padded with zeros to a common length."""
    cells = {}
    for r, c in g.coeffs.items():
        idx = dyadic_decompose(r)
        cells.setdefault(idx.j, {})[idx.i] = c
    depth = max((max(col) + 1 for col in cells.values()), default=1)
    horizon = max(horizon or 0, depth)

    columns = {}
    for j in sorted(cells):
        values = np.zeros(horizon, dtype=complex)
        for i, c in cells[j].items():
            values[i] = c
        columns[j] = values
    return CoeffArray(columns)


def sample_trig(g, size):
    """g(m / size) for m = 0..size-1."""
    w = np.arange(size) / size
    if not g.coeffs:
        return np.zeros(size, dtype=complex)
    r = np.fromiter(g.coeffs, dtype=float)
    c = np.fromiter(g.coeffs.values(), dtype=complex)
    return np.exp(2j * np.pi * np.outer(w, r)) @ c


def _check_grid(samples):
    size = len(samples)
    if size < 2 or size & (size - 1):
        raise GridTooCoarse(f"grid size {size} must be a power of two >= 2", field='samples')


def apply_q_pointwise(samples):
    """Qg(w) = (g(w/2) + g(w/2 + 1/2)) / 2 on the half-resolution grid 2m/N."""
    samples = np.asarray(samples)
    _check_grid(samples)
    half = len(samples) // 2
    return (samples[:half] + samples[half:]) / 2


def apply_qstar_pointwise(samples):
    """Q*g(w) = g(2w mod 1) on the same grid."""
    samples = np.asarray(samples)
    _check_grid(samples)
    return samples[(2 * np.arange(len(samples))) % len(samples)]


def ma_verdict_bernoulli(g, n_max=DEFAULT_N_MAX, tol_cauchy=TOL_CAUCHY, n_grid=None):
    arr = to_coeff_array(g)
    logger.debug("bernoulli observable split into %d columns", len(arr.keys))
    return theorem1_verdict(arr, n_max, tol_cauchy, n_grid)
