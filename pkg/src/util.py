import numpy as np

from dataclasses import dataclass, field

from src.errors import InvalidGrid

HOLDS = 'holds'
FAILS = 'fails'
INCONCLUSIVE = 'inconclusive'

DEFAULT_MARGIN = 0.1
CUMSUM_CHUNK = 1 << 16
WINDOW_POINTS = 1024
# log() stand-in for exact zeros in a slope fit
LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SlopeVerdict:
    """Power-law trend of a diagnostic sequence over a dyadic grid.

    `holds` iff slope < threshold - margin, `fails` iff slope > threshold + margin.
    """
    grid: list
    values: list
    log_values: list
    slope: float
    threshold: float
    margin: float
    verdict: str
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {
            'grid': list(self.grid),
            'values': list(self.values),
            'log_values': list(self.log_values),
            'slope': self.slope,
            'threshold': self.threshold,
            'margin': self.margin,
            'verdict': self.verdict,
            'notes': list(self.notes),
        }


def dyadic_grid(lo, hi):
    """Powers 2**lo .. 2**hi inclusive."""
    if lo < 0 or hi < lo:
        raise InvalidGrid(f"bad dyadic exponents {lo}:{hi}", field='grid')
    return [1 << e for e in range(lo, hi + 1)]


def check_dyadic_grid(grid, name='grid'):
    grid = [int(n) for n in grid]
    if len(grid) < 2:
        raise InvalidGrid(f"{name} needs at least two points", field=name)
    for n in grid:
        if n < 1 or n & (n - 1):
            raise InvalidGrid(f"{name} point {n} is not a power of two", field=name)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidGrid(f"{name} must be strictly increasing", field=name)
    return grid


def slope_verdict(grid, values, threshold, margin=DEFAULT_MARGIN, zero_floor=0.0, notes=None):
    """Fit log|values| against log grid and compare the slope to threshold.

    Values at or below `zero_floor` count as exact zeros. An all-zero
    sequence has slope -inf.
    """
    grid = check_dyadic_grid(grid)
    values = np.abs(np.asarray(values, dtype=float))
    notes = list(notes or [])

    if np.all(values <= zero_floor):
        slope = float('-inf')
        log_values = [float('-inf')] * len(values)
        notes.append('all values vanish')
    else:
        clipped = np.where(values <= zero_floor, LOG_FLOOR, values)
        log_values = np.log(clipped)
        slope = float(np.polyfit(np.log(grid), log_values, 1)[0])
        log_values = log_values.tolist()

    if slope < threshold - margin:
        verdict = HOLDS
    elif slope > threshold + margin:
        verdict = FAILS
    else:
        verdict = INCONCLUSIVE

    return SlopeVerdict(grid, values.tolist(), log_values, slope, threshold,
                        margin, verdict, notes)


def compensated_cumsum(x, chunk=CUMSUM_CHUNK):
    """Cumulative sum with a Kahan-compensated carry between chunks."""
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=np.result_type(x.dtype, np.float64))
    carry = out.dtype.type(0)
    comp = out.dtype.type(0)
    for start in range(0, len(x), chunk):
        block = np.cumsum(x[start:start + chunk], dtype=out.dtype)
        out[start:start + chunk] = block + carry
        y = block[-1] - comp
        t = carry + y
        comp = (t - carry) - y
        carry = t
    return out


def window_diameter(values):
    """Largest pairwise distance between the rows of `values`.

    Real scalar sequences are exact; vector or complex windows are
    subsampled to WINDOW_POINTS rows (endpoints included).
    """
    values = np.asarray(values)
    if values.size == 0:
        return 0.0
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[1] == 1 and not np.iscomplexobj(values):
        return float(np.ptp(values[:, 0]))

    idx = np.unique(np.linspace(0, len(values) - 1,
                                min(len(values), WINDOW_POINTS)).astype(int))
    pts = values[idx]
    diameter = 0.0
    for row in pts:
        dist = np.sqrt(np.sum(np.abs(pts - row) ** 2, axis=1))
        diameter = max(diameter, float(dist.max()))
    return diameter


def cauchy_verdict(diameter, tol):
    if diameter < tol:
        return HOLDS
    if diameter > 10 * tol:
        return FAILS
    return INCONCLUSIVE
