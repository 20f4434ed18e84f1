"""
The square root of I - Q as the binomial series I - sum_k beta_k Q^k.

The series is applied to finite-chain observables with an adaptive
truncation order, and to coefficient sequences of linear processes with a
fixed order and a reported truncation error.
"""
import logging
import numpy as np

from dataclasses import dataclass
from scipy.signal import fftconvolve

from src.errors import InsufficientHorizon, NoConvergence, SingularSolve
from src.markov_core import (COND_MAX, Observable, hbar_kernel, martingale_kernel,
                             residual_bound, residual_second_moment)
from src.util import check_dyadic_grid, dyadic_grid

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
K_MAX = 100000
# powers of Q used to estimate the contraction ratio
RATIO_WINDOW = 8
TRACE_LENGTH = 64


@dataclass(frozen=True, eq=False)
class BetaSeries:
    """beta_1..beta_K with the exact remainder 1 - sum beta_k.

    `tail` is prod_{k<=K} (2k-1)/(2k) = C(2K, K)/4^K, computed as a product
    rather than by subtraction; `tail_bound` is the majorant 1/sqrt(pi K).
    """
    K: int
    beta: np.ndarray
    tail: float
    tail_bound: float

    @property
    def partial_sum(self):
        return float(np.sum(self.beta))

    def as_dict(self):
        return {'K': self.K, 'partial_sum': self.partial_sum, 'tail': self.tail,
                'tail_bound': self.tail_bound,
                'majorant': '1 - sum_{k<=K} beta_k = C(2K,K)/4^K <= 1/sqrt(pi K)'}


@dataclass(frozen=True, eq=False)
class SequenceRoot:
    c: np.ndarray
    K: int
    tail: float
    truncation_error: float
    # truncated c_j underestimates the full series for nonnegative nonincreasing a
    lower_bound: bool

    def as_dict(self):
        return {'K': self.K, 'tail': self.tail, 'truncation_error': self.truncation_error,
                'lower_bound': self.lower_bound, 'n_coefficients': len(self.c)}


@dataclass(frozen=True)
class ApproximationTrace:
    grid: list
    kernel_distance: list
    residual_over_n: list
    envelope_over_n: list
    kappa_sq: float

    def as_dict(self):
        return {'grid': list(self.grid), 'kernel_distance': list(self.kernel_distance),
                'residual_over_n': list(self.residual_over_n),
                'envelope_over_n': list(self.envelope_over_n), 'kappa_sq': self.kappa_sq}


def beta_tails(K):
    """1 - sum_{k<=m} beta_k for m = 0..K."""
    k = np.arange(1, K + 1)
    return np.concatenate(([1.0], np.cumprod((2 * k - 1) / (2 * k))))


def beta_coefficients(K):
    if K < 1:
        raise ValueError("K must be at least 1")
    k = np.arange(1, K)
    ratios = (k - 0.5) / (k + 1)
    beta = 0.5 * np.concatenate(([1.0], np.cumprod(ratios)))
    beta.setflags(write=False)
    tail = float(beta_tails(K)[-1])
    return BetaSeries(K, beta, tail, float(1.0 / np.sqrt(np.pi * K)))


def sqrt_apply_chain(chain, h, tol=DEFAULT_TOL, k_max=K_MAX):
    """g = h - sum_{k<=K} beta_k Q^k h with the remainder certified below tol.

    Returns (g, K_used, err_bound). Q is a contraction in L2(pi), so
    tail_K * ||Q^K h|| always bounds the remainder; once RATIO_WINDOW powers
    are known the geometric estimate beta_{K+1} ||Q^K h|| rho / (1 - rho)
    is used when it is smaller.
    """
    g = np.array(h.values, dtype=float)
    norms = [np.sqrt(chain.norm_sq(g))]
    if norms[0] == 0.0:
        return Observable(g, chain), 0, 0.0

    term = g.copy()
    beta_k, tail = 0.5, 1.0
    for k in range(1, k_max + 1):
        term = chain.Q @ term
        g -= beta_k * term
        tail *= (2 * k - 1) / (2 * k)
        beta_k *= (k - 0.5) / (k + 1)
        norms.append(np.sqrt(chain.norm_sq(term)))

        err = tail * norms[-1]
        if len(norms) > RATIO_WINDOW and norms[-1] > 0:
            window = np.asarray(norms[-RATIO_WINDOW - 1:])
            rho = float(np.max(window[1:] / window[:-1]))
            if rho < 1.0:
                err = min(err, beta_k * norms[-1] * rho / (1.0 - rho))
        if err <= tol:
            logger.debug("sqrt series stopped at K=%d, err=%.3e", k, err)
            return Observable(g, chain), k, float(err)

    window = np.asarray(norms[-TRACE_LENGTH - 1:])
    trace = (window[1:] / np.where(window[:-1] > 0, window[:-1], 1.0)).tolist()
    raise NoConvergence(f"||Q^k h|| did not contract below tol={tol:g} "
                        f"within k_max={k_max}", trace=trace)


def verify_square(chain, h, tol=DEFAULT_TOL, k_max=K_MAX):
    """||sqrt(I-Q) sqrt(I-Q) h - (I-Q) h||, at most 3 tol."""
    root, _, _ = sqrt_apply_chain(chain, h, tol, k_max)
    square, _, _ = sqrt_apply_chain(chain, root, tol, k_max)
    target = h.values - chain.Q @ h.values
    return float(np.sqrt(chain.norm_sq(square.values - target)))


def sqrt_apply_sequence(a, j_max, K):
    """c_j = sum_{k<=K} beta_k (a_j - a_{j+k}) for 0 <= j <= j_max.

    `a` is an array holding at least a_0..a_{j_max+K}, or a source with a
    `take(n)` method returning the first n coefficients. Values supplied
    explicitly are not zero-padded; complex coefficients stay complex.
    """
    need = j_max + K + 1
    if getattr(a, 'supplied', False):
        a = a.values
    take = getattr(a, 'take', None)
    if callable(take) and not isinstance(a, np.ndarray):
        a = take(need)
    a = np.asarray(a)
    a = a.astype(complex if np.iscomplexobj(a) else float)
    if len(a) < need:
        raise InsufficientHorizon(f"need {need} coefficients for j_max={j_max}, K={K}, "
                                  f"got {len(a)}", field='a')

    series = beta_coefficients(K)
    window = a[:need]
    shifted = fftconvolve(window[1:], series.beta[::-1], mode='valid')
    c = window[:j_max + 1] * series.partial_sum - shifted
    c.setflags(write=False)

    if np.iscomplexobj(window):
        # |a_j - a_{j+k}| <= 2 max|a|
        spread = 2.0 * float(np.max(np.abs(window)))
        lower = False
    else:
        spread = float(np.max(window) - min(float(np.min(window)), 0.0))
        lower = bool(np.all(window >= 0) and np.all(np.diff(window) <= 0))
    return SequenceRoot(c, K, series.tail, series.tail * spread, lower)


def sqrt_operator(chain, tol=DEFAULT_TOL, k_max=K_MAX):
    """Matrix of sqrt(I-Q) composed with the projection onto mean-zero functions."""
    n = chain.n_states
    P0 = np.eye(n) - np.outer(np.ones(n), chain.pi)
    columns = [sqrt_apply_chain(chain, Observable(P0[:, i], chain), tol, k_max)[0].values
               for i in range(n)]
    return np.column_stack(columns)


def adjoint_root(chain, g, tol=DEFAULT_TOL, k_max=K_MAX):
    """h* with g = sqrt(I-Q*) h*; the adjoint series is D^-1 S^T D."""
    S = sqrt_operator(chain, tol, k_max)
    pi = chain.pi
    S_star = (S.T * pi[None, :]) / pi[:, None]
    A = S_star + np.outer(np.ones(chain.n_states), pi)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularSolve(f"adjoint square root has condition number {cond:.3e}")
    h_star = np.linalg.solve(A, g.values)
    return Observable(h_star - pi @ h_star, chain)


def root_plus_norm(chain, h, tol=DEFAULT_TOL, k_max=K_MAX):
    """(g, <(I+Q)h, h*>) for g = sqrt(I-Q) h, where g = sqrt(I-Q*) h*."""
    g, _, _ = sqrt_apply_chain(chain, h, tol, k_max)
    h_star = adjoint_root(chain, g, tol, k_max)
    value = chain.inner(h.values + chain.Q @ h.values, h_star.values)
    return g, value


def normal_chain_approximation(chain, h, n_grid=None, tol=DEFAULT_TOL, k_max=K_MAX):
    """Kernel distance ||Hbar_n - H|| and E[R_nn^2]/n for g = sqrt(I-Q) h."""
    grid = check_dyadic_grid(n_grid or dyadic_grid(1, 8), 'n_grid')
    g, _, _ = sqrt_apply_chain(chain, h, tol, k_max)
    H, kappa_sq = martingale_kernel(chain, g)

    distance, residual, envelope = [], [], []
    for n in grid:
        distance.append(float(np.sqrt((hbar_kernel(chain, g, n) - H).norm_sq())))
        residual.append(residual_second_moment(chain, g, n, n) / n)
        envelope.append(residual_bound(chain, g, n) / n)
    logger.info("approximation trace: kernel distance %.3e -> %.3e",
                distance[0], distance[-1])
    return ApproximationTrace(grid, distance, residual, envelope, kappa_sq)
