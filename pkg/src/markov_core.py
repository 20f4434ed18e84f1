"""
Exact finite-state engine for additive functionals S_n = g(W_1)+...+g(W_n).

All inner products and norms are weighted by the stationary vector pi,
and pair kernels h(w0, w1) are measured under pi_1(w0, w1) = pi(w0) Q(w0, w1).
"""
import logging
import numpy as np

from dataclasses import dataclass, field
from math import gcd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from src.errors import (BadPi, CrossCheckFailed, InvalidChain, NonStochasticRow,
                        NotErgodic, NotMeanZero, SingularSolve)
from src.util import DEFAULT_MARGIN, dyadic_grid, check_dyadic_grid, slope_verdict

logger = logging.getLogger(__name__)

ROW_TOL = 1e-9
PI_TOL = 1e-10
MEAN_TOL = 1e-10
ADJOINT_TOL = 1e-10
POISSON_TOL = 1e-9
KAPPA_TOL = 1e-9
MOMENT_RTOL = 1e-9
COND_MAX = 1e12
ZERO_REL = 1e-12

N_GRID = dyadic_grid(1, 10)
M_GRID = dyadic_grid(1, 6)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StationaryChain:
    Q: np.ndarray
    pi: np.ndarray

    @property
    def n_states(self):
        return self.Q.shape[0]

    def inner(self, f, g):
        return float(np.sum(self.pi * f * g))

    def norm_sq(self, f):
        return self.inner(f, f)


@dataclass(frozen=True, eq=False)
class Observable:
    values: np.ndarray
    chain: StationaryChain

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.chain.n_states,):
            raise InvalidChain(f"observable has shape {values.shape}, "
                               f"chain has {self.chain.n_states} states", field='values')
        mean = float(self.chain.pi @ values)
        if abs(mean) > MEAN_TOL * max(1.0, float(np.max(np.abs(values), initial=0.0))):
            raise NotMeanZero(f"observable has pi-mean {mean:.3e}", field='values')
        object.__setattr__(self, 'values', values)

    @property
    def norm_sq(self):
        return self.chain.norm_sq(self.values)


@dataclass(frozen=True, eq=False)
class PairKernel:
    values: np.ndarray
    chain: StationaryChain

    def norm_sq(self):
        return float(np.sum(self.chain.pi[:, None] * self.chain.Q * self.values ** 2))

    def conditional_mean(self):
        """E[h(W_0, W_1) | W_0 = w0] for every w0."""
        return np.sum(self.chain.Q * self.values, axis=1)

    def __sub__(self, other):
        return PairKernel(self.values - other.values, self.chain)


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    u: Observable
    residual: float


@dataclass(frozen=True)
class ChainReport:
    reversible: bool
    normal: bool
    doubly_stochastic: bool
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {'reversible': self.reversible, 'normal': self.normal,
                'doubly_stochastic': self.doubly_stochastic, 'notes': list(self.notes)}


def observable(chain, values, center=False):
    values = np.asarray(values, dtype=float)
    if center and values.shape == (chain.n_states,):
        values = values - chain.pi @ values
    return Observable(values, chain)


def validate_chain(Q_raw, pi=None):
    Q = np.array(Q_raw, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] == 0:
        raise InvalidChain("Q must be a non-empty square matrix", field='Q')
    if not np.all(np.isfinite(Q)):
        raise InvalidChain("Q has non-finite entries", field='Q')
    negative = np.flatnonzero(np.any(Q < 0, axis=1))
    if negative.size:
        row = int(negative[0])
        raise InvalidChain(f"row {row} has a negative entry", field=f"Q[{row}]")

    deviation = Q.sum(axis=1) - 1.0
    bad = np.flatnonzero(np.abs(deviation) > ROW_TOL)
    if bad.size:
        raise NonStochasticRow(int(bad[0]), float(deviation[bad[0]]))
    Q = Q / Q.sum(axis=1)[:, None]

    _check_ergodic(Q)
    pi = stationary_vector(Q) if pi is None else _check_pi(Q, pi)
    return StationaryChain(_frozen(Q), _frozen(pi))


def _check_ergodic(Q):
    support = Q > 0
    n_comp, _ = connected_components(csr_matrix(support), directed=True,
                                     connection='strong')
    if n_comp != 1:
        raise NotErgodic(f"transition graph has {n_comp} strongly connected components",
                         field='Q')
    period = _period(support)
    if period != 1:
        raise NotErgodic(f"chain is periodic with period {period}", field='Q')


def _period(support):
    """gcd of cycle lengths, from breadth-first levels of the support graph."""
    level = np.full(support.shape[0], -1)
    level[0] = 0
    queue = [0]
    for u in queue:
        for v in np.flatnonzero(support[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))

    period = 0
    for u, v in zip(*np.nonzero(support)):
        period = gcd(period, abs(int(level[u]) + 1 - int(level[v])))
    return period


def stationary_vector(Q):
    n = Q.shape[0]
    A = Q.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(f"stationary system is singular: {exc}", field='Q')
    if np.any(pi <= 0) or np.max(np.abs(pi @ Q - pi)) > PI_TOL:
        raise BadPi("computed stationary vector is not strictly positive and invariant",
                    field='pi')
    return pi


def _check_pi(Q, pi):
    pi = np.array(pi, dtype=float)
    if pi.shape != (Q.shape[0],):
        raise BadPi(f"pi has shape {pi.shape}, expected ({Q.shape[0]},)", field='pi')
    if np.any(pi <= 0):
        raise BadPi("pi must be strictly positive", field='pi')
    if abs(pi.sum() - 1.0) > PI_TOL:
        raise BadPi(f"pi sums to {pi.sum():.12f}", field='pi')
    drift = float(np.max(np.abs(pi @ Q - pi)))
    if drift > PI_TOL:
        raise BadPi(f"pi Q differs from pi by {drift:.3e}", field='pi')
    return pi


def q_powers(chain, values, k):
    """Rows Q^0 v, Q^1 v, ..., Q^k v."""
    out = np.empty((k + 1, chain.n_states))
    out[0] = values
    for j in range(1, k + 1):
        out[j] = chain.Q @ out[j - 1]
    return out


def apply_q(chain, g, k):
    if k < 0:
        raise ValueError("k must be nonnegative")
    v = g.values
    for _ in range(k):
        v = chain.Q @ v
    return Observable(v, chain)


def classify(chain):
    return adjoint(chain)[1]


def adjoint(chain):
    Q, pi = chain.Q, chain.pi
    q_star = (Q.T * pi[None, :]) / pi[:, None]

    reversible = bool(np.max(np.abs(q_star - Q)) <= ADJOINT_TOL)
    normal = bool(np.max(np.abs(Q @ q_star - q_star @ Q)) <= ADJOINT_TOL)
    doubly = bool(np.max(np.abs(Q.sum(axis=0) - 1.0)) <= ADJOINT_TOL)
    notes = ["a finite-state co-isometry (QQ* = I on mean-zero functions) is unitary, "
             "hence normal; genuine co-isometries are handled on coefficient sequences "
             "and the Bernoulli shift"]
    return q_star, ChainReport(reversible, normal, doubly, notes)


def _v_sums(Q, v, n):
    V = np.zeros_like(v)
    Vbar = np.zeros_like(v)
    term = v
    for k in range(n):
        V = V + term
        Vbar = Vbar + (1.0 - k / n) * term
        term = Q @ term
    return V, Vbar


def v_sums(chain, g, n):
    """(V_n g, Vbar_n g) with Vbar_n = sum_k (1 - k/n) Q^k."""
    if n < 1:
        raise ValueError("n must be at least 1")
    V, Vbar = _v_sums(chain.Q, g.values, n)
    return Observable(V, chain), Observable(Vbar, chain)


def sn_second_moment(chain, g, n):
    if n < 1:
        raise ValueError("n must be at least 1")
    v = g.values
    norm_sq = chain.norm_sq(v)
    _, Vbar = _v_sums(chain.Q, v, n)
    direct = 2 * n * chain.inner(v, Vbar) - n * norm_sq

    gamma = q_powers(chain, v, n - 1) @ (chain.pi * v)
    lags = np.arange(1, n)
    autocov = n * gamma[0] + 2 * float(np.sum((n - lags) * gamma[1:]))

    scale = max(abs(direct), abs(autocov), n * norm_sq)
    if abs(direct - autocov) > MOMENT_RTOL * scale:
        raise CrossCheckFailed(f"E[S_n^2] evaluations disagree: {direct!r} vs {autocov!r}")
    return direct


def _poisson_solve(chain, v):
    """Solve (I - Q)u = v on mean-zero functions by deflating constants."""
    n = chain.n_states
    A = np.eye(n) - chain.Q + np.outer(np.ones(n), chain.pi)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularSolve(f"deflated I - Q has condition number {cond:.3e}")
    u = np.linalg.solve(A, v)
    u = u - chain.pi @ u
    residual = float(np.max(np.abs(u - chain.Q @ u - v)))
    if residual > POISSON_TOL * max(1.0, float(np.max(np.abs(v)))):
        raise SingularSolve(f"Poisson residual {residual:.3e} exceeds tolerance")
    return u, residual


def plus_norm_sq(chain, g):
    """Long-run variance lim E[S_n^2]/n = 2<g, u> - ||g||^2 with (I - Q)u = g."""
    u, residual = _poisson_solve(chain, g.values)
    value = 2 * chain.inner(g.values, u) - g.norm_sq
    return value, PoissonSolution(Observable(u, chain), residual)


def _kernel(chain, f):
    """f(w1) - Qf(w0) as an n x n array."""
    return f[None, :] - (chain.Q @ f)[:, None]


def martingale_kernel(chain, g):
    plus, solution = plus_norm_sq(chain, g)
    H = PairKernel(_kernel(chain, solution.u.values), chain)
    kappa_sq = H.norm_sq()
    if abs(kappa_sq - plus) > KAPPA_TOL * max(1.0, abs(plus)):
        raise CrossCheckFailed(f"||H||^2 = {kappa_sq!r} but plus norm is {plus!r}")
    return H, kappa_sq


def h_kernel(chain, g, n):
    V, _ = _v_sums(chain.Q, g.values, n)
    return PairKernel(_kernel(chain, V), chain)


def hbar_kernel(chain, g, n):
    if n < 1:
        raise ValueError("n must be at least 1")
    _, Vbar = _v_sums(chain.Q, g.values, n)
    return PairKernel(_kernel(chain, Vbar), chain)


def residual_bound(chain, g, n):
    """9 max_{m <= n} ||V_m g||^2."""
    V = np.zeros(chain.n_states)
    term = g.values
    best = 0.0
    for _ in range(n):
        V = V + term
        best = max(best, chain.norm_sq(V))
        term = chain.Q @ term
    return 9 * best


def residual_second_moment(chain, g, n, k):
    """Exact E[R_nk^2] for R_nk = S_k - sum_{j<=k} Hbar_n(W_{j-1}, W_j).

    R_nk = A(W_0) - A(W_k) + S_k(f)/n with A = Q Vbar_n g and f = Q V_n g;
    every cross moment reduces to <x, Q^j y> by stationarity.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    pi = chain.pi
    V, Vbar = _v_sums(chain.Q, g.values, n)
    A = chain.Q @ Vbar
    f = chain.Q @ V
    A_pows = q_powers(chain, A, k)
    f_pows = q_powers(chain, f, k)
    pa, pf = pi * A, pi * f

    boundary = 2 * float(pa @ A) - 2 * float(pa @ A_pows[k])
    cross = float(np.sum(f_pows[1:k + 1] @ pa)) - float(np.sum(A_pows[k - 1::-1][:k] @ pf))
    gamma = f_pows[:k] @ pf
    lags = np.arange(1, k)
    sum_sq = k * gamma[0] + 2 * float(np.sum((k - lags) * gamma[1:]))
    value = boundary + 2 * cross / n + sum_sq / n ** 2

    bound = residual_bound(chain, g, n)
    slack = 1e-9 * max(1.0, bound)
    if value < -slack or value > bound + slack:
        raise CrossCheckFailed(f"E[R_nk^2] = {value!r} outside [0, {bound!r}]")
    return max(value, 0.0)


def limit_residual_second_moment(chain, g, n):
    """E[(S_n - M_n)^2] for the limiting martingale, i.e. E[(Qu(W_0) - Qu(W_n))^2]."""
    u, _ = _poisson_solve(chain, g.values)
    qu = chain.Q @ u
    qu_n = q_powers(chain, qu, n)[n]
    return 2 * chain.norm_sq(qu) - 2 * chain.inner(qu, qu_n)


def criteria_diagnostic(chain, g, n_grid=None, m_grid=None, margin=DEFAULT_MARGIN):
    """Slope surrogates for ||V_n g|| = o(sqrt n) and (1/m) sum ||Q^k g||_+^2 -> 0."""
    n_grid = check_dyadic_grid(n_grid or N_GRID, 'n_grid')
    m_grid = check_dyadic_grid(m_grid or M_GRID, 'm_grid')
    v = g.values
    g_norm_sq = g.norm_sq

    norms = {}
    V = np.zeros_like(v)
    term = v
    for n in range(1, n_grid[-1] + 1):
        V = V + term
        term = chain.Q @ term
        if n in n_grid:
            norms[n] = np.sqrt(chain.norm_sq(V))
    cond2 = slope_verdict(n_grid, [norms[n] for n in n_grid], 0.5, margin,
                          zero_floor=ZERO_REL * np.sqrt(g_norm_sq))

    # Q^k commutes with I - Q, so Q^k u solves the Poisson equation for Q^k g
    u, _ = _poisson_solve(chain, v)
    m_max = m_grid[-1]
    qg = q_powers(chain, v, m_max)
    qu = q_powers(chain, u, m_max)
    plus = 2 * np.sum(chain.pi * qg * qu, axis=1) - np.sum(chain.pi * qg ** 2, axis=1)
    running = np.cumsum(plus[1:]) / np.arange(1, m_max + 1)
    cond16 = slope_verdict(m_grid, [running[m - 1] for m in m_grid], 0.0, margin,
                           zero_floor=ZERO_REL ** 2 * g_norm_sq)

    logger.info("criteria: cond2 %s (slope %.3f), cond16 %s (slope %.3f)",
                cond2.verdict, cond2.slope, cond16.verdict, cond16.slope)
    return cond2, cond16
