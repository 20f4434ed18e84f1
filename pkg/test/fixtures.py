"""Chains and observables shared by the test modules."""
import itertools
import numpy as np

from src.markov_core import observable, validate_chain

TWO_STATE = [[0.75, 0.25], [0.25, 0.75]]
ASYMMETRIC = [[0.9, 0.1], [0.3, 0.7]]
# Q(i, i) = 0.3, Q(i, i+1 mod 3) = 0.7
CYCLIC = [[0.3, 0.7, 0.0], [0.0, 0.3, 0.7], [0.7, 0.0, 0.3]]


def two_state():
    chain = validate_chain(TWO_STATE)
    return chain, observable(chain, [1.0, -1.0])


def iid_chain(pi):
    pi = np.asarray(pi, dtype=float)
    return validate_chain(np.tile(pi, (len(pi), 1)))


def random_chain(rng, n_states):
    """Dense ergodic chain, in general neither reversible nor normal."""
    Q = rng.random((n_states, n_states)) + 0.05
    return validate_chain(Q / Q.sum(axis=1)[:, None])


def reversible_chain(rng, n_states, lazy=0.5):
    """Lazy reversible chain; with lazy >= 1/2 its spectrum lies in [0, 1]."""
    W = rng.random((n_states, n_states)) + 0.05
    W = W + W.T
    Q = W / W.sum(axis=1)[:, None]
    return validate_chain(lazy * np.eye(n_states) + (1 - lazy) * Q)


def circulant_chain(weights):
    """Q(i, i+k mod n) = weights[k]: normal and doubly stochastic."""
    weights = np.asarray(weights, dtype=float)
    return validate_chain(np.array([np.roll(weights, i) for i in range(len(weights))]))


def random_circulant(rng, n_states):
    w = rng.random(n_states) + 0.05
    return circulant_chain(w / w.sum())


def random_observable(rng, chain):
    return observable(chain, rng.standard_normal(chain.n_states), center=True)


def enumerate_paths(chain, n):
    """Every stationary path W_0..W_n with its probability."""
    for path in itertools.product(range(chain.n_states), repeat=n + 1):
        p = chain.pi[path[0]]
        for a, b in zip(path, path[1:]):
            p *= chain.Q[a, b]
        yield path, p
