"""Brute-force path enumeration for small discrete models.

These routines sum explicit products of factor entries over every path and
share no code with the matrix-product and message-passing implementations,
so they serve as independent references.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .errors import EnumerationBudgetError

BUDGET = 10**7


def _paths(n_states: int, length: int) -> np.ndarray:
    if n_states**length > BUDGET:
        raise EnumerationBudgetError(f"{n_states}^{length} paths exceed the budget of {BUDGET}")
    return np.array(list(itertools.product(range(n_states), repeat=length)), dtype=np.int64).reshape(-1, length)


def cycle_path_weights(operators: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """All closed paths of a cycle and their normalized probabilities.

    ``operators[l][x_{l+1}, x_l]`` already include any quadrature weight.
    """
    k = len(operators)
    S = operators[0].shape[0]
    paths = _paths(S, k)
    w = np.ones(len(paths))
    for l, W in enumerate(operators):
        w *= W[paths[:, (l + 1) % k], paths[:, l]]
    return paths, w / w.sum()


def cycle_marginals(operators: Sequence[np.ndarray]) -> np.ndarray:
    """Single-time marginals ``p_l(x)`` for ``l = 0..k-1``, shape ``(k, S)``."""
    paths, prob = cycle_path_weights(operators)
    S = operators[0].shape[0]
    out = np.zeros((len(operators), S))
    for l in range(len(operators)):
        np.add.at(out[l], paths[:, l], prob)
    return out


def cycle_external_marginal(operators: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of the external half ``(x_0, ..., x_n)`` with ``n = k/2``.

    Returns the distinct external paths and their probabilities.
    """
    k = len(operators)
    n = k // 2
    S = operators[0].shape[0]
    paths, prob = cycle_path_weights(operators)
    ext = paths[:, : n + 1]
    codes = ext @ (S ** np.arange(n, -1, -1))
    total = np.zeros(S ** (n + 1))
    np.add.at(total, codes, prob)
    return _paths(S, n + 1), total


def chain_marginals(
    operators: Sequence[np.ndarray],
    start: np.ndarray | None = None,
    end: np.ndarray | None = None,
) -> np.ndarray:
    """Marginals of the open chain ``start(x_0) prod_l W_l(x_{l+1}, x_l) end(x_n)``."""
    n = len(operators)
    S = operators[0].shape[0]
    start = np.ones(S) if start is None else np.asarray(start, dtype=float)
    end = np.ones(S) if end is None else np.asarray(end, dtype=float)
    paths = _paths(S, n + 1)
    w = start[paths[:, 0]] * end[paths[:, n]]
    for l, W in enumerate(operators):
        w *= W[paths[:, l + 1], paths[:, l]]
    w /= w.sum()
    out = np.zeros((n + 1, S))
    for l in range(n + 1):
        np.add.at(out[l], paths[:, l], w)
    return out


def chain_backward_partition(operators: Sequence[np.ndarray], end: np.ndarray | None = None) -> np.ndarray:
    """Partial partition functions ``Z_{l<-}(x_l)`` summed over ``x_{l+1..n}``."""
    n = len(operators)
    S = operators[0].shape[0]
    end = np.ones(S) if end is None else np.asarray(end, dtype=float)
    out = np.zeros((n + 1, S))
    out[n] = end
    for l in range(n):
        tail = _paths(S, n - l)  # (x_{l+1}, ..., x_n)
        for x in range(S):
            w = end[tail[:, -1]].copy()
            prev = np.full(len(tail), x)
            for j in range(n - l):
                w *= operators[l + j][tail[:, j], prev]
                prev = tail[:, j]
            out[l, x] = w.sum()
    return out
