import itertools
from typing import Any

import numpy as np

from hmm_icl.models.hmm_core import LowRankHmm, to_symbols
from hmm_icl.utils.errors import InvalidDimensionError

# K ** (history + m) hidden paths are materialised
PATH_LIMIT = 1_000_000


def path_enumeration_conditional(hmm: LowRankHmm, history: Any, steps_ahead: int = 1) -> np.ndarray:
    """
    ``P(next steps_ahead symbols | history)`` by summing the joint over every hidden path.

    Slow and independent of the filtering code; only for small models.
    """
    symbols = to_symbols(history, hmm.num_obs)
    t = symbols.size
    K, p = hmm.num_hidden, hmm.num_obs
    if steps_ahead < 1:
        raise InvalidDimensionError("steps_ahead must be at least 1")
    if K ** (t + steps_ahead) > PATH_LIMIT:
        raise InvalidDimensionError(f"{K}^{t + steps_ahead} hidden paths exceed the enumeration limit")

    paths = np.array(list(itertools.product(range(K), repeat=t + steps_ahead)), dtype=np.int64)
    weight = hmm.initial[paths[:, 0]].copy()
    for i in range(1, paths.shape[1]):
        weight *= hmm.transition[paths[:, i - 1], paths[:, i]]
    for i, symbol in enumerate(symbols):
        weight *= hmm.emission[symbol, paths[:, i]]

    joint = np.empty(p ** steps_ahead)
    for index, future in enumerate(itertools.product(range(p), repeat=steps_ahead)):
        term = weight.copy()
        for j, symbol in enumerate(future):
            term *= hmm.emission[symbol, paths[:, t + j]]
        joint[index] = term.sum()
    return joint / joint.sum()
