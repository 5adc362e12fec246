"""
Shared fixtures: the two-state reference chain, a converging-boundary chain,
seeded random chains and an exhaustive path enumerator used as an oracle.
"""

from itertools import product
from typing import Callable, Tuple

import numpy as np
import pytest

from src.generators import CEMETERY, random_chain, random_schedule
from src.models import AbsorbedChain, BoundarySchedule, StateSpace

ChainPair = Tuple[AbsorbedChain, BoundarySchedule]


def make_chain_a() -> ChainPair:
    chain = AbsorbedChain.from_rows(
        ["a", "b", CEMETERY],
        [
            [0.5, 0.3, 0.2],
            [0.4, 0.4, 0.2],
            [0.0, 0.0, 1.0],
        ],
    )
    return chain, BoundarySchedule.constant(chain.space, [CEMETERY])


def make_chain_c() -> ChainPair:
    """Symmetric two-state chain whose state "1" is absorbing until clock 3"""
    chain = AbsorbedChain.from_rows(
        ["1", "2", CEMETERY],
        [
            [0.5, 0.3, 0.2],
            [0.3, 0.5, 0.2],
            [0.0, 0.0, 1.0],
        ],
    )
    schedule = BoundarySchedule.converging(chain.space, {0: {CEMETERY, "1"}}, {CEMETERY}, 3)
    return chain, schedule


@pytest.fixture
def chain_a() -> ChainPair:
    return make_chain_a()


@pytest.fixture
def chain_c() -> ChainPair:
    return make_chain_c()


@pytest.fixture
def random_pair() -> Callable[..., ChainPair]:
    """Factory (seed, n_live, kind) -> random chain with a random schedule"""

    def build(seed: int, n_live: int = 3, kind: str = "constant") -> ChainPair:
        rng = np.random.default_rng(seed)
        chain = random_chain(rng, n_live)
        return chain, random_schedule(rng, chain.space, kind)

    return build


def enumerate_paths(
    chain: AbsorbedChain, schedule: BoundarySchedule, weights: np.ndarray, s: int, t: int
) -> np.ndarray:
    """P_w(X_t = ·, τ_{A∘θ_s} > t) by summing over every path of length t"""
    n = chain.space.size
    matrix = chain.matrix
    masks = [schedule.survival_mask(s + k) for k in range(t + 1)]
    law = np.zeros(n)
    for start in range(n):
        if weights[start] == 0 or not masks[0][start]:
            continue
        for path in product(range(n), repeat=t):
            probability = weights[start]
            here = start
            for k, there in enumerate(path):
                if not masks[k + 1][there]:
                    probability = 0.0
                    break
                probability *= matrix[here, there]
                here = there
            law[here] += probability
    return law


@pytest.fixture
def brute_force() -> Callable[..., np.ndarray]:
    return enumerate_paths


def labels_of(space: StateSpace):
    return [label for label in space.labels if label != CEMETERY]
