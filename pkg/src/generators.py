"""
Seeded random absorbed chains and boundary schedules for randomized suites.

Every chain carries an explicit cemetery state which belongs to every
absorbing set; live states are labelled s0, s1, ...
"""

import logging
from typing import Tuple

import numpy as np

from src.cv_certify import CVCertificate, certify
from src.exceptions import InvalidModelError, QexodusError
from src.models import AbsorbedChain, BoundarySchedule, Kernel, StateSpace

logger = logging.getLogger(__name__)

CEMETERY = "∂"


def random_chain(
    rng: np.random.Generator,
    n_live: int,
    concentration: float = 5.0,
    kill_range: Tuple[float, float] = (0.05, 0.3),
) -> AbsorbedChain:
    """Dense chain on n_live states plus the cemetery; each live row loses a U(kill_range) mass to it"""
    if n_live < 1:
        raise InvalidModelError("n_live must be at least 1")
    labels = tuple(f"s{i}" for i in range(n_live)) + (CEMETERY,)
    matrix = np.zeros((n_live + 1, n_live + 1))
    for i in range(n_live):
        kill = rng.uniform(*kill_range)
        matrix[i, :n_live] = (1.0 - kill) * rng.dirichlet(np.full(n_live, concentration))
        matrix[i, n_live] = kill
    matrix[n_live, n_live] = 1.0
    # Exact row sums keep the kernel validation tolerance satisfied
    matrix[:n_live, n_live] = 1.0 - matrix[:n_live, :n_live].sum(axis=1)
    return AbsorbedChain(StateSpace(labels), Kernel(matrix))


def _random_extra(rng: np.random.Generator, live: Tuple[str, ...], max_size: int) -> frozenset:
    size = int(rng.integers(0, max_size + 1))
    return frozenset(rng.choice(live, size=size, replace=False).tolist()) if size else frozenset()


def random_schedule(
    rng: np.random.Generator,
    space: StateSpace,
    kind: str,
    max_period: int = 3,
    max_stabilization: int = 4,
) -> BoundarySchedule:
    """
    Random schedule of the requested kind whose absorbing sets always contain the cemetery.

    Periodic schedules draw a period in [1, max_period]; converging schedules
    shrink a random set of killed live states down to the cemetery alone.
    """
    live = tuple(label for label in space.labels if label != CEMETERY)
    cemetery = frozenset({CEMETERY})
    if kind == "constant":
        return BoundarySchedule.constant(space, cemetery)
    if kind == "periodic":
        period = int(rng.integers(1, max_period + 1))
        sets = [cemetery | _random_extra(rng, live, len(live) - 1) for _ in range(period)]
        return BoundarySchedule.periodic(space, sets)
    if kind == "converging":
        stabilization = int(rng.integers(1, max_stabilization + 1))
        killed = _random_extra(rng, live, len(live) - 1)
        sets = {}
        for t in range(stabilization):
            sets[t] = cemetery | killed
            if killed and rng.random() < 0.5:
                killed = killed - {sorted(killed)[int(rng.integers(0, len(killed)))]}
        return BoundarySchedule.converging(space, sets, cemetery, stabilization)
    raise InvalidModelError(f"unknown schedule kind {kind!r}")


def random_certified_chain(
    rng: np.random.Generator,
    n_live: int,
    kind: str = "constant",
    t0_max: int = 2,
    horizon: int = 120,
    min_product: float = 0.2,
    max_attempts: int = 500,
) -> Tuple[AbsorbedChain, BoundarySchedule, CVCertificate]:
    """Draw chains until one carries a valid certificate with c1*c2 >= min_product"""
    for attempt in range(1, max_attempts + 1):
        chain = random_chain(rng, n_live)
        chosen = random_schedule(rng, chain.space, kind)
        t0_cap = max(t0_max, chosen.period or 1)
        cert = certify(chain, chosen, t0_cap, horizon)
        if cert.valid and cert.product >= min_product:
            logger.debug(f"Certified random {kind} chain after {attempt} attempt(s): c1c2={cert.product:.4g}")
            return chain, chosen, cert
    raise QexodusError(f"no certified {kind} chain with c1*c2 >= {min_product} after {max_attempts} attempts")
