"""
Exact survival probabilities and conditioned laws for finite absorbed chains.

Killing is realized by masking the kernel: the step matrix at clock u is
P(x,y)·1{x ∈ E_u}·1{y ∈ E_{u+1}}. Products of step matrices give the
sub-probability of surviving jointly with the position. Conditioned laws are
computed with per-step renormalization so deep horizons never underflow.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.exceptions import (
    ConditioningOnNullError,
    HorizonTooDeepError,
    InvalidModelError,
    ScheduleDegenerateError,
    ShapeError,
    StartingInBoundaryError,
)
from src.models import AbsorbedChain, BoundarySchedule, Kernel, Measure, ScheduleKind, StateSpace, SubKernel
from src.schemas import ChainDocument, ScheduleDocument

logger = logging.getLogger(__name__)

SURVIVAL_FLOOR = 1e-300
CONDITIONING_FLOOR = 1e-250


@lru_cache(maxsize=4096)
def _step_block(chain: AbsorbedChain, schedule: BoundarySchedule, here: int, there: int) -> np.ndarray:
    rows = schedule.survival_mask(here)
    cols = schedule.survival_mask(there)
    if not rows.any() or not cols.any():
        raise ScheduleDegenerateError(f"empty survival set at clock {here if not rows.any() else there}")
    step = chain.matrix * rows[:, None] * cols[None, :]
    step.flags.writeable = False
    return step


def step_matrix(chain: AbsorbedChain, schedule: BoundarySchedule, u: int) -> np.ndarray:
    """Full n x n killed step matrix from clock u to clock u+1 (read-only)"""
    if not chain.space.same_as(schedule.space):
        raise ShapeError("chain and schedule are defined on different state spaces")
    return _step_block(chain, schedule, schedule.reduce(u), schedule.reduce(u + 1))


def restricted_step(chain: AbsorbedChain, schedule: BoundarySchedule, s: int, k: int) -> SubKernel:
    """
    Killed one-step matrix between clocks s+k and s+k+1.

    Returns:
        SubKernel with rows on E_{s+k} and columns on E_{s+k+1}
    """
    if s < 0 or k < 0:
        raise InvalidModelError("s and k must be non-negative")
    u = s + k
    full = step_matrix(chain, schedule, u)
    rows = schedule.survival_mask(u)
    cols = schedule.survival_mask(u + 1)
    return SubKernel(
        space=chain.space,
        rows=chain.space.subset(rows),
        cols=chain.space.subset(cols),
        matrix=full[np.ix_(rows, cols)],
    )


def _check_start(schedule: BoundarySchedule, weights: np.ndarray, s: int):
    if np.any(weights[~schedule.survival_mask(s)] > 0):
        raise StartingInBoundaryError(f"initial measure charges the absorbing set A_{s}")


def _check_measure(chain: AbsorbedChain, mu: Measure):
    if not mu.space.same_as(chain.space):
        raise ShapeError("measure and chain are defined on different state spaces")


def forward_vector(chain: AbsorbedChain, schedule: BoundarySchedule, mu: Measure, s: int, t: int) -> np.ndarray:
    """Sub-probability vector P_μ(X_t = ·, τ_{A∘θ_s} > t) without renormalization"""
    _check_measure(chain, mu)
    vector = np.array(mu.weights)
    _check_start(schedule, vector, s)
    for k in range(t):
        vector = vector @ step_matrix(chain, schedule, s + k)
    return vector


def backward_vector(chain: AbsorbedChain, schedule: BoundarySchedule, s: int, t: int) -> np.ndarray:
    """Vector y -> P_y(τ_{A∘θ_s} > t), zero outside E_s"""
    vector = schedule.survival_mask(s + t).astype(float)
    for k in range(t - 1, -1, -1):
        vector = step_matrix(chain, schedule, s + k) @ vector
    return vector


def scaled_forward(
    chain: AbsorbedChain, schedule: BoundarySchedule, weights: np.ndarray, s: int, t: int
) -> Tuple[np.ndarray, float]:
    """
    Forward recursion renormalized at every step.

    Returns:
        (probability vector at time t, natural log of the surviving mass)
    """
    vector = np.array(weights, dtype=float)
    log_mass = 0.0
    for k in range(t):
        vector = vector @ step_matrix(chain, schedule, s + k)
        mass = vector.sum()
        if not mass > CONDITIONING_FLOOR:
            raise ConditioningOnNullError(
                f"surviving mass vanished between clocks {s + k} and {s + k + 1} (step mass {mass:.3e})"
            )
        vector /= mass
        log_mass += math.log(mass)
    return vector, log_mass


def scaled_backward(chain: AbsorbedChain, schedule: BoundarySchedule, s: int, t: int) -> Tuple[np.ndarray, float]:
    """
    Backward survival vector scaled to a maximum of 1.

    Returns:
        (scaled vector, natural log of the scale); the scale is -inf when every state dies
    """
    vector = schedule.survival_mask(s + t).astype(float)
    log_scale = 0.0
    for k in range(t - 1, -1, -1):
        vector = step_matrix(chain, schedule, s + k) @ vector
        top = vector.max()
        if top <= 0:
            return np.zeros_like(vector), -math.inf
        vector /= top
        log_scale += math.log(top)
    return vector, log_scale


def survival(
    chain: AbsorbedChain, schedule: BoundarySchedule, x: str, s: int, t: int, log_space: bool = False
) -> float:
    """
    Survival probability P_x(τ_{A∘θ_s} > t).

    Args:
        log_space: return the natural log of the probability, computed with a
            rescaled recursion that cannot underflow

    Returns:
        Probability in (0,1], or its logarithm when log_space is set
    """
    if t < 0:
        raise InvalidModelError("t must be non-negative")
    index = chain.space.index(x)
    if not schedule.survival_mask(s)[index]:
        raise StartingInBoundaryError(f"state {x!r} lies in the absorbing set A_{s}")
    if log_space:
        vector, log_scale = scaled_backward(chain, schedule, s, t)
        if vector[index] <= 0:
            return -math.inf
        return math.log(vector[index]) + log_scale

    vector = np.zeros(chain.space.size)
    vector[index] = 1.0
    for k in range(t):
        vector = vector @ step_matrix(chain, schedule, s + k)
    probability = float(vector.sum())
    if probability < SURVIVAL_FLOOR:
        raise HorizonTooDeepError(
            f"P_{x}(τ > {t}) from clock {s} is {probability:.3e}, below the floor {SURVIVAL_FLOOR:g}"
        )
    return probability


def conditioned_law(chain: AbsorbedChain, schedule: BoundarySchedule, mu: Measure, s: int, t: int) -> Measure:
    """Conditioned semigroup φ_{s,s+t}(μ) = P_μ(X_t ∈ · | τ_{A∘θ_s} > t)"""
    _check_measure(chain, mu)
    _check_start(schedule, mu.weights, s)
    if t < 0:
        raise InvalidModelError("t must be non-negative")
    if t == 0:
        return mu
    vector, _ = scaled_forward(chain, schedule, mu.weights, s, t)
    vector /= vector.sum()
    return Measure(chain.space, vector, support=frozenset(schedule.survival_labels(s + t)))


def conditioned_bridge_marginal(
    chain: AbsorbedChain, schedule: BoundarySchedule, mu: Measure, s: int, k: int, t: int
) -> Measure:
    """Intermediate marginal P_μ(X_k ∈ · | τ_{A∘θ_s} > t) for 0 <= k <= t"""
    if not 0 <= k <= t:
        raise InvalidModelError(f"bridge marginal needs 0 <= k <= t, got k={k}, t={t}")
    if k == t:
        return conditioned_law(chain, schedule, mu, s, t)
    _check_measure(chain, mu)
    _check_start(schedule, mu.weights, s)
    forward, _ = scaled_forward(chain, schedule, mu.weights, s, k)
    backward, _ = scaled_backward(chain, schedule, s + k, t - k)
    weights = forward * backward
    total = weights.sum()
    if not total > 0:
        raise ConditioningOnNullError(f"no path from μ survives from clock {s} to clock {s + t}")
    return Measure(chain.space, weights / total, support=frozenset(schedule.survival_labels(s + k)))


def tv_distance(first: np.ndarray, second: np.ndarray) -> float:
    """Half the l1 distance between two weight vectors, clipped to [0, 1]"""
    if first.shape != second.shape:
        raise ShapeError(f"weight vectors have shapes {first.shape} and {second.shape}")
    return min(max(0.5 * float(np.abs(first - second).sum()), 0.0), 1.0)


@dataclass(frozen=True)
class SurvivalProfile:
    """
    Survival table for every start state and t = 0..horizon.

    Row t of `scaled` is x -> P_x(τ_{A∘θ_s} > t) divided by its maximum over x;
    `log_scale[t]` is the log of that maximum.
    """

    s: int
    scaled: np.ndarray
    log_scale: np.ndarray

    @property
    def horizon(self) -> int:
        return self.scaled.shape[0] - 1

    def ratio_to_max(self, weights: np.ndarray) -> np.ndarray:
        """t -> P_w(τ > t) / max_x P_x(τ > t) for a (possibly unnormalized) weight vector"""
        return self.scaled @ weights

    def log_survival(self, index: int, t: int) -> float:
        value = self.scaled[t, index]
        return math.log(value) + self.log_scale[t] if value > 0 else -math.inf

    def log_max(self, t: int) -> float:
        return float(self.log_scale[t])


def survival_profile(chain: AbsorbedChain, schedule: BoundarySchedule, s: int, horizon: int) -> SurvivalProfile:
    """All survival probabilities P_x(τ_{A∘θ_s} > t), t <= horizon, in scaled form"""
    if horizon < 0:
        raise InvalidModelError("horizon must be non-negative")
    n = chain.space.size
    mask = schedule.survival_mask(s)
    product = np.diag(mask.astype(float))
    scaled = np.zeros((horizon + 1, n))
    log_scale = np.zeros(horizon + 1)
    scaled[0] = mask
    running = 0.0
    for t in range(1, horizon + 1):
        product = product @ step_matrix(chain, schedule, s + t - 1)
        rows = product.sum(axis=1)
        top = rows.max()
        if not top > 0:
            raise HorizonTooDeepError(f"every state from clock {s} is absorbed before time {t}")
        product /= top
        running += math.log(top)
        scaled[t] = rows / top
        log_scale[t] = running
    scaled.flags.writeable = False
    log_scale.flags.writeable = False
    return SurvivalProfile(s=s, scaled=scaled, log_scale=log_scale)


def conditioned_rows(chain: AbsorbedChain, schedule: BoundarySchedule, s: int, t: int) -> np.ndarray:
    """
    Matrix whose row x is φ_{s,s+t}(δ_x) for x in E_s (zero rows elsewhere).
    """
    mask = schedule.survival_mask(s)
    product = np.diag(mask.astype(float))
    for k in range(t):
        product = product @ step_matrix(chain, schedule, s + k)
        tops = product.max(axis=1)
        alive = tops > 0
        product[alive] /= tops[alive][:, None]
    totals = product.sum(axis=1)
    dead = mask & ~(totals > 0)
    if dead.any():
        labels = chain.space.subset(dead)
        raise ConditioningOnNullError(f"states {list(labels)} cannot survive from clock {s} for {t} steps")
    rows = np.zeros_like(product)
    rows[mask] = product[mask] / totals[mask][:, None]
    return rows


# ---------------------------------------------------------------------------
# JSON documents

def chain_to_document(chain: AbsorbedChain, schedule: BoundarySchedule) -> ChainDocument:
    space = chain.space

    def ordered(labels):
        return [label for label in space.labels if label in labels]

    schedule_doc = ScheduleDocument(
        kind=schedule.kind.value,
        period=schedule.period if schedule.kind == ScheduleKind.PERIODIC else None,
        sets={str(t): ordered(labels) for t, labels in schedule.sets.items()},
        limit=ordered(schedule.limit) if schedule.kind == ScheduleKind.CONVERGING else None,
        stabilization_time=schedule.stabilization_time if schedule.kind == ScheduleKind.CONVERGING else None,
    )
    return ChainDocument(states=list(space.labels), kernel=chain.matrix.tolist(), schedule=schedule_doc)


def chain_from_document(document: ChainDocument) -> Tuple[AbsorbedChain, BoundarySchedule]:
    chain = AbsorbedChain(StateSpace(tuple(document.states)), Kernel(np.asarray(document.kernel, dtype=float)))
    doc = document.schedule
    try:
        sets = {int(t): frozenset(labels) for t, labels in doc.sets.items()}
    except ValueError:
        raise InvalidModelError(f"schedule set keys must be integers, got {list(doc.sets)}") from None
    schedule = BoundarySchedule(
        chain.space,
        ScheduleKind(doc.kind),
        sets,
        period=doc.period,
        limit=frozenset(doc.limit) if doc.limit is not None else None,
        stabilization_time=doc.stabilization_time,
    )
    return chain, schedule


def dumps_chain(chain: AbsorbedChain, schedule: BoundarySchedule) -> str:
    payload = chain_to_document(chain, schedule).model_dump(exclude_none=True)
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def loads_chain(text: str) -> Tuple[AbsorbedChain, BoundarySchedule]:
    return chain_from_document(ChainDocument.model_validate_json(text))


def load_chain(path: Union[str, Path]) -> Tuple[AbsorbedChain, BoundarySchedule]:
    logger.debug(f"Loading chain document from {path}")
    return loads_chain(Path(path).read_text(encoding="utf-8"))
