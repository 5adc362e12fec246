"""
Domain types for absorbed Markov chains with moving absorbing boundaries.

All values are immutable after construction: numpy arrays are copied and
marked read-only, so the types can be shared freely between worker threads.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import InvalidModelError, ScheduleDegenerateError, ScheduleKindError, ShapeError

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-12
NORMALIZATION_TOLERANCE = 1e-12


def _frozen_array(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Ordered, finite set of state labels with a stable label <-> index map"""

    labels: Tuple[str, ...]
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        if not labels:
            raise InvalidModelError("state space must contain at least one state")
        if len(set(labels)) != len(labels):
            raise InvalidModelError(f"state labels must be distinct: {list(labels)}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {label: i for i, label in enumerate(labels)})

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise InvalidModelError(f"unknown state {label!r}") from None

    def indices(self, labels: Iterable[str]) -> List[int]:
        return sorted(self.index(label) for label in labels)

    def mask(self, labels: Iterable[str]) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.indices(labels)] = True
        return mask

    def subset(self, mask: np.ndarray) -> Tuple[str, ...]:
        """Labels selected by a boolean mask, in state order"""
        return tuple(label for label, keep in zip(self.labels, mask) if keep)

    def same_as(self, other: "StateSpace") -> bool:
        return self is other or self.labels == other.labels


@dataclass(frozen=True, eq=False)
class Kernel:
    """Row-stochastic one-step transition matrix"""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = _frozen_array(self.matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InvalidModelError(f"kernel must be a square matrix, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
            raise InvalidModelError("kernel entries must be finite and non-negative")
        row_sums = matrix.sum(axis=1)
        worst = float(np.max(np.abs(row_sums - 1.0)))
        if worst > ROW_SUM_TOLERANCE:
            raise InvalidModelError(f"kernel rows must sum to 1 (worst deviation {worst:.3e})")
        object.__setattr__(self, "matrix", matrix)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class AbsorbedChain:
    """State space plus a time-homogeneous kernel; killing comes from a BoundarySchedule"""

    space: StateSpace
    kernel: Kernel

    def __post_init__(self):
        if self.kernel.size != self.space.size:
            raise InvalidModelError(
                f"kernel has {self.kernel.size} rows but the state space has {self.space.size} states"
            )

    @classmethod
    def from_rows(cls, labels: Sequence[str], rows: Sequence[Sequence[float]]) -> "AbsorbedChain":
        return cls(StateSpace(tuple(labels)), Kernel(np.asarray(rows, dtype=float)))

    @property
    def matrix(self) -> np.ndarray:
        return self.kernel.matrix


@dataclass(frozen=True, eq=False)
class Measure:
    """Non-negative weights on a StateSpace, optionally a probability measure"""

    space: StateSpace
    weights: np.ndarray
    normalized: bool = True
    support: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        weights = _frozen_array(self.weights)
        if weights.shape != (self.space.size,):
            raise ShapeError(f"measure has shape {weights.shape}, expected ({self.space.size},)")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InvalidModelError("measure weights must be finite and non-negative")
        if self.normalized and abs(float(weights.sum()) - 1.0) > NORMALIZATION_TOLERANCE:
            raise InvalidModelError(f"normalized measure sums to {weights.sum()!r}")
        if self.support is not None:
            support = frozenset(self.support)
            outside = ~self.space.mask(support)
            if np.any(weights[outside] > 0):
                raise InvalidModelError("measure charges states outside its declared support")
            object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def dirac(cls, space: StateSpace, label: str) -> "Measure":
        weights = np.zeros(space.size)
        weights[space.index(label)] = 1.0
        return cls(space, weights)

    @classmethod
    def uniform(cls, space: StateSpace, labels: Iterable[str]) -> "Measure":
        mask = space.mask(labels)
        if not mask.any():
            raise InvalidModelError("uniform measure needs at least one state")
        return cls(space, mask / mask.sum())

    @classmethod
    def from_mapping(cls, space: StateSpace, weights: Mapping[str, float], normalized: bool = True) -> "Measure":
        array = np.zeros(space.size)
        for label, weight in weights.items():
            array[space.index(label)] = weight
        return cls(space, array, normalized=normalized)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def __getitem__(self, label: str) -> float:
        return float(self.weights[self.space.index(label)])

    def normalize(self) -> "Measure":
        mass = self.mass
        if mass <= 0:
            raise InvalidModelError("cannot normalize a zero measure")
        return Measure(self.space, self.weights / mass, normalized=True, support=self.support)

    def as_dict(self) -> Dict[str, float]:
        return {label: float(w) for label, w in zip(self.space.labels, self.weights)}


@dataclass(frozen=True, eq=False)
class SubKernel:
    """Sub-stochastic block of a kernel, rows on one survival set and columns on the next"""

    space: StateSpace
    rows: Tuple[str, ...]
    cols: Tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen_array(self.matrix))

    def embedded(self) -> np.ndarray:
        """The block placed back into a full n x n matrix (zeros elsewhere)"""
        full = np.zeros((self.space.size, self.space.size))
        full[np.ix_(self.space.indices(self.rows), self.space.indices(self.cols))] = self.matrix
        return full


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    PERIODIC = "periodic"
    CONVERGING = "converging"


@dataclass(frozen=True, eq=False)
class BoundarySchedule:
    """
    Moving absorbing set t -> A_t.

    `sets` maps time indices to absorbing sets; the set in force at time t is
    the one with the greatest key not above t (after reduction modulo the
    period, or clamping at the stabilization time for converging schedules).
    """

    space: StateSpace
    kind: ScheduleKind
    sets: Mapping[int, FrozenSet[str]]
    period: Optional[int] = None
    limit: Optional[FrozenSet[str]] = None
    stabilization_time: Optional[int] = None
    _masks: Dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        kind = ScheduleKind(self.kind)
        sets = {int(t): frozenset(labels) for t, labels in sorted(self.sets.items())}
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "sets", sets)
        if self.limit is not None:
            object.__setattr__(self, "limit", frozenset(self.limit))

        if 0 not in sets:
            raise InvalidModelError("schedule must define the absorbing set at time 0")
        if any(t < 0 for t in sets):
            raise InvalidModelError("schedule times must be non-negative")
        for t, labels in sets.items():
            self._validate_set(labels, f"A_{t}")

        if kind == ScheduleKind.CONSTANT:
            if set(sets) != {0}:
                raise InvalidModelError("constant schedule takes a single set at time 0")
            object.__setattr__(self, "stabilization_time", 0)
            object.__setattr__(self, "limit", sets[0])
        elif kind == ScheduleKind.PERIODIC:
            if self.period is None or self.period < 1:
                raise InvalidModelError("periodic schedule requires a positive integer period")
            if max(sets) >= self.period:
                raise InvalidModelError(f"periodic schedule sets must be keyed below the period {self.period}")
        else:
            if self.limit is None or self.stabilization_time is None or self.stabilization_time < 0:
                raise InvalidModelError("converging schedule requires `limit` and a non-negative `stabilization_time`")
            if max(sets) > self.stabilization_time:
                raise InvalidModelError("converging schedule sets must be keyed at or before the stabilization time")
            self._validate_set(self.limit, "A_inf")

        masks = {u: ~self.space.mask(self._set_at(u)) for u in self.representative_times()}
        object.__setattr__(self, "_masks", masks)

        if kind == ScheduleKind.CONVERGING:
            times = self.representative_times()
            for earlier, later in zip(times, times[1:]):
                if not self._set_at(later) <= self._set_at(earlier):
                    raise InvalidModelError(
                        f"converging schedule must be non-increasing: A_{later} is not contained in A_{earlier}"
                    )

    def _validate_set(self, labels: FrozenSet[str], name: str):
        unknown = [label for label in labels if label not in self.space.labels]
        if unknown:
            raise InvalidModelError(f"{name} contains unknown states {sorted(unknown)}")
        if not labels:
            raise InvalidModelError(f"{name} is empty; the absorbing set must be nonempty")
        if len(labels) == self.space.size:
            raise ScheduleDegenerateError(f"{name} covers the whole state space, so E is empty")

    @classmethod
    def constant(cls, space: StateSpace, absorbing: Iterable[str]) -> "BoundarySchedule":
        return cls(space, ScheduleKind.CONSTANT, {0: frozenset(absorbing)})

    @classmethod
    def periodic(cls, space: StateSpace, sets: Sequence[Iterable[str]]) -> "BoundarySchedule":
        """Periodic schedule from the list A_0, ..., A_{γ-1}"""
        return cls(space, ScheduleKind.PERIODIC, {u: frozenset(s) for u, s in enumerate(sets)}, period=len(sets))

    @classmethod
    def converging(
        cls, space: StateSpace, sets: Mapping[int, Iterable[str]], limit: Iterable[str], stabilization_time: int
    ) -> "BoundarySchedule":
        return cls(
            space,
            ScheduleKind.CONVERGING,
            {t: frozenset(s) for t, s in sets.items()},
            limit=frozenset(limit),
            stabilization_time=stabilization_time,
        )

    def reduce(self, t: int) -> int:
        """Map a time index to its representative clock"""
        if t < 0:
            raise InvalidModelError(f"time index must be non-negative, got {t}")
        if self.kind == ScheduleKind.CONSTANT:
            return 0
        if self.kind == ScheduleKind.PERIODIC:
            return t % self.period
        return min(t, self.stabilization_time)

    def _set_at(self, u: int) -> FrozenSet[str]:
        if self.kind == ScheduleKind.CONVERGING and u >= self.stabilization_time:
            return self.limit
        return self.sets[max(key for key in self.sets if key <= u)]

    def representative_times(self) -> List[int]:
        """The distinct clocks this schedule exhibits"""
        if self.kind == ScheduleKind.CONSTANT:
            return [0]
        if self.kind == ScheduleKind.PERIODIC:
            return list(range(self.period))
        return list(range(self.stabilization_time + 1))

    def absorbing(self, t: int) -> FrozenSet[str]:
        return self._set_at(self.reduce(t))

    def survival_mask(self, t: int) -> np.ndarray:
        """Boolean mask of E_t; the returned array is shared, do not modify it"""
        return self._masks[self.reduce(t)]

    def survival_labels(self, t: int) -> Tuple[str, ...]:
        return self.space.subset(self.survival_mask(t))

    @property
    def effective_period(self) -> int:
        """Period of the schedule, 1 for constant schedules"""
        if self.kind == ScheduleKind.CONSTANT:
            return 1
        if self.kind == ScheduleKind.PERIODIC:
            return self.period
        raise ScheduleKindError("converging schedules have no period")

    def shift(self, s: int) -> "BoundarySchedule":
        """The reindexed schedule t -> A_{t+s}"""
        if s == 0 or self.kind == ScheduleKind.CONSTANT:
            return self
        if self.kind == ScheduleKind.PERIODIC:
            return BoundarySchedule.periodic(self.space, [self.absorbing(u + s) for u in range(self.period)])
        remaining = max(0, self.stabilization_time - s)
        return BoundarySchedule.converging(
            self.space,
            {u: self.absorbing(u + s) for u in range(remaining + 1)},
            self.limit,
            remaining,
        )

    def limit_schedule(self) -> "BoundarySchedule":
        """The fixed boundary A_inf"""
        if self.kind == ScheduleKind.CONSTANT:
            return self
        if self.kind == ScheduleKind.CONVERGING:
            return BoundarySchedule.constant(self.space, self.limit)
        raise ScheduleKindError("periodic schedules have no limit set")

    def always_surviving(self) -> Tuple[str, ...]:
        """States that belong to E_t for every t"""
        mask = np.logical_and.reduce([self._masks[u] for u in self.representative_times()])
        return self.space.subset(mask)
