"""
Minorization certificates for absorbed chains with moving boundaries.

A certificate (t0, c1, c2, ν) states that for every clock s and start x in E_s

    P_x(X_{t0} ∈ · | τ_{A∘θ_s} > t0) >= c1 ν_{s+t0}
    P_{ν_s}(τ_{A∘θ_s} > t) >= c2 P_x(τ_{A∘θ_s} > t)   for every t >= 0

The infimum over t is truncated at a finite horizon and only trusted once the
running minimum has stabilized.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from src.chain_core import conditioned_rows, survival_profile
from src.exceptions import (
    CertificateRequiredError,
    ConditioningOnNullError,
    HorizonTooDeepError,
    InvalidModelError,
    StartingInBoundaryError,
    WindowError,
)
from src.models import AbsorbedChain, BoundarySchedule, Measure, ScheduleKind, StateSpace
from src.schemas import CertificateDocument

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 200
HARNACK_STABILITY = 1e-6
MIN_C2 = 1e-12
TIE_TOLERANCE = 1e-12


class Minorization(NamedTuple):
    c1: float
    nu: Optional[Measure]


class HarnackEstimate(NamedTuple):
    value: float
    stabilization: float


@dataclass(frozen=True)
class CVCertificate:
    """Certified constants plus the ν-family keyed by s (ν_{s+t0} lives on E_{s+t0})"""

    space: StateSpace
    kind: ScheduleKind
    t0: int
    c1: float
    c2: float
    horizon_used: int
    valid: bool
    stabilization: float
    nu: Dict[int, Measure] = field(default_factory=dict)
    initial_nu: Dict[int, Measure] = field(default_factory=dict)
    period: Optional[int] = None
    stabilization_time: int = 0

    @property
    def product(self) -> float:
        return self.c1 * self.c2

    def nu_at(self, u: int) -> Measure:
        """The measure ν_u used at clock u"""
        if not self.nu:
            raise CertificateRequiredError("certificate carries no ν-family")
        if self.kind == ScheduleKind.CONSTANT:
            return self.nu[0]
        if self.kind == ScheduleKind.PERIODIC:
            return self.nu[(u - self.t0) % self.period]
        if u < self.t0:
            return self.initial_nu[u]
        return self.nu[min(u - self.t0, self.stabilization_time)]

    def require_valid(self):
        if not self.valid:
            raise CertificateRequiredError(
                f"certificate is not valid (t0={self.t0}, c1={self.c1:.4g}, c2={self.c2:.4g})"
            )

    def to_document(self) -> CertificateDocument:
        return CertificateDocument(
            states=list(self.space.labels),
            t0=self.t0,
            c1=self.c1,
            c2=self.c2,
            horizon_used=self.horizon_used,
            nu={str(s): measure.weights.tolist() for s, measure in sorted(self.nu.items())},
            initial_nu={str(u): measure.weights.tolist() for u, measure in sorted(self.initial_nu.items())},
            stabilization=self.stabilization,
            valid=self.valid,
        )


def minorize(chain: AbsorbedChain, schedule: BoundarySchedule, s: int, t0: int) -> Minorization:
    """
    Largest Doeblin constant at clock s over t0 steps.

    The witness is the entrywise minimum over x in E_s of the conditioned rows;
    c1 is its mass and ν the minimum renormalized (None when c1 = 0).
    """
    if t0 < 1:
        raise InvalidModelError("t0 must be at least 1")
    rows = conditioned_rows(chain, schedule, s, t0)
    minimum = rows[schedule.survival_mask(s)].min(axis=0)
    mass = float(minimum.sum())
    if mass <= 0:
        return Minorization(0.0, None)
    nu = Measure(chain.space, minimum / mass, support=frozenset(schedule.survival_labels(s + t0)))
    return Minorization(min(mass, 1.0), nu)


def pair_minimum_measure(
    chain: AbsorbedChain, schedule: BoundarySchedule, s: int, t0: int, *states: str
) -> Measure:
    """
    Entrywise minimum of φ_{s,s+t0}(δ_x) over the given start states.

    With no states given the minimum runs over all of E_s.
    """
    rows = conditioned_rows(chain, schedule, s, t0)
    mask = schedule.survival_mask(s)
    if states:
        indices = [chain.space.index(x) for x in states]
        outside = [x for x, i in zip(states, indices) if not mask[i]]
        if outside:
            raise StartingInBoundaryError(f"states {outside} lie in the absorbing set A_{s}")
    else:
        indices = list(np.flatnonzero(mask))
    return Measure(
        chain.space,
        rows[indices].min(axis=0),
        normalized=False,
        support=frozenset(schedule.survival_labels(s + t0)),
    )


def _running_min(ratios: np.ndarray) -> HarnackEstimate:
    running = np.minimum.accumulate(np.minimum(ratios, 1.0))
    value = float(running[-1])
    horizon = len(ratios) - 1
    if horizon == 0:
        return HarnackEstimate(value, 0.0)
    lag = math.ceil(horizon / 4)
    earlier = float(running[horizon - lag])
    if value <= 0:
        return HarnackEstimate(0.0, math.inf if earlier > 0 else 0.0)
    return HarnackEstimate(value, (earlier - value) / value)


def harnack_constant(
    chain: AbsorbedChain, schedule: BoundarySchedule, nu: Measure, s: int, horizon: int
) -> HarnackEstimate:
    """
    min over t <= horizon of P_ν(τ_{A∘θ_s} > t) / max_x P_x(τ_{A∘θ_s} > t).

    Returns:
        HarnackEstimate with the value and the relative change of the running
        minimum over the last ceil(horizon/4) steps
    """
    if np.any(nu.weights[~schedule.survival_mask(s)] > 0):
        raise StartingInBoundaryError(f"ν charges the absorbing set A_{s}")
    profile = survival_profile(chain, schedule, s, horizon)
    return _running_min(profile.ratio_to_max(nu.weights))


def _harnack_clocks(schedule: BoundarySchedule, t0: int) -> List[int]:
    if schedule.kind == ScheduleKind.CONSTANT:
        return [0]
    if schedule.kind == ScheduleKind.PERIODIC:
        return list(range(schedule.period))
    return list(range(t0 + schedule.stabilization_time + 1))


def _invalid(chain: AbsorbedChain, schedule: BoundarySchedule, t0: int, horizon: int) -> CVCertificate:
    return CVCertificate(
        space=chain.space,
        kind=schedule.kind,
        t0=t0,
        c1=0.0,
        c2=0.0,
        horizon_used=horizon,
        valid=False,
        stabilization=math.inf,
        period=schedule.period,
        stabilization_time=schedule.stabilization_time or 0,
    )


def evaluate_t0(chain: AbsorbedChain, schedule: BoundarySchedule, t0: int, horizon: int) -> CVCertificate:
    """Certificate candidate for a fixed t0"""
    c1 = 1.0
    nus: Dict[int, Measure] = {}
    for s in schedule.representative_times():
        try:
            minor = minorize(chain, schedule, s, t0)
        except ConditioningOnNullError as e:
            logger.debug(f"t0={t0}: minorization fails at clock {s}: {e}")
            return _invalid(chain, schedule, t0, horizon)
        if minor.nu is None:
            logger.debug(f"t0={t0}: conditioned rows from clock {s} have disjoint supports")
            return _invalid(chain, schedule, t0, horizon)
        c1 = min(c1, minor.c1)
        nus[s] = minor.nu

    clocks = _harnack_clocks(schedule, t0)
    try:
        profiles = {u: survival_profile(chain, schedule, u, horizon) for u in clocks}
    except HorizonTooDeepError as e:
        logger.debug(f"t0={t0}: {e}")
        return _invalid(chain, schedule, t0, horizon)

    initial: Dict[int, Measure] = {}
    if schedule.kind == ScheduleKind.CONVERGING:
        for u in range(t0):
            # Dirac mass at the state surviving best at the horizon
            best = int(np.argmax(profiles[u].scaled[-1]))
            initial[u] = Measure.dirac(chain.space, chain.space.labels[best])

    draft = CVCertificate(
        space=chain.space,
        kind=schedule.kind,
        t0=t0,
        c1=c1,
        c2=1.0,
        horizon_used=horizon,
        valid=False,
        stabilization=0.0,
        nu=nus,
        initial_nu=initial,
        period=schedule.period,
        stabilization_time=schedule.stabilization_time or 0,
    )
    c2 = 1.0
    stabilization = 0.0
    for u in clocks:
        estimate = _running_min(profiles[u].ratio_to_max(draft.nu_at(u).weights))
        c2 = min(c2, estimate.value)
        stabilization = max(stabilization, estimate.stabilization)

    valid = c1 > 0 and c2 >= MIN_C2 and stabilization < HARNACK_STABILITY
    if c1 > 0 and c2 >= MIN_C2 and not valid:
        logger.warning(
            f"t0={t0}: Harnack minimum not stabilized at horizon {horizon} "
            f"(relative change {stabilization:.3e})"
        )
    return CVCertificate(
        space=chain.space,
        kind=schedule.kind,
        t0=t0,
        c1=c1,
        c2=c2,
        horizon_used=horizon,
        valid=valid,
        stabilization=stabilization,
        nu=nus,
        initial_nu=initial,
        period=schedule.period,
        stabilization_time=schedule.stabilization_time or 0,
    )


def candidate_t0s(schedule: BoundarySchedule, t0_max: int) -> List[int]:
    """t0 values to search; periodic schedules only allow multiples of the period"""
    if t0_max < 1:
        raise InvalidModelError("t0_max must be at least 1")
    if schedule.kind != ScheduleKind.PERIODIC:
        return list(range(1, t0_max + 1))
    candidates = list(range(schedule.period, t0_max + 1, schedule.period))
    if not candidates:
        logger.warning(f"t0_max={t0_max} is below the period {schedule.period}; searching t0={schedule.period}")
        candidates = [schedule.period]
    return candidates


def _score(cert: CVCertificate, criterion: str) -> float:
    if criterion == "product":
        return cert.product
    if criterion == "rate":
        return -((1.0 - cert.product) ** (1.0 / cert.t0))
    raise InvalidModelError(f"unknown certificate criterion {criterion!r}")


def _select(candidates: List[CVCertificate], criterion: str) -> CVCertificate:
    pool = [cert for cert in candidates if cert.valid] or candidates
    best = max(_score(cert, criterion) for cert in pool)
    return next(cert for cert in pool if _score(cert, criterion) >= best - TIE_TOLERANCE)


def certify(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    t0_max: int,
    horizon: int = DEFAULT_HORIZON,
    criterion: str = "product",
    threads: int = 1,
) -> CVCertificate:
    """
    Search t0 in [1, t0_max] for the certificate with maximal c1*c2.

    Ties are broken by the smallest t0. With criterion="rate" the per-step
    contraction (1 - c1*c2)^(1/t0) is minimized instead.
    """
    if horizon < 1:
        raise InvalidModelError("horizon must be at least 1")
    candidates = candidate_t0s(schedule, t0_max)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(lambda t0: evaluate_t0(chain, schedule, t0, horizon), candidates))
    cert = _select(results, criterion)
    if cert.valid:
        logger.info(f"Certificate found: t0={cert.t0}, c1={cert.c1:.6g}, c2={cert.c2:.6g}")
    else:
        logger.info(f"No valid certificate for t0 <= {t0_max} (best c1={cert.c1:.4g}, c2={cert.c2:.4g})")
    return cert


def certify_limit(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    t0_max: int,
    horizon: int = DEFAULT_HORIZON,
    criterion: str = "product",
    threads: int = 1,
) -> CVCertificate:
    """Certificate of the fixed-boundary conditions for the limit set A_inf"""
    return certify(chain, schedule.limit_schedule(), t0_max, horizon, criterion, threads)


@dataclass(frozen=True)
class DCoefficients:
    """Table s -> (d_s, d'_s) with a schedule-aware lookup"""

    t0: int
    table: Dict[int, Tuple[float, float]]
    horizon_used: int
    kind: ScheduleKind
    period: Optional[int] = None
    stabilization_time: int = 0

    def at(self, s: int) -> Tuple[float, float]:
        if s in self.table:
            return self.table[s]
        if s < self.t0:
            raise WindowError(f"d_s is defined for s >= t0={self.t0}, got s={s}")
        if self.kind == ScheduleKind.CONSTANT:
            key = self.t0
        elif self.kind == ScheduleKind.PERIODIC:
            key = self.t0 + (s - self.t0) % self.period
        else:
            key = min(s, self.t0 + self.stabilization_time)
        if key not in self.table:
            raise WindowError(f"no d-coefficients tabulated for s={s}")
        return self.table[key]


def d_coefficients(
    chain: AbsorbedChain, schedule: BoundarySchedule, s: int, t0: int, horizon: int
) -> Tuple[float, float]:
    """
    Coupling coefficients (d_s, d'_s).

    d_s is the infimum over pairs (x1, x2) in E_{s-t0} and t <= horizon of
    P_v(τ_{A∘θ_s} > t) / max_x P_x(τ_{A∘θ_s} > t), v the pair minimum measure;
    d'_s uses the minimum over all starting states instead.
    """
    if s < t0:
        raise WindowError(f"d_s is defined for s >= t0={t0}, got s={s}")
    rows = conditioned_rows(chain, schedule, s - t0, t0)
    starts = rows[schedule.survival_mask(s - t0)]
    scaled = survival_profile(chain, schedule, s, horizon).scaled

    d_pair = 1.0
    for row in starts:
        minima = np.minimum(row[None, :], starts)
        d_pair = min(d_pair, float((minima @ scaled.T).min()))
    d_all = float((starts.min(axis=0) @ scaled.T).min())
    return min(max(d_pair, 0.0), 1.0), min(max(d_all, 0.0), 1.0)


def d_table(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    t0: int,
    s_values: Optional[List[int]] = None,
    horizon: int = DEFAULT_HORIZON,
    threads: int = 1,
) -> DCoefficients:
    """d-coefficients over s_values (default: one representative per distinct clock)"""
    if s_values is None:
        s_values = [t0 + u for u in schedule.representative_times()]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        values = list(executor.map(lambda s: d_coefficients(chain, schedule, s, t0, horizon), s_values))
    return DCoefficients(
        t0=t0,
        table=dict(zip(s_values, values)),
        horizon_used=horizon,
        kind=schedule.kind,
        period=schedule.period,
        stabilization_time=schedule.stabilization_time or 0,
    )
