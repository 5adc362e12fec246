"""
Numerical checks of the exponential convergence bounds on exactly computed laws.

Every check produces BoundCheckRecords comparing an exact total variation
distance (lhs) with the corresponding explicit bound (rhs). The Q-process
bound controls whole trajectories; checking time-t marginals only compares a
smaller distance with the same bound.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.chain_core import (
    conditioned_bridge_marginal,
    conditioned_law,
    scaled_backward,
    survival,
    survival_profile,
    tv_distance,
)
from src.cv_certify import CVCertificate, DCoefficients, d_table
from src.exceptions import (
    CertificateRequiredError,
    ScheduleKindError,
    ShapeError,
    StartingInBoundaryError,
)
from src.generators import random_certified_chain
from src.limits import quasi_ergodic
from src.models import AbsorbedChain, BoundarySchedule, Measure, ScheduleKind
from src.qprocess import QProcess, build_qprocess, mixing_bound, q_marginal

logger = logging.getLogger(__name__)

MARGIN_TOLERANCE = 1e-10
RATE_SLACK = 1.05
RECORD_HEADER = ["seed", "s", "t", "T", "x", "lhs", "rhs", "margin", "pass"]


@dataclass
class BoundCheckRecord:
    s: int
    t: int
    T: int
    x: str
    lhs: float
    rhs: float
    constant_used: float
    seed: Optional[int] = None

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.margin >= -MARGIN_TOLERANCE

    def as_row(self) -> list:
        return [self.seed, self.s, self.t, self.T, self.x, self.lhs, self.rhs, self.margin, self.passed]


def _log_record(record: BoundCheckRecord):
    if not record.passed:
        logger.error(
            f"Bound violated at s={record.s}, t={record.t}, T={record.T}, x={record.x}: "
            f"lhs={record.lhs:.6e} > rhs={record.rhs:.6e}"
        )
    elif record.margin < 0:
        logger.warning(f"Float-noise margin {record.margin:.3e} at s={record.s}, t={record.t}, T={record.T}")


def tv(first: Measure, second: Measure) -> float:
    """Total variation distance sup_B |μ1(B) - μ2(B)|"""
    if not first.space.same_as(second.space):
        raise ShapeError("measures are defined on different state spaces")
    return tv_distance(first.weights, second.weights)


def _prefactor(
    cert: CVCertificate, chain: AbsorbedChain, schedule: BoundarySchedule, x: str, s: int, t: int
) -> float:
    """Prefactor of the exponential Q-process bound (everything but (1 - c1c2)^floor(T/t0))"""
    product = cert.product
    log_start = survival(chain, schedule, x, s, cert.t0, log_space=True)
    log_here = survival(chain, schedule, x, s, t, log_space=True)
    _, log_best = scaled_backward(chain, schedule, s + cert.t0, t)
    if log_here == -math.inf:
        return 0.0
    return math.exp(log_here - log_best - log_start - 3.0 * math.log(product))


def theorem1_bound(
    cert: CVCertificate, chain: AbsorbedChain, schedule: BoundarySchedule, x: str, s: int, t: int, T: int
) -> float:
    """
    Bound on the distance between the law conditioned on survival to t+T and the Q-process.

        1/((c1c2)^3 P_x(τ_{A∘θ_s} > t0))
        · P_x(τ_{A∘θ_s} > t) / max_{y ∈ E_{s+t0}} P_y(τ_{A∘θ_{s+t0}} > t)
        · (1 - c1c2)^floor(T/t0)
    """
    cert.require_valid()
    return _prefactor(cert, chain, schedule, x, s, t) * (1.0 - cert.product) ** (T // cert.t0)


def check_qprocess_convergence(
    cert: CVCertificate,
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    qp: QProcess,
    x: str,
    s: int,
    t: int,
    T_grid: Iterable[int],
    seed: Optional[int] = None,
) -> List[BoundCheckRecord]:
    """One record per T: tv(P_x(X_t ∈ · | τ_{A∘θ_s} > t+T), Q_{s,x}(X_{s+t} ∈ ·)) against the bound"""
    cert.require_valid()
    constant = _prefactor(cert, chain, schedule, x, s, t)
    target = q_marginal(qp, s, x, t)
    start = Measure.dirac(chain.space, x)
    records = []
    for T in T_grid:
        law = conditioned_bridge_marginal(chain, schedule, start, s, t, t + T)
        record = BoundCheckRecord(
            s=s,
            t=t,
            T=T,
            x=x,
            lhs=tv(law, target),
            rhs=constant * (1.0 - cert.product) ** (T // cert.t0),
            constant_used=constant,
            seed=seed,
        )
        _log_record(record)
        records.append(record)
    return records


def merging_check(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    dc: DCoefficients,
    s: int,
    t: int,
    pairs: Sequence[Tuple[Measure, Measure]],
    seed: Optional[int] = None,
) -> List[BoundCheckRecord]:
    """tv(φ_{s,t}(μ1), φ_{s,t}(μ2)) against 2 · prod (1 - d) for each pair"""
    rhs = mixing_bound(dc, None, s, t)
    records = []
    for i, (first, second) in enumerate(pairs):
        lhs = tv(conditioned_law(chain, schedule, first, s, t - s), conditioned_law(chain, schedule, second, s, t - s))
        record = BoundCheckRecord(s=s, t=t, T=0, x=f"pair{i}", lhs=lhs, rhs=rhs, constant_used=2.0, seed=seed)
        _log_record(record)
        records.append(record)
    return records


def cs_ratio(chain: AbsorbedChain, schedule: BoundarySchedule, cert: CVCertificate, x: str, horizon: int) -> float:
    """sup over t <= horizon of P_x(τ_A > t) / max_{y ∈ E_{t0}} P_y(τ_{A∘θ_{t0}} > t)"""
    cert.require_valid()
    index = chain.space.index(x)
    if not schedule.survival_mask(0)[index]:
        raise StartingInBoundaryError(f"state {x!r} lies in the absorbing set A_0")
    here = survival_profile(chain, schedule, 0, horizon)
    later = survival_profile(chain, schedule, cert.t0, horizon)
    return max(math.exp(here.log_survival(index, t) - later.log_max(t)) for t in range(horizon + 1))


def c_constant(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    cert: CVCertificate,
    dc: DCoefficients,
    s: int,
    pi: Measure,
) -> float:
    """
    Explicit constant C_{s,π} = (1/(c1c2)) sup_z P_z(τ_{A∘θ_s} > v-s) / (d'_v P_π(τ_{A∘θ_s} > v-s)), v = s + t0.

    Exposed for inspection; the bound checks use the self-contained prefactor.
    """
    cert.require_valid()
    if np.any(pi.weights[~schedule.survival_mask(s)] > 0):
        raise StartingInBoundaryError(f"π charges the absorbing set A_{s}")
    _, d_prime = dc.at(s + cert.t0)
    if not d_prime > 0:
        raise CertificateRequiredError(f"d'_{s + cert.t0} vanishes")
    ratio = float(survival_profile(chain, schedule, s, cert.t0).scaled[cert.t0] @ pi.weights)
    return 1.0 / (cert.product * d_prime * ratio)


def qed_averaging_bound(
    cert: CVCertificate, chain: AbsorbedChain, schedule: BoundarySchedule, x: str, n: int
) -> float:
    """
    Bound on tv(quasi-ergodic average, average of Q-marginals) after n steps.

        C_x / ((c1c2)^3 P_x(τ > t0)) · (1/(n+1)) Σ_{k=0}^{n} (1 - c1c2)^floor((n-k)/t0)

    with C_x the condition-(cs) ratio over t <= n.
    """
    product = cert.product
    c_x = cs_ratio(chain, schedule, cert, x, n)
    log_start = survival(chain, schedule, x, 0, cert.t0, log_space=True)
    prefactor = c_x / (product ** 3 * math.exp(log_start))
    average = sum((1.0 - product) ** ((n - k) // cert.t0) for k in range(n + 1)) / (n + 1)
    return prefactor * average


def check_qed_averaging(
    cert: CVCertificate,
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    qp: QProcess,
    x: str,
    n_grid: Iterable[int],
    seed: Optional[int] = None,
) -> List[BoundCheckRecord]:
    """Records for tv(quasi_ergodic(δ_x, n), (1/(n+1)) Σ_k Q_{0,x}(X_k ∈ ·)) against qed_averaging_bound"""
    start = Measure.dirac(chain.space, x)
    records = []
    for n in n_grid:
        average = np.zeros(chain.space.size)
        vector = np.array(start.weights)
        for k in range(n + 1):
            average += vector
            if k < n:
                vector = vector @ qp.kernels[k]
                vector /= vector.sum()
        predicted = Measure(chain.space, average / average.sum())
        bound = qed_averaging_bound(cert, chain, schedule, x, n)
        record = BoundCheckRecord(
            s=0,
            t=n,
            T=n,
            x=x,
            lhs=tv(quasi_ergodic(chain, schedule, start, n), predicted),
            rhs=bound,
            constant_used=bound,
            seed=seed,
        )
        _log_record(record)
        records.append(record)
    return records


@dataclass
class RateDecayReport:
    limit: float
    ratios: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(ratio <= self.limit for _, ratio in self.ratios)


def rate_decay_check(records: Sequence[BoundCheckRecord], cert: CVCertificate, floor: float = 1e-12) -> RateDecayReport:
    """
    Ratio test lhs(T + t0) / lhs(T) <= 1.05 (1 - c1c2) for T >= 2 t0.

    Pairs where either distance is below `floor` are skipped.
    """
    by_T = {record.T: record.lhs for record in records}
    report = RateDecayReport(limit=RATE_SLACK * (1.0 - cert.product))
    for T in sorted(by_T):
        later = T + cert.t0
        if T < 2 * cert.t0 or later not in by_T:
            continue
        if by_T[T] > floor and by_T[later] > floor:
            report.ratios.append((T, by_T[later] / by_T[T]))
    if not report.passed:
        logger.warning(f"Rate decay above {report.limit:.6g}: {report.ratios}")
    return report


def uniform_gap(
    chain: AbsorbedChain, schedule: BoundarySchedule, x: str, s_grid: Iterable[int], window: int
) -> Dict[int, float]:
    """
    For each s, sup over t, T <= window of
    tv(P_x(X_t ∈ · | τ_{A∘θ_s} > t+T), P_x(X_t ∈ · | τ_{A_inf} > t+T)).
    """
    if schedule.kind == ScheduleKind.PERIODIC:
        raise ScheduleKindError("uniform gap needs a converging (or constant) schedule")
    if not schedule.survival_mask(0)[chain.space.index(x)]:
        raise StartingInBoundaryError(f"state {x!r} lies in the absorbing set A_0")
    limit = schedule.limit_schedule()
    start = Measure.dirac(chain.space, x)
    reference = {
        (t, T): conditioned_bridge_marginal(chain, limit, start, 0, t, t + T)
        for t in range(window + 1)
        for T in range(window + 1)
    }
    gaps = {}
    for s in s_grid:
        gaps[s] = max(
            tv(conditioned_bridge_marginal(chain, schedule, start, s, t, t + T), law)
            for (t, T), law in reference.items()
        )
    return gaps


def gap_is_monotone(gaps: Dict[int, float], tol: float = MARGIN_TOLERANCE) -> bool:
    values = [gaps[s] for s in sorted(gaps)]
    return all(later <= earlier + tol for earlier, later in zip(values, values[1:]))


@dataclass
class SuiteOutcome:
    seed: int
    product: float
    records: List[BoundCheckRecord]
    merging: List[BoundCheckRecord]


@dataclass
class SuiteResult:
    outcomes: List[SuiteOutcome]

    @property
    def records(self) -> List[BoundCheckRecord]:
        return [record for outcome in self.outcomes for record in outcome.records]

    @property
    def merging(self) -> List[BoundCheckRecord]:
        return [record for outcome in self.outcomes for record in outcome.merging]

    @property
    def failures(self) -> int:
        return sum(not record.passed for record in self.records + self.merging)


def _suite_case(
    base_seed: int,
    seed: int,
    n_live: int,
    kind: str,
    s_max: int,
    t_max: int,
    T_max: int,
    eta_margin: int,
    min_product: float,
) -> SuiteOutcome:
    rng = np.random.default_rng([base_seed, seed])
    chain, schedule, cert = random_certified_chain(rng, n_live, kind, min_product=min_product)
    qp = build_qprocess(chain, schedule, cert, s_max + t_max + T_max + eta_margin)
    dc = d_table(chain, schedule, cert.t0, horizon=cert.horizon_used)
    T_grid = range(T_max + 1)
    records: List[BoundCheckRecord] = []
    merging: List[BoundCheckRecord] = []
    for s in range(s_max + 1):
        labels = schedule.survival_labels(s)
        pairs = [
            (Measure.dirac(chain.space, a), Measure.dirac(chain.space, b))
            for i, a in enumerate(labels)
            for b in labels[i + 1:]
        ]
        for x in labels:
            for t in range(t_max + 1):
                records.extend(check_qprocess_convergence(cert, chain, schedule, qp, x, s, t, T_grid, seed))
        if pairs:
            for t in range(s, s + t_max + 1):
                merging.extend(merging_check(chain, schedule, dc, s, t, pairs, seed))
    return SuiteOutcome(seed=seed, product=cert.product, records=records, merging=merging)


def bound_suite(
    seeds: Sequence[int],
    base_seed: int = 0,
    n_live: int = 4,
    kind: str = "constant",
    s_max: int = 4,
    t_max: int = 6,
    T_max: int = 12,
    eta_margin: int = 400,
    min_product: float = 0.2,
    threads: int = 1,
) -> SuiteResult:
    """Bound checks over random certified chains, one per seed; results do not depend on `threads`"""
    def run(seed: int) -> SuiteOutcome:
        return _suite_case(base_seed, seed, n_live, kind, s_max, t_max, T_max, eta_margin, min_product)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        outcomes = list(executor.map(run, seeds))
    result = SuiteResult(outcomes)
    logger.info(
        f"Bound suite finished: {len(outcomes)} chains, {len(result.records) + len(result.merging)} records, "
        f"{result.failures} failure(s)"
    )
    return result
