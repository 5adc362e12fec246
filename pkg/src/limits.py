"""
Limiting objects: quasi-stationary triples, quasi-limiting and quasi-ergodic
distributions, the periodic skeleton chain and its invariant measure.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np

from src.chain_core import scaled_forward, step_matrix, tv_distance
from src.cv_certify import CVCertificate
from src.exceptions import (
    AssumptionViolationError,
    ConditioningOnNullError,
    InvalidModelError,
    PowerIterationError,
    ScheduleDegenerateError,
    ScheduleKindError,
    ShapeError,
    StartingInBoundaryError,
    WindowError,
)
from src.models import AbsorbedChain, BoundarySchedule, Measure, ScheduleKind, StateSpace
from src.qprocess import QProcess
from src.schemas import LimitReportDocument

logger = logging.getLogger(__name__)

POWER_TOLERANCE = 1e-14
POWER_ITERATION_CAP = 1_000_000
RESIDUAL_TOLERANCE = 1e-12
STATIONARITY_TOLERANCE = 1e-10


@dataclass(frozen=True)
class QSDTriple:
    """
    Quasi-stationary triple of a fixed boundary.

    rho is the per-step survival eigenvalue; lam = -ln(rho) is the matching
    continuous-time absorption rate.
    """

    alpha: Measure
    rho: float
    lam: float
    eta_inf: np.ndarray
    reference_state: str
    alpha_residual: float
    eta_residual: float


@dataclass(frozen=True)
class SkeletonChain:
    """Chain observed every `period` steps, killed when absorbed inside a period"""

    space: StateSpace
    kernel: np.ndarray
    period: int
    survivors: Tuple[str, ...]

    def survival(self, x: str, n: int) -> float:
        vector = np.zeros(self.space.size)
        vector[self.space.index(x)] = 1.0
        for _ in range(n):
            vector = vector @ self.kernel
        return float(vector.sum())


@dataclass(frozen=True)
class LimitReport:
    kind: str
    value: Measure
    diagnostics: List[Tuple[int, float]] = field(default_factory=list)
    converged: bool = False
    predicted: bool = False
    independence_gap: Optional[float] = None
    predicted_value: Optional[Measure] = None

    def to_document(self) -> LimitReportDocument:
        return LimitReportDocument(
            kind=self.kind,
            value=self.value.weights.tolist(),
            predicted_value=None if self.predicted_value is None else self.predicted_value.weights.tolist(),
            diagnostics=[(t, tv) for t, tv in self.diagnostics],
            converged=self.converged,
        )


def _left_power(matrix: np.ndarray, start: np.ndarray, what: str) -> Tuple[np.ndarray, float]:
    vector = start / start.sum()
    change = math.inf
    for _ in range(POWER_ITERATION_CAP):
        image = vector @ matrix
        rho = float(image.sum())
        if not rho > 0:
            raise PowerIterationError(f"{what}: iterate vanished", math.inf)
        image /= rho
        change = 0.5 * float(np.abs(image - vector).sum())
        vector = image
        if change < POWER_TOLERANCE:
            return vector, rho
    raise PowerIterationError(f"{what} did not converge after {POWER_ITERATION_CAP} iterations", change)


def _right_power(matrix: np.ndarray, start: np.ndarray, ref: Optional[int], what: str) -> Tuple[np.ndarray, float]:
    vector = np.array(start, dtype=float)
    change = math.inf
    for _ in range(POWER_ITERATION_CAP):
        image = matrix @ vector
        pivot = ref if ref is not None and image[ref] > 0 else int(np.argmax(image))
        norm = float(image[pivot])
        if not norm > 0:
            raise PowerIterationError(f"{what}: iterate vanished", math.inf)
        image /= norm
        change = float(np.max(np.abs(image - vector)))
        vector = image
        if change < POWER_TOLERANCE:
            rho = float((matrix @ vector)[pivot] / vector[pivot])
            return vector, rho
    raise PowerIterationError(f"{what} did not converge after {POWER_ITERATION_CAP} iterations", change)


def qsd_fixed(chain: AbsorbedChain, absorbing: Iterable[str]) -> QSDTriple:
    """
    Perron pair of the kernel restricted to E = complement of the fixed set A.

    The right eigenvector is normalized at the smallest surviving label.
    """
    space = chain.space
    surviving = ~space.mask(absorbing)
    if not surviving.any():
        raise ScheduleDegenerateError("the fixed absorbing set covers the whole state space")
    kernel = chain.matrix[np.ix_(surviving, surviving)]
    labels = space.subset(surviving)
    reference = min(labels)
    ref = labels.index(reference)
    size = len(labels)

    alpha, rho = _left_power(kernel, np.full(size, 1.0 / size), "left Perron vector")
    eta, _ = _right_power(kernel, np.ones(size), ref, "right Perron vector")
    alpha_residual = float(np.abs(alpha @ kernel - rho * alpha).sum())
    eta_residual = float(np.max(np.abs(kernel @ eta - rho * eta)))
    worst = max(alpha_residual, eta_residual)
    if worst > RESIDUAL_TOLERANCE:
        raise PowerIterationError("Perron pair residual above tolerance", worst)
    if rho >= 1.0:
        logger.warning("Restricted kernel is stochastic: no absorption from the surviving class")

    alpha_full = np.zeros(space.size)
    alpha_full[surviving] = alpha
    eta_full = np.zeros(space.size)
    eta_full[surviving] = eta
    eta_full.flags.writeable = False
    logger.debug(f"QSD found: rho={rho:.12g}, lambda={-math.log(rho):.12g}")
    return QSDTriple(
        alpha=Measure(space, alpha_full / alpha_full.sum(), support=frozenset(labels)),
        rho=rho,
        lam=-math.log(rho),
        eta_inf=eta_full,
        reference_state=reference,
        alpha_residual=alpha_residual,
        eta_residual=eta_residual,
    )


def _validate_start(chain: AbsorbedChain, schedule: BoundarySchedule, mu: Measure, s: int):
    if not mu.space.same_as(chain.space):
        raise ShapeError("measure and chain are defined on different state spaces")
    if np.any(mu.weights[~schedule.survival_mask(s)] > 0):
        raise StartingInBoundaryError(f"initial measure charges the absorbing set A_{s}")


def _conditioned_path(
    chain: AbsorbedChain, schedule: BoundarySchedule, mu: Measure, s: int, t_max: int
) -> List[np.ndarray]:
    laws = [np.array(mu.weights)]
    vector = laws[0]
    for t in range(t_max):
        vector, _ = scaled_forward(chain, schedule, vector, s + t, 1)
        laws.append(vector)
    return laws


def quasi_limiting(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    mu: Measure,
    t_max: int,
    tol: float,
    second_start: Optional[Measure] = None,
) -> LimitReport:
    """
    Track P_μ(X_t ∈ · | τ_A > t) for t <= t_max.

    Constant and converging schedules are compared with the quasi-stationary
    distribution of A_inf; the report is converged when the distance stays below
    tol over the last ceil(t_max/8) steps. Converging schedules are rerun from
    clock 2 (uniform start on E_2 unless `second_start` is given) and both runs
    must end within 2*tol of each other. Periodic schedules have no predicted
    limit and are tracked through successive-iterate distances.

    `value` is the tracked law at t_max; `predicted_value` holds the limit it is
    compared with.
    """
    if t_max < 1 or tol <= 0:
        raise InvalidModelError("t_max must be positive and tol positive")
    _validate_start(chain, schedule, mu, 0)
    laws = _conditioned_path(chain, schedule, mu, 0, t_max)
    window = math.ceil(t_max / 8)

    if schedule.kind == ScheduleKind.PERIODIC:
        diagnostics = [(t, tv_distance(laws[t], laws[t - 1])) for t in range(1, t_max + 1)]
        converged = all(tv <= tol for _, tv in diagnostics[-window:])
        value = Measure(chain.space, laws[-1] / laws[-1].sum())
        return LimitReport("quasi_limiting", value, diagnostics, converged, predicted=False)

    predicted = qsd_fixed(chain, schedule.limit_schedule().absorbing(0)).alpha
    diagnostics = [(t, tv_distance(law, predicted.weights)) for t, law in enumerate(laws)]
    converged = all(tv <= tol for _, tv in diagnostics[-window:])

    gap = None
    if schedule.kind == ScheduleKind.CONVERGING:
        start = second_start or Measure.uniform(chain.space, schedule.survival_labels(2))
        _validate_start(chain, schedule, start, 2)
        rerun = _conditioned_path(chain, schedule, start, 2, t_max)
        gap = tv_distance(rerun[-1], laws[-1])
        converged = converged and gap <= 2 * tol
        logger.debug(f"Quasi-limiting independence gap between starts: {gap:.3e}")
    value = Measure(chain.space, laws[-1] / laws[-1].sum())
    return LimitReport(
        "quasi_limiting",
        value,
        diagnostics,
        converged,
        predicted=True,
        independence_gap=gap,
        predicted_value=predicted,
    )


def quasi_ergodic(chain: AbsorbedChain, schedule: BoundarySchedule, mu: Measure, n: int) -> Measure:
    """Average over k = 0..n of P_μ(X_k ∈ · | τ_A > n), normalized by n+1"""
    if n < 0:
        raise InvalidModelError("n must be non-negative")
    _validate_start(chain, schedule, mu, 0)
    if n == 0:
        return mu
    forward = _conditioned_path(chain, schedule, mu, 0, n)

    backward = [np.empty(0)] * (n + 1)
    vector = schedule.survival_mask(n).astype(float)
    backward[n] = vector
    for k in range(n - 1, -1, -1):
        vector = step_matrix(chain, schedule, k) @ vector
        top = vector.max()
        if not top > 0:
            raise ConditioningOnNullError(f"no state survives from clock {k} to clock {n}")
        vector = vector / top
        backward[k] = vector

    total = np.zeros(chain.space.size)
    for k in range(n + 1):
        weights = forward[k] * backward[k]
        mass = weights.sum()
        if not mass > 0:
            raise ConditioningOnNullError(f"P_μ(τ > {n}) vanishes")
        total += weights / mass
    return Measure(chain.space, total / total.sum())


def skeleton(chain: AbsorbedChain, schedule: BoundarySchedule) -> SkeletonChain:
    """γ-step surviving kernel on E_0 (constant schedules use γ = 1)"""
    if schedule.kind == ScheduleKind.CONVERGING:
        raise ScheduleKindError("the skeleton chain needs a periodic (or constant) schedule")
    period = schedule.effective_period
    mask = schedule.survival_mask(0)
    kernel = np.diag(mask.astype(float))
    for u in range(period):
        kernel = kernel @ step_matrix(chain, schedule, u)
    kernel.flags.writeable = False
    return SkeletonChain(space=chain.space, kernel=kernel, period=period, survivors=chain.space.subset(mask))


def beta_gamma(
    chain: AbsorbedChain, schedule: BoundarySchedule, cert: CVCertificate, mu: Optional[Measure] = None
) -> Measure:
    """
    Invariant measure of the Doob-transformed skeleton chain.

    The transform uses the right Perron vector h of the skeleton; the left
    power iteration starts from μ (uniform on E_0 by default).
    """
    if schedule.kind == ScheduleKind.CONVERGING:
        raise ScheduleKindError("β_γ needs a periodic (or constant) schedule")
    period = schedule.effective_period
    if cert.t0 % period:
        raise AssumptionViolationError(f"certificate t0={cert.t0} is not a multiple of the period {period}")
    if not cert.valid:
        logger.warning("β_γ computed under an invalid certificate")

    sk = skeleton(chain, schedule)
    surviving = schedule.survival_mask(0)
    matrix = sk.kernel[np.ix_(surviving, surviving)]
    h, rho = _right_power(matrix, np.ones(matrix.shape[0]), None, "skeleton right Perron vector")
    support = h > 0
    doob = matrix[np.ix_(support, support)] * h[support][None, :] / (rho * h[support])[:, None]

    if mu is None:
        start = np.ones(int(support.sum()))
    else:
        _validate_start(chain, schedule, mu, 0)
        start = mu.weights[surviving][support]
        if not start.sum() > 0:
            raise ConditioningOnNullError("initial measure does not charge the surviving class of the skeleton")
    beta, _ = _left_power(doob, start, "skeleton invariant measure")
    residual = float(np.abs(beta @ doob - beta).sum())
    if residual > STATIONARITY_TOLERANCE:
        raise PowerIterationError("β_γ is not stationary for the transformed skeleton", residual)

    compact = np.zeros(int(surviving.sum()))
    compact[support] = beta
    weights = np.zeros(chain.space.size)
    weights[surviving] = compact
    return Measure(chain.space, weights / weights.sum())


def beta_infinity(chain: AbsorbedChain, absorbing: Iterable[str]) -> Measure:
    """α_inf ⊙ η_inf normalized: invariant measure of the fixed-boundary Q-process"""
    triple = qsd_fixed(chain, absorbing)
    weights = triple.alpha.weights * triple.eta_inf
    return Measure(chain.space, weights / weights.sum())


def qed_limit(chain: AbsorbedChain, schedule: BoundarySchedule, cert: CVCertificate, qp: QProcess) -> Measure:
    """
    Predicted quasi-ergodic distribution.

    Periodic schedules average Q_{0,β_γ}(X_u ∈ ·) over u = 0..γ-1; constant and
    converging schedules give β_inf of the limit set.
    """
    if schedule.kind != ScheduleKind.PERIODIC:
        return beta_infinity(chain, schedule.limit_schedule().absorbing(0))
    beta = beta_gamma(chain, schedule, cert)
    total = np.zeros(chain.space.size)
    vector = np.array(beta.weights)
    for u in range(schedule.period):
        total += vector / vector.sum()
        if u + 1 < schedule.period:
            if u not in qp.kernels:
                raise WindowError(f"Q-process does not cover clock {u}")
            vector = vector @ qp.kernels[u]
    return Measure(chain.space, total / schedule.period)
