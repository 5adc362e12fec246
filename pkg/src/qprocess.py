"""
Q-process: the chain conditioned never to be absorbed.

The η-function is obtained by a backward recursion from a truncation horizon
T_eta, which is the finite-horizon ratio P_x(τ_{A∘θ_s} > T_eta - s) /
P_{y*}(τ_{A∘θ_s} > T_eta - s) computed without underflow. Each step stores the
growth factor n_s of K_s η_{s+1} = n_s η_s so that the Doob transform

    Q_s(x, y) = K_s(x, y) η_{s+1}(y) / (n_s η_s(x))

is exactly row-stochastic.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from src.chain_core import step_matrix
from src.cv_certify import CVCertificate, DCoefficients
from src.exceptions import (
    EtaUnderflowError,
    InvalidModelError,
    ShapeError,
    StartingInBoundaryError,
    WindowError,
)
from src.models import AbsorbedChain, BoundarySchedule, Measure, StateSpace, SubKernel
from src.schemas import EtaTableDocument, QProcessDocument

logger = logging.getLogger(__name__)

ETA_FLOOR = 1e-300


@dataclass(frozen=True)
class EtaTable:
    """η_s for s = 0..T_eta (normalized per step), with per-step growth factors and error bounds"""

    space: StateSpace
    values: Dict[int, np.ndarray]
    reference_state: Optional[str]
    truncation_horizon: int
    window_end: int
    error_bound: Dict[int, float]
    log_growth: Dict[int, float]

    def eta(self, s: int) -> np.ndarray:
        if s not in self.values:
            raise WindowError(f"η is tabulated for s in [0, {self.truncation_horizon}], got s={s}")
        return self.values[s]

    def value(self, s: int, x: str) -> float:
        return float(self.eta(s)[self.space.index(x)])

    def to_document(self) -> EtaTableDocument:
        return EtaTableDocument(
            states=list(self.space.labels),
            reference_state=self.reference_state,
            truncation_horizon=self.truncation_horizon,
            values={str(s): eta.tolist() for s, eta in sorted(self.values.items())},
            error_bound={str(s): bound for s, bound in sorted(self.error_bound.items())},
            log_growth={str(s): growth for s, growth in sorted(self.log_growth.items())},
        )


@dataclass(frozen=True)
class QProcess:
    chain: AbsorbedChain
    schedule: BoundarySchedule
    eta: EtaTable
    kernels: Dict[int, np.ndarray]
    certificate: CVCertificate

    def to_document(self) -> QProcessDocument:
        return QProcessDocument(
            eta=self.eta.to_document(),
            kernels={str(s): kernel.tolist() for s, kernel in sorted(self.kernels.items())},
            certificate=self.certificate.to_document(),
        )


def reference_state(schedule: BoundarySchedule) -> Optional[str]:
    """Lexicographically smallest state that survives at every clock, if any"""
    candidates = schedule.always_surviving()
    return min(candidates) if candidates else None


def compute_eta(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    cert: CVCertificate,
    T_eta: int,
    reference: Optional[str] = None,
) -> EtaTable:
    """
    η-function on the window s in [0, T_eta - t0].

    Args:
        reference: state y* with η_s(y*) = 1; defaults to the smallest
            always-surviving state, and to the normalization ν_s(η_s) = 1 when
            no such state exists

    Returns:
        EtaTable with error_bound(s) = (1/(c1c2)) (1 - c1c2)^floor((T_eta - s)/t0)
    """
    cert.require_valid()
    if T_eta < cert.t0:
        raise WindowError(f"T_eta={T_eta} must be at least t0={cert.t0}")
    if reference is None:
        reference = reference_state(schedule)
    elif reference not in schedule.always_surviving():
        raise InvalidModelError(f"reference state {reference!r} does not survive at every clock")
    ref_index = chain.space.index(reference) if reference is not None else None
    if reference is None:
        logger.info("No always-surviving state; normalizing η by ν_s(η_s) = 1")

    values = {T_eta: schedule.survival_mask(T_eta).astype(float)}
    log_growth: Dict[int, float] = {}
    for s in range(T_eta - 1, -1, -1):
        raw = step_matrix(chain, schedule, s) @ values[s + 1]
        norm = raw[ref_index] if ref_index is not None else float(cert.nu_at(s).weights @ raw)
        if not norm > 0:
            raise EtaUnderflowError(f"η normalization vanishes at s={s}")
        eta = raw / norm
        surviving = schedule.survival_mask(s)
        if np.any(eta[surviving] < ETA_FLOOR):
            dead = chain.space.subset(surviving & (eta < ETA_FLOOR))
            raise EtaUnderflowError(f"η underflows at s={s} on states {list(dead)}")
        eta.flags.writeable = False
        values[s] = eta
        log_growth[s] = math.log(norm)

    product = cert.product
    window_end = T_eta - cert.t0
    error_bound = {
        s: (1.0 / product) * (1.0 - product) ** ((T_eta - s) // cert.t0) for s in range(window_end + 1)
    }
    logger.debug(f"η tabulated up to T_eta={T_eta}, reference={reference!r}")
    return EtaTable(
        space=chain.space,
        values=values,
        reference_state=reference,
        truncation_horizon=T_eta,
        window_end=window_end,
        error_bound=error_bound,
        log_growth=log_growth,
    )


def harmonicity_residual(
    table: EtaTable, chain: AbsorbedChain, schedule: BoundarySchedule, s: int, t: int
) -> float:
    """max over x in E_s of |E_x(1{τ_{A∘θ_s} > t-s} η_t(X_{t-s})) - η_s(x)| in the harmonic scaling"""
    if not s <= t <= table.truncation_horizon:
        raise WindowError(f"need s <= t <= {table.truncation_horizon}, got s={s}, t={t}")
    vector = np.array(table.eta(t))
    for u in range(t - 1, s - 1, -1):
        vector = step_matrix(chain, schedule, u) @ vector
        vector /= math.exp(table.log_growth[u])
    surviving = schedule.survival_mask(s)
    return float(np.max(np.abs(vector[surviving] - table.eta(s)[surviving])))


def build_qprocess(
    chain: AbsorbedChain,
    schedule: BoundarySchedule,
    cert: CVCertificate,
    T_eta: int,
    reference: Optional[str] = None,
) -> QProcess:
    """Doob-transformed kernels Q_s for s in the η window"""
    table = compute_eta(chain, schedule, cert, T_eta, reference)
    kernels: Dict[int, np.ndarray] = {}
    for s in range(table.window_end + 1):
        rows = schedule.survival_mask(s)
        kernel = np.zeros((chain.space.size, chain.space.size))
        growth = math.exp(table.log_growth[s])
        eta_here = table.eta(s)
        kernel[rows] = (
            step_matrix(chain, schedule, s)[rows] * table.eta(s + 1)[None, :] / (growth * eta_here[rows])[:, None]
        )
        kernel.flags.writeable = False
        kernels[s] = kernel
    logger.info(f"Q-process built on s in [0, {table.window_end}]")
    return QProcess(chain=chain, schedule=schedule, eta=table, kernels=kernels, certificate=cert)


def q_kernel(qp: QProcess, s: int) -> SubKernel:
    """Q-process transition matrix from clock s, rows on E_s and columns on E_{s+1}"""
    if s not in qp.kernels:
        raise WindowError(f"Q-kernels are tabulated for s in [0, {qp.eta.window_end}], got s={s}")
    rows = qp.schedule.survival_mask(s)
    cols = qp.schedule.survival_mask(s + 1)
    return SubKernel(
        space=qp.chain.space,
        rows=qp.chain.space.subset(rows),
        cols=qp.chain.space.subset(cols),
        matrix=qp.kernels[s][np.ix_(rows, cols)],
    )


def q_marginal(qp: QProcess, s: int, x: str, t: int) -> Measure:
    """Q_{s,x}(X_{s+t} ∈ ·)"""
    index = qp.chain.space.index(x)
    if not qp.schedule.survival_mask(s)[index]:
        raise StartingInBoundaryError(f"state {x!r} lies in the absorbing set A_{s}")
    vector = np.zeros(qp.chain.space.size)
    vector[index] = 1.0
    for k in range(t):
        if s + k not in qp.kernels:
            raise WindowError(f"Q-kernels are tabulated for s in [0, {qp.eta.window_end}], got s={s + k}")
        vector = vector @ qp.kernels[s + k]
    if t > 0:
        vector /= vector.sum()
    return Measure(qp.chain.space, vector, support=frozenset(qp.schedule.survival_labels(s + t)))


def q_marginal_from(qp: QProcess, s: int, mu: Measure, t: int) -> Measure:
    """Q_{s,μ}(X_{s+t} ∈ ·) for an initial measure μ on E_s"""
    if not mu.space.same_as(qp.chain.space):
        raise ShapeError("measure and Q-process are defined on different state spaces")
    vector = np.array(mu.weights)
    for k in range(t):
        if s + k not in qp.kernels:
            raise WindowError(f"Q-kernels are tabulated for s in [0, {qp.eta.window_end}], got s={s + k}")
        vector = vector @ qp.kernels[s + k]
    return Measure(qp.chain.space, vector / vector.sum(), support=frozenset(qp.schedule.survival_labels(s + t)))


def mixing_bound(dc: DCoefficients, cert: Optional[CVCertificate], s: int, t: int) -> float:
    """
    2 · prod_{k < floor((t-s)/t0)} (1 - d_{t - k t0}).

    The d-indices are the ends of the t0-blocks counted back from t: d_u
    couples the block [u - t0, u], so consecutive factors never share a
    block. For t0 = 1 this is the product of d_{t-k} over single steps.
    """
    if t < s:
        raise InvalidModelError(f"mixing bound needs t >= s, got s={s}, t={t}")
    if cert is not None and cert.t0 != dc.t0:
        raise InvalidModelError(f"d-table built for t0={dc.t0} but certificate has t0={cert.t0}")
    bound = 2.0
    for k in range((t - s) // dc.t0):
        d, _ = dc.at(t - k * dc.t0)
        bound *= 1.0 - d
    return min(max(bound, 0.0), 2.0)
