"""
Config-driven experiment runner.

A run is split into named sections (certify, quasi_limiting, survival, ...)
executed on a thread pool. Each section yields a SectionReport and optional
CSV series; failures are captured per section so one broken computation never
hides the others. The report is a deterministic merge keyed by section name.
"""

import hashlib
import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src.chain_core import chain_from_document, load_chain
from src.convergence_lab import (
    RECORD_HEADER,
    BoundCheckRecord,
    bound_suite,
    check_qed_averaging,
    check_qprocess_convergence,
    gap_is_monotone,
    merging_check,
    rate_decay_check,
    tv,
    uniform_gap,
)
from src.cv_certify import CVCertificate, certify, certify_limit, d_table
from src.diffusion_mc import (
    Boundary,
    DiffusionModel,
    Drift,
    boundary_gap_diagnostic,
    brownian_conditioned_bins,
    brownian_occupation_bins,
    brownian_survival,
    comes_down_probe,
    drift_hypothesis_check,
    mc_conditioned_law,
    mc_quasi_ergodic,
    scale_function,
    simulate_paths,
    speed_measure_density,
    survival_estimate,
)
from src.exceptions import ConfigError, QexodusError, UnknownSeriesError
from src.limits import beta_gamma, qed_limit, qsd_fixed, quasi_ergodic, quasi_limiting
from src.models import AbsorbedChain, BoundarySchedule, Measure, ScheduleKind
from src.qprocess import QProcess, build_qprocess, harmonicity_residual
from src.report_service import get_report_service
from src.schemas import ExperimentConfig, RunReport, SectionReport, SeriesDocument
from src.settings import DEFAULT_OUTPUT_DIR, DEFAULT_THREADS, VERSION

logger = logging.getLogger(__name__)

ORACLE_SIGMAS = 4.0
ORACLE_SLACK = 1e-3
SURVIVAL_SIGMAS = 3.0
HARMONIC_TOLERANCE = 1e-9

SeriesMap = Dict[str, SeriesDocument]
SectionResult = Tuple[SectionReport, SeriesMap]


# ---------------------------------------------------------------------------
# Configuration

def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate an experiment config.

    Raises:
        ConfigError: with every problem found (JSON syntax errors carry line and column)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"cannot read config: {e}"], str(path)) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"line {e.lineno}, column {e.colno}: {e.msg}"], str(path)) from e
    try:
        return ExperimentConfig.model_validate(data, context={"base_dir": str(path.parent)})
    except ValidationError as e:
        errors = []
        for error in e.errors():
            location = ".".join(str(part) for part in error["loc"]) or "<root>"
            errors.append(f"{location}: {error['msg']}")
        raise ConfigError(errors, str(path)) from e


def config_payload(config: ExperimentConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json", by_alias=True, exclude_none=True)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical config JSON"""
    canonical = json.dumps(config_payload(config), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Shared state for chain sections

@dataclass
class _ChainContext:
    """Chain, schedule and the lazily computed certificate / Q-process shared by sections"""

    config: ExperimentConfig
    chain: AbsorbedChain
    schedule: BoundarySchedule
    threads: int
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _cert: Optional[CVCertificate] = None
    _qp: Optional[QProcess] = None

    @property
    def cert(self) -> CVCertificate:
        with self._lock:
            if self._cert is None:
                params = self.config.certify
                self._cert = certify(
                    self.chain, self.schedule, params.t0_max, params.horizon, params.criterion, self.threads
                )
            return self._cert

    def qprocess(self) -> QProcess:
        cert = self.cert
        cert.require_valid()
        with self._lock:
            if self._qp is None:
                self._qp = build_qprocess(self.chain, self.schedule, cert, self._eta_horizon(cert))
            return self._qp

    def _eta_horizon(self, cert: CVCertificate) -> int:
        if self.config.kind == "chain_bounds":
            bounds = self.config.bounds
            reach = max(max(bounds.s_grid) + max(bounds.t_grid) + max(bounds.T_grid), max(bounds.qed_n_grid))
            return reach + cert.t0 + bounds.eta_margin
        period = self.schedule.period or 1
        return period + cert.t0 + self.config.limits.eta_margin

    def initial(self) -> Measure:
        weights = self.config.limits.initial
        if weights is None:
            return Measure.uniform(self.chain.space, self.schedule.survival_labels(0))
        return Measure.from_mapping(self.chain.space, weights)


def _load_chain(config: ExperimentConfig, base_dir: Union[str, Path]) -> Tuple[AbsorbedChain, BoundarySchedule]:
    if isinstance(config.chain, str):
        return load_chain(Path(base_dir) / config.chain)
    return chain_from_document(config.chain)


def _series(header: List[str], rows: List[list]) -> SeriesDocument:
    return SeriesDocument(header=header, rows=rows)


def _records_series(records: List[BoundCheckRecord]) -> SeriesDocument:
    return _series(RECORD_HEADER, [record.as_row() for record in records])


def _measure_dict(measure: Measure) -> Dict[str, float]:
    return measure.as_dict()


# ---------------------------------------------------------------------------
# Chain sections

def _section_certify(ctx: _ChainContext) -> SectionResult:
    cert = ctx.cert
    results = cert.to_document().model_dump(mode="json")
    results["product"] = cert.product
    return SectionReport(passed=cert.valid, results=results), {}


def _section_certify_limit(ctx: _ChainContext) -> SectionResult:
    params = ctx.config.certify
    cert = certify_limit(ctx.chain, ctx.schedule, params.t0_max, params.horizon, params.criterion, ctx.threads)
    results = cert.to_document().model_dump(mode="json")
    results["product"] = cert.product
    return SectionReport(passed=cert.valid, results=results), {}


def _section_d_coefficients(ctx: _ChainContext) -> SectionResult:
    cert = ctx.cert
    cert.require_valid()
    dc = d_table(ctx.chain, ctx.schedule, cert.t0, horizon=cert.horizon_used, threads=ctx.threads)
    rows = [[s, d, d_prime] for s, (d, d_prime) in sorted(dc.table.items())]
    results = {"t0": dc.t0, "table": {str(s): [d, d_prime] for s, d, d_prime in rows}}
    return SectionReport(passed=True, results=results), {"d_coefficients": _series(["s", "d", "d_prime"], rows)}


def _section_quasi_stationary(ctx: _ChainContext) -> SectionResult:
    triple = qsd_fixed(ctx.chain, ctx.schedule.limit_schedule().absorbing(0))
    results = {
        "alpha": _measure_dict(triple.alpha),
        "rho": triple.rho,
        "lambda": triple.lam,
        "eta": dict(zip(ctx.chain.space.labels, triple.eta_inf.tolist())),
        "reference_state": triple.reference_state,
        "alpha_residual": triple.alpha_residual,
        "eta_residual": triple.eta_residual,
    }
    return SectionReport(passed=True, results=results), {}


def _section_quasi_limiting(ctx: _ChainContext) -> SectionResult:
    params = ctx.config.limits
    report = quasi_limiting(ctx.chain, ctx.schedule, ctx.initial(), params.t_max, params.tol)
    results = {
        "value": _measure_dict(report.value),
        "predicted": report.predicted,
        "predicted_value": None if report.predicted_value is None else _measure_dict(report.predicted_value),
        "converged": report.converged,
        "final_tv": report.diagnostics[-1][1],
    }
    if report.independence_gap is not None:
        results["independence_gap"] = report.independence_gap
    series = _series(["t", "tv"], [[t, value] for t, value in sorted(report.diagnostics)])
    return SectionReport(passed=report.converged, results=results), {"quasi_limiting": series}


def _section_quasi_ergodic(ctx: _ChainContext) -> SectionResult:
    params = ctx.config.limits
    predicted = qed_limit(ctx.chain, ctx.schedule, ctx.cert, ctx.qprocess())
    mu = ctx.initial()
    n_values = sorted({max(1, params.qed_n * k // 10) for k in range(1, 11)})
    rows = []
    for n in n_values:
        rows.append([n, tv(quasi_ergodic(ctx.chain, ctx.schedule, mu, n), predicted)])
    final = rows[-1][1]
    results = {"predicted": _measure_dict(predicted), "n": params.qed_n, "final_tv": final, "tolerance": params.qed_tol}
    passed = final <= params.qed_tol
    if not passed:
        logger.error(f"Quasi-ergodic distance {final:.3e} above tolerance {params.qed_tol}")
    return SectionReport(passed=passed, results=results), {"quasi_ergodic": _series(["n", "tv"], rows)}


def _section_qprocess(ctx: _ChainContext) -> SectionResult:
    qp = ctx.qprocess()
    residual = harmonicity_residual(qp.eta, ctx.chain, ctx.schedule, 0, 1)
    results: Dict[str, Any] = {
        "reference_state": qp.eta.reference_state,
        "window_end": qp.eta.window_end,
        "eta_0": dict(zip(ctx.chain.space.labels, qp.eta.eta(0).tolist())),
        "error_bound_0": qp.eta.error_bound[0],
        "harmonicity_residual": residual,
    }
    if ctx.schedule.kind != ScheduleKind.CONVERGING:
        results["beta"] = _measure_dict(beta_gamma(ctx.chain, ctx.schedule, ctx.cert))
    return SectionReport(passed=residual <= HARMONIC_TOLERANCE, results=results), {}


def _section_qprocess_convergence(ctx: _ChainContext) -> SectionResult:
    bounds = ctx.config.bounds
    cert = ctx.cert
    qp = ctx.qprocess()
    records: List[BoundCheckRecord] = []
    decay = []
    for s in bounds.s_grid:
        for x in ctx.schedule.survival_labels(s):
            for t in bounds.t_grid:
                batch = check_qprocess_convergence(cert, ctx.chain, ctx.schedule, qp, x, s, t, bounds.T_grid)
                records.extend(batch)
                decay.append(rate_decay_check(batch, cert).passed)
    failures = sum(not record.passed for record in records)
    results = {
        "records": len(records),
        "failures": failures,
        "min_margin": min(record.margin for record in records),
        "rate_decay_passed": all(decay),
    }
    return SectionReport(passed=failures == 0, results=results), {"bound_checks": _records_series(records)}


def _section_merging(ctx: _ChainContext) -> SectionResult:
    bounds = ctx.config.bounds
    cert = ctx.cert
    cert.require_valid()
    dc = d_table(ctx.chain, ctx.schedule, cert.t0, horizon=cert.horizon_used, threads=ctx.threads)
    records: List[BoundCheckRecord] = []
    for s in bounds.s_grid:
        labels = ctx.schedule.survival_labels(s)
        pairs = [
            (Measure.dirac(ctx.chain.space, a), Measure.dirac(ctx.chain.space, b))
            for i, a in enumerate(labels)
            for b in labels[i + 1:]
        ]
        if not pairs:
            continue
        for t in bounds.t_grid:
            records.extend(merging_check(ctx.chain, ctx.schedule, dc, s, s + t, pairs))
    failures = sum(not record.passed for record in records)
    results = {"records": len(records), "failures": failures}
    return SectionReport(passed=failures == 0, results=results), {"merging_checks": _records_series(records)}


def _section_qed_averaging(ctx: _ChainContext) -> SectionResult:
    bounds = ctx.config.bounds
    qp = ctx.qprocess()
    records: List[BoundCheckRecord] = []
    for x in ctx.schedule.survival_labels(0):
        records.extend(check_qed_averaging(ctx.cert, ctx.chain, ctx.schedule, qp, x, bounds.qed_n_grid))
    failures = sum(not record.passed for record in records)
    results = {"records": len(records), "failures": failures}
    return SectionReport(passed=failures == 0, results=results), {"qed_checks": _records_series(records)}


def _section_uniform_gap(ctx: _ChainContext) -> SectionResult:
    bounds = ctx.config.bounds
    x = ctx.schedule.survival_labels(0)[0]
    gaps = uniform_gap(ctx.chain, ctx.schedule, x, bounds.s_grid, bounds.gap_window)
    monotone = gap_is_monotone(gaps)
    settled = ctx.schedule.stabilization_time or 0
    vanishes = all(gap <= 1e-10 for s, gap in gaps.items() if s >= settled)
    results = {"x": x, "monotone": monotone, "vanishes_after_stabilization": vanishes}
    rows = [[s, gap] for s, gap in sorted(gaps.items())]
    return SectionReport(passed=monotone and vanishes, results=results), {"uniform_gap": _series(["s", "gap"], rows)}


def _section_random_suite(ctx: _ChainContext) -> SectionResult:
    bounds = ctx.config.bounds
    suite = bound_suite(
        list(range(bounds.random_seeds)),
        base_seed=ctx.config.seed,
        n_live=bounds.random_states,
        kind=bounds.random_kind,
        s_max=max(bounds.s_grid),
        t_max=max(bounds.t_grid),
        T_max=max(bounds.T_grid),
        eta_margin=bounds.eta_margin,
        min_product=bounds.min_product,
        threads=ctx.threads,
    )
    results = {"chains": len(suite.outcomes), "records": len(suite.records), "merging": len(suite.merging),
               "failures": suite.failures}
    series = {
        "suite_checks": _records_series(suite.records),
        "suite_merging": _records_series(suite.merging),
    }
    return SectionReport(passed=suite.failures == 0, results=results), series


def _chain_sections(ctx: _ChainContext) -> Dict[str, Callable[[], SectionResult]]:
    kind = ctx.config.kind
    sections: Dict[str, Callable[[], SectionResult]] = {}
    if kind == "chain_certify":
        sections["certify"] = lambda: _section_certify(ctx)
        sections["d_coefficients"] = lambda: _section_d_coefficients(ctx)
        if ctx.schedule.kind != ScheduleKind.PERIODIC:
            sections["certify_limit"] = lambda: _section_certify_limit(ctx)
    elif kind == "chain_limits":
        sections["certify"] = lambda: _section_certify(ctx)
        sections["quasi_limiting"] = lambda: _section_quasi_limiting(ctx)
        sections["quasi_ergodic"] = lambda: _section_quasi_ergodic(ctx)
        sections["qprocess"] = lambda: _section_qprocess(ctx)
        if ctx.schedule.kind != ScheduleKind.PERIODIC:
            sections["quasi_stationary"] = lambda: _section_quasi_stationary(ctx)
    else:
        sections["certify"] = lambda: _section_certify(ctx)
        sections["qprocess_convergence"] = lambda: _section_qprocess_convergence(ctx)
        sections["merging"] = lambda: _section_merging(ctx)
        sections["qed_averaging"] = lambda: _section_qed_averaging(ctx)
        if ctx.schedule.kind != ScheduleKind.PERIODIC:
            sections["uniform_gap"] = lambda: _section_uniform_gap(ctx)
        if ctx.config.bounds.random_seeds > 0:
            sections["random_suite"] = lambda: _section_random_suite(ctx)
    return sections


# ---------------------------------------------------------------------------
# Diffusion sections

def build_model(config: ExperimentConfig) -> DiffusionModel:
    params = config.diffusion
    points = tuple((float(x), float(v)) for x, v in params.drift.points) if params.drift.points else None
    drift = Drift(params.drift.kind, params.drift.coefficient, params.drift.c, params.drift.alpha, points)
    return DiffusionModel(
        drift=drift,
        boundary=Boundary(**params.boundary.model_dump()),
        dt=params.dt,
        horizon=params.horizon,
        seed=config.seed,
        stream=params.stream,
        bridge=params.bridge,
        x_cap=params.x_cap,
    )


def _brownian_baseline(model: DiffusionModel) -> bool:
    return model.drift.kind == "zero" and model.boundary.kind == "constant"


def _compare_bins(estimate: np.ndarray, stderr: np.ndarray, oracle: np.ndarray) -> Tuple[bool, float]:
    deviation = np.abs(estimate - oracle)
    passed = bool(np.all(deviation <= ORACLE_SIGMAS * stderr + ORACLE_SLACK))
    return passed, float(deviation.max())


def _section_survival(config: ExperimentConfig, model: DiffusionModel, threads: int) -> SectionResult:
    params = config.diffusion
    estimate = survival_estimate(simulate_paths(model, params.x0, params.n_paths, threads))
    results: Dict[str, Any] = {
        "fraction": estimate.fraction,
        "stderr": estimate.stderr,
        "survivors": estimate.survivors,
        "n_paths": estimate.count,
    }
    passed = True
    if _brownian_baseline(model):
        reference = brownian_survival("constant_level", params.x0, model.horizon, model.boundary.level)
        results["reference"] = reference
        passed = abs(estimate.fraction - reference) <= SURVIVAL_SIGMAS * estimate.stderr
        if not passed:
            logger.error(f"Survival {estimate.fraction:.5f} is more than 3σ from {reference:.5f}")
    return SectionReport(passed=passed, results=results), {}


def _section_conditioned_law(config: ExperimentConfig, model: DiffusionModel, threads: int) -> SectionResult:
    params = config.diffusion
    histogram = mc_conditioned_law(model, params.x0, model.horizon, params.n_paths, params.bins, threads)
    results: Dict[str, Any] = {"survivors": histogram.survivors, "outside": histogram.outside}
    passed = True
    if _brownian_baseline(model):
        oracle = brownian_conditioned_bins(params.x0, model.boundary.level, model.horizon, params.bins)
        passed, results["max_deviation"] = _compare_bins(histogram.mass, histogram.stderr, oracle)
    series = _series(["bin_left", "bin_right", "mass", "stderr"], histogram.rows())
    return SectionReport(passed=passed, results=results), {"conditioned_law": series}


def _section_quasi_ergodic_mc(config: ExperimentConfig, model: DiffusionModel, threads: int) -> SectionResult:
    params = config.diffusion
    histogram = mc_quasi_ergodic(model, params.x0, model.horizon, params.n_paths, params.bins, threads)
    results: Dict[str, Any] = {"survivors": histogram.survivors, "outside": histogram.outside}
    passed = True
    if _brownian_baseline(model):
        oracle = brownian_occupation_bins(params.x0, model.boundary.level, model.horizon, model.n_steps, params.bins)
        passed, results["max_deviation"] = _compare_bins(histogram.mass, histogram.stderr, oracle)
    series = _series(["bin_left", "bin_right", "mass", "stderr"], histogram.rows())
    return SectionReport(passed=passed, results=results), {"quasi_ergodic_histogram": series}


def _section_comes_down(config: ExperimentConfig, model: DiffusionModel, threads: int) -> SectionResult:
    probe = config.diffusion.comes_down
    report = comes_down_probe(model, probe.y, probe.t, probe.x_list, probe.n_paths, threads)
    results = {"plateau_detected": report.plateau_detected, "plateau_positive": report.plateau_positive}
    series = _series(["x", "estimate", "half_width"], report.rows())
    return SectionReport(passed=True, results=results), {"comes_down": series}


def _section_scale(config: ExperimentConfig, model: DiffusionModel, threads: int) -> SectionResult:
    x0 = config.diffusion.x0
    z = model.boundary.h_max
    grid = np.linspace(z, max(x0, z) + 10.0, 201)
    hypothesis = drift_hypothesis_check(model, grid)
    results = {
        "z": z,
        "x": x0,
        "scale": scale_function(model, z, x0),
        "speed_density": speed_measure_density(model, x0),
        "drift_sup": hypothesis.sup_value,
        "drift_sup_at": hypothesis.argmax,
    }
    return SectionReport(passed=True, results=results), {}


def _section_boundary_gap(config: ExperimentConfig, model: DiffusionModel, threads: int) -> SectionResult:
    params = config.diffusion
    gap = boundary_gap_diagnostic(model, params.x0, params.n_paths, threads)
    results = {
        "moving": gap.moving.fraction,
        "limit": gap.limit.fraction,
        "gap": gap.gap,
        "stderr": math.hypot(gap.moving.stderr, gap.limit.stderr),
    }
    return SectionReport(passed=True, results=results), {}


def _section_path_dump(config: ExperimentConfig, model: DiffusionModel, threads: int) -> SectionResult:
    params = config.diffusion
    dump_model = replace(model, record_every=params.record_every)
    batch = simulate_paths(dump_model, params.x0, params.dump_paths, threads)
    rows = batch.dump_rows(params.dump_paths)
    return SectionReport(passed=True, results={"paths": params.dump_paths, "rows": len(rows)}), {
        "paths": _series(["path_id", "t", "x"], rows)
    }


DIFFUSION_SECTIONS = {
    "survival": _section_survival,
    "conditioned_law": _section_conditioned_law,
    "quasi_ergodic": _section_quasi_ergodic_mc,
    "comes_down": _section_comes_down,
    "scale": _section_scale,
    "boundary_gap": _section_boundary_gap,
    "path_dump": _section_path_dump,
}


# ---------------------------------------------------------------------------
# Run

def _guarded(name: str, section: Callable[[], SectionResult]) -> Tuple[SectionResult, float]:
    started = time.perf_counter()
    try:
        result = section()
        if not result[0].passed:
            logger.warning(f"Section {name} did not pass")
    except QexodusError as e:
        logger.error(f"Section {name} failed: {type(e).__name__}: {e}")
        result = (SectionReport(passed=False, error=f"{type(e).__name__}: {e}"), {})
    except Exception as e:
        logger.exception(f"Unexpected error in section {name}")
        result = (SectionReport(passed=False, error=f"{type(e).__name__}: {e}"), {})
    return result, time.perf_counter() - started


def _sections(config: ExperimentConfig, threads: int, base_dir: Union[str, Path]) -> Dict[str, Callable[[], SectionResult]]:
    if config.kind == "diffusion":
        model = build_model(config)
        return {
            task: (lambda task=task: DIFFUSION_SECTIONS[task](config, model, threads))
            for task in dict.fromkeys(config.diffusion.tasks)
        }
    chain, schedule = _load_chain(config, base_dir)
    return _chain_sections(_ChainContext(config=config, chain=chain, schedule=schedule, threads=threads))


def run(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    threads: int = DEFAULT_THREADS,
    base_dir: Union[str, Path] = ".",
) -> RunReport:
    """
    Execute every section of the experiment and write its artifacts.

    Args:
        config: validated experiment configuration
        out_dir: output directory (defaults to config.output_dir, then QEXODUS_OUTPUT_DIR)
        threads: worker threads for sections and inner parallel maps
        base_dir: directory against which a chain file path is resolved

    Returns:
        RunReport: also written to <out_dir>/report.json
    """
    out_dir = Path(out_dir or config.output_dir or DEFAULT_OUTPUT_DIR)
    logger.info(f"Running experiment {config.name!r} ({config.kind}) into {out_dir}")
    timings: Dict[str, float] = {}
    sections: Dict[str, SectionReport] = {}
    series: SeriesMap = {}

    try:
        planned = _sections(config, threads, base_dir)
    except (QexodusError, ValidationError, OSError) as e:
        logger.error(f"Could not set up experiment: {type(e).__name__}: {e}")
        planned = {}
        sections["setup"] = SectionReport(passed=False, error=f"{type(e).__name__}: {e}")

    names = list(planned)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        outcomes = list(executor.map(lambda name: _guarded(name, planned[name]), names))
    for name, ((section, section_series), elapsed) in zip(names, outcomes):
        sections[name] = section
        timings[name] = elapsed
        for series_id, document in section_series.items():
            series[series_id] = document

    report = RunReport(
        version=VERSION,
        config_hash=config_hash(config),
        kind=config.kind,
        name=config.name,
        config=config_payload(config),
        sections=dict(sorted(sections.items())),
        series=dict(sorted(series.items())),
        passed=bool(sections) and all(section.passed for section in sections.values()),
    )

    service = get_report_service()
    service.write_report(report, out_dir)
    service.write_timings(timings, out_dir)
    service.write_summary(report, out_dir)
    for series_id in report.series:
        emit_plot_data(report, series_id, out_dir)
    logger.info(f"Experiment {'passed' if report.passed else 'FAILED'}: {len(sections)} section(s)")
    return report


def emit_plot_data(report: RunReport, which: str, out_dir: Union[str, Path]) -> Path:
    """Write the series `which` to <out_dir>/<which>.csv"""
    if which not in report.series:
        raise UnknownSeriesError(f"unknown series {which!r}; available: {sorted(report.series)}")
    document = report.series[which]
    return get_report_service().write_csv(Path(out_dir) / f"{which}.csv", document.header, document.rows)
