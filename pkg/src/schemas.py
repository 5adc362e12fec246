from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional, Tuple, Union
from pathlib import Path


class StrictModel(BaseModel):
    """Base for every document: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Chain, certificate and Q-process documents

class ScheduleDocument(StrictModel):
    kind: Literal["constant", "periodic", "converging"]
    period: Optional[int] = None
    sets: Dict[str, List[str]]
    limit: Optional[List[str]] = None
    stabilization_time: Optional[int] = None


class ChainDocument(StrictModel):
    states: List[str]
    kernel: List[List[float]]
    schedule: ScheduleDocument


class CertificateDocument(StrictModel):
    """Serialized CVCertificate; `nu` maps s to the weights of ν_{s+t0}"""
    states: List[str]
    t0: int
    c1: float
    c2: float
    horizon_used: int
    nu: Dict[str, List[float]]
    initial_nu: Dict[str, List[float]] = {}
    stabilization: float
    valid: bool


class EtaTableDocument(StrictModel):
    states: List[str]
    reference_state: Optional[str] = None
    truncation_horizon: int
    values: Dict[str, List[float]]
    error_bound: Dict[str, float]
    log_growth: Dict[str, float]


class QProcessDocument(StrictModel):
    eta: EtaTableDocument
    kernels: Dict[str, List[List[float]]]
    certificate: CertificateDocument


class LimitReportDocument(StrictModel):
    kind: Literal["quasi_limiting", "quasi_ergodic"]
    value: List[float]
    predicted_value: Optional[List[float]] = None
    diagnostics: List[Tuple[int, float]]
    converged: bool


# ---------------------------------------------------------------------------
# Experiment configuration

class CertifyParams(StrictModel):
    t0_max: int = Field(4, ge=1)
    horizon: int = Field(200, ge=1)
    criterion: Literal["product", "rate"] = "product"


class LimitsParams(StrictModel):
    initial: Optional[Dict[str, float]] = None
    t_max: int = Field(400, ge=1)
    tol: float = Field(1e-9, gt=0)
    qed_n: int = Field(2000, ge=0)
    qed_tol: float = Field(0.01, gt=0)
    eta_margin: int = Field(400, ge=1)


class BoundsParams(StrictModel):
    s_grid: List[int] = [0, 1, 2]
    t_grid: List[int] = [0, 1, 2, 3]
    T_grid: List[int] = [0, 1, 2, 3, 4, 5, 6]
    qed_n_grid: List[int] = [1, 10, 50]
    gap_window: int = Field(8, ge=0)
    eta_margin: int = Field(400, ge=1)
    random_seeds: int = Field(0, ge=0)
    random_states: int = Field(5, ge=2, le=12)
    random_kind: Literal["constant", "periodic", "converging"] = "constant"
    min_product: float = Field(0.2, gt=0, le=1)

    @field_validator("s_grid", "t_grid", "T_grid", "qed_n_grid")
    @classmethod
    def non_negative_grid(cls, grid: List[int]) -> List[int]:
        if not grid or any(value < 0 for value in grid):
            raise ValueError("grid must be a non-empty list of non-negative integers")
        return sorted(set(grid))


class DriftSpec(StrictModel):
    kind: Literal["zero", "linear", "cubic_shifted", "power", "table"]
    coefficient: float = 1.0
    c: float = 0.0
    alpha: float = Field(3.0, gt=1.0)
    points: Optional[List[Tuple[float, float]]] = None

    @model_validator(mode="after")
    def table_needs_points(self) -> "DriftSpec":
        if self.kind == "table" and (not self.points or len(self.points) < 2):
            raise ValueError("table drift requires at least two `points`")
        return self


class BoundarySpec(StrictModel):
    kind: Literal["constant", "periodic", "decreasing"]
    level: float = Field(0.0, ge=0)
    base: float = Field(1.0, ge=0)
    amplitude: float = Field(0.0, ge=0)
    period: float = Field(1.0, gt=0)
    h0: float = Field(1.0, ge=0)
    rate: float = Field(1.0, ge=0)


class ComesDownSpec(StrictModel):
    y: float
    t: float = Field(..., gt=0)
    x_list: List[float]
    n_paths: int = Field(10000, ge=1)


class DiffusionSpec(StrictModel):
    drift: DriftSpec
    boundary: BoundarySpec
    x0: float
    dt: float = Field(1e-3, gt=0)
    horizon: float = Field(1.0, gt=0)
    n_paths: int = Field(100000, ge=1)
    bridge: bool = True
    x_cap: Optional[float] = None
    stream: int = Field(0, ge=0)
    bins: Optional[List[float]] = None
    tasks: List[Literal[
        "survival", "conditioned_law", "quasi_ergodic", "comes_down", "scale", "boundary_gap", "path_dump"
    ]] = ["survival"]
    comes_down: Optional[ComesDownSpec] = None
    dump_paths: int = Field(0, ge=0)
    record_every: int = Field(10, ge=1)

    @field_validator("bins")
    @classmethod
    def increasing_edges(cls, edges: Optional[List[float]]) -> Optional[List[float]]:
        if edges is not None and (len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:]))):
            raise ValueError("bins must be at least two strictly increasing edges")
        return edges

    @model_validator(mode="after")
    def task_requirements(self) -> "DiffusionSpec":
        problems = []
        if {"conditioned_law", "quasi_ergodic"} & set(self.tasks) and self.bins is None:
            problems.append("`bins` is required for histogram tasks")
        if "comes_down" in self.tasks and self.comes_down is None:
            problems.append("`comes_down` is required for the comes_down task")
        if "path_dump" in self.tasks and self.dump_paths == 0:
            problems.append("`dump_paths` must be positive for the path_dump task")
        if problems:
            raise ValueError("; ".join(problems))
        return self


CHAIN_KINDS = ("chain_certify", "chain_limits", "chain_bounds")


class ExperimentConfig(StrictModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(..., alias="schema")
    kind: Literal["chain_certify", "chain_limits", "chain_bounds", "diffusion"]
    name: str = "experiment"
    chain: Optional[Union[ChainDocument, str]] = None
    diffusion: Optional[DiffusionSpec] = None
    seed: Optional[int] = Field(None, ge=0)
    output_dir: Optional[str] = None
    certify: CertifyParams = Field(default_factory=CertifyParams)
    limits: LimitsParams = Field(default_factory=LimitsParams)
    bounds: BoundsParams = Field(default_factory=BoundsParams)

    @model_validator(mode="after")
    def kind_requirements(self, info: ValidationInfo) -> "ExperimentConfig":
        problems = []
        if self.kind in CHAIN_KINDS:
            if self.chain is None:
                problems.append(f"`chain` is required for kind '{self.kind}'")
            elif isinstance(self.chain, str):
                base_dir = Path((info.context or {}).get("base_dir", "."))
                if not (base_dir / self.chain).is_file():
                    problems.append(f"chain file not found: {self.chain}")
        if self.kind == "diffusion":
            if self.diffusion is None:
                problems.append("`diffusion` is required for kind 'diffusion'")
            if self.seed is None:
                problems.append("`seed` is required for kind 'diffusion'")
        if self.kind == "chain_bounds" and self.bounds.random_seeds > 0 and self.seed is None:
            problems.append("`seed` is required when bounds.random_seeds > 0")
        if problems:
            raise ValueError("; ".join(problems))
        return self


# ---------------------------------------------------------------------------
# Run reports

class SeriesDocument(StrictModel):
    header: List[str]
    rows: List[List[Any]]


class SectionReport(StrictModel):
    passed: bool
    results: Dict[str, Any] = {}
    error: Optional[str] = None


class RunReport(StrictModel):
    version: str
    config_hash: str
    kind: str
    name: str
    config: Dict[str, Any]
    sections: Dict[str, SectionReport]
    series: Dict[str, SeriesDocument] = {}
    passed: bool
