# models.py

from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Optional, List, Dict, Literal, Union

SCHEMA_VERSION = 1
# coefficients are stored densely as complex128, 16 bytes per cell
MAX_DENSE_CELLS = 2_000_000


def dense_cells(max_uv_degree: int, max_slow_degree: int, max_eps_order: int, n_slow_pairs: int) -> int:
    return (max_uv_degree + 1) ** 2 * (max_slow_degree + 1) ** (2 * n_slow_pairs) * (max_eps_order + 1)


def _check_dense_size(max_uv_degree: int, max_slow_degree: int, max_eps_order: int, n_slow_pairs: int) -> None:
    cells = dense_cells(max_uv_degree, max_slow_degree, max_eps_order, n_slow_pairs)
    if cells > MAX_DENSE_CELLS:
        raise ValueError(
            f"truncation needs {cells} coefficients per series, above the dense limit {MAX_DENSE_CELLS}; "
            f"lower max_slow_degree or n_slow_pairs"
        )


# --------- Truncation Models ---------

class TruncationPolicy(BaseModel):
    """Graded truncation bounds shared by every series of one computation"""
    max_uv_degree: int = Field(..., ge=0)
    max_slow_degree: int = Field(..., ge=0)
    max_eps_order: int = Field(..., ge=0)
    n_slow_pairs: int = Field(default=1, ge=1)

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _fits_in_memory(self):
        _check_dense_size(self.max_uv_degree, self.max_slow_degree, self.max_eps_order, self.n_slow_pairs)
        return self


class TruncationBlock(BaseModel):
    max_uv_degree: int = Field(..., ge=0)
    max_slow_degree: int = Field(..., ge=0)
    max_eps_order: int = Field(..., ge=0)

    class Config:
        extra = "forbid"


# --------- Flow Models ---------

FlowMethod = Literal["implicit-midpoint", "rk4-fixed", "dop853"]


class FlowConfig(BaseModel):
    method: FlowMethod = "implicit-midpoint"
    dt: float = Field(default=1e-2, gt=0)
    t_final: float = Field(default=10.0, gt=0)
    tol: float = Field(default=1e-12, gt=0, le=1e-6)
    rtol: float = Field(default=1e-12, gt=0)
    atol: float = Field(default=1e-14, gt=0)
    max_samples: int = Field(default=2000, ge=2)
    # dop853 only; None lets the error control pick the step
    max_step: Optional[float] = Field(default=None, gt=0)

    class Config:
        validate_assignment = True

    @model_validator(mode="after")
    def _dt_below_horizon(self):
        if self.dt >= self.t_final:
            raise ValueError("dt must be smaller than t_final")
        return self


# --------- Problem File Models ---------

class G0Term(BaseModel):
    """One monomial coeff * q^q p^p prod(y^y) of the perturbation"""
    q: int = Field(default=0, ge=0)
    p: int = Field(default=0, ge=0)
    y: List[int] = []
    coeff: float

    class Config:
        extra = "forbid"

    @field_validator("y")
    @classmethod
    def _nonnegative_powers(cls, powers: List[int]) -> List[int]:
        if any(power < 0 for power in powers):
            raise ValueError("slow powers must be nonnegative integers")
        return powers


class ExperimentBlock(BaseModel):
    eps_list: List[float] = Field(default=[0.02, 0.01, 0.005, 0.0025], min_length=1)
    orders: List[int] = [1, 2, 3]
    horizon_factor: float = Field(default=1.0, gt=0)
    initial_actions: List[float] = [0.0, 1e-4, 0.1, 0.5]
    slow_point: List[float] = [0.3, -0.2]
    samples: int = Field(default=400, ge=2)
    # t_final is replaced by horizon_factor / eps for every run
    flow: FlowConfig = FlowConfig(method="dop853", dt=0.05, t_final=1.0)

    class Config:
        extra = "forbid"


class ProblemFile(BaseModel):
    schema_version: int = SCHEMA_VERSION
    name: str
    label: str = ""
    n_slow_pairs: int = Field(default=1, ge=1)
    h0_coeffs: List[float]
    g0_terms: List[G0Term] = []
    truncation: TruncationBlock
    experiments: Optional[ExperimentBlock] = None

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if not self.h0_coeffs:
            raise ValueError("h0_coeffs must not be empty")
        _check_dense_size(n_slow_pairs=self.n_slow_pairs, **self.truncation.model_dump())
        n_slow = 2 * self.n_slow_pairs
        for term in self.g0_terms:
            if term.y and len(term.y) != n_slow:
                raise ValueError(
                    f"g0 term {term.model_dump()} needs {n_slow} slow powers, got {len(term.y)}"
                )
        return self

    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(
            n_slow_pairs=self.n_slow_pairs,
            **self.truncation.model_dump(),
        )


# --------- Result Models ---------

class SeriesDocument(BaseModel):
    policy: TruncationPolicy
    real: bool = False
    # [k, l, slow..., e, re, im]
    terms: List[List[Union[int, float]]] = []


class GeneratorDocument(BaseModel):
    step_index: int
    s1: SeriesDocument


class StepDiagnosticDocument(BaseModel):
    step_index: int
    remainder_order: int
    g_norm: float
    s1_norm: float
    average_norm: float


class NormalFormDocument(BaseModel):
    problem: str
    order: int
    steps_taken: int
    h_final: SeriesDocument
    remainder: SeriesDocument
    generators: List[GeneratorDocument] = []
    step_norms: List[float] = []
    diagnostics: List[StepDiagnosticDocument] = []


class ValidateRow(BaseModel):
    eps: float
    drift: float
    slope_estimate: Optional[float] = None
    symplecticity_defect: float
    roundtrip_error: float
    # largest flow energy error of the eps runs
    noise_floor: float = 0.0
    resolved: bool = True
    remainder_sup: Optional[float] = None


class GateResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class ValidateReport(BaseModel):
    problem: str
    order: int
    seed: int
    horizon_factor: float
    rows: List[ValidateRow] = []
    gates: List[GateResult] = []
    passed: bool = False
    per_condition_drift: Dict[str, Dict[str, float]] = {}
    sample_points: List[List[float]] = []
    # per step, None for a zero generator
    admissible_eps: List[Optional[float]] = []
    warnings: List[str] = []
    error: Optional[str] = None


class ProbeRow(BaseModel):
    eps: float
    best_m: int
    min_drift: float
    drift_by_order: Dict[str, float] = {}
    noise_floor: float = 0.0
    resolved: bool = True


class ProbeReport(BaseModel):
    problem: str
    m_max: int
    seed: int
    rows: List[ProbeRow] = []
    fit_slope_inverse_eps: Optional[float] = None
    local_slopes: List[Optional[float]] = []
    best_m_monotone: bool = True
    super_polynomial: Optional[bool] = None
    warnings: List[str] = []


# --------- Request Models ---------

class ProblemSelector(BaseModel):
    example: Optional[str] = None
    problem: Optional[ProblemFile] = None

    @model_validator(mode="after")
    def _exactly_one_source(self):
        if (self.example is None) == (self.problem is None):
            raise ValueError("give exactly one of 'example' or 'problem'")
        return self


class NormalizeRequest(ProblemSelector):
    order: int = Field(default=1, ge=1)


class ValidateRequest(ProblemSelector):
    order: int = Field(default=1, ge=1)
    eps_list: Optional[List[float]] = None
    seed: Optional[int] = None
    dt: Optional[float] = Field(default=None, gt=0)
    horizon_factor: Optional[float] = Field(default=None, gt=0)


class ProbeRequest(ProblemSelector):
    m_max: int = Field(default=4, ge=1)
    eps_list: Optional[List[float]] = None
    seed: Optional[int] = None
    dt: Optional[float] = Field(default=None, gt=0)
    horizon_factor: Optional[float] = Field(default=None, gt=0)


class ExampleSummary(BaseModel):
    name: str
    label: str
    n_slow_pairs: int
    source: str = "builtin"
