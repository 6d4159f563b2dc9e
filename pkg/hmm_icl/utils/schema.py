import math
from typing import Any, Dict, List, Literal, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    SerializationInfo,
    ValidationError,
    field_serializer,
    field_validator,
    model_validator,
)

from hmm_icl.utils.errors import ConfigValidationError
from hmm_icl.utils.utils import SEED_LIMIT


class HmmSpec(BaseModel):
    """Either a generated low-rank HMM or one loaded from a JSON dump."""
    model_config = ConfigDict(extra="forbid")

    num_hidden: int = Field(4, ge=1)
    num_obs: int = Field(3, ge=1)
    rank: int = Field(2, ge=1)
    concentration: float = Field(1.0, gt=0)
    seed: Optional[int] = Field(None, ge=0, lt=SEED_LIMIT)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _rank_fits(self) -> "HmmSpec":
        if self.path is None and self.rank > self.num_hidden:
            raise ValueError(f"rank {self.rank} exceeds num_hidden {self.num_hidden}")
        return self


class MixtureSpec(BaseModel):
    """Task mixture; a prompt draws one task and all its sequences from it."""
    model_config = ConfigDict(extra="forbid")

    num_tasks: int = Field(8, ge=1)
    hidden_per_task: int = Field(8, ge=1)
    vocab: int = Field(4, ge=1)
    rank: int = Field(2, ge=1)
    concentration: float = Field(1.0, gt=0)
    task_prior: Optional[List[float]] = None
    seed: Optional[int] = Field(None, ge=0, lt=SEED_LIMIT)

    @model_validator(mode="after")
    def _prior_matches(self) -> "MixtureSpec":
        if self.rank > self.hidden_per_task:
            raise ValueError(f"rank {self.rank} exceeds hidden_per_task {self.hidden_per_task}")
        if self.task_prior is not None:
            if len(self.task_prior) != self.num_tasks:
                raise ValueError("task_prior length must equal num_tasks")
            if abs(sum(self.task_prior) - 1.0) > 1e-12 or min(self.task_prior) < 0:
                raise ValueError("task_prior must be a probability vector")
        return self


class LayoutSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(20, ge=1)
    L: int = Field(3, ge=2)
    k: int = Field(5, ge=2)
    m: int = Field(1, ge=1)
    D: Optional[int] = Field(None, ge=1)


class ConstructionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta1: float = math.inf
    beta2: Optional[float] = None
    T: int = Field(20, ge=0)
    lr: Optional[float] = None

    @field_validator("beta1", mode="before")
    @classmethod
    def _hardmax_alias(cls, value: Any) -> Any:
        if isinstance(value, str) and value.lower() in ("hardmax", "inf", "infinity"):
            return math.inf
        return value

    @field_validator("beta1")
    @classmethod
    def _positive_beta(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("beta1 must be positive (use 'hardmax' for the exact limit)")
        return value

    @field_serializer("beta1")
    def _dump_beta(self, value: float, info: SerializationInfo):
        # JSON has no infinity; the alias above reads this back
        if info.mode == "json" and math.isinf(value):
            return "hardmax"
        return value


class ExperimentConfig(BaseModel):
    """
    Declarative description of one measurement.

    The JSON file handed to the CLI is parsed into this model; flag overrides
    are merged into the raw dictionary before validation.
    """
    model_config = ConfigDict(extra="forbid")

    hmm: Optional[HmmSpec] = None
    mixture: Optional[MixtureSpec] = None
    layout: LayoutSpec = Field(default_factory=LayoutSpec)
    construction: ConstructionSpec = Field(default_factory=ConstructionSpec)
    num_mc: int = Field(200, ge=1)
    alpha_floor: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0, lt=SEED_LIMIT)
    population_samples: int = Field(100_000, ge=1)
    stack_samples: int = Field(4, ge=0)
    prior: Literal["uniform", "initial", "stationary"] = "uniform"

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.hmm is not None and self.mixture is not None:
            raise ValueError("give either hmm or mixture, not both")
        if self.hmm is None and self.mixture is None:
            self.hmm = HmmSpec()
        lay = self.layout
        if not lay.k > lay.L > lay.m:
            raise ValueError(f"layout needs k > L > m, got k={lay.k}, L={lay.L}, m={lay.m}")
        return self


class SweepGrid(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: List[int] = Field(default_factory=list)
    L: List[int] = Field(default_factory=list)
    T: List[int] = Field(default_factory=list)
    k: List[int] = Field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.n or self.L or self.T or self.k)


def parse_experiment(raw: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw dictionary, converting pydantic failures to ConfigValidationError."""
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        fields = ", ".join(".".join(str(p) for p in e["loc"]) or "<root>" for e in err.errors())
        raise ConfigValidationError(f"Invalid experiment config ({fields}): {err}") from err
