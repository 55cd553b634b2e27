from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.core import LossConfig
from models.estimator import OptimizerConfig
from models.synth import SynthConfig
from models.uncertainty import ScoreMetric, Strategy

RANDOM_ARM = "random"


class ExperimentConfig(BaseModel):
    """
    One label-budget experiment: which data, how it is split, and which selection arms are compared
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    synth: Optional[SynthConfig] = Field(default=None, description="Generate the dataset from this recipe")
    manifest: Optional[str] = Field(default=None, description="Or load it from this manifest JSON")
    schedule: Literal["A", "B", "C"] = Field(
        default="C",
        description="A: random labels assigned up front; B: every sample is a candidate; "
                    "C: candidate / non-candidate split",
    )
    candidate_fraction: float = Field(default=0.5, gt=0.0, le=1.0, description="Share of samples open to queries")
    non_candidate_fraction: float = Field(default=0.5, ge=0.0, lt=1.0, description="Share held out of the queries")
    split_seed: int = Field(default=0, ge=0, description="Seed of the candidate split")
    budgets: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 1.0], min_length=1,
                                 description="Label ratios r to evaluate")
    strategies: List[Strategy] = Field(default_factory=lambda: [Strategy.RANDOM, Strategy.TOPK], min_length=1)
    metrics: List[ScoreMetric] = Field(
        default_factory=lambda: [ScoreMetric.PHOTO_LOSS, ScoreMetric.OCC_RATIO, ScoreMetric.FLOW_GRAD_NORM],
        description="Scores computed for every candidate; each ranks one arm per non-random strategy",
    )
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1, description="Selection seeds")
    loss: LossConfig = Field(default_factory=LossConfig, description="Loss constants shared by every stage")
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig, description="Estimator settings")

    @field_validator("budgets")
    @classmethod
    def ratios_in_range(cls, budgets: List[float]) -> List[float]:
        for ratio in budgets:
            if not 0.0 <= ratio <= 1.0:
                raise ValueError(f"Budget {ratio} lies outside [0, 1]")
        return budgets

    @field_validator("seeds")
    @classmethod
    def seeds_non_negative(cls, seeds: List[int]) -> List[int]:
        if any(seed < 0 for seed in seeds):
            raise ValueError("Seeds must be non-negative")
        return seeds

    @model_validator(mode="after")
    def consistent(self) -> "ExperimentConfig":
        if self.synth is not None and self.manifest is not None:
            raise ValueError("Give either synth or manifest, not both")
        if abs(self.candidate_fraction + self.non_candidate_fraction - 1.0) > 1e-9:
            raise ValueError(
                f"Split fractions must sum to 1, got {self.candidate_fraction} + {self.non_candidate_fraction}"
            )
        if "loss" in self.optimizer.model_fields_set and self.optimizer.loss != self.loss:
            raise ValueError("Set the loss constants at the top level, not inside optimizer")
        if self.schedule == "A" and Strategy.RANDOM not in self.strategies:
            raise ValueError("Schedule A only supports the random strategy")
        if any(s != Strategy.RANDOM for s in self.strategies) and not self.metrics:
            raise ValueError("Ranking strategies need at least one metric")
        return self

    @property
    def dataset_recipe(self) -> SynthConfig:
        return self.synth if self.synth is not None else SynthConfig()

    @property
    def optimizer_config(self) -> OptimizerConfig:
        return self.optimizer.model_copy(update={"loss": self.loss})

    def arms(self) -> List[Tuple[str, Strategy, Optional[ScoreMetric]]]:
        """
        (name, strategy, ranking metric) of every compared arm, in config order

        Schedule A assigns labels before anything is optimized, so only random arms exist there.
        """
        arms = []
        for strategy in dict.fromkeys(self.strategies):
            if strategy == Strategy.RANDOM:
                arms.append((RANDOM_ARM, strategy, None))
            elif self.schedule != "A":
                arms.extend((f"{strategy.value}:{metric.value}", strategy, metric)
                            for metric in dict.fromkeys(self.metrics))
        return arms


class ExperimentResult(BaseModel):
    """
    Outcome of one (arm, r, seed) run over the candidate set
    """

    arm: str = Field(description="random, or <strategy>:<metric>")
    ratio: float = Field(ge=0.0, le=1.0)
    seed: int
    labeled: int = Field(ge=0, description="Number of samples optimized with their label")
    mean_epe: float
    mean_fl: float
