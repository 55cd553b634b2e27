import math
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from models.core import Budget, Dataset, FlowField, LossConfig, Sample, require_same_shape
from models.errors import RecordMismatchError, TableFormatError
from models.flow_io import read_table
from models.flow_ops import FlowPyramid, fb_occlusion, flow_gradient_magnitude, flow_norm, occlusion_pyramid
from models.losses import photometric_loss
from models.raster import (
    build_image_pyramid,
    gradient_magnitude,
    histogram_cdf_distance,
    structure_tensor_min_eig,
)


class ScoreMetric(str, Enum):
    PHOTO_LOSS = "photo_loss"
    OCC_RATIO = "occ_ratio"
    FLOW_GRAD_NORM = "flow_grad_norm"
    FLOW_NORM = "flow_norm"
    IMG_GRAD_NORM = "img_grad_norm"
    TEXTURE_SCORE = "texture_score"
    COLOR_CHANGE = "color_change"


### A large value means "more uncertain" except for these, where texture means confidence
NEGATED_FOR_RANKING = {ScoreMetric.IMG_GRAD_NORM, ScoreMetric.TEXTURE_SCORE}

### The metrics that need a flow estimate
FLOW_METRICS = {ScoreMetric.PHOTO_LOSS, ScoreMetric.OCC_RATIO, ScoreMetric.FLOW_GRAD_NORM, ScoreMetric.FLOW_NORM}


class Strategy(str, Enum):
    RANDOM = "random"
    TOPK = "topk"
    OCC2X = "occ2x"
    GROUPED_TOPK = "grouped_topk"


class ScoreRecord(BaseModel):
    """
    One uncertainty score of one sample; `value` is stored raw
    """

    model_config = ConfigDict(frozen=True)

    sample_id: str = Field(description="Id of the scored sample")
    metric: ScoreMetric = Field(description="Which heuristic produced the value")
    value: float = Field(description="Raw score")

    @field_validator("value")
    @classmethod
    def finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError(f"Score must be finite, got {value}")
        return value

    @property
    def ranking_value(self) -> float:
        """
        The value used for ranking, higher = more uncertain
        """
        return -self.value if self.metric in NEGATED_FOR_RANKING else self.value


class Selection(BaseModel):
    """
    The samples chosen for labeling under one budget, strategy and seed
    """

    strategy: Strategy = Field(description="How the samples were chosen")
    ratio: float = Field(ge=0.0, le=1.0, description="Label ratio r of the budget")
    seed: int = Field(ge=0, description="Seed of the strategy's random generator")
    chosen: List[str] = Field(default_factory=list, description="Chosen sample ids, in ranking order")

    @field_validator("chosen")
    @classmethod
    def no_duplicates(cls, chosen: List[str]) -> List[str]:
        if len(set(chosen)) != len(chosen):
            raise ValueError("Selection must not choose a sample twice")
        return chosen

    @property
    def budget(self) -> Budget:
        return Budget(ratio=self.ratio)


def score(sample: Sample, est_fwd: Optional[FlowField], est_bwd: Optional[FlowField], metric: ScoreMetric,
          cfg: LossConfig) -> ScoreRecord:
    """
    Compute one uncertainty score for a sample

    :param sample: the frame pair
    :param est_fwd: estimated frame1 -> frame2 flow (not needed by image-only metrics)
    :param est_bwd: estimated frame2 -> frame1 flow
    :param metric: the heuristic to evaluate
    :param cfg: photometric weights and occlusion thresholds
    :return: the raw score
    """
    metric = ScoreMetric(metric)
    if metric in FLOW_METRICS:
        if est_fwd is None or est_bwd is None:
            raise ValueError(f"Metric {metric.value} needs forward and backward flow estimates")
        require_same_shape(sample.frame1, est_fwd, est_bwd)

    if metric == ScoreMetric.PHOTO_LOSS:
        forward = FlowPyramid.from_flow(est_fwd)
        backward = FlowPyramid.from_flow(est_bwd)
        value = photometric_loss(
            build_image_pyramid(sample.frame1),
            build_image_pyramid(sample.frame2),
            forward,
            occlusion_pyramid(forward, backward, cfg),
            cfg,
        )
    elif metric == ScoreMetric.OCC_RATIO:
        value = fb_occlusion(est_fwd, est_bwd, cfg).ratio
    elif metric == ScoreMetric.FLOW_GRAD_NORM:
        value = flow_gradient_magnitude(est_fwd)
    elif metric == ScoreMetric.FLOW_NORM:
        value = flow_norm(est_fwd)
    elif metric == ScoreMetric.IMG_GRAD_NORM:
        value = gradient_magnitude(sample.frame1)
    elif metric == ScoreMetric.TEXTURE_SCORE:
        value = structure_tensor_min_eig(sample.frame1)
    else:
        value = histogram_cdf_distance(sample.frame1, sample.frame2)
    return ScoreRecord(sample_id=sample.id, metric=metric, value=value)


def _check_records(records: Sequence[ScoreRecord], dataset: Dataset) -> Dict[str, ScoreRecord]:
    metrics = {record.metric for record in records}
    if len(metrics) > 1:
        raise RecordMismatchError(f"Selection needs records of a single metric, got {sorted(m.value for m in metrics)}")
    by_id = {record.sample_id: record for record in records}
    if len(by_id) != len(records) or set(by_id) != set(dataset.ids):
        raise RecordMismatchError(
            f"Expected exactly one record for each of the {len(dataset)} samples, got {len(records)} records"
        )
    return by_id


def _ranked(records: Sequence[ScoreRecord]) -> List[str]:
    ordered = sorted(records, key=lambda record: (-record.ranking_value, record.sample_id))
    return [record.sample_id for record in ordered]


def select(records: Sequence[ScoreRecord], dataset: Dataset, budget: Budget, strategy: Strategy,
           seed: int) -> Selection:
    """
    Choose k = round(r * n) samples to label

    random: a seeded uniform k-subset (the prefix of one permutation, so selections
    for growing r are nested). topk: the k most uncertain, ties by ascending id.
    occ2x: k drawn uniformly from the top min(2k, n). grouped_topk: whole groups
    ranked by their most uncertain member, added until the next would exceed k.
    :param records: one score per sample, all of one metric; may be empty for random
    :param dataset: the candidate samples
    :param budget: the label ratio
    :param strategy: the selection rule
    :param seed: seed of the random generator
    """
    strategy = Strategy(strategy)
    if strategy != Strategy.RANDOM or records:
        _check_records(records, dataset)
    n = len(dataset)
    k = budget.count(n)
    rng = np.random.default_rng(seed)

    if strategy == Strategy.RANDOM:
        order = rng.permutation(n)
        chosen = [dataset.ids[i] for i in order[:k]]
    elif strategy == Strategy.TOPK:
        chosen = _ranked(records)[:k]
    elif strategy == Strategy.OCC2X:
        pool = _ranked(records)[:min(2 * k, n)]
        picked = sorted(int(i) for i in rng.choice(len(pool), size=k, replace=False))
        chosen = [pool[i] for i in picked]
    else:
        chosen = _grouped(records, dataset, k)
    return Selection(strategy=strategy, ratio=budget.ratio, seed=seed, chosen=chosen)


def _grouped(records: Sequence[ScoreRecord], dataset: Dataset, k: int) -> List[str]:
    by_id = {record.sample_id: record for record in records}
    members: Dict[str, List[str]] = {}
    for sample in dataset:
        members.setdefault(sample.group, []).append(sample.id)
    group_score = {
        group: max(by_id[sample_id].ranking_value for sample_id in ids) for group, ids in members.items()
    }
    chosen: List[str] = []
    for group in sorted(members, key=lambda g: (-group_score[g], g)):
        if len(chosen) + len(members[group]) > k:
            break
        chosen.extend(members[group])
    return chosen


def records_for_metric(records: Sequence[ScoreRecord], metric: ScoreMetric) -> List[ScoreRecord]:
    metric = ScoreMetric(metric)
    return [record for record in records if record.metric == metric]


### Files

def write_scores_csv(records: Sequence[ScoreRecord], path: str) -> None:
    frame = pd.DataFrame(
        [(record.sample_id, record.metric.value, record.value) for record in records],
        columns=["sample_id", "metric", "value"],
    )
    frame.to_csv(path, index=False)


def read_scores_csv(path: str) -> List[ScoreRecord]:
    frame = read_table(path, {"sample_id": str, "metric": str, "value": float})
    try:
        return [
            ScoreRecord(sample_id=row.sample_id, metric=row.metric, value=row.value)
            for row in frame.itertuples(index=False)
        ]
    except ValidationError as e:
        raise TableFormatError(f"Bad score row in {path}: {e}") from e


def write_selection(selection: Selection, path: str) -> None:
    with open(path, "w") as f:
        f.write(selection.model_dump_json(indent=2))


def read_selection(path: str) -> Selection:
    with open(path, "r") as f:
        return Selection.model_validate_json(f.read())
