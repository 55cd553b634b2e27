import math
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from models.core import FlowField, require_same_shape
from models.errors import TableFormatError
from models.fixtures import fixture_rows
from models.flow_io import read_table
from models.uncertainty import ScoreRecord

FL_ABSOLUTE_PX = 3.0
FL_RELATIVE = 0.05
EPE_COLUMN = "epe"


class CurvePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    ratio: float = Field(ge=0.0, le=1.0, description="Label ratio r")
    metric_name: str = Field(description="What the value measures, e.g. epe, fl or a strategy name")
    value: float


class SampleMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    sample_id: str
    epe: float = Field(description="Mean end-point error over valid pixels, pixels")
    fl: float = Field(description="Outlier percentage")


def _errors(est: FlowField, gt: FlowField) -> np.ndarray:
    require_same_shape(est, gt)
    valid = gt.valid_mask()
    if not valid.any():
        raise ValueError("Ground truth has no valid pixels")
    return np.linalg.norm(est.uv - gt.uv, axis=2)[valid]


def epe(est: FlowField, gt: FlowField) -> float:
    """
    Mean Euclidean distance between estimated and true vectors over gt-valid pixels
    """
    return float(np.mean(_errors(est, gt)))


def fl_rate(est: FlowField, gt: FlowField) -> float:
    """
    Percentage of gt-valid pixels whose error exceeds both 3 px and 5% of the true magnitude
    """
    errors = _errors(est, gt)
    magnitude = np.linalg.norm(gt.uv, axis=2)[gt.valid_mask()]
    outliers = (errors > FL_ABSOLUTE_PX) & (errors > FL_RELATIVE * magnitude)
    return 100.0 * float(np.mean(outliers))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Pearson correlation; 0 when either side has no variance
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs two equally long sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        return 0.0
    dx, dy = x - x.mean(), y - y.mean()
    denominator = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denominator == 0.0:
        return 0.0
    return float(np.clip(np.dot(dx, dy) / denominator, -1.0, 1.0))


def score_table(records: Sequence[ScoreRecord]) -> pd.DataFrame:
    """
    Wide table: one row per sample, one column per metric
    """
    frame = pd.DataFrame(
        [(record.sample_id, record.metric.value, record.value) for record in records],
        columns=["sample_id", "metric", "value"],
    )
    table = frame.pivot(index="sample_id", columns="metric", values="value")
    table.columns.name = None
    return table


def corr_matrix(records: Sequence[ScoreRecord], sample_epe: Mapping[str, float]) -> pd.DataFrame:
    """
    Symmetric Pearson matrix over every scored metric plus EPE, with a unit diagonal

    Only samples that have every score and an EPE are used.
    """
    table = score_table(records)
    table[EPE_COLUMN] = pd.Series(dict(sample_epe))
    table = table.dropna().sort_index()
    names = list(table.columns)
    matrix = pd.DataFrame(np.eye(len(names)), index=names, columns=names)
    for i, first in enumerate(names):
        for second in names[i + 1:]:
            value = pearson(table[first].to_numpy(), table[second].to_numpy())
            matrix.loc[first, second] = value
            matrix.loc[second, first] = value
    return matrix


def curve_fixture(name: str) -> List[CurvePoint]:
    """
    Embedded published curve `name` as CurvePoints
    """
    return [CurvePoint(ratio=ratio, metric_name=metric, value=value) for ratio, metric, value in fixture_rows(name)]


def fixture_is_monotone(points: Sequence[CurvePoint]) -> bool:
    """
    Whether every metric's curve is non-increasing in r
    """
    by_metric: Dict[str, List[CurvePoint]] = {}
    for point in points:
        by_metric.setdefault(point.metric_name, []).append(point)
    for curve in by_metric.values():
        values = [point.value for point in sorted(curve, key=lambda p: p.ratio)]
        if any(later > earlier for earlier, later in zip(values, values[1:])):
            return False
    return True


### Files

def write_curve_csv(points: Sequence[CurvePoint], path: str) -> None:
    frame = pd.DataFrame([(p.ratio, p.metric_name, p.value) for p in points], columns=["ratio", "metric", "value"])
    frame.to_csv(path, index=False)


def read_curve_csv(path: str) -> List[CurvePoint]:
    frame = read_table(path, {"ratio": float, "metric": str, "value": float})
    try:
        return [
            CurvePoint(ratio=row.ratio, metric_name=row.metric, value=row.value)
            for row in frame.itertuples(index=False)
        ]
    except ValidationError as e:
        raise TableFormatError(f"Bad curve row in {path}: {e}") from e


def write_metrics_csv(rows: Sequence[SampleMetrics], path: str) -> None:
    frame = pd.DataFrame([(r.sample_id, r.epe, r.fl) for r in rows], columns=["sample_id", "epe", "fl"])
    frame.to_csv(path, index=False)


def read_metrics_csv(path: str) -> List[SampleMetrics]:
    frame = read_table(path, {"sample_id": str, "epe": float, "fl": float})
    try:
        return [SampleMetrics(sample_id=row.sample_id, epe=row.epe, fl=row.fl) for row in frame.itertuples(index=False)]
    except ValidationError as e:
        raise TableFormatError(f"Bad metrics row in {path}: {e}") from e


def write_corr_csv(matrix: pd.DataFrame, path: str) -> None:
    matrix.to_csv(path, index_label="name")


def read_corr_csv(path: str) -> pd.DataFrame:
    frame = read_table(path, {}, index_col=0)
    try:
        return frame.astype(float)
    except ValueError as e:
        raise TableFormatError(f"Correlation table {path} holds non-numeric entries") from e
