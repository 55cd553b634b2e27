import math
from typing import List, Mapping, Sequence

import pandas as pd

from agents.agents import Agent
from models.analysis import SampleMetrics, corr_matrix, epe, fl_rate
from models.core import Dataset, SampleEstimate
from models.errors import RecordMismatchError
from models.uncertainty import ScoreRecord


class EvaluationAgent(Agent):

    name = "Evaluation Agent"
    color = Agent.GREEN

    def evaluate(self, dataset: Dataset, estimates: Mapping[str, SampleEstimate]) -> List[SampleMetrics]:
        """
        EPE and Fl of each forward estimate against the sample's ground truth
        :param dataset: samples carrying ground truth
        :param estimates: estimates by sample id
        :return: one row per sample, in dataset order
        """
        rows = []
        for sample in dataset:
            if sample.label is None:
                raise ValueError(f"Sample {sample.id} has no ground truth to evaluate against")
            if sample.id not in estimates:
                raise RecordMismatchError(f"No estimate for sample {sample.id}")
            forward = estimates[sample.id].forward
            rows.append(SampleMetrics(sample_id=sample.id, epe=epe(forward, sample.label),
                                      fl=fl_rate(forward, sample.label)))
        return rows

    @staticmethod
    def mean_epe(rows: Sequence[SampleMetrics]) -> float:
        return math.fsum(row.epe for row in rows) / len(rows) if rows else 0.0

    @staticmethod
    def mean_fl(rows: Sequence[SampleMetrics]) -> float:
        return math.fsum(row.fl for row in rows) / len(rows) if rows else 0.0

    def correlations(self, records: Sequence[ScoreRecord], rows: Sequence[SampleMetrics]) -> pd.DataFrame:
        """
        Pearson matrix of every score against every other score and the per-sample EPE
        """
        matrix = corr_matrix(records, {row.sample_id: row.epe for row in rows})
        for name in matrix.columns:
            if name != "epe":
                self.log(f"{self.name}: pearson({name}, epe) = {matrix.loc[name, 'epe']:+.3f}")
        return matrix
