from concurrent.futures import ThreadPoolExecutor
from typing import List, Mapping, Optional, Sequence, Tuple

from tqdm import tqdm

from agents.agents import Agent
from models.core import Budget, Dataset, LossConfig, Sample, SampleEstimate
from models.uncertainty import (
    FLOW_METRICS,
    ScoreMetric,
    ScoreRecord,
    Selection,
    Strategy,
    records_for_metric,
    score,
    select,
)


class ScoringAgent(Agent):

    name = "Scoring Agent"
    color = Agent.YELLOW

    def __init__(self, cfg: LossConfig, threads: int = 1, show_progress: bool = False):
        """
        :param cfg: photometric weights and occlusion thresholds used by the flow-based scores
        :param threads: samples scored in parallel
        :param show_progress: show a tqdm bar while scoring
        """
        self.cfg = cfg
        self.threads = max(1, threads)
        self.show_progress = show_progress

    def _score_sample(self, job: Tuple[Sample, Optional[SampleEstimate], Sequence[ScoreMetric]]) -> List[ScoreRecord]:
        sample, estimate, metrics = job
        forward = estimate.forward if estimate is not None else None
        backward = estimate.backward if estimate is not None else None
        return [score(sample, forward, backward, metric, self.cfg) for metric in metrics]

    def score_all(
            self,
            dataset: Dataset,
            estimates: Mapping[str, SampleEstimate],
            metrics: Sequence[ScoreMetric],
    ) -> List[ScoreRecord]:
        """
        Score every sample under every metric
        :param dataset: the candidate samples
        :param estimates: unlabeled estimates by sample id; only flow-based metrics need them
        :param metrics: the heuristics to evaluate
        :return: records ordered by sample (dataset order), then by metric
        """
        metrics = [ScoreMetric(metric) for metric in metrics]
        if any(metric in FLOW_METRICS for metric in metrics):
            missing = [sample.id for sample in dataset if sample.id not in estimates]
            if missing:
                raise ValueError(f"No flow estimate for {len(missing)} samples, first {missing[0]}")
        self.log(f"{self.name} is scoring {len(dataset)} samples with {', '.join(m.value for m in metrics)}...")
        jobs = [(sample, estimates.get(sample.id), metrics) for sample in dataset]
        records: List[ScoreRecord] = []
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            results = ex.map(self._score_sample, jobs)
            if self.show_progress:
                results = tqdm(results, total=len(jobs), desc="score")
            for sample_records in results:
                records.extend(sample_records)
        return records

    def select(
            self,
            records: Sequence[ScoreRecord],
            dataset: Dataset,
            ratio: float,
            strategy: Strategy,
            seed: int,
            metric: Optional[ScoreMetric] = None,
    ) -> Selection:
        """
        Pick the samples to label under a label ratio
        :param records: scores, possibly of several metrics
        :param dataset: the candidate samples
        :param ratio: label ratio r
        :param strategy: the selection rule
        :param seed: seed of the strategy's random generator
        :param metric: which metric's records rank the samples; required when records mix metrics
        """
        strategy = Strategy(strategy)
        if strategy == Strategy.RANDOM:
            ranked = []
        elif metric is not None:
            ranked = records_for_metric(records, metric)
        else:
            ranked = list(records)
        selection = select(ranked, dataset, Budget(ratio=ratio), strategy, seed)
        by = f" by {ScoreMetric(metric).value}" if metric is not None and strategy != Strategy.RANDOM else ""
        self.log(f"{self.name} chose {len(selection.chosen)} of {len(dataset)} samples ({strategy.value}{by}, "
                 f"r={ratio}, seed={seed})")
        return selection
