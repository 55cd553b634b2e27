import math
import os
from typing import Dict, List, Optional

from agents.agents import Agent
from agents.estimator_agent import EstimatorAgent
from agents.evaluation_agent import EvaluationAgent
from agents.scoring_agent import ScoringAgent
from agents.synth_agent import SynthAgent
from models.analysis import CurvePoint, write_corr_csv, write_curve_csv, write_metrics_csv
from models.core import Dataset, SampleEstimate
from models.experiment import ExperimentConfig, ExperimentResult
from models.uncertainty import ScoreMetric, ScoreRecord, Strategy, write_scores_csv, write_selection


def arm_slug(arm: str) -> str:
    return arm.replace(":", "-")


class PlanningAgent(Agent):

    name = "Planning Agent"
    color = Agent.MAGENTA

    def __init__(self, config: ExperimentConfig, threads: int = 1, show_progress: bool = False):
        """
        Create the agents this planner coordinates
        :param config: the experiment to run
        :param threads: samples processed in parallel by every stage
        :param show_progress: show tqdm bars for the long stages
        """
        self.log("Planning Agent is initializing...")
        self.config = config
        self.synth = SynthAgent(threads)
        self.estimator = EstimatorAgent(config.optimizer_config, threads, show_progress)
        self.scorer = ScoringAgent(config.loss, threads, show_progress)
        self.evaluator = EvaluationAgent()
        self.log("Planning Agent is ready!")

    def dataset(self, out_dir: str) -> Dataset:
        if self.config.manifest is not None:
            return self.synth.load(self.config.manifest)
        dataset, _ = self.synth.generate(self.config.dataset_recipe, os.path.join(out_dir, "data"))
        return dataset

    def candidates(self, dataset: Dataset) -> Dataset:
        """
        The samples open to label queries under the configured schedule
        """
        if self.config.schedule != "C":
            return dataset
        candidate, rest = dataset.split(self.config.candidate_fraction, self.config.split_seed)
        ### Per-sample optimization has no pretraining stage; the held-out samples only stay unseen
        self.log(f"{self.name} split {len(dataset)} samples into {len(candidate)} candidates "
                 f"and {len(rest)} non-candidates")
        return candidate

    def run_arm(
            self,
            candidate: Dataset,
            base: Dict[str, SampleEstimate],
            records: List[ScoreRecord],
            arm: str,
            strategy: Strategy,
            metric: Optional[ScoreMetric],
            ratio: float,
            seed: int,
            out_dir: str,
    ) -> ExperimentResult:
        """
        Select, re-optimize the chosen samples with their labels and evaluate the whole candidate set
        """
        selection = self.scorer.select(records, candidate, ratio, strategy, seed, metric)
        os.makedirs(os.path.join(out_dir, "selections"), exist_ok=True)
        write_selection(selection, os.path.join(out_dir, "selections", f"{arm_slug(arm)}_r{ratio:g}_s{seed}.json"))

        labeled = self.estimator.estimate_all(candidate.subset(selection.chosen), labeled_ids=selection.chosen)
        estimates = {sample_id: labeled.get(sample_id, estimate) for sample_id, estimate in base.items()}
        rows = self.evaluator.evaluate(candidate, estimates)
        return ExperimentResult(
            arm=arm,
            ratio=ratio,
            seed=seed,
            labeled=len(selection.chosen),
            mean_epe=self.evaluator.mean_epe(rows),
            mean_fl=self.evaluator.mean_fl(rows),
        )

    def curves(self, results: List[ExperimentResult]) -> Dict[str, List[CurvePoint]]:
        """
        Per arm, the seed-averaged mean EPE and Fl at every budget
        """
        curves: Dict[str, List[CurvePoint]] = {}
        for arm, _, _ in self.config.arms():
            points = []
            for ratio in dict.fromkeys(self.config.budgets):
                runs = [r for r in results if r.arm == arm and r.ratio == ratio]
                points.append(CurvePoint(ratio=ratio, metric_name="epe",
                                         value=math.fsum(r.mean_epe for r in runs) / len(runs)))
                points.append(CurvePoint(ratio=ratio, metric_name="fl",
                                         value=math.fsum(r.mean_fl for r in runs) / len(runs)))
            curves[arm] = points
        return curves

    def plan(self, out_dir: str) -> List[ExperimentResult]:
        """
        Run the full workflow:
        1. Generate or load the dataset and pick the candidate set
        2. Use the EstimatorAgent to optimize every candidate without labels
        3. Use the ScoringAgent to score the candidates and the EvaluationAgent to correlate scores with EPE
        4. For every (arm, r, seed), select, re-optimize the chosen samples with labels and evaluate
        5. Write one curve CSV per arm
        :param out_dir: where every artifact goes
        :return: one result per (arm, r, seed)
        """
        self.log(f"{self.name} is starting the workflow (schedule {self.config.schedule})...")
        os.makedirs(out_dir, exist_ok=True)
        config = self.config
        dataset = self.dataset(out_dir)
        candidate = self.candidates(dataset)

        base = self.estimator.estimate_all(candidate)
        rows = self.evaluator.evaluate(candidate, base)
        write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
        self.log(f"{self.name}: unlabeled mean EPE {self.evaluator.mean_epe(rows):.4f}")

        records: List[ScoreRecord] = []
        if config.schedule == "A":
            self.warn(f"{self.name}: schedule A assigns labels at random before optimization, scoring skipped")
        elif config.metrics:
            records = self.scorer.score_all(candidate, base, config.metrics)
            write_scores_csv(records, os.path.join(out_dir, "scores.csv"))
            write_corr_csv(self.evaluator.correlations(records, rows), os.path.join(out_dir, "corr.csv"))

        results = []
        for arm, strategy, metric in config.arms():
            for ratio in dict.fromkeys(config.budgets):
                for seed in config.seeds:
                    result = self.run_arm(candidate, base, records, arm, strategy, metric, ratio, seed, out_dir)
                    self.log(f"{self.name}: {arm} r={ratio:g} seed={seed} mean EPE {result.mean_epe:.4f}")
                    results.append(result)

        curve_dir = os.path.join(out_dir, "curves")
        os.makedirs(curve_dir, exist_ok=True)
        for arm, points in self.curves(results).items():
            write_curve_csv(points, os.path.join(curve_dir, f"curve_{arm_slug(arm)}.csv"))
        self.log("Planning Agent has completed a run!")
        return results
