import os
from concurrent.futures import ThreadPoolExecutor
from typing import Collection, Dict, List, Tuple

from tqdm import tqdm

from agents.agents import Agent
from models.core import Dataset, FlowField, Sample, SampleEstimate
from models.estimator import OptimizerConfig, optimize_flow
from models.flow_io import load_flow, save_flow


class EstimatorAgent(Agent):

    name = "Estimator Agent"
    color = Agent.BLUE

    def __init__(self, cfg: OptimizerConfig, threads: int = 1, show_progress: bool = False):
        """
        :param cfg: optimizer settings shared by every sample
        :param threads: samples optimized in parallel; results do not depend on it
        :param show_progress: show a tqdm bar while optimizing
        """
        self.cfg = cfg
        self.threads = max(1, threads)
        self.show_progress = show_progress
        ### (sample id, labeled) -> estimate; one sample's optimization never depends on another's
        self.cache: Dict[Tuple[str, bool], SampleEstimate] = {}

    def _run(self, job: Tuple[Sample, bool]) -> SampleEstimate:
        sample, labeled = job
        return optimize_flow(sample, labeled, self.cfg)

    def estimate_all(self, dataset: Dataset, labeled_ids: Collection[str] = ()) -> Dict[str, SampleEstimate]:
        """
        Optimize every sample of a dataset, with the supervised term on labeled_ids
        :param dataset: the samples, each needing a label if it is in labeled_ids
        :param labeled_ids: samples optimized against their ground truth
        :return: estimates keyed by sample id, in dataset order
        """
        labeled_ids = set(labeled_ids)
        jobs: List[Tuple[Sample, bool]] = [(sample, sample.id in labeled_ids) for sample in dataset]
        missing = [job for job in jobs if (job[0].id, job[1]) not in self.cache]
        if missing:
            supervised = sum(labeled for _, labeled in missing)
            self.log(f"{self.name} is optimizing {len(missing)} samples ({supervised} with labels)...")
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                results = ex.map(self._run, missing)
                if self.show_progress:
                    results = tqdm(results, total=len(missing), desc="optimize")
                for (sample, labeled), result in zip(missing, results):
                    self.cache[(sample.id, labeled)] = result
        else:
            self.debug(f"{self.name} reused {len(jobs)} cached estimates")
        return {sample.id: self.cache[(sample.id, labeled)] for sample, labeled in jobs}

    @staticmethod
    def forward_path(flows_dir: str, sample_id: str) -> str:
        return os.path.join(flows_dir, f"{sample_id}.flo")

    @staticmethod
    def backward_path(flows_dir: str, sample_id: str) -> str:
        return os.path.join(flows_dir, f"{sample_id}_bwd.flo")

    def write_flows(self, estimates: Dict[str, SampleEstimate], flows_dir: str) -> None:
        """
        Write `<id>.flo` (forward) and `<id>_bwd.flo` (backward) per sample
        """
        os.makedirs(flows_dir, exist_ok=True)
        for sample_id, estimate in estimates.items():
            save_flow(self.forward_path(flows_dir, sample_id), estimate.forward)
            save_flow(self.backward_path(flows_dir, sample_id), estimate.backward)
        self.log(f"{self.name} wrote {len(estimates)} flow pairs to {flows_dir}")

    @classmethod
    def read_flows(cls, flows_dir: str, ids: Collection[str], backward: bool = True) -> Dict[str, SampleEstimate]:
        """
        Read estimates written by write_flows; with backward=False the backward flow is a zero field
        """
        estimates = {}
        for sample_id in ids:
            forward = load_flow(cls.forward_path(flows_dir, sample_id))
            if backward:
                reverse = load_flow(cls.backward_path(flows_dir, sample_id))
            else:
                reverse = FlowField.zeros(forward.width, forward.height)
            estimates[sample_id] = SampleEstimate(forward, reverse)
        return estimates
