from typing import Optional, Tuple

from agents.agents import Agent
from models.core import Dataset
from models.flow_io import Manifest, load_dataset
from models.synth import SynthConfig, gen_dataset, write_dataset


class SynthAgent(Agent):

    name = "Synth Agent"
    color = Agent.CYAN

    def __init__(self, threads: int = 1):
        """
        :param threads: rendering threads; the rendered data does not depend on it
        """
        self.threads = threads

    def generate(self, config: SynthConfig, out_dir: Optional[str] = None) -> Tuple[Dataset, Manifest]:
        """
        Render a synthetic dataset and, if out_dir is given, write it to disk
        :param config: the dataset recipe
        :param out_dir: where frames, ground truth and manifest.json go
        :return: the dataset and its manifest
        """
        self.log(f"{self.name} is rendering {config.count} samples of {config.width}x{config.height}...")
        dataset, manifest = gen_dataset(config, threads=self.threads)
        if out_dir:
            path = write_dataset(dataset, manifest, out_dir)
            self.log(f"{self.name} wrote the dataset to {path}")
        return dataset, manifest

    def load(self, manifest_path: str) -> Dataset:
        dataset = load_dataset(manifest_path)
        self.log(f"{self.name} loaded {len(dataset)} samples from {manifest_path} (label ratio {dataset.label_ratio:.2f})")
        return dataset
