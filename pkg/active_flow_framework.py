import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

### Internal classes
from agents.planning_agent import PlanningAgent
from log_utils import BG_BLUE, RESET, WHITE, PlainFormatter
from models.experiment import ExperimentConfig, ExperimentResult

load_dotenv(override=True)

LOG_FORMAT = "[%(asctime)s] [ActiveFlow] [%(levelname)s] %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S %z"


def default_threads() -> int:
    return max(1, int(os.getenv("ACTIVE_FLOW_THREADS", "1")))


def default_out_dir() -> str:
    return os.getenv("ACTIVE_FLOW_OUT", "runs")


class ConsoleHandler(logging.StreamHandler):
    pass


class LogFileHandler(logging.FileHandler):
    pass


def init_logging(verbose: bool = False, log_file: Optional[str] = None):
    """
    Register and configure logging for the pipeline
    :param verbose: log DEBUG messages (per-iteration optimizer traces)
    :param log_file: also write the log, without colors, to this file
    """
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger()
    root.setLevel(level)

    ### Remove handlers of an earlier call so that messages are not duplicated
    for h in list(root.handlers):
        if isinstance(h, (ConsoleHandler, LogFileHandler)):
            root.removeHandler(h)
            h.close()

    handler = ConsoleHandler(sys.stdout)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    root.addHandler(handler)

    if log_file:
        file_handler = LogFileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(PlainFormatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        root.addHandler(file_handler)


class ActiveFlowFramework:
    MEMORY_FILENAME = "results.json"

    def __init__(self, config: ExperimentConfig, out_dir: Optional[str] = None, threads: Optional[int] = None,
                 show_progress: bool = False):
        """
        :param config: the experiment to run
        :param out_dir: where artifacts and the results memory go (ACTIVE_FLOW_OUT by default)
        :param threads: samples processed in parallel (ACTIVE_FLOW_THREADS by default)
        :param show_progress: show tqdm bars
        """
        if not any(isinstance(h, ConsoleHandler) for h in logging.getLogger().handlers):
            init_logging()
        self.config = config
        self.out_dir = out_dir or default_out_dir()
        self.threads = threads or default_threads()
        self.show_progress = show_progress
        self.memory: List[ExperimentResult] = self.read_memory()
        self.planner = None # lazy initialization

    @property
    def memory_path(self) -> str:
        return os.path.join(self.out_dir, self.MEMORY_FILENAME)

    def init_agent_as_needed(self):
        if not self.planner:
            self.log("Initializing Active Flow Framework...")
            self.planner = PlanningAgent(self.config, self.threads, self.show_progress)
            self.log("Active Flow Framework is ready!")

    def read_memory(self) -> List[ExperimentResult]:
        """
        Read the results of an earlier run from results.json
        :return: the stored results, or an empty list if there is no memory file
        """
        if os.path.exists(self.memory_path):
            with open(self.memory_path, "r") as f:
                data: List[dict] = json.load(f)
            return [ExperimentResult(**result) for result in data]
        return []

    def write_memory(self) -> None:
        data: List[dict] = [result.model_dump() for result in self.memory]
        os.makedirs(self.out_dir, exist_ok=True)
        with open(self.memory_path, "w") as f:
            json.dump(data, f, indent=2)

    def log(self, message: str):
        text = BG_BLUE + WHITE + "[Active Flow Framework] " + message + RESET
        logging.info(text)

    def run(self) -> List[ExperimentResult]:
        """
        Run the planner over the configured experiment and replace the memory with its results

        Process:
        1. Init the planning agent
        2. Run every (arm, r, seed) of the experiment
        3. Store the results in results.json next to the other artifacts

        :return: one result per (arm, r, seed)
        """
        if self.memory:
            self.log(f"Replacing {len(self.memory)} results of an earlier run in {self.out_dir}")
        self.init_agent_as_needed()
        self.memory = self.planner.plan(self.out_dir)
        self.write_memory()
        self.log(f"Planning Agent has completed and returned {len(self.memory)} results")
        return self.memory
