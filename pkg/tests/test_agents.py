import json
import logging
import os
import time

import numpy as np
import pytest
from pydantic import ValidationError

from active_flow_framework import ActiveFlowFramework, ConsoleHandler, LogFileHandler, init_logging
from agents.estimator_agent import EstimatorAgent
from agents.evaluation_agent import EvaluationAgent
from agents.planning_agent import PlanningAgent, arm_slug
from agents.scoring_agent import ScoringAgent
from agents.synth_agent import SynthAgent
from log_utils import BG_BLACK, RESET, strip_colors
from models.analysis import read_curve_csv
from models.core import Dataset, FlowField, LossConfig, Sample, SampleEstimate
from models.errors import RecordMismatchError
from models.experiment import ExperimentConfig, ExperimentResult
from models.synth import SynthConfig
from models.uncertainty import ScoreMetric, Strategy

from conftest import FAST_OPTIMIZER

SMALL_DATA = SynthConfig(count=4, width=32, height=32, seed=3)


def small_experiment(**overrides) -> ExperimentConfig:
    settings = dict(
        synth=SMALL_DATA,
        schedule="B",
        budgets=[0.0, 1.0],
        strategies=[Strategy.RANDOM],
        metrics=[],
        seeds=[0],
        loss=LossConfig(alpha=10.0),
        optimizer=FAST_OPTIMIZER,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


@pytest.fixture
def small_dataset():
    dataset, _ = SynthAgent().generate(SMALL_DATA)
    return dataset


def test_agent_messages_carry_name_and_color(caplog):
    with caplog.at_level(logging.INFO):
        SynthAgent().generate(SynthConfig(count=1, width=32, height=32))
    message = caplog.records[0].getMessage()
    assert message.startswith(BG_BLACK)
    assert message.endswith(RESET)
    assert strip_colors(message).startswith("[Synth Agent] ")


def test_init_logging_replaces_its_handlers(tmp_path):
    log_file = str(tmp_path / "run.log")
    init_logging()
    init_logging(verbose=True, log_file=log_file)
    root = logging.getLogger()
    assert sum(isinstance(h, ConsoleHandler) for h in root.handlers) == 1
    assert sum(isinstance(h, LogFileHandler) for h in root.handlers) == 1
    assert root.level == logging.DEBUG
    SynthAgent().log("hello")
    for handler in root.handlers:
        handler.flush()
    with open(log_file) as f:
        text = f.read()
    assert "[Synth Agent] hello" in text
    assert "\033[" not in text


def test_estimator_agent_caches_by_sample_and_label(small_dataset):
    agent = EstimatorAgent(FAST_OPTIMIZER, threads=2)
    first = agent.estimate_all(small_dataset)
    second = agent.estimate_all(small_dataset, labeled_ids=["s0001"])
    assert list(first) == small_dataset.ids
    assert second["s0000"] is first["s0000"]
    assert second["s0001"] is not first["s0001"]
    assert len(agent.cache) == 5


def test_estimates_do_not_depend_on_thread_count(small_dataset):
    single = EstimatorAgent(FAST_OPTIMIZER, threads=1).estimate_all(small_dataset)
    pooled = EstimatorAgent(FAST_OPTIMIZER, threads=4).estimate_all(small_dataset)
    for sample_id in small_dataset.ids:
        np.testing.assert_array_equal(single[sample_id].forward.uv, pooled[sample_id].forward.uv)


def test_flows_written_and_read_back(tmp_path, rng):
    estimates = {"a": SampleEstimate(FlowField(rng.normal(size=(4, 5, 2))), FlowField(rng.normal(size=(4, 5, 2))))}
    agent = EstimatorAgent(FAST_OPTIMIZER)
    agent.write_flows(estimates, str(tmp_path))
    assert sorted(os.listdir(tmp_path)) == ["a.flo", "a_bwd.flo"]
    both = EstimatorAgent.read_flows(str(tmp_path), ["a"])
    np.testing.assert_allclose(both["a"].backward.uv, estimates["a"].backward.uv, atol=1e-6)
    forward_only = EstimatorAgent.read_flows(str(tmp_path), ["a"], backward=False)
    np.testing.assert_array_equal(forward_only["a"].backward.uv, 0.0)


def test_scoring_agent_orders_records_by_sample_then_metric(small_dataset, cfg):
    estimates = {sample_id: SampleEstimate(FlowField.zeros(32, 32), FlowField.zeros(32, 32))
                 for sample_id in small_dataset.ids}
    metrics = [ScoreMetric.OCC_RATIO, ScoreMetric.COLOR_CHANGE]
    records = ScoringAgent(cfg, threads=3).score_all(small_dataset, estimates, metrics)
    assert [(r.sample_id, r.metric) for r in records] == [(i, m) for i in small_dataset.ids for m in metrics]
    assert all(r.value == 0.0 for r in records if r.metric == ScoreMetric.OCC_RATIO)


def test_scoring_agent_needs_estimates_for_flow_metrics(small_dataset, cfg):
    scorer = ScoringAgent(cfg)
    with pytest.raises(ValueError):
        scorer.score_all(small_dataset, {}, [ScoreMetric.PHOTO_LOSS])
    assert len(scorer.score_all(small_dataset, {}, [ScoreMetric.TEXTURE_SCORE])) == 4


def test_scoring_agent_selects_by_one_metric(small_dataset, cfg):
    scorer = ScoringAgent(cfg)
    records = scorer.score_all(small_dataset, {}, [ScoreMetric.COLOR_CHANGE, ScoreMetric.IMG_GRAD_NORM])
    selection = scorer.select(records, small_dataset, 0.5, Strategy.TOPK, 0, ScoreMetric.COLOR_CHANGE)
    assert len(selection.chosen) == 2
    with pytest.raises(RecordMismatchError):
        scorer.select(records, small_dataset, 0.5, Strategy.TOPK, 0)
    assert len(scorer.select(records, small_dataset, 0.5, Strategy.RANDOM, 0).chosen) == 2


def test_evaluation_agent(small_dataset):
    estimates = {s.id: SampleEstimate(s.label, FlowField.zeros(32, 32)) for s in small_dataset}
    evaluator = EvaluationAgent()
    rows = evaluator.evaluate(small_dataset, estimates)
    assert [row.epe for row in rows] == [0.0] * 4
    assert evaluator.mean_epe(rows) == 0.0
    assert evaluator.mean_fl([]) == 0.0
    with pytest.raises(RecordMismatchError):
        evaluator.evaluate(small_dataset, {})
    unlabeled = Dataset([Sample("u", small_dataset.get("s0000").frame1, small_dataset.get("s0000").frame2)])
    with pytest.raises(ValueError):
        evaluator.evaluate(unlabeled, estimates)


def test_arm_names():
    config = ExperimentConfig(strategies=[Strategy.RANDOM, Strategy.TOPK, Strategy.TOPK],
                              metrics=[ScoreMetric.OCC_RATIO, ScoreMetric.PHOTO_LOSS])
    assert [name for name, _, _ in config.arms()] == ["random", "topk:occ_ratio", "topk:photo_loss"]
    assert arm_slug("topk:occ_ratio") == "topk-occ_ratio"
    schedule_a = ExperimentConfig(schedule="A", strategies=[Strategy.RANDOM, Strategy.TOPK])
    assert [name for name, _, _ in schedule_a.arms()] == ["random"]


def test_experiment_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(synth=SMALL_DATA, manifest="manifest.json")
    with pytest.raises(ValidationError):
        ExperimentConfig(candidate_fraction=0.5, non_candidate_fraction=0.4)
    with pytest.raises(ValidationError):
        ExperimentConfig(budgets=[0.0, 1.5])
    with pytest.raises(ValidationError):
        ExperimentConfig(schedule="A", strategies=[Strategy.TOPK])
    with pytest.raises(ValidationError):
        ExperimentConfig(strategies=[Strategy.TOPK], metrics=[])
    with pytest.raises(ValidationError):
        ExperimentConfig(optimizer=FAST_OPTIMIZER.model_copy(update={"loss": LossConfig(alpha=2.0)}),
                         loss=LossConfig())
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"budget": [0.1]})


def test_experiment_loss_reaches_the_optimizer():
    config = ExperimentConfig(loss=LossConfig(lambda_sm=75.0))
    assert config.optimizer_config.lambda_sm == 75.0
    assert config.dataset_recipe == SynthConfig()


def test_schedule_c_splits_the_candidates(small_dataset):
    planner = PlanningAgent(small_experiment(schedule="C", candidate_fraction=0.5, non_candidate_fraction=0.5))
    assert len(planner.candidates(small_dataset)) == 2
    assert len(PlanningAgent(small_experiment()).candidates(small_dataset)) == 4


@pytest.mark.slow
def test_labels_lower_the_error(tmp_path):
    results = PlanningAgent(small_experiment()).plan(str(tmp_path))
    by_ratio = {result.ratio: result for result in results}
    assert sorted(by_ratio) == [0.0, 1.0]
    assert by_ratio[0.0].labeled == 0
    assert by_ratio[1.0].labeled == 4
    assert by_ratio[1.0].mean_epe <= by_ratio[0.0].mean_epe
    with open(tmp_path / "curves" / "curve_random.csv") as f:
        lines = f.read().splitlines()
    assert lines[0] == "ratio,metric,value"
    assert [line.split(",")[:2] for line in lines[1:]] == [["0.0", "epe"], ["0.0", "fl"], ["1.0", "epe"], ["1.0", "fl"]]
    assert os.path.exists(tmp_path / "selections" / "random_r1_s0.json")
    assert not os.path.exists(tmp_path / "scores.csv")


@pytest.mark.slow
def test_framework_runs_are_reproducible_and_remembered(tmp_path):
    config = small_experiment(
        schedule="C",
        strategies=[Strategy.RANDOM, Strategy.TOPK],
        metrics=[ScoreMetric.OCC_RATIO, ScoreMetric.FLOW_GRAD_NORM],
        budgets=[0.0, 0.5],
        seeds=[0, 1],
    )
    first = ActiveFlowFramework(config, str(tmp_path / "one"), threads=1).run()
    second = ActiveFlowFramework(config, str(tmp_path / "two"), threads=4).run()
    assert first == second
    assert len(first) == 3 * 2 * 2
    for name in ("metrics.csv", "scores.csv", "corr.csv", "curves/curve_topk-occ_ratio.csv", "results.json"):
        with open(tmp_path / "one" / name, "rb") as a, open(tmp_path / "two" / name, "rb") as b:
            assert a.read() == b.read(), name

    remembered = ActiveFlowFramework(config, str(tmp_path / "one"))
    assert remembered.memory == first
    with open(tmp_path / "one" / "results.json") as f:
        assert ExperimentResult(**json.load(f)[0]) == first[0]


@pytest.mark.slow
def test_schedule_a_warns_that_scoring_is_skipped(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        PlanningAgent(small_experiment(schedule="A", metrics=[ScoreMetric.OCC_RATIO])).plan(str(tmp_path))
    warnings = [strip_colors(r.getMessage()) for r in caplog.records if r.levelno == logging.WARNING]
    assert any("scoring skipped" in message for message in warnings)
    assert not os.path.exists(tmp_path / "scores.csv")


### The full-size synthetic benchmark, optimized once with the default settings and shared below

BENCHMARK_THREADS = os.cpu_count() or 1
BENCHMARK_DATA = SynthConfig()
BENCHMARK_METRICS = [ScoreMetric.PHOTO_LOSS, ScoreMetric.OCC_RATIO, ScoreMetric.FLOW_GRAD_NORM]


@pytest.fixture(scope="module")
def benchmark_estimator():
    return EstimatorAgent(ExperimentConfig().optimizer_config, threads=BENCHMARK_THREADS)


def benchmark_planner(config: ExperimentConfig, estimator: EstimatorAgent) -> PlanningAgent:
    planner = PlanningAgent(config, threads=BENCHMARK_THREADS)
    planner.estimator = estimator
    return planner


@pytest.mark.slow
def test_label_ratio_curve_is_non_increasing_and_fast(tmp_path, benchmark_estimator):
    config = ExperimentConfig(
        synth=BENCHMARK_DATA,
        schedule="B",
        budgets=[0.0, 0.25, 0.5, 1.0],
        strategies=[Strategy.RANDOM],
        metrics=[],
        seeds=[0, 1, 2],
    )
    started = time.perf_counter()
    benchmark_planner(config, benchmark_estimator).plan(str(tmp_path))
    elapsed = time.perf_counter() - started

    curve = [p.value for p in read_curve_csv(str(tmp_path / "curves" / "curve_random.csv")) if p.metric_name == "epe"]
    assert len(curve) == 4
    for earlier, later in zip(curve, curve[1:]):
        assert later <= earlier * 1.02, curve
    assert elapsed < 300.0


@pytest.mark.slow
def test_occlusion_top_k_beats_random_selection(tmp_path, benchmark_estimator):
    config = ExperimentConfig(
        synth=BENCHMARK_DATA,
        schedule="B",
        budgets=[0.2],
        strategies=[Strategy.RANDOM, Strategy.TOPK],
        metrics=[ScoreMetric.OCC_RATIO],
        seeds=[0, 1, 2, 3, 4],
    )
    results = benchmark_planner(config, benchmark_estimator).plan(str(tmp_path))
    random_epe = {r.seed: r.mean_epe for r in results if r.arm == "random"}
    topk_epe = {r.seed: r.mean_epe for r in results if r.arm == "topk:occ_ratio"}
    assert sorted(random_epe) == sorted(topk_epe) == [0, 1, 2, 3, 4]
    wins = sum(topk_epe[seed] <= random_epe[seed] for seed in random_epe)
    assert wins >= 4, (topk_epe, random_epe)


@pytest.mark.slow
def test_uncertainty_scores_correlate_with_the_error(benchmark_estimator):
    dataset, _ = SynthAgent(BENCHMARK_THREADS).generate(BENCHMARK_DATA)
    estimates = benchmark_estimator.estimate_all(dataset)
    records = ScoringAgent(LossConfig(), threads=BENCHMARK_THREADS).score_all(dataset, estimates, BENCHMARK_METRICS)
    evaluator = EvaluationAgent()
    matrix = evaluator.correlations(records, evaluator.evaluate(dataset, estimates))
    for metric in BENCHMARK_METRICS:
        assert matrix.loc[metric.value, "epe"] > 0.3, metric
