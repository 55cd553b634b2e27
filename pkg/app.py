import logging
import sys
from contextlib import contextmanager
from typing import Annotated, List, Optional, Type, TypeVar

import click
import typer
from pydantic import BaseModel, ValidationError

### Internal classes
from active_flow_framework import ActiveFlowFramework, default_out_dir, default_threads, init_logging
from agents.estimator_agent import EstimatorAgent
from agents.evaluation_agent import EvaluationAgent
from agents.scoring_agent import ScoringAgent
from agents.synth_agent import SynthAgent
from models.analysis import curve_fixture, read_metrics_csv, write_corr_csv, write_curve_csv, write_metrics_csv
from models.core import LossConfig
from models.errors import (
    FlowFormatError,
    GradientCheckError,
    TableFormatError,
    UnknownFixtureError,
    UnsupportedFormatError,
)
from models.estimator import OptimizerConfig, check_gradient
from models.experiment import ExperimentConfig
from models.fixtures import list_fixtures
from models.synth import SynthConfig
from models.uncertainty import (
    FLOW_METRICS,
    ScoreMetric,
    Strategy,
    read_scores_csv,
    read_selection,
    write_scores_csv,
    write_selection,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_CHECK = 3

ConfigT = TypeVar("ConfigT", bound=BaseModel)

app = typer.Typer(
    help="Semi-supervised flow estimation and active label selection at desk scale",
    add_completion=False,
    no_args_is_help=True,
)

ThreadsOption = Annotated[Optional[int], typer.Option("--threads", help="Samples processed in parallel")]
ProgressOption = Annotated[bool, typer.Option("--progress", help="Show progress bars")]


@contextmanager
def exit_codes():
    """
    Translate failures into the documented exit codes
    """
    try:
        yield
    except GradientCheckError as e:
        logging.error(str(e))
        raise typer.Exit(EXIT_CHECK)
    except (OSError, FlowFormatError, TableFormatError, UnsupportedFormatError) as e:
        logging.error(f"I/O error: {e}")
        raise typer.Exit(EXIT_IO)
    except (ValidationError, UnknownFixtureError, ValueError) as e:
        logging.error(f"Invalid input: {e}")
        raise typer.Exit(EXIT_USAGE)


def load_config(model: Type[ConfigT], path: Optional[str]) -> ConfigT:
    """
    Validate a JSON config file against a pydantic model; the model defaults when no path is given
    """
    if path is None:
        return model()
    with open(path, "rb") as f:
        return model.model_validate_json(f.read())


def threads_or_default(threads: Optional[int]) -> int:
    return threads if threads is not None else default_threads()


@app.callback()
def main_options(
        verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log DEBUG messages")] = False,
        log_file: Annotated[Optional[str], typer.Option("--log-file", help="Also log, uncolored, to this file")] = None,
):
    init_logging(verbose, log_file)


@app.command("gen")
def cmd_gen(
        out: Annotated[str, typer.Option("--out", help="Output directory")],
        config: Annotated[Optional[str], typer.Option("--config", help="SynthConfig JSON")] = None,
        seed: Annotated[Optional[int], typer.Option("--seed", help="Override the master seed")] = None,
        threads: ThreadsOption = None,
):
    """
    Render a synthetic dataset with exact ground truth
    """
    with exit_codes():
        recipe = load_config(SynthConfig, config)
        if seed is not None:
            recipe = SynthConfig(**{**recipe.model_dump(), "seed": seed})
        SynthAgent(threads_or_default(threads)).generate(recipe, out)


@app.command("optimize")
def cmd_optimize(
        manifest: Annotated[str, typer.Option("--manifest", help="Dataset manifest JSON")],
        out: Annotated[str, typer.Option("--out", help="Directory for <id>.flo and <id>_bwd.flo")],
        selection: Annotated[Optional[str], typer.Option("--selection", help="Selection JSON of labeled samples")] = None,
        config: Annotated[Optional[str], typer.Option("--config", help="OptimizerConfig JSON")] = None,
        threads: ThreadsOption = None,
        progress: ProgressOption = False,
):
    """
    Estimate forward and backward flow for every sample; selected samples use their labels
    """
    with exit_codes():
        cfg = load_config(OptimizerConfig, config)
        dataset = SynthAgent().load(manifest)
        labeled = read_selection(selection).chosen if selection else []
        unknown = [sample_id for sample_id in labeled if sample_id not in dataset]
        if unknown:
            raise ValueError(f"Selection names samples missing from the manifest: {unknown}")
        estimator = EstimatorAgent(cfg, threads_or_default(threads), progress)
        estimator.write_flows(estimator.estimate_all(dataset, labeled_ids=labeled), out)


@app.command("score")
def cmd_score(
        manifest: Annotated[str, typer.Option("--manifest", help="Dataset manifest JSON")],
        out: Annotated[str, typer.Option("--out", help="Scores CSV")],
        metric: Annotated[List[ScoreMetric], typer.Option("--metric", help="Score to compute, repeatable")],
        flows: Annotated[Optional[str], typer.Option("--flows", help="Directory written by optimize")] = None,
        config: Annotated[Optional[str], typer.Option("--config", help="LossConfig JSON")] = None,
        threads: ThreadsOption = None,
        progress: ProgressOption = False,
):
    """
    Compute uncertainty scores of every sample
    """
    with exit_codes():
        cfg = load_config(LossConfig, config)
        dataset = SynthAgent().load(manifest)
        estimates = {}
        if any(m in FLOW_METRICS for m in metric):
            if flows is None:
                raise ValueError("Flow-based metrics need --flows")
            estimates = EstimatorAgent.read_flows(flows, dataset.ids)
        records = ScoringAgent(cfg, threads_or_default(threads), progress).score_all(dataset, estimates, metric)
        write_scores_csv(records, out)


@app.command("select")
def cmd_select(
        scores: Annotated[str, typer.Option("--scores", help="Scores CSV")],
        manifest: Annotated[str, typer.Option("--manifest", help="Dataset manifest JSON")],
        ratio: Annotated[float, typer.Option("--ratio", min=0.0, max=1.0, help="Label ratio r")],
        out: Annotated[str, typer.Option("--out", help="Selection JSON")],
        strategy: Annotated[Strategy, typer.Option("--strategy")] = Strategy.TOPK,
        seed: Annotated[int, typer.Option("--seed", min=0)] = 0,
        metric: Annotated[Optional[ScoreMetric], typer.Option("--metric", help="Ranking metric")] = None,
):
    """
    Choose the samples to label under a budget
    """
    with exit_codes():
        records = read_scores_csv(scores)
        dataset = SynthAgent().load(manifest)
        selection = ScoringAgent(LossConfig()).select(records, dataset, ratio, strategy, seed, metric)
        write_selection(selection, out)


@app.command("evaluate")
def cmd_evaluate(
        flows: Annotated[str, typer.Option("--flows", help="Directory written by optimize")],
        manifest: Annotated[str, typer.Option("--manifest", help="Dataset manifest JSON with ground truth")],
        out: Annotated[str, typer.Option("--out", help="Metrics CSV")],
):
    """
    Per-sample EPE and Fl of estimated forward flows
    """
    with exit_codes():
        dataset = SynthAgent().load(manifest)
        estimates = EstimatorAgent.read_flows(flows, dataset.ids, backward=False)
        evaluator = EvaluationAgent()
        rows = evaluator.evaluate(dataset, estimates)
        write_metrics_csv(rows, out)
        evaluator.log(f"Mean EPE {evaluator.mean_epe(rows):.4f}, mean Fl {evaluator.mean_fl(rows):.2f}%")


@app.command("corr")
def cmd_corr(
        scores: Annotated[List[str], typer.Option("--scores", help="Scores CSV, repeatable")],
        metrics: Annotated[str, typer.Option("--metrics", help="Metrics CSV from evaluate")],
        out: Annotated[str, typer.Option("--out", help="Correlation CSV")],
):
    """
    Pearson correlation of every score with every other score and with EPE
    """
    with exit_codes():
        records = [record for path in scores for record in read_scores_csv(path)]
        rows = read_metrics_csv(metrics)
        write_corr_csv(EvaluationAgent().correlations(records, rows), out)


@app.command("experiment")
def cmd_experiment(
        config: Annotated[Optional[str], typer.Option("--config", help="ExperimentConfig JSON")] = None,
        out: Annotated[Optional[str], typer.Option("--out", help="Output directory")] = None,
        threads: ThreadsOption = None,
        progress: ProgressOption = False,
):
    """
    Optimize, score, select, re-optimize with labels and evaluate; one curve CSV per arm
    """
    with exit_codes():
        experiment = load_config(ExperimentConfig, config)
        ActiveFlowFramework(experiment, out or default_out_dir(), threads_or_default(threads), progress).run()


@app.command("curves")
def cmd_curves(
        fixture: Annotated[str, typer.Option("--fixture", help="Embedded fixture name")],
        out: Annotated[Optional[str], typer.Option("--out", help="Curve CSV; stdout when omitted")] = None,
):
    """
    Emit an embedded published curve
    """
    with exit_codes():
        points = curve_fixture(fixture)
        if out:
            write_curve_csv(points, out)
        else:
            typer.echo("ratio,metric,value")
            for point in points:
                typer.echo(f"{point.ratio},{point.metric_name},{point.value}")


@app.command("fixtures")
def cmd_fixtures():
    """
    List the embedded fixture names
    """
    for name in list_fixtures():
        typer.echo(name)


@app.command("gradcheck")
def cmd_gradcheck(
        seed: Annotated[int, typer.Option("--seed", min=0, help="First instance seed")] = 0,
        count: Annotated[int, typer.Option("--count", min=1, help="Number of seeded instances")] = 10,
        size: Annotated[int, typer.Option("--size", min=4, help="Instance side, pixels")] = 16,
):
    """
    Compare the estimator's analytic gradient with finite differences; exit 3 on failure
    """
    with exit_codes():
        failures = []
        for instance in range(seed, seed + count):
            report = check_gradient(instance, size)
            logging.info(
                f"seed {instance}: photometric {report.photometric:.2e} smoothness {report.smoothness:.2e} "
                f"supervised {report.supervised:.2e} joint {report.joint:.2e}"
            )
            if not report.passed:
                failures.append(instance)
        if failures:
            raise GradientCheckError(f"Gradient check failed for seeds {failures}")
        typer.echo(f"gradient check passed for {count} seeds")


def main():
    try:
        code = app(standalone_mode=False)
    except click.exceptions.UsageError as e:
        e.show()
        code = EXIT_USAGE
    except click.exceptions.Abort:
        code = EXIT_USAGE
    sys.exit(code or EXIT_OK)


if __name__ == "__main__":
    main()
