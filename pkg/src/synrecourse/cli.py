"""Command-line entry point: ``synrecourse <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .agent import TrainingDivergenceError
from .bench import run_bench
from .blackbox import FormulaBlackBox, MLPBlackBox, QueryCounter, TrainingError, accuracy, train_mlp
from .data import DataLoadError, load_dataset, sample_synthetic, save_dataset, train_test_split
from .distill import ExplainableProgram, InsufficientTracesError, ProgramDistiller
from .recourse import RecourseAgent, write_training_log
from .schema import SchemaError
from .task import ConfigError, load_task

EXIT_USAGE = 1
EXIT_RUNTIME = 2

RUNTIME_ERRORS = (
    ConfigError,
    SchemaError,
    DataLoadError,
    TrainingError,
    TrainingDivergenceError,
    InsufficientTracesError,
    FileNotFoundError,
    ValueError,
    RuntimeError,
)

config_opt = click.option("--config", "config", default="syn", show_default=True,
                          help="Shipped task name or path to a task YAML.")
seed_opt = click.option("--seed", default=0, show_default=True, type=int)
out_opt = click.option("--out", required=True, type=click.Path(dir_okay=False))
classifier_opt = click.option(
    "--classifier", default="formula", show_default=True,
    help="'formula' for the task's label function, or a saved MLP file.",
)
split_help = "Which part of the 80/20 split to use."


def _blackbox(source: str, task):
    if source == "formula":
        if task.label is None:
            raise ConfigError(f"task {task.name!r} has no label formula; pass --classifier FILE")
        return FormulaBlackBox(task.label, task.name)
    return MLPBlackBox.load(source, task.encoder)


def _users(data: str, task, split: str, seed: int):
    ds = load_dataset(data, task.schema)
    if split != "all":
        train, test = train_test_split(ds, seed=seed)
        ds = train if split == "train" else test
    return ds


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=1)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text)


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Counterfactual interventions with search-guided agents and distilled programs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("gen-data")
@config_opt
@click.option("--n", "n", default=10004, show_default=True, type=click.IntRange(min=0))
@seed_opt
@click.option("--balanced/--natural", default=True, show_default=True,
              help="Rejection-sample an even favourable/unfavourable split.")
@out_opt
def gen_data(config, n, seed, balanced, out):
    """Sample a synthetic dataset from the task's causal graph."""
    task = load_task(config)
    ds = sample_synthetic(task, n, seed=seed, balanced=balanced)
    save_dataset(ds, out)
    click.echo(f"wrote {len(ds.rows)} rows ({int(np.sum(ds.labels))} favourable) to {out}")


@cli.command("fit-classifier")
@config_opt
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--epochs", default=300, show_default=True, type=int)
@seed_opt
@out_opt
def fit_classifier(config, data, epochs, seed, out):
    """Train the MLP black box on a dataset (80% split)."""
    task = load_task(config)
    ds = load_dataset(data, task.schema)
    train, test = train_test_split(ds, seed=seed)
    model = train_mlp(train, task.encoder, epochs=epochs, seed=seed)
    model.save(out)
    click.echo(f"test accuracy {accuracy(model, test):.3f}; saved {out}")


@cli.command()
@config_opt
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@classifier_opt
@click.option("--episodes", default=1000, show_default=True, type=click.IntRange(min=0))
@click.option("--budget", default=200, show_default=True, type=click.IntRange(min=1),
              help="Simulations per move while training.")
@click.option("--alpha", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--lambda", "lam", default=0.9, show_default=True, type=float)
@seed_opt
@click.option("--log", "log_path", type=click.Path(dir_okay=False), help="Per-episode CSV log.")
@out_opt
def train(config, data, classifier, episodes, budget, alpha, lam, seed, log_path, out):
    """Train the agent on the unfavourable users of the training split."""
    task = load_task(config)
    users = _users(data, task, "train", seed)
    est = RecourseAgent(task, _blackbox(classifier, task), alpha=alpha, lam=lam,
                        train_budget=budget, episodes=episodes, seed=seed)
    est.fit(users.rows)
    est.save(out)
    if log_path:
        write_training_log(est.log_, log_path)
    recent = [e.success for e in est.log_[-100:]]
    rate = float(np.mean(recent)) if recent else float("nan")
    click.echo(f"{len(est.log_)} episodes, recent success {rate:.2f}, "
               f"{est.train_queries_} training queries; saved {out}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", type=click.Path(exists=True, dir_okay=False))
@click.option("--user", "user_json", help="A single user as a JSON object.")
@click.option("--split", type=click.Choice(["test", "train", "all"]), default="test",
              show_default=True, help=split_help)
@classifier_opt
@click.option("--budget", default=30, show_default=True, type=click.IntRange(min=0),
              help="Simulations per move (0 = agent alone).")
@click.option("--limit", type=int, help="Only the first N users.")
@seed_opt
@click.option("--out", type=click.Path(dir_okay=False))
def intervene(checkpoint, data, user_json, split, classifier, budget, limit, seed, out):
    """Generate interventions for held-out users."""
    est = RecourseAgent.load(checkpoint)
    task = est.task_
    est.blackbox = _blackbox(classifier, task)
    est._setup()
    users = _select_users(task, data, user_json, split, seed, limit)
    records = [r.to_record() for r in est.predict(users, budget)]
    _emit(records, out)


def _select_users(task, data, user_json, split, seed, limit):
    if (data is None) == (user_json is None):
        raise click.UsageError("give exactly one of --data or --user")
    if user_json is not None:
        users = [task.state(json.loads(user_json))]
    else:
        users = list(_users(data, task, split, seed).rows)
    return users[:limit] if limit else users


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", type=click.Choice(["train", "test", "all"]), default="train",
              show_default=True, help=split_help)
@classifier_opt
@click.option("--traces", "M", default=250, show_default=True, type=click.IntRange(min=1))
@click.option("--budget", default=30, show_default=True, type=click.IntRange(min=1))
@seed_opt
@out_opt
def distill(checkpoint, data, split, classifier, M, budget, seed, out):
    """Distill the agent into an explainable program."""
    est = RecourseAgent.load(checkpoint)
    est.blackbox = _blackbox(classifier, est.task_)
    est._setup()
    users = _users(data, est.task_, split, seed)
    d = ProgramDistiller(est, n_traces=M, budget=budget, seed=seed).fit(users.rows)
    d.program_.save(out)
    click.echo(f"program from {M} traces, {est.counter_.counts['distill-train']} queries; saved {out}")


@cli.command()
@click.option("--program", "program_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", type=click.Path(exists=True, dir_okay=False))
@click.option("--user", "user_json", help="A single user as a JSON object.")
@click.option("--split", type=click.Choice(["test", "train", "all"]), default="test",
              show_default=True, help=split_help)
@click.option("--alpha", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--limit", type=int)
@seed_opt
@click.option("--out", type=click.Path(dir_okay=False))
def explain(program_path, data, user_json, split, alpha, limit, seed, out):
    """Run the program: actions plus the rule behind each one. No classifier calls."""
    program = ExplainableProgram.load(program_path)
    users = _select_users(program.task, data, user_json, split, seed, limit)
    records = []
    for u in users:
        run = program.run(u, alpha)
        records.append({
            "user": u.as_dict(),
            "completed": run.completed,
            "failure": run.failure,
            "steps": run.explanation(),
        })
    _emit(records, out)


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--program", "program_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@classifier_opt
@click.option("--budget", default=30, show_default=True, type=click.IntRange(min=1))
@click.option("--users", "n_users", default=100, show_default=True, type=click.IntRange(min=1))
@click.option("--sweep/--no-sweep", default=False, show_default=True,
              help="Also run the trace budget sweep (M = 100, 250, 700; 3 seeds).")
@seed_opt
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def bench(checkpoint, program_path, data, classifier, budget, n_users, sweep, seed, out):
    """Compare agent+search, agent alone and the program on held-out users."""
    est = RecourseAgent.load(checkpoint)
    est.blackbox = _blackbox(classifier, est.task_)
    est._setup()
    program = ExplainableProgram.load(program_path, est.task_)
    ds = load_dataset(data, est.task_.schema)
    train_ds, test_ds = train_test_split(ds, seed=seed)
    report = run_bench(est, program, test_ds.rows, budget, n_users,
                       sweep_pool=train_ds.rows if sweep else None)
    report.save(out)
    table = report.table()
    Path(out).with_suffix(".txt").write_text(table + "\n")
    click.echo(table)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="synrecourse", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except RUNTIME_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
