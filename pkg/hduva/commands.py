"""
Command registry and the commands of the hduva command line.

Commands are registered by name together with the keyword arguments they are
called with and a function that declares their own flags.  Every command
function is called as

    command_fn(ctx, progress, **kwargs)

where `ctx` is the CommandContext of the run and `progress(percent)` may be
called periodically.  It returns a (status, outputs) tuple: status is
"completed" (or "mismatch" for a failed replay) and outputs lists the
artifact files written under ctx.run_dir.
"""
import argparse
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torchvision.io import ImageReadMode, read_image

from . import figures
from .checkpoint import load_checkpoint
from .config import RunConfig
from .data import directory_loader
from .errors import ArgumentError, DataIOError
from .evaluation import (ScenarioSplits, lodo_evaluate, reference_for, shift_auc_evaluate,
                         shift_sequence, train_algorithm)
from .mmd import KernelSpec, mmd2_biased, mmd2_unbiased_paired, moment_match_check
from .name_filter import unknown_name_error
from .results import ResultRow, render_table, write_table
from .run_registry import outputs_hash
from .scenarios import get_scenario, read_manifest, write_scenario
from .training import dataset_accuracy, write_history_csv

logger = logging.getLogger(__name__)


@dataclass
class CommandContext:
    config: RunConfig
    run_dir: Path
    args: argparse.Namespace
    # --key value pairs without a section prefix (scenario parameters)
    params: list[tuple[str, str]] = field(default_factory=list)
    echo: Callable[[str], None] = print
    # extra RunRecord fields: manifest_hash, checkpoint_path, metrics_path
    record: dict = field(default_factory=dict)
    rerun: Callable | None = None
    registry: object = None


class CommandRegistry:
    """
    Named commands with bound keyword arguments.
    """

    def __init__(self):
        # key: command name, value: (command_fn, kwargs)
        self.commands = {}
        self.arguments = {}
        self.help = {}

    def add_command(self, command_name: str, command_fn: Callable, /,
                    arguments: Callable | None = None, help_text: str = '', **kwargs):
        """
        Registers `command_fn` under `command_name`.  `arguments(parser)`
        adds the command's flags; `kwargs` are passed to every call.
        """
        self.commands[command_name] = (command_fn, kwargs)
        self.arguments[command_name] = arguments
        self.help[command_name] = help_text

    @property
    def names(self) -> list[str]:
        return list(self.commands)

    def get(self, command_name: str):
        if command_name not in self.commands:
            raise unknown_name_error("command", command_name, self.names)
        return self.commands[command_name]

    def run(self, command_name: str, ctx: CommandContext, progress=None):
        command_fn, kwargs = self.get(command_name)
        return command_fn(ctx, progress or (lambda _pct: None), **kwargs)


# helpers

def _load_splits(ctx: CommandContext) -> ScenarioSplits:
    directory = ctx.config["data.manifest"]
    if not directory:
        raise ArgumentError("No scenario given; pass --data.manifest <scenario directory>")
    manifest = read_manifest(directory)
    ctx.record['manifest_hash'] = manifest.manifest_hash
    num_classes = ctx.config["model.num_classes"] or None
    return ScenarioSplits.load(manifest, directory_loader(directory), num_classes)


def _train_domains(ctx: CommandContext, splits: ScenarioSplits) -> list[str]:
    test_domain = ctx.config["data.test_domain"]
    requested = ctx.config["data.train_domains"]
    if requested:
        unknown = [d for d in requested if d not in splits.manifest.domains]
        if unknown:
            raise unknown_name_error("domain", unknown[0], list(splits.manifest.domains))
        domains = list(requested)
    else:
        domains = [d for d in splits.manifest.training_domains if d != test_domain]
    if test_domain and test_domain in domains:
        raise ArgumentError(f"Test domain {test_domain!r} is also a training domain")
    return [d for d in domains if d in splits.train.domains]


def _model_config(ctx: CommandContext, splits: ScenarioSplits):
    return ctx.config.model_config(splits.full.num_classes, splits.full.image_shape)


def _checkpoint_model(path):
    checkpoint = load_checkpoint(path)
    return checkpoint, checkpoint.build_model()


# commands

def gen_scenario_arguments(parser):
    parser.add_argument("--name", required=True, help="Scenario name")
    parser.add_argument("--output", help="Scenario directory (default: <run dir>/scenario)")
    parser.add_argument("--workers", type=int, default=1, help="Rendering threads")


def cmd_gen_scenario(ctx: CommandContext, progress):
    """
    Generates a scenario; flags without a section prefix (``--seed 7``)
    configure the generator.
    """
    scenario = get_scenario(ctx.args.name, dict(ctx.params))
    if "data_root" in scenario.get_config_schema() and "data_root" not in dict(ctx.params):
        scenario.set_config({"data_root": ctx.config["data.root"]})
    generated = scenario.generate()
    out = Path(ctx.args.output) if ctx.args.output else ctx.run_dir / "scenario"
    sidecar = write_scenario(generated, out, workers=ctx.args.workers, progress=progress)
    manifest = generated.manifest
    ctx.record['manifest_hash'] = sidecar['manifest_hash']
    ctx.echo(f"scenario: {manifest.scenario_id} ({out})")
    for split in ("train", "val", "test"):
        sizes = {d: n for d, n in manifest.domain_sizes(split).items() if n}
        if sizes:
            ctx.echo(f"{split}: " + ", ".join(f"{d}={n}" for d, n in sizes.items()))
    ctx.echo(f"manifest hash: {sidecar['manifest_hash']}")
    ctx.echo(f"content hash: {sidecar['content_hash']}")
    return "completed", [out / "manifest.csv", out / "manifest.json"]


def train_arguments(parser):
    parser.add_argument("--track-accuracy", action="store_true",
                        help="Log training-set accuracy every epoch")


def cmd_train(ctx: CommandContext, progress):
    splits = _load_splits(ctx)
    domains = _train_domains(ctx, splits)
    if not domains:
        raise ArgumentError("No training domains left")
    train = splits.train.subset(domains)
    val_domains = [d for d in domains if d in splits.val.domains]
    val = splits.val.subset(val_domains) if val_domains else None
    algorithm = ctx.config["model.variant"]
    result = train_algorithm(algorithm, train, _model_config(ctx, splits),
                             ctx.config.train_config(), val=val,
                             track_accuracy=ctx.args.track_accuracy, progress=progress)

    checkpoint_path = ctx.run_dir / "checkpoint.pt"
    metrics_path = ctx.run_dir / "metrics.csv"
    config_path = ctx.run_dir / "config.txt"
    result.checkpoint.train_config['run_config'] = ctx.config.snapshot()
    result.checkpoint.save(checkpoint_path)
    write_history_csv(result.history, metrics_path)
    config_path.write_text(ctx.config.to_text())
    ctx.record.update(checkpoint_path=checkpoint_path, metrics_path=metrics_path)

    selected = result.selected
    ctx.echo(f"{algorithm}: {len(result.history)} epochs, selected epoch {selected.epoch} "
             f"(score {selected.score:.6g})")
    stats = result.stats
    ctx.echo(f"weak supervision ({ctx.config.weak_config().cell_name}): "
             f"{stats.aggregated_instances} aggregated, {stats.mmd_instances} in MMD, "
             f"{stats.semi_supervised_instances} without domain label")
    test_domain = ctx.config["data.test_domain"]
    if test_domain:
        accuracy = dataset_accuracy(result.model, splits.full.subset([test_domain]))
        ctx.echo(f"accuracy on {test_domain}: {accuracy:.3f}")
    ctx.echo(f"checkpoint: {checkpoint_path} (weights {result.checkpoint.checksum[:12]})")
    return "completed", [checkpoint_path, metrics_path, config_path]


def eval_lodo_arguments(parser):
    parser.add_argument("--algorithm", choices=["hduva", "lhduva", "deep_all"],
                        help="Algorithm (default: model.variant)")


def cmd_eval_lodo(ctx: CommandContext, progress):
    splits = _load_splits(ctx)
    algorithm = ctx.args.algorithm or ctx.config["model.variant"]
    rows = lodo_evaluate(algorithm, splits, _model_config(ctx, splits),
                         ctx.config.train_config(), n_repeats=ctx.config["eval.n_repeats"],
                         workers=ctx.config["eval.workers"], progress=progress)
    title = f"{algorithm} leave-one-domain-out on {splits.manifest.scenario_id}"
    table = render_table(rows, title=title, label_header="test domain")
    csv_path = ctx.run_dir / "lodo.csv"
    txt_path = ctx.run_dir / "lodo.txt"
    write_table(rows, csv_path, label_header="test_domain")
    txt_path.write_text(table)
    outputs = [csv_path, txt_path]
    reference = reference_for(splits.manifest.scenario_id)
    if reference:
        ref_path = ctx.run_dir / "reference.json"
        ref_path.write_text(json.dumps(reference, indent=2, sort_keys=True) + "\n")
        outputs.append(ref_path)
    ctx.record['metrics_path'] = csv_path
    ctx.echo(table)
    return "completed", outputs


def checkpoint_arguments(parser):
    parser.add_argument("--checkpoint", required=True, help="Checkpoint file")


def eval_auc_arguments(parser):
    checkpoint_arguments(parser)
    parser.add_argument("--domains", help="Comma-separated shift order "
                                          "(default: test-only domains in manifest order)")


def cmd_eval_auc(ctx: CommandContext, progress):
    _checkpoint, model = _checkpoint_model(ctx.args.checkpoint)
    splits = _load_splits(ctx)
    manifest = splits.manifest
    if ctx.args.domains:
        domains = [d.strip() for d in ctx.args.domains.split(",") if d.strip()]
    else:
        domains = list(manifest.test_only_domains or manifest.domains)
    result = shift_auc_evaluate(model, shift_sequence(splits.full, domains))
    progress(100)
    rows = result.as_rows()
    table = render_table(rows, title=f"accuracy over shift ({manifest.scenario_id})",
                         label_header="shift")
    csv_path = ctx.run_dir / "auc.csv"
    txt_path = ctx.run_dir / "auc.txt"
    write_table(rows, csv_path, label_header="shift")
    txt_path.write_text(table)
    ctx.record.update(checkpoint_path=ctx.args.checkpoint, metrics_path=csv_path)
    ctx.echo(table)
    ctx.echo(f"AUC: {result.auc:.3f}")
    return "completed", [csv_path, txt_path]


def plot_topics_arguments(parser):
    checkpoint_arguments(parser)
    parser.add_argument("--output", help="Figure file (default: <run dir>/topics.png)")
    parser.add_argument("--max-points", type=int, default=500, help="Points per domain")
    parser.add_argument("--seed", type=int, default=0, help="Sub-sampling seed")


def cmd_plot_topics(ctx: CommandContext, progress):
    checkpoint, model = _checkpoint_model(ctx.args.checkpoint)
    splits = _load_splits(ctx)
    requested = ctx.config["data.train_domains"]
    dataset = splits.full.subset(list(requested)) if requested else splits.full
    topics, labels = figures.sample_topics(model, dataset, ctx.args.max_points, ctx.args.seed)
    xy = figures.barycentric(topics)
    silhouette = figures.topic_silhouette(topics, labels)
    progress(50)

    figure_path = Path(ctx.args.output) if ctx.args.output else ctx.run_dir / "topics.png"
    points_path = ctx.run_dir / "topics.csv"
    figures.plot_topics(xy, labels, figure_path,
                        title=f"{checkpoint.variant} topics, {splits.manifest.scenario_id}")
    points_path.parent.mkdir(parents=True, exist_ok=True)
    with points_path.open("w") as f:
        f.write("domain,x,y," + ",".join(f"s{k}" for k in range(topics.shape[1])) + "\n")
        for label, (x, y), row in zip(labels, xy, topics):
            f.write(f"{label},{x!r},{y!r}," + ",".join(repr(float(v)) for v in row) + "\n")
    ctx.record['checkpoint_path'] = ctx.args.checkpoint
    ctx.echo(f"topic plot: {figure_path} ({len(labels)} points)")
    ctx.echo(f"silhouette: {silhouette:.3f}")
    return "completed", [figure_path, points_path]


def gen_conditional_arguments(parser):
    checkpoint_arguments(parser)
    parser.add_argument("--seed-image", help="PNG whose domain representation is kept")
    parser.add_argument("--seed-index", type=int, default=0,
                        help="Instance of --data.manifest used when no --seed-image is given")
    parser.add_argument("--labels", help="Comma-separated class sweep (default: every class)")
    parser.add_argument("--seed", type=int, default=0, help="Sampling seed for z_y")
    parser.add_argument("--output", help="Grid file (default: <run dir>/conditional.png)")


def cmd_gen_conditional(ctx: CommandContext, progress):
    checkpoint, model = _checkpoint_model(ctx.args.checkpoint)
    if ctx.args.seed_image:
        file = Path(ctx.args.seed_image)
        if not file.exists():
            raise DataIOError(f"Seed image {file} does not exist")
        mode = ImageReadMode.RGB if model.config.image_shape[0] == 3 else ImageReadMode.GRAY
        seed_x = read_image(str(file), mode).to(torch.float32) / 255.0
    else:
        images, _labels = _load_splits(ctx).full.pooled()
        if not 0 <= ctx.args.seed_index < images.shape[0]:
            raise ArgumentError(f"--seed-index {ctx.args.seed_index} is out of range "
                                f"(0..{images.shape[0] - 1})")
        seed_x = images[ctx.args.seed_index]
    if ctx.args.labels:
        sweep = [int(v) for v in ctx.args.labels.split(",") if v.strip()]
    else:
        sweep = list(range(model.config.num_classes))
    generator = torch.Generator().manual_seed(ctx.args.seed)
    generated = model.conditional_generate(seed_x, sweep, generator=generator)
    progress(50)
    output = Path(ctx.args.output) if ctx.args.output else ctx.run_dir / "conditional.png"
    grid = torch.cat([seed_x.unsqueeze(0).to(generated.dtype), generated])
    figures.save_image_grid(grid, output, nrow=grid.shape[0])
    ctx.record['checkpoint_path'] = ctx.args.checkpoint
    ctx.echo(f"conditional samples ({checkpoint.variant}, labels {sweep}): {output}")
    return "completed", [output]


def two_sample_arguments(parser):
    parser.add_argument("--x", required=True, help="CSV matrix, one sample per row")
    parser.add_argument("--y", required=True, help="CSV matrix, one sample per row")


def _read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataIOError(f"{path} does not exist")
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataIOError(f"Could not parse {path} as a numeric CSV matrix: {exc}") from exc


def cmd_two_sample(ctx: CommandContext, progress):
    X = torch.from_numpy(_read_matrix(ctx.args.x))
    Y = torch.from_numpy(_read_matrix(ctx.args.y))
    spec = KernelSpec(tuple(ctx.config["weak.bandwidths"]))
    lines = [f"bandwidths: {','.join(str(b) for b in spec.bandwidths)}",
             f"mmd2_biased: {float(mmd2_biased(X, Y, spec))!r}"]
    if X.shape[0] == Y.shape[0]:
        lines.append(f"mmd2_unbiased_paired: {float(mmd2_unbiased_paired(X, Y, spec))!r}")
    lines.append(f"mean_difference_sq: {float(moment_match_check(X, Y))!r}")
    progress(100)
    path = ctx.run_dir / "two_sample.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    for line in lines:
        ctx.echo(line)
    return "completed", [path]


def replay_arguments(parser):
    parser.add_argument("--run-id", type=int, required=True, help="Run to replay")


def cmd_replay(ctx: CommandContext, progress):
    """
    Re-executes a recorded run into <run dir>/replay and compares the output
    hash with the recorded one.
    """
    row = ctx.registry.get(ctx.args.run_id)
    if row.status != "completed":
        raise ArgumentError(f"Run {row.run_id} did not complete ({row.status})")
    replay_dir = ctx.run_dir / "replay"
    _status, outputs = ctx.rerun(row.argv, replay_dir, progress)
    replayed = outputs_hash(outputs, replay_dir)
    ctx.record['manifest_hash'] = row.manifest_hash
    ctx.echo(f"run {row.run_id} ({row.command}): recorded {row.output_hash[:16]}, "
             f"replayed {replayed[:16]}")
    if replayed != row.output_hash:
        logger.warning("Replay of run %d produced different outputs", row.run_id)
        ctx.echo("outputs differ")
        return "mismatch", outputs
    ctx.echo("outputs match")
    return "completed", outputs


def register_commands(registry: CommandRegistry) -> CommandRegistry:
    registry.add_command("gen-scenario", cmd_gen_scenario, arguments=gen_scenario_arguments,
                         help_text="Generate a benchmark scenario (images + manifest)")
    registry.add_command("train", cmd_train, arguments=train_arguments,
                         help_text="Train a model; a comma list for --train.gamma_y sweeps it")
    registry.add_command("eval-lodo", cmd_eval_lodo, arguments=eval_lodo_arguments,
                         help_text="Leave-one-domain-out evaluation over seeds")
    registry.add_command("eval-auc", cmd_eval_auc, arguments=eval_auc_arguments,
                         help_text="Accuracy over a shift sequence and its area under curve")
    registry.add_command("plot-topics", cmd_plot_topics, arguments=plot_topics_arguments,
                         help_text="Plot posterior topics on the simplex")
    registry.add_command("gen-conditional", cmd_gen_conditional,
                         arguments=gen_conditional_arguments,
                         help_text="Decode a class sweep keeping one image's domain")
    registry.add_command("two-sample", cmd_two_sample, arguments=two_sample_arguments,
                         help_text="MMD statistics between two CSV samples")
    registry.add_command("replay", cmd_replay, arguments=replay_arguments,
                         help_text="Re-run a recorded run and compare output hashes")
    return registry
