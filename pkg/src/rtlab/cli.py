"""Command-line interface.

All paths are resolved against an experiment root given by ``--root`` or
the RTL_ROOT environment variable (default: the current directory).
Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 missing artifact.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from .attacks import AttackSpec, robust_accuracy
from .data import SyntheticSpec, load, load_pair, make_blobs, make_single_pixel, save_pair
from .errors import (
    CheckpointError, ConfigError, ContractError, DatasetIOError, DivergenceError,
    MissingArtifactError,
)
from .harness import ModelRegistry, RecordStore, SweepPlan
from .harness import granularity_experiment as run_granularity
from .harness import pretrain as run_pretrain
from .harness import report as run_report
from .harness import run_sweep
from .nets import ModelConfig, load_checkpoint
from .training import TrainConfig
from .transfer import TransferMode, transfer


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (FileNotFoundError, MissingArtifactError, CheckpointError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(4)
        except DivergenceError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except (ConfigError, ContractError, DatasetIOError, ValueError, KeyError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def get_root(root) -> Path:
    return Path(root).resolve()


@click.group()
@click.option("--root", envvar="RTL_ROOT", default=".", show_default=True,
              help="Experiment root directory (or set RTL_ROOT).")
@click.pass_context
def main(ctx, root):
    """Desk-scale robust training and transfer experiments."""
    ctx.obj = get_root(root)


def _attack_from_payload(payload) -> AttackSpec | None:
    if not payload:
        return None
    if "steps" in payload or "step_size" in payload:
        return AttackSpec(**payload)
    return AttackSpec.training_default(payload.get("norm", "l2"), float(payload["epsilon"]))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Pretraining config JSON.")
@click.pass_obj
@handle_errors
def pretrain(root, config_path):
    """Train a source model and register its checkpoint.

    The config file holds {"model": {...}, "train": {...}, "attack": {...}|null,
    "dataset": NAME, "out": RELPATH, "model_id": ID}.
    """
    payload = json.loads(Path(config_path).read_text())
    model_cfg = ModelConfig(**payload["model"])
    attack = _attack_from_payload(payload.get("attack"))
    train_cfg = TrainConfig(**payload["train"], attack=attack)
    pair = load_pair(root / "datasets" / payload["dataset"])
    entry = run_pretrain(model_cfg, train_cfg, pair, root=root,
                         model_id=payload["model_id"],
                         checkpoint_rel_path=payload["out"])
    registry = ModelRegistry.load(root / "registry.json")
    registry.add(entry)
    registry.save(root / "registry.json")
    click.echo(f"model {entry.model_id}: source accuracy {entry.source_acc:.4f}, "
               f"checkpoint {entry.path}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_name", required=True)
@click.option("--mode", type=click.Choice(["fixed", "full"]), required=True)
@click.option("--epochs", default=10, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--lrs", default="0.01,0.001", show_default=True, help="Comma-separated lr grid.")
@click.option("--seed", default=0, show_default=True)
@click.pass_obj
@handle_errors
def transfer_cmd(root, checkpoint_path, dataset_name, mode, epochs, batch_size, lrs, seed):
    """Adapt a pretrained checkpoint to a target dataset."""
    net = load_checkpoint(root / checkpoint_path)
    pair = load_pair(root / "datasets" / dataset_name)
    lr_grid = tuple(float(v) for v in lrs.split(","))
    config = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr_grid[0],
                         momentum=0.9, weight_decay=5e-4,
                         lr_drop_every=max(1, round(epochs / 3)), seed=seed)
    result = transfer(net, pair, TransferMode.parse(mode), config,
                      head_seed=seed, lr_grid=lr_grid)
    click.echo(f"{dataset_name} [{TransferMode.parse(mode).value}] "
               f"metric {result.metric:.4f} (lr {result.lr!r}, {pair.metric_kind})")


main.add_command(transfer_cmd, name="transfer")


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_name", required=True)
@click.option("--eps", required=True, type=float)
@click.option("--norm", type=click.Choice(["l2", "linf"]), default="l2", show_default=True)
@click.option("--steps", default=20, show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.pass_obj
@handle_errors
def attack(root, checkpoint_path, dataset_name, eps, norm, steps, split):
    """Robust accuracy of a checkpoint under a PGD evaluation attack."""
    net = load_checkpoint(root / checkpoint_path)
    pair = load_pair(root / "datasets" / dataset_name)
    dataset = pair.train if split == "train" else pair.test
    if eps == 0:
        spec = AttackSpec(norm=norm, epsilon=0.0, steps=0, step_size=1.0)
    else:
        spec = AttackSpec(norm=norm, epsilon=eps, steps=steps, step_size=eps * 2.5 / steps)
    acc = robust_accuracy(net, dataset, spec)
    click.echo(f"robust accuracy at {norm} eps={eps!r}: {acc:.4f}")


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path())
@click.option("--granularity-low", type=int, default=None,
              help="Also rerun the fixed-feature sweep at this unified resolution.")
@click.pass_obj
@handle_errors
def sweep(root, plan_path, granularity_low):
    """Run a two-phase epsilon sweep from a plan file."""
    plan = SweepPlan.from_json(Path(plan_path).read_text())
    registry = ModelRegistry.load(root / "registry.json")
    store = RecordStore(root / "records.jsonl")
    records = run_sweep(plan, registry, root=root, store=store)
    if granularity_low is not None:
        records += run_granularity(plan, registry, root=root, low=granularity_low, store=store)
    manifest = {"run_ids": [r.run_id for r in records]}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    click.echo(f"{len(records)} records appended to {store.path}")


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help="Optional manifest of expected run ids to check completeness.")
@click.pass_obj
@handle_errors
def report(root, records_path, out_dir, manifest_path):
    """Render the CSV and bolded markdown tables from a record store."""
    store = RecordStore(root / records_path)
    if not store.path.exists():
        raise MissingArtifactError(f"record store not found: {store.path}")
    records = store.load()
    expected = None
    if manifest_path is not None:
        expected = json.loads((root / manifest_path).read_text())["run_ids"]
    paths = run_report(records, root / out_dir, expected_run_ids=expected)
    click.echo(f"wrote {paths['csv']} and {paths['markdown']}")


@main.group()
def dataset():
    """Generate and inspect dataset files."""


@dataset.command("gen")
@click.option("--kind", type=click.Choice(["single_pixel", "blobs"]), required=True)
@click.option("--name", required=True, help="Output stem under <root>/datasets/.")
@click.option("--n-per-class", default=20, show_default=True)
@click.option("--channels", default=1, show_default=True)
@click.option("--size", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--delta", default=0.1, show_default=True, help="Single-pixel class offset.")
@click.option("--sigma", default=0.05, show_default=True, help="Blob noise level.")
@click.option("--margin", default=0.5, show_default=True, help="Blob template separation.")
@click.option("--classes", "class_count", default=2, show_default=True)
@click.option("--metric", "metric_kind", type=click.Choice(["top1", "mean_per_class"]),
              default="top1", show_default=True)
@click.pass_obj
@handle_errors
def dataset_gen(root, kind, name, n_per_class, channels, size, seed, delta, sigma,
                margin, class_count, metric_kind):
    """Generate a synthetic dataset pair."""
    spec = SyntheticSpec(kind=kind, n_per_class=n_per_class, channels=channels,
                         size=size, seed=seed, delta=delta, sigma=sigma,
                         margin=margin, class_count=class_count, metric_kind=metric_kind)
    pair = make_single_pixel(spec) if kind == "single_pixel" else make_blobs(spec)
    (root / "datasets").mkdir(parents=True, exist_ok=True)
    train_path, test_path = save_pair(pair, root / "datasets" / name)
    click.echo(f"wrote {train_path} ({len(pair.train)} samples) and "
               f"{test_path} ({len(pair.test)} samples)")


@dataset.command("inspect")
@click.argument("path", type=click.Path())
@click.pass_obj
@handle_errors
def dataset_inspect(root, path):
    """Print a dataset file's header, per-class counts, and content hash."""
    ds = load(root / path)
    counts = {int(c): int((ds.labels == c).sum()) for c in range(ds.class_count)}
    click.echo(json.dumps({
        "header": ds.header(),
        "per_class_counts": counts,
        "content_hash": ds.content_hash(),
    }, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
