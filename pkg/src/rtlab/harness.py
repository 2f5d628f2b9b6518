"""Experiment orchestration and persistence.

A sweep works in two phases. Selection: every (dataset, mode, width,
epsilon) cell is transferred once per selection seed, and the epsilon
with the best mean metric wins per cell (ties to the smaller epsilon).
Evaluation: only the winning epsilon and the epsilon = 0 baseline are
rerun, on a disjoint set of evaluation seeds. Records land in an
append-only JSON-lines store and reports are pure functions of it.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .data import DatasetPair, downscale_upscale, load_pair, save_pair
from .errors import ConfigError, ContractError, MissingArtifactError, PlanError, ReportError
from .nets import ModelConfig, build, checkpoint_hash, load_checkpoint, save_checkpoint
from .stats import Bolding, TrialSet, aggregate, bolding_rule, r_squared, welch_t_test
from .training import TrainConfig, train
from .transfer import TransferMode, evaluate_metric, transfer

DEFAULT_L2_GRID = (0.0, 0.01, 0.03, 0.05, 0.1, 0.25, 0.5, 1.0, 3.0, 5.0)
DEFAULT_LINF_GRID = (0.5 / 255, 1 / 255, 2 / 255, 4 / 255, 8 / 255)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentRecord:
    run_id: str
    phase: str                 # "selection" | "evaluation"
    dataset: str
    dataset_hash: str
    mode: str
    width: int
    epsilon: float
    norm: str
    lr: float
    seed: int
    metric: float
    metric_kind: str
    model_id: str
    checkpoint_hash: str
    wall_clock: float
    source_acc: Optional[float] = None
    resolution: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ExperimentRecord":
        return cls(**json.loads(line))


class RecordStore:
    """Append-only JSON-lines record persistence (single writer)."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, records) -> None:
        with open(self.path, "a", encoding="ascii") as fh:
            for rec in records:
                fh.write(rec.to_json() + "\n")

    def load(self) -> list[ExperimentRecord]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="ascii") as fh:
            return [ExperimentRecord.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# pretrained-model registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistryEntry:
    model_id: str
    path: str                  # checkpoint path, relative to the experiment root
    epsilon: float
    norm: str
    width: int
    source_acc: float


class ModelRegistry:
    def __init__(self, entries=()):
        self.entries = list(entries)

    def add(self, entry: RegistryEntry) -> None:
        self.entries = [e for e in self.entries
                        if (e.width, e.epsilon, e.norm) != (entry.width, entry.epsilon, entry.norm)]
        self.entries.append(entry)

    def find(self, width: int, epsilon: float, norm: str) -> Optional[RegistryEntry]:
        for e in self.entries:
            if e.width == width and e.epsilon == epsilon and (epsilon == 0.0 or e.norm == norm):
                return e
        return None

    def require(self, width: int, epsilon: float, norm: str) -> RegistryEntry:
        entry = self.find(width, epsilon, norm)
        if entry is None:
            raise MissingArtifactError(
                f"no pretrained checkpoint registered for width={width}, epsilon={epsilon!r}, norm={norm}"
            )
        return entry

    def save(self, path) -> None:
        payload = {"models": [asdict(e) for e in self.entries]}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="ascii")

    @classmethod
    def load(cls, path) -> "ModelRegistry":
        path = Path(path)
        if not path.exists():
            return cls()
        try:
            payload = json.loads(path.read_text(encoding="ascii"))
            return cls(RegistryEntry(**e) for e in payload["models"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: bad registry file: {exc}") from exc


def pretrain(model_config: ModelConfig, train_config: TrainConfig, pair: DatasetPair, *,
             root, model_id: str, checkpoint_rel_path: str) -> RegistryEntry:
    """Train a source model, checkpoint it, and return its registry entry.

    The per-epoch training log lands in <root>/logs/<model_id>.train.jsonl.
    """
    net = build(model_config)
    net, log = train(net, pair.train, train_config)
    source_acc = evaluate_metric(net, pair.test)
    log_path = Path(root) / "logs" / f"{model_id}.train.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text(log.to_jsonl(), encoding="ascii")
    path = Path(root) / checkpoint_rel_path
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, path)
    attack = train_config.attack
    return RegistryEntry(
        model_id=model_id,
        path=checkpoint_rel_path,
        epsilon=attack.epsilon if attack else 0.0,
        norm=attack.norm if attack else "l2",
        width=model_config.width_multiplier,
        source_acc=source_acc,
    )


# ---------------------------------------------------------------------------
# sweep plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPlan:
    datasets: tuple
    selection_seeds: tuple
    evaluation_seeds: tuple
    eps_grid: tuple = DEFAULT_L2_GRID
    norm: str = "l2"
    modes: tuple = ("FixedFeature", "FullNetwork")
    widths: tuple = (1,)
    epochs: int = 10
    batch_size: int = 32
    lr_grid: tuple = (0.01, 0.001)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "selection_seeds", tuple(int(s) for s in self.selection_seeds))
        object.__setattr__(self, "evaluation_seeds", tuple(int(s) for s in self.evaluation_seeds))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "lr_grid", tuple(float(lr) for lr in self.lr_grid))
        if not self.datasets:
            raise PlanError("plan needs at least one dataset")
        if not self.selection_seeds or not self.evaluation_seeds:
            raise PlanError("plan needs nonempty selection and evaluation seed sets")
        overlap = set(self.selection_seeds) & set(self.evaluation_seeds)
        if overlap:
            raise PlanError(f"selection and evaluation seeds must be disjoint; both contain {sorted(overlap)}")
        if len(set(self.selection_seeds)) != len(self.selection_seeds):
            raise PlanError("duplicate selection seeds")
        if len(set(self.evaluation_seeds)) != len(self.evaluation_seeds):
            raise PlanError("duplicate evaluation seeds")
        if not self.eps_grid:
            raise PlanError("plan needs a nonempty epsilon grid")
        if any(e < 0 for e in self.eps_grid):
            raise PlanError("epsilon grid values must be nonnegative")
        for mode in self.modes:
            try:
                TransferMode.parse(mode)
            except ContractError as exc:
                raise PlanError(str(exc)) from exc
        if self.workers < 1:
            raise PlanError(f"workers must be positive, got {self.workers}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SweepPlan":
        try:
            payload = json.loads(text)
        except ValueError as exc:
            raise PlanError(f"bad plan JSON: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise PlanError(f"unknown plan fields {sorted(unknown)}")
        return cls(**payload)


# ---------------------------------------------------------------------------
# task execution
# ---------------------------------------------------------------------------

def _run_id(task: dict) -> str:
    rid = (f"{task['dataset']}|{task['mode']}|w{task['width']}|eps{task['epsilon']!r}"
           f"|s{task['seed']}|{task['phase']}")
    if task.get("resolution") is not None:
        rid += f"|r{task['resolution']}"
    return rid


def _execute_task(task: dict) -> ExperimentRecord:
    """Run one transfer described by plain values (safe to ship to a worker)."""
    started = time.perf_counter()
    net = load_checkpoint(task["checkpoint_path"])
    ckpt_hash = checkpoint_hash(Path(task["checkpoint_path"]).read_bytes())
    pair = load_pair(task["dataset_stem"])
    config = TrainConfig(
        epochs=task["epochs"], batch_size=task["batch_size"], lr=task["lr_grid"][0],
        momentum=0.9, weight_decay=5e-4, lr_drop_factor=10.0,
        lr_drop_every=max(1, round(task["epochs"] / 3)), seed=task["seed"],
    )
    result = transfer(net, pair, TransferMode.parse(task["mode"]), config,
                      head_seed=task["seed"], lr_grid=task["lr_grid"])
    return ExperimentRecord(
        run_id=_run_id(task),
        phase=task["phase"],
        dataset=task["dataset"],
        dataset_hash=pair_hash(pair),
        mode=task["mode"],
        width=task["width"],
        epsilon=task["epsilon"],
        norm=task["norm"],
        lr=result.lr,
        seed=task["seed"],
        metric=result.metric,
        metric_kind=pair.metric_kind,
        model_id=task["model_id"],
        checkpoint_hash=ckpt_hash,
        wall_clock=time.perf_counter() - started,
        source_acc=task.get("source_acc"),
        resolution=task.get("resolution"),
    )


def pair_hash(pair: DatasetPair) -> str:
    from .tensor import fnv1a64

    return f"{fnv1a64((pair.train.content_hash() + pair.test.content_hash()).encode('ascii')):016x}"


def _run_tasks(tasks, workers: int) -> list[ExperimentRecord]:
    if workers <= 1 or len(tasks) <= 1:
        return [_execute_task(t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute_task, tasks))


def select_epsilon(records, *, dataset: str, mode: str, width: int,
                   resolution=None) -> float:
    """Argmax of the mean selection-phase metric; ties go to the smaller
    epsilon. Evaluation-phase records never participate."""
    cells = {}
    for rec in records:
        if rec.phase != "selection":
            continue
        if (rec.dataset, rec.mode, rec.width, rec.resolution) != (dataset, mode, width, resolution):
            continue
        cells.setdefault(rec.epsilon, []).append(rec.metric)
    if not cells:
        raise ContractError(f"no selection records for {dataset}/{mode}/w{width}")
    ranked = sorted(cells.items(), key=lambda kv: (-float(np.mean(kv[1])), kv[0]))
    return ranked[0][0]


# ---------------------------------------------------------------------------
# the sweep protocols
# ---------------------------------------------------------------------------

def _dataset_stem(root, name: str) -> str:
    return str(Path(root) / "datasets" / name)


def _build_task(plan, entry, *, root, dataset, mode, width, eps, seed, phase,
                stem=None, resolution=None) -> dict:
    return {
        "dataset": dataset,
        "dataset_stem": stem or _dataset_stem(root, dataset),
        "mode": mode,
        "width": width,
        "epsilon": eps,
        "norm": plan.norm,
        "seed": seed,
        "phase": phase,
        "epochs": plan.epochs,
        "batch_size": plan.batch_size,
        "lr_grid": list(plan.lr_grid),
        "checkpoint_path": str(Path(root) / entry.path),
        "model_id": entry.model_id,
        "source_acc": entry.source_acc,
        "resolution": resolution,
    }


def _check_artifacts(plan: SweepPlan, registry: ModelRegistry, root, stems: dict) -> dict:
    """Resolve every needed checkpoint up front; fail before any training."""
    needed = {}
    eps_needed = set(plan.eps_grid) | {0.0}
    for width in plan.widths:
        for eps in sorted(eps_needed):
            entry = registry.require(width, eps, plan.norm)
            path = Path(root) / entry.path
            if not path.exists():
                raise MissingArtifactError(f"registered checkpoint missing on disk: {path}")
            needed[(width, eps)] = entry
    for stem in stems.values():
        for split in ("train", "test"):
            if not Path(f"{stem}.{split}.ds").exists():
                raise MissingArtifactError(f"dataset split missing: {stem}.{split}.ds")
    return needed


def run_sweep(plan: SweepPlan, registry: ModelRegistry, *, root,
              store: Optional[RecordStore] = None,
              dataset_stems: Optional[dict] = None,
              resolution: Optional[int] = None) -> list[ExperimentRecord]:
    """Two-phase epsilon sweep; returns all records in deterministic order."""
    if dataset_stems is None:
        dataset_stems = {name: _dataset_stem(root, name) for name in plan.datasets}
    entries = _check_artifacts(plan, registry, root, dataset_stems)

    def stem_for(name):
        return dataset_stems[name]

    selection_tasks = []
    for dataset in plan.datasets:
        for mode in plan.modes:
            for width in plan.widths:
                for eps in plan.eps_grid:
                    for seed in plan.selection_seeds:
                        selection_tasks.append(_build_task(
                            plan, entries[(width, eps)], root=root, dataset=dataset,
                            mode=mode, width=width, eps=eps, seed=seed,
                            phase="selection", stem=stem_for(dataset), resolution=resolution))
    records = _run_tasks(selection_tasks, plan.workers)

    evaluation_tasks = []
    for dataset in plan.datasets:
        for mode in plan.modes:
            for width in plan.widths:
                eps_star = select_epsilon(records, dataset=dataset, mode=mode,
                                          width=width, resolution=resolution)
                for eps in sorted({eps_star, 0.0}):
                    for seed in plan.evaluation_seeds:
                        evaluation_tasks.append(_build_task(
                            plan, entries[(width, eps)], root=root, dataset=dataset,
                            mode=mode, width=width, eps=eps, seed=seed,
                            phase="evaluation", stem=stem_for(dataset), resolution=resolution))
    records += _run_tasks(evaluation_tasks, plan.workers)

    records.sort(key=lambda r: r.run_id)
    if store is not None:
        store.append(records)
    return records


def width_sweep(plan: SweepPlan, registry: ModelRegistry, *, root,
                store: Optional[RecordStore] = None) -> list[ExperimentRecord]:
    """The epsilon sweep across a width axis; records carry their width tag.

    With a single width this is exactly ``run_sweep``. Epsilon selection
    happens independently per (dataset, mode, width) cell.
    """
    return run_sweep(plan, registry, root=root, store=store)


def granularity_experiment(plan: SweepPlan, registry: ModelRegistry, *, root, low: int,
                           resampling: str = "nearest",
                           store: Optional[RecordStore] = None) -> list[ExperimentRecord]:
    """Rerun the fixed-feature sweep on resolution-unified datasets.

    Every dataset is passed through downscale_upscale(low -> input size)
    and the records carry a ``resolution`` tag; pairing them with the
    plain sweep's curves shows how the best epsilon moves with input
    granularity.
    """
    fixed_plan = SweepPlan(**{**asdict(plan), "modes": ("FixedFeature",)})
    stems = {}
    for name in plan.datasets:
        pair = load_pair(_dataset_stem(root, name))
        high = pair.train.images.shape[2]
        if high % low != 0:
            raise ConfigError(
                f"granularity transform needs an integer scale factor; {low} does not divide {high}")
        transformed = DatasetPair(
            pair.train.with_images(downscale_upscale(pair.train.images, low, high, resampling)),
            pair.test.with_images(downscale_upscale(pair.test.images, low, high, resampling)),
        )
        stem = str(Path(root) / "datasets" / f"{name}__res{low}")
        save_pair(transformed, stem)
        stems[name] = stem
    return run_sweep(fixed_plan, registry, root=root, store=store,
                     dataset_stems=stems, resolution=low)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

CSV_COLUMNS = ["run_id", "phase", "dataset", "dataset_hash", "mode", "width", "epsilon",
               "norm", "lr", "seed", "metric", "metric_kind", "model_id",
               "checkpoint_hash", "wall_clock", "source_acc", "resolution"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in sorted(records, key=lambda r: r.run_id):
        writer.writerow([_fmt(getattr(rec, col)) for col in CSV_COLUMNS])
    return buf.getvalue()


def parse_records_csv(text: str) -> list[ExperimentRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out = []
    for row in body:
        kw = dict(zip(header, row))
        for key in ("epsilon", "lr", "metric", "wall_clock"):
            kw[key] = float(kw[key])
        for key in ("width", "seed"):
            kw[key] = int(kw[key])
        kw["source_acc"] = float(kw["source_acc"]) if kw["source_acc"] else None
        kw["resolution"] = int(kw["resolution"]) if kw["resolution"] else None
        out.append(ExperimentRecord(**kw))
    return out


def _mean_std_cell(values) -> str:
    agg = aggregate(TrialSet("cell", tuple(values)))
    if agg.std is None:
        return f"{agg.mean:.4f}"
    return f"{agg.mean:.4f} ± {agg.std:.4f}"


def _comparison_rows(records):
    """Evaluation-phase robust-vs-standard cells per (dataset, mode, width)."""
    groups = {}
    for rec in records:
        if rec.phase != "evaluation" or rec.resolution is not None:
            continue
        key = (rec.dataset, rec.mode, rec.width)
        groups.setdefault(key, {}).setdefault(rec.epsilon, []).append(rec.metric)
    rows = []
    for (dataset, mode, width), cells in sorted(groups.items()):
        # evaluation phase holds exactly the selected eps* and the 0 baseline
        robust_eps = max(cells)
        standard = cells.get(0.0, [])
        robust = cells.get(robust_eps, [])
        verdict = Bolding.BOLD_BOTH
        p_value = None
        if standard and robust:
            try:
                result = welch_t_test(TrialSet("robust", tuple(robust)),
                                      TrialSet("standard", tuple(standard)))
                p_value = result.p
                verdict = bolding_rule(TrialSet("robust", tuple(robust)),
                                       TrialSet("standard", tuple(standard)))
            except ContractError:
                verdict = Bolding.BOLD_BOTH
        rows.append({
            "dataset": dataset, "mode": mode, "width": width, "eps_star": robust_eps,
            "standard": standard, "robust": robust, "verdict": verdict, "p": p_value,
        })
    return rows


def _markdown_comparison(records) -> list[str]:
    lines = ["## Robust vs standard (evaluation seeds)", ""]
    rows = _comparison_rows(records)
    if not rows:
        lines.append("_No evaluation-phase records._")
        lines.append("")
        return lines
    lines.append("| dataset | mode | width | standard (eps=0) | robust (eps*) | eps* | p (Welch) |")
    lines.append("|---|---|---|---|---|---|---|")
    for row in rows:
        std_cell = _mean_std_cell(row["standard"]) if row["standard"] else "-"
        rob_cell = _mean_std_cell(row["robust"]) if row["robust"] else "-"
        if row["verdict"] is Bolding.BOLD_BOTH:
            std_cell, rob_cell = f"**{std_cell}**", f"**{rob_cell}**"
        elif row["verdict"] is Bolding.BOLD_A:
            rob_cell = f"**{rob_cell}**"
        else:
            std_cell = f"**{std_cell}**"
        p_cell = "-" if row["p"] is None else f"{row['p']:.4g}"
        lines.append(f"| {row['dataset']} | {row['mode']} | {row['width']} "
                     f"| {std_cell} | {rob_cell} | {_fmt(row['eps_star'])} | {p_cell} |")
    lines.append("")
    lines.append("The direction of the robust-vs-standard gap at desk scale is "
                 "reported, not asserted; bold marks follow the two-tailed "
                 "Welch test at 95% (both bold when inconclusive).")
    lines.append("")
    return lines


def width_grid(records) -> list[dict]:
    """Flat (dataset, mode, width, epsilon) -> mean metric rows from the
    selection phase, the width-study table."""
    cells = {}
    for rec in records:
        if rec.phase != "selection" or rec.resolution is not None:
            continue
        key = (rec.dataset, rec.mode, rec.width, rec.epsilon)
        cells.setdefault(key, []).append(rec.metric)
    return [
        {"dataset": d, "mode": m, "width": w, "epsilon": e,
         "mean_metric": float(np.mean(v)), "trials": len(v)}
        for (d, m, w, e), v in sorted(cells.items())
    ]


def _markdown_width(records) -> list[str]:
    grid = width_grid(records)
    widths = sorted({g["width"] for g in grid})
    if len(widths) < 2:
        return []
    eps_values = sorted({g["epsilon"] for g in grid})
    lines = ["## Width study (selection means)", ""]
    header = "| dataset | mode | width | " + " | ".join(f"eps={_fmt(e)}" for e in eps_values) + " |"
    lines.append(header)
    lines.append("|" + "---|" * (3 + len(eps_values)))
    table = {(g["dataset"], g["mode"], g["width"], g["epsilon"]): g["mean_metric"] for g in grid}
    for dataset, mode in sorted({(g["dataset"], g["mode"]) for g in grid}):
        for width in widths:
            cells = [table.get((dataset, mode, width, e)) for e in eps_values]
            rendered = " | ".join("-" if c is None else f"{c:.4f}" for c in cells)
            lines.append(f"| {dataset} | {mode} | {width} | {rendered} |")
    lines.append("")
    return lines


def _markdown_resolution(records) -> list[str]:
    by_res = {}
    for rec in records:
        if rec.phase != "selection" or rec.mode != "FixedFeature":
            continue
        by_res.setdefault((rec.dataset, rec.epsilon, rec.resolution), []).append(rec.metric)
    resolutions = sorted({k[2] for k in by_res if k[2] is not None})
    if not resolutions:
        return []
    lines = ["## Resolution-unified curves (fixed-feature selection means)", ""]
    lines.append("| dataset | epsilon | original | " +
                 " | ".join(f"res {r}" for r in resolutions) + " |")
    lines.append("|" + "---|" * (2 + 1 + len(resolutions)))

    def cell(dataset, eps, res):
        vals = by_res.get((dataset, eps, res))
        return "-" if not vals else f"{float(np.mean(vals)):.4f}"

    for dataset, eps in sorted({(k[0], k[1]) for k in by_res}):
        row = [cell(dataset, eps, None)] + [cell(dataset, eps, r) for r in resolutions]
        lines.append(f"| {dataset} | {_fmt(eps)} | " + " | ".join(row) + " |")
    lines.append("")
    return lines


def accuracy_fit_rows(records) -> list[dict]:
    """R^2 of source accuracy vs mean transfer metric across architectures,
    one row per (dataset, mode, epsilon) with at least three widths."""
    cells = {}
    for rec in records:
        if rec.source_acc is None or rec.resolution is not None:
            continue
        key = (rec.dataset, rec.mode, rec.epsilon, rec.width)
        cells.setdefault(key, {"source_acc": rec.source_acc, "metrics": []})
        cells[key]["metrics"].append(rec.metric)
    grouped = {}
    for (dataset, mode, eps, width), cell in cells.items():
        grouped.setdefault((dataset, mode, eps), []).append(
            (cell["source_acc"], float(np.mean(cell["metrics"]))))
    rows = []
    for (dataset, mode, eps), points in sorted(grouped.items()):
        if len(points) < 3:
            continue
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        try:
            rsq = r_squared(xs, ys)
        except ContractError:
            continue
        rows.append({"dataset": dataset, "mode": mode, "epsilon": eps,
                     "architectures": len(points), "r_squared": rsq})
    return rows


def _markdown_fit(records) -> list[str]:
    rows = accuracy_fit_rows(records)
    if not rows:
        return []
    lines = ["## Source-accuracy fit at fixed epsilon", ""]
    lines.append("| dataset | mode | epsilon | architectures | R^2 |")
    lines.append("|---|---|---|---|---|")
    for row in rows:
        lines.append(f"| {row['dataset']} | {row['mode']} | {_fmt(row['epsilon'])} "
                     f"| {row['architectures']} | {row['r_squared']:.4f} |")
    lines.append("")
    return lines


def report(records, out_dir, *, comparison: str = "RobustVsStandard",
           expected_run_ids=None) -> dict:
    """Emit records.csv and report.md; both are pure functions of the records."""
    if comparison != "RobustVsStandard":
        raise ConfigError(f"unknown comparison {comparison!r}")
    records = list(records)
    ids = [r.run_id for r in records]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ReportError(f"duplicate run ids in record store: {dupes}", missing=())
    if expected_run_ids is not None:
        missing = sorted(set(expected_run_ids) - set(ids))
        if missing:
            raise ReportError(f"incomplete runs: {missing}", missing=missing)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "records.csv"
    md_path = out_dir / "report.md"

    lines = ["# Transfer sweep report", ""]
    lines.append(f"{len(records)} records; widths and epsilon are the only "
                 "architecture axes in this desk-scale grid.")
    lines.append("")
    lines += _markdown_comparison(records)
    lines += _markdown_width(records)
    lines += _markdown_resolution(records)
    lines += _markdown_fit(records)

    csv_text = records_csv(records)
    md_text = "\n".join(lines).rstrip("\n") + "\n"
    csv_path.write_text(csv_text, encoding="utf-8")
    md_path.write_text(md_text, encoding="utf-8")
    return {"csv": csv_path, "markdown": md_path}
