"""End-to-end experiments and hyperparameter sweeps.

An experiment runs pretrain -> finetune -> merge baselines -> MergeTune ->
optional ensemble, evaluates every checkpoint on the base and novel splits,
probes three interpolation paths and writes everything under ``out_dir``.
Checkpoints are saved as soon as their stage finishes, so a failure leaves the
completed stages on disk next to ``partial.json``.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from ..errors import ConfigError, DomainError, StageError
from ..landscape import barrier, probe_path
from ..merge import linear_merge, merge_checkpoints
from ..model import ModelSpec, evaluate, init_params
from ..mergetune import run_mergetune
from ..tasks import TaskPair, TrackedDataset, generate_task_pair
from ..trainer import Checkpoint, train
from .config import KNOWN_KEYS, ExperimentConfig, from_flat, save_config
from .io import save_checkpoint, save_dataset
from .metrics import harmonic_mean

REPORT_HEADER = ("method", "base_acc", "novel_acc", "hm")


def hash64(*parts) -> int:
    """Stable 64-bit seed from the text of ``parts`` (BLAKE2b, 8-byte digest)."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def stage_seed(master_seed: int, stage: str, offset: int = 0) -> int:
    return hash64(master_seed, stage, offset)


@dataclass(frozen=True)
class MethodRow:
    method: str
    base_acc: float
    novel_acc: float
    hm: float
    id_acc: Optional[float] = None

    def __post_init__(self):
        for name in ("base_acc", "novel_acc") + (("id_acc",) if self.id_acc is not None else ()):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{self.method}: {name}={v} outside [0, 1]")
        if abs(self.hm - harmonic_mean(self.base_acc, self.novel_acc)) > 1e-12:
            raise DomainError(f"{self.method}: hm inconsistent with its accuracies")


@dataclass(frozen=True)
class RunReport:
    rows: tuple[MethodRow, ...]
    probe_files: dict[str, str]
    barriers: dict[str, float]
    loss_log: str
    config_hash: str
    seed: int
    pretrain_reads_during_mergetune: int

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    @property
    def methods(self) -> list[str]:
        return [r.method for r in self.rows]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows"] = [asdict(r) for r in self.rows]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            rows=tuple(MethodRow(**r) for r in d["rows"]),
            probe_files=dict(d["probe_files"]),
            barriers={k: float(v) for k, v in d["barriers"].items()},
            loss_log=d["loss_log"],
            config_hash=d["config_hash"],
            seed=int(d["seed"]),
            pretrain_reads_during_mergetune=int(d["pretrain_reads_during_mergetune"]),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_csv(self, path) -> None:
        write_report_csv(self.rows, path)


def write_report_csv(rows: Sequence[MethodRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in rows:
            writer.writerow([r.method, f"{r.base_acc:.6g}", f"{r.novel_acc:.6g}", f"{r.hm:.6g}"])


def model_spec(cfg: ExperimentConfig) -> ModelSpec:
    return ModelSpec(cfg.task.dim, cfg.model.hidden_dims, cfg.task.num_classes, cfg.model.activation)


def make_task(cfg: ExperimentConfig) -> TaskPair:
    t = cfg.task
    return generate_task_pair(
        stage_seed(cfg.master_seed, "task"),
        t.dim, t.num_classes, t.base_fraction, t.n_shots, t.shift_scale, t.noise_sigma,
        pretrain_per_class=t.pretrain_per_class,
        eval_per_class=t.eval_per_class,
        mean_scale=t.mean_scale,
    )


def stage_train_config(cfg: ExperimentConfig, stage: str):
    """The configured optimizer settings with the seed derived from master_seed."""
    tc = {"pretrain": cfg.pretrain, "finetune": cfg.finetune, "mergetune": cfg.mergetune.optimizer}[stage]
    return replace(tc, seed=stage_seed(cfg.master_seed, stage, tc.seed))


def pretrain_checkpoint(cfg: ExperimentConfig, tp: TaskPair, dataset=None) -> Checkpoint:
    spec = model_spec(cfg)
    init = init_params(spec, stage_seed(cfg.master_seed, "init"))
    return train(spec, init, tp.pretrain_set if dataset is None else dataset,
                 stage_train_config(cfg, "pretrain"), provenance="pretrained", lineage="zeroshot")


def finetune_checkpoint(cfg: ExperimentConfig, tp: TaskPair, w1: Checkpoint) -> Checkpoint:
    return train(w1.spec, w1.params, tp.downstream_train, stage_train_config(cfg, "finetune"),
                 provenance="finetuned", lineage="finetuned[zeroshot]")


def mergetune_checkpoint(cfg, tp, w1, w2, *, history=None, on_epoch_end=None) -> Checkpoint:
    mt = replace(cfg.mergetune, optimizer=stage_train_config(cfg, "mergetune"))
    return run_mergetune(w1.spec, w1, w2, tp.downstream_train, mt, history=history,
                         on_epoch_end=on_epoch_end)


def split_accuracies(cfg: ExperimentConfig, spec: ModelSpec, params, tp: TaskPair) -> tuple[float, float]:
    if cfg.probe.label_space == "joint":
        base = evaluate(spec, params, tp.eval_base)[1]
        novel = evaluate(spec, params, tp.eval_novel)[1]
    else:
        base = evaluate(spec, params, tp.eval_base, tp.base_classes)[1]
        novel = evaluate(spec, params, tp.eval_novel, tp.novel_classes)[1]
    return base, novel


def method_row(cfg, method, ckpt: Checkpoint, tp: TaskPair, id_dataset=None) -> MethodRow:
    base, novel = split_accuracies(cfg, ckpt.spec, ckpt.params, tp)
    id_acc = None if id_dataset is None else evaluate(ckpt.spec, ckpt.params, id_dataset)[1]
    return MethodRow(method, base, novel, harmonic_mean(base, novel), id_acc)


def task2_probe(cfg, spec, wA, wB, tp, ids):
    subset = None if cfg.probe.label_space == "joint" else tp.base_classes
    return probe_path(spec, wA, wB, cfg.probe.n_points, tp.downstream_train, subset,
                      endpoint_ids=ids, eval_spec=f"downstream_train[{cfg.probe.label_space}]")


class _StageLog:
    def __init__(self, out: Path):
        self.out = out
        self.done: list[str] = []

    @contextmanager
    def stage(self, name: str):
        try:
            yield
        except Exception as exc:
            doc = {"failed_stage": name, "error": f"{type(exc).__name__}: {exc}", "completed_stages": self.done}
            (self.out / "partial.json").write_text(json.dumps(doc, indent=1), encoding="utf-8")
            raise StageError(name, exc) from exc
        self.done.append(name)


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunReport:
    """Run the full pipeline for ``config`` and write its artifacts.

    Raises :class:`StageError` naming the failed stage; checkpoints of the
    stages that finished are already on disk.
    """
    out = Path(config.out_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("checkpoints", "probes", "data"):
        (out / name).mkdir(exist_ok=True)
    (out / "partial.json").unlink(missing_ok=True)
    save_config(config, out / "config.cfg")
    log = _StageLog(out)
    spec = model_spec(config)
    rows: list[MethodRow] = []

    with log.stage("task"):
        tp = make_task(config)
        for name in ("pretrain_set", "downstream_train", "eval_base", "eval_novel"):
            save_dataset(getattr(tp, name), out / "data" / f"{name}.json")
        pretrain_data = TrackedDataset(tp.pretrain_set)

    with log.stage("pretrain"):
        w1 = pretrain_checkpoint(config, tp, pretrain_data)
        save_checkpoint(w1, out / "checkpoints" / "zeroshot.json")

    with log.stage("finetune"):
        w2 = finetune_checkpoint(config, tp, w1)
        save_checkpoint(w2, out / "checkpoints" / "finetuned.json")

    merged: list[tuple[str, Checkpoint]] = []
    for mc in config.merges:
        with log.stage(f"merge:{mc.method}"):
            ckpt = merge_checkpoints(mc, w1, w2)
            save_checkpoint(ckpt, out / "checkpoints" / f"{mc.method}.json")
            merged.append((mc.name, ckpt))

    with log.stage("mergetune"):
        history: list[dict] = []
        reads_before = pretrain_data.reads
        ours = mergetune_checkpoint(config, tp, w1, w2, history=history)
        reads_during = pretrain_data.reads - reads_before
        save_checkpoint(ours, out / "checkpoints" / "mergetune.json")
        with open(out / "mergetune_loss.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "task", "surrogate", "lmc", "total"])
            for h in history:
                writer.writerow([h["epoch"]] + [repr(float(h[k])) for k in ("task", "surrogate", "lmc", "total")])

    ensemble = None
    if config.probe.ensemble_alpha is not None:
        with log.stage("ensemble"):
            a = config.probe.ensemble_alpha
            ensemble = (f"ensemble(alpha={a:g})",
                        Checkpoint(spec, linear_merge(w1.params, ours.params, a), "merged",
                                   f"linear(alpha={a:g})[zeroshot -> mergetune]", None, 0))
            save_checkpoint(ensemble[1], out / "checkpoints" / "ensemble.json")

    with log.stage("evaluate"):
        named = [("zeroshot", w1), ("finetuned", w2), *merged, ("mergetune", ours)]
        if ensemble is not None:
            named.append(ensemble)
        rows = [method_row(config, name, ckpt, tp, pretrain_data) for name, ckpt in named]

    probe_files: dict[str, str] = {}
    barriers: dict[str, float] = {}
    with log.stage("probe"):
        paths = {
            "zeroshot_to_finetuned": (w1, w2, ("zeroshot", "finetuned")),
            "mergetune_to_zeroshot": (ours, w1, ("mergetune", "zeroshot")),
            "mergetune_to_finetuned": (ours, w2, ("mergetune", "finetuned")),
        }
        for name, (a, b, ids) in paths.items():
            probe = task2_probe(config, spec, a.params, b.params, tp, ids)
            rel = f"probes/{name}.csv"
            probe.to_csv(out / rel)
            probe_files[name] = rel
            barriers[name] = barrier(probe)

    with log.stage("report"):
        report = RunReport(tuple(rows), probe_files, barriers, "mergetune_loss.csv",
                           config.config_hash(), config.master_seed, reads_during)
        report.to_json(out / "report.json")
        report.to_csv(out / "report.csv")
    return report


# -- sweeps -------------------------------------------------------------------

GRID_ALIASES = {
    "lambda": "mergetune.lambda",
    "beta": "mergetune.beta",
    "tau": "mergetune.tau",
    "n_alpha": "mergetune.n_alpha",
    "density": "merges.ties.density",
    "drop_p": "merges.dare.drop_p",
}


def resolve_grid_key(key: str) -> str:
    full = GRID_ALIASES.get(key, key)
    if full not in KNOWN_KEYS or full in ("master_seed", "out_dir"):
        raise ConfigError(f"invalid sweep grid key {key!r}")
    return full


def cell_key(overrides: dict[str, Any]) -> str:
    """Canonical text for one grid cell: sorted ``key=repr(value)`` pairs."""
    return ",".join(f"{k}={overrides[k]!r}" for k in sorted(overrides))


@dataclass(frozen=True)
class SweepCell:
    index: int
    labels: dict[str, Any]
    config: ExperimentConfig


@dataclass(frozen=True)
class SweepReport:
    keys: tuple[str, ...]
    rows: tuple[dict, ...] = field(default_factory=tuple)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*self.keys, "seed", "base_acc", "novel_acc", "hm"])
            for r in self.rows:
                writer.writerow([*(r[k] for k in self.keys), r["seed"],
                                 f"{r['base_acc']:.6g}", f"{r['novel_acc']:.6g}", f"{r['hm']:.6g}"])


def sweep_cells(base_config: ExperimentConfig, grid: dict[str, Sequence[Any]], out_dir) -> list[SweepCell]:
    """Validate ``grid`` and build every cell config before anything runs."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    keys = list(grid)
    full = [resolve_grid_key(k) for k in keys]
    if len(set(full)) != len(full):
        raise ConfigError("sweep grid names the same setting twice")
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or not grid[k]:
            raise ConfigError(f"sweep grid values for {k!r} must be a non-empty list")
    cells = []
    for index, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        overrides = dict(zip(full, combo))
        seed = hash64(base_config.master_seed, cell_key(overrides))
        cfg = base_config.with_overrides({**overrides, "master_seed": seed,
                                          "out_dir": str(Path(out_dir) / f"cell_{index:03d}")})
        cells.append(SweepCell(index, dict(zip(keys, combo)), cfg))
    return cells


def _run_cell(flat: dict) -> dict:
    cfg = from_flat(flat)
    return run_experiment(cfg).to_dict()


def run_sweep(
    base_config: ExperimentConfig,
    grid: dict[str, Sequence[Any]],
    out_dir=None,
    *,
    workers: Optional[int] = None,
    method: str = "mergetune",
) -> SweepReport:
    """Run every grid cell (concurrently when ``workers`` > 1) and write
    ``sweep.csv`` / ``sweep.json``. Rows report ``method``'s accuracies."""
    out = Path(base_config.out_dir if out_dir is None else out_dir)
    cells = sweep_cells(base_config, grid, out)
    out.mkdir(parents=True, exist_ok=True)
    flats = [c.config.to_flat() for c in cells]
    if workers is not None and workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_cell, flats))
    else:
        reports = [_run_cell(f) for f in flats]
    rows = []
    for cell, rd in zip(cells, reports):
        r = RunReport.from_dict(rd).row(method)
        rows.append({**cell.labels, "seed": cell.config.master_seed, "cell": cell.config.out_dir,
                     "base_acc": r.base_acc, "novel_acc": r.novel_acc, "hm": r.hm})
    report = SweepReport(tuple(grid), tuple(rows))
    report.to_csv(out / "sweep.csv")
    (out / "sweep.json").write_text(json.dumps({"keys": list(grid), "rows": rows}, indent=1), encoding="utf-8")
    return report
