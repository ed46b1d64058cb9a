"""Experiment configs, single runs, sweeps and the CSV results ledger."""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .data import AugmentConfig, Dataset, class_sizes, load_csv, make_blobs
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .errors import ConfigError
from .evaluation import PROBE_EPOCHS, ExperimentResult, evaluate
from .losses import PRESETS, LossConfig, preset
from .training import TrainConfig, train_encoder

LEDGER_HEADER = [
    "run_id", "cell", "method", "family", "M", "lambda", "alpha", "seed", "epsilon",
    "standard_acc", "fgsm_acc", "pgd_acc", "transfer_acc", "transfer_fgsm_acc", "status", "result_path",
]
FRONTIER_HEADER = ["method", "row", "seed", "std_acc", "robust_acc", "transfer_std", "transfer_robust"]
SUMMARY_METRICS = ("standard_acc", "fgsm_acc", "pgd_acc", "transfer_acc", "transfer_fgsm_acc")
GRID_KEYS = ("M", "lambda", "alpha", "preset")
TRANSFER_SEED_OFFSET = 1000

_SECTIONS = {"dataset", "encoder", "train", "loss", "evaluation", "output", "seed", "seeds", "name"}


# --- config ------------------------------------------------------------------


def _section(raw: dict, name: str, allowed: set[str]) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError("must be a mapping", name)
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", name)
    return dict(sec)


def _wrap(section: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        raise ConfigError(exc.message, section if exc.field is None else f"{section}.{exc.field}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), section) from exc


@dataclass
class DatasetSpec:
    kind: str = "blobs"
    K: int = 3
    d: int = 8
    n: int = 512
    spread: float = 0.15
    seed: int | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("blobs", "csv"):
            raise ConfigError("must be blobs or csv", "kind")
        if self.kind == "csv" and not self.path:
            raise ConfigError("required when kind is csv", "path")
        if self.kind == "blobs":
            if self.K < 2:
                raise ConfigError("must be at least 2", "K")
            if self.d < 2:
                raise ConfigError("must be at least 2", "d")
            if self.n < self.K:
                raise ConfigError("need at least one point per class", "n")
            if not self.spread >= 0:
                raise ConfigError("must be non-negative", "spread")

    def build(self, seed: int) -> Dataset:
        if self.kind == "csv":
            return load_csv(self.path)
        return make_blobs(self.K, self.d, class_sizes(self.K, self.n), self.spread, seed)


@dataclass
class EvalSpec:
    epsilon: list[float] = field(default_factory=lambda: [0.05])
    probe_epochs: int = PROBE_EPOCHS
    train_fraction: float = 0.8
    transfer: DatasetSpec | None = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if isinstance(self.epsilon, (int, float)):
            self.epsilon = [self.epsilon]
        self.epsilon = [float(e) for e in self.epsilon]
        if not self.epsilon or any(not e > 0 for e in self.epsilon):
            raise ConfigError("need one or more values > 0", "epsilon")
        if self.probe_epochs < 1:
            raise ConfigError("must be at least 1", "probe_epochs")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("must lie in (0, 1)", "train_fraction")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    encoder: dict = field(default_factory=dict)  # EncoderConfig fields except input_dim/seed
    train: dict = field(default_factory=dict)  # TrainConfig fields except loss/seed
    loss: dict = field(default_factory=lambda: {"preset": "simclr"})
    evaluation: EvalSpec = field(default_factory=EvalSpec)
    out_dir: str = "runs"
    ledger: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    name: str | None = None

    @property
    def ledger_path(self) -> Path:
        return Path(self.ledger) if self.ledger else Path(self.out_dir) / "ledger.csv"

    def loss_config(self) -> LossConfig:
        spec = dict(self.loss)
        name = spec.pop("preset", None)
        if name is not None:
            t = spec.pop("t", None)
            if "lambda" in spec:
                spec["lam"] = spec.pop("lambda")
            overrides = {} if t is None else {"t": t}
            base = _wrap("loss", preset, name, **overrides)
            if not spec:
                return base
            merged = base.to_dict()
            merged.update({("lambda" if k == "lam" else k): v for k, v in spec.items()})
            return _wrap("loss", LossConfig.from_dict, merged)
        return _wrap("loss", LossConfig.from_dict, spec)

    @property
    def method(self) -> str:
        if self.name:
            return self.name
        return str(self.loss.get("preset", self.loss.get("family", "custom")))

    def encoder_config(self, input_dim: int, seed: int) -> EncoderConfig:
        return _wrap("encoder", EncoderConfig.from_dict, {**self.encoder, "input_dim": input_dim, "seed": seed})

    def train_config(self, seed: int) -> TrainConfig:
        spec = dict(self.train)
        if isinstance(spec.get("augment"), dict):
            spec["augment"] = _wrap("train.augment", AugmentConfig, **spec["augment"])
        return _wrap("train", TrainConfig, **spec, seed=seed, loss=self.loss_config())

    def validate(self) -> "ExperimentConfig":
        self.loss_config()
        self.train_config(self.seeds[0])
        self.encoder_config(self.dataset.d, self.seeds[0])
        return self

    def to_dict(self) -> dict:
        ev = self.evaluation
        return {
            "name": self.name,
            "dataset": vars(self.dataset).copy(),
            "encoder": copy.deepcopy(self.encoder),
            "train": copy.deepcopy(self.train),
            "loss": copy.deepcopy(self.loss),
            "evaluation": {
                "epsilon": list(ev.epsilon),
                "probe_epochs": ev.probe_epochs,
                "train_fraction": ev.train_fraction,
                "transfer": None if ev.transfer is None else vars(ev.transfer).copy(),
            },
            "output": {"dir": self.out_dir, "ledger": self.ledger},
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("top level must be a mapping", "config")
        extra = set(raw) - _SECTIONS
        if extra:
            raise ConfigError(f"unknown sections {sorted(extra)}", "config")
        if raw.get("dataset") is None:
            raise ConfigError("required section is missing", "dataset")
        ds = _wrap("dataset", DatasetSpec, **_section(raw, "dataset", set(DatasetSpec.__dataclass_fields__)))
        ev_raw = _section(raw, "evaluation", set(EvalSpec.__dataclass_fields__))
        if "transfer" in ev_raw and ev_raw["transfer"] is not None:
            tr = ev_raw["transfer"]
            if not isinstance(tr, dict):
                raise ConfigError("must be a mapping or null", "evaluation.transfer")
            ev_raw["transfer"] = _wrap("evaluation.transfer", DatasetSpec, **{**vars(ds), "seed": None, **tr})
        elif "transfer" not in ev_raw:
            ev_raw["transfer"] = replace(ds, seed=None)
        ev = _wrap("evaluation", EvalSpec, **ev_raw)
        out = _section(raw, "output", {"dir", "ledger"})
        seeds = raw.get("seeds", [raw["seed"]] if "seed" in raw else [0])
        if isinstance(seeds, int) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("must be a non-empty list of integers", "seeds")
        loss = _section(raw, "loss", set(LossConfig.__dataclass_fields__) | {"preset", "lambda", "t"}) or {
            "preset": "simclr"
        }
        cfg = cls(
            dataset=ds,
            encoder=_section(raw, "encoder", set(EncoderConfig.__dataclass_fields__) - {"input_dim", "seed"}),
            train=_section(raw, "train", set(TrainConfig.__dataclass_fields__) - {"loss", "seed"}),
            loss=loss,
            evaluation=ev,
            out_dir=str(out.get("dir", "runs")),
            ledger=out.get("ledger"),
            seeds=list(seeds),
            name=raw.get("name"),
        )
        return cfg.validate()


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3``-style scientific floats (YAML 1.1 wants ``1.0e-3``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def parse_value(text: str):
    return yaml.load(text, Loader=_Loader)


def load_raw(path) -> dict:
    """Parse a YAML or JSON (by ``.json`` suffix) config file into a mapping."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", "config") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.load(text, Loader=_Loader)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "config") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", "config")
    return raw


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(load_raw(path))


def set_path(raw: dict, dotted: str, value) -> dict:
    """Set ``raw["a"]["b"] = value`` for ``dotted == "a.b"``, creating mappings on the way."""
    keys = dotted.split(".")
    cur = raw
    for k in keys[:-1]:
        if cur.get(k) is None:
            cur[k] = {}
        cur = cur[k]
        if not isinstance(cur, dict):
            raise ConfigError("cannot set a key below a non-mapping", dotted)
    cur[keys[-1]] = value
    return raw


# --- single run ---------------------------------------------------------------


def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:8]


def _fresh_dir(root: Path, stem: str) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for i in itertools.count():
        cand = root / (stem if i == 0 else f"{stem}-{i}")
        try:
            cand.mkdir()
            return cand
        except FileExistsError:
            continue


def _dataset_seed(spec: DatasetSpec, seed: int, offset: int = 0) -> int:
    return spec.seed if spec.seed is not None else seed + offset


def run_single(cfg: ExperimentConfig, seed: int, out_root=None, cell: str | None = None) -> tuple[Path, ExperimentResult]:
    """Train, evaluate and write one run directory; returns it and the result."""
    start = time.perf_counter()
    ds = cfg.dataset.build(_dataset_seed(cfg.dataset, seed))
    train, test = ds.split(cfg.evaluation.train_fraction, seed)
    enc_cfg = cfg.encoder_config(ds.dim, seed)
    train_cfg = cfg.train_config(seed)
    enc, history = train_encoder(train, enc_cfg, train_cfg)

    transfer_spec = cfg.evaluation.transfer
    transfer = None
    if transfer_spec is not None:
        transfer = transfer_spec.build(_dataset_seed(transfer_spec, seed, TRANSFER_SEED_OFFSET))
    eps = cfg.evaluation.epsilon
    acc = evaluate(enc, train, test, eps[0], transfer, cfg.evaluation.probe_epochs, seed)
    curve = [{"epsilon": eps[0], "fgsm_acc": acc["fgsm_acc"], "pgd_acc": acc["pgd_acc"]}]
    for e in eps[1:]:
        extra = evaluate(enc, train, test, e, None, cfg.evaluation.probe_epochs, seed)
        curve.append({"epsilon": e, "fgsm_acc": extra["fgsm_acc"], "pgd_acc": extra["pgd_acc"]})

    resolved = cfg.to_dict()
    resolved["resolved"] = {"loss": train_cfg.loss.to_dict(), "train": train_cfg.to_dict(),
                            "encoder": enc_cfg.to_dict()}
    seeds = {"run": seed, "dataset": ds.seed, "train": train_cfg.seed, "encoder": enc_cfg.seed,
             "probe": seed, "transfer_dataset": None if transfer is None else transfer.seed}
    result = ExperimentResult(**acc, epsilon=eps[0], config=resolved, seeds=seeds,
                              history=list(history.epoch_loss), curve=curve)
    result.wall_clock = time.perf_counter() - start

    label = cell or cfg.method
    run_dir = _fresh_dir(Path(out_root or cfg.out_dir), f"{label}-s{seed}-{_config_hash(resolved)}")
    (run_dir / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=True))
    result.to_json(run_dir / "result.json")
    history.to_csv(run_dir / "history.csv")
    save_checkpoint(enc, run_dir / "encoder.json")
    return run_dir, result


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint, seed: int) -> ExperimentResult:
    enc = load_checkpoint(checkpoint)
    ds = cfg.dataset.build(_dataset_seed(cfg.dataset, seed))
    train, test = ds.split(cfg.evaluation.train_fraction, seed)
    transfer_spec = cfg.evaluation.transfer
    transfer = None
    if transfer_spec is not None:
        transfer = transfer_spec.build(_dataset_seed(transfer_spec, seed, TRANSFER_SEED_OFFSET))
    acc = evaluate(enc, train, test, cfg.evaluation.epsilon[0], transfer, cfg.evaluation.probe_epochs, seed)
    return ExperimentResult(**acc, epsilon=cfg.evaluation.epsilon[0], config=cfg.to_dict(),
                            seeds={"run": seed, "dataset": ds.seed, "checkpoint": str(checkpoint)})


# --- ledger -------------------------------------------------------------------


def ledger_row(run_id: str, cell: str, cfg: ExperimentConfig, seed: int, result: ExperimentResult | None,
               status: str = "ok", result_path: str = "") -> dict:
    loss = cfg.loss_config()
    row = {
        "run_id": run_id, "cell": cell, "method": cfg.method, "family": loss.family, "M": loss.M,
        "lambda": loss.lam, "alpha": loss.alpha, "seed": seed, "epsilon": cfg.evaluation.epsilon[0],
        "status": status, "result_path": result_path,
    }
    for k in SUMMARY_METRICS:
        v = None if result is None else getattr(result, k)
        row[k] = "" if v is None else repr(float(v))
    return row


def append_ledger(path, rows) -> None:
    """Append rows; the header is written once and must match on later appends."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and path.stat().st_size > 0:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if header != LEDGER_HEADER:
            raise ConfigError(f"{path} has header {header}, expected {LEDGER_HEADER}", "output.ledger")
        new = False
    else:
        new = True
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LEDGER_HEADER)
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r)


def read_ledger(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- sweep --------------------------------------------------------------------


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        raise ConfigError("grid must name at least one of " + ", ".join(GRID_KEYS), "grid")
    bad = set(grid) - set(GRID_KEYS)
    if bad:
        raise ConfigError(f"unsupported grid keys {sorted(bad)}; use {GRID_KEYS}", "grid")
    keys = [k for k in GRID_KEYS if k in grid]
    values = []
    for k in keys:
        v = grid[k] if isinstance(grid[k], (list, tuple)) else [grid[k]]
        if not v:
            raise ConfigError("needs at least one value", f"grid.{k}")
        values.append(list(v))
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def cell_label(cell: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in cell.items())


def cell_config(base: ExperimentConfig, cell: dict) -> ExperimentConfig:
    loss = dict(base.loss)
    if "preset" in cell:
        if cell["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {cell['preset']!r}; valid presets: {', '.join(PRESETS)}", "grid.preset")
        loss = {"preset": cell["preset"], **{k: v for k, v in loss.items() if k == "t"}}
    for k in ("M", "lambda", "alpha"):
        if k in cell:
            loss[k] = cell[k]
    name = cell.get("preset", base.name or base.method)
    return replace(base, loss=loss, name=str(name)).validate()


def _run_cell(args):
    cfg, seed, out_root, label = args
    try:
        run_dir, result = run_single(cfg, seed, out_root, cell=label.replace(",", "_").replace("=", "-"))
        return seed, label, run_dir.name, result, "ok", str(run_dir / "result.json")
    except Exception as exc:  # recorded per cell; the sweep carries on
        return seed, label, "", None, f"error: {type(exc).__name__}: {exc}", ""


def sweep(base: ExperimentConfig, grid: dict, seeds=None, out_root=None, workers: int = 1) -> tuple[Path, list[dict]]:
    """Run every grid cell for every seed; returns the ledger path and summary rows."""
    seeds = list(seeds if seeds is not None else base.seeds)
    out_root = Path(out_root or base.out_dir)
    cells = []
    for cell in expand_grid(grid):
        label = cell_label(cell)
        try:
            cfg = cell_config(base, cell)
        except ConfigError as exc:
            cells.append((label, None, str(exc)))
            continue
        cells.append((label, cfg, None))
    jobs = [(cfg, s, out_root, label) for label, cfg, err in cells if cfg is not None for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(j) for j in jobs]

    ledger = base.ledger_path if base.ledger else out_root / "ledger.csv"
    rows = []
    by_label = {label: cfg for label, cfg, _ in cells}
    for label, cfg, err in cells:
        if cfg is None:
            rows.extend(ledger_row("", label, base, s, None, f"error: {err}") for s in seeds)
    for (seed, label, run_id, result, status, path) in outcomes:
        rows.append(ledger_row(run_id, label, by_label[label], seed, result, status, path))
    append_ledger(ledger, rows)
    summary = summarize(rows)
    write_summary(out_root / "summary.csv", summary)
    return ledger, summary


def summarize(rows: list[dict]) -> list[dict]:
    """Per-cell mean and sample std over successful seeds.

    A cell with one seed reports std 0 and ``single_seed = 1``.
    """
    cells: dict[str, list[dict]] = {}
    for r in rows:
        cells.setdefault(r["cell"], []).append(r)
    out = []
    for cell, rs in cells.items():
        ok = [r for r in rs if r["status"] == "ok"]
        entry = {"cell": cell, "method": rs[0]["method"], "n_seeds": len(ok), "n_failed": len(rs) - len(ok),
                 "single_seed": int(len(ok) == 1)}
        for k in SUMMARY_METRICS:
            vals = np.array([float(r[k]) for r in ok if r[k] not in ("", None)])
            entry[f"{k}_mean"] = float(vals.mean()) if vals.size else None
            entry[f"{k}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None)
        out.append(entry)
    return out


def write_summary(path, summary: list[dict]) -> None:
    if not summary:
        return
    header = list(summary[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for s in summary:
            w.writerow({k: ("" if v is None else v) for k, v in s.items()})


# --- frontier -----------------------------------------------------------------


def export_frontier(ledger_path, out_path) -> list[dict]:
    """Standard-vs-robust scatter data: one row per (method, seed) plus one mean row per method."""
    rows = [r for r in read_ledger(ledger_path) if r["status"] == "ok"]
    if not rows:
        raise ConfigError(f"{ledger_path} has no successful runs", "ledger")

    def val(r, k):
        return float(r[k]) if r[k] not in ("", None) else float("nan")

    points, by_method = [], {}
    for r in rows:
        p = {"method": r["cell"] if r["cell"] else r["method"], "row": "point", "seed": int(r["seed"]),
             "std_acc": val(r, "standard_acc"), "robust_acc": val(r, "fgsm_acc"),
             "transfer_std": val(r, "transfer_acc"), "transfer_robust": val(r, "transfer_fgsm_acc")}
        points.append(p)
        by_method.setdefault(p["method"], []).append(p)
    means = []
    for method, ps in by_method.items():
        m = {"method": method, "row": "mean", "seed": ""}
        for k in FRONTIER_HEADER[3:]:
            m[k] = float(np.mean([p[k] for p in ps]))
        means.append(m)
    out = points + means
    with open(out_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FRONTIER_HEADER)
        w.writeheader()
        for r in out:
            w.writerow(r)
    return out
