"""Experiment runner: configs, seeded end-to-end training, sweeps, reports.

A config is a flat key-value text file (diff-able, language-neutral); every
run gets a JSON snapshot of it next to its CSV outputs.  Runs are
deterministic given (config, seed): the seed drives dataset generation,
label-noise draws, parameter init, batch shuffles, and the Bernoulli stream.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from hashlib import sha1
from pathlib import Path
from typing import Sequence

import numpy as np

from samkit.data import (
    LabeledDataset,
    NoiseSpec,
    batches_per_epoch,
    inject_label_noise,
    make_dataset,
    shuffle_dataset,
    train_test_split_dataset,
)
from samkit.errors import ConfigurationError, NumericError
from samkit.metrics import full_grad_norm
from samkit.models import Mlp, MlpSpec
from samkit.optim import ALGORITHMS, Optimizer, StepTrace, sam_fraction, sam_zeta, train

# Step traces are thinned (keep every THIN_KEEP-th) once a run exceeds
# THIN_ABOVE steps; aggregates are always computed from the full sequence.
THIN_ABOVE = 100_000
THIN_KEEP = 10


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs.  Desk-scale defaults; not the scale any
    published accuracy numbers come from."""

    algorithm: str = "ae-sam"
    dataset: str = "blobs"          # blobs | two-moons | file
    data_path: str | None = None
    n: int = 2000
    n_features: int = 2
    n_classes: int = 3
    cluster_std: float = 1.5
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    loss: str = "cross-entropy"
    lr: float = 0.1
    rho: float = 0.05
    alpha: float = 0.6
    period: int = 5
    bernoulli_p: float = 0.5
    ema_decay: float = 0.9
    lambda1: float = -1.0
    lambda2: float = 1.0
    batch_size: int = 64
    epochs: int = 50
    noise: float = 0.0
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    perturb_mode: str = "normalized"
    lr_schedule: str = "constant"
    seeds: tuple[int, ...] = (0,)
    outdir: str | None = None
    save_checkpoint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.lr <= 0 or self.rho <= 0:
            raise ConfigurationError("lr and rho must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigurationError("noise level must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.n < 4:
            raise ConfigurationError("batch_size, epochs, and n must be positive")
        if not 0.0 <= self.test_fraction < 1.0 or not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError("split fractions must lie in [0, 1)")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        return self


_LIST_FIELDS = {"hidden", "seeds"}
_NONE_FIELDS = {"data_path", "outdir"}


def config_to_text(config: ExperimentConfig) -> str:
    lines = ["# samkit experiment config"]
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name in _LIST_FIELDS:
            text = ",".join(str(v) for v in value)
        elif value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in fields:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, val)
    return ExperimentConfig(**values).validate()


def _coerce(key: str, val: str):
    if key in _NONE_FIELDS and val.lower() in ("none", ""):
        return None
    if key in _LIST_FIELDS:
        return tuple(int(v) for v in val.split(",") if v.strip())
    hints = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    hint = hints[key]
    if hint == "bool":
        if val.lower() not in ("true", "false"):
            raise ConfigurationError(f"{key}: expected true/false, got {val!r}")
        return val.lower() == "true"
    if hint == "int":
        return int(val)
    if hint == "float":
        return float(val)
    return val


def load_config(path: str | Path) -> ExperimentConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"))


def save_config(config: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(config_to_text(config), encoding="utf-8")
    return path


def apply_overrides(config: ExperimentConfig, pairs: Sequence[str]) -> ExperimentConfig:
    """Apply ``key=value`` strings (CLI ``--set``) on top of a config."""
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not key=value")
        key, _, val = pair.partition("=")
        updates[key.strip()] = _coerce(key.strip(), val.strip())
    return replace(config, **updates).validate()


def config_run_id(config: ExperimentConfig, seed: int) -> str:
    digest = sha1(config_to_text(config).encode()).hexdigest()[:8]
    return f"{config.algorithm}-s{seed}-{digest}"


@dataclass
class RunRecord:
    """One training run: config snapshot, traces, per-epoch curves, and
    the SAM-usage accounting."""

    config: ExperimentConfig
    seed: int
    total_steps: int
    sam_steps: int
    sam_pct: float
    zeta: float
    grad_evals: int
    traces: list[StepTrace]
    traces_thinned: bool
    epoch_train_loss: list[float]
    epoch_train_acc: list[float]
    epoch_test_loss: list[float]
    epoch_test_acc: list[float]
    epoch_val_acc: list[float]
    epoch_full_grad_sq: list[float]
    diverged: bool
    wall_time: float
    model_widths: tuple[int, ...] = ()
    final_w: np.ndarray | None = None

    @property
    def run_id(self) -> str:
        return config_run_id(self.config, self.seed)


def prepare_splits(
    config: ExperimentConfig, seed: int
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset | None]:
    """Dataset -> (train, test, val), with label noise applied to train only.

    The whole pipeline is refreshed per seed (dataset draw included); the
    splits come from a seeded shuffle (so class-sorted files split safely)
    and the test and validation splits never see the noise injector.
    """
    full = make_dataset(
        config.dataset,
        n=config.n,
        seed=seed,
        n_features=config.n_features,
        n_classes=config.n_classes,
        cluster_std=config.cluster_std,
        path=config.data_path,
    )
    full = shuffle_dataset(full, seed)
    train_set, test_set = train_test_split_dataset(full, config.test_fraction)
    val_set = None
    if config.val_fraction > 0:
        keep = train_set.n - int(round(train_set.n * config.val_fraction))
        if keep < 1:
            raise ConfigurationError("validation split leaves no training data")
        train_set, val_set = (
            train_set.subset(np.arange(keep)),
            train_set.subset(np.arange(keep, train_set.n)),
        )
    if config.noise > 0:
        train_set = inject_label_noise(train_set, NoiseSpec(config.noise, seed=seed + 1))
    return train_set, test_set, val_set


def build_model(config: ExperimentConfig, train_set: LabeledDataset) -> Mlp:
    widths = (train_set.dim, *config.hidden, train_set.n_classes)
    return Mlp(MlpSpec(widths, config.activation, config.loss))


def run_experiment(config: ExperimentConfig, seed: int | None = None) -> RunRecord:
    """Train one model per the config; deterministic given (config, seed)."""
    config = config.validate()
    seed = config.seeds[0] if seed is None else int(seed)
    started = time.perf_counter()
    train_set, test_set, val_set = prepare_splits(config, seed)
    if config.batch_size > train_set.n:
        raise ConfigurationError(
            f"batch size {config.batch_size} exceeds training split size {train_set.n}"
        )
    model = build_model(config, train_set)
    w = model.init_params(seed)
    steps_per_epoch = batches_per_epoch(train_set.n, config.batch_size)
    total = steps_per_epoch * config.epochs
    optimizer = Optimizer(
        model,
        algorithm=config.algorithm,
        lr=config.lr,
        total_steps=total,
        rho=config.rho,
        alpha=config.alpha,
        period=config.period,
        bernoulli_p=config.bernoulli_p,
        ema_decay=config.ema_decay,
        lambda1=config.lambda1,
        lambda2=config.lambda2,
        perturb_mode=config.perturb_mode,
        lr_schedule=config.lr_schedule,
        seed=seed,
    )

    epoch_train_loss: list[float] = []
    epoch_train_acc: list[float] = []
    epoch_test_loss: list[float] = []
    epoch_test_acc: list[float] = []
    epoch_val_acc: list[float] = []
    epoch_full_grad_sq: list[float] = []

    def evaluate(_epoch: int, w_now: np.ndarray, _traces) -> None:
        epoch_train_loss.append(model.loss(w_now, train_set.X, train_set.y))
        epoch_train_acc.append(model.accuracy(w_now, train_set.X, train_set.y))
        epoch_test_loss.append(model.loss(w_now, test_set.X, test_set.y))
        epoch_test_acc.append(model.accuracy(w_now, test_set.X, test_set.y))
        if val_set is not None:
            epoch_val_acc.append(model.accuracy(w_now, val_set.X, val_set.y))
        epoch_full_grad_sq.append(full_grad_norm(model, w_now, train_set))

    diverged = False
    traces: list[StepTrace] = []
    try:
        w, _ = train(
            optimizer,
            w,
            train_set,
            config.batch_size,
            config.epochs,
            seed,
            on_epoch_end=evaluate,
            trace_sink=traces,
        )
    except NumericError:
        diverged = True

    sam_steps = sum(tr.xi for tr in traces)
    thinned = len(traces) > THIN_ABOVE
    kept = traces[::THIN_KEEP] if thinned else traces
    return RunRecord(
        config=config,
        seed=seed,
        total_steps=len(traces),
        sam_steps=sam_steps,
        sam_pct=sam_fraction(traces) if traces else 0.0,
        zeta=sam_zeta(traces) if traces else 0.0,
        grad_evals=optimizer.grad_evals,
        traces=kept,
        traces_thinned=thinned,
        epoch_train_loss=epoch_train_loss,
        epoch_train_acc=epoch_train_acc,
        epoch_test_loss=epoch_test_loss,
        epoch_test_acc=epoch_test_acc,
        epoch_val_acc=epoch_val_acc,
        epoch_full_grad_sq=epoch_full_grad_sq,
        diverged=diverged,
        wall_time=time.perf_counter() - started,
        model_widths=model.spec.layer_widths,
        final_w=None if diverged else w,
    )


@dataclass
class SweepResult:
    records: list[RunRecord]
    failures: list[dict]
    table: list[dict]


def _aggregate(records: list[RunRecord]) -> dict:
    pct = np.array([r.sam_pct for r in records])
    test = np.array([r.epoch_test_acc[-1] if r.epoch_test_acc else np.nan for r in records])
    train_a = np.array([r.epoch_train_acc[-1] if r.epoch_train_acc else np.nan for r in records])
    return {
        "n_runs": len(records),
        "sam_pct_mean": float(pct.mean()),
        "sam_pct_std": float(pct.std(ddof=1)) if len(records) > 1 else 0.0,
        "test_acc_mean": float(np.nanmean(test)),
        "test_acc_std": float(np.nanstd(test, ddof=1)) if len(records) > 1 else 0.0,
        "train_acc_mean": float(np.nanmean(train_a)),
    }


def sweep(
    configs: Sequence[ExperimentConfig],
    seeds: Sequence[int],
    max_workers: int | None = None,
) -> SweepResult:
    """Run the Cartesian product configs x seeds; aggregate per config.

    Individual run failures are recorded and the sweep continues.  Runs
    share no state, so with ``max_workers`` they execute on a thread pool;
    results are collected in submission order either way, keeping the
    output deterministic.
    """
    if not configs:
        raise ConfigurationError("sweep needs at least one config")
    pairs = [(config, int(seed)) for config in configs for seed in seeds]
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(run_experiment, c, s) for c, s in pairs]
            outcomes = [_settle(f) for f in futures]
    else:
        outcomes = [_settle_call(run_experiment, c, s) for c, s in pairs]

    records: list[RunRecord] = []
    failures: list[dict] = []
    by_config: dict[int, list[RunRecord]] = {}
    for (config, seed), (record, error) in zip(pairs, outcomes):
        if error is not None:
            failures.append(
                {"algorithm": config.algorithm, "seed": seed, "error": error}
            )
            continue
        records.append(record)
        if record.diverged:
            failures.append(
                {"algorithm": config.algorithm, "seed": seed, "error": "diverged"}
            )
        else:
            by_config.setdefault(id(config), []).append(record)

    table: list[dict] = []
    for config in configs:
        cell = by_config.get(id(config), [])
        if cell:
            table.append(
                {
                    "algorithm": config.algorithm,
                    "lambda1": config.lambda1,
                    "lambda2": config.lambda2,
                    "rho": config.rho,
                    "alpha": config.alpha,
                    "noise": config.noise,
                    **_aggregate(cell),
                }
            )
    return SweepResult(records=records, failures=failures, table=table)


def _settle(future) -> tuple[RunRecord | None, str | None]:
    try:
        return future.result(), None
    except Exception as exc:  # keep sweeping; report at the end
        return None, str(exc)


def _settle_call(fn, *args) -> tuple[RunRecord | None, str | None]:
    try:
        return fn(*args), None
    except Exception as exc:
        return None, str(exc)


def lambda_grid(
    base: ExperimentConfig,
    lambda1_values: Sequence[float],
    lambda2_values: Sequence[float],
    ordered_only: bool = True,
) -> list[ExperimentConfig]:
    """Threshold-schedule ablation grid (optionally lambda1 <= lambda2 only)."""
    configs = []
    for lam2 in lambda2_values:
        for lam1 in lambda1_values:
            if ordered_only and lam1 > lam2:
                continue
            configs.append(replace(base, lambda1=float(lam1), lambda2=float(lam2)))
    return configs


def noise_robustness_suite(
    base: ExperimentConfig,
    noise_levels: Sequence[float] = (0.2, 0.4, 0.6, 0.8),
    algorithms: Sequence[str] = ALGORITHMS,
    seeds: Sequence[int] | None = None,
    looksam_period: int = 2,
    max_workers: int | None = None,
) -> SweepResult:
    """Label-noise robustness protocol: train on corrupted labels, evaluate
    on the clean test split, for each (noise level, algorithm) cell.

    LookSAM runs use the short reuse period that works best under noise.
    """
    for level in noise_levels:
        if not 0.0 <= level <= 1.0:
            raise ConfigurationError("noise levels must lie in [0, 1]")
    seeds = tuple(seeds) if seeds is not None else base.seeds
    configs = []
    for level in noise_levels:
        for algorithm in algorithms:
            cfg = replace(base, noise=float(level), algorithm=algorithm)
            if algorithm in ("looksam", "ae-looksam"):
                cfg = replace(cfg, period=looksam_period)
            configs.append(cfg)
    return sweep(configs, seeds, max_workers=max_workers)


# ---------------------------------------------------------------------------
# Report emission


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def emit_reports(
    records: Sequence[RunRecord], outdir: str | Path
) -> tuple[list[Path], list[dict]]:
    """Write the summary CSV plus per-run step traces, epoch curves, and a
    JSON config snapshot.  Deterministic bytes for identical records; I/O
    failures are reported per file and the rest still written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    errors: list[dict] = []

    def attempt(path: Path, writer) -> None:
        try:
            writer(path)
            written.append(path)
        except OSError as exc:
            errors.append({"path": str(path), "error": str(exc)})

    summary = outdir / "summary.csv"
    attempt(
        summary,
        lambda p: _write_csv(
            p,
            ["algorithm", "seed", "sam_pct", "train_acc", "test_acc", "zeta", "diverged"],
            (
                [
                    r.config.algorithm,
                    r.seed,
                    r.sam_pct,
                    r.epoch_train_acc[-1] if r.epoch_train_acc else float("nan"),
                    r.epoch_test_acc[-1] if r.epoch_test_acc else float("nan"),
                    r.zeta,
                    r.diverged,
                ]
                for r in records
            ),
        ),
    )
    for r in records:
        rid = r.run_id
        attempt(
            outdir / f"{rid}_steps.csv",
            lambda p, r=r: _write_csv(
                p,
                ["step", "xi", "loss", "grad_sq", "c", "mu", "sigma2"],
                (
                    [tr.step, tr.xi, tr.loss, tr.grad_sq, tr.c, tr.mu, tr.sigma2]
                    for tr in r.traces
                ),
            ),
        )
        attempt(
            outdir / f"{rid}_epochs.csv",
            lambda p, r=r: _write_csv(
                p,
                ["epoch", "train_loss", "train_acc", "test_loss", "test_acc", "full_grad_sq"],
                (
                    [
                        e,
                        r.epoch_train_loss[e],
                        r.epoch_train_acc[e],
                        r.epoch_test_loss[e],
                        r.epoch_test_acc[e],
                        r.epoch_full_grad_sq[e],
                    ]
                    for e in range(len(r.epoch_train_loss))
                ),
            ),
        )
        attempt(
            outdir / f"{rid}_config.json",
            lambda p, r=r: p.write_text(
                json.dumps(
                    {
                        "config": dataclasses.asdict(r.config),
                        "seed": r.seed,
                        "total_steps": r.total_steps,
                        "sam_steps": r.sam_steps,
                        "grad_evals": r.grad_evals,
                        "diverged": r.diverged,
                        "traces_thinned": r.traces_thinned,
                        "wall_time": r.wall_time,
                    },
                    indent=2,
                    sort_keys=True,
                )
                + "\n",
                encoding="utf-8",
            ),
        )
    return written, errors


def emit_sweep_table(table: Sequence[dict], outdir: str | Path, name: str = "sweep.csv") -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / name
    if table:
        header = list(table[0].keys())
        _write_csv(path, header, ([row[k] for k in header] for row in table))
    else:
        _write_csv(path, ["empty"], [])
    return path


# ---------------------------------------------------------------------------
# Checkpoints: flat little-endian float64 payload plus a JSON shape manifest.


def save_checkpoint(path: str | Path, w: np.ndarray, manifest: dict) -> Path:
    path = Path(path)
    payload = np.asarray(w, dtype="<f8").ravel()
    path.write_bytes(payload.tobytes())
    manifest = dict(manifest)
    manifest.setdefault("dtype", "<f8")
    manifest["n_params"] = int(payload.size)
    Path(str(path) + ".json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    manifest_path = Path(str(path) + ".json")
    if not manifest_path.exists():
        raise ConfigurationError(f"missing checkpoint manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    w = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    if w.size != int(manifest.get("n_params", w.size)):
        raise ConfigurationError("checkpoint payload does not match its manifest")
    return w, manifest
