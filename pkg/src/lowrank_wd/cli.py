"""Command-line experiment runner.

Configuration is layered: profile defaults, then a flat ``key = value`` file,
then command-line flags. Relative data paths are resolved against
``$LOWRANK_WD_DATA_DIR`` when it is set; all outputs go under ``--out-dir``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .analysis import (EpochPartition, RandomBatches, bound_value, build_certificate,
                       gradient_census, generalization_gap)
from .data import load_csv, load_idx, split, synthetic_teacher
from .linalg import frobenius_norm, gaussian_matrix, singular_values, spectral_norm, stable_rank
from .network import kaiming_init, load_checkpoint
from .training import AffineY2G, ConstantG, TrainConfig, mse, train

DATA_DIR_ENV = "LOWRANK_WD_DATA_DIR"

SUMMARY_COLUMNS = ["mu_v", "batch_size", "seed", "final_stable_rank", "train_mse", "test_mse",
                   "gap", "epsilon", "cert_distance", "cert_bound", "cert_holds"]


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


# key -> (parser, help)
KEYS = {
    "profile": (str, "synthetic | housing | mnist; selects per-dataset protocol defaults"),
    "dataset": (str, "synthetic | csv | idx"),
    "csv_path": (str, "CSV file (header row required)"),
    "target_column": (str, "CSV target column"),
    "normalize": (str, "none | zscore | minmax[a,b] (CSV features)"),
    "idx_images": (str, "IDX image file (magic 0x00000803)"),
    "idx_labels": (str, "IDX label file (magic 0x00000801)"),
    "n_train": (int, "training samples drawn from the source"),
    "n_test": (int, "test samples drawn from the source"),
    "split_seed": (int, "seed of the train/test split"),
    "synth_n": (int, "synthetic input dimension"),
    "synth_rank": (int, "rank of the synthetic teacher's first layer"),
    "synth_noise": (float, "label noise std of synthetic data"),
    "synth_width": (int, "width of the synthetic teacher"),
    "data_seed": (int, "seed of the synthetic generator"),
    "width": (int, "hidden width m"),
    "batch_size": (int, "mini-batch size B"),
    "epochs": (int, "training epochs"),
    "lr0": (float, "initial learning rate"),
    "decay_factor": (float, "learning-rate decay factor"),
    "decay_period": (int, "epochs between learning-rate decays"),
    "mu_u": (float, "weight decay on U"),
    "mu_b": (float, "weight decay on b"),
    "mu_v": (float, "weight decay on V (constant g)"),
    "g_form": (str, "constant | affine_y2"),
    "g_a": (float, "affine_y2: g = g_a + g_c*y^2"),
    "g_c": (float, "affine_y2: g = g_a + g_c*y^2"),
    "seed": (int, "initialisation and shuffling seed"),
    "drop_last": (_bool, "drop the incomplete final batch (only true is supported)"),
    "census_bins": (int, "histogram bins of the gradient census"),
    "census_seed": (int, "shuffle seed of the census batch partition"),
    "cert_seed": (int, "seed choosing the certificate base sets"),
    "sweep_mu_v": (_floats, "comma-separated mu_v values for `sweep`"),
    "sweep_batch_size": (_ints, "comma-separated batch sizes for `sweep`"),
}

COMMON_DEFAULTS = {
    "normalize": "none", "target_column": "MedHouseVal", "split_seed": 0,
    "synth_n": 8, "synth_rank": 2, "synth_noise": 0.0, "synth_width": 32, "data_seed": 0,
    "lr0": 1e-4, "decay_factor": 0.95, "decay_period": 200, "mu_v": 1.0,
    "g_form": "constant", "g_a": 1.0, "g_c": 1.0, "seed": 0, "drop_last": True,
    "census_bins": 30, "census_seed": 0, "cert_seed": 0,
    "csv_path": None, "idx_images": None, "idx_labels": None,
    "sweep_mu_v": [], "sweep_batch_size": [],
}

PROFILES = {
    "synthetic": {"dataset": "synthetic", "width": 256, "batch_size": 16, "epochs": 2000,
                  "mu_u": 1e-4, "mu_b": 1e-4, "n_train": 512, "n_test": 512},
    "housing": {"dataset": "csv", "width": 8192, "batch_size": 16, "epochs": 5000,
                "mu_u": 1e-4, "mu_b": 1e-4, "n_train": 1800, "n_test": 600},
    "mnist": {"dataset": "idx", "width": 32768, "batch_size": 64, "epochs": 2000,
              "mu_u": 1e-6, "mu_b": 1e-6, "n_train": 9000, "n_test": 1000},
}


@dataclass
class ExperimentConfig:
    profile: str
    dataset: str
    width: int
    batch_size: int
    epochs: int
    lr0: float
    decay_factor: float
    decay_period: int
    mu_u: float
    mu_b: float
    mu_v: float
    g_form: str
    g_a: float
    g_c: float
    seed: int
    drop_last: bool
    n_train: int
    n_test: int
    split_seed: int
    normalize: str
    target_column: str
    csv_path: str | None
    idx_images: str | None
    idx_labels: str | None
    synth_n: int
    synth_rank: int
    synth_noise: float
    synth_width: int
    data_seed: int
    census_bins: int
    census_seed: int
    cert_seed: int
    sweep_mu_v: list = field(default_factory=list)
    sweep_batch_size: list = field(default_factory=list)

    def gspec(self):
        if self.g_form == "constant":
            return ConstantG(self.mu_v)
        if self.g_form == "affine_y2":
            return AffineY2G(self.g_a, self.g_c)
        raise ConfigError(f"unknown g_form {self.g_form!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, lr0=self.lr0,
            decay_factor=self.decay_factor, decay_period=self.decay_period,
            mu_u=self.mu_u, mu_b=self.mu_b, gspec=self.gspec(), seed=self.seed,
            drop_last=self.drop_last)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        values[key] = _convert(key, value, f"{source}:{lineno}")
    return values


def _convert(key: str, value: str, where: str):
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    conv = KEYS[key][0]
    try:
        return conv(value)
    except ValueError:
        tname = {int: "an integer", float: "a real", _bool: "a boolean",
                 _floats: "a list of reals", _ints: "a list of integers"}.get(conv, "a string")
        raise ConfigError(f"{where}: {key} expects {tname}, got {value!r}") from None


def parse_config(path=None, overrides: dict | None = None, text: str | None = None) -> ExperimentConfig:
    """Resolve profile defaults < config file < ``overrides`` (already typed or raw strings)."""
    from_file = {}
    if path is not None:
        from_file = parse_config_text(Path(path).read_text(), str(path))
    elif text is not None:
        from_file = parse_config_text(text)
    flags = {}
    for key, value in (overrides or {}).items():
        where = f"--{key.replace('_', '-')}"
        if key not in KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        flags[key] = _convert(key, value, where) if isinstance(value, str) else value
    profile = flags.get("profile", from_file.get("profile", "synthetic"))
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    merged = {**COMMON_DEFAULTS, **PROFILES[profile], **from_file, **flags, "profile": profile}
    missing = [k for k in ExperimentConfig.__dataclass_fields__ if k not in merged]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    cfg = ExperimentConfig(**{k: merged[k] for k in ExperimentConfig.__dataclass_fields__})
    if cfg.dataset == "csv" and not cfg.csv_path:
        raise ConfigError("missing required key csv_path for dataset = csv")
    if cfg.dataset == "idx" and not (cfg.idx_images and cfg.idx_labels):
        raise ConfigError("missing required keys idx_images/idx_labels for dataset = idx")
    if cfg.dataset not in ("synthetic", "csv", "idx"):
        raise ConfigError(f"unknown dataset {cfg.dataset!r}")
    cfg.gspec()
    return cfg


def _data_path(p: str) -> Path:
    path = Path(p)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not path.is_absolute():
        return Path(base) / path
    return path


def load_data(cfg: ExperimentConfig):
    if cfg.dataset == "synthetic":
        full = synthetic_teacher(cfg.synth_n, cfg.n_train + cfg.n_test, cfg.synth_rank,
                                 cfg.synth_noise, seed=cfg.data_seed, width=cfg.synth_width)
    elif cfg.dataset == "csv":
        full = load_csv(_data_path(cfg.csv_path), cfg.target_column, cfg.normalize)
    else:
        full = load_idx(_data_path(cfg.idx_images), _data_path(cfg.idx_labels))
    return split(full, cfg.n_train, cfg.n_test, seed=cfg.split_seed)


def _certificate(net, train_set, cfg: ExperimentConfig):
    mode = "constant_g" if cfg.g_form == "constant" else "variable_g"
    return build_certificate(net, train_set, cfg.batch_size, cfg.gspec(), mode=mode,
                             seed=cfg.cert_seed)


def run_point(cfg: ExperimentConfig, out_dir) -> dict:
    """Train one configuration and write trainlog.csv, checkpoint.txt, census and certificate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = load_data(cfg)
    init = kaiming_init(cfg.width, train_set.n, seed=cfg.seed)
    net, log = train(init, train_set, test_set, cfg.train_config(),
                     checkpoint_path=out / "checkpoint.txt")
    log.write_csv(out / "trainlog.csv")
    census = gradient_census(net, train_set, cfg.batch_size, cfg.gspec(),
                             EpochPartition(cfg.census_seed), cfg.census_bins)
    census.write_norms_csv(out / "census.csv")
    census.write_histogram_csv(out / "histogram.csv")
    cert = _certificate(net, train_set, cfg)
    cert.write_json(out / "certificate.json")
    gap, _ = generalization_gap(net, train_set, test_set)
    row = {
        "mu_v": cfg.mu_v,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "final_stable_rank": stable_rank(net.V) if np.any(net.V) else math.nan,
        "train_mse": mse(net, train_set),
        "test_mse": mse(net, test_set),
        "gap": gap,
        "epsilon": census.epsilon,
        "cert_distance": cert.distance,
        "cert_bound": cert.bound,
        "cert_holds": cert.holds_proof,
    }
    (out / "summary.json").write_text(json.dumps({**row, "config": asdict(cfg)}, indent=2) + "\n")
    return row


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])


def _sweep_task(args):
    cfg, out_dir = args
    try:
        return run_point(cfg, out_dir), None
    except Exception as exc:  # recorded, the sweep continues
        return None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> list[dict]:
    """Train every (mu_v, batch_size) grid point; failed points become NaN rows."""
    mus = cfg.sweep_mu_v or [cfg.mu_v]
    bss = cfg.sweep_batch_size or [cfg.batch_size]
    if not cfg.sweep_mu_v and not cfg.sweep_batch_size:
        raise ConfigError("sweep needs sweep_mu_v and/or sweep_batch_size")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for mu in mus:
        for bs in bss:
            point = cfg.replace(mu_v=mu, batch_size=bs, sweep_mu_v=[], sweep_batch_size=[])
            tasks.append((point, out / f"mu_v={mu!r}_B={bs}"))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    rows, failures = [], []
    for (point, pdir), (row, err) in zip(tasks, results):
        if err is not None:
            failures.append({"mu_v": point.mu_v, "batch_size": point.batch_size,
                             "out_dir": str(pdir), "error": err})
            row = {c: math.nan for c in SUMMARY_COLUMNS}
            row.update(mu_v=point.mu_v, batch_size=point.batch_size, seed=point.seed,
                       cert_holds=False)
        rows.append(row)
    write_summary_csv(rows, out / "summary.csv")
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    return rows


# -- argument parsing ----------------------------------------------------------

class _JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message, code=2)


def _emit_error(kind: str, message: str, code: int = 1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key")
    p.add_argument("--out-dir", default=".", help="directory receiving all outputs")
    for key, (_, text) in KEYS.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", default=None, help=text)


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        overrides[k] = v
    for key in KEYS:
        v = getattr(args, f"cfg_{key}")
        if v is not None:
            overrides[key] = v
    return parse_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonArgumentParser(
        prog="lowrank-wd",
        description="Train two-layer ReLU networks with SGD + weight decay and measure low-rank bias.",
        epilog=f"Relative data paths are resolved against ${DATA_DIR_ENV} when set. "
               f"Kernel backend: {BACKEND}.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonArgumentParser)

    p = sub.add_parser("train", help="train one configuration")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="train a grid over mu_v and/or batch size")
    _add_config_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="grid points run in parallel")

    p = sub.add_parser("census", help="batch-gradient norm census of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--family", choices=["epoch", "random"], default="epoch")
    p.add_argument("--count", type=int, default=100, help="batches for --family random")
    p.add_argument("--family-seed", type=int, default=None)

    p = sub.add_parser("certify", help="build and check a rank certificate for a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=["constant_g", "variable_g"], default=None)
    p.add_argument("--i1", type=int, default=None)
    p.add_argument("--i2", type=int, default=None)

    p = sub.add_parser("spectrum", help="singular values and stable rank of a checkpoint's V")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--baseline-seed", type=int, default=0,
                   help="seed of the same-size Gaussian (variance 0.01) comparison matrix")

    p = sub.add_parser("bounds", help="evaluate the uniform and low-rank generalisation bounds")
    p.add_argument("--m", type=int, required=True, help="hidden width")
    p.add_argument("--n", type=int, required=True, help="input dimension")
    p.add_argument("--k", type=int, default=1, help="rank multiplier of the low-rank class")
    p.add_argument("--N", type=float, required=True, help="training set size")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--C", type=float, default=1.0)

    p = sub.add_parser("gen-data", help="write a synthetic teacher dataset as CSV")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--teacher-width", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--name", default="synthetic.csv")
    return parser


def _print(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _cmd_train(args):
    cfg = _config_from_args(args)
    _print(run_point(cfg, args.out_dir))


def _cmd_sweep(args):
    cfg = _config_from_args(args)
    rows = run_sweep(cfg, args.out_dir, jobs=args.jobs)
    _print({"points": len(rows), "summary": str(Path(args.out_dir) / "summary.csv")})


def _cmd_census(args):
    cfg = _config_from_args(args)
    net = load_checkpoint(args.checkpoint)
    train_set, _ = load_data(cfg)
    seed = cfg.census_seed if args.family_seed is None else args.family_seed
    family = EpochPartition(seed) if args.family == "epoch" else RandomBatches(args.count, seed)
    census = gradient_census(net, train_set, cfg.batch_size, cfg.gspec(), family, cfg.census_bins)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    census.write_norms_csv(out / "census.csv")
    census.write_histogram_csv(out / "histogram.csv")
    _print({"family": census.family, "batches": len(census.norms), "epsilon": census.epsilon,
            "mean": float(census.norms.mean())})


def _cmd_certify(args):
    cfg = _config_from_args(args)
    net = load_checkpoint(args.checkpoint)
    train_set, _ = load_data(cfg)
    mode = args.mode or ("constant_g" if cfg.g_form == "constant" else "variable_g")
    cert = build_certificate(net, train_set, cfg.batch_size, cfg.gspec(), mode=mode,
                             i1=args.i1, i2=args.i2, seed=cfg.cert_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cert.write_json(out / "certificate.json")
    doc = cert.to_json()
    doc.pop("V_tilde")
    _print(doc)


def _cmd_spectrum(args):
    net = load_checkpoint(args.checkpoint)
    V = net.V
    sv = singular_values(V)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "spectrum.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "singular_value"])
        for i, s in enumerate(sv):
            w.writerow([i, repr(float(s))])
    power = spectral_norm(V)
    baseline = gaussian_matrix(*V.shape, mean=0.0, variance=0.01, seed=args.baseline_seed)
    _print({"shape": list(V.shape), "stable_rank": stable_rank(V) if np.any(V) else None,
            "frobenius_norm": frobenius_norm(V), "spectral_norm": float(sv[0]),
            "spectral_norm_power_iteration": power.value, "power_iteration_converged": power.converged,
            "gaussian_baseline_frobenius": frobenius_norm(baseline)})


def _cmd_bounds(args):
    b = bound_value(args.m, args.n, args.k, args.N, args.delta, args.L, args.C)
    _print(b._asdict())


def _cmd_gen_data(args):
    ds = synthetic_teacher(args.n, args.samples, args.rank, args.noise, seed=args.seed,
                           width=args.teacher_width)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / args.name
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(ds.n)] + ["y"])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    _print({"path": str(path), "samples": len(ds), "n": ds.n})


COMMANDS = {"train": _cmd_train, "sweep": _cmd_sweep, "census": _cmd_census,
            "certify": _cmd_certify, "spectrum": _cmd_spectrum, "bounds": _cmd_bounds,
            "gen-data": _cmd_gen_data}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        _emit_error(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
