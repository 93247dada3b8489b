"""Command-line experiment runner.

Every command resolves its settings from built-in defaults, then an optional
JSON config (``--config``), then explicit flags (flags win). Artifacts land
in ``--out`` together with ``manifest.json``, which records the resolved
settings, the seed and a git-style blob SHA-1 of every artifact. Failures
print a JSON error record to stderr (and ``error.json`` when the output
directory is usable) and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import ONE_D, TWO_D, DatasetSpec, sample_dataset, write_dataset_binary, write_dataset_csv
from .energy import gaussian_quadratic, init_mlp, save_checkpoint
from .errors import DivergedChain, NumericalError, PscdError
from .evaluation import write_metrics_csv
from .experiments import (
    WELL_SPECIFIED,
    ContaminationSettings,
    MmdBenchSettings,
    contamination_table,
    estimator_check,
    grid_argmin,
    landscapes,
    mmd_bench,
    mmd_summary,
    sample_complexity,
    sgd_convergence,
)
from .datasets import MISSPECIFIED_MOG
from .oracle import default_mu_grid, default_sigma_grid, write_landscape_csv
from .sampler import LangevinConfig
from .trainer import ScheduleSpec, TrainConfig, train

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3

LIST_FLAGS = {"--gamma", "--gammas", "--ratios", "--dataset", "--horizons", "--sizes"}

DEFAULTS = {
    "train": {"dataset": "mog2d", "gamma": 1.0, "iterations": 1000, "batch_size": 128, "lr": None,
              "l2_coeff": None, "n": 20000},
    "landscape": {"gamma": [-0.5, 0.0, 0.1, 0.5, 1.0, 2.0], "target": "well"},
    "contamination": {"ratios": [0.01, 0.05, 0.1, 0.2, 0.3], "gamma": [0.0, 0.5, 1.0, 2.0],
                      "iterations": 1500, "batch_size": 1000, "n": 100000, "lr": 0.05},
    "mmd-bench": {"dataset": list(TWO_D), "gamma": [0.0, 1.0], "seeds": 5, "iterations": 1000,
                  "batch_size": 128, "lr": 1e-3, "l2_coeff": 0.01},
    "estimator-check": {"gamma": 1.0, "sizes": [1000, 10000, 100000, 1000000], "trials": 16,
                        "complexity_trials": 200, "eps": 0.5, "delta": 0.1},
    "sgd-convergence": {"horizons": [64, 256, 1024], "trials": 50, "alpha": 0.5, "M": 10.0},
    "dump-dataset": {"dataset": "moon", "n": 1000, "binary": False},
}


class ConfigError(PscdError, ValueError):
    """Unreadable or inconsistent command configuration."""


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(float(v)) for v in str(text).split(",") if v.strip()]


def _names(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of settings (flags override it)")
    common.add_argument("--seed", type=int, help="root seed (default 0)")
    common.add_argument("--out", type=Path, help="output directory (default ./out/<command>)")
    common.add_argument("--threads", type=int, help="worker cap for parallel commands (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pscd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pscd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one model, write its trace and checkpoint")
    p.add_argument("--dataset", type=str)
    p.add_argument("--gamma", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2-coeff", type=float)
    p.add_argument("--n", type=int, help="training set size")

    p = sub.add_parser("landscape", parents=[common], help="1-D Gaussian-energy loss surfaces")
    p.add_argument("--gamma", type=_floats, help="comma-separated gammas")
    p.add_argument("--target", choices=("well", "mog"))

    p = sub.add_parser("contamination", parents=[common], help="KL table under Gaussian contamination")
    p.add_argument("--ratios", type=_floats)
    p.add_argument("--gamma", "--gammas", dest="gamma", type=_floats)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("mmd-bench", parents=[common], help="2-D MMD benchmark, CD vs PS-CD")
    p.add_argument("--dataset", type=_names)
    p.add_argument("--gamma", type=_floats)
    p.add_argument("--seeds", type=int, help="number of seeds per cell")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("estimator-check", parents=[common], help="estimator error vs batch size")
    p.add_argument("--gamma", type=float)
    p.add_argument("--sizes", type=_ints)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("sgd-convergence", parents=[common], help="randomized SGD on the smooth test objective")
    p.add_argument("--horizons", type=_ints)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("dump-dataset", parents=[common], help="write a synthetic dataset")
    p.add_argument("--dataset", type=str)
    p.add_argument("--n", type=int)
    p.add_argument("--binary", action="store_const", const=True, help="also write raw float64")
    return parser


def _rejoin_negative_lists(argv):
    """Let ``--gamma -0.5,0,1`` through argparse, which reads ``-0.5,...`` as a flag."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in LIST_FLAGS and i + 1 < len(argv) and re.match(r"^-\d|^-\.\d", argv[i + 1]):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def resolve(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS[args.command])
    settings.update(seed=0, threads=1)
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(loaded) - set(settings)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        settings.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config", "out", "verbose") or value is None:
            continue
        settings[key] = value
    if int(settings["threads"]) < 1:
        raise ConfigError("--threads must be >= 1")
    return settings


def blob_sha1(data: bytes) -> str:
    """Git's object id for a blob with these contents."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return path


def _gamma_tag(g: float) -> str:
    return f"{g:g}"


# ------------------------------------------------------------------ commands


def cmd_train(s, out: Path):
    name = s["dataset"]
    data = sample_dataset(DatasetSpec(name, int(s["n"]), int(s["seed"])))
    if name in ONE_D:
        model = gaussian_quadratic(0.0, 1.0)
        cfg = TrainConfig(gamma=float(s["gamma"]), batch_size=int(s["batch_size"]), iterations=int(s["iterations"]),
                          schedule=ScheduleSpec("constant", s["lr"] or 0.05), l2_coeff=s["l2_coeff"] or 0.0,
                          seed=int(s["seed"]), eval_every=max(1, int(s["iterations"]) // 20))
    else:
        bench = MmdBenchSettings()
        model = init_mlp(bench.widths, int(s["seed"]))
        cfg = TrainConfig(gamma=float(s["gamma"]), batch_size=int(s["batch_size"]), iterations=int(s["iterations"]),
                          schedule=ScheduleSpec("constant", s["lr"] or bench.step),
                          l2_coeff=bench.l2_coeff if s["l2_coeff"] is None else s["l2_coeff"],
                          sampler=bench.langevin, seed=int(s["seed"]), optimizer="adam",
                          eval_every=max(1, int(s["iterations"]) // 10), probe_size=512)
    model, trace = train(model, data, cfg)
    return [trace.to_csv(out / "trace.csv"), save_checkpoint(model, out / "model.json")]


def cmd_landscape(s, out: Path):
    target = WELL_SPECIFIED if s["target"] == "well" else MISSPECIFIED_MOG
    mu, sigma = default_mu_grid(), default_sigma_grid()
    grids = landscapes(s["gamma"], target, mu, sigma)
    files = [write_landscape_csv(out / f"landscape_gamma_{_gamma_tag(g)}.csv", mu, sigma, g, v)
             for g, v in grids.items()]
    argmins = [(g,) + grid_argmin(v, mu, sigma) for g, v in grids.items()]
    files.append(_write_rows(out / "argmins.csv", ["gamma", "mu", "sigma"], argmins))
    return files


def cmd_contamination(s, out: Path):
    settings = ContaminationSettings(n=int(s["n"]), batch_size=int(s["batch_size"]),
                                     iterations=int(s["iterations"]), step=float(s["lr"]))
    rows = contamination_table(s["ratios"], s["gamma"], int(s["seed"]), settings)
    return [_write_rows(out / "contamination.csv", ["ratio", "gamma", "kl", "mu", "sigma"], rows)]


def cmd_mmd_bench(s, out: Path):
    settings = replace(MmdBenchSettings(), iterations=int(s["iterations"]), batch_size=int(s["batch_size"]),
                       step=float(s["lr"]), l2_coeff=float(s["l2_coeff"]))
    rows = mmd_bench(s["dataset"], s["gamma"], range(int(s["seeds"])), settings, int(s["threads"]))
    summary = [(d, "CD" if g == 0 else "PS-CD", g, m, sd) for (d, g), (m, sd) in mmd_summary(rows).items()]
    return [write_metrics_csv(out / "metrics.csv", rows),
            _write_rows(out / "summary.csv", ["dataset", "method", "gamma", "mean_mmd_x1e4", "std_mmd_x1e4"], summary)]


def cmd_estimator_check(s, out: Path):
    rows = estimator_check(int(s["seed"]), s["sizes"], int(s["trials"]), float(s["gamma"]))
    res = sample_complexity(int(s["seed"]), float(s["gamma"]), float(s["eps"]), float(s["delta"]),
                            int(s["complexity_trials"]))
    return [
        _write_rows(out / "estimator_check.csv", ["N", "error"], rows),
        _write_rows(out / "sample_complexity.csv", ["gamma", "K", "L", "N", "trials", "failures", "failure_rate"],
                    [(res.gamma, res.K, res.L, res.n, res.trials, res.failures, res.failure_rate)]),
    ]


def cmd_sgd_convergence(s, out: Path):
    rows = sgd_convergence(s["horizons"], int(s["trials"]), float(s["alpha"]), float(s["M"]), seed=int(s["seed"]))
    return [_write_rows(out / "sgd_convergence.csv", ["T", "mean_sq_grad"], rows)]


def cmd_dump_dataset(s, out: Path):
    pts = sample_dataset(DatasetSpec(s["dataset"], int(s["n"]), int(s["seed"])))
    files = [write_dataset_csv(out / "dataset.csv", pts)]
    if s["binary"]:
        files.append(write_dataset_binary(out / "dataset.bin", pts))
    return files


COMMANDS = {
    "train": cmd_train,
    "landscape": cmd_landscape,
    "contamination": cmd_contamination,
    "mmd-bench": cmd_mmd_bench,
    "estimator-check": cmd_estimator_check,
    "sgd-convergence": cmd_sgd_convergence,
    "dump-dataset": cmd_dump_dataset,
}


def write_manifest(out: Path, command: str, settings: dict, files) -> Path:
    entries = []
    for f in sorted(Path(f) for f in files):
        entries.append({"path": f.relative_to(out).as_posix(), "sha1": blob_sha1(f.read_bytes())})
    manifest = {"command": command, "version": __version__, "seed": settings["seed"],
                "config": settings, "artifacts": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def error_record(exc: BaseException) -> dict:
    tb = traceback.extract_tb(exc.__traceback__)
    origin = None
    if exc.__traceback__ is not None:
        frame = exc.__traceback__
        while frame.tb_next is not None:
            frame = frame.tb_next
        origin = frame.tb_frame.f_globals.get("__name__")
    record = {
        "error": f"{type(exc).__module__}.{type(exc).__qualname__}",
        "message": str(exc),
        "raised_in": origin,
        "location": f"{Path(tb[-1].filename).name}:{tb[-1].lineno}" if tb else None,
    }
    if isinstance(exc, DivergedChain):
        record["step"] = exc.step
    return record


def main(argv=None) -> int:
    argv = _rejoin_negative_lists(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out if args.out is not None else Path("out") / args.command
    try:
        settings = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](settings, out)
        write_manifest(out, args.command, settings, files)
    except Exception as exc:  # every failure becomes a record
        record = error_record(exc)
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        if out.is_dir():
            (out / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return EXIT_RUNTIME if isinstance(exc, (NumericalError, DivergedChain)) else EXIT_INVALID
    print(out / "manifest.json")
    return EXIT_OK
