"""Command-line entry point.

Commands
--------
train   : train one model from a JSON config, write a checkpoint + history
sweep   : one training run per multiplier, write report.csv / report.json
audit   : fairness/utility metrics of representation dumps (train + test CSV)
mi      : leakage estimate I(S;Y) of a representation dump
oracle  : run the exact-information identity suite (--self-check) or
          evaluate a (joint, channel, multiplier) fixture
synth   : generate the synthetic colored-pattern dataset as CSV
export  : dump representations of a dataset under a trained checkpoint
report  : project a sweep report into plot-ready CSV files (values in bits)

Every command writes only under its --out directory, mirrors console
diagnostics into ``privfair.log`` beside the outputs, and records a manifest
(command, resolved config, config hash, seeds, inputs, outputs, version,
timestamps).  ``privfair run --from-manifest m.json`` re-executes a recorded
command; outputs are byte-identical because every random choice is seeded by
the config.

Exit codes: 0 success; 1 domain error (undefined metric, numeric divergence);
2 usage or config error.

Config file schema (JSON)::

    {
      "preset": "desk" | "paper",
      "seed": 2020,
      "dataset": {"kind": "toy" | "adult" | "compas",
                   "path": "adult.csv",        # csv datasets
                   "n": 3000,                  # toy only
                   "train_fraction": 0.7},
      "model":   {"zoo": "private" | "fair" | "vae" | "vib" | "ppvae" | "vfae",
                   "multiplier": 2.0, "mmd_weight": 0.0,
                   "representation_dim": 2, "hidden_width": 100,
                   "mc_samples": 1},
      "train":   {"epochs": 50, "learning_rate": 1e-3, "batch_size": 1024,
                   "multipliers": [1.0, 2.0] |
                                  {"lo": 1, "hi": 50, "points": 30,
                                   "spacing": "log" | "linear"}},
      "mine":    {"iterations": 20000, "batch_size": 256},   # optional
      "audit":   {"s_positive": 0, "t_threshold": 5}         # optional binarizer
    }
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audit import AuditSet, audit_row
from .data import (
    Dataset,
    adult_schema,
    compas_schema,
    export_representations,
    load_representations,
    load_tabular,
    split_dataset,
    synth_colored,
    write_split_manifest,
)
from .distributions import NoiseSource
from .errors import (
    ConfigError,
    DataError,
    EmptyGroupError,
    NumericError,
    SchemaError,
    ShapeError,
    TapeError,
    UndefinedMetricError,
)
from .estimators import MineConfig, mine_estimate
from .exactinfo import identity_suite, lagrangian_values, load_channel, load_joint
from .objectives import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, lin_spaced, log_spaced, sweep, train

logger = logging.getLogger("privfair")

USAGE_ERRORS = (ConfigError, DataError, SchemaError, FileNotFoundError)
DOMAIN_ERRORS = (NumericError, UndefinedMetricError, EmptyGroupError, ShapeError, TapeError)


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _load_config(path: str | None) -> dict:
    if path is None:
        raise ConfigError("this command needs --config")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {p}")
    try:
        with open(p, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e


def _model_config(config: dict) -> ModelConfig:
    spec = dict(config.get("model") or {})
    if "zoo" not in spec:
        raise ConfigError("config needs model.zoo")
    zoo = spec.pop("zoo")
    if zoo == "vfae":
        mmd_weight = spec.pop("mmd_weight", None)
        if mmd_weight is None:
            raise ConfigError("vfae config needs model.mmd_weight")
        return ModelConfig.vfae(mmd_weight, **spec)
    multiplier = spec.pop("multiplier", None)
    if multiplier is None:
        raise ConfigError("config needs model.multiplier")
    spec.pop("mmd_weight", None)
    return ModelConfig.from_zoo(zoo, multiplier, **spec)


def _train_config(config: dict) -> TrainConfig:
    spec = dict(config.get("train") or {})
    for key in ("epochs", "learning_rate", "batch_size"):
        if key not in spec:
            raise ConfigError(f"config needs train.{key}")
    multipliers = spec.get("multipliers", [config.get("model", {}).get("multiplier", 1.0)])
    if isinstance(multipliers, dict):
        spacing = multipliers.get("spacing", "log")
        fn = log_spaced if spacing == "log" else lin_spaced
        multipliers = fn(multipliers["lo"], multipliers["hi"], int(multipliers["points"]))
    return TrainConfig(
        epochs=int(spec["epochs"]),
        learning_rate=float(spec["learning_rate"]),
        batch_size=int(spec["batch_size"]),
        multipliers=tuple(float(m) for m in multipliers),
        seed=int(config.get("seed", 2020)),
        preset=str(config.get("preset", "desk")),
        dataset_id=str(config.get("dataset", {}).get("kind", "")),
    )


def _datasets(config: dict) -> tuple[Dataset, Dataset]:
    spec = config.get("dataset") or {}
    kind = spec.get("kind")
    seed = int(config.get("seed", 2020))
    fraction = float(spec.get("train_fraction", 0.7))
    if kind == "toy":
        ds = synth_colored(int(spec.get("n", 3000)), seed=seed)
        return split_dataset(ds, fraction, seed=seed)
    if kind in ("adult", "compas"):
        path = spec.get("path")
        if not path:
            raise ConfigError(f"dataset.kind={kind} needs dataset.path")
        schema = adult_schema() if kind == "adult" else compas_schema()
        return load_tabular(path, schema, train_fraction=fraction, seed=seed)
    raise ConfigError(f"unknown dataset.kind '{kind}' (expected toy | adult | compas)")


def _audit_transform(config: dict):
    spec = config.get("audit")
    if not spec:
        return None
    s_pos = spec.get("s_positive")
    t_thr = spec.get("t_threshold")

    def transform(s, t):
        s_out = (s == int(s_pos)).astype(int) if s_pos is not None else s
        t_out = t
        if t is not None and t_thr is not None:
            t_out = (t >= int(t_thr)).astype(int)
        return s_out, t_out

    return transform


def _write_json(payload: dict, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# commands: each returns (resolved_config, inputs, outputs)
# ---------------------------------------------------------------------------


def cmd_train(args, out_dir: Path):
    config = _load_config(args.config)
    train_ds, _ = _datasets(config)
    model_cfg = _model_config(config)
    train_cfg = _train_config(config)
    model = build_model(model_cfg, train_ds.schema, train_cfg.seed)
    history = train(model, train_ds, train_cfg, NoiseSource(train_cfg.seed))
    ckpt = save_checkpoint(model, out_dir / "checkpoint.bin")
    history_path = _write_json(
        {
            "epochs": [
                {"epoch": e.epoch, "kl": e.kl, "nll": e.nll, "mmd": e.mmd, "total": e.total}
                for e in history.epochs
            ]
        },
        out_dir / "history.json",
    )
    logger.info("trained %s for %d epochs; final total %.4f nats",
                model_cfg.zoo_name, train_cfg.epochs,
                history.final.total if history.final else float("nan"))
    inputs = [args.config] + ([config["dataset"]["path"]] if config.get("dataset", {}).get("path") else [])
    return config, inputs, [str(ckpt), str(ckpt) + ".meta.json", str(history_path)]


def cmd_sweep(args, out_dir: Path):
    config = _load_config(args.config)
    train_ds, test_ds = _datasets(config)
    model_cfg = _model_config(config)
    train_cfg = _train_config(config)
    mine_cfg = MineConfig(**config["mine"]) if config.get("mine") else MineConfig.desk()
    report = sweep(
        train_ds,
        test_ds,
        model_cfg,
        train_cfg,
        out_dir,
        mine_config=mine_cfg,
        audit_transform=_audit_transform(config),
        run_mine=not getattr(args, "no_mine", False),
        run_audit=not getattr(args, "no_audit", False),
    )
    failures = [r.multiplier for r in report.rows if r.error]
    if failures:
        logger.warning("sweep points failed: %s", failures)
    inputs = [args.config] + ([config["dataset"]["path"]] if config.get("dataset", {}).get("path") else [])
    return config, inputs, [str(out_dir / "report.csv"), str(out_dir / "report.json")]


def cmd_audit(args, out_dir: Path):
    reps_train, s_train, t_train = load_representations(args.train_reps)
    reps_test, s_test, t_test = load_representations(args.test_reps)
    config = {
        "seed": args.seed,
        "s_positive": args.s_positive,
        "t_threshold": args.t_threshold,
        "train_reps": str(args.train_reps),
        "test_reps": str(args.test_reps),
    }
    if args.s_positive is not None:
        s_train = (s_train == args.s_positive).astype(int)
        s_test = (s_test == args.s_positive).astype(int)
    if args.t_threshold is not None:
        t_train = None if t_train is None else (t_train >= args.t_threshold).astype(int)
        t_test = None if t_test is None else (t_test >= args.t_threshold).astype(int)
    row = audit_row(
        AuditSet(reps_train, s_train, t_train),
        AuditSet(reps_test, s_test, t_test),
        seed=args.seed,
    )
    payload = {
        "protocol": "train-fit/test-evaluate",
        "seed": args.seed,
        "metrics": {kind: m.to_dict() for kind, m in row.items()},
    }
    out = _write_json(payload, out_dir / "audit.json")
    csv_path = out_dir / "audit.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("kind,accuracy_t,accuracy_s,discrimination,error_gap,eo_gap\n")
        for kind, m in row.items():
            cells = [kind] + [
                "" if v is None else repr(v)
                for v in (m.accuracy_t, m.accuracy_s, m.discrimination, m.error_gap, m.eo_gap)
            ]
            fh.write(",".join(cells) + "\n")
    for kind, m in row.items():
        logger.info("%s: accuracy_s=%.3f accuracy_t=%s", kind, m.accuracy_s,
                    "n/a" if m.accuracy_t is None else f"{m.accuracy_t:.3f}")
    return config, [str(args.train_reps), str(args.test_reps)], [str(out), str(csv_path)]


def cmd_mi(args, out_dir: Path):
    reps, s, _ = load_representations(args.reps)
    overrides = {}
    if args.config:
        overrides = _load_config(args.config).get("mine") or {}
    cfg = MineConfig(**overrides) if overrides else MineConfig.desk()
    n_levels = int(s.max()) + 1
    s_input = np.zeros((len(s), n_levels))
    s_input[np.arange(len(s)), s] = 1.0
    est = mine_estimate(s_input, reps, cfg, seed=args.seed)
    config = {"seed": args.seed, "mine": cfg.to_dict(), "reps": str(args.reps)}
    out = _write_json({"nats": est.nats, "bits": est.bits, "seed": args.seed}, out_dir / "mi.json")
    logger.info("leakage estimate: %.4f nats (%.4f bits)", est.nats, est.bits)
    return config, [str(args.reps)], [str(out)]


def cmd_oracle(args, out_dir: Path):
    config = {"cases": args.cases, "seed": args.seed, "self_check": bool(args.self_check)}
    inputs: list[str] = []
    if args.self_check:
        results = identity_suite(seed=args.seed, cases=args.cases)
        for r in results:
            status = "pass" if r.passed else "FAIL"
            logger.info("%-38s %s (worst %.3e, tol %.0e)", r.name, status, r.worst, r.tolerance)
        payload = {
            "checks": [
                {"name": r.name, "worst": r.worst, "tolerance": r.tolerance, "passed": r.passed}
                for r in results
            ]
        }
        out = _write_json(payload, out_dir / "oracle.json")
        if not all(r.passed for r in results):
            raise NumericError("oracle self-check failed")
        return config, inputs, [str(out)]
    if not (args.joint and args.channel):
        raise ConfigError("oracle needs --self-check or both --joint and --channel")
    joint = load_joint(args.joint)
    ch = load_channel(args.channel)
    rec = lagrangian_values(joint, ch, args.lam)
    config.update({"joint": str(args.joint), "channel": str(args.channel), "lam": args.lam})
    inputs = [str(args.joint), str(args.channel)]
    payload = {
        "lam": rec.lam,
        "gamma": rec.gamma,
        "alpha": rec.alpha,
        "beta": rec.beta,
        "private_lagrangian": rec.private_lagrangian,
        "private_compression_form": rec.private_compression_form,
        "funnel_lagrangian": rec.funnel_lagrangian,
        "fair_lagrangian": rec.fair_lagrangian,
        "fair_compression_form": rec.fair_compression_form,
    }
    out = _write_json(payload, out_dir / "oracle.json")
    logger.info("objective values written for lam=%.4g", args.lam)
    return config, inputs, [str(out)]


def cmd_synth(args, out_dir: Path):
    config = {"n": args.n, "seed": args.seed, "train_fraction": args.train_fraction}
    ds = synth_colored(args.n, seed=args.seed)
    train_ds, test_ds = split_dataset(ds, args.train_fraction, seed=args.seed)
    data_path = out_dir / "toy.csv"
    with open(data_path, "w", encoding="utf-8") as fh:
        names = [f.name for f in ds.schema.features]
        fh.write(",".join(names + ["color", "glyph"]) + "\n")
        for i in range(len(ds)):
            cells = [repr(float(v)) for v in ds.x[i]]
            fh.write(",".join(cells + [str(int(ds.s[i])), str(int(ds.t[i]))]) + "\n")
    split_path = out_dir / "split.json"
    write_split_manifest(train_ds, test_ds, split_path)
    logger.info("generated %d toy rows (%d train / %d test)", len(ds), len(train_ds), len(test_ds))
    return config, [], [str(data_path), str(split_path)]


def cmd_export(args, out_dir: Path):
    config = _load_config(args.config)
    config["_export"] = {"split": args.split, "sampled": bool(args.sampled),
                         "checkpoint": str(args.checkpoint)}
    train_ds, test_ds = _datasets(config)
    ds = {"train": train_ds, "test": test_ds}[args.split]
    model = load_checkpoint(args.checkpoint, ds.schema)
    seed = int(config.get("seed", 2020))
    path = export_representations(
        model, ds, NoiseSource(seed), out_dir / f"reps_{args.split}.csv", sampled=args.sampled
    )
    logger.info("exported %d rows to %s", len(ds), path)
    inputs = [args.config, str(args.checkpoint)]
    if config.get("dataset", {}).get("path"):
        inputs.append(config["dataset"]["path"])
    return config, inputs, [str(path)]


REPORT_METRICS = ("accuracy_t", "accuracy_s", "discrimination", "error_gap", "eo_gap")
LN2 = float(np.log(2.0))


def cmd_report(args, out_dir: Path):
    import csv as csv_mod

    src = Path(args.sweep)
    if not src.exists():
        raise ConfigError(f"no such sweep report: {src}")
    with open(src, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv_mod.DictReader(fh))
    if not rows:
        raise ConfigError(f"{src}: sweep report has no rows")

    def fval(row, key):
        v = row.get(key, "")
        return None if v in ("", None) else float(v)

    outputs = []

    def emit(name: str, header: list[str], records: list[list]):
        path = out_dir / f"{name}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for rec in records:
                fh.write(",".join("" if v is None else repr(v) for v in rec) + "\n")
        outputs.append(str(path))

    # compression vs retained information (bits)
    records = []
    for row in rows:
        if row.get("error"):
            continue
        ixy = fval(row, "ixy_upper_nats")
        retained = fval(row, "recon_loglik_nats")
        if retained is None:
            retained = fval(row, "pred_loglik_nats")
        if ixy is None or retained is None:
            continue
        records.append([float(row["multiplier"]), retained / LN2, ixy / LN2])
    emit("compression", ["multiplier", "retained_loglik_bits", "compression_upper_bits"], records)

    # multiplier vs leakage (bits)
    records = [
        [float(r["multiplier"]), fval(r, "mine_bits")]
        for r in rows
        if not r.get("error") and fval(r, "mine_bits") is not None
    ]
    emit("leakage", ["multiplier", "leakage_bits"], records)

    # multiplier vs each fairness/utility metric
    for metric in REPORT_METRICS:
        header = ["multiplier", "logistic_regression", "random_forest"]
        with_prior = metric in ("accuracy_t", "accuracy_s")
        if with_prior:
            header.append("majority_prior")
        records = []
        for row in rows:
            if row.get("error"):
                continue
            rec = [float(row["multiplier"]), fval(row, f"lr_{metric}"), fval(row, f"rf_{metric}")]
            if with_prior:
                rec.append(fval(row, f"prior_{metric}"))
            if all(v is None for v in rec[1:]):
                continue
            records.append(rec)
        emit(metric, header, records)

    logger.info("wrote %d figure-data files", len(outputs))
    return {"sweep": str(src)}, [str(src)], outputs


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privfair",
        description="Private and fair representation learning, auditing, and oracle checks.",
    )
    parser.add_argument("--version", action="version", version=f"privfair {__version__}")
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--out", required=(name != "run"), help="output directory")
        p.set_defaults(fn=fn)
        return p

    p = add("train", cmd_train, help="train one model from a config")
    p.add_argument("--config", required=True)

    p = add("sweep", cmd_sweep, help="train once per multiplier and report")
    p.add_argument("--config", required=True)
    p.add_argument("--no-mine", action="store_true", help="skip leakage estimation")
    p.add_argument("--no-audit", action="store_true", help="skip auditor classifiers")

    p = add("audit", cmd_audit, help="audit representation dumps")
    p.add_argument("--train-reps", required=True)
    p.add_argument("--test-reps", required=True)
    p.add_argument("--seed", type=int, default=2020)
    p.add_argument("--s-positive", type=int, default=None,
                   help="binarize s as (s == value)")
    p.add_argument("--t-threshold", type=int, default=None,
                   help="binarize t as (t >= value)")

    p = add("mi", cmd_mi, help="estimate leakage I(S;Y) of a dump")
    p.add_argument("--reps", required=True)
    p.add_argument("--seed", type=int, default=2020)
    p.add_argument("--config", default=None, help="optional config with a mine section")

    p = add("oracle", cmd_oracle, help="exact-information identity checks")
    p.add_argument("--self-check", action="store_true")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--seed", type=int, default=2020)
    p.add_argument("--joint", default=None, help="plain-text joint table")
    p.add_argument("--channel", default=None, help="plain-text channel table")
    p.add_argument("--lam", type=float, default=1.0)

    p = add("synth", cmd_synth, help="generate the synthetic colored toy")
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--seed", type=int, default=2020)
    p.add_argument("--train-fraction", type=float, default=0.7)

    p = add("export", cmd_export, help="dump representations under a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--sampled", action="store_true",
                   help="draw one sample per row instead of the mean encoding")

    p = add("report", cmd_report, help="project a sweep report to figure data")
    p.add_argument("--sweep", required=True, help="path to a sweep report.csv")

    p = sub.add_parser("run", help="re-execute a recorded manifest")
    p.add_argument("--from-manifest", required=True)
    p.set_defaults(fn=None)

    return parser


def _setup_logging(out_dir: Path) -> logging.Handler:
    fmt = logging.Formatter("%(levelname)s %(name)s: %(message)s")
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(fmt)
    file_handler = logging.FileHandler(out_dir / "privfair.log", encoding="utf-8")
    file_handler.setFormatter(fmt)
    root.addHandler(console)
    root.addHandler(file_handler)
    return console


def _teardown_logging():
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()


def _rerun_from_manifest(path: str) -> int:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such manifest: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    argv = manifest.get("argv")
    if not argv:
        raise ConfigError(f"{p} does not record an argv to re-execute")
    return main(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.command == "run":
        try:
            return _rerun_from_manifest(args.from_manifest)
        except USAGE_ERRORS as e:
            print(f"privfair: {e}", file=sys.stderr)
            return 2

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"privfair: cannot create output directory {out_dir}: {e}", file=sys.stderr)
        return 2

    _setup_logging(out_dir)
    started = time.time()
    try:
        config, inputs, outputs = args.fn(args, out_dir)
    except USAGE_ERRORS as e:
        logger.error("%s", e)
        _teardown_logging()
        return 2
    except DOMAIN_ERRORS as e:
        logger.error("%s", e)
        _teardown_logging()
        return 1
    except Exception:
        logger.exception("unexpected failure")
        _teardown_logging()
        return 1
    finished = time.time()

    manifest = {
        "command": args.command,
        "argv": argv,
        "version": __version__,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": config.get("seed", getattr(args, "seed", None)),
        "inputs": sorted(set(map(str, inputs))),
        "outputs": sorted(set(map(str, outputs))),
        "started_unix": started,
        "finished_unix": finished,
        "wall_clock_seconds": finished - started,
    }
    _write_json(manifest, out_dir / "manifest.json")
    _teardown_logging()
    return 0


if __name__ == "__main__":
    sys.exit(main())
