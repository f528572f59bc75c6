"""Config-driven experiment harness.

Subcommands:
  run      --config <path> [--out <dir>] [--workers <n>]
  report   <dir> [--smooth <w>]
  gen-data --c --d --n --noise --embed-seed --sample-seed --out <path>

`run` trains every (loss, seed) pair of the sweep on one shared dataset
split and writes, under the output directory: the resolved config, one
RunRecord JSON and one per-epoch curve CSV per run, and a comparison
table as CSV and markdown (MAE and SOI_yhat percent, mean +/- std over
seeds). `report` re-renders the table from stored records without
retraining; `--smooth <w>` additionally writes trailing-moving-average
curve files. Exit codes: 0 success, 1 config error, 2 training failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .data import DataFormatError, Dataset, SyntheticSpec, generate, load_csv, split, write_csv
from .losses import LOSS_KINDS, head_for
from .model import MLPSpec
from .trainer import RunRecord, TrainConfig, TrainingDiverged, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_TRAINING = 2
EXIT_IO = 3


class ConfigError(ValueError):
    """Schema violation in the experiment config; message names the field."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which this tool reserves for
    # training failures; flag problems are config errors here.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")


def resolve_config(raw, out_override=None, workers_override=None) -> dict:
    """Validate the raw JSON document and fill defaults. Flags win over
    file fields. Raises ConfigError naming the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    _check_keys(raw, {"out_dir", "dataset", "model", "trainer", "sweep", "seeds", "workers"}, "config")

    out_dir = out_override if out_override is not None else raw.get("out_dir")
    if not out_dir:
        raise ConfigError("out_dir: required (or pass --out)")

    dataset = raw.get("dataset")
    if not isinstance(dataset, dict):
        raise ConfigError("dataset: required object")
    _check_keys(dataset, {"synthetic", "path", "split"}, "dataset")
    if ("synthetic" in dataset) == ("path" in dataset):
        raise ConfigError("dataset: exactly one of 'synthetic' or 'path' required")
    if "synthetic" in dataset:
        syn = dataset["synthetic"]
        if not isinstance(syn, dict):
            raise ConfigError("dataset.synthetic: must be an object")
        _check_keys(syn, {"c", "d", "n", "noise_sigma", "embed_seed", "sample_seed"}, "dataset.synthetic")
        try:
            SyntheticSpec.from_dict(syn)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"dataset.synthetic: {exc}") from None
    sp = dataset.get("split", {})
    if not isinstance(sp, dict):
        raise ConfigError("dataset.split: must be an object")
    _check_keys(sp, {"fractions", "seed"}, "dataset.split")
    fractions = sp.get("fractions", [0.6, 0.2, 0.2])
    if not (isinstance(fractions, list) and len(fractions) == 3):
        raise ConfigError("dataset.split.fractions: need exactly 3 numbers")
    split_seed = int(sp.get("seed", 0))

    model = raw.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("model: must be an object")
    _check_keys(model, {"hidden_dims"}, "model")
    hidden = model.get("hidden_dims", [16, 16])
    if not (isinstance(hidden, list) and all(isinstance(h, int) and h >= 1 for h in hidden)):
        raise ConfigError("model.hidden_dims: need a list of positive integers")

    trainer = raw.get("trainer", {})
    if not isinstance(trainer, dict):
        raise ConfigError("trainer: must be an object")
    _check_keys(trainer, {
        "epochs", "batch_size", "lr", "lr_decay_every", "lr_decay_factor", "lr_min",
        "momentum", "weight_decay", "barrier", "penalty", "ld", "mv", "po",
    }, "trainer")
    for sub, allowed in (
        ("barrier", {"t_init", "growth", "t_max"}),
        ("penalty", {"lam", "eps"}),
        ("ld", {"sigma"}),
        ("mv", {"lambda1", "lambda2"}),
        ("po", {"tau"}),
    ):
        if sub in trainer:
            if not isinstance(trainer[sub], dict):
                raise ConfigError(f"trainer.{sub}: must be an object")
            _check_keys(trainer[sub], allowed, f"trainer.{sub}")

    sweep = raw.get("sweep")
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: required object")
    _check_keys(sweep, {"losses"}, "sweep")
    losses = sweep.get("losses")
    if not (isinstance(losses, list) and losses):
        raise ConfigError("sweep.losses: need a nonempty list of loss kinds")
    for kind in losses:
        if kind not in LOSS_KINDS:
            raise ConfigError(f"sweep.losses: unknown loss {kind!r}; expected one of {list(LOSS_KINDS)}")

    seeds = raw.get("seeds", [0])
    if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds)):
        raise ConfigError("seeds: need a nonempty list of integers")

    workers = workers_override if workers_override is not None else raw.get("workers", 1)
    if not (isinstance(workers, int) and workers >= 1):
        raise ConfigError("workers: need an integer >= 1")

    try:
        # instantiate once to surface invalid trainer values before any run
        _trainer_config(trainer, losses[0], seeds[0])
    except ValueError as exc:
        raise ConfigError(f"trainer: {exc}") from None

    return {
        "out_dir": str(out_dir),
        "dataset": {
            **({"synthetic": dict(dataset["synthetic"])} if "synthetic" in dataset else {"path": dataset["path"]}),
            "split": {"fractions": [float(f) for f in fractions], "seed": split_seed},
        },
        "model": {"hidden_dims": list(hidden)},
        "trainer": trainer,
        "sweep": {"losses": list(losses)},
        "seeds": [int(s) for s in seeds],
        "workers": workers,
    }


def _trainer_config(block: dict, kind: str, seed: int) -> TrainConfig:
    return TrainConfig.from_dict({**block, "loss_kind": kind, "seed": seed})


def _load_dataset(resolved: dict) -> Dataset:
    dsb = resolved["dataset"]
    if "synthetic" in dsb:
        return generate(SyntheticSpec.from_dict(dsb["synthetic"]))
    return load_csv(dsb["path"])


def _execute_run(payload: dict) -> dict:
    """One (loss, seed) training job; must stay picklable for worker pools."""
    parts = [
        Dataset(payload[f"X_{p}"], payload[f"y_{p}"], payload["label_space"], provenance=p)
        for p in ("train", "val", "test")
    ]
    spec = MLPSpec.from_dict(payload["model_spec"])
    cfg = _trainer_config(payload["trainer"], payload["kind"], payload["seed"])
    name = f"{payload['kind']}_seed{payload['seed']}"
    try:
        rec = train(*parts, spec, cfg)
        return {"name": name, "ok": True, "record": rec.to_dict()}
    except TrainingDiverged as exc:
        return {
            "name": name,
            "ok": False,
            "error": str(exc),
            "record": exc.record.to_dict() if exc.record is not None else None,
        }


# ---------------------------------------------------------------------------
# rendering


def _fmt_pair(mean: float, std: float | None, decimals: int) -> str:
    if std is None:
        return f"{mean:.{decimals}f}"
    return f"{mean:.{decimals}f} ± {std:.{decimals}f}"


def render_table(groups: list[tuple[str, list[dict]]]) -> tuple[str, str]:
    """(csv_text, markdown_text) for per-loss test metrics. SOI appears as
    a percent with 2 decimals; stdev only when a loss has several runs."""
    csv_lines = ["loss,n_runs,mae_mean,mae_std,soi_pred_pct_mean,soi_pred_pct_std"]
    md_lines = ["| loss | MAE | SOI_yhat (%) |", "| --- | --- | --- |"]
    for kind, tests in groups:
        if not tests:
            continue
        maes = np.array([t["mae"] for t in tests])
        sois = np.array([t["soi_predicted"] for t in tests]) * 100.0
        multi = len(tests) > 1
        mae_std = float(maes.std()) if multi else None
        soi_std = float(sois.std()) if multi else None
        csv_lines.append(
            f"{kind},{len(tests)},{maes.mean():.4f},"
            + (f"{mae_std:.4f}" if multi else "")
            + f",{sois.mean():.2f},"
            + (f"{soi_std:.2f}" if multi else "")
        )
        md_lines.append(
            f"| {kind} | {_fmt_pair(float(maes.mean()), mae_std, 4)} "
            f"| {_fmt_pair(float(sois.mean()), soi_std, 2)} |"
        )
    return "\n".join(csv_lines) + "\n", "\n".join(md_lines) + "\n"


def _curve_rows(record: dict) -> list[str]:
    rows = ["epoch,train_loss,val_mae,val_soi"]
    for e, (tl, vm) in enumerate(zip(record["train_loss"], record["val_metrics"])):
        rows.append(f"{e},{tl!r},{vm['mae']!r},{vm['soi_predicted']!r}")
    return rows


def _smooth(values: list[float], w: int) -> list[float]:
    out = []
    for i in range(len(values)):
        lo = max(0, i - w + 1)
        out.append(float(np.mean(values[lo : i + 1])))
    return out


def _smoothed_curve_rows(record: dict, w: int) -> list[str]:
    tl = _smooth([float(v) for v in record["train_loss"]], w)
    vm = _smooth([float(m["mae"]) for m in record["val_metrics"]], w)
    vs = _smooth([float(m["soi_predicted"]) for m in record["val_metrics"]], w)
    rows = ["epoch,train_loss,val_mae,val_soi"]
    for e, (a, b, c) in enumerate(zip(tl, vm, vs)):
        rows.append(f"{e},{a!r},{b!r},{c!r}")
    return rows


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg_path = Path(args.config)
    try:
        text = cfg_path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"I/O error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        resolved = resolve_config(raw, out_override=args.out, workers_override=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        ds = _load_dataset(resolved)
    except DataFormatError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # surfaced below from the manifest instead
        sp = split(ds, resolved["dataset"]["split"]["fractions"], resolved["dataset"]["split"]["seed"])
    for w in sp.manifest["warnings"]:
        print(f"warning: {w}", file=sys.stderr)

    out = Path(resolved["out_dir"])
    try:
        (out / "runs").mkdir(parents=True, exist_ok=True)
        (out / "curves").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(resolved, indent=1) + "\n", encoding="utf-8")
        sp.write_manifest(out / "split_manifest.json")
    except OSError as exc:
        print(f"I/O error: cannot prepare output directory: {exc}", file=sys.stderr)
        return EXIT_IO

    base = {
        "label_space": ds.label_space,
        "trainer": resolved["trainer"],
        **{f"X_{p}": getattr(sp, p).features for p in ("train", "val", "test")},
        **{f"y_{p}": getattr(sp, p).labels for p in ("train", "val", "test")},
    }
    jobs = []
    for kind in resolved["sweep"]["losses"]:
        for seed in resolved["seeds"]:
            spec = MLPSpec(
                input_dim=ds.d, hidden_dims=tuple(resolved["model"]["hidden_dims"]),
                c=ds.label_space.c, head=head_for(kind), seed=seed,
            )
            jobs.append({**base, "kind": kind, "seed": seed, "model_spec": spec.to_dict()})

    if resolved["workers"] > 1:
        with ProcessPoolExecutor(max_workers=resolved["workers"]) as pool:
            results = list(pool.map(_execute_run, jobs))
    else:
        results = [_execute_run(j) for j in jobs]

    failures = []
    by_name = {}
    for res in results:
        by_name[res["name"]] = res
        if res["record"] is not None:
            try:
                (out / "runs" / f"{res['name']}.json").write_text(
                    json.dumps(res["record"], indent=1) + "\n", encoding="utf-8"
                )
                (out / "curves" / f"{res['name']}.csv").write_text(
                    "\n".join(_curve_rows(res["record"])) + "\n", encoding="utf-8"
                )
            except OSError as exc:
                print(f"I/O error: cannot write artifacts: {exc}", file=sys.stderr)
                return EXIT_IO
        if not res["ok"]:
            failures.append(res)
            print(f"training failure: {res['name']}: {res['error']}", file=sys.stderr)

    groups = []
    for kind in resolved["sweep"]["losses"]:
        tests = []
        for seed in resolved["seeds"]:
            res = by_name[f"{kind}_seed{seed}"]
            if res["ok"] and res["record"]["test_metrics"] is not None:
                tests.append(res["record"]["test_metrics"])
        groups.append((kind, tests))
    csv_text, md_text = render_table(groups)
    try:
        (out / "table.csv").write_text(csv_text, encoding="utf-8")
        (out / "table.md").write_text(md_text, encoding="utf-8")
    except OSError as exc:
        print(f"I/O error: cannot write table: {exc}", file=sys.stderr)
        return EXIT_IO
    print(md_text, end="")
    if failures:
        print(f"{len(failures)} of {len(jobs)} runs failed; completed rows preserved", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.dir)
    runs_dir = run_dir / "runs"
    if not run_dir.is_dir():
        print(f"I/O error: {run_dir} is not a directory", file=sys.stderr)
        return EXIT_IO
    records: dict[str, dict] = {}
    files = sorted(runs_dir.glob("*.json")) if runs_dir.is_dir() else []
    for f in files:
        try:
            d = json.loads(f.read_text(encoding="utf-8"))
            RunRecord.from_dict(dict(d))  # schema check
        except (OSError, json.JSONDecodeError) as exc:
            print(f"warning: skipping {f.name}: {exc}", file=sys.stderr)
            continue
        except (ValueError, TypeError) as exc:
            print(f"warning: skipping {f.name}: {exc}", file=sys.stderr)
            continue
        records[f.stem] = d

    order: list[str] = []
    cfg_file = run_dir / "config.json"
    if cfg_file.is_file():
        try:
            cfg = json.loads(cfg_file.read_text(encoding="utf-8"))
            order = [k for k in cfg.get("sweep", {}).get("losses", []) if k in LOSS_KINDS]
        except (OSError, json.JSONDecodeError):
            order = []
    kinds_present = []
    for name in sorted(records):
        k = records[name].get("loss_kind")
        if k not in kinds_present:
            kinds_present.append(k)
    kinds = order if order else sorted(kinds_present)

    groups = []
    for kind in kinds:
        tests = [
            r["test_metrics"]
            for name, r in sorted(records.items())
            if r.get("loss_kind") == kind and r.get("status") == "ok" and r.get("test_metrics")
        ]
        groups.append((kind, tests))
    if not any(tests for _, tests in groups):
        print("warning: no usable run records found", file=sys.stderr)
    _, md_text = render_table(groups)
    print(md_text, end="")

    if args.smooth is not None:
        if args.smooth < 1:
            print("config error: --smooth must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        sm_dir = run_dir / f"curves_smooth{args.smooth}"
        try:
            sm_dir.mkdir(exist_ok=True)
            for name, r in sorted(records.items()):
                (sm_dir / f"{name}.csv").write_text(
                    "\n".join(_smoothed_curve_rows(r, args.smooth)) + "\n", encoding="utf-8"
                )
        except OSError as exc:
            print(f"I/O error: cannot write smoothed curves: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK


def cmd_gen_data(args) -> int:
    try:
        spec = SyntheticSpec(
            c=args.c, d=args.d, n=args.n, noise_sigma=args.noise,
            embed_seed=args.embed_seed, sample_seed=args.sample_seed,
        )
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ds = generate(spec)
    try:
        write_csv(ds, args.out)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {ds.n} samples (c={spec.c}, d={spec.d}) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uniord", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="train a sweep from a JSON config")
    pr.add_argument("--config", required=True, help="path to the experiment JSON")
    pr.add_argument("--out", default=None, help="output directory (overrides config out_dir)")
    pr.add_argument("--workers", type=int, default=None, help="parallel run workers (overrides config)")
    pr.set_defaults(func=cmd_run)

    pp = sub.add_parser("report", help="re-render the comparison table from stored records")
    pp.add_argument("dir", help="output directory of a previous run")
    pp.add_argument("--smooth", type=int, default=None, help="also write trailing moving-average curves")
    pp.set_defaults(func=cmd_report)

    pg = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    pg.add_argument("--c", type=int, required=True, help="number of labels")
    pg.add_argument("--d", type=int, required=True, help="feature dimension")
    pg.add_argument("--n", type=int, required=True, help="sample count")
    pg.add_argument("--noise", type=float, default=0.0, help="noise sigma")
    pg.add_argument("--embed-seed", type=int, default=0)
    pg.add_argument("--sample-seed", type=int, default=0)
    pg.add_argument("--out", required=True, help="output CSV path")
    pg.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
