"""Command-line front door: synth, run, compare, inspect.

Configs come in as JSON files so every run is a reproducible artifact.
Exit codes are stable: 0 success, 2 configuration error, 3 I/O or format
error, 4 numeric failure.  stdout carries machine-readable summaries
only; diagnostics go to stderr.  ECLVAD_THREADS, when set, bounds the
numeric libraries' thread pools (and thereby run-to-run reductions).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _bound_threads() -> None:
    threads = os.environ.get("ECLVAD_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _load_json(path: Path) -> dict:
    from .errors import ConfigError

    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def cmd_synth(args) -> int:
    from .synthetic import SynthSpec, generate_synthetic

    spec = SynthSpec.from_dict(_load_json(Path(args.spec)))
    manifest = generate_synthetic(spec, args.out)
    stacks = sum(len(t.train) + len(t.test) for t in manifest.tasks)
    sys.stdout.write(_dump_json({
        "manifest": str(Path(args.out) / "manifest.json"),
        "tasks": manifest.num_tasks,
        "stacks": stacks,
    }))
    return EXIT_OK


def _strategy_config(doc: dict):
    from .errors import ConfigError
    from .harness import StrategyConfig

    known = {"manifest", "output_dir", "method", "strategy", "replay_capacity",
             "bank_budget", "pooling", "neighbors", "sigma", "seed"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    for required in ("manifest", "method", "output_dir"):
        if required not in doc:
            raise ConfigError(f"config is missing the {required!r} field")
    config = StrategyConfig(
        method=str(doc["method"]),
        strategy=str(doc.get("strategy", "cl")),
        replay_capacity=int(doc.get("replay_capacity", 0)),
        bank_budget=int(doc.get("bank_budget", 1000)),
        pooling=int(doc.get("pooling", 3)),
        neighbors=int(doc.get("neighbors", 9)),
        sigma=float(doc.get("sigma", 4.0)),
        seed=int(doc.get("seed", 0)),
    )
    config.validate()
    return config


def cmd_run(args) -> int:
    from .harness import CSV_HEADER, report_csv_rows, run_scenario
    from .manifest import load_manifest, manifest_hash

    config_path = Path(args.config)
    doc = _load_json(config_path)
    config = _strategy_config(doc)
    manifest_path = (config_path.parent / doc["manifest"]).resolve() \
        if not Path(doc["manifest"]).is_absolute() else Path(doc["manifest"])
    manifest = load_manifest(manifest_path)
    digest = manifest_hash(manifest_path)
    report = run_scenario(manifest, config, digest)

    out_dir = Path(doc["output_dir"])
    if not out_dir.is_absolute():
        out_dir = config_path.parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(_dump_json(report.to_dict()), encoding="utf-8")
    lines = [",".join(CSV_HEADER)]
    lines += [",".join(str(v) for v in row) for row in report_csv_rows(report)]
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "ledger.json").write_text(
        _dump_json({"cost": report.cost, "per_checkpoint": report.per_checkpoint}),
        encoding="utf-8",
    )
    sys.stdout.write(_dump_json({
        "report": str(out_dir / "report.json"),
        "final_avg": report.final_avg,
    }))
    return EXIT_OK


CURVE_METRICS = ("image_f1", "pixel_f1", "image_auroc", "pixel_auroc")
COST_METRICS = ("update_phase1_ops", "update_phase2_ops",
                "eval_inference_ops", "retention_bytes")


def _checkpoint_rows(report) -> dict:
    """Average each metric over the tasks evaluated at every checkpoint."""
    out = {}
    by_t: dict[int, list] = {}
    for (t, k), cell in report.matrix.items():
        by_t.setdefault(t, []).append(cell)
    for t, cells in sorted(by_t.items()):
        row = {m: sum(c[m] for c in cells) / len(cells) for m in CURVE_METRICS}
        out[t] = row
    for entry in report.per_checkpoint:
        out[entry["checkpoint"]].update(
            {m: entry[m] for m in COST_METRICS}
        )
    return out


def cmd_compare(args) -> int:
    from .errors import ConfigError
    from .harness import SCHEMA_VERSION, EvalReport

    reports = []
    for path in args.reports:
        reports.append(EvalReport.from_dict(_load_json(Path(path))))
    digests = {r.manifest_hash for r in reports}
    if len(digests) != 1:
        raise ConfigError(
            f"reports disagree on the scenario (manifest hashes {sorted(digests)})"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    tables = [(f"{r.method}:{r.strategy}:{i}", _checkpoint_rows(r))
              for i, r in enumerate(reports)]
    all_metrics = CURVE_METRICS + COST_METRICS
    lines = ["schema_version,report,method,strategy,checkpoint,metric,value,delta_vs_first"]
    for i, (label, rows) in enumerate(tables):
        base_rows = tables[0][1]
        r = reports[i]
        for t, row in rows.items():
            for metric in all_metrics:
                value = row[metric]
                delta = value - base_rows[t][metric] if t in base_rows else ""
                lines.append(
                    f"{SCHEMA_VERSION},{i},{r.method},{r.strategy},{t},{metric},{value},{delta}"
                )
    (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    checkpoints = sorted({t for _, rows in tables for t in rows})
    header = "# checkpoint " + " ".join(
        f"{label}:{metric}" for label, _ in tables for metric in all_metrics
    )
    dat = [header]
    for t in checkpoints:
        cols = [str(t)]
        for _, rows in tables:
            for metric in all_metrics:
                cols.append(repr(rows[t][metric]) if t in rows else "nan")
        dat.append(" ".join(cols))
    (out_dir / "curves.dat").write_text("\n".join(dat) + "\n", encoding="utf-8")

    sys.stdout.write(_dump_json({
        "comparison": str(out_dir / "comparison.csv"),
        "curves": str(out_dir / "curves.dat"),
        "reports": len(reports),
    }))
    return EXIT_OK


def _inspect_one(path: Path) -> list[dict]:
    from . import fmap as fmap_mod
    from . import padim as padim_mod
    from . import patchcore as pc_mod

    with open(path, "rb") as f:
        magic = f.read(4)
        f.seek(0)
        if magic == fmap_mod.MAGIC:
            stack = fmap_mod.read_stack(f)
            return [{
                "format": "FMAP", "file": str(path), "image_id": layer.image_id,
                "layer": i, "channels": layer.channels, "height": layer.height,
                "width": layer.width, "label": fmap_mod.label_name(layer.label),
                "mask": layer.mask is not None,
            } for i, layer in enumerate(stack.layers)]
        if magic == pc_mod.BANK_MAGIC:
            bank = pc_mod.read_bank(f)
            return [{
                "format": "BANK", "file": str(path), "task": bank.task_name,
                "dim": bank.d, "count": len(bank.vectors), "seed": bank.gonzalez_seed,
            }]
        if magic == padim_mod.GAUS_MAGIC:
            fld = padim_mod.read_field(f)
            return [{
                "format": "GAUS", "file": str(path), "mode": fld.mode,
                "grid": list(fld.grid), "dim": fld.d,
                "n_samples": fld.n_samples, "epsilon": fld.epsilon,
            }]
    from .errors import FormatError
    raise FormatError(f"{path}: unknown magic {magic!r}")


def cmd_inspect(args) -> int:
    for path in args.paths:
        for record in _inspect_one(Path(path)):
            sys.stdout.write(_dump_json(record))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eclvad",
        description="continual visual anomaly detection over feature maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic scenario")
    p_synth.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p_synth.add_argument("--out", required=True, help="output scenario directory")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="run a method over a scenario")
    p_run.add_argument("--config", required=True, help="run config JSON file")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate multiple reports")
    p_cmp.add_argument("reports", nargs="+", help="report.json files")
    p_cmp.add_argument("--out", required=True, help="output directory")
    p_cmp.set_defaults(func=cmd_compare)

    p_ins = sub.add_parser("inspect", help="dump FMAP/BANK/GAUS headers")
    p_ins.add_argument("paths", nargs="+", help="binary files to inspect")
    p_ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    _bound_threads()
    parser = build_parser()
    args = parser.parse_args(argv)

    import numpy as np

    from .errors import ConfigError, DataError, FormatError, MetricError, NumericError

    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except (FormatError, DataError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except MetricError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
