"""Command-line entry point: ``run``, ``report`` and ``param-count``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.
``MATNET_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import param_count_summary, run_experiment
from .layers import parameter_count
from .serialize import load_model, save_model

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

REPORT_COLUMNS = ("run", "status", "epochs", "best_epoch", "best_val_loss", "best_metric", "params")
RECORD_KEYS = ("epoch", "train_loss", "val_loss", "metric", "wall_ms")


def _thread_limit():
    raw = os.environ.get("MATNET_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError("MATNET_THREADS", f"expected a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.experiment.seed = args.seed
        limiter = _thread_limit()
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_CONFIG
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("runs") / cfg.experiment.name
    try:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.experiment.kind == "param-count":
            counts = param_count_summary(cfg)
            (out / "param_count.json").write_text(json.dumps(counts, indent=2) + "\n")
            print(f"matrix {counts['matrix']} vs vector {counts['vector']}")
            return EXIT_OK
        with limiter, open(out / "metrics.jsonl", "w") as metrics:
            def log(rec):
                metrics.write(json.dumps(asdict(rec)) + "\n")
                metrics.flush()

            result = run_experiment(cfg, on_epoch=log)
        save_model(out / "model.matn", result.arrays)
        (out / "summary.json").write_text(json.dumps(result.summary, indent=2) + "\n")
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    s = result.summary
    line = f"{s['name']}: {s['epochs']} epochs, best val loss {s['best_val_loss']:.6g} at epoch {s['best_epoch']}"
    if "test_metric" in s:
        line += f", test {s['metric_name']} {s['test_metric']:.6g}"
    print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


class RecordError(ValueError):
    pass


def read_metrics(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict) or any(k not in rec for k in RECORD_KEYS):
                raise RecordError(f"{path}:{lineno}: record must have keys {', '.join(RECORD_KEYS)}")
            try:
                rec["epoch"] = int(rec["epoch"])
                for k in ("train_loss", "val_loss", "metric"):
                    rec[k] = float(rec[k])
            except (TypeError, ValueError):
                raise RecordError(f"{path}:{lineno}: non-numeric field") from None
            records.append(rec)
    return records


def summarize(path) -> dict:
    path = Path(path)
    run = path.parent.name if path.name == "metrics.jsonl" and path.parent.name else path.stem
    records = read_metrics(path)
    model = path.parent / "model.matn"
    params = ""
    if model.exists():
        params = sum(a.size for name, a in load_model(model).items() if not name.startswith("state."))
    if not records:
        return {"run": run, "status": "no records", "epochs": 0, "best_epoch": "",
                "best_val_loss": "", "best_metric": "", "params": params}
    best = min(records, key=lambda r: (r["val_loss"], r["epoch"]))
    return {"run": run, "status": "ok", "epochs": len(records), "best_epoch": best["epoch"],
            "best_val_loss": best["val_loss"], "best_metric": best["metric"], "params": params}


def _sort_key(row: dict):
    loss = row["best_val_loss"]
    return (row["status"] != "ok", loss if loss != "" and not math.isnan(loss) else math.inf, row["run"])


def format_table(rows: list[dict]) -> str:
    def cell(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    table = [list(REPORT_COLUMNS)] + [[cell(r[c]) for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip() for line in table)


def cmd_report(args) -> int:
    try:
        rows = sorted((summarize(p) for p in args.files), key=_sort_key)
    except (RecordError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(format_table(rows))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# param-count


def cmd_param_count(args) -> int:
    try:
        counts = parameter_count(args.c1, args.r1, args.c2, args.r2)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    print(f"matrix {counts.matrix_count} vs vector {counts.vector_count}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matnet", description="Matrix neural network experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.add_argument("--seed", type=int, help="override [experiment] seed")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize metrics files")
    rep.add_argument("files", nargs="+")
    rep.add_argument("--csv", help="also write the table as CSV")
    rep.set_defaults(func=cmd_report)

    pc = sub.add_parser("param-count", help="matrix vs vector layer parameter counts")
    for name in ("c1", "r1", "c2", "r2"):
        pc.add_argument(f"--{name}", type=int, required=True)
    pc.set_defaults(func=cmd_param_count)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
