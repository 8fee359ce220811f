"""Command-line entry point.

Exit codes: 0 all criteria pass, 1 a tolerance criterion failed, 2 bad
input (config, CSV or arguments), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import pydantic

from . import __version__
from .errors import InputError, NumericalError, ToleranceError
from .scenarios import ScenarioConfig, ScenarioResult, run
from .trajectories import default_threads

CSV_HEADER = ("scenario", "variable", "metric", "value", "stderr")


def _fmt(v: float | None) -> str:
    return "" if v is None else "%.17g" % v


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(cfg: ScenarioConfig) -> str:
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def results_csv(result: ScenarioResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for var, metric, value, se in result.rows:
        w.writerow((result.scenario, var, metric, _fmt(value), _fmt(se)))
    return buf.getvalue()


def read_results(path: str | Path) -> list[dict]:
    """Parse a results CSV; raise InputError on anything malformed or empty."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no result rows")
    out = []
    for i, r in enumerate(rows, start=2):
        if set(r) != set(CSV_HEADER) or None in r.values():
            raise InputError(f"{path}:{i}: expected columns {','.join(CSV_HEADER)}")
        try:
            value = float(r["value"])
            se = float(r["stderr"]) if r["stderr"] else None
        except ValueError:
            raise InputError(f"{path}:{i}: non-numeric value") from None
        out.append({**r, "value": value, "stderr": se})
    return out


def load_config(path: str | Path, overrides: dict | None = None) -> ScenarioConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ScenarioConfig.model_validate(raw)


# ------------------------------------------------------------------- plots

def _split_var(var: str) -> dict[str, str]:
    out = {}
    for part in var.split(","):
        if "=" not in part:
            raise InputError(f"cannot parse variable {var!r}")
        k, v = part.split("=", 1)
        out[k] = v
    return out


def plot_scaling(rows: list[dict], path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = defaultdict(list)
    slope = None
    for r in rows:
        if r["variable"] == "fit" and r["metric"] == "slope":
            slope = r["value"]
        elif r["metric"] in ("cm_std", "max_abs_vq_cm"):
            (key, x), = _split_var(r["variable"]).items()
            series[(key, r["metric"])].append((float(x), r["value"], r["stderr"]))
    if not series:
        raise InputError("no scaling rows (cm_std or max_abs_vq_cm) in results")
    fig, ax = plt.subplots(figsize=(5, 4))
    for (key, metric), pts in series.items():
        pts.sort()
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        err = [p[2] or 0.0 for p in pts]
        ax.errorbar(x, y, yerr=err, fmt="o", label=metric)
        if slope is not None and math.isfinite(slope) and np.all(y > 0):
            c = np.exp(np.mean(np.log(y) - slope * np.log(x)))
            ax.plot(x, c * x ** slope, "-", label=f"fit slope {slope:.4f}")
        ax.set_xlabel(key)
        ax.set_ylabel(metric)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)


def plot_trajectory(rows: list[dict], path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["metric"] not in ("mean_cm", "classical_x"):
            continue
        parts = _split_var(r["variable"])
        t = float(parts.pop("t"))
        label = ",".join(f"{k}={v}" for k, v in parts.items())
        series[label][r["metric"]].append((t, r["value"]))
    if not series:
        raise InputError("no trajectory rows (mean_cm, classical_x) in results")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, metrics in series.items():
        for metric, style in (("mean_cm", "-"), ("classical_x", "--")):
            pts = sorted(metrics.get(metric, []))
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], style,
                        label=f"{label} {'<X>' if metric == 'mean_cm' else 'classical'}")
    ax.set_xlabel("t")
    ax.set_ylabel("X")
    ax.legend(fontsize=6)
    _save(fig, path)


def _save(fig, path: Path) -> None:
    import matplotlib.pyplot as plt

    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())


PLOTTERS = {"scaling": plot_scaling, "trajectory": plot_trajectory}
AUTO_PLOTS = {"clt-scaling": "scaling", "qpot-scaling": "scaling", "classical-limit": "trajectory"}


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "output_dir": args.output_dir})
    threads = args.threads or default_threads()
    out = Path(cfg.output_dir or f"edlab-out/{cfg.scenario}")
    t0 = time.perf_counter()
    result = run(cfg, threads)
    wall = time.perf_counter() - t0
    atomic_write(out / "results.csv", results_csv(result))
    plots = []
    kind = AUTO_PLOTS.get(cfg.scenario)
    if kind and not args.no_plots:
        name = f"{kind}.svg"
        PLOTTERS[kind](read_results(out / "results.csv"), out / name)
        plots.append(name)
    summary = {
        "scenario": cfg.scenario,
        "config": cfg.model_dump(mode="json"),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "threads": threads,
        "wall_time_s": wall,
        "criteria": [c.as_dict() for c in result.criteria],
        "passed": result.passed,
        "plots": plots,
        "versions": {"edlab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
    }
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, allow_nan=True) + "\n")
    for c in result.criteria:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} {c.op} {c.threshold:.6g}")
    if not result.passed:
        failed = [c.name for c in result.criteria if not c.passed]
        raise ToleranceError(f"criteria failed: {', '.join(failed)} (see {out / 'summary.json'})")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok {cfg.scenario} {config_hash(cfg)}")
    return 0


def cmd_plot(args) -> int:
    rows = read_results(args.results)
    out = Path(args.output or Path(args.results).with_name(f"{args.kind}.svg"))
    PLOTTERS[args.kind](rows, out)
    print(out)
    return 0


def _pydantic_message(exc: pydantic.ValidationError) -> str:
    e = exc.errors()[0]
    loc = ".".join(str(p) for p in e["loc"]) or "config"
    more = f" (+{exc.error_count() - 1} more)" if exc.error_count() > 1 else ""
    return f"{loc}: {e['msg']}{more}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"edlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="validate a config without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    pl = sub.add_parser("plot", help="plot a results CSV")
    pl.add_argument("results")
    pl.add_argument("--kind", choices=sorted(PLOTTERS), required=True)
    pl.add_argument("--output")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("edlab: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ToleranceError as exc:
        print(f"edlab: tolerance: {exc}", file=sys.stderr)
        return 1
    except pydantic.ValidationError as exc:
        print(f"edlab: invalid config: {_pydantic_message(exc)}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"edlab: input error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"edlab: numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
