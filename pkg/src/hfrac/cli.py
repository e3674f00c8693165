"""Command line: ``hfrac solve|verify|sweep <config>``.

Exit codes: 0 success, 1 input error (bad config, missing or corrupted
artifacts, unsupported sweep axis), 2 numerical failure or failed checks.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import HfracError, InputError, NumericalError
from .grid import _g17, grid_function_from_csv, grid_function_to_csv
from .pipeline import build_problem, datum, grid_spec, kernel_params, report_label, run_checks, solve

log = logging.getLogger("hfrac")

SWEEP_AXES = {"s": "kernel.s", "p": "kernel.p", "resolution": "grid.resolution", "delta": "checks.deltas",
              "sigma": "checks.sigma", "d": "checks.d"}
_AXIS_CHECK = {"delta": "boundedness", "sigma": "oscillation", "d": "log_lemma"}


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, nan to null, inf to a string."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path: Path, payload: dict) -> str:
    """Write payload plus a checksum of its canonical body; returns the checksum."""
    body = _clean(payload)
    digest = sha256(json.dumps(body, sort_keys=True))
    body["checksum"] = digest
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return digest


def write_text(path: Path, text: str) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return sha256(text)


def _rows_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, bool):
                cells.append("true" if v else "false")
            elif isinstance(v, (float, np.floating)):
                cells.append(_g17(float(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# Commands ---------------------------------------------------------------------------------------


def _solve_artifacts(cfg: ExperimentConfig, out: Path):
    problem, res = solve(cfg)
    csv_text = grid_function_to_csv(res.u)
    csv_sum = write_text(out / "solution.csv", csv_text)
    report = res.report(problem.params)
    write_json(out / "solution.json", {"command": "solve", "config": cfg.resolved(), "report": report,
                                       "artifacts": {"solution.csv": csv_sum}})
    return problem, res


def cmd_solve(cfg: ExperimentConfig, out: Path) -> int:
    try:
        _, res = _solve_artifacts(cfg, out)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 2
    if not res.converged:
        log.error("solver stopped at max_iter with optimality %.3e", res.optimality)
        return 2
    print(f"solved: {res.iterations} iterations, optimality {res.optimality:.3e}, artifacts in {out}")
    return 0


def _load_solution(cfg: ExperimentConfig):
    path = Path(cfg["verify.solution"])
    meta = path.with_suffix(".json")
    if not path.exists():
        raise InputError(f"solution file {path} does not exist")
    if not meta.exists():
        raise InputError(f"solution metadata {meta} does not exist")
    text = path.read_text(encoding="utf-8")
    info = json.loads(meta.read_text(encoding="utf-8"))
    expected = info.get("artifacts", {}).get(path.name)
    if expected is None or sha256(text) != expected:
        raise InputError(f"checksum mismatch for {path}")
    problem = build_problem(cfg)
    u = grid_function_from_csv(text, grid_spec(cfg), datum(cfg))
    return problem, u


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    if not cfg["checks.run"]:
        raise InputError("checks.run is empty; nothing to verify")
    needs_solution = any(c not in ("lemma_gamma", "tail_scaling") for c in cfg["checks.run"])
    problem = result = u = None
    if needs_solution:
        if cfg["verify.solve_first"]:
            try:
                problem, result = _solve_artifacts(cfg, out)
            except NumericalError as exc:
                log.error("numerical failure: %s", exc)
                return 2
            u = result.u
        else:
            problem, u = _load_solution(cfg)
    reports = run_checks(cfg, problem, result, u=u)
    rows = []
    artifacts = {}
    for i, rep in enumerate(reports):
        name = f"report_{i:02d}_{rep.inequality}.json"
        artifacts[name] = write_json(out / name, {"config": cfg.resolved(), "report": rep.to_dict()})
        res = rep.instance.get("resolution", "")
        rows.append([rep.inequality, report_label(rep), "x".join(map(str, res)) if res else "", rep.fitted_c,
                     rep.passed])
    csv_text = _rows_csv(["inequality", "instance", "resolution", "fitted_c", "pass"], rows)
    artifacts["verify.csv"] = write_text(out / "verify.csv", csv_text)
    ok = all(rep.passed for rep in reports)
    write_json(out / "verify.json", {"command": "verify", "config": cfg.resolved(), "artifacts": artifacts,
                                     "all_pass": ok})
    sys.stdout.write(csv_text)
    return 0 if ok else 2


def cmd_sweep(cfg: ExperimentConfig, out: Path, axis: str, values: str) -> int:
    if axis not in SWEEP_AXES:
        raise InputError(f"unsupported sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    items = [v.strip() for v in (values or "").split(",") if v.strip()]
    if not items:
        raise InputError("sweep needs a non-empty --values list")
    checks = cfg["checks.run"] or (_AXIS_CHECK.get(axis, "caccioppoli"),)
    cfg = cfg.with_(**{"checks.run": tuple(checks)})
    rows = []
    base = None
    for raw in items:
        key = SWEEP_AXES[axis]
        c = cfg.set(key, raw)
        if axis in _AXIS_CHECK:
            if base is None:
                base = solve(cfg)
            problem, res = base
        else:
            problem, res = solve(c)
        for rep in run_checks(c, problem, res):
            rows.append([axis, raw, rep.inequality, rep.fitted_c, rep.passed])
    csv_text = _rows_csv(["axis", "value", "check", "fitted_c", "pass"], rows)
    digest = write_text(out / "sweep.csv", csv_text)
    write_json(out / "sweep.json", {"command": "sweep", "axis": axis, "values": items, "config": cfg.resolved(),
                                    "artifacts": {"sweep.csv": digest}})
    sys.stdout.write(csv_text)
    return 0 if all(r[-1] for r in rows) else 2


# Entry point ------------------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="cap on worker threads")
    common.add_argument("--out", default=argparse.SUPPRESS, help="artifact directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    ap = argparse.ArgumentParser(prog="hfrac", parents=[common],
                                 description="Nonlocal p-Laplacian experiments on the Heisenberg group")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve the configured Dirichlet problem"),
                        ("verify", "run the configured checks"),
                        ("sweep", "rerun the pipeline over one parameter")):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("config")
        if name == "sweep":
            sp.add_argument("--axis", required=True)
            sp.add_argument("--values", default="")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        if getattr(args, "threads", None):
            import numba

            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        cfg = load_config(args.config)
        over = {}
        if getattr(args, "seed", None) is not None:
            over["seed"] = args.seed
        if getattr(args, "out", None) is not None:
            over["output.dir"] = args.out
        if over:
            cfg = cfg.with_(**over)
        kernel_params(cfg)
        out = Path(cfg["output.dir"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        return cmd_sweep(cfg, out, args.axis, args.values)
    except InputError as exc:
        log.error("%s", exc)
        return 1
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except HfracError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
