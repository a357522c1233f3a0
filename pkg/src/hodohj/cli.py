"""Batch command-line surface.

Command grammar::

    hodohj <command> --config <path> [--out <dir>] [--workers N]
           [--override key=value ...]

Commands: solve, verify, transform, conjugate, compare, rank-map.  Every run
exits 0 (success, artifacts written), 2 (validation or usage failure), or
3 (a declared tolerance gate failed); nonzero exits carry a diagnostic on
stderr.  Outputs (a schema-versioned JSON report plus CSV with
17-significant-digit floats) are byte-deterministic for a given config,
independent of the worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    _as_float,
    _as_int,
    apply_overrides,
    build_config,
    read_config_doc,
    x_names,
    y_names,
)
from .expr import ExprError
from .fields import ExpressionField, GridInterpolantField
from .grid import GridField, lattice_points, load_grid, save_grid, save_grid_csv
from .hjcore import StencilError, pde_residual_numeric
from .hodograph import (
    H_general,
    conjugate_grid,
    default_dual_box,
    forward_point,
    h_field,
    inverse_point,
    transformed_pde_residual,
)
from .solver import branch_evaluator, multistart_branches, select_branch, sweep_grid

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_GATE_FAILED = 3


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hodohj",
        description="Implicit Hamilton-Jacobi solutions, hodograph transforms, oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "solve": cmd_solve,
        "verify": cmd_verify,
        "transform": cmd_transform,
        "conjugate": cmd_conjugate,
        "compare": cmd_compare,
        "rank-map": cmd_rank_map,
    }
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=".", help="output directory (default: cwd)")
        p.add_argument("--workers", type=int, default=1, help="worker threads")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted config override, e.g. solver.multistart_count=9",
        )

    args = parser.parse_args(argv)
    try:
        doc = read_config_doc(args.config)
        apply_overrides(doc, args.override)
        cfg = build_config(doc, Path(args.config))
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return commands[args.command](cfg, out_dir, max(1, args.workers), args.command)
    except (ConfigError, ExprError) as exc:
        print(f"hodohj: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - exit-code contract is exhaustive
        print(f"hodohj: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _pmap(fn: Callable, items: list, workers: int) -> list:
    """Order-preserving map; results are identical for any worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(path: Path, header: list[str], rows: Iterable[list]) -> int:
    count = 0
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
            count += 1
    return count


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write_report(path: Path, command: str, cfg: RunConfig, status: str,
                  gates: dict, summary: dict, points: list) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "dimension": cfg.n,
        "lambda": cfg.lam,
        "status": status,
        "gates": gates,
        "summary": summary,
        "points": points,
    }
    path.write_text(json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n")


def _solve_header(n: int) -> list[str]:
    return x_names(n) + ["t", "u"] + y_names(n) + ["rank", "branch_count", "det_J", "residual"]


def _nan_row(x: np.ndarray, t: float, n: int) -> list:
    return list(x) + [t, float("nan")] + [float("nan")] * n + [0, 0, float("nan"), float("nan")]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path, workers: int, command: str) -> int:
    sol = cfg.implicit_solution()
    xs, ts = cfg.queries()
    if not ts:
        raise ConfigError("config field 'query.t': at least one time is required")
    queries = [(x, t) for t in ts for x in xs]
    policy = cfg.solve_options.branch_policy
    bsets = _pmap(lambda q: multistart_branches(sol, q[0], q[1], cfg.solve_options),
                  queries, workers)

    rows: list[list] = []
    points: list[dict] = []
    failures = 0
    res_norms: list[float] = []
    for (x, t), bset in zip(queries, bsets):
        if bset.empty:
            failures += 1
            rows.append(_nan_row(x, t, cfg.n))
            points.append({"x": x, "t": t, "status": "no_branch", "branch_count": 0})
            continue
        chosen = list(bset.branches) if policy == "all" else [select_branch(bset, policy)]
        for br in chosen:
            rows.append(list(x) + [t, br.u] + list(br.y)
                        + [br.rank, len(bset), br.det_jacobian, br.condition_residual_norm])
            res_norms.append(br.condition_residual_norm)
        points.append({
            "x": x, "t": t, "status": "ok", "branch_count": len(bset),
            "u": [br.u for br in chosen], "rank": [br.rank for br in chosen],
        })

    if cfg.output_csv:
        _write_csv(out / "solve.csv", _solve_header(cfg.n), rows)
    summary = {
        "query_count": len(queries),
        "row_count": len(rows),
        "failures": failures,
        "condition_residual_max": max(res_norms) if res_norms else None,
    }
    if cfg.output_json:
        _write_report(out / "report.json", command, cfg, "ok", {}, summary, points)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, workers: int, command: str) -> int:
    sol = cfg.implicit_solution()
    xs, ts = cfg.queries()
    if not ts:
        raise ConfigError("config field 'query.t': at least one time is required")
    h = _as_float(cfg.verify_spec.get("h", 1e-3), "verify.h")
    gate = cfg.verify_spec.get("max_residual")
    gate = None if gate is None else _as_float(gate, "verify.max_residual")
    policy = cfg.solve_options.branch_policy
    queries = [(x, t) for t in ts for x in xs]

    def work(query):
        x, t = query
        bset = multistart_branches(sol, x, t, cfg.solve_options)
        if bset.empty:
            return bset, []
        chosen = list(bset.branches) if policy == "all" else [select_branch(bset, policy)]
        results = []
        for br in chosen:
            try:
                res = pde_residual_numeric(
                    branch_evaluator(sol, br.y, cfg.solve_options), cfg.setup, x, t, h
                )
            except StencilError:
                res = float("nan")
            results.append((br, res))
        return bset, results

    outputs = _pmap(work, queries, workers)
    rows: list[list] = []
    points: list[dict] = []
    residuals: list[float] = []
    any_nan = False
    for (x, t), (bset, results) in zip(queries, outputs):
        if bset.empty:
            rows.append(_nan_row(x, t, cfg.n))
            points.append({"x": x, "t": t, "status": "no_branch", "branch_count": 0})
            any_nan = True
            continue
        for br, res in results:
            rows.append(list(x) + [t, br.u] + list(br.y)
                        + [br.rank, len(bset), br.det_jacobian, res])
            if math.isnan(res):
                any_nan = True
            else:
                residuals.append(abs(res))
        points.append({
            "x": x, "t": t, "status": "ok", "branch_count": len(bset),
            "pde_residual": [r for _, r in results],
        })

    observed = max(residuals) if residuals else None
    passed = gate is None or (not any_nan and observed is not None and observed <= gate)
    if cfg.output_csv:
        _write_csv(out / "verify.csv", _solve_header(cfg.n), rows)
    gates = {} if gate is None else {
        "max_residual": gate, "observed_max": observed, "passed": passed,
    }
    if cfg.output_json:
        _write_report(out / "report.json", command, cfg,
                      "ok" if passed else "gate_failed", gates,
                      {"query_count": len(queries), "row_count": len(rows)}, points)
    if not passed:
        print(f"hodohj: verify gate failed: max residual {observed} "
              f"(gate {gate}, unevaluable points: {any_nan})", file=sys.stderr)
        return EXIT_GATE_FAILED
    return EXIT_OK


def cmd_transform(cfg: RunConfig, out: Path, workers: int, command: str) -> int:
    spec = cfg.transform_spec
    source = spec.get("source", "solution")
    raw_points = spec.get("points")
    if raw_points is None:
        raise ConfigError("config field 'transform.points': required")
    pts = np.atleast_2d(np.asarray(
        [[_as_float(c, "transform.points") for c in np.atleast_1d(p)] for p in raw_points]
    ))
    if pts.shape[1] != cfg.n:
        raise ConfigError(f"config field 'transform.points': each point needs {cfg.n} coordinates")

    rows: list[list] = []
    points: list[dict] = []
    if source == "solution":
        sol = cfg.implicit_solution()
        if spec.get("t") is None:
            raise ConfigError("config field 'transform.t': required for source=solution")
        t = _as_float(spec["t"], "transform.t")
        header = ["t"] + y_names(cfg.n) + ["H"] + x_names(cfg.n) + ["u", "residual"]
        hs = h_field(sol, t)
        for y in pts:
            hv = H_general(sol, t, y)
            x, u = inverse_point(hs, y)
            res = transformed_pde_residual(sol, t, y)
            rows.append([t] + list(y) + [hv] + list(x) + [u, res])
            points.append({"t": t, "y": y, "H": hv, "x": x, "u": u, "residual": res})
    elif source == "field":
        direction = spec.get("direction", "forward")
        if spec.get("field") is None:
            raise ConfigError("config field 'transform.field': required for source=field")
        if direction == "forward":
            fld = ExpressionField(str(spec["field"]), x_names(cfg.n))
            header = x_names(cfg.n) + y_names(cfg.n) + ["H"]
            for x in pts:
                img = forward_point(fld, x)
                rows.append(list(x) + list(img.y) + [img.H])
                points.append({"x": x, "y": img.y, "H": img.H})
        elif direction == "inverse":
            fld = ExpressionField(str(spec["field"]), y_names(cfg.n))
            header = y_names(cfg.n) + x_names(cfg.n) + ["u"]
            for y in pts:
                x, u = inverse_point(fld, y)
                rows.append(list(y) + list(x) + [u])
                points.append({"y": y, "x": x, "u": u})
        else:
            raise ConfigError("config field 'transform.direction': must be forward or inverse")
    else:
        raise ConfigError("config field 'transform.source': must be solution or field")

    if cfg.output_csv:
        _write_csv(out / "transform.csv", header, rows)
    if cfg.output_json:
        _write_report(out / "report.json", command, cfg, "ok", {},
                      {"point_count": len(rows), "source": source}, points)
    return EXIT_OK


def cmd_conjugate(cfg: RunConfig, out: Path, workers: int, command: str) -> int:
    spec = cfg.conjugate_spec
    if spec.get("grid") is not None:
        grid = load_grid(spec["grid"])
        if grid.n != cfg.n:
            raise ConfigError(f"config field 'conjugate.grid': dimension {grid.n} != n={cfg.n}")
    elif spec.get("expression") is not None:
        if spec.get("box") is None or spec.get("counts") is None:
            raise ConfigError("config field 'conjugate': box and counts are required "
                              "with an expression input")
        fld = ExpressionField(str(spec["expression"]), x_names(cfg.n))
        lower = np.asarray([_as_float(p[0], "conjugate.box") for p in spec["box"]])
        upper = np.asarray([_as_float(p[1], "conjugate.box") for p in spec["box"]])
        counts = np.asarray([_as_int(c, "conjugate.counts") for c in spec["counts"]],
                            dtype=np.int64)
        grid = GridField.sample(fld.value, lower, upper, counts)
    else:
        raise ConfigError("config field 'conjugate': needs a grid path or an expression")

    if spec.get("dual_box") is not None:
        dual_lower = np.asarray([_as_float(p[0], "conjugate.dual_box") for p in spec["dual_box"]])
        dual_upper = np.asarray([_as_float(p[1], "conjugate.dual_box") for p in spec["dual_box"]])
        dual_counts = np.asarray(
            [_as_int(c, "conjugate.dual_counts") for c in spec.get("dual_counts", [])],
            dtype=np.int64,
        )
        if dual_counts.size != cfg.n:
            raise ConfigError("config field 'conjugate.dual_counts': required with dual_box")
    else:
        dual_lower, dual_upper = default_dual_box(grid)
        dual_counts = grid.counts

    result = conjugate_grid(grid, dual_lower, dual_upper, dual_counts)
    if bool(spec.get("negate", False)):
        result = GridField(result.lower, result.upper, result.counts, -result.values)

    save_grid(result, out / "conjugate.grid")
    if cfg.output_csv:
        save_grid_csv(result, out / "conjugate.csv")
    if cfg.output_json:
        _write_report(out / "report.json", command, cfg, "ok", {}, {
            "dual_lower": dual_lower, "dual_upper": dual_upper,
            "dual_counts": dual_counts, "negated": bool(spec.get("negate", False)),
            "value_min": float(np.min(result.values)),
            "value_max": float(np.max(result.values)),
        }, [])
    return EXIT_OK


def _compare_source(cfg: RunConfig, spec: Any, label: str) -> Callable[[np.ndarray], float]:
    if not isinstance(spec, dict):
        raise ConfigError(f"config field 'compare.{label}': must be a mapping")
    if spec.get("expression") is not None:
        fld = ExpressionField(str(spec["expression"]), x_names(cfg.n))
        return fld.value
    if spec.get("grid") is not None:
        grid = load_grid(spec["grid"])
        if grid.n != cfg.n:
            raise ConfigError(f"config field 'compare.{label}.grid': dimension mismatch")
        return GridInterpolantField(grid).value
    if spec.get("implicit") is not None:
        inner = spec["implicit"] if isinstance(spec["implicit"], dict) else {}
        sol = cfg.implicit_solution()
        if inner.get("t") is None:
            raise ConfigError(f"config field 'compare.{label}.implicit.t': required")
        t = _as_float(inner["t"], f"compare.{label}.implicit.t")
        policy = inner.get("policy", "min-u")

        def ev(x: np.ndarray) -> float:
            bset = multistart_branches(sol, x, t, cfg.solve_options)
            return select_branch(bset, policy).u

        return ev
    raise ConfigError(f"config field 'compare.{label}': needs expression, grid, or implicit")


def cmd_compare(cfg: RunConfig, out: Path, workers: int, command: str) -> int:
    spec = cfg.compare_spec
    if spec.get("a") is None or spec.get("b") is None:
        raise ConfigError("config field 'compare': both sources a and b are required")
    region = spec.get("region")
    if not isinstance(region, dict):
        raise ConfigError("config field 'compare.region': required mapping")
    lower = np.asarray([_as_float(v, "compare.region.lower") for v in region.get("lower", [])])
    upper = np.asarray([_as_float(v, "compare.region.upper") for v in region.get("upper", [])])
    counts = np.asarray([_as_int(v, "compare.region.counts") for v in region.get("counts", [])],
                        dtype=np.int64)
    if lower.size != cfg.n or upper.size != cfg.n or counts.size != cfg.n:
        raise ConfigError(f"config field 'compare.region': lower/upper/counts need {cfg.n} entries")
    gate = spec.get("gate_linf")
    gate = None if gate is None else _as_float(gate, "compare.gate_linf")

    a = _compare_source(cfg, spec["a"], "a")
    b = _compare_source(cfg, spec["b"], "b")
    pts = lattice_points(lower, upper, counts)

    def work(p):
        try:
            va, vb = float(a(p)), float(b(p))
            return va, vb, abs(va - vb)
        except Exception:  # noqa: BLE001 - holes are reported per point
            return float("nan"), float("nan"), float("nan")

    triples = _pmap(work, list(pts), workers)
    rows = [list(p) + list(tr) for p, tr in zip(pts, triples)]
    diffs = np.asarray([tr[2] for tr in triples])
    ok = np.isfinite(diffs)
    failures = int(np.count_nonzero(~ok))
    linf = float(np.max(diffs[ok])) if ok.any() else None
    l2 = float(np.sqrt(np.mean(diffs[ok] ** 2))) if ok.any() else None
    worst = pts[int(np.argmax(np.where(ok, diffs, -1.0)))] if ok.any() else None

    passed = gate is None or (linf is not None and failures == 0 and linf <= gate)
    if cfg.output_csv:
        _write_csv(out / "compare.csv", x_names(cfg.n) + ["a", "b", "diff"], rows)
    gates = {} if gate is None else {"gate_linf": gate, "observed_linf": linf, "passed": passed}
    if cfg.output_json:
        _write_report(out / "report.json", command, cfg,
                      "ok" if passed else "gate_failed", gates, {
                          "linf": linf, "l2": l2,
                          "points_compared": int(np.count_nonzero(ok)),
                          "failures": failures, "worst_point": worst,
                      }, [])
    if not passed:
        print(f"hodohj: compare gate failed: linf={linf} gate={gate} failures={failures}",
              file=sys.stderr)
        return EXIT_GATE_FAILED
    return EXIT_OK


def cmd_rank_map(cfg: RunConfig, out: Path, workers: int, command: str) -> int:
    sol = cfg.implicit_solution()
    if cfg.query_grid is None:
        raise ConfigError("config field 'query.grid': rank-map sweeps a grid")
    if not cfg.t_list:
        raise ConfigError("config field 'query.t': at least one time is required")
    sweep = sweep_grid(
        sol,
        cfg.query_grid["lower"], cfg.query_grid["upper"], cfg.query_grid["counts"],
        cfg.t_list, cfg.solve_options,
    )
    header = _solve_header(cfg.n) + ["caustic"]
    rows: list[list] = []
    points: list[dict] = []
    for it, t in enumerate(sweep.t_list):
        for ix in range(sweep.x_points.shape[0]):
            x = sweep.x_points[ix]
            bset = sweep.branch_sets[it][ix]
            flag = bool(sweep.caustic_flags[it, ix])
            if bset.empty:
                rows.append(_nan_row(x, t, cfg.n) + [flag])
                points.append({"x": x, "t": t, "status": "no_branch",
                               "branch_count": 0, "caustic": flag})
                continue
            br = bset.branches[0]
            rows.append(list(x) + [t, br.u] + list(br.y)
                        + [br.rank, len(bset), sweep.det_ref[it, ix],
                           br.condition_residual_norm, flag])
            points.append({
                "x": x, "t": t, "status": "ok", "branch_count": len(bset),
                "rank": br.rank, "det_J": sweep.det_ref[it, ix], "caustic": flag,
            })
    if cfg.output_csv:
        _write_csv(out / "rank_map.csv", header, rows)
    summary = {
        "caustic_points": [{"x": x, "t": t} for x, t in sweep.caustic_points()],
        "failures": len(sweep.failures),
        "branch_count_min": int(sweep.branch_counts().min()),
        "branch_count_max": int(sweep.branch_counts().max()),
    }
    if cfg.output_json:
        _write_report(out / "report.json", command, cfg, "ok", {}, summary, points)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
