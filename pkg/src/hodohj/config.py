"""Run configuration: YAML schema, validation, and field materialization.

The config file is YAML with the following top-level keys (see README for
the full schema): ``convention``/``lambda``, ``dimension``, ``phi``,
``initial_data``, ``query``, ``solver``, ``verify``, ``transform``,
``conjugate``, ``compare``, ``output``.  Exactly one source for the
parameter function must be resolvable: an expression over y1..yn, a
builtin, a grid file, or derivation from initial data (``phi:
from_initial_data: true``, which takes Phi = -g*).  All cross-field
invariants are checked before any computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .expr import ExprError
from .fields import ExpressionField, GridInterpolantField, QuadraticField, ScalarField
from .grid import GridField, GridFormatError, load_grid
from .hjcore import HJSetup, ImplicitSolution, PRESETS
from .hodograph import default_dual_box, phi_from_initial_data
from .solver import POLICIES, SolveOptions

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "read_config_doc",
    "build_config",
    "apply_overrides",
]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration; message names the field."""


def _fail(fieldname: str, message: str):
    raise ConfigError(f"config field '{fieldname}': {message}")


def _as_float(value: Any, fieldname: str) -> float:
    # YAML 1.1 parses '1e-10' (no dot) as a string; accept it anyway
    try:
        return float(value)
    except (TypeError, ValueError):
        _fail(fieldname, f"expected a number, got {value!r}")


def _as_int(value: Any, fieldname: str) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        _fail(fieldname, f"expected an integer, got {value!r}")
    return out


def _as_box(value: Any, n: int, fieldname: str) -> tuple[np.ndarray, np.ndarray]:
    """Boxes are written per axis: [[lo1, hi1], [lo2, hi2], ...]."""
    if not isinstance(value, (list, tuple)) or len(value) != n:
        _fail(fieldname, f"expected {n} [lo, hi] pairs")
    lower = np.empty(n)
    upper = np.empty(n)
    for a, pair in enumerate(value):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            _fail(fieldname, f"axis {a}: expected a [lo, hi] pair")
        lower[a] = _as_float(pair[0], fieldname)
        upper[a] = _as_float(pair[1], fieldname)
        if not upper[a] > lower[a]:
            _fail(fieldname, f"axis {a}: upper bound must exceed lower bound")
    return lower, upper


def y_names(n: int) -> list[str]:
    return [f"y{i + 1}" for i in range(n)]


def x_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


@dataclass
class RunConfig:
    """Validated run configuration; raw sections kept for command-specific use."""

    path: Optional[Path]
    n: int
    lam: float
    phi_spec: Optional[dict]
    initial_spec: Optional[dict]
    query_points: Optional[np.ndarray]
    query_grid: Optional[dict]
    t_list: list[float]
    solve_options: SolveOptions
    verify_spec: dict = field(default_factory=dict)
    transform_spec: dict = field(default_factory=dict)
    conjugate_spec: dict = field(default_factory=dict)
    compare_spec: dict = field(default_factory=dict)
    output_csv: bool = True
    output_json: bool = True

    @property
    def setup(self) -> HJSetup:
        return HJSetup(n=self.n, lam=self.lam)

    # -- materialization ---------------------------------------------------

    def phi_field(self) -> ScalarField:
        if self.phi_spec is None:
            _fail("phi", "this command needs a parameter function "
                         "(phi section or phi: from_initial_data)")
        kind = self.phi_spec["kind"]
        if kind == "expression":
            return ExpressionField(self.phi_spec["expression"])
        if kind == "builtin":
            return self.phi_spec["field"]
        if kind == "grid":
            return GridInterpolantField(self.phi_spec["grid"])
        # from_initial_data
        g = self.initial_field()
        spec = self.phi_spec
        if isinstance(g, GridInterpolantField):
            sample = g.grid
        else:
            if spec.get("box_lower") is None:
                _fail("initial_data.box", "required to sample the initial data")
            sample = GridField.sample(
                g.value, spec["box_lower"], spec["box_upper"], spec["box_counts"]
            )
        if spec.get("dual_lower") is None:
            dual_lower, dual_upper = default_dual_box(sample)
            dual_counts = sample.counts
        else:
            dual_lower, dual_upper = spec["dual_lower"], spec["dual_upper"]
            dual_counts = spec["dual_counts"]
        phi_grid = phi_from_initial_data(sample, dual_lower, dual_upper, dual_counts)
        return GridInterpolantField(phi_grid)

    def initial_field(self) -> ScalarField:
        if self.initial_spec is None:
            _fail("initial_data", "this command needs initial data")
        if "expression" in self.initial_spec:
            return ExpressionField(self.initial_spec["expression"])
        return GridInterpolantField(self.initial_spec["grid"])

    def implicit_solution(self) -> ImplicitSolution:
        return ImplicitSolution(setup=self.setup, phi=self.phi_field())

    def queries(self) -> tuple[np.ndarray, list[float]]:
        """x points (m, n) and the t list; their product is the query set."""
        from .grid import lattice_points

        if self.query_points is not None:
            return self.query_points, self.t_list
        if self.query_grid is not None:
            gr = self.query_grid
            return lattice_points(gr["lower"], gr["upper"], gr["counts"]), self.t_list
        _fail("query", "needs either a points list or a grid spec")


def read_config_doc(path) -> dict:
    """Read the raw YAML document; parse errors carry the line number."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"config parse error{line}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    return doc


def load_config(path) -> RunConfig:
    """Load and validate a YAML run configuration.

    Raises ConfigError with a line number for YAML syntax problems and with
    the offending field name for validation problems.
    """
    path = Path(path)
    return build_config(read_config_doc(path), path)


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value overrides; values parse as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: unparseable value: {exc}") from exc
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return doc


def build_config(doc: dict, path: Optional[Path] = None) -> RunConfig:
    schema = doc.get("schema", 1)
    if schema != 1:
        _fail("schema", f"unsupported schema version {schema!r}")

    n = _as_int(doc.get("dimension", 1), "dimension")
    if n < 1:
        _fail("dimension", "must be at least 1")

    lam = _resolve_lambda(doc)

    phi_spec = _parse_phi(doc.get("phi"), n)
    initial_spec = _parse_initial(doc.get("initial_data"), n)

    if phi_spec is not None and phi_spec["kind"] == "from_initial_data":
        if initial_spec is None:
            _fail("phi.from_initial_data", "requires an initial_data section")
        phi_spec = dict(phi_spec)
        phi_spec.update(_derivation_extents(doc.get("phi") or {}, initial_spec, n))
    elif phi_spec is not None and initial_spec is not None:
        _fail(
            "phi/initial_data",
            "both provided without derivation; set 'phi: {from_initial_data: true}' "
            "or drop one of them",
        )

    query_points, query_grid, t_list = _parse_query(doc.get("query"), n)
    solve_options = _parse_solver(doc.get("solver"), n)

    out = doc.get("output") or {}
    if not isinstance(out, dict):
        _fail("output", "must be a mapping")

    return RunConfig(
        path=path,
        n=n,
        lam=lam,
        phi_spec=phi_spec,
        initial_spec=initial_spec,
        query_points=query_points,
        query_grid=query_grid,
        t_list=t_list,
        solve_options=solve_options,
        verify_spec=doc.get("verify") or {},
        transform_spec=doc.get("transform") or {},
        conjugate_spec=doc.get("conjugate") or {},
        compare_spec=doc.get("compare") or {},
        output_csv=bool(out.get("csv", True)),
        output_json=bool(out.get("json", True)),
    )


def _resolve_lambda(doc: dict) -> float:
    convention = doc.get("convention")
    explicit = doc.get("lambda")
    if convention is not None:
        if convention not in PRESETS:
            _fail("convention", f"unknown preset {convention!r}; known: {sorted(PRESETS)}")
        lam = PRESETS[convention]
        if explicit is not None and _as_float(explicit, "lambda") != lam:
            _fail("lambda", f"conflicts with convention {convention!r}")
        return lam
    if explicit is None:
        _fail("convention", "either a convention preset or an explicit lambda is required")
    lam = _as_float(explicit, "lambda")
    if lam == 0.0:
        _fail("lambda", "lambda must be nonzero")
    return lam


def _parse_phi(section: Any, n: int) -> Optional[dict]:
    if section is None:
        return None
    if not isinstance(section, dict):
        _fail("phi", "must be a mapping")
    sources = [k for k in ("expression", "builtin", "grid", "from_initial_data") if section.get(k)]
    if len(sources) != 1:
        _fail("phi", f"exactly one of expression/builtin/grid/from_initial_data, got {sources}")
    kind = sources[0]
    if kind == "expression":
        try:
            expr_field = ExpressionField(str(section["expression"]), y_names(n))
        except ExprError as exc:
            _fail("phi.expression", str(exc))
        return {"kind": "expression", "expression": expr_field.expression}
    if kind == "builtin":
        spec = section["builtin"]
        if not isinstance(spec, dict) or spec.get("name") != "quadratic":
            _fail("phi.builtin", "only the 'quadratic' builtin is available")
        fld = QuadraticField(
            n,
            alpha=_as_float(spec.get("alpha", 1.0), "phi.builtin.alpha"),
            linear=None if spec.get("linear") is None else np.asarray(spec["linear"], dtype=float),
            offset=_as_float(spec.get("offset", 0.0), "phi.builtin.offset"),
        )
        return {"kind": "builtin", "field": fld}
    if kind == "grid":
        try:
            grid = load_grid(section["grid"])
        except (OSError, GridFormatError) as exc:
            _fail("phi.grid", str(exc))
        if grid.n != n:
            _fail("phi.grid", f"grid dimension {grid.n} does not match n={n}")
        return {"kind": "grid", "grid": grid}
    return {"kind": "from_initial_data"}


def _derivation_extents(section: dict, initial_spec: dict, n: int) -> dict:
    out: dict[str, Any] = {
        "box_lower": None, "box_upper": None, "box_counts": None,
        "dual_lower": None, "dual_upper": None, "dual_counts": None,
    }
    if initial_spec.get("box") is not None:
        out["box_lower"], out["box_upper"] = initial_spec["box"]
        out["box_counts"] = initial_spec["counts"]
    if section.get("dual_box") is not None:
        out["dual_lower"], out["dual_upper"] = _as_box(section["dual_box"], n, "phi.dual_box")
        counts = section.get("dual_counts")
        if counts is None:
            _fail("phi.dual_counts", "required when phi.dual_box is given")
        out["dual_counts"] = np.asarray(
            [_as_int(c, "phi.dual_counts") for c in counts], dtype=np.int64
        )
    return out


def _parse_initial(section: Any, n: int) -> Optional[dict]:
    if section is None:
        return None
    if not isinstance(section, dict):
        _fail("initial_data", "must be a mapping")
    has_expr = section.get("expression") is not None
    has_grid = section.get("grid") is not None
    if has_expr == has_grid:
        _fail("initial_data", "exactly one of expression/grid is required")
    out: dict[str, Any] = {}
    if has_expr:
        try:
            fld = ExpressionField(str(section["expression"]), x_names(n))
        except ExprError as exc:
            _fail("initial_data.expression", str(exc))
        out["expression"] = fld.expression
    else:
        try:
            grid = load_grid(section["grid"])
        except (OSError, GridFormatError) as exc:
            _fail("initial_data.grid", str(exc))
        if grid.n != n:
            _fail("initial_data.grid", f"grid dimension {grid.n} does not match n={n}")
        out["grid"] = grid
    if section.get("box") is not None:
        out["box"] = _as_box(section["box"], n, "initial_data.box")
        counts = section.get("counts")
        if counts is None:
            _fail("initial_data.counts", "required when initial_data.box is given")
        out["counts"] = np.asarray(
            [_as_int(c, "initial_data.counts") for c in counts], dtype=np.int64
        )
    return out


def _parse_query(section: Any, n: int) -> tuple[Optional[np.ndarray], Optional[dict], list[float]]:
    if section is None:
        return None, None, []
    if not isinstance(section, dict):
        _fail("query", "must be a mapping")
    points = section.get("points")
    grid = section.get("grid")
    if points is not None and grid is not None:
        _fail("query", "give either points or grid, not both")
    t_raw = section.get("t", [])
    if not isinstance(t_raw, (list, tuple)):
        t_raw = [t_raw]
    t_list = [_as_float(t, "query.t") for t in t_raw]
    parsed_points = None
    parsed_grid = None
    if points is not None:
        arr = np.atleast_2d(np.asarray(
            [[_as_float(c, "query.points") for c in np.atleast_1d(p)] for p in points]
        ))
        if arr.shape[1] != n:
            _fail("query.points", f"each point needs {n} coordinates")
        parsed_points = arr
    if grid is not None:
        if not isinstance(grid, dict):
            _fail("query.grid", "must be a mapping with lower/upper/counts")
        lower = np.asarray([_as_float(v, "query.grid.lower") for v in grid.get("lower", [])])
        upper = np.asarray([_as_float(v, "query.grid.upper") for v in grid.get("upper", [])])
        counts = np.asarray([_as_int(v, "query.grid.counts") for v in grid.get("counts", [])],
                            dtype=np.int64)
        if lower.size != n or upper.size != n or counts.size != n:
            _fail("query.grid", f"lower/upper/counts must each have {n} entries")
        if np.any(upper <= lower) or np.any(counts < 2):
            _fail("query.grid", "box must be nondegenerate with counts >= 2")
        parsed_grid = {"lower": lower, "upper": upper, "counts": counts}
    return parsed_points, parsed_grid, t_list


def _parse_solver(section: Any, n: int) -> SolveOptions:
    section = section or {}
    if not isinstance(section, dict):
        _fail("solver", "must be a mapping")
    kwargs: dict[str, Any] = {}
    if "newton_tol" in section:
        kwargs["newton_tol"] = _as_float(section["newton_tol"], "solver.newton_tol")
    if "max_iter" in section:
        kwargs["max_iter"] = _as_int(section["max_iter"], "solver.max_iter")
    if "damping" in section:
        kwargs["damping"] = _as_float(section["damping"], "solver.damping")
    if "min_step" in section:
        kwargs["min_step"] = _as_float(section["min_step"], "solver.min_step")
    if "multistart_box" in section:
        lower, upper = _as_box(section["multistart_box"], n, "solver.multistart_box")
        kwargs["multistart_lower"] = lower
        kwargs["multistart_upper"] = upper
    if "multistart_count" in section:
        kwargs["multistart_count"] = _as_int(section["multistart_count"], "solver.multistart_count")
    if "dedup_tol" in section:
        kwargs["dedup_tol"] = _as_float(section["dedup_tol"], "solver.dedup_tol")
    if "branch_policy" in section:
        policy = section["branch_policy"]
        if policy not in POLICIES:
            _fail("solver.branch_policy", f"must be one of {POLICIES}")
        kwargs["branch_policy"] = policy
    try:
        return SolveOptions(**kwargs)
    except ValueError as exc:
        _fail("solver", str(exc))
