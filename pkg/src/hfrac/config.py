"""Experiment configuration: a flat ``key = value`` file with dotted keys.

Blank lines and ``#`` comments are ignored.  Every key is typed by ``SCHEMA``;
unknown keys, duplicate keys, type errors and missing required keys are all
reported with their line numbers before any computation starts.  See
``docs/config.md`` for the schema.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InputError


@dataclass(frozen=True)
class Key:
    kind: str  # float | int | bool | str | floats | strs
    default: object = None
    required: bool = False
    choices: tuple | None = None
    doc: str = ""


CHECKS = ("lemma_gamma", "caccioppoli", "log_lemma", "log_corollary", "boundedness", "degiorgi", "holder_fit",
          "oscillation", "tail_scaling")

SCHEMA: dict[str, Key] = {
    "kernel.n": Key("int", 1, doc="Heisenberg dimension n (the group is R^{2n+1})"),
    "kernel.s": Key("float", required=True, doc="fractional order s in (0, 1)"),
    "kernel.p": Key("float", required=True, doc="summability exponent p in (1, 10]"),
    "kernel.norm": Key("str", "gauge", choices=("gauge", "box"), doc="homogeneous norm in the kernel"),
    "kernel.subcell_level": Key("int", 1, doc="sub-cell refinement for touching cell pairs"),
    "grid.resolution": Key("int", 16, doc="cells per axis"),
    "grid.collar": Key("float", None, doc="grid margin around Omega (default: the Omega diameter)"),
    "omega.shape": Key("str", "ball", choices=("ball", "box"), doc="gauge ball or box-norm ball"),
    "omega.center": Key("floats", None, doc="centre of Omega (default: origin)"),
    "omega.radius": Key("float", 1.0, doc="radius of Omega"),
    "g.kind": Key("str", "zero", choices=("zero", "constant", "gauge_power", "smooth_bump", "expr"),
                  doc="exterior datum"),
    "g.value": Key("float", 1.0, doc="constant value / amplitude / scale"),
    "g.beta": Key("float", 1.0, doc="exponent for gauge_power"),
    "g.center": Key("floats", None, doc="centre for gauge_power / smooth_bump"),
    "g.radius": Key("float", 1.0, doc="support radius for smooth_bump"),
    "g.expr": Key("str", None, doc="field expression for kind = expr"),
    "f.kind": Key("str", "zero", choices=("zero", "constant", "sampled", "expr"), doc="source term"),
    "f.value": Key("float", 0.0, doc="constant source value"),
    "f.expr": Key("str", None, doc="field expression for kind = expr"),
    "f.file": Key("str", None, doc="solution-format CSV whose value column samples f (kind = sampled)"),
    "solver.method": Key("str", "ncg", choices=("ncg", "gd"), doc="descent directions"),
    "solver.tol": Key("float", 1e-6, doc="optimality tolerance"),
    "solver.max_iter": Key("int", 20000, doc="descent iteration cap"),
    "solver.linear_tol": Key("float", 1e-10, doc="relative residual for the p = 2 oracle solve"),
    "checks.run": Key("strs", (), doc="checks for verify/sweep, comma separated"),
    "checks.center": Key("floats", None, doc="ball centre for the checks (default: Omega centre)"),
    "checks.r": Key("float", None, doc="ball radius r (default: Omega radius / 2)"),
    "checks.R": Key("float", None, doc="outer radius R for the log estimates (default: Omega radius)"),
    "checks.k": Key("float", 0.0, doc="truncation level k"),
    "checks.cutoff_inner": Key("float", 0.5, doc="cut-off plateau radius as a fraction of r"),
    "checks.cutoff_outer": Key("float", 0.9, doc="cut-off support radius as a fraction of r"),
    "checks.d": Key("floats", (0.01, 0.1, 1.0), doc="d values for the log estimates"),
    "checks.b": Key("float", math.e, doc="truncation b for the log corollary"),
    "checks.deltas": Key("floats", tuple(i / 10 for i in range(1, 11)), doc="delta sweep for boundedness"),
    "checks.sigma": Key("float", 0.25, doc="oscillation ratio sigma (<= 1/4)"),
    "checks.steps": Key("int", 4, doc="oscillation ledger length"),
    "checks.radii": Key("floats", None, doc="radii for the Hoelder fit (default: geometric from r)"),
    "checks.lemma_samples": Key("int", 100000, doc="random draws for lemma_gamma"),
    "checks.gammas": Key("floats", (0.5, 1.0, 2.0), doc="gamma sweep for tail_scaling"),
    "checks.tail_radii": Key("floats", (0.5, 1.0, 2.0), doc="radii for tail_scaling"),
    "verify.solve_first": Key("bool", True, doc="solve before verifying"),
    "verify.solution": Key("str", None, doc="solution CSV from an earlier solve (solve_first = false)"),
    "output.dir": Key("str", "out", doc="artifact directory (overridden by --out)"),
    "seed": Key("int", 0, doc="random seed (overridden by --seed)"),
}


@dataclass
class ExperimentConfig:
    values: dict
    lines: dict = field(default_factory=dict)  # key -> source line number
    source: str = "<string>"

    def __getitem__(self, key):
        return self.values[key]

    def with_(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[k.replace("__", ".")] = v
        cfg = ExperimentConfig(vals, dict(self.lines), self.source)
        cfg.validate()
        return cfg

    def set(self, key: str, raw: str) -> "ExperimentConfig":
        """Copy with ``key`` parsed from text (used by sweeps)."""
        if key not in SCHEMA:
            raise InputError(f"unknown key {key!r}")
        vals = dict(self.values)
        vals[key] = _convert(key, raw, SCHEMA[key], None)
        cfg = ExperimentConfig(vals, dict(self.lines), self.source)
        cfg.validate()
        return cfg

    def resolved(self) -> dict:
        """All keys (defaults filled in), JSON-ready and in schema order."""
        out = {}
        for k in SCHEMA:
            v = self.values.get(k)
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    def validate(self):
        v = self.values
        where = lambda k: f" (line {self.lines[k]})" if k in self.lines else ""  # noqa: E731
        if not 0 < v["kernel.s"] < 1:
            raise InputError(f"kernel.s must lie in (0, 1){where('kernel.s')}")
        if not 1 < v["kernel.p"] <= 10:
            raise InputError(f"kernel.p must lie in (1, 10]{where('kernel.p')}")
        if v["kernel.n"] < 1:
            raise InputError(f"kernel.n must be >= 1{where('kernel.n')}")
        if v["grid.resolution"] < 4:
            raise InputError(f"grid.resolution must be >= 4{where('grid.resolution')}")
        if not v["omega.radius"] > 0:
            raise InputError(f"omega.radius must be positive{where('omega.radius')}")
        dim = 2 * v["kernel.n"] + 1
        for k in ("omega.center", "g.center", "checks.center"):
            if v.get(k) is not None and len(v[k]) != dim:
                raise InputError(f"{k} needs {dim} coordinates{where(k)}")
        if v["g.kind"] == "expr" and not v.get("g.expr"):
            raise InputError("g.kind = expr needs g.expr")
        if v["f.kind"] == "expr" and not v.get("f.expr"):
            raise InputError("f.kind = expr needs f.expr")
        if v["f.kind"] == "sampled" and not v.get("f.file"):
            raise InputError("f.kind = sampled needs f.file")
        for c in v["checks.run"]:
            if c not in CHECKS:
                raise InputError(f"unknown check {c!r}{where('checks.run')}; choose from {', '.join(CHECKS)}")
        if not 0 < v["checks.sigma"] <= 0.25:
            raise InputError(f"checks.sigma must lie in (0, 1/4]{where('checks.sigma')}")
        if any(not 0 < d <= 1 for d in v["checks.deltas"]):
            raise InputError(f"checks.deltas must lie in (0, 1]{where('checks.deltas')}")
        if any(not d > 0 for d in v["checks.d"]):
            raise InputError(f"checks.d must be positive{where('checks.d')}")
        if not 0 <= v["checks.cutoff_inner"] < v["checks.cutoff_outer"] <= 1:
            raise InputError("need 0 <= checks.cutoff_inner < checks.cutoff_outer <= 1")
        if not v["verify.solve_first"] and not v.get("verify.solution"):
            raise InputError("verify.solve_first = false needs verify.solution")
        if not v["solver.tol"] > 0 or not v["solver.linear_tol"] > 0:
            raise InputError("solver tolerances must be positive")
        if v["solver.max_iter"] < 1:
            raise InputError("solver.max_iter must be >= 1")


def _convert(key: str, raw: str, spec: Key, lineno):
    at = f" at line {lineno}" if lineno is not None else ""
    raw = raw.strip()
    try:
        if spec.kind == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
            return val
        if spec.kind == "int":
            return int(raw)
        if spec.kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if spec.kind == "floats":
            items = [x for x in raw.replace("[", "").replace("]", "").split(",") if x.strip()]
            vals = tuple(float(x) for x in items)
            if not all(math.isfinite(x) for x in vals):
                raise ValueError
            return vals
        if spec.kind == "strs":
            return tuple(x.strip() for x in raw.replace("[", "").replace("]", "").split(",") if x.strip())
        if spec.kind == "str":
            val = raw.strip("\"'")
            if spec.choices and val not in spec.choices:
                raise InputError(f"{key}{at}: {val!r} is not one of {', '.join(spec.choices)}")
            return val
    except InputError:
        raise
    except ValueError:
        raise InputError(f"{key}{at}: cannot parse {raw!r} as {spec.kind}") from None
    raise InputError(f"{key}: unsupported type {spec.kind}")


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    values: dict = {}
    lines: dict = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (x.strip() for x in body.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r} (first set at line {lines[key]})")
            continue
        try:
            values[key] = _convert(key, raw, SCHEMA[key], lineno)
        except InputError as exc:
            errors.append(str(exc))
            continue
        lines[key] = lineno
    for key, spec in SCHEMA.items():
        if key not in values:
            if spec.required:
                errors.append(f"missing required key {key!r}")
            else:
                values[key] = spec.default
    if errors:
        raise InputError(f"{source}: " + "; ".join(errors))
    cfg = ExperimentConfig(values, lines, source)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
