"""Sectioned ``key = value`` run configuration.

Example::

    # 1-D shrinking hole
    [grid]
    dimension = 1
    box_min = 0
    box_max = 1
    h = 0.0078740157480315

    [params]
    s = 0.5
    p = 2

    [sequence]
    kind = shrinking_hole
    base = difference(box(0, 1), ball(0.5, 0.3))
    radii = 0.3, 0.15, 0.075, 0.0375, 0.01875

    [source]
    f = 1

Shapes are ``box(lo.., hi..)``, ``ball(center.., r)``, ``difference(a, b)``
and ``union(a, b)``.  Source terms are expressions in ``x`` (and ``y``) with
``+ - * /``, powers (``**`` or ``^``), ``sin``, ``cos``, ``exp`` and numeric
literals.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .geometry import Ball, Box, Difference, DomainSequenceSpec, GridSpec, Union, build_grid, shape_to_text
from .kernel import P_RANGE, S_RANGE, TAIL_MODES, FractionalParams, SourceTerm
from .lab import ExperimentOptions
from .solver import SolverOptions


class ConfigError(ValueError):
    """Validation failure; ``errors`` holds ``(line, message)`` pairs (line 0: whole file)."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        super().__init__("; ".join(f"line {n}: {m}" if n else m for n, m in errors))


# --------------------------------------------------------------------------
# tiny grammars, parsed with the stdlib ``ast`` module and never evaluated


def _number(node) -> float:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _number(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    raise ValueError(f"expected a number, got {ast.unparse(node)!r}")


def _shape(node):
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name) or node.keywords:
        raise ValueError(f"expected box(...), ball(...), difference(...) or union(...), got {ast.unparse(node)!r}")
    name, args = node.func.id, node.args
    if name in ("difference", "union"):
        if len(args) != 2:
            raise ValueError(f"{name} takes two shapes")
        cls = Difference if name == "difference" else Union
        return cls(_shape(args[0]), _shape(args[1]))
    nums = [_number(a) for a in args]
    if name == "box":
        if len(nums) not in (2, 4):
            raise ValueError("box takes 2 (1-D) or 4 (2-D) numbers: lower corner then upper corner")
        half = len(nums) // 2
        return Box(tuple(nums[:half]), tuple(nums[half:]))
    if name == "ball":
        if len(nums) not in (2, 3):
            raise ValueError("ball takes 2 (1-D) or 3 (2-D) numbers: centre then radius")
        return Ball(tuple(nums[:-1]), nums[-1])
    raise ValueError(f"unknown shape {name!r}")


def parse_shape(text: str):
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"malformed shape {text!r}") from exc
    return _shape(tree.body)


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


@dataclass(frozen=True)
class Expression:
    """A source-term formula over the coordinate symbols ``x`` and ``y``."""

    text: str

    def __post_init__(self):
        self._check(self._tree().body)

    def _tree(self):
        try:
            return ast.parse(self.text.replace("^", "**").strip(), mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"malformed expression {self.text!r}") from exc

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            self._check(node.operand)
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            if len(node.args) != 1 or node.keywords:
                raise ValueError(f"{node.func.id} takes one argument")
            self._check(node.args[0])
        elif isinstance(node, ast.Name) and node.id in ("x", "y"):
            pass
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            pass
        else:
            raise ValueError(f"unsupported term {ast.unparse(node)!r} in expression")

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        symbols = {"x": coords[:, 0]}
        if coords.shape[1] > 1:
            symbols["y"] = coords[:, 1]

        def ev(node):
            if isinstance(node, ast.BinOp):
                return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
            if isinstance(node, ast.UnaryOp):
                v = ev(node.operand)
                return -v if isinstance(node.op, ast.USub) else v
            if isinstance(node, ast.Call):
                return _FUNCS[node.func.id](ev(node.args[0]))
            if isinstance(node, ast.Name):
                if node.id not in symbols:
                    raise ValueError(f"symbol {node.id!r} is not defined on a {coords.shape[1]}-D grid")
                return symbols[node.id]
            return float(node.value)

        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(ev(self._tree().body), dtype=float), (coords.shape[0],))
        if not np.all(np.isfinite(out)):
            raise ValueError(f"expression {self.text!r} is not finite on the grid")
        return np.array(out)


# --------------------------------------------------------------------------
# schema


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"{text!r} is not a finite number")
    return v


def _int(text):
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{text!r} is not an integer") from None


def _floats(text):
    parts = [t for t in text.replace(",", " ").split()]
    if not parts:
        raise ValueError("expected a list of numbers")
    return tuple(_float(t) for t in parts)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return conv


def _in_range(lo, hi, name):
    def conv(text):
        v = _float(text)
        if not lo <= v <= hi:
            raise ValueError(f"{name} = {v} outside [{lo}, {hi}]")
        return v
    return conv


def _positive(conv):
    def wrapped(text):
        v = conv(text)
        if not v > 0:
            raise ValueError(f"{v} is not positive")
        return v
    return wrapped


def _shape_or(*words):
    def conv(text):
        return text if text in words else parse_shape(text)
    return conv


@dataclass(frozen=True)
class Key:
    convert: Callable[[str], Any]
    default: Any = None
    required: bool = False
    render: Callable[[Any], str] | None = None


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, Expression):
        return value.text
    if isinstance(value, (Box, Ball, Difference, Union)):
        return shape_to_text(value)
    return str(value)


SCHEMA: dict[str, dict[str, Key]] = {
    "grid": {
        "dimension": Key(_int, required=True),
        "box_min": Key(_floats, required=True),
        "box_max": Key(_floats, required=True),
        "h": Key(_positive(_float), required=True),
        "max_nodes": Key(_positive(_int), 2**20),
    },
    "params": {
        "s": Key(_in_range(*S_RANGE, "s"), required=True),
        "p": Key(_in_range(*P_RANGE, "p"), required=True),
        "tail_mode": Key(_choice(*TAIL_MODES), "analytic"),
        "quadrature_order": Key(_positive(_int), 16),
    },
    "domain": {
        "shape": Key(parse_shape, required=True),
    },
    "source": {
        "f": Key(Expression, Expression("1")),
    },
    "capacity": {
        "set": Key(_shape_or("empty"), required=True),
        "domain": Key(_shape_or("box"), "box"),
    },
    "sequence": {
        "kind": Key(_choice("shrinking_hole", "boundary_oscillation", "periodic_perforation"), required=True),
        "base": Key(parse_shape, required=True),
        "center": Key(_floats),
        "radii": Key(_floats, ()),
        "amplitudes": Key(_floats, ()),
        "frequency": Key(_positive(_float), 8.0),
        "perforation_radii": Key(_floats, ()),
        "perforation_spacings": Key(_floats, ()),
    },
    "solver": {
        "max_iterations": Key(_int, 50000),
        "gradient_tolerance": Key(_positive(_float), 1e-8),
        "initial_step": Key(_positive(_float), 1.0),
        "shrink": Key(_float, 0.5),
        "sufficient_decrease": Key(_float, 1e-4),
        "identity_tolerance": Key(_positive(_float), 1e-6),
        "initialization": Key(_choice("zero", "random"), "zero"),
    },
    "experiment": {
        "decrease_factor": Key(_positive(_float), 0.2),
        "floor_fraction": Key(_positive(_float), 0.25),
    },
    "output": {
        "dir": Key(str, "out"),
        "deterministic": Key(_bool, False),
        "seed": Key(_int),
    },
}
REQUIRED_SECTIONS = ("grid", "params")


@dataclass
class RunConfig:
    sections: dict[str, dict[str, Any]]

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    def has(self, section: str) -> bool:
        return section in self.sections

    def grid(self) -> GridSpec:
        g = self["grid"]
        return build_grid(g["dimension"], g["box_min"], g["box_max"], g["h"], g["max_nodes"])

    def params(self) -> FractionalParams:
        p = self["params"]
        return FractionalParams(p["s"], p["p"], p["tail_mode"], p["quadrature_order"])

    def source(self, grid: GridSpec) -> SourceTerm:
        return SourceTerm(grid, self["source"]["f"].evaluate(grid.coordinates()))

    def solver_options(self, deterministic: bool | None = None) -> SolverOptions:
        s = self["solver"]
        det = self["output"]["deterministic"] if deterministic is None else deterministic
        return SolverOptions(
            max_iterations=s["max_iterations"],
            gradient_tolerance=s["gradient_tolerance"],
            initial_step=s["initial_step"],
            shrink=s["shrink"],
            sufficient_decrease=s["sufficient_decrease"],
            identity_tolerance=s["identity_tolerance"],
            deterministic=det,
        )

    def experiment_options(self, seed: int | None, deterministic: bool | None = None) -> ExperimentOptions:
        e = self["experiment"]
        random_start = self["solver"]["initialization"] == "random"
        return ExperimentOptions(
            solver=self.solver_options(deterministic),
            decrease_factor=e["decrease_factor"],
            floor_fraction=e["floor_fraction"],
            seed=seed if random_start else None,
        )

    def sequence_spec(self) -> DomainSequenceSpec:
        q = self["sequence"]
        radii, spacings = q["perforation_radii"], q["perforation_spacings"]
        if len(radii) != len(spacings):
            raise ValueError("perforation_radii and perforation_spacings differ in length")
        return DomainSequenceSpec(
            kind=q["kind"],
            base=q["base"],
            radii=q["radii"],
            center=q["center"],
            amplitudes=q["amplitudes"],
            frequency=q["frequency"],
            perforation=tuple(zip(radii, spacings)),
        )


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem found."""
    errors: list[tuple[int, str]] = []
    raw: dict[str, dict[str, Any]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append((lineno, f"malformed section header {line!r}"))
                section = None
                continue
            section = line[1:-1].strip()
            if section not in SCHEMA:
                errors.append((lineno, f"unknown section [{section}]"))
                section = None
                continue
            if section in raw:
                errors.append((lineno, f"duplicate section [{section}]"))
            raw.setdefault(section, {})
            continue
        if "=" not in line:
            errors.append((lineno, f"expected 'key = value', got {line!r}"))
            continue
        key, value = (t.strip() for t in line.split("=", 1))
        if section is None:
            errors.append((lineno, f"key {key!r} outside a known section"))
            continue
        spec = SCHEMA[section].get(key)
        if spec is None:
            errors.append((lineno, f"unknown key {key!r} in [{section}]"))
            continue
        if key in raw[section]:
            errors.append((lineno, f"duplicate key {key!r} in [{section}]"))
            continue
        try:
            raw[section][key] = spec.convert(value)
        except ValueError as exc:
            errors.append((lineno, f"{section}.{key}: {exc}"))
            raw[section][key] = None
    for name in REQUIRED_SECTIONS:
        if name not in raw:
            errors.append((0, f"missing required section [{name}]"))
    sections: dict[str, dict[str, Any]] = {}
    for name, keys in SCHEMA.items():
        if name not in raw and name not in ("source", "solver", "experiment", "output"):
            continue
        given = raw.get(name, {})
        filled = {}
        for key, spec in keys.items():
            if key in given:
                filled[key] = given[key]
            elif spec.required:
                errors.append((0, f"missing required key {key!r} in [{name}]"))
            else:
                filled[key] = spec.default
        sections[name] = filled
    if not errors and "grid" in sections:
        g = sections["grid"]
        if g["dimension"] not in (1, 2):
            errors.append((0, f"grid.dimension must be 1 or 2, got {g['dimension']}"))
    if errors:
        raise ConfigError(errors)
    return RunConfig(sections)


def serialize_config(config: RunConfig) -> str:
    out = []
    for name, keys in SCHEMA.items():
        if name not in config.sections:
            continue
        out.append(f"[{name}]")
        for key in keys:
            value = config.sections[name].get(key)
            if value is None or value == ():
                continue
            out.append(f"{key} = {_render(value)}")
        out.append("")
    return "\n".join(out)
