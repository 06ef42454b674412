"""Problem files: TOML documents with fixed section and key names.

Example::

    [problem]
    kind = "plain"          # plain | split | isoperimetric | holonomic | herglotz
    alpha = 0.5
    rho = 2.0
    a = 1.0
    b = 2.0
    n = 256
    spacing = "uniform_s"   # optional; uniform_t only allowed when rho = 1

    [params]
    c = 1.5957691216057308

    [lagrangian]
    expr = "(d1 - c*(t^2 - 1)^0.5)^2"
    m = 1                   # optional, default 1
    has_z = false           # optional, default false (true for herglotz)

    [boundary]
    left = [0.0]            # list of m numbers, a bare number when m = 1, or "free"
    right = [3.0]

Optional sections: ``[constraint]`` (``expr`` and, for isoperimetric
problems, ``l``), ``[herglotz]`` (``z_a``), ``[solver]`` (any
:class:`~fracvar.solvers.SolverConfig` field) and ``[rho_search]``
(``from``, ``to`` and optionally ``prescan``), which makes ``solve`` also
optimize over rho. Split problems take ``A`` and optionally ``x_A`` in
``[problem]``. Unknown sections and keys are rejected.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dsl import Lagrangian, parse
from .errors import FracvarError, ParseError, UnknownIdentifier
from .fracops import FracParams
from .grid import Spacing, make_grid
from .solvers import SolverConfig
from .variational import FREE, Fixed, Herglotz, Holonomic, Isoperimetric, Plain, Problem, SplitDomain

__all__ = ["ProblemFileError", "ProblemSpec", "load_problem", "parse_problem"]

KINDS = ("plain", "split", "isoperimetric", "holonomic", "herglotz")

_SECTIONS = {
    "problem": {"kind", "alpha", "rho", "a", "b", "n", "spacing", "A", "x_A"},
    "lagrangian": {"expr", "m", "has_z"},
    "boundary": {"left", "right"},
    "constraint": {"type", "expr", "l"},
    "herglotz": {"z_a"},
    "solver": {f.name for f in fields(SolverConfig)},
    "params": None,  # free-form names
    "rho_search": {"from", "to", "prescan"},
}


class ProblemFileError(FracvarError, ValueError):
    """Invalid problem file; ``line`` is 1-based when it could be located."""

    def __init__(self, message: str, path: str = "<input>", line: int | None = None):
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {message}")
        self.path, self.line = path, line


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    problem: Problem
    solver: SolverConfig
    rho_search: tuple[float, float, int] | None
    source: dict
    path: str


class _Doc:
    """The parsed table plus enough of the raw text to anchor messages."""

    def __init__(self, text: str, path: str):
        self.path = path
        self.lines = text.splitlines()
        try:
            self.data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ProblemFileError(f"malformed TOML: {exc}", path, int(m.group(1)) if m else None) from None

    def line_of(self, section: str, key: str | None = None) -> int | None:
        current = None
        header = None
        for i, raw in enumerate(self.lines, start=1):
            s = raw.strip()
            m = re.match(r"^\[\s*([A-Za-z_][\w-]*)\s*\]", s)
            if m:
                current = m.group(1)
                if current == section:
                    header = i
                    if key is None:
                        return i
                continue
            if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", s):
                return i
        return header

    def fail(self, message: str, section: str, key: str | None = None):
        raise ProblemFileError(message, self.path, self.line_of(section, key))

    def section(self, name: str, required: bool = True) -> dict:
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise ProblemFileError(f"missing section [{name}]", self.path)
            return {}
        if not isinstance(sec, dict):
            self.fail(f"[{name}] must be a table", name)
        return sec

    def get(self, section: str, key: str, kind, required: bool = True, default=None):
        sec = self.section(section, required)
        if key not in sec:
            if required:
                self.fail(f"missing key [{section}].{key}", section)
            return default
        value = sec[key]
        try:
            return _coerce(value, kind)
        except (TypeError, ValueError) as exc:
            self.fail(f"[{section}].{key}: {exc}", section, key)


def _coerce(value, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise TypeError(f"expected true or false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    if kind == "vector":
        vals = value if isinstance(value, list) else [value]
        return [_coerce(v, float) for v in vals]
    raise AssertionError(kind)


def load_problem(path: str | Path) -> ProblemSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemFileError(f"cannot read problem file: {exc.strerror}", str(path)) from None
    return parse_problem(text, str(path))


def parse_problem(text: str, path: str = "<input>") -> ProblemSpec:
    """Validate every field, then build the :class:`Problem`."""
    doc = _Doc(text, path)
    for name, sec in doc.data.items():
        if name not in _SECTIONS:
            raise ProblemFileError(f"unknown section [{name}]", path, doc.line_of(name))
        allowed = _SECTIONS[name]
        if allowed is not None and isinstance(sec, dict):
            for key in sec:
                if key not in allowed:
                    doc.fail(f"unknown key [{name}].{key}", name, key)

    kind = doc.get("problem", "kind", str, required=False, default="plain")
    if kind not in KINDS:
        doc.fail(f"[problem].kind must be one of {', '.join(KINDS)}, got {kind!r}", "problem", "kind")
    alpha = doc.get("problem", "alpha", float)
    rho = doc.get("problem", "rho", float)
    a = doc.get("problem", "a", float)
    b = doc.get("problem", "b", float)
    n = doc.get("problem", "n", int)
    spacing = doc.get("problem", "spacing", str, required=False, default="uniform_s")
    if spacing not in {s.value for s in Spacing}:
        doc.fail(f"[problem].spacing must be uniform_s or uniform_t, got {spacing!r}", "problem", "spacing")

    params = {}
    for name, value in doc.section("params", required=False).items():
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name):
            doc.fail(f"invalid parameter name {name!r}", "params", name)
        try:
            params[name] = _coerce(value, float)
        except (TypeError, ValueError) as exc:
            doc.fail(f"[params].{name}: {exc}", "params", name)

    src = doc.get("lagrangian", "expr", str)
    m = doc.get("lagrangian", "m", int, required=False, default=2 if kind == "holonomic" else 1)
    has_z = doc.get("lagrangian", "has_z", bool, required=False, default=kind == "herglotz")
    L = _lagrangian(doc, "lagrangian", src, m, has_z, params)

    bcs = []
    bsec = doc.section("boundary")
    for side in ("left", "right"):
        if side not in bsec:
            doc.fail(f"missing key [boundary].{side}", "boundary")
        raw = bsec[side]
        if isinstance(raw, str):
            if raw != "free":
                doc.fail(f"[boundary].{side} must be a list of numbers or \"free\"", "boundary", side)
            bcs.append(FREE)
        else:
            vals = doc.get("boundary", side, "vector")
            if len(vals) != m:
                doc.fail(f"[boundary].{side} has {len(vals)} values, expected {m}", "boundary", side)
            bcs.append(Fixed(vals))

    has_constraint = "constraint" in doc.data
    if kind in ("isoperimetric", "holonomic") and not has_constraint:
        raise ProblemFileError(f"{kind} problems need a [constraint] section", path)
    if has_constraint and kind not in ("isoperimetric", "holonomic"):
        doc.fail(f"[constraint] is only valid for isoperimetric or holonomic problems, not {kind}", "constraint")
    if "herglotz" in doc.data and kind != "herglotz":
        doc.fail("[herglotz] is only valid for herglotz problems", "herglotz")
    if has_constraint:
        ctype = doc.get("constraint", "type", str, required=False, default=kind)
        if ctype != kind:
            doc.fail(f"[constraint].type {ctype!r} does not match [problem].kind {kind!r}", "constraint", "type")

    if kind == "plain":
        pk = Plain()
    elif kind == "split":
        A = doc.get("problem", "A", float)
        x_A = doc.get("problem", "x_A", "vector", required=False)
        pk = SplitDomain(A, None if x_A is None else tuple(x_A))
    elif kind == "isoperimetric":
        g = _lagrangian(doc, "constraint", doc.get("constraint", "expr", str), m, False, params)
        pk = Isoperimetric(g, doc.get("constraint", "l", float))
    elif kind == "holonomic":
        gsrc = doc.get("constraint", "expr", str)
        try:
            pk = Holonomic(parse(gsrc))
        except ParseError as exc:
            doc.fail(f"[constraint].expr: {exc}", "constraint", "expr")
        if "l" in doc.section("constraint"):
            doc.fail("[constraint].l is only used by isoperimetric problems", "constraint", "l")
    else:
        pk = Herglotz(doc.get("herglotz", "z_a", float))
    for key in ("A", "x_A"):
        if kind != "split" and key in doc.section("problem"):
            doc.fail(f"[problem].{key} is only valid for split problems", "problem", key)

    solver_sec = doc.section("solver", required=False)
    overrides = {}
    for f in fields(SolverConfig):
        if f.name in solver_sec:
            kind_ = {int: int, float: float, str: str}.get(type(f.default), float)
            overrides[f.name] = doc.get("solver", f.name, kind_)
    try:
        cfg = SolverConfig(**overrides)
    except ValueError as exc:
        doc.fail(f"[solver]: {exc}", "solver")

    rho_search = None
    if "rho_search" in doc.data:
        r0 = doc.get("rho_search", "from", float)
        r1 = doc.get("rho_search", "to", float)
        prescan = doc.get("rho_search", "prescan", int, required=False, default=8)
        if not 0 < r0 < r1:
            doc.fail("[rho_search] needs 0 < from < to", "rho_search")
        if prescan < 3:
            doc.fail("[rho_search].prescan must be at least 3", "rho_search", "prescan")
        rho_search = (r0, r1, prescan)

    try:
        grid = make_grid(a, b, n, rho, spacing)
        problem = Problem(L, FracParams(alpha, rho), grid, bcs[0], bcs[1], pk)
    except ValueError as exc:
        raise ProblemFileError(str(exc), path, doc.line_of("problem")) from None
    return ProblemSpec(problem, cfg, rho_search, doc.data, path)


def _lagrangian(doc: _Doc, section: str, src: str, m: int, has_z: bool, params: dict) -> Lagrangian:
    if m < 1:
        doc.fail("[lagrangian].m must be at least 1", "lagrangian", "m")
    try:
        return Lagrangian(parse(src), m, has_z, params)
    except ParseError as exc:
        doc.fail(f"[{section}].expr: {exc}", section, "expr")
    except UnknownIdentifier as exc:
        doc.fail(f"[{section}].expr: {exc}", section, "expr")
    except ValueError as exc:
        doc.fail(f"[{section}]: {exc}", section)
