"""Scene files: a strict YAML subset mapped onto :class:`SceneConfig`.

Grammar (every key optional unless marked required)::

    name: dambreak2d
    domain_size: [2.0, 1.125]        # required, meters
    grid_dims: [128, 72]             # required, cells per axis (square cells)
    dt: 0.002                        # required, seconds
    duration: 4.0                    # required, seconds
    gravity: [0.0, -9.81]            # required, m/s^2
    seed: 7
    walls: [[true, true], [true, false]]   # per axis (lo, hi); false = open side
    particles_per_cell: 4
    jitter: 0.5
    orthogonalize: true
    map_reference: previous          # previous | current
    allow_unstable_modes: false
    coupling_strength: 1.0
    workers: 1
    audit: true
    scheme: {kind: polypic, fluid_modes: 4, solid_modes: 4}
    pressure: {tolerance: 1.0e-6, max_iterations: 500}
    output: {directory: out, frame_interval: 0.04, diagnostics: true, frame_csv: false}
    emitters:
      - fluid_box: {lo: [..], hi: [..], density: 1000, particles_per_cell: 4, velocity: [0, 0]}
      - fluid_ball: {center: [..], radius: 0.1, density: 1000}
      - fabric_sheet: {origin: [..], counts: [30, 2], spacing: 0.01, axes: [0, 1], kind: cloth,
                       density: 300, stiffness: 200, damping: 0.5, pinned: ends,
                       capacity_ratio: 0.3, absorption_time: 0.1}

Unknown keys and malformed values raise :class:`ConfigError` carrying the
1-based line number of the offending node.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import yaml

from .state import (ConfigError, FabricSheet, FluidBall, FluidBox, OutputConfig, PressureConfig, SceneConfig,
                    TransferScheme)


def _line(node) -> int:
    return node.start_mark.line + 1


class _Reader:
    def __init__(self, path: str | None):
        self.path = path
        self._ctor = yaml.SafeLoader("")

    def fail(self, node, msg):
        raise ConfigError(msg, _line(node), self.path)

    def value(self, node):
        return self._ctor.construct_object(node, deep=True)

    def mapping(self, node, allowed: dict, where: str, required=()) -> dict:
        if not isinstance(node, yaml.MappingNode):
            self.fail(node, f"{where}: expected a mapping")
        out, seen = {}, set()
        for knode, vnode in node.value:
            key = self.value(knode)
            if key not in allowed:
                self.fail(knode, f"{where}: unknown key {key!r} (allowed: {', '.join(sorted(allowed))})")
            if key in seen:
                self.fail(knode, f"{where}: duplicate key {key!r}")
            seen.add(key)
            out[key] = allowed[key](self, vnode, f"{where}.{key}")
        missing = [k for k in required if k not in out]
        if missing:
            self.fail(node, f"{where}: missing required key(s) {', '.join(missing)}")
        return out


def _scalar(kind, name):
    def read(r: _Reader, node, where):
        if not isinstance(node, yaml.ScalarNode):
            r.fail(node, f"{where}: expected {name}")
        v = r.value(node)
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if kind is str and not isinstance(v, str):
            v = str(v)
        if not isinstance(v, kind) or (kind is not bool and isinstance(v, bool)):
            r.fail(node, f"{where}: expected {name}, got {v!r}")
        return v
    return read


_float = _scalar(float, "a number")
_int = _scalar(int, "an integer")
_bool = _scalar(bool, "true or false")
_str = _scalar(str, "a string")


def _seq(item):
    def read(r: _Reader, node, where):
        if not isinstance(node, yaml.SequenceNode):
            r.fail(node, f"{where}: expected a list")
        return tuple(item(r, n, f"{where}[{k}]") for k, n in enumerate(node.value))
    return read


def _optional(item):
    def read(r, node, where):
        if isinstance(node, yaml.ScalarNode) and node.tag == "tag:yaml.org,2002:null":
            return None
        return item(r, node, where)
    return read


def _pinned(r: _Reader, node, where):
    if isinstance(node, yaml.ScalarNode):
        v = _str(r, node, where)
        if v not in ("ends", "corners", "none"):
            r.fail(node, f"{where}: expected ends, corners, none or a list of lattice indices")
        return () if v == "none" else (v,)
    return _seq(_seq(_int))(r, node, where)


_COMMON = {"density": _float, "particles_per_cell": _optional(_int), "velocity": _optional(_seq(_float))}

_EMITTERS = {
    "fluid_box": (FluidBox, {"lo": _seq(_float), "hi": _seq(_float), **_COMMON}, ("lo", "hi")),
    "fluid_ball": (FluidBall, {"center": _seq(_float), "radius": _float, **_COMMON}, ("center", "radius")),
    "fabric_sheet": (FabricSheet, {
        "origin": _seq(_float), "counts": _seq(_int), "spacing": _float, "axes": _seq(_int), "kind": _str,
        "density": _float, "stiffness": _float, "damping": _float, "pinned": _pinned,
        "capacity_ratio": _float, "absorption_time": _float, "velocity": _optional(_seq(_float)),
    }, ("origin", "counts", "spacing")),
}


def _emitter(r: _Reader, node, where):
    if not isinstance(node, yaml.MappingNode) or len(node.value) != 1:
        r.fail(node, f"{where}: each emitter is a one-key mapping ({', '.join(_EMITTERS)})")
    knode, vnode = node.value[0]
    kind = r.value(knode)
    if kind not in _EMITTERS:
        r.fail(knode, f"{where}: unknown emitter type {kind!r} (allowed: {', '.join(_EMITTERS)})")
    cls, schema, required = _EMITTERS[kind]
    return cls(**r.mapping(vnode, schema, f"{where}.{kind}", required))


def _sub(cls, schema, required=()):
    def read(r, node, where):
        kw = r.mapping(node, schema, where, required)
        try:
            return cls(**kw)
        except ConfigError as exc:
            r.fail(node, f"{where}: {exc.message}")
    return read


_SCHEME = _sub(TransferScheme, {"kind": _str, "fluid_modes": _int, "solid_modes": _int}, ("kind",))
_PRESSURE = _sub(PressureConfig, {"tolerance": _float, "max_iterations": _int})
_OUTPUT = _sub(OutputConfig, {"directory": _str, "frame_interval": _float, "diagnostics": _bool,
                              "frame_csv": _bool})

TOP_LEVEL = {
    "name": _str,
    "domain_size": _seq(_float),
    "grid_dims": _seq(_int),
    "dt": _float,
    "duration": _float,
    "gravity": _seq(_float),
    "seed": _int,
    "walls": _seq(_seq(_bool)),
    "particles_per_cell": _optional(_int),
    "jitter": _float,
    "orthogonalize": _bool,
    "map_reference": _str,
    "allow_unstable_modes": _bool,
    "coupling_strength": _float,
    "workers": _int,
    "audit": _bool,
    "scheme": _SCHEME,
    "pressure": _PRESSURE,
    "output": _OUTPUT,
    "emitters": _seq(_emitter),
}
REQUIRED = ("domain_size", "grid_dims", "dt", "duration", "gravity")


def parse_scene(text: str, path: str | None = None, validate: bool = True) -> SceneConfig:
    """Parse scene text into a validated SceneConfig."""
    r = _Reader(path)
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"malformed scene file: {exc.problem}", mark.line + 1 if mark else None, path) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed scene file: {exc}", None, path) from None
    if root is None:
        raise ConfigError("scene file is empty", None, path)
    data = r.mapping(root, TOP_LEVEL, "scene", REQUIRED)
    if "emitters" in data:
        data["emitters"] = list(data["emitters"])
    if "walls" in data:
        data["walls"] = tuple(tuple(w) for w in data["walls"])
    cfg = SceneConfig(**data)
    if validate:
        try:
            cfg.validate()
        except ConfigError as exc:
            if exc.path is None:
                exc.path = path
            raise
    return cfg


def load_scene(path, validate: bool = True) -> SceneConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"scene file not found: {p}", None, str(p)) from None
    except OSError as exc:
        raise ConfigError(f"cannot read scene file {p}: {exc.strerror}", None, str(p)) from None
    return parse_scene(text, str(p), validate)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    return v


def _dataclass_dict(obj, skip_none=True) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if v is None and skip_none:
            continue
        if f.name == "pinned":
            v = v[0] if len(v) == 1 and isinstance(v[0], str) else ("none" if not v else v)
        out[f.name] = _plain(v)
    return out


_EMITTER_NAME = {FluidBox: "fluid_box", FluidBall: "fluid_ball", FabricSheet: "fabric_sheet"}


def scene_to_dict(cfg: SceneConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if f.name == "emitters":
            v = [{_EMITTER_NAME[type(e)]: _dataclass_dict(e)} for e in v]
        elif f.name in ("scheme", "pressure", "output"):
            v = _dataclass_dict(v)
        else:
            v = _plain(v)
        out[f.name] = v
    return out


def dump_scene(cfg: SceneConfig) -> str:
    """Serialize a SceneConfig to scene-file text that parses back to an equal config."""
    return yaml.safe_dump(scene_to_dict(cfg), sort_keys=False, default_flow_style=None)
