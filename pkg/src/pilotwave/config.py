"""Experiment configuration: JSON schema, dotted overrides and validation.

The file format is a JSON object whose sections mirror :class:`ExperimentConfig`.
Every key is optional; missing keys take the documented defaults, unknown
keys are rejected. Example::

    {
      "seed": 7,
      "statistics_mode": "bosonic",
      "geometry": {"slit_separation_half": 5.0, "screen_y": 25.0},
      "detectors": {"pairs": [[[4.0, 4.5], [-3.0, -2.5]]]}
    }

Overrides use dotted paths, ``--set geometry.slit_separation_half=4.0``; the
value is parsed as JSON when possible and kept as a string otherwise.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field

import numpy as np

from pilotwave.detection import DetectorPair, PairMode
from pilotwave.dynamics import IntegratorConfig
from pilotwave.quantum_state import PhysicalConstants, SlitGeometry, StatisticsMode

SEED_STAGES = (
    "gibbs", "time", "single_particle", "symmetry", "continuity",
    "equivariance", "slice", "newton", "no_crossing",
)


class ConfigError(ValueError):
    """Invalid configuration. ``field`` is the dotted path, ``line`` the file line if known."""

    def __init__(self, message, field=None, line=None):
        self.field, self.line = field, line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass
class ConstantsSection:
    hbar: float = 1.0
    mass: float = 1.0


@dataclass
class GeometrySection:
    slit_separation_half: float = 5.0
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    forward_speed: float = 5.0
    screen_y: float = 25.0
    transverse_velocity: float = 0.0


@dataclass
class IntegratorSection:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    max_step: float = 0.25
    min_step: float = 1e-10
    node_epsilon: float = 1e-10
    max_steps: int = 100000
    project_to_slice: bool = False


@dataclass
class EnsembleSection:
    gibbs_size: int = 10000
    time_size: int = 10000
    constraint_width: float = 0.0
    independent_y: bool = False
    # None means the screen arrival time
    t_end: float | None = None


@dataclass
class DetectorSection:
    pairs: list = field(
        default_factory=lambda: [
            [[4.0, 4.5], [-3.0, -2.5]],
            [[4.0, 4.5], [-4.5, -4.0]],
        ]
    )
    mode: str = "unordered"
    allow_overlap: bool = False
    detection_time: float | None = None
    screen_band_half_width: float = 1.0


@dataclass
class ScanSection:
    centers_p: list = field(default_factory=lambda: [1.25, 2.75, 4.25])
    centers_q: list = field(default_factory=lambda: [-4.25, -2.75, -1.25])
    width: float = 0.5


@dataclass
class TrajectorySection:
    initial_points: list = field(
        default_factory=lambda: [
            [4.3, 0.0, -4.3, 0.0],
            [5.5, 0.4, -5.5, 0.4],
            [4.6, -0.3, -5.2, 0.8],
        ]
    )
    n_samples: int = 101
    t_end: float | None = None


@dataclass
class VerifySection:
    symmetry_points: int = 1000
    continuity_points: int = 1000
    continuity_threshold: float = 1e-4
    equivariance_size: int = 20000
    equivariance_bins: int = 50
    equivariance_threshold: float = 0.05
    slice_trajectories: int = 100
    slice_threshold: float = 1e-6
    newton_trajectories: int = 10
    newton_checkpoints: int = 20
    newton_threshold: float = 1e-3


@dataclass
class ExperimentConfig:
    seed: int = 20240611
    statistics_mode: str = "bosonic"
    output_dir: str | None = None
    constants: ConstantsSection = field(default_factory=ConstantsSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    ensembles: EnsembleSection = field(default_factory=EnsembleSection)
    detectors: DetectorSection = field(default_factory=DetectorSection)
    scan: ScanSection = field(default_factory=ScanSection)
    trajectories: TrajectorySection = field(default_factory=TrajectorySection)
    verify: VerifySection = field(default_factory=VerifySection)

    # -- derived objects -----------------------------------------------------

    def physical_constants(self):
        return PhysicalConstants(hbar=self.constants.hbar, mass=self.constants.mass)

    def slit_geometry(self):
        return SlitGeometry(**dataclasses.asdict(self.geometry))

    def integrator_config(self):
        return IntegratorConfig(**dataclasses.asdict(self.integrator))

    def mode(self):
        return StatisticsMode(self.statistics_mode)

    def resolved_time(self, value):
        return self.slit_geometry().arrival_time if value is None else float(value)

    def derived_seeds(self):
        """Independent 63-bit seeds for each random stage, all derived from ``seed``."""
        states = np.random.SeedSequence(self.seed).generate_state(len(SEED_STAGES), np.uint64)
        return {name: int(s) >> 1 for name, s in zip(SEED_STAGES, states)}

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# -- parsing ---------------------------------------------------------------------


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _coerce(value, annotation, path, text):
    leaf = path.rsplit(".", 1)[-1]
    optional = "None" in annotation
    base = annotation.replace(" | None", "")
    if value is None:
        if optional:
            return None
        raise ConfigError("must not be null", path, _line_of(text, leaf))
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path, _line_of(text, leaf))
        return value
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path, _line_of(text, leaf))
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path, _line_of(text, leaf))
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path, _line_of(text, leaf))
        return value
    if base == "list":
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path, _line_of(text, leaf))
        return value
    raise AssertionError(f"unhandled annotation {annotation}")


def _build(cls, data, prefix, text):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {data!r}", prefix or None, _line_of(text, prefix))
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        key = unknown[0]
        raise ConfigError(
            f"unknown key (allowed: {', '.join(sorted(fields))})",
            f"{prefix}.{key}" if prefix else key,
            _line_of(text, key),
        )
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        path = f"{prefix}.{name}" if prefix else name
        factory = f.default_factory
        if factory is not dataclasses.MISSING and dataclasses.is_dataclass(factory):
            kwargs[name] = _build(f.default_factory, data[name], path, text)
        else:
            kwargs[name] = _coerce(data[name], f.type, path, text)
    return cls(**kwargs)


def _set_dotted(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        child = node.setdefault(k, {})
        if not isinstance(child, dict):
            raise ConfigError("cannot descend into a non-object", dotted)
        node = child
    node[keys[-1]] = value


def parse_override(text):
    """``'a.b=value'`` -> ``('a.b', parsed value)``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form path=value")
    path, raw = text.split("=", 1)
    path = path.strip()
    if not path:
        raise ConfigError(f"override {text!r} has an empty path")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def load_config(path=None, overrides=()):
    """Read, override and validate a configuration.

    Raises :class:`ConfigError` with the offending field and, for file
    values, the line it appears on.
    """
    text, data = None, {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    for item in overrides:
        dotted, value = parse_override(item)
        _set_dotted(data, dotted, value)
    return config_from_dict(data, text)


def config_from_dict(data, text=None):
    cfg = _build(ExperimentConfig, data, "", text)
    validate(cfg, text)
    return cfg


def _check_window(win, path, text):
    ok = (
        isinstance(win, list)
        and len(win) == 2
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in win)
        and win[0] < win[1]
    )
    if not ok:
        raise ConfigError(f"window must be [x_min, x_max] with x_min < x_max, got {win!r}", path,
                          _line_of(text, path.split(".")[1]))


def validate(cfg, text=None):
    """Cross-field checks; delegates numeric contracts to the component types."""

    def wrap(section, build):
        try:
            return build()
        except ValueError as exc:
            raise ConfigError(str(exc), section, _line_of(text, section)) from exc

    if isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2**63:
        raise ConfigError("seed must be a non-negative 63-bit integer", "seed", _line_of(text, "seed"))
    wrap("statistics_mode", cfg.mode)
    wrap("constants", cfg.physical_constants)
    wrap("geometry", cfg.slit_geometry)
    wrap("integrator", cfg.integrator_config)

    for name in ("gibbs_size", "time_size"):
        if getattr(cfg.ensembles, name) < 1:
            raise ConfigError("must be at least 1", f"ensembles.{name}", _line_of(text, name))
    if cfg.ensembles.constraint_width < 0:
        raise ConfigError("must be non-negative", "ensembles.constraint_width",
                          _line_of(text, "constraint_width"))

    wrap("detectors", lambda: PairMode(cfg.detectors.mode))
    for i, pair in enumerate(cfg.detectors.pairs):
        path = f"detectors.pairs[{i}]"
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError("each pair must be [[P_min, P_max], [Q_min, Q_max]]", path,
                              _line_of(text, "pairs"))
        for win in pair:
            _check_window(win, path, text)
        try:
            DetectorPair.from_bounds(pair[0], pair[1], cfg.detectors.allow_overlap)
        except ValueError as exc:
            raise ConfigError(str(exc), path, _line_of(text, "pairs")) from exc
    if cfg.scan.width <= 0:
        raise ConfigError("must be positive", "scan.width", _line_of(text, "width"))
    for name in ("centers_p", "centers_q"):
        vals = getattr(cfg.scan, name)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            raise ConfigError("must be a list of numbers", f"scan.{name}", _line_of(text, name))

    for i, q in enumerate(cfg.trajectories.initial_points):
        if not (isinstance(q, list) and len(q) == 4
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in q)):
            raise ConfigError("initial points are [x1, y1, x2, y2]", f"trajectories.initial_points[{i}]",
                              _line_of(text, "initial_points"))
    if cfg.trajectories.n_samples < 2:
        raise ConfigError("must be at least 2", "trajectories.n_samples", _line_of(text, "n_samples"))

    for f in dataclasses.fields(VerifySection):
        v = getattr(cfg.verify, f.name)
        if v <= 0:
            raise ConfigError("must be positive", f"verify.{f.name}", _line_of(text, f.name))
    for name in ("detection_time",):
        v = getattr(cfg.detectors, name)
        if v is not None and v <= 0:
            raise ConfigError("must be positive", f"detectors.{name}", _line_of(text, name))
    for section in ("ensembles", "trajectories"):
        v = getattr(cfg, section).t_end
        if v is not None and v <= 0:
            raise ConfigError("must be positive", f"{section}.t_end", _line_of(text, "t_end"))
    if cfg.resolved_time(cfg.detectors.detection_time) > cfg.resolved_time(cfg.ensembles.t_end):
        raise ConfigError("detection time lies beyond the ensemble propagation horizon",
                          "detectors.detection_time", _line_of(text, "detection_time"))
    return cfg
