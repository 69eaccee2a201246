"""Pipeline configuration file.

One INI-style text file with a section per settings group; keys are the
field names of the matching dataclass.  Missing keys keep their defaults,
unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field

from ..features import FeatureConfig
from ..localizability import DetectionConfig
from ..optimizer import SolverConfig
from .scenes import SceneSpec, SensorModel


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    method: str = "lpicp"
    # injected error on each scan's initial estimate, per direction (rx ry rz tx ty tz)
    prior_bias: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    prior_sigma: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    # "odometry": previous estimate composed with the true increment;
    # "constant_velocity": previous estimate composed with the last estimated increment
    prior_model: str = "odometry"
    seed: int = 0
    align_n: int = 50
    scan_noise: float = -1.0  # range noise on simulated scans; negative = use scene sigma


@dataclass
class PipelineConfig:
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    sensor: SensorModel = field(default_factory=SensorModel)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


SECTIONS = ("detection", "solver", "features", "scene", "sensor", "experiment")

_COMMENTS = {
    "detection.h_f": "contribution threshold for the moderate set",
    "detection.h_u": "contribution threshold for the high set",
    "detection.T1": "Full if the moderate sum reaches T1 ...",
    "detection.T2": "... or the high sum reaches T2",
    "detection.T3": "Partial if the moderate sum reaches T3 and the high sum reaches T4",
    "detection.metric": "squared | absolute",
    "solver.mu_low": "soft-constraint weight when the high sum is below T5",
    "solver.mu_high": "soft-constraint weight when the high sum reaches T5",
    "solver.jacobian": "euler | lie",
    "solver.zhang_threshold": "eigenvalue threshold of the Zhang baseline",
    "features.plane_tol": "max neighbor distance from a fitted plane (m)",
    "features.max_corr_dist": "max nearest-neighbor distance for a match (m)",
    "scene.kind": "plane | corridor | tunnel | cuberoom | openterrain | lshape",
    "scene.density": "map points per square meter",
    "experiment.method": "lpicp | zhang | xicp | none",
    "experiment.prior_model": "odometry | constant_velocity",
}


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse(text: str, default, name: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return float(text) if text else None
        if isinstance(default, tuple):
            vals = tuple(float(x) for x in text.replace(",", " ").split())
            if len(vals) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return vals
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r} ({exc})") from None
    return text


def _section_defaults(cfg: PipelineConfig, sec: str):
    return getattr(cfg, sec)


def render(cfg: PipelineConfig | None = None) -> str:
    """Config file text for ``cfg`` (defaults when None), with comments."""
    cfg = cfg or PipelineConfig()
    lines = ["# locreg pipeline configuration", ""]
    for sec in SECTIONS:
        obj = _section_defaults(cfg, sec)
        lines.append(f"[{sec}]")
        for f in dataclasses.fields(obj):
            note = _COMMENTS.get(f"{sec}.{f.name}")
            if note:
                lines.append(f"# {note}")
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def loads(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep T1..T5 case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    base = PipelineConfig()
    built = {}
    for sec in SECTIONS:
        obj = _section_defaults(base, sec)
        if sec == "scene" and parser.has_section(sec) and parser.has_option(sec, "kind"):
            # per-kind dimension defaults apply when dimensions are left out
            obj = SceneSpec(kind=parser.get(sec, "kind").strip())
        names = {f.name: f for f in dataclasses.fields(obj)}
        kwargs = {}
        if parser.has_section(sec):
            for key, raw in parser.items(sec):
                if key not in names:
                    raise ConfigError(f"unknown key {sec}.{key}")
                kwargs[key] = _parse(raw, getattr(obj, key), f"{sec}.{key}")
        try:
            built[sec] = dataclasses.replace(obj, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{sec}] {exc}") from None
    return PipelineConfig(**built)


def load(path: str | os.PathLike) -> PipelineConfig:
    try:
        with open(path) as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def dump(path: str | os.PathLike, cfg: PipelineConfig | None = None) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(render(cfg))
