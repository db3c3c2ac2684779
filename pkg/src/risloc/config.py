"""Experiment configuration: TOML schema, presets, validation and round-trip.

A config file is TOML. Every key is optional; omitted keys take the values of
the selected preset (``desk``, the default, is a 16x16 RIS with the UE in its
near field; ``full`` is the 48x48 reference scenario). Example::

    preset = "desk"
    master_seed = 7
    n_trials = 100
    powers_dbm = [-15, -10, -5, 0, 5, 10]
    s_norms = [0.0, 0.01, 0.05]
    pseudo_true_norms = [0.02, 0.1]
    output_dir = "results"

    [radio]
    carrier_hz = 30e9
    noise_psd_dbm_per_hz = -173.855
    num_pilots = 15

    [geometry]
    ue_position = [1.4, 4.6, 1.9]
    ris_rows = 16
    ris_cols = 16

    [mc]
    direction_re = [-0.681, -0.506, 0.244]
    direction_im = [0.458, 0.0492, 0.0928]

    [estimator]
    aod_step_theta_deg = 2.0

    [bounds]
    cube_side_m = 1.0
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import toml  # writer only; the lenient parser in this package can drop array items

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bounds import PseudoTrueSearch
from .channel import SPEED_OF_LIGHT, RadioConfig
from .estimator import EstimatorConfig
from .geometry import GeometryError, check_orientation, default_orientation

PRESETS = ("desk", "full")
DIRECTION_TOL = 1e-3
# printed to three significant digits; renormalized after validation
TABLE_MC_DIRECTION = np.array([-0.681 + 0.458j, -0.506 + 0.0492j, 0.244 + 0.0928j])


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class GeometryConfig:
    bs_position: tuple = (0.0, 0.0, 2.5)
    ris_position: tuple = (0.0, 5.0, 2.0)
    ue_position: tuple = (7.0, 3.0, 1.5)
    ris_rows: int = 48
    ris_cols: int = 48
    spacing_m: float | None = None  # None -> half wavelength
    orientation: tuple = tuple(map(tuple, default_orientation()))


@dataclass(frozen=True)
class ScenarioConfig:
    radio: RadioConfig = field(default_factory=RadioConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    mc_direction: tuple = tuple(TABLE_MC_DIRECTION / np.linalg.norm(TABLE_MC_DIRECTION))
    s_norms: tuple = (0.0, 0.01, 0.05)
    powers_dbm: tuple = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0)
    pseudo_true_norms: tuple = (0.02, 0.1)
    n_trials: int = 500
    master_seed: int = 2025
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    search: PseudoTrueSearch = field(default_factory=PseudoTrueSearch)
    output_dir: str = "results"
    preset: str = "full"

    @property
    def spacing(self) -> float:
        if self.geometry.spacing_m is not None:
            return self.geometry.spacing_m
        return 0.5 * SPEED_OF_LIGHT / self.radio.carrier_hz

    @property
    def mc_direction_array(self) -> np.ndarray:
        return np.asarray(self.mc_direction, dtype=complex)


def preset(name: str) -> ScenarioConfig:
    if name == "full":
        return ScenarioConfig()
    if name == "desk":
        return ScenarioConfig(
            geometry=GeometryConfig(ue_position=(1.4, 4.6, 1.9), ris_rows=16, ris_cols=16),
            n_trials=100, preset="desk")
    raise ConfigError([f"preset: unknown preset {name!r} (expected one of {PRESETS})"])


# TOML section -> (attribute on ScenarioConfig, dataclass, key renames toml->field)
_SECTIONS = {
    "radio": ("radio", RadioConfig, {}),
    "geometry": ("geometry", GeometryConfig, {}),
    "estimator": ("estimator", EstimatorConfig, {}),
    "bounds": ("search", PseudoTrueSearch,
               {"cube_side_m": "cube_side", "grid_step_m": "grid_step"}),
}
_TOP = {"preset", "master_seed", "n_trials", "powers_dbm", "s_norms", "pseudo_true_norms",
        "output_dir"}
_EXCLUDED = {"radio": {"tx_power_dbm"}}


def _section_keys(cls, renames, section):
    inv = {v: k for k, v in renames.items()}
    return {inv.get(f.name, f.name): f.name for f in fields(cls)
            if f.name not in _EXCLUDED.get(section, ())}


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def from_dict(data: dict, base_preset: str | None = None) -> ScenarioConfig:
    problems = []
    data = dict(data)
    name = base_preset or data.get("preset", "desk")
    data.pop("preset", None)
    cfg = preset(name)
    updates = {"preset": name}

    for key in list(data):
        if key in _TOP:
            val = _tupleize(data.pop(key))
            updates[key] = val
    mc = data.pop("mc", None)
    for section, (attr, cls, renames) in _SECTIONS.items():
        sec = data.pop(section, None)
        if sec is None:
            continue
        if not isinstance(sec, dict):
            problems.append(f"{section}: expected a table")
            continue
        allowed = _section_keys(cls, renames, section)
        kw = {}
        for k, v in sec.items():
            if k not in allowed:
                problems.append(f"{section}.{k}: unknown key")
            else:
                kw[allowed[k]] = _tupleize(v)
        try:
            updates[attr] = replace(getattr(cfg, attr), **kw)
        except (TypeError, ValueError, GeometryError) as exc:
            problems.append(f"{section}: {exc}")
    if mc is not None:
        re_, im_ = mc.get("direction_re"), mc.get("direction_im")
        extra = set(mc) - {"direction_re", "direction_im"}
        problems += [f"mc.{k}: unknown key" for k in sorted(extra)]
        if re_ is None:
            problems.append("mc.direction_re: required when [mc] is given")
        else:
            im_ = [0.0] * len(re_) if im_ is None else im_
            if len(im_) != len(re_):
                problems.append("mc.direction_im: length differs from mc.direction_re")
            else:
                updates["mc_direction"] = tuple(complex(a, b) for a, b in zip(re_, im_))
    problems += [f"{k}: unknown key" for k in sorted(data)]
    if problems:
        raise ConfigError(problems)
    try:
        cfg = replace(cfg, **updates)
    except TypeError as exc:
        raise ConfigError([str(exc)]) from exc
    return validate(cfg)


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check invariants, collecting every problem; returns a normalized config."""
    problems = []
    g = cfg.geometry
    for name in ("bs_position", "ris_position", "ue_position"):
        v = np.asarray(getattr(g, name), dtype=float)
        if v.shape != (3,) or not np.all(np.isfinite(v)):
            problems.append(f"geometry.{name}: expected 3 finite numbers")
    if int(g.ris_rows) < 1 or int(g.ris_cols) < 1:
        problems.append("geometry.ris_rows/ris_cols: must be >= 1")
    if g.spacing_m is not None and not g.spacing_m > 0:
        problems.append("geometry.spacing_m: must be positive")
    try:
        check_orientation(g.orientation)
    except (GeometryError, ValueError) as exc:
        problems.append(f"geometry.orientation: {exc}")
    d = np.asarray(cfg.mc_direction, dtype=complex)
    norm = float(np.linalg.norm(d))
    if d.size not in (1, 2, 3):
        problems.append(f"mc.direction: need 1..3 coefficients, got {d.size}")
    elif abs(norm - 1.0) > DIRECTION_TOL:
        problems.append(f"mc.direction: must have unit norm (got {norm:.6g})")
    if int(cfg.n_trials) < 1:
        problems.append("n_trials: must be >= 1")
    if not cfg.powers_dbm:
        problems.append("powers_dbm: must be non-empty")
    if not cfg.s_norms or any(q < 0 for q in cfg.s_norms):
        problems.append("s_norms: must be non-empty and non-negative")
    if any(q < 0 for q in cfg.pseudo_true_norms):
        problems.append("pseudo_true_norms: must be non-negative")
    if cfg.preset not in PRESETS:
        problems.append(f"preset: unknown preset {cfg.preset!r}")
    if problems:
        raise ConfigError(problems)
    if abs(norm - 1.0) > 1e-12:
        d = d / norm
    return replace(
        cfg,
        mc_direction=tuple(complex(v) for v in d),
        s_norms=tuple(float(q) for q in cfg.s_norms),
        powers_dbm=tuple(float(p) for p in cfg.powers_dbm),
        pseudo_true_norms=tuple(float(q) for q in cfg.pseudo_true_norms),
        n_trials=int(cfg.n_trials), master_seed=int(cfg.master_seed),
        geometry=replace(g, ris_rows=int(g.ris_rows), ris_cols=int(g.ris_cols),
                         bs_position=tuple(map(float, g.bs_position)),
                         ris_position=tuple(map(float, g.ris_position)),
                         ue_position=tuple(map(float, g.ue_position)),
                         orientation=tuple(tuple(map(float, r)) for r in g.orientation)),
    )


def load_config(path, preset_name: str | None = None) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    return from_dict(data, preset_name)


def to_dict(cfg: ScenarioConfig) -> dict:
    out = {
        "preset": cfg.preset,
        "master_seed": cfg.master_seed,
        "n_trials": cfg.n_trials,
        "output_dir": cfg.output_dir,
        "powers_dbm": list(cfg.powers_dbm),
        "s_norms": list(cfg.s_norms),
        "pseudo_true_norms": list(cfg.pseudo_true_norms),
    }
    for section, (attr, cls, renames) in _SECTIONS.items():
        sub = asdict(getattr(cfg, attr))
        table = {}
        for k, name in _section_keys(cls, renames, section).items():
            v = sub[name]
            if v is None:
                continue
            table[k] = [list(r) if isinstance(r, tuple) else r for r in v] \
                if isinstance(v, tuple) else v
        out[section] = table
    d = cfg.mc_direction_array
    out["mc"] = {"direction_re": d.real.tolist(), "direction_im": d.imag.tolist()}
    return out


def dumps(cfg: ScenarioConfig) -> str:
    return toml.dumps(to_dict(cfg))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()
