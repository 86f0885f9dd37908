"""Run configuration files.

A run is described by a TOML file::

    seed = 20240611
    gamma = 1.0
    output = "runs/quadratic"            # relative to the config file
    desingularizer = "power(c=1, theta=0.5)"

    [potential]
    name = "quadratic"
    params = { A = [[1.0, 0.0], [0.0, 1.0]] }

    [initial]
    u0 = [1.0, 0.5]
    v0 = [0.0, 0.0]                      # default: zeros

    [integrator]                         # DynamicsConfig fields except gamma
    abs_tol = 1e-9

    [analysis]                           # what `simulate` runs after integrating
    certify = false
    levelset = false
    rates = false
    exponent = true                      # estimate theta when no desingularizer is given

    [certify]
    R = 1.0
    budget = 10000
    lambda = 0.1                         # default: the admissible lambda_star

    [levelset]
    r_max = 1e-2
    r_min = 1e-8
    points_per_decade = 2
    starts = 16
    r_ball = 10.0
    ubar = [0.0, 0.0]                    # default: the potential's critical point

    [rates]
    budget = 4000
    fit_window = [1e2, 1e4]
    exponent_window = [1e-12, 1e-4]
    t_start = 0.0

Unknown sections or keys are rejected so that typos do not pass silently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .desingularize import Desingularizer
from .dynamics import DynamicsConfig, PhaseState
from .errors import InputError
from .potential import PotentialSpec, catalog_entry
from .sampling import DEFAULT_SEED


class ConfigError(InputError):
    """A configuration file is missing, malformed or out of range.

    ``key`` names the offending dotted key when there is one.
    """

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


_DYNAMICS_KEYS = [f.name for f in fields(DynamicsConfig) if f.name != "gamma"]
_SECTIONS = {
    "potential": {"name", "params"},
    "initial": {"u0", "v0"},
    "integrator": set(_DYNAMICS_KEYS),
    "analysis": {"certify", "levelset", "rates", "exponent"},
    "certify": {"R", "budget", "lambda"},
    "levelset": {"r_max", "r_min", "points_per_decade", "starts", "r_ball", "ubar"},
    "rates": {"budget", "fit_window", "exponent_window", "t_start"},
}
_TOP = {"seed", "gamma", "output", "desingularizer"}


@dataclass(frozen=True)
class CertifySettings:
    R: float = 1.0
    budget: int = 10_000
    lam: Optional[float] = None


@dataclass(frozen=True)
class LevelsetSettings:
    r_max: float = 1e-2
    r_min: float = 1e-8
    points_per_decade: int = 2
    starts: int = 16
    r_ball: Optional[float] = None
    ubar: Optional[tuple] = None


@dataclass(frozen=True)
class RatesSettings:
    budget: int = 4000
    fit_window: Optional[tuple] = None
    exponent_window: Optional[tuple] = None
    t_start: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one run."""

    potential: str
    params: dict
    gamma: float
    u0: tuple
    v0: tuple
    dynamics: DynamicsConfig
    seed: int = DEFAULT_SEED
    desingularizer: Optional[str] = None
    analysis: dict = field(default_factory=lambda: {"certify": False, "levelset": False,
                                                     "rates": False, "exponent": True})
    certify: CertifySettings = CertifySettings()
    levelset: LevelsetSettings = LevelsetSettings()
    rates: RatesSettings = RatesSettings()
    output: Optional[str] = None
    base_dir: str = "."
    name: str = "run"

    def build_potential(self) -> PotentialSpec:
        return catalog_entry(self.potential, **self.params).spec

    def initial_state(self) -> PhaseState:
        return PhaseState(np.array(self.u0, dtype=float), np.array(self.v0, dtype=float))

    def build_desingularizer(self) -> Optional[Desingularizer]:
        if self.desingularizer is None:
            return None
        try:
            return Desingularizer.parse(self.desingularizer, base_dir=self.base_dir)
        except (InputError, OSError, KeyError) as exc:
            raise ConfigError(str(exc), "desingularizer") from None

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        if self.output is not None:
            out = Path(self.output)
            return out if out.is_absolute() else Path(self.base_dir) / out
        return Path.cwd() / "kldyn_out" / self.name

    def echo(self) -> dict:
        """Plain-data view written into run artifacts."""
        return {
            "potential": self.potential, "params": self.params, "gamma": self.gamma,
            "u0": list(self.u0), "v0": list(self.v0), "seed": self.seed,
            "desingularizer": self.desingularizer,
            "integrator": {k: getattr(self.dynamics, k) for k in _DYNAMICS_KEYS},
        }


# ---------------------------------------------------------------- parsing


def _real(value, key, positive=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    value = float(value)
    if not math.isfinite(value) or (positive and not value > 0):
        raise ConfigError(f"must be {'positive and ' if positive else ''}finite, got {value!r}", key)
    return value


def _count(value, key):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"expected a positive integer, got {value!r}", key)
    return value


def _vector(value, key):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"expected a non-empty list of numbers, got {value!r}", key)
    return tuple(_real(x, key) for x in value)


def _window(value, key):
    if value is None:
        return None
    w = _vector(value, key)
    if len(w) != 2 or not 0 < w[0] < w[1]:
        raise ConfigError(f"expected [lo, hi] with 0 < lo < hi, got {value!r}", key)
    return w


def _check_keys(raw: dict):
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError("expected a table", key)
            for sub in value:
                if sub not in _SECTIONS[key]:
                    raise ConfigError("unknown key", f"{key}.{sub}")
        elif key not in _TOP:
            raise ConfigError("unknown key", key)


def parse_config(raw: dict, base_dir=".", name: str = "run") -> RunConfig:
    """Validate a decoded TOML document into a :class:`RunConfig`."""
    _check_keys(raw)
    pot = raw.get("potential", {})
    if "name" not in pot:
        raise ConfigError("missing potential name", "potential.name")
    pname = pot["name"]
    params = pot.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("expected a table", "potential.params")
    try:
        spec = catalog_entry(pname, **params).spec
    except InputError as exc:
        raise ConfigError(str(exc), "potential") from None

    gamma = _real(raw.get("gamma", 1.0), "gamma")
    if not gamma > 0:
        raise ConfigError(f"damping must be positive, got {gamma!r}", "gamma")

    init = raw.get("initial", {})
    if "u0" not in init:
        raise ConfigError("missing initial position", "initial.u0")
    u0 = _vector(init["u0"], "initial.u0")
    v0 = _vector(init["v0"], "initial.v0") if "v0" in init else (0.0,) * len(u0)
    for key, vec in (("initial.u0", u0), ("initial.v0", v0)):
        if len(vec) != spec.dimension:
            raise ConfigError(f"expected {spec.dimension} components, got {len(vec)}", key)

    integ = raw.get("integrator", {})
    dyn_kwargs = {k: _real(v, f"integrator.{k}", positive=True) for k, v in integ.items()}
    try:
        dynamics = DynamicsConfig(gamma=gamma, **dyn_kwargs)
    except InputError as exc:
        field_name = str(exc).split("DynamicsConfig.")[-1].split(" ")[0]
        raise ConfigError(str(exc), f"integrator.{field_name}") from None

    seed = raw.get("seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"expected a non-negative integer, got {seed!r}", "seed")

    desing = raw.get("desingularizer")
    if desing is not None and not isinstance(desing, str):
        raise ConfigError("expected a string such as 'power(c=1, theta=0.5)'", "desingularizer")

    analysis = {"certify": False, "levelset": False, "rates": False, "exponent": True}
    for key, value in raw.get("analysis", {}).items():
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", f"analysis.{key}")
        analysis[key] = value

    c = raw.get("certify", {})
    lam = c.get("lambda")
    certify = CertifySettings(
        R=_real(c.get("R", 1.0), "certify.R", positive=True),
        budget=_count(c.get("budget", 10_000), "certify.budget"),
        lam=None if lam is None else _real(lam, "certify.lambda"),
    )
    if certify.lam is not None and certify.lam < 0:
        raise ConfigError("must be non-negative", "certify.lambda")

    ls = raw.get("levelset", {})
    levelset = LevelsetSettings(
        r_max=_real(ls.get("r_max", 1e-2), "levelset.r_max", positive=True),
        r_min=_real(ls.get("r_min", 1e-8), "levelset.r_min", positive=True),
        points_per_decade=_count(ls.get("points_per_decade", 2), "levelset.points_per_decade"),
        starts=_count(ls.get("starts", 16), "levelset.starts"),
        r_ball=_real(ls.get("r_ball"), "levelset.r_ball", positive=True, allow_none=True),
        ubar=_vector(ls["ubar"], "levelset.ubar") if "ubar" in ls else None,
    )
    if not levelset.r_max > levelset.r_min:
        raise ConfigError("must be smaller than levelset.r_max", "levelset.r_min")

    rt = raw.get("rates", {})
    rates = RatesSettings(
        budget=_count(rt.get("budget", 4000), "rates.budget"),
        fit_window=_window(rt.get("fit_window"), "rates.fit_window"),
        exponent_window=_window(rt.get("exponent_window"), "rates.exponent_window"),
        t_start=_real(rt.get("t_start"), "rates.t_start", allow_none=True),
    )

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("expected a path string", "output")

    cfg = RunConfig(potential=pname, params=params, gamma=gamma, u0=u0, v0=v0,
                    dynamics=dynamics, seed=seed, desingularizer=desing, analysis=analysis,
                    certify=certify, levelset=levelset, rates=rates, output=output,
                    base_dir=str(base_dir), name=name)
    cfg.build_desingularizer()
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(raw, base_dir=path.resolve().parent, name=path.stem)
