"""Experiment configuration: TOML loading, validation, and the seed table.

A configuration is a TOML file with the sections below; every key has a
default, so an empty file (or no file) is a valid experiment.  All physical
times are in natural units and all counts are integers.

    [system]
    name = "toy_turbulence"   # ou_periodic | toy_turbulence | linear_test | polynomial
    tau = 1.0
    epsilon = 0.05
    [system.params]           # forwarded to the catalog constructor
    # alpha = -1.0

    [grid]
    dt = 1e-3

    [seeds]
    master = 1234             # per-stage streams derive from this
    # simulate = ...          # explicit per-stage overrides

    [budgets]
    n_samples = 96
    k_max = 20
    tol = 1e-4
    T_erg = 400.0
    burn_in = 20.0
    n_mc = 50
    n_sections = 10
    m_max = 32
    n_orbits = 256
    n_pairs = 400

    [study]
    epsilons = [0.1, 0.05, 0.02]
    T = 1.0

    [slow]
    x0 = [0.0]
    x_grid = [-1.0, -0.5, 0.0, 0.5, 1.0]

    [run]
    workers = 1
    out_dir = "out"

Seed policy: each pipeline stage gets its own stream, derived from the
master seed unless overridden explicitly; the --seed-offset flag shifts
every resolved seed by the same amount, which replicates a whole experiment
under fresh randomness without touching the file.
"""

import copy
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .catalog import _BUILDERS
from .errors import ConfigError, GridAlignmentError
from .noise import derive_seed, grid_steps

STAGES = ("simulate", "pullback", "measure", "ergodicity", "diagnose",
          "average", "verify", "example")

_DEFAULTS = {
    "system": {"name": "toy_turbulence", "tau": 1.0, "epsilon": 0.05,
               "params": {}},
    "grid": {"dt": 1e-3},
    "seeds": {"master": 1234},
    "budgets": {"n_samples": 96, "k_max": 20, "tol": 1e-4,
                "T_erg": 400.0, "burn_in": 20.0, "n_mc": 50,
                "n_sections": 10, "m_max": 32, "n_orbits": 256,
                "n_pairs": 400},
    "study": {"epsilons": [0.1, 0.05, 0.02], "T": 1.0},
    "slow": {"x0": [0.0], "x_grid": [-1.0, -0.5, 0.0, 0.5, 1.0]},
    "run": {"workers": 1, "out_dir": "out"},
}

_E_INV = 0.36787944117144233  # 1/e


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment: resolved tables plus the per-stage seed map."""

    system_name: str
    system_params: dict
    tau: float
    epsilon: float
    dt: float
    budgets: dict
    epsilons: list
    T: float
    x0: list
    x_grid: list
    workers: int
    out_dir: str
    seeds: dict
    resolved: dict = field(repr=False, default_factory=dict)

    def build_system(self):
        """Construct the configured SlowFastSystem from the catalog."""
        from .catalog import build_system

        return build_system(self.system_name, self.system_params,
                            tau=self.tau, epsilon=self.epsilon)


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        dotted = path + key
        if key not in base:
            # system.params is an open table, and seeds accepts one
            # override per stage; everything else is closed
            if path == "system.params." or (path == "seeds."
                                            and key in STAGES):
                out[key] = val
                continue
            raise ConfigError("unknown configuration key %r" % dotted)
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError("%s must be a table" % dotted)
            out[key] = _merge(base[key], val, dotted + ".")
        else:
            out[key] = val
    return out


def _require(cond, field_path, message):
    if not cond:
        raise ConfigError("%s: %s" % (field_path, message))


def _resolve_seeds(seed_section, offset):
    master = seed_section.get("master", 1234)
    _require(isinstance(master, int) and 0 <= master < 2**64,
             "seeds.master", "must be an integer in [0, 2^64)")
    seeds = {}
    for stage in STAGES:
        if stage in seed_section:
            val = seed_section[stage]
            _require(isinstance(val, int) and 0 <= val < 2**64,
                     "seeds.%s" % stage, "must be an integer in [0, 2^64)")
            seeds[stage] = val
        else:
            seeds[stage] = derive_seed(master, "stage", stage)
    if offset:
        seeds = {k: (v + offset) % 2**64 for k, v in seeds.items()}
    _require(len(set(seeds.values())) == len(seeds), "seeds",
             "per-stage seeds must be distinct")
    return master, seeds


def load_config(path=None, seed_offset=0, out_dir=None, workers=None):
    """Load, merge with defaults, and validate an experiment configuration.

    Args:
      path: TOML file; None uses the built-in defaults.
      seed_offset: added (mod 2^64) to every resolved per-stage seed.
      out_dir: overrides run.out_dir when given (CLI --out).
      workers: overrides run.workers when given (CLI --workers).

    Returns:
      ExperimentConfig.

    Raises:
      ConfigError: unknown keys, type errors, or invariant violations; the
        message names the offending field.
    """
    raw = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError("TOML syntax: %s" % exc) from exc
    cfg = _merge(_DEFAULTS, raw)
    if out_dir is not None:
        cfg["run"]["out_dir"] = out_dir
    if workers is not None:
        cfg["run"]["workers"] = workers

    name = cfg["system"]["name"]
    _require(name in _BUILDERS, "system.name",
             "unknown system %r; catalog: %s" % (name, sorted(_BUILDERS)))
    tau = cfg["system"]["tau"]
    dt = cfg["grid"]["dt"]
    _require(isinstance(dt, (int, float)) and dt > 0, "grid.dt",
             "must be a positive number")
    try:
        grid_steps(float(tau), float(dt))
    except (GridAlignmentError, ValueError):
        raise ConfigError(
            "system.tau: must be an integer multiple of grid.dt "
            "(tau=%r, dt=%r)" % (tau, dt)) from None
    eps = cfg["system"]["epsilon"]
    _require(isinstance(eps, (int, float)) and 0 < eps < _E_INV,
             "system.epsilon", "must lie in (0, 1/e)")

    budgets = cfg["budgets"]
    for key in ("n_samples", "k_max", "n_mc", "n_sections", "m_max",
                "n_orbits", "n_pairs"):
        _require(isinstance(budgets[key], int) and budgets[key] >= 1,
                 "budgets.%s" % key, "must be a positive integer")
    for key in ("tol", "T_erg"):
        _require(isinstance(budgets[key], (int, float)) and budgets[key] > 0,
                 "budgets.%s" % key, "must be positive")
    _require(isinstance(budgets["burn_in"], (int, float))
             and 0 <= budgets["burn_in"] < budgets["T_erg"],
             "budgets.burn_in", "must satisfy 0 <= burn_in < T_erg")

    epsilons = cfg["study"]["epsilons"]
    _require(isinstance(epsilons, list) and len(epsilons) >= 1,
             "study.epsilons", "must be a nonempty list")
    for e in epsilons:
        _require(isinstance(e, (int, float)) and 0 < e < _E_INV,
                 "study.epsilons", "every value must lie in (0, 1/e)")
    _require(all(b < a for a, b in zip(epsilons, epsilons[1:])),
             "study.epsilons", "must be strictly decreasing")
    T = cfg["study"]["T"]
    _require(isinstance(T, (int, float)) and T > 0, "study.T",
             "must be positive")

    x0 = cfg["slow"]["x0"]
    _require(isinstance(x0, list) and len(x0) >= 1
             and all(isinstance(v, (int, float)) for v in x0),
             "slow.x0", "must be a nonempty list of numbers")
    x_grid = cfg["slow"]["x_grid"]
    _require(isinstance(x_grid, list) and len(x_grid) >= 2
             and all(isinstance(v, (int, float)) for v in x_grid)
             and all(b > a for a, b in zip(x_grid, x_grid[1:])),
             "slow.x_grid", "must be a strictly increasing list of >= 2 numbers")

    wk = cfg["run"]["workers"]
    _require(isinstance(wk, int) and wk >= 1, "run.workers",
             "must be a positive integer")

    master, seeds = _resolve_seeds(cfg["seeds"], int(seed_offset))
    resolved = copy.deepcopy(cfg)
    resolved["seeds"] = {"master": master, "offset": int(seed_offset),
                         **seeds}

    return ExperimentConfig(
        system_name=name, system_params=dict(cfg["system"]["params"]),
        tau=float(tau), epsilon=float(eps), dt=float(dt),
        budgets=dict(budgets), epsilons=[float(e) for e in epsilons],
        T=float(T), x0=[float(v) for v in x0],
        x_grid=[float(v) for v in x_grid], workers=int(wk),
        out_dir=str(cfg["run"]["out_dir"]), seeds=seeds, resolved=resolved)
