"""Run configuration: a small sectioned key=value format.

Schema (sections and keys, * marks required):

  [scaling]   d* (2 or 3), epsilon or mu (exactly one), horizon* (> 0)
  [profile]   kind (maxwellian | bimodal, default maxwellian),
              beta (default 1.0), shift (default 1.5, bimodal only)
  [ensemble]  replicas* (>= 1), base_seed (default 0)
  [family]    kind (hermite-fourier | invariants), max_vdeg (default 2),
              x_modes (default 0)
  [grid]      m (default 24), vmax (default 6.0), design (default 16)
  [run]       experiment (optional), out (default "out")
  [study]     optional per-study knobs: dsmc_particles, spde_replicas,
              spde_dt, snapshots, m_max, tree_samples, solver_dt, tol

Lines starting with # or ; are comments.  Values keep their literal
spelling until typed by the schema, so serialize -> parse round-trips
exactly.  The missing one of epsilon/mu is derived from the hard-sphere
scaling mu = epsilon^{-(d-1)}.
"""

import dataclasses
import math
from typing import Optional

from .dynamics import ScalingConfig


class ConfigError(ValueError):
    """Configuration problem, annotated with a 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclasses.dataclass(frozen=True)
class StudyParams:
    dsmc_particles: int = 200_000
    spde_replicas: int = 4000
    spde_dt: float = 0.002
    snapshots: int = 6
    m_max: int = 4
    tree_samples: int = 200_000
    solver_dt: float = 0.01
    tol: float = 3.0


@dataclasses.dataclass(frozen=True)
class RunConfig:
    d: int
    horizon: float
    epsilon: float
    mu: float
    given: str                       # which of epsilon/mu was written
    profile_kind: str
    beta: float
    shift: float
    replicas: int
    base_seed: int
    family_kind: str
    max_vdeg: int
    x_modes: int
    grid_m: int
    grid_vmax: float
    design_q: int
    experiment: Optional[str]
    out: str
    study: StudyParams

    def scaling(self) -> ScalingConfig:
        return ScalingConfig.from_epsilon(self.d, self.epsilon)


_SCHEMA = {
    "scaling": {"d": int, "epsilon": float, "mu": float, "horizon": float},
    "profile": {"kind": str, "beta": float, "shift": float},
    "ensemble": {"replicas": int, "base_seed": int},
    "family": {"kind": str, "max_vdeg": int, "x_modes": int},
    "grid": {"m": int, "vmax": float, "design": int},
    "run": {"experiment": str, "out": str},
    "study": {"dsmc_particles": int, "spde_replicas": int,
              "spde_dt": float, "snapshots": int, "m_max": int,
              "tree_samples": int, "solver_dt": float, "tol": float},
}


def _read_items(text: str):
    """(section, key) -> (raw value, line number), with syntax checks."""
    items = {}
    section = None
    seen_sections = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", lineno)
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in seen_sections:
                raise ConfigError(f"duplicate section [{section}]", lineno)
            seen_sections.add(section)
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]", lineno)
        if (section, key) in items:
            raise ConfigError(f"duplicate key '{key}' in [{section}]",
                              lineno)
        if not value:
            raise ConfigError(f"empty value for '{key}'", lineno)
        items[(section, key)] = (value, lineno)
    return items


def _typed(items, section, key, default=None, required=False):
    if (section, key) not in items:
        if required:
            raise ConfigError(f"missing required key '{key}' in [{section}]")
        return default
    raw, lineno = items[(section, key)]
    typ = _SCHEMA[section][key]
    if typ is str:
        return raw
    try:
        if typ is int:
            val = int(raw)
        else:
            val = float(raw)
    except ValueError:
        raise ConfigError(
            f"value '{raw}' for '{key}' is not {typ.__name__}", lineno)
    if not math.isfinite(val):
        raise ConfigError(f"value for '{key}' must be finite", lineno)
    return val


def parse_config(text: str) -> RunConfig:
    items = _read_items(text)

    d = _typed(items, "scaling", "d", required=True)
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3",
                          items[("scaling", "d")][1])
    horizon = _typed(items, "scaling", "horizon", required=True)
    if horizon <= 0:
        raise ConfigError("horizon must be positive",
                          items[("scaling", "horizon")][1])
    eps = _typed(items, "scaling", "epsilon")
    mu = _typed(items, "scaling", "mu")
    if (eps is None) == (mu is None):
        raise ConfigError(
            "exactly one of epsilon/mu must be given in [scaling]")
    if eps is not None:
        if not 0 < eps < 0.25:
            raise ConfigError("epsilon must lie in (0, 0.25)",
                              items[("scaling", "epsilon")][1])
        given = "epsilon"
        mu = eps ** (-(d - 1))
    else:
        if mu <= 4.0 ** (d - 1):
            raise ConfigError("mu too small for a valid diameter",
                              items[("scaling", "mu")][1])
        given = "mu"
        eps = mu ** (-1.0 / (d - 1))

    kind = _typed(items, "profile", "kind", default="maxwellian")
    if kind not in ("maxwellian", "bimodal"):
        raise ConfigError(f"unknown profile kind '{kind}'",
                          items[("profile", "kind")][1])
    beta = _typed(items, "profile", "beta", default=1.0)
    if beta <= 0:
        raise ConfigError("beta must be positive",
                          items[("profile", "beta")][1])
    shift = _typed(items, "profile", "shift", default=1.5)

    replicas = _typed(items, "ensemble", "replicas", required=True)
    if replicas < 1:
        raise ConfigError("replicas must be at least 1",
                          items[("ensemble", "replicas")][1])
    base_seed = _typed(items, "ensemble", "base_seed", default=0)

    family_kind = _typed(items, "family", "kind", default="hermite-fourier")
    if family_kind not in ("hermite-fourier", "invariants"):
        raise ConfigError(f"unknown family kind '{family_kind}'",
                          items[("family", "kind")][1])
    max_vdeg = _typed(items, "family", "max_vdeg", default=2)
    x_modes = _typed(items, "family", "x_modes", default=0)

    grid_m = _typed(items, "grid", "m", default=24)
    if grid_m < 4 or grid_m % 2:
        raise ConfigError("grid m must be even and at least 4",
                          items[("grid", "m")][1])
    grid_vmax = _typed(items, "grid", "vmax", default=6.0)
    if grid_vmax <= 0:
        raise ConfigError("grid vmax must be positive",
                          items[("grid", "vmax")][1])
    design_q = _typed(items, "grid", "design", default=16)
    if design_q < 4:
        raise ConfigError("design resolution must be at least 4",
                          items[("grid", "design")][1])

    experiment = _typed(items, "run", "experiment")
    out = _typed(items, "run", "out", default="out")

    study = StudyParams(
        dsmc_particles=_typed(items, "study", "dsmc_particles",
                              default=StudyParams.dsmc_particles),
        spde_replicas=_typed(items, "study", "spde_replicas",
                             default=StudyParams.spde_replicas),
        spde_dt=_typed(items, "study", "spde_dt",
                       default=StudyParams.spde_dt),
        snapshots=_typed(items, "study", "snapshots",
                         default=StudyParams.snapshots),
        m_max=_typed(items, "study", "m_max", default=StudyParams.m_max),
        tree_samples=_typed(items, "study", "tree_samples",
                            default=StudyParams.tree_samples),
        solver_dt=_typed(items, "study", "solver_dt",
                         default=StudyParams.solver_dt),
        tol=_typed(items, "study", "tol", default=StudyParams.tol),
    )
    for name, lo in (("dsmc_particles", 2), ("spde_replicas", 2),
                     ("snapshots", 2), ("m_max", 0), ("tree_samples", 1)):
        if getattr(study, name) < lo:
            raise ConfigError(f"{name} must be at least {lo}",
                              items.get(("study", name), (None, None))[1])
    if study.spde_dt <= 0 or study.solver_dt <= 0 or study.tol <= 0:
        raise ConfigError("study step sizes and tol must be positive")

    return RunConfig(
        d=d, horizon=horizon, epsilon=eps, mu=mu, given=given,
        profile_kind=kind, beta=beta, shift=shift, replicas=replicas,
        base_seed=base_seed, family_kind=family_kind, max_vdeg=max_vdeg,
        x_modes=x_modes, grid_m=grid_m, grid_vmax=grid_vmax,
        design_q=design_q, experiment=experiment, out=out, study=study)


def serialize_config(cfg: RunConfig) -> str:
    lines = ["[scaling]", f"d = {cfg.d}"]
    if cfg.given == "epsilon":
        lines.append(f"epsilon = {cfg.epsilon!r}")
    else:
        lines.append(f"mu = {cfg.mu!r}")
    lines += [
        f"horizon = {cfg.horizon!r}",
        "",
        "[profile]",
        f"kind = {cfg.profile_kind}",
        f"beta = {cfg.beta!r}",
        f"shift = {cfg.shift!r}",
        "",
        "[ensemble]",
        f"replicas = {cfg.replicas}",
        f"base_seed = {cfg.base_seed}",
        "",
        "[family]",
        f"kind = {cfg.family_kind}",
        f"max_vdeg = {cfg.max_vdeg}",
        f"x_modes = {cfg.x_modes}",
        "",
        "[grid]",
        f"m = {cfg.grid_m}",
        f"vmax = {cfg.grid_vmax!r}",
        f"design = {cfg.design_q}",
        "",
        "[run]",
    ]
    if cfg.experiment is not None:
        lines.append(f"experiment = {cfg.experiment}")
    lines.append(f"out = {cfg.out}")
    s = cfg.study
    lines += [
        "",
        "[study]",
        f"dsmc_particles = {s.dsmc_particles}",
        f"spde_replicas = {s.spde_replicas}",
        f"spde_dt = {s.spde_dt!r}",
        f"snapshots = {s.snapshots}",
        f"m_max = {s.m_max}",
        f"tree_samples = {s.tree_samples}",
        f"solver_dt = {s.solver_dt!r}",
        f"tol = {s.tol!r}",
        "",
    ]
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
