"""Scenario files: flat `key = value` text with dotted namespaces.

The format is deliberately dependency-free and diff-friendly.  Parsing is
strict: unknown keys, bad types and a missing seed are configuration errors;
every referenced file must exist at parse time.  A calibration result file,
when given, overrides the volatility and price coefficients and is inlined by
normalization, so parse -> serialize -> parse is the identity on the
normalized form.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

from .calibration import read_result
from .dynamics import ModelParams
from .errors import ConfigError
from .lattice import GridSpec
from .riccati import MODES

_MODEL_FLOAT_KEYS = {
    "model.A": "A", "model.C": "C", "model.K": "K",
    "model.p0": "p0", "model.p1": "p1", "model.f0": "f0", "model.f1": "f1",
    "model.h0": "h0", "model.h1": "h1", "model.h2": "h2",
    "model.alpha_bar": "alpha_bar", "model.theta": "theta", "model.pi": "pi",
    "model.mu": "mu", "model.mu_st": "mu_st",
    "model.sigma": "sigma", "model.sigma0": "sigma0", "model.sigma_st": "sigma_st",
    "model.lambda0": "lambda0", "model.lambda": "lam",
    "model.T": "T", "model.q0": "q0", "model.q0_st": "q0_st",
}

# The bundled defaults describe the reference demand-side-management
# experiment in its native time unit, days: a two-day horizon in 96 half-hour
# steps, two activations per day on average, each lasting three hours.  Time
# units are user-declared metadata: the solver never converts them silently.
REFERENCE_DEFAULTS = {
    "model.A": 150.0, "model.C": 80.0, "model.K": 50.0,
    "model.p0": 6.16, "model.p1": 0.65, "model.f0": 0.0, "model.f1": 10000.0,
    "model.h0": 0.0, "model.h1": 0.0, "model.h2": 100.0,
    "model.alpha_bar": 0.1, "model.theta": 3.0 / 24.0, "model.pi": 0.5,
    "model.mu": 0.0, "model.mu_st": 0.0,
    "model.sigma": 0.56, "model.sigma0": 0.31, "model.sigma_st": 0.31,
    "model.lambda0": 2.0, "model.lambda": 2.0,
    "model.T": 2.0, "model.q0": 0.5, "model.q0_st": 0.5,
    "model.s0": -0.5,
    "grid.n_steps": 96,
    "run.mode": "MFG", "run.agg_double_f": True, "run.b_mode": "exact",
    "run.n_common_paths": 4, "run.n_players": 2, "run.m_inner": 256,
    "run.mc_samples": 1000,
    "output.dir": "out",
}

_INT_KEYS = {"grid.n_steps", "run.n_common_paths", "run.n_players",
             "run.m_inner", "run.mc_samples", "run.seed"}
_BOOL_KEYS = {"run.agg_double_f"}
_STR_KEYS = {"run.mode", "run.b_mode", "output.dir", "calibration.result"}
_ALL_KEYS = (set(_MODEL_FLOAT_KEYS) | {"model.s0"} | _INT_KEYS | _BOOL_KEYS | _STR_KEYS)


@dataclass(frozen=True)
class Scenario:
    params: ModelParams
    n_steps: int
    mode: str
    agg_double_f: bool
    b_mode: str
    n_common_paths: int
    n_players: int
    m_inner: int
    mc_samples: int
    seed: int
    out_dir: str

    def grid(self):
        return GridSpec.from_horizon(self.params.T, self.n_steps, self.params.lambda0)


def _parse_s0(text):
    text = text.strip()
    if ":" not in text:
        return float(text)
    atoms = []
    for part in text.split(","):
        v, _, p = part.partition(":")
        atoms.append((float(v), float(p)))
    return tuple(atoms)


def _format_s0(atoms):
    if len(atoms) == 1:
        return repr(atoms[0][0])
    return ",".join(f"{v!r}:{p!r}" for v, p in atoms)


def _coerce(key, raw):
    try:
        if key in _MODEL_FLOAT_KEYS:
            return float(raw)
        if key == "model.s0":
            return _parse_s0(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_scenario_text(text, base_dir="."):
    values = dict(REFERENCE_DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    if "run.seed" not in values:
        raise ConfigError("run.seed is mandatory (no wall-clock default)")
    if values["run.mode"] not in MODES:
        raise ConfigError(f"run.mode must be one of {MODES}, got {values['run.mode']!r}")
    if values["run.b_mode"] not in ("exact", "mc"):
        raise ConfigError("run.b_mode must be 'exact' or 'mc'")
    cal_path = values.pop("calibration.result", None)
    if cal_path:
        full = Path(base_dir) / cal_path
        if not full.exists():
            raise ConfigError(f"calibration.result file not found: {full}")
        values.update(read_result(full))
    kwargs = {attr: values[key] for key, attr in _MODEL_FLOAT_KEYS.items()}
    kwargs["s0"] = values["model.s0"]
    try:
        params = ModelParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if values["run.seed"] < 0:
        raise ConfigError("run.seed must be nonnegative")
    return Scenario(
        params=params,
        n_steps=values["grid.n_steps"],
        mode=values["run.mode"],
        agg_double_f=values["run.agg_double_f"],
        b_mode=values["run.b_mode"],
        n_common_paths=values["run.n_common_paths"],
        n_players=values["run.n_players"],
        m_inner=values["run.m_inner"],
        mc_samples=values["run.mc_samples"],
        seed=values["run.seed"],
        out_dir=values["output.dir"],
    )


def parse_scenario(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    return parse_scenario_text(path.read_text(), base_dir=path.parent)


def scenario_to_text(s):
    """Canonical normalized form: sorted keys, repr floats, calibration inlined."""
    p = s.params
    values = {key: getattr(p, attr) for key, attr in _MODEL_FLOAT_KEYS.items()}
    lines = [f"{key} = {values[key]!r}" for key in sorted(values)]
    lines.append(f"model.s0 = {_format_s0(p.s0)}")
    lines.append(f"grid.n_steps = {s.n_steps}")
    lines.append(f"output.dir = {s.out_dir}")
    lines.append(f"run.agg_double_f = {'true' if s.agg_double_f else 'false'}")
    lines.append(f"run.b_mode = {s.b_mode}")
    lines.append(f"run.m_inner = {s.m_inner}")
    lines.append(f"run.mc_samples = {s.mc_samples}")
    lines.append(f"run.mode = {s.mode}")
    lines.append(f"run.n_common_paths = {s.n_common_paths}")
    lines.append(f"run.n_players = {s.n_players}")
    lines.append(f"run.seed = {s.seed}")
    return "\n".join(sorted(lines)) + "\n"


def scenario_hash(s):
    return hashlib.sha256(scenario_to_text(s).encode("utf-8")).hexdigest()


def reference_scenario(seed=20240, **overrides):
    """The experiment configuration used throughout: two-day horizon in
    half-hour steps with the published cost, contract and volatility values."""
    s = parse_scenario_text(f"run.seed = {seed}")
    if not overrides:
        return s
    params = s.params
    model_fields = set(_MODEL_FLOAT_KEYS.values()) | {"s0"}
    param_over = {k: v for k, v in overrides.items() if k in model_fields}
    scen_over = {k: v for k, v in overrides.items() if k not in model_fields}
    if param_over:
        base = {attr: getattr(params, attr) for attr in model_fields}
        base.update(param_over)
        scen_over["params"] = ModelParams(**base)
    return replace(s, **scen_over)
