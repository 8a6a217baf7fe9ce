"""Experiment configuration: JSON parsing, validation and object builders.

A config is a JSON object with a ``model`` section and optional
``simulate``, ``ocp``, ``turnpike``, ``mpc``, ``verify`` and ``output``
sections.  Parsing fills in every default, so the effective config written
by ``--dump-effective-config`` re-parses to the same value.  The layout is
published as ``examples/config.schema.json`` inside the package.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .core import GasPistonParams, HeatExchangerParams, ModelSpec, make_gas_piston, make_heat_exchanger
from .errors import ParseError, ValidationError
from .ivp import ControlSignal
from .mpc import MpcConfig
from .ocp import COST_FORMS, OcpSpec, SolverOptions

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "bundled_config",
    "build_model",
    "build_ocp",
    "build_mpc",
    "build_solver_options",
    "build_simulation",
    "check_subcommand",
    "model_dims",
]

DEFAULT_SEED = 42
SECTIONS = ("model", "simulate", "ocp", "turnpike", "mpc", "verify", "output")
GAS_PISTON_KEYS = ("n_mol", "gas_constant", "s_ref", "t_ref", "p_ref", "mass", "g_acc", "area", "kappa", "t0")
SOLVER_KEYS = {
    "g_tol": 1e-6,
    "f_tol": 1e-10,
    "f_window": 5,
    "max_iter": 5000,
    "memory": 10,
    "restart_on_active_change": False,
    "multistart": False,
    "n_starts": 5,
    "perturbation": 0.1,
    "seed": DEFAULT_SEED,
}
DEFAULTS = {
    "simulate": {"x0": None, "t_end": 10.0, "h": 0.1, "u": None, "method": "rk45", "tol": 1e-8, "substeps": 1},
    "ocp": {
        "T": None,
        "h": 0.1,
        "alpha": [1.0, 1.0, 1.0],
        "c_mat": None,
        "y_ref": None,
        "u_lo": None,
        "u_hi": None,
        "x0": None,
        "cost_form": "reformulated",
        "solver": SOLVER_KEYS,
    },
    "turnpike": {"n_starts": 8, "seed": DEFAULT_SEED},
    "mpc": {"delta": 0.1, "n_iterations": 400, "warm_start": True, "settle_window": 5.0, "settle_tol": 1e-3},
    "verify": {"p": 1.0, "radii": [1.0, 2.0, 5.0, 10.0, 20.0], "samples": 200, "seed": DEFAULT_SEED,
               "directions": 32, "probe_radii": [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]},
    "output": {"directory": None, "emit_svg": True},
}
MODEL_DEFAULTS = {
    "heat_exchanger": {"kind": None, "lambda": None, "t_ref": 1.0, "t0": 1.0},
    "gas_piston": {"kind": None, "params": {k: (0.0 if k == "s_ref" else 1.0) for k in GAS_PISTON_KEYS},
                   "include_potential": True},
}
REQUIRED = {
    "simulate": ("x0",),
    "ocp": ("T", "c_mat", "y_ref", "u_lo", "u_hi", "x0"),
}
SUBCOMMAND_SECTIONS = {
    "simulate": ("simulate",),
    "ocp": ("ocp",),
    "turnpike": ("ocp",),
    "mpc": ("ocp", "mpc"),
    "verify": (),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully defaulted config; ``data`` is plain JSON data."""

    data: dict
    source: Optional[str] = None

    def section(self, name):
        return self.data.get(name)

    def has(self, name) -> bool:
        return name in self.data

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override every section seed."""
        data = self.to_dict()
        for name in ("turnpike", "verify"):
            if name in data:
                data[name]["seed"] = int(seed)
        if "ocp" in data:
            data["ocp"]["solver"]["seed"] = int(seed)
        return ExperimentConfig(data, self.source)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data

    __hash__ = None


# --------------------------------------------------------------------------
# parsing


def _merge(name, given, defaults, problems):
    """Reject unknown keys and fill missing ones with defaults."""
    if not isinstance(given, dict):
        problems.append(f"{name}: expected an object")
        return copy.deepcopy(defaults)
    out = {}
    for key in given:
        if key not in defaults:
            problems.append(f"{name}: unknown key '{key}'")
    for key, default in defaults.items():
        if key in given:
            value = given[key]
            if isinstance(default, dict):
                value = _merge(f"{name}.{key}", value, default, problems)
            out[key] = value
        else:
            out[key] = copy.deepcopy(default)
    return out


def _matrix(value):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        return None
    return arr


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_model(model, problems):
    kind = model.get("kind")
    if kind == "heat_exchanger":
        lam = _matrix(model["lambda"])
        if lam is None or lam.ndim != 2 or lam.shape[0] != lam.shape[1] or lam.shape[0] == 0:
            problems.append("model.lambda: must be a nonempty square matrix")
            return None
        if not np.all(np.isfinite(lam)):
            problems.append("model.lambda: entries must be finite")
        if np.any(np.diag(lam) != 0):
            problems.append("model.lambda: diagonal must be zero")
        if not np.array_equal(lam, lam.T):
            problems.append("model.lambda: must be symmetric")
        if np.any(lam < 0):
            problems.append("model.lambda: entries must be nonnegative")
        for key in ("t_ref", "t0"):
            if not (_number(model[key]) and model[key] > 0):
                problems.append(f"model.{key}: must be a positive number")
        return lam.shape[0], lam.shape[0]
    if kind == "gas_piston":
        for key, v in model["params"].items():
            if not _number(v) or (key != "s_ref" and not v > 0):
                problems.append(f"model.params.{key}: must be a {'finite' if key == 's_ref' else 'positive'} number")
        if not isinstance(model["include_potential"], bool):
            problems.append("model.include_potential: must be true or false")
        return 3, 1
    problems.append("model.kind: must be 'heat_exchanger' or 'gas_piston'")
    return None


def _vector(name, value, length, problems, finite=True):
    arr = _matrix(value)
    if arr is None or arr.ndim != 1 or (length is not None and arr.shape[0] != length):
        problems.append(f"{name}: expected a list of {length} numbers")
        return None
    if finite and not np.all(np.isfinite(arr)):
        problems.append(f"{name}: entries must be finite")
    return arr


def _bounds(name, value, m, problems):
    """Bounds may be a scalar, a list, or contain null for an infinite bound."""
    if _number(value):
        return np.full(m, float(value))
    if isinstance(value, list) and len(value) == m:
        out = []
        for v in value:
            if v is None:
                out.append(math.inf if name.endswith("u_hi") else -math.inf)
            elif _number(v):
                out.append(float(v))
            else:
                problems.append(f"{name}: entries must be numbers or null")
                return None
        return np.array(out)
    problems.append(f"{name}: expected a number or a list of {m} numbers")
    return None


def _check_grid(name, T, h, problems):
    if not (_number(T) and T > 0 and _number(h) and h > 0):
        problems.append(f"{name}: horizon and step must be positive numbers")
        return
    r = T / h
    if abs(r - round(r)) > 1e-9 * max(1.0, r):
        problems.append(f"{name}: horizon must be an integer multiple of h")


def _check_simulate(sim, dims, problems):
    n, m = dims
    _vector("simulate.x0", sim["x0"], n, problems)
    _check_grid("simulate", sim["t_end"], sim["h"], problems)
    if sim["u"] is not None:
        arr = _matrix(sim["u"])
        if arr is None or not (arr.shape == (m,) or (arr.ndim == 2 and arr.shape[1] == m)):
            problems.append(f"simulate.u: expected {m} numbers or a K x {m} matrix")
        elif not np.all(np.isfinite(arr)):
            problems.append("simulate.u: entries must be finite")
        elif arr.ndim == 2 and _number(sim["t_end"]) and _number(sim["h"]) and sim["h"] > 0:
            if arr.shape[0] < round(sim["t_end"] / sim["h"]):
                problems.append("simulate.u: fewer rows than t_end / h")
    if sim["method"] not in ("euler", "rk4", "rk45"):
        problems.append("simulate.method: must be 'euler', 'rk4' or 'rk45'")
    if not (_number(sim["tol"]) and sim["tol"] > 0):
        problems.append("simulate.tol: must be positive")
    if not (isinstance(sim["substeps"], int) and sim["substeps"] >= 1):
        problems.append("simulate.substeps: must be a positive integer")


def _check_ocp(ocp, dims, problems):
    n, m = dims
    _check_grid("ocp", ocp["T"], ocp["h"], problems)
    alpha = _vector("ocp.alpha", ocp["alpha"], 3, problems)
    if alpha is not None and np.any(alpha < 0):
        problems.append("ocp.alpha: weights must be nonnegative")
    c_mat = _matrix(ocp["c_mat"])
    p = None
    if c_mat is None or c_mat.ndim != 2 or c_mat.shape[1] != n:
        problems.append(f"ocp.c_mat: expected a p x {n} matrix")
    else:
        p = c_mat.shape[0]
    _vector("ocp.y_ref", ocp["y_ref"], p, problems)
    _vector("ocp.x0", ocp["x0"], n, problems)
    lo = _bounds("ocp.u_lo", ocp["u_lo"], m, problems)
    hi = _bounds("ocp.u_hi", ocp["u_hi"], m, problems)
    if lo is not None and hi is not None:
        if np.any(lo > hi):
            problems.append("ocp.u_lo: must not exceed ocp.u_hi")
        free = lo < hi
        if np.any(~np.isfinite(lo[free])) or np.any(~np.isfinite(hi[free])):
            problems.append("ocp.u_lo/u_hi: free channels need finite bounds")
    if ocp["cost_form"] not in COST_FORMS:
        problems.append(f"ocp.cost_form: must be one of {list(COST_FORMS)}")
    s = ocp["solver"]
    for key in ("g_tol", "f_tol", "perturbation"):
        if not (_number(s[key]) and s[key] >= 0):
            problems.append(f"ocp.solver.{key}: must be a nonnegative number")
    for key in ("f_window", "max_iter", "memory", "n_starts", "seed"):
        if not (isinstance(s[key], int) and not isinstance(s[key], bool) and s[key] >= 0):
            problems.append(f"ocp.solver.{key}: must be a nonnegative integer")
    for key in ("restart_on_active_change", "multistart"):
        if not isinstance(s[key], bool):
            problems.append(f"ocp.solver.{key}: must be true or false")


def _check_mpc(mpc, ocp, problems):
    d = mpc["delta"]
    if not (_number(d) and d > 0):
        problems.append("mpc.delta: must be positive")
    elif ocp is not None and _number(ocp["h"]) and ocp["h"] > 0:
        r = d / ocp["h"]
        if abs(r - round(r)) > 1e-9 * max(1.0, r):
            problems.append("mpc.delta: must be an integer multiple of ocp.h")
        if _number(ocp["T"]) and d > ocp["T"]:
            problems.append("mpc.delta: must not exceed ocp.T")
    if not (isinstance(mpc["n_iterations"], int) and not isinstance(mpc["n_iterations"], bool)
            and mpc["n_iterations"] >= 0):
        problems.append("mpc.n_iterations: must be a nonnegative integer")
    if not isinstance(mpc["warm_start"], bool):
        problems.append("mpc.warm_start: must be true or false")
    if not (_number(mpc["settle_window"]) and mpc["settle_window"] > 0):
        problems.append("mpc.settle_window: must be positive")
    if not (_number(mpc["settle_tol"]) and mpc["settle_tol"] >= 0):
        problems.append("mpc.settle_tol: must be nonnegative")


def _check_radii(name, radii, problems):
    arr = _matrix(radii)
    if arr is None or arr.ndim != 1 or arr.size == 0 or np.any(~(arr > 0)) or np.any(np.diff(arr) <= 0):
        problems.append(f"{name}: must be positive and strictly increasing")


def _check_verify(v, problems):
    if not (_number(v["p"]) and v["p"] >= 1):
        problems.append("verify.p: must be a number >= 1")
    _check_radii("verify.radii", v["radii"], problems)
    _check_radii("verify.probe_radii", v["probe_radii"], problems)
    for key in ("samples", "directions"):
        if not (isinstance(v[key], int) and not isinstance(v[key], bool) and v[key] >= 1):
            problems.append(f"verify.{key}: must be a positive integer")
    if not (isinstance(v["seed"], int) and not isinstance(v["seed"], bool)):
        problems.append("verify.seed: must be an integer")


def _normalise(raw) -> dict:
    problems = []
    if not isinstance(raw, dict):
        raise ValidationError(["top level: expected an object"])
    for key in raw:
        if key not in SECTIONS:
            problems.append(f"top level: unknown key '{key}'")
    if "model" not in raw:
        problems.append("model: section is required")
        raise ValidationError(problems)

    model_raw = raw["model"]
    kind = model_raw.get("kind") if isinstance(model_raw, dict) else None
    if kind not in MODEL_DEFAULTS:
        problems.append("model.kind: must be 'heat_exchanger' or 'gas_piston'")
        raise ValidationError(problems)
    data = {"model": _merge("model", model_raw, MODEL_DEFAULTS[kind], problems)}
    data["model"]["kind"] = kind
    if kind == "heat_exchanger" and "lambda" not in model_raw:
        problems.append("model.lambda: required for heat_exchanger")
    dims = _check_model(data["model"], problems)

    complete = set()
    for name in SECTIONS[1:]:
        if name in raw or name == "output":
            data[name] = _merge(name, raw.get(name, {}), DEFAULTS[name], problems)
            missing = [key for key in REQUIRED.get(name, ()) if data[name][key] is None]
            problems.extend(f"{name}.{key}: required" for key in missing)
            if not missing:
                complete.add(name)
    # value checks need the model dimensions and every required key
    if dims is not None:
        if "simulate" in complete:
            _check_simulate(data["simulate"], dims, problems)
        if "ocp" in complete:
            _check_ocp(data["ocp"], dims, problems)
    if "mpc" in data:
        if "ocp" not in data:
            problems.append("mpc: requires an ocp section")
        _check_mpc(data["mpc"], data["ocp"] if "ocp" in complete else None, problems)
    if "turnpike" in data:
        tp = data["turnpike"]
        if not (isinstance(tp["n_starts"], int) and not isinstance(tp["n_starts"], bool) and tp["n_starts"] >= 1):
            problems.append("turnpike.n_starts: must be a positive integer")
        if not (isinstance(tp["seed"], int) and not isinstance(tp["seed"], bool)):
            problems.append("turnpike.seed: must be an integer")
    if "verify" in data:
        _check_verify(data["verify"], problems)
    out = data["output"]
    if out["directory"] is not None and not isinstance(out["directory"], str):
        problems.append("output.directory: must be a string or null")
    if not isinstance(out["emit_svg"], bool):
        problems.append("output.emit_svg: must be true or false")
    if problems:
        raise ValidationError(problems)
    # plain JSON data only, so dumps re-parse to an equal value
    return json.loads(json.dumps(data))


def parse_config_text(text: str, source: Optional[str] = None) -> ExperimentConfig:
    where = source or "<config>"
    if not text.strip():
        raise ParseError(f"{where}: empty config")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return ExperimentConfig(_normalise(raw), source)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``fig4``, ``fig5a`` ...)."""
    fname = name if name.endswith(".json") else f"{name}.json"
    return Path(str(resources.files("riphs") / "examples" / fname))


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file.

    A bare name such as ``fig4`` that is not an existing file resolves to
    the bundled config of that name.
    """
    p = Path(path)
    if not p.exists():
        alt = bundled_config(str(path))
        if alt.exists() and not p.suffix:
            p = alt
        else:
            raise ParseError(f"{path}: no such file")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_config_text(text, str(path))


# --------------------------------------------------------------------------
# builders


def build_model(cfg: ExperimentConfig) -> ModelSpec:
    m = cfg.data["model"]
    if m["kind"] == "heat_exchanger":
        return make_heat_exchanger(HeatExchangerParams(np.array(m["lambda"], dtype=float), m["t_ref"], m["t0"]))
    return make_gas_piston(GasPistonParams(**m["params"]), include_potential=m["include_potential"])


def build_solver_options(cfg: ExperimentConfig) -> SolverOptions:
    return SolverOptions(**cfg.data["ocp"]["solver"])


def build_ocp(cfg: ExperimentConfig, model: Optional[ModelSpec] = None) -> OcpSpec:
    o = cfg.data["ocp"]
    model = model or build_model(cfg)
    problems = []
    lo = _bounds("ocp.u_lo", o["u_lo"], model.m, problems)
    hi = _bounds("ocp.u_hi", o["u_hi"], model.m, problems)
    return OcpSpec(model, o["T"], o["h"], tuple(o["alpha"]), np.array(o["c_mat"], dtype=float),
                   np.array(o["y_ref"], dtype=float), lo, hi, np.array(o["x0"], dtype=float), o["cost_form"])


def build_mpc(cfg: ExperimentConfig, model: Optional[ModelSpec] = None) -> MpcConfig:
    m = cfg.data["mpc"]
    return MpcConfig(m["delta"], build_ocp(cfg, model), m["n_iterations"], m["warm_start"],
                     build_solver_options(cfg))


def build_simulation(cfg: ExperimentConfig, model: Optional[ModelSpec] = None):
    """``(x0, ControlSignal, method, tol, substeps)`` from the simulate section."""
    s = cfg.data["simulate"]
    model = model or build_model(cfg)
    K = int(round(s["t_end"] / s["h"]))
    if s["u"] is None:
        values = np.zeros((K, model.m))
    else:
        arr = np.asarray(s["u"], dtype=float)
        values = np.broadcast_to(arr, (K, model.m)).copy() if arr.ndim == 1 else arr[:K]
    return np.array(s["x0"], dtype=float), ControlSignal(values, s["h"]), s["method"], s["tol"], s["substeps"]


def check_subcommand(cfg: ExperimentConfig, subcommand: str) -> None:
    missing = [name for name in SUBCOMMAND_SECTIONS[subcommand] if not cfg.has(name)]
    if missing:
        raise ValidationError([f"{name}: section required by '{subcommand}'" for name in missing])


def model_dims(cfg: ExperimentConfig) -> tuple:
    m = cfg.data["model"]
    if m["kind"] == "heat_exchanger":
        n = len(m["lambda"])
        return n, n
    return 3, 1

