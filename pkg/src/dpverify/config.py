"""Experiment configuration: JSON schema with defaults, field-level
validation, dotted-path overrides, and object builders.

A configuration file is a single JSON object with sections ``system``,
``network``, ``inputs``, ``mechanisms``, ``test``, ``sweep``, ``bench`` and a
top-level ``seed``.  Everything except the mechanism list has defaults; all
validation errors carry the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .mechanisms import (OscillatorSystem, SensorNetwork,
                         TruncatedGaussianMixture, adjacent_sensor_pair,
                         certified_rotation, make_dp_ekf,
                         make_input_perturbation, make_laplace_reference,
                         make_network, make_surrogate_mhe, simulate_target,
                         GaussianReference)
from .sampling import substream
from .testkit import TestConfig

__all__ = [
    "ConfigError",
    "read_config",
    "apply_overrides",
    "build_inputs",
    "build_mechanism",
    "build_network",
    "build_system",
    "build_test_config",
    "load_config",
    "normalize_config",
]

# Stream ids hung off the root seed; the test pipeline itself uses 0-3.
STREAM_TARGET = 10
STREAM_OBSERVATION = 11

_MIXTURE_DEFAULTS = {"offset": 0.01, "std": 0.02, "bound": 0.05}

DEFAULTS = {
    "seed": 0,
    "system": {
        "dt": 0.1,
        "horizon": 8,
        "window": 5,
        "process_noise": 0.001,
        "initial_mean": [5.0, 0.0, 0.0, 2.5],
        "noise": dict(_MIXTURE_DEFAULTS),
    },
    "network": {
        "setup": "Q1",
        "sensors": 10,
        "noise": dict(_MIXTURE_DEFAULTS),
    },
    "inputs": {
        "mode": "sensor_pair",
        "sensor_index": 0,
        "rotation": None,
        "y1": None,
        "y2": None,
    },
    "test": {
        "epsilon": 1.0,
        "delta": 10.0,
        "alpha": 0.05,
        "beta": 0.05,
        "gamma": 1e-9,
        "r": 2,
        "n": 10_000,
        "thinning_replicates": 1,
    },
    "sweep": {
        "epsilon_min": 0.1,
        "epsilon_max": 2.5,
        "points": 9,
    },
    "bench": {
        "setups": None,
        "error_runs": 500,
    },
}

_MECHANISM_FIELDS = {
    "surrogate_mhe": {"required": ["s"],
                      "optional": ["noise_halfwidth", "label"]},
    "input_perturbation": {"required": ["s_bar"],
                           "optional": ["matrix_seed", "label"]},
    "dp_ekf": {"required": ["s_hat"], "optional": ["label"]},
    "laplace": {"required": ["sensitivity", "scale"],
                "optional": ["dim", "steps", "label"]},
    "gaussian": {"required": ["std"],
                 "optional": ["mean", "steps", "label"]},
}

TRACKING_KINDS = ("surrogate_mhe", "input_perturbation", "dp_ekf")


class ConfigError(ValueError):
    """Configuration problem; ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def read_config(path) -> dict:
    """Read a JSON config file without validating it."""
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}")


def load_config(path) -> dict:
    """Read, merge with defaults, and validate a JSON config file."""
    return normalize_config(read_config(path))


def normalize_config(raw: dict) -> dict:
    """Merge a raw dict with defaults and validate every field."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    cfg = _merge(DEFAULTS, raw, path="")
    _validate(cfg)
    return cfg


def _merge(defaults, raw, path):
    merged = copy.deepcopy(defaults)
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if key == "mechanisms":
            merged[key] = copy.deepcopy(value)
            continue
        if key not in merged:
            raise ConfigError(where, "unknown field")
        if isinstance(merged.get(key), dict) and isinstance(value, dict):
            merged[key] = _merge(merged[key], value, where)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _require_number(value, section, key, lo=None, hi=None, integer=False,
                    strict_lo=False):
    path = f"{section}.{key}" if section else key
    try:
        if value is None:
            raise TypeError
        if integer:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            value = int(value)
        else:
            value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if lo is not None and (value <= lo if strict_lo else value < lo):
        raise ConfigError(path, f"must be {'>' if strict_lo else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(path, f"must be <= {hi}, got {value}")
    return value


def _validate_mixture(noise, path):
    if not isinstance(noise, dict):
        raise ConfigError(path, "expected an object")
    for key in noise:
        if key not in _MIXTURE_DEFAULTS:
            raise ConfigError(f"{path}.{key}", "unknown field")
    offset = _require_number(noise.get("offset"), path, "offset", lo=0.0)
    std = _require_number(noise.get("std"), path, "std", lo=0.0, strict_lo=True)
    bound = _require_number(noise.get("bound"), path, "bound", lo=0.0,
                            strict_lo=True)
    if offset >= bound:
        raise ConfigError(f"{path}.offset", "must be smaller than bound")
    noise.update(offset=offset, std=std, bound=bound)


def _validate(cfg):
    cfg["seed"] = _require_number(cfg.get("seed"), "", "seed", integer=True)

    sys_cfg = cfg["system"]
    sys_cfg["dt"] = _require_number(sys_cfg.get("dt"), "system", "dt", lo=0.0,
                                    strict_lo=True)
    sys_cfg["horizon"] = _require_number(sys_cfg.get("horizon"), "system",
                                         "horizon", lo=1, integer=True)
    sys_cfg["window"] = _require_number(sys_cfg.get("window"), "system",
                                        "window", lo=1, integer=True)
    if sys_cfg["window"] > sys_cfg["horizon"]:
        raise ConfigError("system.window", "must not exceed system.horizon")
    sys_cfg["process_noise"] = _require_number(
        sys_cfg.get("process_noise"), "system", "process_noise", lo=0.0)
    mean = sys_cfg.get("initial_mean")
    if not isinstance(mean, (list, tuple)) or len(mean) != 4:
        raise ConfigError("system.initial_mean", "expected 4 numbers")
    sys_cfg["initial_mean"] = [float(v) for v in mean]
    _validate_mixture(sys_cfg["noise"], "system.noise")

    net_cfg = cfg["network"]
    if net_cfg.get("setup") not in ("Q1", "Q2", "Q3"):
        raise ConfigError("network.setup",
                          f"expected Q1, Q2 or Q3, got {net_cfg.get('setup')!r}")
    net_cfg["sensors"] = _require_number(net_cfg.get("sensors"), "network",
                                         "sensors", lo=1, integer=True)
    _validate_mixture(net_cfg["noise"], "network.noise")

    inp = cfg["inputs"]
    if inp.get("mode") not in ("sensor_pair", "explicit"):
        raise ConfigError("inputs.mode",
                          f"expected sensor_pair or explicit, got {inp.get('mode')!r}")
    if inp["mode"] == "sensor_pair":
        inp["sensor_index"] = _require_number(
            inp.get("sensor_index"), "inputs", "sensor_index", lo=0,
            integer=True)
        if inp["sensor_index"] >= net_cfg["sensors"]:
            raise ConfigError("inputs.sensor_index", "no such sensor")
        rotation = inp.get("rotation")
        if rotation is not None and rotation != "certified":
            inp["rotation"] = _require_number(rotation, "inputs", "rotation")
    else:
        for key in ("y1", "y2"):
            if inp.get(key) is None:
                raise ConfigError(f"inputs.{key}",
                                  "missing required field (explicit mode)")
            try:
                inp[key] = np.asarray(inp[key], dtype=float).tolist()
            except (TypeError, ValueError):
                raise ConfigError(f"inputs.{key}", "expected a numeric array")

    mechs = cfg.get("mechanisms")
    if not isinstance(mechs, list) or not mechs:
        raise ConfigError("mechanisms", "missing required field (nonempty list)")
    for i, entry in enumerate(mechs):
        where = f"mechanisms[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(where, "expected an object")
        kind = entry.get("kind")
        if kind is None:
            raise ConfigError(f"{where}.kind", "missing required field")
        if kind not in _MECHANISM_FIELDS:
            raise ConfigError(f"{where}.kind",
                              f"unknown mechanism kind {kind!r}")
        spec = _MECHANISM_FIELDS[kind]
        for key in entry:
            if key != "kind" and key not in spec["required"] + spec["optional"]:
                raise ConfigError(f"{where}.{key}", "unknown field")
        for key in spec["required"]:
            if key not in entry:
                raise ConfigError(f"{where}.{key}", "missing required field")
        _validate_mechanism_params(entry, where)

    test = cfg["test"]
    test["epsilon"] = _require_number(test.get("epsilon"), "test", "epsilon",
                                      lo=0.0)
    test["delta"] = _require_number(test.get("delta"), "test", "delta", lo=0.0,
                                    strict_lo=True)
    for key in ("alpha", "beta"):
        v = _require_number(test.get(key), "test", key, lo=0.0, hi=1.0,
                            strict_lo=True)
        if v >= 1.0:
            raise ConfigError(f"test.{key}", "must be below 1")
        test[key] = v
    gamma = _require_number(test.get("gamma"), "test", "gamma", lo=0.0,
                            strict_lo=True)
    if gamma >= 1.0:
        raise ConfigError("test.gamma", "must be below 1")
    test["gamma"] = gamma
    test["r"] = _require_number(test.get("r"), "test", "r", lo=1, integer=True)
    test["n"] = _require_number(test.get("n"), "test", "n", lo=1, integer=True)
    test["thinning_replicates"] = _require_number(
        test.get("thinning_replicates"), "test", "thinning_replicates", lo=1,
        integer=True)

    sweep = cfg["sweep"]
    sweep["epsilon_min"] = _require_number(sweep.get("epsilon_min"), "sweep",
                                           "epsilon_min", lo=0.0)
    sweep["epsilon_max"] = _require_number(sweep.get("epsilon_max"), "sweep",
                                           "epsilon_max", lo=0.0)
    if sweep["epsilon_max"] <= sweep["epsilon_min"]:
        raise ConfigError("sweep.epsilon_max", "must exceed sweep.epsilon_min")
    sweep["points"] = _require_number(sweep.get("points"), "sweep", "points",
                                      lo=2, integer=True)

    bench = cfg["bench"]
    setups = bench.get("setups")
    if setups is None:
        bench["setups"] = [net_cfg["setup"]]
    else:
        if not isinstance(setups, list) or not setups:
            raise ConfigError("bench.setups", "expected a nonempty list")
        for s in setups:
            if s not in ("Q1", "Q2", "Q3"):
                raise ConfigError("bench.setups", f"unknown setup {s!r}")
    bench["error_runs"] = _require_number(bench.get("error_runs"), "bench",
                                          "error_runs", lo=1, integer=True)


def _validate_mechanism_params(entry, where):
    kind = entry["kind"]
    if kind == "surrogate_mhe":
        entry["s"] = _require_number(entry.get("s"), where, "s", lo=0.0, hi=1.0)
        if "noise_halfwidth" in entry:
            entry["noise_halfwidth"] = _require_number(
                entry["noise_halfwidth"], where, "noise_halfwidth", lo=0.0,
                strict_lo=True)
    elif kind == "input_perturbation":
        entry["s_bar"] = _require_number(entry.get("s_bar"), where, "s_bar",
                                         lo=0.0, hi=1.0)
        if "matrix_seed" in entry:
            entry["matrix_seed"] = _require_number(entry["matrix_seed"], where,
                                                   "matrix_seed", integer=True)
    elif kind == "dp_ekf":
        s_hat = _require_number(entry.get("s_hat"), where, "s_hat", lo=0.0,
                                hi=1.0, strict_lo=True)
        entry["s_hat"] = s_hat
    elif kind == "laplace":
        for key in ("sensitivity", "scale"):
            entry[key] = _require_number(entry.get(key), where, key, lo=0.0,
                                         strict_lo=True)
        for key in ("dim", "steps"):
            if key in entry:
                entry[key] = _require_number(entry[key], where, key, lo=1,
                                             integer=True)
    elif kind == "gaussian":
        entry["std"] = _require_number(entry.get("std"), where, "std", lo=0.0,
                                       strict_lo=True)
        if "steps" in entry:
            entry["steps"] = _require_number(entry["steps"], where, "steps",
                                             lo=1, integer=True)
        if "mean" in entry and not isinstance(entry["mean"], (list, tuple)):
            raise ConfigError(f"{where}.mean", "expected a numeric array")


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``section.key=value`` strings onto a raw config dict."""
    out = copy.deepcopy(cfg)
    for item in assignments or []:
        if "=" not in item:
            raise ConfigError("override", f"expected path=value, got {item!r}")
        path, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        keys = path.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(path, "path does not address an object")
        node[keys[-1]] = value
    return out


def mechanism_label(entry: dict) -> str:
    if entry.get("label"):
        return str(entry["label"])
    kind = entry["kind"]
    if kind == "surrogate_mhe":
        return f"surrogate_mhe(s={entry['s']:g})"
    if kind == "input_perturbation":
        return f"input_perturbation(s_bar={entry['s_bar']:g})"
    if kind == "dp_ekf":
        return f"dp_ekf(s_hat={entry['s_hat']:g})"
    if kind == "laplace":
        return f"laplace(b={entry['scale']:g})"
    return f"gaussian(std={entry['std']:g})"


def build_system(cfg: dict) -> OscillatorSystem:
    sc = cfg["system"]
    return OscillatorSystem(
        dt=sc["dt"], horizon=sc["horizon"], process_noise=sc["process_noise"],
        initial_mean=tuple(sc["initial_mean"]),
        initial_noise=TruncatedGaussianMixture(**sc["noise"]))


def build_network(cfg: dict, setup: str | None = None) -> SensorNetwork:
    nc = cfg["network"]
    return make_network(setup or nc["setup"], n_sensors=nc["sensors"],
                        noise_model=TruncatedGaussianMixture(**nc["noise"]))


def build_mechanism(entry: dict, system: OscillatorSystem,
                    network: SensorNetwork, window: int):
    kind = entry["kind"]
    if kind == "surrogate_mhe":
        return make_surrogate_mhe(
            system, network, window=window, entropy_factor=entry["s"],
            noise_halfwidth=entry.get("noise_halfwidth", 8.0))
    if kind == "input_perturbation":
        base = make_surrogate_mhe(system, network, window=window,
                                  entropy_factor=1.0)
        return make_input_perturbation(base, entry["s_bar"],
                                       matrix_seed=entry.get("matrix_seed", 0))
    if kind == "dp_ekf":
        return make_dp_ekf(system, network, s_hat=entry["s_hat"])
    if kind == "laplace":
        return make_laplace_reference(entry["sensitivity"], entry["scale"],
                                      dim=entry.get("dim", 1),
                                      steps=entry.get("steps", 1))
    if kind == "gaussian":
        return GaussianReference(mean=tuple(entry.get("mean", (0.0,))),
                                 std=entry["std"], steps=entry.get("steps", 1))
    raise ConfigError("mechanisms.kind", f"unknown mechanism kind {kind!r}")


def build_inputs(cfg: dict, system: OscillatorSystem, network: SensorNetwork):
    """Input pair (y1, y2) plus the true target states when they exist."""
    inp = cfg["inputs"]
    if inp["mode"] == "explicit":
        return (np.asarray(inp["y1"], dtype=float),
                np.asarray(inp["y2"], dtype=float), None)
    seed = cfg["seed"]
    truth = simulate_target(system, system.horizon,
                            substream(seed, STREAM_TARGET))
    rotation = inp["rotation"]
    if rotation == "certified":
        rotation = certified_rotation(network, cfg["test"]["delta"],
                                      system.horizon)
    y1, y2 = adjacent_sensor_pair(network, inp["sensor_index"],
                                  cfg["test"]["delta"], truth,
                                  substream(seed, STREAM_OBSERVATION),
                                  rotation=rotation)
    return y1, y2, truth


def build_test_config(cfg: dict, epsilon: float | None = None) -> TestConfig:
    t = cfg["test"]
    return TestConfig(
        epsilon=t["epsilon"] if epsilon is None else float(epsilon),
        delta=t["delta"], alpha=t["alpha"], beta=t["beta"], gamma=t["gamma"],
        r=t["r"], n=t["n"], seed=cfg["seed"],
        thinning_replicates=t["thinning_replicates"])
