"""Experiment configuration files.

A config is a JSON object validated against :data:`SCHEMA`; unknown keys
anywhere are rejected so that a typo cannot silently fall back to a
default.  Frequencies are given as f = omega / 2 pi in MHz, times in ns.

Example::

    {
      "seed": 1234,
      "readout": {"kappa_mhz": 1.4, "chi_mhz": -0.0525, "delta_mhz": 0.0, "eta": 0.165},
      "envelope": {"family": "square", "ramp_ns": 600, "depletion_ns": [200, 200],
                   "buffer_ns": 100},
      "pipeline": {"n_eps": 13, "shots": 32768, "weights": "optimal",
                   "depletion": "active"},
      "tuneup": {"d": 10, "tau_c_ns": 200},
      "sweep": {"delta_mhz": [-1.4, 0.0, 1.4]},
      "chain": {"csv": "points.csv", "n_sections": 100,
                "fixed": {"insertion_loss_db": 4.2},
                "pump_map": {"ridge": {"peak_db": 21.6, "power_dbm": -71, "freq_ghz": 8.13},
                             "power_dbm": [-74, -68, 25], "freq_ghz": [8.0, 8.25, 26]}}
    }

Relative file paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .cavity_dynamics import DEFAULT_DRIVE_SCALE, NOMINAL_CHI, NOMINAL_KAPPA, TWO_PI, ReadoutParams
from .chain_model import NOMINAL_FREQ
from .depletion_opt import CostConfig
from .errors import InvalidInputError
from .pipeline import PipelineConfig
from .pulses import (PulseEnvelope, load_envelope, envelope_from_dict, passive_envelope,
                     skyline_envelope, square_ramp_envelope, two_step_envelope)

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
# [start, stop, number of points]
_RANGE = {"type": "array", "prefixItems": [_NUM, _NUM, {"type": "integer", "minimum": 1}],
          "minItems": 3, "maxItems": 3}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "readout": _obj({"kappa_mhz": _POS, "chi_mhz": _NUM, "delta_mhz": _NUM,
                     "eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                     "v0": _POS, "drive_scale_mhz": _POS}),
    "envelope": _obj({"family": {"enum": ["square", "two-step", "skyline", "passive"]},
                      "file": {"type": "string"},
                      "inline": {"type": "object"},
                      "ramp_ns": _POS, "depletion_ns": {"type": "array", "items": _POS,
                                                        "minItems": 2, "maxItems": 2},
                      "buffer_ns": {"type": "number", "minimum": 0},
                      "wait_ns": _POS, "sample_period_ns": _POS}),
    "pipeline": _obj({"n_eps": {"type": "integer", "minimum": 5}, "gamma_max": _POS,
                      "eps_max": _POS, "shots": {"type": "integer", "minimum": 1000},
                      "ramsey_phases": {"type": "integer", "minimum": 8},
                      "ramsey_shots": _POS_INT,
                      "weights": {"enum": ["optimal", "square"]},
                      "depletion": {"enum": ["active", "passive"]},
                      "passive_wait_ns": _POS,
                      "tuneup": {"enum": ["analytic", "nelder-mead"]},
                      "calibration": {"enum": ["noiseless", "mc"]},
                      "calib_shots": _POS_INT,
                      "prep_error": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
                      "baseline": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                      "snr_error": {"enum": ["delta", "bootstrap"]}}),
    "tuneup": _obj({"d": {"type": "number", "minimum": 0}, "tau_c_ns": _POS,
                    "transients_shots": _POS_INT, "max_evals": _POS_INT,
                    "mode": {"enum": ["noiseless", "mc"]}}),
    "sweep": _obj({"delta_mhz": {"type": "array", "items": _NUM, "minItems": 1},
                   "conditions": {"type": "array", "minItems": 1, "uniqueItems": True,
                                  "items": {"enum": ["optimal/active", "optimal/passive",
                                                     "square/active", "square/passive"]}}}),
    "chain": _obj({"csv": {"type": "string"}, "n_sections": _POS_INT, "freq_ghz": _POS,
                   "gains_db": {"type": "array", "items": {"type": "number", "minimum": 0}},
                   "fixed": _obj({"eta_pre": {"type": "number", "exclusiveMinimum": 0,
                                              "maximum": 1},
                                  "insertion_loss_db": {"type": "number", "minimum": 0},
                                  "t_noise": {"type": "number", "minimum": 0}}),
                   "pump_map": _obj({"ridge": _obj({"peak_db": {"type": "number", "minimum": 0},
                                                    "power_dbm": _NUM, "freq_ghz": _POS,
                                                    "power_width_db": _POS,
                                                    "freq_width_ghz": _POS, "tilt": _NUM}),
                                     "power_dbm": _RANGE, "freq_ghz": _RANGE},
                                    required=("power_dbm", "freq_ghz"))}),
})

DEFAULT_SWEEP_MHZ = [float(x) for x in np.round(np.linspace(-1.4, 1.4, 15), 12)]
ALL_CONDITIONS = ["optimal/active", "optimal/passive", "square/active", "square/passive"]


@dataclass
class ExperimentConfig:
    seed: int
    readout: ReadoutParams
    envelope: PulseEnvelope
    pipeline: PipelineConfig
    sweep_delta: list[float]
    conditions: list[str]
    chain_csv: Path | None
    n_sections: int
    freq: float
    chain_gains: list[float] | None
    resolved: dict
    chain_fixed: dict = field(default_factory=dict)
    pump_map: dict | None = None


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def build_envelope(spec: dict, base: Path) -> PulseEnvelope:
    sources = [k for k in ("family", "file", "inline") if k in spec]
    if len(sources) > 1:
        raise InvalidInputError(f"envelope: give only one of family/file/inline, got {sources}")
    if "file" in spec:
        path = _resolve(spec["file"], base)
        if not path.is_file():
            raise InvalidInputError(f"envelope file not found: {path}")
        return load_envelope(path)
    if "inline" in spec:
        return envelope_from_dict(spec["inline"])
    family = spec.get("family", "square")
    dt = spec.get("sample_period_ns", 1.0) * 1e-9
    kw = {"sample_period": dt}
    if family == "passive":
        if "ramp_ns" in spec:
            kw["ramp"] = spec["ramp_ns"] * 1e-9
        if "wait_ns" in spec:
            kw["wait"] = spec["wait_ns"] * 1e-9
        return passive_envelope(1.0, **kw)
    if "depletion_ns" in spec:
        kw["depletion"] = [d * 1e-9 for d in spec["depletion_ns"]]
    if "buffer_ns" in spec:
        kw["buffer"] = spec["buffer_ns"] * 1e-9
    if family == "skyline":
        return skyline_envelope(1.0, **kw)
    if "ramp_ns" in spec:
        kw["ramp"] = spec["ramp_ns"] * 1e-9
    builder = square_ramp_envelope if family == "square" else two_step_envelope
    return builder(1.0, **kw)


def parse_config(data: dict, base: Path = Path("."), seed: int | None = None,
                 shots: int | None = None, mode: str | None = None) -> ExperimentConfig:
    """Validate ``data`` and build the typed configuration.

    ``seed``, ``shots`` and ``mode`` override the file (command-line flags).
    ``mode`` selects noiseless or Monte-Carlo transients for both the depletion
    tune-up and the weight calibration.
    """
    data = copy.deepcopy(data)
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInputError(f"config error at {where}: {exc.message}") from None
    if seed is not None:
        data["seed"] = seed
    if "seed" not in data:
        raise InvalidInputError("config needs a seed (set 'seed' or pass --seed)")
    pipe = dict(data.get("pipeline", {}))
    if shots is not None:
        pipe["shots"] = shots
    tune = dict(data.get("tuneup", {}))
    if mode is not None:
        pipe["calibration"] = mode
        tune["mode"] = mode
    data["pipeline"], data["tuneup"] = pipe, tune

    ro = data.get("readout", {})
    readout = ReadoutParams(
        kappa=TWO_PI * ro["kappa_mhz"] * 1e6 if "kappa_mhz" in ro else NOMINAL_KAPPA,
        chi=TWO_PI * ro["chi_mhz"] * 1e6 if "chi_mhz" in ro else NOMINAL_CHI,
        delta=TWO_PI * ro.get("delta_mhz", 0.0) * 1e6,
        eta=ro.get("eta", 0.165), v0=ro.get("v0", 1.0),
        drive_scale=(TWO_PI * ro["drive_scale_mhz"] * 1e6 if "drive_scale_mhz" in ro
                     else DEFAULT_DRIVE_SCALE))
    envelope = build_envelope(data.get("envelope", {}), base)

    pkw = {k: v for k, v in pipe.items() if k != "passive_wait_ns"}
    if "passive_wait_ns" in pipe:
        pkw["passive_wait"] = pipe["passive_wait_ns"] * 1e-9
    cost = CostConfig(d=tune.get("d", 10.0), tau_c=tune.get("tau_c_ns", 200.0) * 1e-9,
                      transients_shots=tune.get("transients_shots", 2 ** 15))
    pipeline = PipelineConfig(**pkw, cost=cost, tuneup_mode=tune.get("mode", "noiseless"),
                              max_evals=tune.get("max_evals", 2000))
    sweep = data.get("sweep", {})
    chain = data.get("chain", {})
    chain_csv = _resolve(chain["csv"], base) if "csv" in chain else None
    return ExperimentConfig(
        seed=int(data["seed"]), readout=readout, envelope=envelope, pipeline=pipeline,
        sweep_delta=list(sweep.get("delta_mhz", DEFAULT_SWEEP_MHZ)),
        conditions=list(sweep.get("conditions", ALL_CONDITIONS)),
        chain_csv=chain_csv, n_sections=chain.get("n_sections", 100),
        freq=chain.get("freq_ghz", NOMINAL_FREQ / 1e9) * 1e9,
        chain_gains=chain.get("gains_db"), resolved=data,
        chain_fixed=dict(chain.get("fixed", {})), pump_map=chain.get("pump_map"))


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    if path is None:
        return parse_config({}, Path("."), **overrides)
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    return parse_config(data, path.parent, **overrides)
