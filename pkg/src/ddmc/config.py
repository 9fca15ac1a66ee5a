"""TOML config ingestion for model and experiment files."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .experiments import EventSpec, ExperimentConfig
from .model import BUILTIN_NAMES, Domain, ModelSpec, Polynomial, builtin_model

EXPERIMENT_KINDS = ("lln", "clt", "martingale", "mdp")


def load_toml(path) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")


def _expect(tbl: dict, key: str, where: str):
    if key not in tbl:
        raise ConfigError(f"missing key '{key}'", field=where)
    return tbl[key]


def _floats(value, where: str) -> list[float]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError("expected an array of numbers", field=where)
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError("expected an array of numbers", field=where)


def model_from_table(tbl: dict, where: str = "model") -> ModelSpec:
    """Build a ModelSpec from a config table (builtin shortcut or explicit fields)."""
    if "builtin" in tbl:
        name = tbl["builtin"]
        if name not in BUILTIN_NAMES:
            raise ConfigError(f"unknown builtin '{name}'", field=f"{where}.builtin")
        params = tbl.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("params must be a table", field=f"{where}.params")
        try:
            return builtin_model(name, **params)
        except ValueError as exc:
            raise ConfigError(str(exc), field=f"{where}.params")
    dim = _expect(tbl, "dimension", where)
    if not isinstance(dim, int) or dim < 1:
        raise ConfigError("dimension must be a positive integer", field=f"{where}.dimension")
    x0 = _floats(_expect(tbl, "x0", where), f"{where}.x0")
    if len(x0) != dim:
        raise ConfigError(f"x0 must have {dim} entries", field=f"{where}.x0")
    jumps_raw = _expect(tbl, "jumps", where)
    if not isinstance(jumps_raw, list) or not jumps_raw:
        raise ConfigError("jumps must be a nonempty array of integer arrays",
                          field=f"{where}.jumps")
    jumps = []
    for i, j in enumerate(jumps_raw):
        if not isinstance(j, list) or len(j) != dim or not all(isinstance(v, int) for v in j):
            raise ConfigError(f"jump #{i + 1} must be an array of {dim} integers",
                              field=f"{where}.jumps")
        jumps.append(tuple(j))
    rates_raw = _expect(tbl, "rates", where)
    if not isinstance(rates_raw, list) or len(rates_raw) != len(jumps):
        raise ConfigError("rates must list one term array per jump", field=f"{where}.rates")
    rates = []
    for i, terms in enumerate(rates_raw):
        fwhere = f"{where}.rates[{i + 1}]"
        if not isinstance(terms, list):
            raise ConfigError("each rate is an array of {exponents, coeff} tables",
                              field=fwhere)
        parsed = []
        for t in terms:
            if not isinstance(t, dict) or "exponents" not in t or "coeff" not in t:
                raise ConfigError("rate terms need 'exponents' and 'coeff'", field=fwhere)
            exps = t["exponents"]
            if not isinstance(exps, list) or len(exps) != dim:
                raise ConfigError(f"exponents must have {dim} entries", field=fwhere)
            parsed.append((tuple(int(e) for e in exps), float(t["coeff"])))
        try:
            rates.append(Polynomial(dim, parsed))
        except ValueError as exc:
            raise ConfigError(str(exc), field=fwhere)
    dom_tbl = tbl.get("domain", {})
    if not isinstance(dom_tbl, dict):
        raise ConfigError("domain must be a table", field=f"{where}.domain")
    halfspaces = []
    for i, hs in enumerate(dom_tbl.get("halfspaces", [])):
        hwhere = f"{where}.domain.halfspaces[{i + 1}]"
        if not isinstance(hs, dict) or "a" not in hs or "c" not in hs:
            raise ConfigError("halfspaces need 'a' and 'c'", field=hwhere)
        a = _floats(hs["a"], hwhere)
        if len(a) != dim:
            raise ConfigError(f"'a' must have {dim} entries", field=hwhere)
        halfspaces.append((a, float(hs["c"])))
    box = dom_tbl.get("box", {})
    lower = _floats(box["lower"], f"{where}.domain.box.lower") if "lower" in box else None
    upper = _floats(box["upper"], f"{where}.domain.box.upper") if "upper" in box else None
    domain = Domain.build(dim, halfspaces=halfspaces, lower=lower, upper=upper)
    name = tbl.get("name", "custom")
    return ModelSpec(dimension=dim, jumps=tuple(jumps), rates=tuple(rates),
                     domain=domain, x0=np.array(x0), name=str(name),
                     params=dict(tbl.get("params", {})))


def load_model_config(path) -> ModelSpec:
    return model_from_table(load_toml(path), where=str(path))


def experiment_from_table(tbl: dict, where: str = "experiment") -> tuple[str, ExperimentConfig]:
    kind = _expect(tbl, "experiment", where)
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment must be one of {EXPERIMENT_KINDS}", field=f"{where}.experiment")
    model_tbl = _expect(tbl, "model", where)
    if not isinstance(model_tbl, dict):
        raise ConfigError("model must be a table", field=f"{where}.model")
    spec = model_from_table(model_tbl, where=f"{where}.model")
    event = None
    if "event" in tbl:
        ev = tbl["event"]
        if not isinstance(ev, dict):
            raise ConfigError("event must be a table", field=f"{where}.event")
        try:
            event = EventSpec(
                kind=str(_expect(ev, "kind", f"{where}.event")),
                level=float(_expect(ev, "level", f"{where}.event")),
                coordinate=int(ev.get("coordinate", 0)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), field=f"{where}.event")
    tilt = tbl.get("tilt", {})
    n_list = tbl.get("n_list", [1000])
    if not isinstance(n_list, list) or not all(isinstance(n, int) and n >= 1 for n in n_list):
        raise ConfigError("n_list must be an array of positive integers", field=f"{where}.n_list")
    try:
        cfg = ExperimentConfig(
            model=spec,
            t0=float(tbl.get("t0", 1.0)),
            h=float(tbl.get("h", 1e-3)),
            alpha=float(tbl.get("alpha", 0.75)),
            n_list=tuple(n_list),
            reps=int(tbl.get("reps", 1000)),
            seed=int(tbl.get("seed", 0)),
            event=event,
            epsilons=tuple(float(e) for e in tbl.get("epsilons", [0.05])),
            threads=int(tbl.get("threads", 1)),
            tilt_profile=str(tilt.get("profile", "constant")),
            tilt_amplitude=float(tilt.get("amplitude", 0.15)),
            untilted_baseline=bool(tbl.get("untilted_baseline", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), field=where)
    if kind == "mdp" and event is None:
        raise ConfigError("mdp experiments need an [event] table", field=f"{where}.event")
    return kind, cfg


def load_experiment_config(path) -> tuple[str, ExperimentConfig]:
    return experiment_from_table(load_toml(path), where=str(path))
