"""Strict JSON run configurations.

One JSON document per run.  Unknown fields are errors (naming the
offending field), required fields must be present, and a metadata file
written by a previous run can be fed back in: when the document has a
top-level "config" object, that object is loaded and the sibling
provenance keys are ignored, so re-running a run's metadata reproduces
its artifacts byte for byte.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .controls import ControlLaw, TargetSpec, ENTRY_NAMES
from .dicke import PureState, dicke_state, spin_coherent_state
from .errors import ConfigError
from .harness import (SweepSpec, TuneSpec, COLLAPSE_THRESHOLD)
from .params import SimParams

ENGINES = ("moment", "sme")
PROVENANCE_KEYS = {"master_seed", "tau0", "versions", "command", "artifacts",
                   "report"}

_COMMON_KEYS = {"params", "engine", "law", "target", "stride", "out_dir",
                "initconds_literal_paper", "decouple_B", "feedback_delay_steps"}
_PARAM_KEYS = {"n_atoms", "G", "g", "A", "B", "eta", "dt", "t_final", "seed"}
_PARAM_REQUIRED = ("n_atoms", "G", "A", "eta", "dt", "t_final", "seed")


def _load_document(source: Union[str, Path, dict]) -> dict:
    if isinstance(source, dict):
        doc = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config parse error at line {exc.lineno}, column {exc.colno}: "
                f"{exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    if "config" in doc:
        for key in doc:
            if key != "config" and key not in PROVENANCE_KEYS:
                raise ConfigError(f"unknown field {key}")
        doc = doc["config"]
        if not isinstance(doc, dict):
            raise ConfigError("field config: must be an object")
    return doc


def _check_fields(obj: dict, prefix: str, allowed: set, required=()):
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown field {prefix}{key}")
    for key in required:
        if key not in obj:
            raise ConfigError(f"missing field {prefix}{key}")


def _number(obj: dict, prefix: str, name: str, default=None) -> float:
    if name not in obj:
        return default
    v = obj[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field {prefix}{name}: expected a number")
    return float(v)


def _integer(obj: dict, prefix: str, name: str, default=None) -> int:
    if name not in obj:
        return default
    v = obj[name]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"field {prefix}{name}: expected an integer")
    return v


def _boolean(obj: dict, prefix: str, name: str, default: bool) -> bool:
    if name not in obj:
        return default
    v = obj[name]
    if not isinstance(v, bool):
        raise ConfigError(f"field {prefix}{name}: expected true or false")
    return v


def _string(obj: dict, prefix: str, name: str, default=None):
    if name not in obj:
        return default
    v = obj[name]
    if not isinstance(v, str):
        raise ConfigError(f"field {prefix}{name}: expected a string")
    return v


def _parse_params(doc: dict, decouple_b: bool) -> SimParams:
    if "params" not in doc:
        raise ConfigError("missing field params")
    obj = doc["params"]
    if not isinstance(obj, dict):
        raise ConfigError("field params: must be an object")
    _check_fields(obj, "params.", _PARAM_KEYS, _PARAM_REQUIRED)
    kwargs = dict(
        n_atoms=_integer(obj, "params.", "n_atoms"),
        G=_number(obj, "params.", "G"),
        g=_number(obj, "params.", "g", 0.0),
        A=_number(obj, "params.", "A"),
        eta=_number(obj, "params.", "eta"),
        dt=_number(obj, "params.", "dt"),
        t_final=_number(obj, "params.", "t_final"),
        seed=_integer(obj, "params.", "seed"),
        decouple_b=decouple_b,
    )
    if "B" in obj:
        kwargs["B"] = _number(obj, "params.", "B")
    return SimParams(**kwargs)


def _parse_law(doc: dict) -> Optional[ControlLaw]:
    if "law" not in doc or doc["law"] is None:
        return None
    obj = doc["law"]
    if not isinstance(obj, dict):
        raise ConfigError("field law: must be an object or null")
    if "xi" in obj or "beta" in obj:
        _check_fields(obj, "law.", {"xi", "beta", "saturation"})
        xi = obj.get("xi", [0.0, 0.0, 0.0])
        beta = obj.get("beta", [[0.0] * 3] * 3)
        try:
            xi = np.asarray(xi, dtype=float)
            beta = np.asarray(beta, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field law: {exc}") from exc
        sat = _number(obj, "law.", "saturation", None)
        return ControlLaw(xi=xi, beta=beta, saturation=sat)
    _check_fields(obj, "law.", set(ENTRY_NAMES) | {"saturation"})
    entries = {}
    for name in ENTRY_NAMES:
        if name in obj:
            entries[name] = _number(obj, "law.", name)
    sat = _number(obj, "law.", "saturation", None)
    return ControlLaw.from_entries(saturation=sat, **entries)


def _parse_target(doc: dict) -> Optional[TargetSpec]:
    if "target" not in doc or doc["target"] is None:
        return None
    v = doc["target"]
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError("field target: expected a 3-element array")
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError("field target: entries must be numbers")
    return TargetSpec(np.asarray(v, dtype=float))


def _law_to_raw(law: Optional[ControlLaw]):
    if law is None:
        return None
    out = {}
    for name in ENTRY_NAMES:
        v = law.entry(name)
        if v != 0.0:
            out[name] = v
    if law.saturation is not None:
        out["saturation"] = law.saturation
    return out


def _params_to_raw(params: SimParams) -> dict:
    return {"n_atoms": params.n_atoms, "G": params.G, "g": params.g,
            "A": params.A, "B": params.B, "eta": params.eta, "dt": params.dt,
            "t_final": params.t_final, "seed": params.seed}


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved simulate run: one trajectory, one engine."""

    params: SimParams
    engine: str
    law: Optional[ControlLaw]
    target: Optional[TargetSpec]
    stride: int
    out_dir: Optional[str]
    unnormalized_yz: bool
    feedback_delay_steps: int

    def raw(self) -> dict:
        """Resolved config with defaults materialized (for metadata)."""
        return _strip_none({
            "params": _params_to_raw(self.params),
            "engine": self.engine,
            "law": _law_to_raw(self.law),
            "target": None if self.target is None else list(self.target.bloch),
            "stride": self.stride,
            "out_dir": self.out_dir,
            "initconds_literal_paper": self.unnormalized_yz,
            "decouple_B": self.params.decouple_b,
            "feedback_delay_steps": self.feedback_delay_steps,
        })


def _strip_none(d: dict) -> dict:
    """Drop unset optionals so a metadata file reloads as a config."""
    return {k: v for k, v in d.items() if v is not None}


def _parse_common(doc: dict, extra_keys: set) -> tuple:
    _check_fields(doc, "", _COMMON_KEYS | extra_keys)
    decouple_b = _boolean(doc, "", "decouple_B", False)
    params = _parse_params(doc, decouple_b)
    engine = _string(doc, "", "engine", "moment")
    if engine not in ENGINES:
        raise ConfigError(f"field engine: must be one of {ENGINES}, got {engine!r}")
    law = _parse_law(doc)
    target = _parse_target(doc)
    stride = _integer(doc, "", "stride", None)
    if stride is not None and stride < 1:
        raise ConfigError(f"field stride: must be >= 1, got {stride}")
    out_dir = _string(doc, "", "out_dir", None)
    literal = _boolean(doc, "", "initconds_literal_paper", False)
    delay = _integer(doc, "", "feedback_delay_steps", 0)
    if delay < 0:
        raise ConfigError(f"field feedback_delay_steps: must be >= 0, got {delay}")
    return params, engine, law, target, stride, out_dir, literal, delay


def load_run_config(source: Union[str, Path, dict]) -> RunConfig:
    """Parse a simulate config (or a simulate metadata file)."""
    doc = _load_document(source)
    params, engine, law, target, stride, out_dir, literal, delay = \
        _parse_common(doc, set())
    return RunConfig(params=params, engine=engine, law=law, target=target,
                     stride=1 if stride is None else stride, out_dir=out_dir,
                     unnormalized_yz=literal, feedback_delay_steps=delay)


@dataclass(frozen=True)
class SweepConfig:
    params: SimParams
    spec: SweepSpec
    stride: Optional[int]
    out_dir: Optional[str]

    def raw(self) -> dict:
        return _strip_none({
            "params": _params_to_raw(self.params),
            "engine": self.spec.engine,
            "law": _law_to_raw(self.spec.law_template),
            "stride": self.stride,
            "out_dir": self.out_dir,
            "decouple_B": self.params.decouple_b,
            "sweep": {"entry": self.spec.entry,
                      "grid": list(self.spec.grid),
                      "repetitions": self.spec.repetitions},
        })


def load_sweep_config(source: Union[str, Path, dict]) -> SweepConfig:
    """Parse a sweep config: common fields plus a "sweep" section."""
    doc = _load_document(source)
    params, engine, law, target, stride, out_dir, literal, delay = \
        _parse_common(doc, {"sweep"})
    if target is not None:
        raise ConfigError("field target: not used by sweep runs")
    if literal or delay:
        raise ConfigError("initial-condition and delay flags are not used by sweep runs")
    if "sweep" not in doc:
        raise ConfigError("missing field sweep")
    obj = doc["sweep"]
    if not isinstance(obj, dict):
        raise ConfigError("field sweep: must be an object")
    _check_fields(obj, "sweep.", {"entry", "grid", "repetitions"}, ("entry", "grid"))
    entry = _string(obj, "sweep.", "entry")
    grid = obj["grid"]
    if not isinstance(grid, (list, tuple)) or not grid:
        raise ConfigError("field sweep.grid: expected a nonempty array")
    for x in grid:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError("field sweep.grid: entries must be numbers")
    reps = _integer(obj, "sweep.", "repetitions", 10)
    spec = SweepSpec(entry=entry, grid=np.asarray(grid, dtype=float),
                     repetitions=reps, engine=engine, law_template=law)
    return SweepConfig(params=params, spec=spec, stride=stride, out_dir=out_dir)


@dataclass(frozen=True)
class TuneConfig:
    params: SimParams
    spec: TuneSpec
    stride: Optional[int]
    out_dir: Optional[str]

    def raw(self) -> dict:
        return _strip_none({
            "params": _params_to_raw(self.params),
            "engine": self.spec.engine,
            "target": list(self.spec.target.bloch),
            "stride": self.stride,
            "out_dir": self.out_dir,
            "decouple_B": self.params.decouple_b,
            "tune": {"bounds": {k: list(v) for k, v in sorted(self.spec.bounds.items())},
                     "budget": self.spec.budget,
                     "method": self.spec.method,
                     "repetitions": self.spec.repetitions},
        })


def load_tune_config(source: Union[str, Path, dict]) -> TuneConfig:
    """Parse a tune config: common fields plus target and a "tune" section."""
    doc = _load_document(source)
    params, engine, law, target, stride, out_dir, literal, delay = \
        _parse_common(doc, {"tune"})
    if law is not None:
        raise ConfigError("field law: not used by tune runs (use tune.bounds)")
    if literal or delay:
        raise ConfigError("initial-condition and delay flags are not used by tune runs")
    if target is None:
        raise ConfigError("missing field target")
    if "tune" not in doc:
        raise ConfigError("missing field tune")
    obj = doc["tune"]
    if not isinstance(obj, dict):
        raise ConfigError("field tune: must be an object")
    _check_fields(obj, "tune.", {"bounds", "budget", "method", "repetitions"},
                  ("bounds",))
    bounds_obj = obj["bounds"]
    if not isinstance(bounds_obj, dict) or not bounds_obj:
        raise ConfigError("field tune.bounds: expected a nonempty object")
    bounds = {}
    for name, pair in bounds_obj.items():
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"field tune.bounds.{name}: expected [low, high]")
        for x in pair:
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise ConfigError(f"field tune.bounds.{name}: entries must be numbers")
        bounds[name] = (float(pair[0]), float(pair[1]))
    budget = _integer(obj, "tune.", "budget", 40)
    method = _string(obj, "tune.", "method", "coordinate-descent")
    reps = _integer(obj, "tune.", "repetitions", 5)
    spec = TuneSpec(target=target, bounds=bounds, budget=budget, method=method,
                    repetitions=reps, engine=engine)
    return TuneConfig(params=params, spec=spec, stride=stride, out_dir=out_dir)


@dataclass(frozen=True)
class CompareConfig:
    params: SimParams
    law: Optional[ControlLaw]
    n_trajectories: int
    horizon: Optional[float]
    stride: Optional[int]
    out_dir: Optional[str]

    def raw(self) -> dict:
        return _strip_none({
            "params": _params_to_raw(self.params),
            "law": _law_to_raw(self.law),
            "stride": self.stride,
            "out_dir": self.out_dir,
            "decouple_B": self.params.decouple_b,
            "compare": _strip_none({"n_trajectories": self.n_trajectories,
                                    "horizon": self.horizon}),
        })


def load_compare_config(source: Union[str, Path, dict]) -> CompareConfig:
    """Parse a compare config: common fields plus a "compare" section."""
    doc = _load_document(source)
    params, engine, law, target, stride, out_dir, literal, delay = \
        _parse_common(doc, {"compare"})
    if target is not None:
        raise ConfigError("field target: not used by compare runs")
    if literal or delay:
        raise ConfigError("initial-condition and delay flags are not used by compare runs")
    if "engine" in doc:
        raise ConfigError("field engine: compare runs drive both engines")
    if "compare" not in doc:
        raise ConfigError("missing field compare")
    obj = doc["compare"]
    if not isinstance(obj, dict):
        raise ConfigError("field compare: must be an object")
    _check_fields(obj, "compare.", {"n_trajectories", "horizon"}, ("n_trajectories",))
    n_traj = _integer(obj, "compare.", "n_trajectories")
    if n_traj < 1:
        raise ConfigError(f"field compare.n_trajectories: must be >= 1, got {n_traj}")
    horizon = _number(obj, "compare.", "horizon", None)
    return CompareConfig(params=params, law=law, n_trajectories=n_traj,
                         horizon=horizon, stride=stride, out_dir=out_dir)


@dataclass(frozen=True)
class CollapseConfig:
    params: SimParams
    initial: Optional[PureState]
    initial_raw: Optional[dict]
    n_trajectories: int
    threshold: float
    out_dir: Optional[str]

    def raw(self) -> dict:
        return _strip_none({
            "params": _params_to_raw(self.params),
            "out_dir": self.out_dir,
            "decouple_B": self.params.decouple_b,
            "collapse": _strip_none({"initial": self.initial_raw,
                                     "n_trajectories": self.n_trajectories,
                                     "threshold": self.threshold}),
        })


def _parse_initial(obj, n_atoms: int) -> PureState:
    if not isinstance(obj, dict):
        raise ConfigError("field collapse.initial: must be an object")
    kind = _string(obj, "collapse.initial.", "kind")
    if kind is None:
        raise ConfigError("missing field collapse.initial.kind")
    if kind == "coherent":
        _check_fields(obj, "collapse.initial.", {"kind", "polar_angle", "azimuth"},
                      ("polar_angle",))
        theta = _number(obj, "collapse.initial.", "polar_angle")
        phi = _number(obj, "collapse.initial.", "azimuth", 0.0)
        return spin_coherent_state(n_atoms, theta, phi)
    if kind == "dicke":
        _check_fields(obj, "collapse.initial.", {"kind", "k"}, ("k",))
        k = _integer(obj, "collapse.initial.", "k")
        return dicke_state(n_atoms, k)
    if kind == "amplitudes":
        _check_fields(obj, "collapse.initial.", {"kind", "re", "im"}, ("re",))
        re = obj["re"]
        im = obj.get("im", [0.0] * len(re) if isinstance(re, list) else None)
        if not isinstance(re, list) or not isinstance(im, list) or len(re) != len(im):
            raise ConfigError(
                "field collapse.initial: re and im must be arrays of equal length")
        amp = np.asarray(re, dtype=float) + 1j * np.asarray(im, dtype=float)
        norm = np.linalg.norm(amp)
        if norm == 0:
            raise ConfigError("field collapse.initial: amplitudes are all zero")
        return PureState(n_atoms, amp / norm)
    raise ConfigError(
        f"field collapse.initial.kind: expected coherent, dicke, or amplitudes, "
        f"got {kind!r}")


def load_collapse_config(source: Union[str, Path, dict]) -> CollapseConfig:
    """Parse a collapse config: common fields plus a "collapse" section."""
    doc = _load_document(source)
    params, engine, law, target, stride, out_dir, literal, delay = \
        _parse_common(doc, {"collapse"})
    if law is not None:
        raise ConfigError("field law: collapse runs are measurement-only")
    if target is not None:
        raise ConfigError("field target: not used by collapse runs")
    if "engine" in doc:
        raise ConfigError(
            "field engine: collapse statistics always use the exact filter")
    if stride is not None:
        raise ConfigError("field stride: not used by collapse runs")
    if literal or delay:
        raise ConfigError("initial-condition and delay flags are not used by collapse runs")
    if "collapse" not in doc:
        raise ConfigError("missing field collapse")
    obj = doc["collapse"]
    if not isinstance(obj, dict):
        raise ConfigError("field collapse: must be an object")
    _check_fields(obj, "collapse.", {"initial", "n_trajectories", "threshold"},
                  ("n_trajectories",))
    n_traj = _integer(obj, "collapse.", "n_trajectories")
    if n_traj < 1:
        raise ConfigError(f"field collapse.n_trajectories: must be >= 1, got {n_traj}")
    threshold = _number(obj, "collapse.", "threshold", COLLAPSE_THRESHOLD)
    if "initial" in obj and obj["initial"] is not None:
        initial = _parse_initial(obj["initial"], params.n_atoms)
        initial_raw = obj["initial"]
    else:
        initial = None
        initial_raw = None
    return CollapseConfig(params=params, initial=initial, initial_raw=initial_raw,
                          n_trajectories=n_traj, threshold=threshold,
                          out_dir=out_dir)
