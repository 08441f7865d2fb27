"""Scenario files: the declarative description of one closed-loop trial.

The on-disk format is JSON with a strict schema: unknown keys are rejected
(with the offending dotted path named), missing keys take documented
defaults, and `schema()` returns the authoritative structure. Everything
the trial does — platform, limits, target profile, sensing, planner
parameters, success thresholds, and the run block — lives here so a trial
is reproducible from (file bytes, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .estimator import NoiseConfig
from .geometry import PlatformClass, PlatformLimits, Pose2, Pose3
from .scp_planner import ScpConfig
from .simworld import (
    DropoutSchedule,
    LinearProfile,
    SensorConfig,
    SinusoidProfile,
    StochasticTwistProfile,
    TargetProfile,
    WaypointsProfile,
)


class ScenarioError(ValueError):
    """Scenario file violates the schema; message names the path/key."""


@dataclass(frozen=True)
class InterceptConfig:
    t_max: float = 5.0
    delta: float = 1e-3
    scan_dt: float = 0.05


@dataclass(frozen=True)
class EstimatorConfig:
    noise: NoiseConfig = NoiseConfig()
    window: int = 10
    gate: float | None = None  # optional innovation-magnitude gate [m]


@dataclass(frozen=True)
class PredictorConfig:
    history_len: int = 20
    horizon: float = 3.0


@dataclass(frozen=True)
class PolyPlannerConfig:
    min_duration: float = 0.3
    yaw_mode: str = "target_heading"  # or "velocity"


@dataclass(frozen=True)
class UavConfig:
    altitude: float = 1.0
    land_when_stopped: bool = False
    land_duration: float = 3.0
    stop_speed_threshold: float = 0.05
    stop_hold_s: float = 2.0


@dataclass
class Scenario:
    platform: PlatformClass
    limits: PlatformLimits
    observer_start: Pose3
    target_start: Pose2
    profile: TargetProfile
    sensor: SensorConfig
    scp: ScpConfig
    intercept: InterceptConfig = field(default_factory=InterceptConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    poly: PolyPlannerConfig = field(default_factory=PolyPlannerConfig)
    uav: UavConfig = field(default_factory=UavConfig)
    standoff: float = 1.25
    success_pos_tol: float = 0.25
    success_ang_tol: float = 0.20
    duration: float = 30.0
    tick_hz: float = 10.0
    seed: int = 0
    prediction_enabled: bool = True
    measure_latency: bool = False

    def __post_init__(self):
        if self.duration <= 0 or self.tick_hz <= 0:
            raise ScenarioError("duration and tick_hz must be positive")
        if self.success_pos_tol <= 0 or self.success_ang_tol <= 0:
            raise ScenarioError("success tolerances must be positive")

    @property
    def tick_dt(self) -> float:
        return 1.0 / self.tick_hz

    def with_overrides(self, **kw) -> "Scenario":
        import dataclasses
        return dataclasses.replace(self, **kw)


_PROFILE_SCHEMAS = {
    "linear": {"speed": 0.25, "heading": None, "distance": None},
    "sinusoid": {"speed": 0.25, "wavelength": 5.0, "p2p": 1.0,
                 "heading": None, "distance": None},
    "stochastic_twist": {"v_range": [0.0, 0.5], "omega_range": [-1.0, 1.0],
                         "resample_hz": 10.0, "stop_after": None},
    "waypoints": {"points": []},
}

_SCHEMA: dict[str, Any] = {
    "platform": "coupled_ground | holonomic_2d | holonomic_3d (required)",
    "limits": {"v_max": 1.0, "omega_max": 2.0, "r_min": 0.5},
    "observer_start": {"x": 0.0, "y": 0.0, "z": 0.0, "yaw": 0.0},
    "target_start": {"x": 3.0, "y": 0.0, "theta": 0.0},
    "profile": {"kind": "linear | sinusoid | stochastic_twist | waypoints (required)",
                "by_kind": _PROFILE_SCHEMAS},
    "sensor": {
        "rate_hz": 10.0,
        "fov_half_angle": math.pi / 4.0,
        "max_range": 10.0,
        "noise_sigma": [0.005, 0.005, 0.01],
        "dropout": None,  # or {"window_s": ..., "interval_s": ...}
        "p_corrupt": 0.0,
        "latency_ticks": 0,
    },
    "planner": {
        "scp": {
            "n_steps": 20, "dt": None, "w_v": 0.1, "w_omega": 0.1,
            "w_ip": 0.5, "w_itheta": 0.1, "w_p": 50.0, "w_theta": 10.0,
            "eps_converge": 1e-3, "max_scp_iters": 15, "trust_radius": 2.0,
            "w_rev": 1.0, "k_bias": 3, "stage_deviation_mode": "stage",
        },
        "poly": {"min_duration": 0.3, "yaw_mode": "target_heading"},
        "intercept": {"t_max": 5.0, "delta": 1e-3, "scan_dt": 0.05},
        "estimator": {"q_diag": [0.01, 0.01, 0.02],
                      "r_diag": [0.005, 0.005, 0.01],
                      "window": 10, "gate": None},
        "predictor": {"history_len": 20, "horizon": 3.0},
        "uav": {"altitude": 1.0, "land_when_stopped": False,
                "land_duration": 3.0, "stop_speed_threshold": 0.05,
                "stop_hold_s": 2.0},
    },
    "success": {"standoff": 1.25, "pos_tol": 0.25, "ang_tol": 0.20},
    "run": {"duration": 30.0, "tick_hz": 10.0, "seed": 0,
            "prediction_enabled": True, "measure_latency": False},
}


def schema_json() -> str:
    """The authoritative scenario schema with defaults, as a JSON document."""
    return json.dumps(_SCHEMA, indent=2, sort_keys=True)


def _check_keys(d: dict, allowed, path: str) -> None:
    if not isinstance(d, dict):
        raise ScenarioError(f"{path or 'document'} must be an object")
    for k in d:
        if k not in allowed:
            raise ScenarioError(f"unknown key '{path}{k}'"
                                f" (allowed: {', '.join(sorted(allowed))})")


def _num(d: dict, key: str, default, path: str, allow_none=False):
    v = d.get(key, default)
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"'{path}{key}' must be a number, got {v!r}")
    return float(v)


def _vec3(d: dict, key: str, default, path: str):
    v = d.get(key, default)
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v)):
        raise ScenarioError(f"'{path}{key}' must be a list of 3 numbers")
    return tuple(float(x) for x in v)


def _parse_profile(d: dict) -> TargetProfile:
    _check_keys(d, set(_PROFILE_SCHEMAS["linear"]) | set(_PROFILE_SCHEMAS["sinusoid"])
                | set(_PROFILE_SCHEMAS["stochastic_twist"])
                | set(_PROFILE_SCHEMAS["waypoints"]) | {"kind"}, "profile.")
    kind = d.get("kind")
    if kind not in _PROFILE_SCHEMAS:
        raise ScenarioError(f"'profile.kind' must be one of {sorted(_PROFILE_SCHEMAS)}")
    _check_keys(d, set(_PROFILE_SCHEMAS[kind]) | {"kind"}, "profile.")
    p = "profile."
    if kind == "linear":
        dist = _num(d, "distance", None, p, allow_none=True)
        return LinearProfile(
            speed=_num(d, "speed", 0.25, p),
            heading=_num(d, "heading", None, p, allow_none=True),
            distance=math.inf if dist is None else dist,
        )
    if kind == "sinusoid":
        dist = _num(d, "distance", None, p, allow_none=True)
        return SinusoidProfile(
            speed=_num(d, "speed", 0.25, p),
            wavelength=_num(d, "wavelength", 5.0, p),
            p2p=_num(d, "p2p", 1.0, p),
            heading=_num(d, "heading", None, p, allow_none=True),
            distance=math.inf if dist is None else dist,
        )
    if kind == "stochastic_twist":
        stop = _num(d, "stop_after", None, p, allow_none=True)
        vr = d.get("v_range", [0.0, 0.5])
        om = d.get("omega_range", [-1.0, 1.0])
        for name, rng in (("v_range", vr), ("omega_range", om)):
            if not isinstance(rng, (list, tuple)) or len(rng) != 2 or rng[0] > rng[1]:
                raise ScenarioError(f"'profile.{name}' must be an ordered [lo, hi] pair")
        return StochasticTwistProfile(
            v_range=(float(vr[0]), float(vr[1])),
            omega_range=(float(om[0]), float(om[1])),
            resample_hz=_num(d, "resample_hz", 10.0, p),
            stop_after=math.inf if stop is None else stop,
        )
    pts = d.get("points", [])
    if not isinstance(pts, list) or not pts:
        raise ScenarioError("'profile.points' must be a non-empty list")
    parsed = []
    for i, pt in enumerate(pts):
        _check_keys(pt, {"x", "y", "theta", "speed"}, f"profile.points[{i}].")
        pp = f"profile.points[{i}]."
        parsed.append((Pose2(_num(pt, "x", 0.0, pp), _num(pt, "y", 0.0, pp),
                             _num(pt, "theta", 0.0, pp)),
                       _num(pt, "speed", 0.25, pp)))
    return WaypointsProfile(points=tuple(parsed))


def from_dict(doc: dict) -> Scenario:
    """Validate a scenario document and build the resolved Scenario."""
    _check_keys(doc, set(_SCHEMA), "")
    if "platform" not in doc:
        raise ScenarioError("missing required key 'platform'")
    try:
        platform = PlatformClass(doc["platform"])
    except ValueError:
        raise ScenarioError(
            f"'platform' must be one of {[c.value for c in PlatformClass]}") from None

    lim = doc.get("limits", {})
    _check_keys(lim, {"v_max", "omega_max", "r_min"}, "limits.")
    try:
        limits = PlatformLimits(
            v_max=_num(lim, "v_max", 1.0, "limits."),
            omega_max=_num(lim, "omega_max", 2.0, "limits."),
            r_min=_num(lim, "r_min", 0.5, "limits."),
        )
    except ValueError as e:
        raise ScenarioError(f"limits: {e}") from None

    obs = doc.get("observer_start", {})
    _check_keys(obs, {"x", "y", "z", "yaw"}, "observer_start.")
    observer_start = Pose3(
        _num(obs, "x", 0.0, "observer_start."), _num(obs, "y", 0.0, "observer_start."),
        _num(obs, "z", 0.0, "observer_start."), _num(obs, "yaw", 0.0, "observer_start."),
    )
    tgt = doc.get("target_start", {})
    _check_keys(tgt, {"x", "y", "theta"}, "target_start.")
    target_start = Pose2(
        _num(tgt, "x", 3.0, "target_start."), _num(tgt, "y", 0.0, "target_start."),
        _num(tgt, "theta", 0.0, "target_start."),
    )

    if "profile" not in doc:
        raise ScenarioError("missing required key 'profile'")
    profile = _parse_profile(doc["profile"])

    sen = doc.get("sensor", {})
    _check_keys(sen, set(_SCHEMA["sensor"]), "sensor.")
    drop = sen.get("dropout")
    dropout = None
    if drop is not None:
        _check_keys(drop, {"window_s", "interval_s"}, "sensor.dropout.")
        w = _num(drop, "window_s", 0.0, "sensor.dropout.")
        iv = _num(drop, "interval_s", 5.0, "sensor.dropout.")
        if iv <= 0:
            raise ScenarioError("'sensor.dropout.interval_s' must be positive")
        if w > 0:
            dropout = DropoutSchedule(window_s=w, interval_s=iv)
    lat = sen.get("latency_ticks", 0)
    if isinstance(lat, bool) or not isinstance(lat, int):
        raise ScenarioError("'sensor.latency_ticks' must be an integer")
    try:
        sensor = SensorConfig(
            rate_hz=_num(sen, "rate_hz", 10.0, "sensor."),
            fov_half_angle=_num(sen, "fov_half_angle", math.pi / 4.0, "sensor."),
            max_range=_num(sen, "max_range", 10.0, "sensor."),
            noise_sigma=_vec3(sen, "noise_sigma", [0.005, 0.005, 0.01], "sensor."),
            dropout=dropout,
            p_corrupt=_num(sen, "p_corrupt", 0.0, "sensor."),
            latency_ticks=lat,
        )
    except ValueError as e:
        raise ScenarioError(f"sensor: {e}") from None

    run = doc.get("run", {})
    _check_keys(run, set(_SCHEMA["run"]), "run.")
    tick_hz = _num(run, "tick_hz", 10.0, "run.")
    if tick_hz <= 0:
        raise ScenarioError("'run.tick_hz' must be positive")
    seed = run.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("'run.seed' must be an integer")
    for key in ("prediction_enabled", "measure_latency"):
        if key in run and not isinstance(run[key], bool):
            raise ScenarioError(f"'run.{key}' must be a boolean")

    pl = doc.get("planner", {})
    _check_keys(pl, set(_SCHEMA["planner"]), "planner.")
    scp_d = pl.get("scp", {})
    _check_keys(scp_d, set(_SCHEMA["planner"]["scp"]), "planner.scp.")
    scp_dt = _num(scp_d, "dt", None, "planner.scp.", allow_none=True)
    n_steps = scp_d.get("n_steps", 20)
    if isinstance(n_steps, bool) or not isinstance(n_steps, int):
        raise ScenarioError("'planner.scp.n_steps' must be an integer")
    max_iters = scp_d.get("max_scp_iters", 15)
    k_bias = scp_d.get("k_bias", 3)
    mode = scp_d.get("stage_deviation_mode", "stage")
    tr = _num(scp_d, "trust_radius", 2.0, "planner.scp.", allow_none=True)
    try:
        scp = ScpConfig(
            n_steps=n_steps,
            dt=scp_dt if scp_dt is not None else 1.0 / tick_hz,
            w_v=_num(scp_d, "w_v", 0.1, "planner.scp."),
            w_omega=_num(scp_d, "w_omega", 0.1, "planner.scp."),
            w_ip=_num(scp_d, "w_ip", 0.5, "planner.scp."),
            w_itheta=_num(scp_d, "w_itheta", 0.1, "planner.scp."),
            w_p=_num(scp_d, "w_p", 50.0, "planner.scp."),
            w_theta=_num(scp_d, "w_theta", 10.0, "planner.scp."),
            eps_converge=_num(scp_d, "eps_converge", 1e-3, "planner.scp."),
            max_scp_iters=int(max_iters),
            trust_radius=tr,
            w_rev=_num(scp_d, "w_rev", 1.0, "planner.scp."),
            k_bias=int(k_bias),
            stage_deviation_mode=mode,
        )
    except ValueError as e:
        raise ScenarioError(f"planner.scp: {e}") from None

    icf = pl.get("intercept", {})
    _check_keys(icf, set(_SCHEMA["planner"]["intercept"]), "planner.intercept.")
    intercept = InterceptConfig(
        t_max=_num(icf, "t_max", 5.0, "planner.intercept."),
        delta=_num(icf, "delta", 1e-3, "planner.intercept."),
        scan_dt=_num(icf, "scan_dt", 0.05, "planner.intercept."),
    )

    est_d = pl.get("estimator", {})
    _check_keys(est_d, set(_SCHEMA["planner"]["estimator"]), "planner.estimator.")
    window = est_d.get("window", 10)
    if isinstance(window, bool) or not isinstance(window, int) or window < 1:
        raise ScenarioError("'planner.estimator.window' must be a positive integer")
    try:
        est = EstimatorConfig(
            noise=NoiseConfig(
                q_diag=_vec3(est_d, "q_diag", [0.01, 0.01, 0.02], "planner.estimator."),
                r_diag=_vec3(est_d, "r_diag", [0.005, 0.005, 0.01], "planner.estimator."),
            ),
            window=window,
            gate=_num(est_d, "gate", None, "planner.estimator.", allow_none=True),
        )
    except ValueError as e:
        raise ScenarioError(f"planner.estimator: {e}") from None

    pred_d = pl.get("predictor", {})
    _check_keys(pred_d, set(_SCHEMA["planner"]["predictor"]), "planner.predictor.")
    hist_len = pred_d.get("history_len", 20)
    if isinstance(hist_len, bool) or not isinstance(hist_len, int) or hist_len < 4:
        raise ScenarioError("'planner.predictor.history_len' must be an integer >= 4")
    pred = PredictorConfig(
        history_len=hist_len,
        horizon=_num(pred_d, "horizon", 3.0, "planner.predictor."),
    )

    poly_d = pl.get("poly", {})
    _check_keys(poly_d, set(_SCHEMA["planner"]["poly"]), "planner.poly.")
    yaw_mode = poly_d.get("yaw_mode", "target_heading")
    if yaw_mode not in ("target_heading", "velocity"):
        raise ScenarioError("'planner.poly.yaw_mode' must be 'target_heading' or 'velocity'")
    poly = PolyPlannerConfig(
        min_duration=_num(poly_d, "min_duration", 0.3, "planner.poly."),
        yaw_mode=yaw_mode,
    )

    uav_d = pl.get("uav", {})
    _check_keys(uav_d, set(_SCHEMA["planner"]["uav"]), "planner.uav.")
    land = uav_d.get("land_when_stopped", False)
    if not isinstance(land, bool):
        raise ScenarioError("'planner.uav.land_when_stopped' must be a boolean")
    uav = UavConfig(
        altitude=_num(uav_d, "altitude", 1.0, "planner.uav."),
        land_when_stopped=land,
        land_duration=_num(uav_d, "land_duration", 3.0, "planner.uav."),
        stop_speed_threshold=_num(uav_d, "stop_speed_threshold", 0.05, "planner.uav."),
        stop_hold_s=_num(uav_d, "stop_hold_s", 2.0, "planner.uav."),
    )

    suc = doc.get("success", {})
    _check_keys(suc, set(_SCHEMA["success"]), "success.")

    return Scenario(
        platform=platform,
        limits=limits,
        observer_start=observer_start,
        target_start=target_start,
        profile=profile,
        sensor=sensor,
        scp=scp,
        intercept=intercept,
        estimator=est,
        predictor=pred,
        poly=poly,
        uav=uav,
        standoff=_num(suc, "standoff", 1.25, "success."),
        success_pos_tol=_num(suc, "pos_tol", 0.25, "success."),
        success_ang_tol=_num(suc, "ang_tol", 0.20, "success."),
        duration=_num(run, "duration", 30.0, "run."),
        tick_hz=tick_hz,
        seed=seed,
        prediction_enabled=bool(run.get("prediction_enabled", True)),
        measure_latency=bool(run.get("measure_latency", False)),
    )


def load(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return from_dict(doc)
