"""Closed-loop trial executor, metrics, batching, and sweep experiments.

One trial advances the world and the autonomy stack in lockstep at tick_hz.
Every tick runs, in order: sense, target twist estimation, EKF predict
(plus measurement updates when available), polynomial fit over the state
history, intercept solve, planning, and application of the first control.
The autonomy side sees only measurements and its own commanded twists;
world truth is used exclusively for sensing and metrics.

Determinism: a trial is a pure function of (Scenario, seed). Wall-clock
tick latencies are recorded only when scenario.measure_latency is set;
otherwise the logged latency fields are zero so emitted files are
byte-stable.
"""

from __future__ import annotations

import math
import statistics
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator as est_mod
from . import intercept as icp_mod
from . import poly_planner, predictor, scp_planner, simworld
from .geometry import PlatformClass, Pose2, Twist, se2_compose, se2_inverse, wrap_angle
from .scenario import Scenario

SCHEMA_VERSION = 1

TICK_COLUMNS = [
    "t_s", "truth_obs_x", "truth_obs_y", "truth_obs_z", "truth_obs_yaw",
    "truth_tgt_x", "truth_tgt_y", "truth_tgt_yaw", "meas_valid", "meas_corrupt",
    "est_x", "est_y", "est_theta", "cov_trace", "vhat_t", "omegahat_t",
    "t_star", "intercept_feasible", "goal_x", "goal_y", "goal_theta",
    "cmd_v_or_vx", "cmd_vy", "cmd_vz", "cmd_omega",
    "along_err", "cross_err", "ang_err", "tick_latency_ms",
]


def error_decompose(observer: Pose2, target: Pose2, standoff: float):
    """(along, cross, angular) error of the observer against the desired
    standoff pose, expressed in the target frame."""
    desired = se2_compose(target, Pose2(-standoff, 0.0, 0.0))
    ex = observer.x - desired.x
    ey = observer.y - desired.y
    c, s = math.cos(target.theta), math.sin(target.theta)
    along = ex * c + ey * s
    cross = ex * s - ey * c
    ang = wrap_angle(observer.theta - target.theta)
    return along, cross, ang


@dataclass
class TrialResult:
    success: bool
    final_along_m: float
    final_cross_m: float
    final_ang_rad: float
    sk_pos_mean_m: float
    sk_pos_std_m: float
    sk_ang_mean_rad: float
    sk_ang_std_rad: float
    target_lost: bool
    tick_latency_ms: dict
    ticks: int
    seed: int
    fail_reason: str | None = None

    @property
    def final_pos_m(self) -> float:
        return math.hypot(self.final_along_m, self.final_cross_m)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "success": self.success,
            "final_along_m": self.final_along_m,
            "final_cross_m": self.final_cross_m,
            "final_pos_m": self.final_pos_m,
            "final_ang_rad": self.final_ang_rad,
            "sk_pos_mean_m": self.sk_pos_mean_m,
            "sk_pos_std_m": self.sk_pos_std_m,
            "sk_ang_mean_rad": self.sk_ang_mean_rad,
            "sk_ang_std_rad": self.sk_ang_std_rad,
            "target_lost": self.target_lost,
            "tick_latency_ms": self.tick_latency_ms,
            "ticks": self.ticks,
            "seed": self.seed,
            "fail_reason": self.fail_reason,
        }


@dataclass
class _Telemetry:
    est: tuple = (math.nan, math.nan, math.nan)
    cov_trace: float = math.nan
    cov_pos_trace: float = math.inf
    vhat: float = math.nan
    omegahat: float = math.nan
    t_star: float = math.nan
    feasible: bool = False
    goal: tuple = (math.nan, math.nan, math.nan)
    meas_count: int = 0
    meas_corrupt: bool = False


def _body_increment(cmd: Twist, platform: PlatformClass, dt: float) -> Pose2:
    """SE2 increment the observer's body frame moved by over one tick."""
    if platform is PlatformClass.COUPLED_GROUND:
        return Pose2(cmd.vx * dt, 0.0, cmd.omega * dt)
    return Pose2(cmd.vx * dt, cmd.vy * dt, cmd.omega * dt)


class Autonomy:
    """The full perception-to-planning stack for one trial.

    Only measurement poses and the stack's own commanded twists enter here;
    there is deliberately no import of, or reference to, world truth.
    """

    def __init__(self, s: Scenario):
        self.s = s
        self.dt = s.tick_dt
        self.noise = s.estimator.noise
        self.ekf: est_mod.EkfState | None = None
        self.hist = est_mod.StateHistory(dt=self.dt, capacity=s.estimator.window + 1)
        self.poses = predictor.PoseHistory(length=s.predictor.history_len, dt=self.dt)
        self.model = icp_mod.ReachabilityModel(s.platform, s.limits)
        self.last_cmd = Twist()
        self.prev_plan: scp_planner.PlanTrajectory | None = None
        self.held_goal: Pose2 | None = None
        self.altitude = s.observer_start.z
        self._stop_timer = 0.0
        self.landing = False
        self.t = 0.0

    # -- pipeline tick ------------------------------------------------------

    def tick(self, measurements, trace=None) -> tuple[Twist, _Telemetry]:
        s = self.s
        tel = _Telemetry()
        tel.meas_count = len(measurements)
        tel.meas_corrupt = any(m.corrupted for m in measurements)
        note = trace.append if trace is not None else (lambda *_: None)
        note("sense")
        self.t += self.dt

        twist_est = est_mod.estimate_target_twist(self.hist, s.estimator.window)
        note("twist_estimate")

        poses = [m.pose for m in measurements]
        if self.ekf is None:
            if poses:
                cov0 = np.diag(self.noise.r_diag) * 10.0
                self.ekf = est_mod.EkfState(poses[0], cov0)
                note("ekf_init")
                poses = poses[1:]
            else:
                return self._finish(Twist(), tel, note)
        else:
            self.ekf = est_mod.ekf_predict(self.ekf, self.last_cmd, twist_est,
                                           self.dt, self.noise)
            note("ekf_predict")
        for z in poses:
            if s.estimator.gate is not None:
                gap = math.hypot(z.x - self.ekf.mean.x, z.y - self.ekf.mean.y)
                if gap > s.estimator.gate:
                    continue
            self.ekf = est_mod.ekf_update(self.ekf, z, self.noise)
        if poses:
            note("ekf_update")

        mean = self.ekf.mean
        self.hist.append(mean, self.last_cmd, self.t)
        self.poses.append(mean)
        tel.est = (mean.x, mean.y, mean.theta)
        tel.cov_trace = float(np.trace(self.ekf.cov))
        tel.cov_pos_trace = float(self.ekf.cov[0, 0] + self.ekf.cov[1, 1])
        tel.vhat = twist_est.v_t if twist_est.valid else math.nan
        tel.omegahat = twist_est.omega_t if twist_est.valid else math.nan

        target_at, tgt_twist, t_star, feasible = self._goal_point(
            mean, measurements, twist_est, note)
        tel.t_star = t_star
        tel.feasible = feasible

        goal = se2_compose(target_at, Pose2(-s.standoff, 0.0, 0.0))
        tel.goal = (goal.x, goal.y, goal.theta)

        cmd = self._plan(goal, tgt_twist, t_star, twist_est, note)
        return self._finish(cmd, tel, note)

    def _goal_point(self, mean: Pose2, measurements, twist_est, note):
        """Predicted target pose to intercept, its twist there, and t*."""
        s = self.s
        if s.prediction_enabled and self.poses.full:
            traj = predictor.fit(self.poses, horizon=s.predictor.horizon)
            note("predictor_fit")
            now = traj.shifted(traj.t0_offset)
            t_cap = min(s.intercept.t_max, now.t_max)
            sol = icp_mod.solve_intercept(now, self.model, t_max=t_cap,
                                          delta=s.intercept.delta,
                                          scan_dt=s.intercept.scan_dt)
            note("intercept")
            pose = predictor.eval_pose(now, sol.t_star)
            tw = predictor.eval_derivative(now, sol.t_star)
            return pose, tw, sol.t_star, sol.feasible
        if not s.prediction_enabled:
            if measurements:
                self.held_goal = mean
            elif self.held_goal is not None:
                inc = _body_increment(self.last_cmd, s.platform, self.dt)
                self.held_goal = se2_compose(se2_inverse(inc), self.held_goal)
            target_at = self.held_goal if self.held_goal is not None else mean
            return target_at, Twist(), 0.0, True
        # prediction enabled but the history is still filling: pursue the mean
        return mean, Twist(), 0.0, True

    def _plan(self, goal: Pose2, tgt_twist: Twist, t_star: float,
              twist_est, note) -> Twist:
        s = self.s
        if s.platform is PlatformClass.COUPLED_GROUND:
            warm = (scp_planner.shift_warm_start(self.prev_plan)
                    if self.prev_plan is not None else None)
            plan = scp_planner.solve_scp(goal, s.limits, s.scp, warm=warm)
            self.prev_plan = plan
            note("plan_scp")
            v, om = plan.controls[0]
            return Twist(vx=float(v), omega=float(om))

        # holonomic: single-segment polynomial to the intercept state
        c, ssin = math.cos(-self.last_cmd.omega * self.dt), math.sin(-self.last_cmd.omega * self.dt)
        vx0 = c * self.last_cmd.vx - ssin * self.last_cmd.vy
        vy0 = ssin * self.last_cmd.vx + c * self.last_cmd.vy
        dims = 3 if s.platform is PlatformClass.HOLONOMIC_3D else 2
        if dims == 3:
            if s.uav.land_when_stopped and not self.landing:
                if twist_est.valid and abs(twist_est.v_t) < s.uav.stop_speed_threshold:
                    self._stop_timer += self.dt
                else:
                    self._stop_timer = 0.0
                if self._stop_timer >= s.uav.stop_hold_s:
                    self.landing = True
            z_des = 0.0 if self.landing else s.uav.altitude
            z_err = z_des - self.altitude
        else:
            z_err = 0.0
        T = max(t_star, s.poly.min_duration)
        if self.landing:
            T = max(T, s.uav.land_duration)
        if s.poly.yaw_mode == "velocity" and math.hypot(tgt_twist.vx, tgt_twist.vy) > 1e-6:
            psi1 = math.atan2(tgt_twist.vy, tgt_twist.vx)
        else:
            psi1 = goal.theta
        start = poly_planner.BoundaryState(
            x=poly_planner.AxisState(0.0, vx0, 0.0, 0.0),
            y=poly_planner.AxisState(0.0, vy0, 0.0, 0.0),
            z=poly_planner.AxisState(0.0, self.last_cmd.vz, 0.0, 0.0),
            psi=0.0, psi_dot=self.last_cmd.omega,
        )
        end = poly_planner.BoundaryState(
            x=poly_planner.AxisState(goal.x, tgt_twist.vx, 0.0, 0.0),
            y=poly_planner.AxisState(goal.y, tgt_twist.vy, 0.0, 0.0),
            z=poly_planner.AxisState(z_err, 0.0, 0.0, 0.0),
            psi=psi1, psi_dot=tgt_twist.omega,
        )
        seg = poly_planner.min_snap_segment(start, end, T, dims=dims)
        note("plan_poly")
        _, tw, _ = poly_planner.segment_state(seg, min(self.dt, T))
        return tw

    def _finish(self, cmd: Twist, tel: _Telemetry, note) -> tuple[Twist, _Telemetry]:
        cmd = simworld.clamp_twist(cmd, self.s.platform, self.s.limits)
        self.last_cmd = cmd
        self.altitude = max(self.altitude + cmd.vz * self.dt, 0.0)
        note("apply")
        return cmd, tel


def run_trial(s: Scenario, collect_rows: bool = True, stage_trace: list | None = None):
    """Execute one closed-loop trial. Returns (TrialResult, rows)."""
    rng_target, rng_noise, rng_corrupt = simworld.trial_substreams(s.seed)
    world = simworld.WorldState(s.observer_start, s.target_start, 0.0)
    motion = simworld.TargetMotion(s.profile, s.target_start, rng_target)
    sensor = simworld.SensorSim(s.sensor, rng_noise, rng_corrupt)
    auto = Autonomy(s)

    n_ticks = int(round(s.duration * s.tick_hz))
    dt = s.tick_dt
    pending: deque = deque()
    rows = [] if collect_rows else None
    latencies = []
    halt_t: float | None = None
    sk_started = False
    sk_pos: list[float] = []
    sk_ang: list[float] = []
    lost = False
    lost_timer = 0.0
    fail_reason = None
    along = cross = ang = math.nan

    for k in range(1, n_ticks + 1):
        t_prev = (k - 1) * dt
        t_now = k * dt
        fresh = sensor.poll(world, t_now)
        if s.sensor.latency_ticks == 0:
            delivered = fresh
        else:
            pending.append((k + s.sensor.latency_ticks, fresh))
            delivered = []
            while pending and pending[0][0] <= k:
                delivered.extend(pending.popleft()[1])

        tick_trace = [] if stage_trace is not None else None
        t0 = time.perf_counter()
        try:
            cmd, tel = auto.tick(delivered, trace=tick_trace)
        except Exception as e:  # planner failure fails the trial, not the batch
            if fail_reason is None:
                fail_reason = f"{type(e).__name__}: {e}"
            cmd, tel = Twist(), _Telemetry(meas_count=len(delivered))
        lat_ms = (time.perf_counter() - t0) * 1e3
        if stage_trace is not None:
            stage_trace.append(tick_trace)
        if s.measure_latency:
            latencies.append(lat_ms)

        world.observer_pose = simworld.step_observer(
            world.observer_pose, s.platform, cmd, dt, s.limits)
        world.target_pose = motion.step(t_prev, dt)
        world.t = t_now
        if motion.halted and halt_t is None:
            halt_t = t_now

        along, cross, ang = error_decompose(
            world.observer_pose.planar(), world.target_pose, s.standoff)
        pos_err = math.hypot(along, cross)

        if not sk_started and pos_err < 2 * s.success_pos_tol \
                and abs(ang) < 2 * s.success_ang_tol:
            sk_started = True
        if sk_started and (halt_t is None or t_now <= halt_t):
            sk_pos.append(pos_err)
            sk_ang.append(abs(ang))

        if tel.meas_count == 0 and tel.cov_pos_trace > 25.0:
            lost_timer += dt
        else:
            lost_timer = 0.0
        if lost_timer > 5.0:
            lost = True

        if rows is not None:
            o, g = world.observer_pose, world.target_pose
            rows.append((
                t_now, o.x, o.y, o.z, o.yaw, g.x, g.y, g.theta,
                1.0 if tel.meas_count else 0.0, 1.0 if tel.meas_corrupt else 0.0,
                tel.est[0], tel.est[1], tel.est[2], tel.cov_trace,
                tel.vhat, tel.omegahat, tel.t_star,
                1.0 if tel.feasible else 0.0,
                tel.goal[0], tel.goal[1], tel.goal[2],
                cmd.vx, cmd.vy, cmd.vz, cmd.omega,
                along, cross, ang,
                lat_ms if s.measure_latency else 0.0,
            ))

    if latencies:
        lat_summary = {
            "median": float(np.median(latencies)),
            "p95": float(np.percentile(latencies, 95)),
        }
    else:
        lat_summary = {"median": 0.0, "p95": 0.0}

    final_pos = math.hypot(along, cross)
    success = (final_pos <= s.success_pos_tol and abs(ang) <= s.success_ang_tol
               and not lost and fail_reason is None)
    result = TrialResult(
        success=success,
        final_along_m=along,
        final_cross_m=cross,
        final_ang_rad=ang,
        sk_pos_mean_m=float(np.mean(sk_pos)) if sk_pos else math.nan,
        sk_pos_std_m=float(np.std(sk_pos)) if sk_pos else math.nan,
        sk_ang_mean_rad=float(np.mean(sk_ang)) if sk_ang else math.nan,
        sk_ang_std_rad=float(np.std(sk_ang)) if sk_ang else math.nan,
        target_lost=lost,
        tick_latency_ms=lat_summary,
        ticks=n_ticks,
        seed=s.seed,
        fail_reason=fail_reason,
    )
    return result, rows


def format_ticks_csv(rows) -> str:
    lines = [",".join(TICK_COLUMNS)]
    for row in rows:
        lines.append(",".join("%.9g" % v for v in row))
    return "\n".join(lines) + "\n"


@dataclass
class BatchReport:
    n_trials: int
    n_success: int
    metrics: dict  # name -> {"mean": float, "std": float}
    trials: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_trials": self.n_trials,
            "n_success": self.n_success,
            "success_rate": f"{self.n_success}/{self.n_trials}",
            "metrics": self.metrics,
            "trials": [t.to_dict() for t in self.trials],
        }


_BATCH_METRICS = (
    ("final_pos_m", lambda t: t.final_pos_m),
    ("final_ang_rad", lambda t: abs(t.final_ang_rad)),
    ("sk_pos_mean_m", lambda t: t.sk_pos_mean_m),
    ("sk_pos_std_m", lambda t: t.sk_pos_std_m),
    ("sk_ang_mean_rad", lambda t: t.sk_ang_mean_rad),
    ("sk_ang_std_rad", lambda t: t.sk_ang_std_rad),
)


def _trial_worker(s: Scenario) -> TrialResult:
    return run_trial(s, collect_rows=False)[0]


def run_batch(s: Scenario, n: int, base_seed: int | None = None,
              parallel: int | None = None) -> BatchReport:
    """n independent trials with seeds base_seed + i, aggregated in seed
    order (identical output with or without parallelism)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if base_seed is None:
        base_seed = s.seed
    scenarios = [s.with_overrides(seed=base_seed + i) for i in range(n)]
    if parallel and parallel > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_trial_worker, scenarios))
    else:
        results = [_trial_worker(sc) for sc in scenarios]
    metrics = {}
    for name, fn in _BATCH_METRICS:
        vals = np.array([fn(t) for t in results], dtype=float)
        vals = vals[np.isfinite(vals)]
        metrics[name] = {
            "mean": float(np.mean(vals)) if vals.size else math.nan,
            "std": float(np.std(vals)) if vals.size else math.nan,
        }
    return BatchReport(
        n_trials=n,
        n_success=sum(1 for t in results if t.success),
        metrics=metrics,
        trials=results,
    )


def _arm_scenarios(s: Scenario):
    return ((True, s.with_overrides(prediction_enabled=True)),
            (False, s.with_overrides(prediction_enabled=False)))


def dropout_sweep(s: Scenario, durations, n_per_cell: int,
                  base_seed: int | None = None, interval_s: float = 5.0,
                  parallel: int | None = None) -> list:
    """Fig.-10-style grid: dropout duration x prediction arm."""
    if not durations:
        raise ValueError("durations must be non-empty")
    rows = []
    for d in durations:
        drop = None if d <= 0 else simworld.DropoutSchedule(window_s=float(d),
                                                            interval_s=interval_s)
        cell = s.with_overrides(sensor=replace(s.sensor, dropout=drop))
        for arm, sc in _arm_scenarios(cell):
            rep = run_batch(sc, n_per_cell, base_seed=base_seed, parallel=parallel)
            rows.append({
                "dropout_s": float(d),
                "prediction": int(arm),
                "success_rate": rep.n_success / rep.n_trials,
                "n_success": rep.n_success,
                "n_trials": rep.n_trials,
                "sk_pos_mean": rep.metrics["sk_pos_mean_m"]["mean"],
                "sk_pos_std": rep.metrics["sk_pos_std_m"]["mean"],
                "sk_ang_mean": rep.metrics["sk_ang_mean_rad"]["mean"],
                "sk_ang_std": rep.metrics["sk_ang_std_rad"]["mean"],
            })
    return rows


def corruption_sweep(s: Scenario, rates_hz, p_corrupts, n_per_cell: int,
                     base_seed: int | None = None,
                     parallel: int | None = None) -> list:
    """Fig.-12-style grid: (sensor rate, corruption probability) x arm."""
    if not rates_hz or not p_corrupts:
        raise ValueError("grid lists must be non-empty")
    rows = []
    for rate in rates_hz:
        for p in p_corrupts:
            cell = s.with_overrides(
                sensor=replace(s.sensor, rate_hz=float(rate), p_corrupt=float(p)))
            for arm, sc in _arm_scenarios(cell):
                rep = run_batch(sc, n_per_cell, base_seed=base_seed,
                                parallel=parallel)
                rows.append({
                    "rate_hz": float(rate),
                    "p_corrupt": float(p),
                    "prediction": int(arm),
                    "success_rate": rep.n_success / rep.n_trials,
                    "n_success": rep.n_success,
                    "n_trials": rep.n_trials,
                    "sk_pos_mean": rep.metrics["sk_pos_mean_m"]["mean"],
                    "sk_pos_std": rep.metrics["sk_pos_std_m"]["mean"],
                    "sk_ang_mean": rep.metrics["sk_ang_mean_rad"]["mean"],
                    "sk_ang_std": rep.metrics["sk_ang_std_rad"]["mean"],
                })
    return rows
