"""Receding-horizon sequential convex program for coupled platforms.

Builds a QP over the stacked decision vector (x0, u0, x1, u1, ..., xN),
n = 5N+3, with linearized discrete-time unicycle/bicycle dynamics, velocity
and turning-rate limits, and quadratic goal-deviation costs; iterates
linearize-solve until the iterate stops moving.

Notes on the formulation:
  - The turning limit couples omega to the linearization speed through the
    minimum turning radius; |v_lin| (not signed v_lin) is used so reverse
    motion keeps a nonempty steering interval.
  - A goal behind the vehicle (or inside the turning radius at a large
    bearing) can optionally add a linear bias on the first few velocity
    variables so the optimizer prefers backing out before re-approaching
    ("lateral correction").
  - Stage deviation weights apply to every stage state by default; set
    stage_deviation_mode="terminal" to fold them onto the final state
    instead (the two are equivalent up to a terminal-weight rescale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import qp
from .geometry import PlatformLimits, Pose2, wrap_angle

LATERAL_BEARING_THRESHOLD = math.pi / 6.0


class ScpInfeasible(RuntimeError):
    """QP subproblem reported infeasibility (usually an over-tight trust
    region); carries the SCP iteration index."""

    def __init__(self, iteration: int):
        super().__init__(f"QP infeasible at SCP iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class ScpConfig:
    n_steps: int = 20
    dt: float = 0.1
    w_v: float = 0.1
    w_omega: float = 0.1
    w_ip: float = 0.5
    w_itheta: float = 0.1
    w_p: float = 50.0
    w_theta: float = 10.0
    eps_converge: float = 1e-3
    max_scp_iters: int = 15
    trust_radius: float | None = 2.0
    w_rev: float = 1.0
    k_bias: int = 3
    stage_deviation_mode: str = "stage"
    qp_tol: float = 1e-7
    qp_max_iter: int = 4000

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if self.dt <= 0 or self.eps_converge <= 0:
            raise ValueError("dt and eps_converge must be positive")
        if min(self.w_v, self.w_omega, self.w_ip, self.w_itheta,
               self.w_p, self.w_theta, self.w_rev) < 0:
            raise ValueError("weights must be non-negative")
        if self.stage_deviation_mode not in ("stage", "terminal"):
            raise ValueError("stage_deviation_mode must be 'stage' or 'terminal'")


@dataclass
class PlanTrajectory:
    states: np.ndarray  # (N+1, 3)
    controls: np.ndarray  # (N, 2) of (v, omega)
    objective: float = 0.0
    scp_iters: int = 0
    converged: bool = False
    objective_trace: list = field(default_factory=list, repr=False)

    def stacked(self) -> np.ndarray:
        N = self.controls.shape[0]
        z = np.empty(5 * N + 3)
        for k in range(N):
            z[5 * k : 5 * k + 3] = self.states[k]
            z[5 * k + 3 : 5 * k + 5] = self.controls[k]
        z[5 * N :] = self.states[N]
        return z

    @staticmethod
    def from_stacked(z: np.ndarray, n_steps: int) -> "PlanTrajectory":
        states = np.empty((n_steps + 1, 3))
        controls = np.empty((n_steps, 2))
        for k in range(n_steps):
            states[k] = z[5 * k : 5 * k + 3]
            controls[k] = z[5 * k + 3 : 5 * k + 5]
        states[n_steps] = z[5 * n_steps :]
        return PlanTrajectory(states, controls)


def lateral_correction_active(goal: Pose2, r_min: float) -> bool:
    """True when the goal sits behind the vehicle or inside the turning
    radius at a substantial bearing."""
    if goal.x < 0.0:
        return True
    rng = math.hypot(goal.x, goal.y)
    if rng >= r_min:
        return False
    bearing = abs(math.atan2(goal.y, goal.x)) if rng > 0 else 0.0
    return bearing > LATERAL_BEARING_THRESHOLD


def plan_cost(states: np.ndarray, controls: np.ndarray, goal: Pose2,
              cfg: ScpConfig) -> float:
    """The quadratic objective evaluated on an explicit trajectory."""
    N = controls.shape[0]
    xg, yg, thg = goal.x, goal.y, goal.theta
    J = float(cfg.w_v * np.sum(controls[:, 0] ** 2)
              + cfg.w_omega * np.sum(controls[:, 1] ** 2))
    if cfg.stage_deviation_mode == "stage":
        dev = states[:N] - (xg, yg, thg)
        J += float(cfg.w_ip * np.sum(dev[:, 0] ** 2 + dev[:, 1] ** 2)
                   + cfg.w_itheta * np.sum(dev[:, 2] ** 2))
        wp, wth = cfg.w_p, cfg.w_theta
    else:
        wp, wth = cfg.w_p + N * cfg.w_ip, cfg.w_theta + N * cfg.w_itheta
    dN = states[N] - (xg, yg, thg)
    J += wp * (dN[0] ** 2 + dN[1] ** 2) + wth * dN[2] ** 2
    return J


def build_qp(goal: Pose2, limits: PlatformLimits, cfg: ScpConfig,
             lin: PlanTrajectory, trust_radius: float | None = None) -> qp.QProblem:
    """Assemble the convex subproblem about the linearization trajectory.

    trust_radius overrides cfg.trust_radius (the solver adapts it); the
    initial-state variables are exempt from the box since they are pinned
    by the x0 = 0 equality rows.
    """
    if trust_radius is None:
        trust_radius = cfg.trust_radius
    N = cfg.n_steps
    if lin.states.shape != (N + 1, 3) or lin.controls.shape != (N, 2):
        raise ValueError("linearization dimensions inconsistent with config")
    n = 5 * N + 3
    xg, yg, thg = goal.x, goal.y, goal.theta

    Hd = np.zeros(n)
    g = np.zeros(n)
    if cfg.stage_deviation_mode == "stage":
        w_sp, w_sth = cfg.w_ip, cfg.w_itheta
        w_tp, w_tth = cfg.w_p, cfg.w_theta
    else:
        w_sp = w_sth = 0.0
        w_tp, w_tth = cfg.w_p + N * cfg.w_ip, cfg.w_theta + N * cfg.w_itheta
    for k in range(N):
        s = 5 * k
        Hd[s] = Hd[s + 1] = 2.0 * w_sp
        Hd[s + 2] = 2.0 * w_sth
        g[s] = -2.0 * w_sp * xg
        g[s + 1] = -2.0 * w_sp * yg
        g[s + 2] = -2.0 * w_sth * thg
        Hd[s + 3] = 2.0 * cfg.w_v
        Hd[s + 4] = 2.0 * cfg.w_omega
    sN = 5 * N
    Hd[sN] = Hd[sN + 1] = 2.0 * w_tp
    Hd[sN + 2] = 2.0 * w_tth
    g[sN] = -2.0 * w_tp * xg
    g[sN + 1] = -2.0 * w_tp * yg
    g[sN + 2] = -2.0 * w_tth * thg

    if cfg.w_rev > 0.0 and lateral_correction_active(goal, limits.r_min):
        for k in range(min(cfg.k_bias, N)):
            g[5 * k + 3] += cfg.w_rev

    me = 3 + 3 * N
    A_eq = np.zeros((me, n))
    b_eq = np.zeros(me)
    A_eq[0, 0] = A_eq[1, 1] = A_eq[2, 2] = 1.0
    dt = cfg.dt
    for k in range(N):
        th_l = lin.states[k, 2]
        v_l = lin.controls[k, 0]
        c, s = math.cos(th_l), math.sin(th_l)
        r = 3 + 3 * k
        xk, uk, xk1 = 5 * k, 5 * k + 3, 5 * (k + 1)
        # x_{k+1} - x_k - dt c v_k + dt v_l s theta_k = dt v_l s th_l
        A_eq[r, xk1] = 1.0
        A_eq[r, xk] = -1.0
        A_eq[r, uk] = -dt * c
        A_eq[r, xk + 2] = dt * v_l * s
        b_eq[r] = dt * v_l * s * th_l
        # y_{k+1} - y_k - dt s v_k - dt v_l c theta_k = -dt v_l c th_l
        A_eq[r + 1, xk1 + 1] = 1.0
        A_eq[r + 1, xk + 1] = -1.0
        A_eq[r + 1, uk] = -dt * s
        A_eq[r + 1, xk + 2] = -dt * v_l * c
        b_eq[r + 1] = -dt * v_l * c * th_l
        # theta_{k+1} - theta_k - dt omega_k = 0
        A_eq[r + 2, xk1 + 2] = 1.0
        A_eq[r + 2, xk + 2] = -1.0
        A_eq[r + 2, uk + 1] = -dt

    rows = []
    lbs = []
    ubs = []
    ctrl = np.zeros((2 * N, n))
    ctrl_lb = np.empty(2 * N)
    ctrl_ub = np.empty(2 * N)
    for k in range(N):
        ctrl[2 * k, 5 * k + 3] = 1.0
        ctrl_lb[2 * k] = -limits.v_max
        ctrl_ub[2 * k] = limits.v_max
        ctrl[2 * k + 1, 5 * k + 4] = 1.0
        om_cap = abs(lin.controls[k, 0]) / limits.r_min
        ctrl_lb[2 * k + 1] = -om_cap
        ctrl_ub[2 * k + 1] = om_cap
    rows.append(ctrl)
    lbs.append(ctrl_lb)
    ubs.append(ctrl_ub)
    if trust_radius is not None:
        z_lin = lin.stacked()
        box = np.eye(n)[3:]  # x0 entries are pinned by equality rows
        rows.append(box)
        lbs.append(z_lin[3:] - trust_radius)
        ubs.append(z_lin[3:] + trust_radius)

    return qp.QProblem(
        H=np.diag(Hd), g=g, A_eq=A_eq, b_eq=b_eq,
        A_in=np.vstack(rows), lb=np.concatenate(lbs), ub=np.concatenate(ubs),
    )


def _straight_line_start(goal: Pose2, limits: PlatformLimits,
                         cfg: ScpConfig) -> PlanTrajectory:
    N = cfg.n_steps
    rng = math.hypot(goal.x, goal.y)
    v0 = min(max(rng / (N * cfg.dt), 0.1 * limits.v_max), limits.v_max)
    frac = np.linspace(0.0, 1.0, N + 1)
    states = np.column_stack([frac * goal.x, frac * goal.y, frac * goal.theta])
    controls = np.column_stack([np.full(N, v0), np.zeros(N)])
    return PlanTrajectory(states, controls)


def _guidance_rollout(goal: Pose2, limits: PlatformLimits,
                      cfg: ScpConfig) -> PlanTrajectory:
    """Dynamically feasible initializer: a proportional pose controller
    (with reverse handling) rolled through the unicycle over the horizon.

    Zero dynamics defect by construction, so SCP starts from an honest
    linearization even for tight or rearward maneuvers.
    """
    N = cfg.n_steps
    states = np.zeros((N + 1, 3))
    controls = np.zeros((N, 2))
    x = y = th = 0.0
    for k in range(N):
        dx, dy = goal.x - x, goal.y - y
        rho = math.hypot(dx, dy)
        if rho > 0.1:
            bearing = wrap_angle(math.atan2(dy, dx) - th)
            sign = 1.0
            if abs(bearing) > 0.6 * math.pi:
                sign = -1.0
                bearing = wrap_angle(bearing + math.pi)
            remaining = (N - k) * cfg.dt
            v = sign * min(limits.v_max, max(rho / remaining, 0.3 * limits.v_max))
            om_cap = abs(v) / limits.r_min
            om = min(max(2.0 * bearing, -om_cap), om_cap)
        else:
            err = wrap_angle(goal.theta - th)
            v = 0.3 * limits.v_max if err >= 0 else 0.3 * limits.v_max
            om_cap = abs(v) / limits.r_min
            om = min(max(2.0 * err, -om_cap), om_cap)
            if abs(err) < 0.05:
                v = 0.0
                om = 0.0
        controls[k] = (v, om)
        x, y, th = unicycle_step((x, y, th), v, om, cfg.dt)
        states[k + 1] = (x, y, th)
    return PlanTrajectory(states, controls)


def shift_warm_start(plan: PlanTrajectory) -> PlanTrajectory:
    """Receding-horizon warm start: drop the first step, duplicate the last."""
    states = np.vstack([plan.states[1:], plan.states[-1:]])
    controls = np.vstack([plan.controls[1:], plan.controls[-1:]])
    return PlanTrajectory(states, controls)


_DEFECT_WEIGHT = 1e3
_DEBUG = bool(int(__import__("os").environ.get("ICP_SCP_DEBUG", "0")))


def dynamics_defect(plan: PlanTrajectory, dt: float) -> float:
    """Total violation of the nonlinear unicycle step map along the plan."""
    total = 0.0
    for k in range(plan.controls.shape[0]):
        nxt = unicycle_step(plan.states[k], plan.controls[k, 0],
                            plan.controls[k, 1], dt)
        total += float(np.linalg.norm(plan.states[k + 1] - nxt))
    return total


def solve_scp(goal: Pose2, limits: PlatformLimits, cfg: ScpConfig,
              warm: PlanTrajectory | None = None) -> PlanTrajectory:
    """Iterate build_qp / solve until consecutive QP solutions move less
    than eps_converge (2-norm) or max_scp_iters is reached.

    Stability machinery around the plain relinearize/solve loop:
      - cold starts take the better (by defect-penalized merit) of the
        straight-line interpolation and a feasible guidance rollout;
      - once consecutive QP steps point against each other the
        relinearization point is damped (sticky Krasnoselskii averaging),
        which collapses the period-2 limit cycles this iteration exhibits
        near tight-turning fixed points;
      - nearly-collinear geometric tails are secant-extrapolated;
      - a step that blows the merit up by more than 3x is rejected and the
        trust region shrunk (divergence guard).
    The converged flag additionally requires a small measured dynamics
    defect, so downstream consumers can trust converged plans.
    """
    if not all(math.isfinite(v) for v in (goal.x, goal.y, goal.theta)):
        raise ValueError("goal must be finite")

    def merit(p: PlanTrajectory) -> float:
        return (plan_cost(p.states, p.controls, goal, cfg)
                + _DEFECT_WEIGHT * dynamics_defect(p, cfg.dt))

    if warm is not None:
        lin = warm
    else:
        cands = [_straight_line_start(goal, limits, cfg),
                 _guidance_rollout(goal, limits, cfg)]
        lin = min(cands, key=merit)
    tr = cfg.trust_radius
    merit_lin = merit(lin)
    z_qp_prev = None
    step_prev = None
    z_warm = lin.stacked()
    y_warm = None
    converged = False
    iters = 0
    trace = []
    best_plan = lin
    best_merit = merit_lin
    for i in range(cfg.max_scp_iters):
        prob = build_qp(goal, limits, cfg, lin, trust_radius=tr)
        sol = qp.solve(prob, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter,
                       z0=z_warm, y0=y_warm, track_history=False)
        if sol.status is qp.QpStatus.INFEASIBLE:
            raise ScpInfeasible(i)
        y_warm = np.concatenate([sol.lam_eq, sol.mu_in])
        z_new = sol.z
        z_warm = z_new
        iters = i + 1
        cand = PlanTrajectory.from_stacked(z_new, cfg.n_steps)
        merit_new = merit(cand)
        delta = (float(np.linalg.norm(z_new - z_qp_prev))
                 if z_qp_prev is not None else math.inf)
        step = z_new - z_qp_prev if z_qp_prev is not None else None
        z_qp_prev = z_new
        trace.append(plan_cost(cand.states, cand.controls, goal, cfg))
        if _DEBUG:
            print(f"  scp it {i}: merit {merit_new:10.4f} delta {delta:9.5f} tr {tr}")
        if merit_new < best_merit:
            best_plan, best_merit = cand, merit_new

        if delta < cfg.eps_converge:
            lin = cand
            merit_lin = merit_new
            converged = True
            break

        cos = 0.0
        kappa = 0.0
        if step is not None and step_prev is not None:
            n_s, n_p = float(np.linalg.norm(step)), float(np.linalg.norm(step_prev))
            if n_s > 0 and n_p > 0:
                kappa = n_s / n_p
                cos = float(step @ step_prev) / (n_s * n_p)

        if cos <= -0.2:
            # period-2 tendency: relinearize at the Krasnoselskii midpoint
            z_lin = 0.5 * lin.stacked() + 0.5 * z_new
            lin = PlanTrajectory.from_stacked(z_lin, cfg.n_steps)
            merit_lin = merit(lin)
        elif cos > 0.8 and 0.05 < kappa < 0.98:
            # geometric tail: secant extrapolation (divergence-guarded)
            gain = min(kappa / (1.0 - kappa), 30.0)
            ext = PlanTrajectory.from_stacked(z_new + gain * step, cfg.n_steps)
            m_ext = merit(ext)
            if m_ext <= 3.0 * merit_new + 1e-6:
                lin, merit_lin = ext, m_ext
            else:
                lin, merit_lin = cand, merit_new
        else:
            lin, merit_lin = cand, merit_new
        step_prev = step

    final = lin if converged else best_plan
    defect = dynamics_defect(final, cfg.dt)
    plan = PlanTrajectory(final.states.copy(), final.controls.copy())
    plan.objective = plan_cost(plan.states, plan.controls, goal, cfg)
    plan.scp_iters = iters
    plan.converged = converged and defect < 0.02
    plan.objective_trace = trace
    return plan


def unicycle_step(state, v: float, omega: float, dt: float):
    x, y, th = state
    return (x + v * math.cos(th) * dt, y + v * math.sin(th) * dt, th + omega * dt)


def rollout_nonlinear(plan: PlanTrajectory, dt: float) -> np.ndarray:
    """Forward-integrate the nonlinear unicycle with the plan's controls."""
    N = plan.controls.shape[0]
    out = np.zeros((N + 1, 3))
    out[0] = plan.states[0]
    for k in range(N):
        out[k + 1] = unicycle_step(out[k], plan.controls[k, 0], plan.controls[k, 1], dt)
    return out
