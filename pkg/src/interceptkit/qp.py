"""Dense convex QP solver.

Solves  min 0.5 z'Hz + g'z  s.t.  A_eq z = b_eq,  lb <= A_in z <= ub
by operator splitting (ADMM) on the stacked constraint form, followed by an
exact KKT "polish" solve on the identified active set. Pure numpy, fully
deterministic, warm-startable through (z0, y0).

Intended scale is small dense problems (n up to a few hundred); there is no
sparse path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

REG_FLOOR = 1e-8
_SIGMA = 1e-6
_ALPHA = 1.6
_RHO_EQ_SCALE = 1e3
_ADAPT_EVERY = 50


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


@dataclass
class QProblem:
    """Problem data. H must be symmetric within 1e-10; lb <= ub elementwise."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H shape {self.H.shape} incompatible with g ({n})")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10:
            raise ValueError("H is not symmetric within 1e-10")
        if (self.A_eq is None) != (self.b_eq is None):
            raise ValueError("A_eq and b_eq must be given together")
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_eq.shape[1] != n or self.A_eq.shape[0] != self.b_eq.shape[0]:
            raise ValueError("equality constraint dimensions inconsistent")
        if self.A_in is None:
            self.A_in = np.zeros((0, n))
            self.lb = np.zeros(0)
            self.ub = np.zeros(0)
        else:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            self.lb = np.asarray(self.lb, dtype=float).ravel()
            self.ub = np.asarray(self.ub, dtype=float).ravel()
        mi = self.A_in.shape[0]
        if self.A_in.shape[1] != n or self.lb.shape[0] != mi or self.ub.shape[0] != mi:
            raise ValueError("inequality constraint dimensions inconsistent")
        if mi and np.any(self.lb > self.ub):
            raise ValueError("lb > ub on some inequality row")

    @property
    def n(self) -> int:
        return self.g.shape[0]


@dataclass
class QSolution:
    z: np.ndarray
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    lam_eq: np.ndarray
    mu_in: np.ndarray
    objective_history: list = field(default_factory=list, repr=False)
    feasible_history: list = field(default_factory=list, repr=False)


def _objective(H, g, z) -> float:
    return 0.5 * float(z @ H @ z) + float(g @ z)


def _kkt_polish(H, g, A, l, u, me, z, y, tol):
    """Exact solve on the active set implied by (z, y); returns refined
    (z, y, ok)."""
    mi = A.shape[0] - me
    act_lo = np.zeros(mi, dtype=bool)
    act_hi = np.zeros(mi, dtype=bool)
    if mi:
        yi = y[me:]
        vi = A[me:] @ z
        act_lo = (yi < -tol) | (vi - l[me:] < tol)
        act_hi = (yi > tol) | (u[me:] - vi < tol)
        # a row cannot be active on both sides unless lb == ub
        both = act_lo & act_hi & (u[me:] - l[me:] > tol)
        act_hi[both] = yi[both] > 0
        act_lo[both] = ~act_hi[both]
    act_rows = me + np.flatnonzero(act_lo | act_hi)
    rows = np.concatenate([np.arange(me), act_rows])
    A_act = A[rows]
    b_act = l[rows].copy()
    if act_rows.size:
        hi = act_rows[act_hi[act_rows - me]]
        b_act[np.searchsorted(rows, hi)] = u[hi]
    ma = rows.shape[0]
    n = H.shape[0]
    delta = 1e-9
    K = np.zeros((n + ma, n + ma))
    K[:n, :n] = H + delta * np.eye(n)
    K[:n, n:] = A_act.T
    K[n:, :n] = A_act
    K[n:, n:] = -delta * np.eye(ma)
    rhs = np.concatenate([-g, b_act])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return z, y, False
    # iterative refinement against the unregularized KKT matrix, only while
    # the direct solve is not already at tolerance
    K0 = K.copy()
    K0[:n, :n] = H
    K0[n:, n:] = 0.0
    for _ in range(3):
        r = rhs - K0 @ sol
        if float(np.max(np.abs(r), initial=0.0)) < 0.1 * tol:
            break
        try:
            sol = sol + np.linalg.solve(K, r)
        except np.linalg.LinAlgError:
            break
    z_p = sol[:n]
    y_p = np.zeros_like(y)
    y_p[rows] = sol[n:]
    v = A @ z_p
    feas = True
    if A.shape[0]:
        feas = bool(np.all(v >= l - 10 * tol) and np.all(v <= u + 10 * tol))
    if mi:
        mu = y_p[me:]
        sign_ok = bool(np.all(mu[~act_hi] <= 10 * tol) and np.all(mu[~act_lo] >= -10 * tol))
        feas = feas and sign_ok
    return z_p, y_p, feas


def _residuals(H, g, A, l, u, z, y):
    v = A @ z if A.shape[0] else np.zeros(0)
    r_prim = float(np.max(np.abs(v - np.clip(v, l, u)), initial=0.0))
    r_dual = float(np.max(np.abs(H @ z + g + (A.T @ y if A.shape[0] else 0.0)), initial=0.0))
    return r_prim, r_dual


def _equalities_inconsistent(A_eq, b_eq) -> bool:
    r_a = np.linalg.matrix_rank(A_eq)
    r_ab = np.linalg.matrix_rank(np.hstack([A_eq, b_eq[:, None]]))
    return r_ab > r_a


def solve(
    p: QProblem,
    tol: float = 1e-8,
    max_iter: int = 20000,
    z0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
    track_history: bool = True,
) -> QSolution:
    """Solve the QP. Optimal status guarantees KKT residuals below tol.

    z0/y0 warm-start the splitting iteration; output is a deterministic
    function of the inputs. track_history=False skips the per-iteration
    objective/feasibility bookkeeping on hot paths.
    """
    n = p.n
    H = p.H.copy()
    diag_H = np.diagonal(H)
    is_diag = np.count_nonzero(H) == np.count_nonzero(diag_H)
    w_eig = float(diag_H.min()) if is_diag else float(np.linalg.eigvalsh(H)[0])
    if w_eig < REG_FLOOR:
        H = H + REG_FLOOR * np.eye(n)
    g = p.g
    me = p.A_eq.shape[0]
    mi = p.A_in.shape[0]
    m = me + mi
    if m == 0:
        z = np.linalg.solve(H, -g)
        return QSolution(
            z=z, status=QpStatus.OPTIMAL, iterations=1,
            primal_residual=0.0,
            dual_residual=float(np.max(np.abs(H @ z + g))),
            objective=_objective(p.H, g, z),
            lam_eq=np.zeros(0), mu_in=np.zeros(0),
            objective_history=[_objective(p.H, g, z)],
            feasible_history=[True],
        )

    A = np.vstack([p.A_eq, p.A_in])
    l = np.concatenate([p.b_eq, p.lb])
    u = np.concatenate([p.b_eq, p.ub])

    z = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float).copy()
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float).copy()
    if z.shape != (n,) or y.shape != (m,):
        raise ValueError("warm-start dimensions inconsistent")
    w = np.clip(A @ z, l, u)

    rho_base = 0.1
    # Gram blocks are built once; a rho rescale then only needs the inverse
    G_eq = p.A_eq.T @ p.A_eq if me else 0.0
    G_in = p.A_in.T @ p.A_in if mi else 0.0
    base = H + _SIGMA * np.eye(n)

    def factor(rb):
        return np.linalg.inv(base + (rb * _RHO_EQ_SCALE) * G_eq + rb * G_in)

    def rho_vec(rb):
        r = np.full(m, rb)
        r[:me] *= _RHO_EQ_SCALE
        return r

    rho = rho_vec(rho_base)
    Minv = factor(rho_base)
    obj_hist: list[float] = []
    feas_hist: list[bool] = []
    az_state = A @ z
    it = 0
    status = QpStatus.MAX_ITER
    best = None

    while it < max_iter:
        it += 1
        rhs = _SIGMA * z - g + A.T @ (rho * w - y)
        zt = Minv @ rhs
        azt = A @ zt
        z = _ALPHA * zt + (1.0 - _ALPHA) * z
        az_state = _ALPHA * azt + (1.0 - _ALPHA) * az_state
        az_rel = _ALPHA * azt + (1.0 - _ALPHA) * w
        w_new = np.clip(az_rel + y / rho, l, u)
        y = y + rho * (az_rel - w_new)
        w = w_new
        if track_history:
            obj_hist.append(_objective(p.H, g, z))
            feas_hist.append(
                float(np.max(np.abs(az_state - np.clip(az_state, l, u)),
                             initial=0.0)) < tol)

        if it % 10 == 0 or it == max_iter:
            r_prim, r_dual = _residuals(H, g, A, l, u, z, y)
            if best is None or max(r_prim, r_dual) < best[0]:
                best = (max(r_prim, r_dual), z.copy(), y.copy())
            if r_prim < tol and r_dual < tol:
                status = QpStatus.OPTIMAL
                break
            # polish attempt: an exact active-set solve often finishes early
            if r_prim < 1e3 * tol and r_dual < 1e6 * tol:
                z_p, y_p, ok = _kkt_polish(H, g, A, l, u, me, z, y, tol)
                if ok:
                    rp, rd = _residuals(H, g, A, l, u, z_p, y_p)
                    if rp < tol and rd < tol:
                        z, y = z_p, y_p
                        if track_history:
                            obj_hist.append(_objective(p.H, g, z))
                            feas_hist.append(rp < tol)
                        status = QpStatus.OPTIMAL
                        break
            if it % _ADAPT_EVERY == 0 and it < max_iter:
                v = A @ z
                s_p = max(np.max(np.abs(v), initial=0.0), np.max(np.abs(w), initial=0.0), 1e-12)
                s_d = max(
                    np.max(np.abs(H @ z), initial=0.0),
                    np.max(np.abs(g), initial=0.0),
                    np.max(np.abs(A.T @ y), initial=0.0),
                    1e-12,
                )
                ratio = np.sqrt((r_prim / s_p) / max(r_dual / s_d, 1e-16))
                ratio = float(np.clip(ratio, 1e-4, 1e4))
                if ratio > 5.0 or ratio < 0.2:
                    rho_base = float(np.clip(rho_base * ratio, 1e-6, 1e6))
                    rho = rho_vec(rho_base)
                    Minv = factor(rho_base)

    if status is not QpStatus.OPTIMAL:
        if me and _equalities_inconsistent(p.A_eq, p.b_eq):
            return QSolution(
                z=np.zeros(n), status=QpStatus.INFEASIBLE, iterations=it,
                primal_residual=np.inf, dual_residual=np.inf, objective=np.nan,
                lam_eq=np.zeros(me), mu_in=np.zeros(mi),
            )
        if best is not None and best[0] < max(*_residuals(H, g, A, l, u, z, y)):
            z, y = best[1], best[2]

    r_prim, r_dual = _residuals(H, g, A, l, u, z, y)
    return QSolution(
        z=z,
        status=status,
        iterations=it,
        primal_residual=r_prim,
        dual_residual=r_dual,
        objective=_objective(p.H, g, z),
        lam_eq=y[:me].copy(),
        mu_in=y[me:].copy(),
        objective_history=obj_hist,
        feasible_history=feas_hist,
    )
