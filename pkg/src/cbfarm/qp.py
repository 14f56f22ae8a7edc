"""Dense convex QP solver and the relaxed barrier-QP assembler.

Problems are min 1/2 z^T Q z + c^T z subject to A z >= l, solved with a
Mehrotra predictor-corrector primal-dual interior-point iteration.  The
assembler builds the torque-tracking objective with slack penalties: hard
barrier rows enter verbatim, each soft row gains a nonnegative slack on its
left-hand side, and torque box limits are appended as hard rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .barriers import BarrierRow


class QPError(Exception):
    """Solver hit NaNs or structurally bad input; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class VariableLayout:
    """Column layout: torque block first, then one column per slack."""

    n_torque: int
    slack_tags: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.n_torque + len(self.slack_tags)


@dataclass
class DenseQP:
    """min 1/2 z^T Q z + c^T z  s.t.  A z >= l."""

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    l: np.ndarray
    row_kinds: list[str] = field(default_factory=list)
    layout: VariableLayout | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.Q.shape[0])
        self.l = np.asarray(self.l, dtype=float)
        m = self.Q.shape[0]
        if self.Q.shape != (m, m) or self.c.shape != (m,):
            raise QPError("objective dimensions inconsistent")
        if self.A.shape[0] != self.l.shape[0]:
            raise QPError("constraint dimensions inconsistent")
        if not np.allclose(self.Q, self.Q.T, atol=1e-10):
            raise QPError("Q must be symmetric")
        if not self.row_kinds:
            self.row_kinds = ["row"] * self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


@dataclass
class QPSolution:
    z: np.ndarray
    status: str               # "optimal" | "infeasible" | "max_iter"
    multipliers: np.ndarray
    kkt: dict
    active_set: list[int]
    iterations: int
    objective: float


def kkt_residual(qp: DenseQP, z: np.ndarray, multipliers: np.ndarray) -> dict:
    """The four KKT residual norms at (z, multipliers).

    stationarity |Qz + c - A^T mu|, primal |min(Az - l, 0)|,
    dual |min(mu, 0)|, complementarity |mu . (Az - l)|.
    """
    z = np.asarray(z, dtype=float)
    mu = np.asarray(multipliers, dtype=float)
    slack = qp.A @ z - qp.l if qp.n_rows else np.zeros(0)
    return {
        "stationarity": float(np.linalg.norm(qp.Q @ z + qp.c - (qp.A.T @ mu if qp.n_rows else 0.0))),
        "primal": float(np.linalg.norm(np.minimum(slack, 0.0))),
        "dual": float(np.linalg.norm(np.minimum(mu, 0.0))),
        "complementarity": float(abs(mu @ slack)) if qp.n_rows else 0.0,
    }


def _objective(qp: DenseQP, z: np.ndarray) -> float:
    return float(0.5 * z @ qp.Q @ z + qp.c @ z)


def _ip_core(Q, c, A, A_T, l, tol, max_iter):
    """Mehrotra predictor-corrector iteration; shared by both build targets.

    Returns (z, mu, status_code, iterations) with status 0 = optimal,
    1 = infeasible, 2 = max_iter, 3 = non-finite iterates.
    """
    m = Q.shape[0]
    p = A.shape[0]
    eye_m = np.eye(m)
    z = np.linalg.solve(Q + 1e-10 * eye_m, -c)
    s = np.maximum(A @ z - l, 0.1)
    mu = np.ones(p)
    c_max = np.abs(c).max() if m else 0.0
    A_max = np.abs(A).max()

    status = 2
    it = 0
    while it < max_iter:
        it += 1
        Qz = Q @ z
        ATmu = A_T @ mu
        r_d = Qz + c - ATmu
        slack_true = A @ z - l
        scale = 1.0 + max(np.abs(Qz).max(), max(c_max, np.abs(ATmu).max()))
        comp = abs(mu @ slack_true)
        if (
            np.abs(r_d).max() <= tol * scale
            and slack_true.min() >= -tol
            and comp <= tol * scale * max(1.0, float(p))
        ):
            status = 0
            break

        # multipliers exploding with a near-null A^T mu certify infeasibility
        mu_max = mu.max()
        if mu_max > 1e10:
            y = mu / mu_max
            if np.abs(A_T @ y).max() <= 1e-8 * max(1.0, A_max) and l @ y > 1e-8:
                status = 1
                break

        mu_bar = (s @ mu) / p
        if mu_bar < 1e-18 or s.min() < 1e-30 or mu_max > 1e30:
            # complementarity exhausted or iterates degenerate: judge as-is
            ok = (
                np.abs(r_d).max() <= tol * scale
                and slack_true.min() >= -tol
                and comp <= tol * scale * max(1.0, float(p))
            )
            status = 0 if ok else 2
            break

        r_p = slack_true - s
        D = np.minimum(np.maximum(mu / s, 1e-14), 1e14)
        M = Q + (A_T * D) @ A
        # stabilizing jitter fades with complementarity so late steps stay exact
        diag_scale = max(np.diag(M).max(), 1.0)
        M = M + (1e-13 * diag_scale * min(1.0, mu_bar)) * eye_m

        Dr_p = D * r_p

        # affine predictor
        r_cs = mu.copy()
        dz = np.linalg.solve(M, -r_d - A_T @ (r_cs + Dr_p))
        ds = A @ dz + r_p
        dmu = -r_cs - D * ds
        alpha_a = _steplen(s, ds, mu, dmu, 1.0)
        mu_aff = ((s + alpha_a * ds) @ (mu + alpha_a * dmu)) / p
        sigma = (max(mu_aff, 0.0) / mu_bar) ** 3 if mu_bar > 0 else 0.0

        # centering + corrector
        r_c = s * mu - sigma * mu_bar + ds * dmu
        r_cs = r_c / s
        dz = np.linalg.solve(M, -r_d - A_T @ (r_cs + Dr_p))
        ds = A @ dz + r_p
        dmu = -r_cs - D * ds
        alpha = _steplen(s, ds, mu, dmu, 0.99)

        z = z + alpha * dz
        s = s + alpha * ds
        mu = mu + alpha * dmu

        finite = np.isfinite(z).all() and np.isfinite(s).all() and np.isfinite(mu).all()
        if not finite:
            status = 3
            break
        if alpha < 1e-12:  # stalled; accept only if the true residuals are there
            Qz = Q @ z
            r_d = Qz + c - A_T @ mu
            slack_true = A @ z - l
            scale = 1.0 + max(np.abs(Qz).max(), max(c_max, np.abs(A_T @ mu).max()))
            ok = (
                np.abs(r_d).max() <= tol * scale
                and slack_true.min() >= -tol
                and abs(mu @ slack_true) <= tol * scale * max(1.0, float(p))
            )
            status = 0 if ok else 2
            break
    return z, mu, status, it


def _steplen(s, ds, mu, dmu, frac):
    bound = np.inf
    for i in range(s.shape[0]):
        if ds[i] < 0.0:
            r = -s[i] / ds[i]
            if r < bound:
                bound = r
        if dmu[i] < 0.0:
            r = -mu[i] / dmu[i]
            if r < bound:
                bound = r
    alpha = frac * bound
    if alpha > 1.0:
        alpha = 1.0
    if alpha < 0.0:
        alpha = 0.0
    return alpha


try:  # compiled fast path; algorithmically identical to the python one
    import numba

    _steplen = numba.njit(cache=True, fastmath=False)(_steplen)  # noqa: F811
    _ip_core_jit = numba.njit(cache=True, fastmath=False)(_ip_core)
except ImportError:  # pragma: no cover
    _ip_core_jit = None


_STATUS_NAMES = {0: "optimal", 1: "infeasible", 2: "max_iter"}


def solve_qp(qp: DenseQP, tol: float = 1e-10, max_iter: int = 100, active_tol: float = 1e-6) -> QPSolution:
    """Primal-dual interior-point solve; deterministic for identical inputs.

    Returns status "optimal" with all KKT residuals under tolerance,
    "infeasible" with a Farkas-style certificate (mu >= 0, A^T mu ~ 0,
    l^T mu > 0), or "max_iter".  Non-finite iterates raise QPError.
    """
    m = qp.dim
    p = qp.n_rows

    if p == 0:
        z = -cho_solve(cho_factor(qp.Q + 1e-12 * np.eye(m)), qp.c)
        mu = np.zeros(0)
        return QPSolution(z, "optimal", mu, kkt_residual(qp, z, mu), [], 0, _objective(qp, z))

    Q = np.ascontiguousarray(qp.Q)
    c = np.ascontiguousarray(qp.c)
    A = np.ascontiguousarray(qp.A)
    A_T = np.ascontiguousarray(A.T)
    l = np.ascontiguousarray(qp.l)
    core = _ip_core_jit if _ip_core_jit is not None else _ip_core
    try:
        z, mu, code, it = core(Q, c, A, A_T, l, tol, max_iter)
    except np.linalg.LinAlgError as exc:
        raise QPError(f"linear algebra failure inside the solver: {exc}") from exc
    if code == 3:
        raise QPError("interior-point iterates became non-finite", {"iteration": it})

    kkt = kkt_residual(qp, z, mu)
    active = [i for i in range(p) if mu[i] > active_tol]
    return QPSolution(z, _STATUS_NAMES[code], mu, kkt, active, it, _objective(qp, z))


# --------------------------------------------------------------------------
# relaxed barrier-QP assembly
# --------------------------------------------------------------------------


def assemble_rcbf_qp(
    F_c: np.ndarray,
    Jpinv_T: np.ndarray,
    torque_rows: list[BarrierRow],
    Pi: float | np.ndarray = 1e3,
    pi: float = 1e3,
    rho_reg: float = 1e-6,
    tau_min: np.ndarray | None = None,
    tau_max: np.ndarray | None = None,
) -> DenseQP:
    """Build the relaxed QP over (torque, slacks).

    Objective |Jpinv_T tau - F_c|^2 + slack^T diag(Pi) slack (one entry per
    soft external-collision row) + pi * slack_SA^2 + rho_reg |tau|^2.  Hard
    rows (joint limits, self-collision) carry no slack; each soft row i
    becomes a_i . tau + slack_i >= b_i with slack_i >= 0.  Torque bounds, if
    given, append hard box rows.
    """
    F_c = np.asarray(F_c, dtype=float)
    G = np.atleast_2d(np.asarray(Jpinv_T, dtype=float))
    d, n = G.shape
    if F_c.shape != (d,):
        raise QPError(f"F_c must have length {d}")
    if rho_reg < 0.0:
        raise QPError("rho_reg must be nonnegative")

    soft_rows = [r for r in torque_rows if not r.hard]
    n_soft = len(soft_rows)
    Pi_vec = np.broadcast_to(np.asarray(Pi, dtype=float), (max(n_soft, 1),))
    if np.any(Pi_vec <= 0.0) or pi <= 0.0:
        raise QPError("slack penalties must be positive")

    dim = n + n_soft
    Q = np.zeros((dim, dim))
    Q[:n, :n] = 2.0 * (G.T @ G + rho_reg * np.eye(n))
    c = np.zeros(dim)
    c[:n] = -2.0 * G.T @ F_c

    A_rows, lbs, kinds = [], [], []
    layout = VariableLayout(n_torque=n)
    slack_col = n
    soft_seen = 0
    for row in torque_rows:
        arow = np.zeros(dim)
        arow[:n] = row.a
        if not row.hard:
            arow[slack_col] = 1.0
            penalty = pi if row.kind == "SA" else Pi_vec[min(soft_seen, len(Pi_vec) - 1)]
            Q[slack_col, slack_col] = 2.0 * penalty
            layout.slack_tags.append(row.tag or row.kind)
            slack_col += 1
            soft_seen += 1
        A_rows.append(arow)
        lbs.append(row.b)
        kinds.append(row.kind)
    for j in range(n_soft):
        nn = np.zeros(dim)
        nn[n + j] = 1.0
        A_rows.append(nn)
        lbs.append(0.0)
        kinds.append("SLACK")

    if tau_min is not None or tau_max is not None:
        tau_min = np.asarray(tau_min, dtype=float)
        tau_max = np.asarray(tau_max, dtype=float)
        for j in range(n):
            up = np.zeros(dim)
            up[j] = -1.0
            A_rows.append(up)
            lbs.append(-tau_max[j])
            kinds.append("TAU+")
            lo = np.zeros(dim)
            lo[j] = 1.0
            A_rows.append(lo)
            lbs.append(tau_min[j])
            kinds.append("TAU-")

    A = np.vstack(A_rows) if A_rows else np.zeros((0, dim))
    return DenseQP(Q=Q, c=c, A=A, l=np.array(lbs), row_kinds=kinds, layout=layout)
