"""Exponential CBF rows of relative degree two for the four joint-space
constraints: joint limits, self-collision, external collision, singularity.

Each builder emits linear inequalities a . qddot >= b.  The shared core
rearranges hddot >= -k1 h - k2 hdot with hddot = grad_h . qddot + qdot^T
hess_h qdot, so b = -k1 h - k2 (grad_h . qdot) - qdot^T hess_h qdot.
Joint-limit and self-collision rows are hard; external-collision and
singularity rows are soft (they receive slack variables in the QP).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary_learn import jsdf_value_grad_hess, sca_value_grad_hess
from .dynamics import RobotModel, manipulability_gradient, manipulability_index
from .mlp import MLPModel

HARD_KINDS = ("JL+", "JL-", "SCA")


@dataclass(frozen=True)
class BarrierGains:
    """Feedback gains of the barrier state [h, hdot]: hddot >= -k1 h - k2 hdot.

    Real negative closed-loop poles require k1 > 0, k2 > 0, k2^2 >= 4 k1.
    """

    k1: float
    k2: float

    def __post_init__(self):
        if not (self.k1 > 0.0 and self.k2 > 0.0):
            raise ValueError("gains must be positive")
        if self.k2**2 < 4.0 * self.k1 - 1e-12:
            raise ValueError("need k2^2 >= 4 k1 for real negative poles")

    @classmethod
    def from_poles(cls, p1: float, p2: float) -> "BarrierGains":
        if not (p1 < 0.0 and p2 < 0.0):
            raise ValueError("poles must be negative")
        return cls(k1=p1 * p2, k2=-(p1 + p2))

    @property
    def poles(self) -> tuple[float, float]:
        disc = np.sqrt(max(self.k2**2 - 4.0 * self.k1, 0.0))
        return (-(self.k2 + disc) / 2.0, -(self.k2 - disc) / 2.0)


DEFAULT_GAINS = BarrierGains.from_poles(-8.0, -8.0)


@dataclass
class BarrierRow:
    """One linear inequality a . qddot >= b (or a . tau >= b after substitution)."""

    a: np.ndarray
    b: float
    kind: str          # "JL+" | "JL-" | "SCA" | "ECA" | "SA"
    hard: bool
    h_value: float
    hdot_value: float
    tag: str = ""      # human-readable detail, e.g. "ECA link5 pt0"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if not np.all(np.isfinite(self.a)):
            raise ValueError("row normal must be finite")

    def residual(self, z: np.ndarray) -> float:
        """a . z - b; nonnegative when the row is satisfied."""
        return float(self.a @ z - self.b)


def ecbf_row(
    h: float,
    grad_h: np.ndarray,
    hess_quad: float,
    qdot: np.ndarray,
    gains: BarrierGains,
    hard: bool,
    kind: str,
    tag: str = "",
) -> BarrierRow:
    """Shared ECBF core: grad_h . qddot >= -k1 h - k2 (grad_h . qdot) - hess_quad."""
    grad_h = np.asarray(grad_h, dtype=float)
    hdot = float(grad_h @ np.asarray(qdot, dtype=float))
    b = -gains.k1 * h - gains.k2 * hdot - hess_quad
    return BarrierRow(a=grad_h, b=b, kind=kind, hard=hard, h_value=float(h), hdot_value=hdot, tag=tag)


def joint_limit_rows(
    q: np.ndarray,
    qdot: np.ndarray,
    model: RobotModel,
    eps_lo: float | np.ndarray,
    eps_hi: float | np.ndarray,
    gains: BarrierGains,
) -> list[BarrierRow]:
    """Hard rows for both limits of every joint (h linear in q, zero Hessian).

    Upper: (-e_j) . qddot >= -k1 (q+_j - q_j - eps) + k2 qdot_j
    Lower: ( e_j) . qddot >= -k1 (q_j - q-_j - eps) - k2 qdot_j
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    eps_lo = np.broadcast_to(np.asarray(eps_lo, dtype=float), (model.n,))
    eps_hi = np.broadcast_to(np.asarray(eps_hi, dtype=float), (model.n,))
    if np.any(eps_lo < 0.0) or np.any(eps_hi < 0.0):
        raise ValueError("joint-limit margins must be nonnegative")
    rows = []
    for j in range(model.n):
        e = np.zeros(model.n)
        e[j] = 1.0
        h_hi = model.q_max[j] - q[j] - eps_hi[j]
        rows.append(ecbf_row(h_hi, -e, 0.0, qdot, gains, hard=True, kind="JL+", tag=f"JL+ j{j + 1}"))
        h_lo = q[j] - model.q_min[j] - eps_lo[j]
        rows.append(ecbf_row(h_lo, e, 0.0, qdot, gains, hard=True, kind="JL-", tag=f"JL- j{j + 1}"))
    return rows


def sca_row(
    q: np.ndarray,
    qdot: np.ndarray,
    sca_net: MLPModel,
    eps_sca: float,
    gains: BarrierGains,
) -> BarrierRow:
    """Hard self-collision row from the learned boundary classifier.

    h = Gamma(q) - eps_sca with analytic gradient and Hessian of the logit
    gap; the margin is in classifier (log-odds) units.
    """
    qdot = np.asarray(qdot, dtype=float)
    gamma, grad, hess = sca_value_grad_hess(sca_net, q)
    hess_quad = float(qdot @ hess @ qdot)
    row = ecbf_row(gamma - eps_sca, grad, hess_quad, qdot, gains, hard=True, kind="SCA", tag="SCA")
    row.extras["gamma"] = gamma
    return row


def eca_rows(
    q: np.ndarray,
    qdot: np.ndarray,
    jsdf_net: MLPModel,
    obstacle_points,
    eps_scf: float | list,
    gains: BarrierGains,
    links=None,
) -> list[BarrierRow]:
    """Soft rows per (link, obstacle point) from the learned distance field.

    ``links`` selects 1-based link indices (default: all).  Obstacle radii
    are folded into the clearance margin by the caller; ``eps_scf`` may be a
    scalar or one value per point.
    """
    qdot = np.asarray(qdot, dtype=float)
    points = [np.asarray(p, dtype=float) for p in obstacle_points]
    if not points:
        return []
    n = len(qdot)
    links = list(range(1, n + 1)) if links is None else sorted(links)
    eps = np.broadcast_to(np.asarray(eps_scf, dtype=float), (len(points),))
    rows = []
    for p_idx, x0 in enumerate(points):
        vals, grads, hessians = jsdf_value_grad_hess(jsdf_net, q, x0, n)
        for link in links:
            i = link - 1
            hess_quad = float(qdot @ hessians[i] @ qdot)
            row = ecbf_row(
                vals[i] - eps[p_idx], grads[i], hess_quad, qdot, gains,
                hard=False, kind="ECA", tag=f"ECA link{link} pt{p_idx}",
            )
            row.extras["link"] = link
            row.extras["point"] = p_idx
            rows.append(row)
    return rows


def sa_row(
    q: np.ndarray,
    qdot: np.ndarray,
    model: RobotModel,
    eps_sa: float,
    gains: BarrierGains,
    prev_grad: np.ndarray | None,
    dt: float,
) -> tuple[BarrierRow, np.ndarray]:
    """Soft singularity row h = MI(q) - eps_sa; returns (row, grad) for caching.

    The Hessian quadratic term is replaced by the temporal approximation
    ((grad MI_t - grad MI_{t-1}) / dt) . qdot; the first control step has no
    previous gradient and uses a zero temporal term.
    """
    qdot = np.asarray(qdot, dtype=float)
    mi = manipulability_index(model, q)
    grad = manipulability_gradient(model, q)
    if prev_grad is None:
        temporal = 0.0
    else:
        temporal = float(((grad - np.asarray(prev_grad, dtype=float)) / dt) @ qdot)
    row = ecbf_row(mi - eps_sa, grad, temporal, qdot, gains, hard=False, kind="SA", tag="SA")
    row.extras["mi"] = mi
    return row, grad


def rows_to_torque_space(
    rows: list[BarrierRow],
    H: np.ndarray,
    bias: np.ndarray,
    tau_ext: np.ndarray,
) -> list[BarrierRow]:
    """Substitute qddot = H^{-1}(tau + tau_ext - bias) into each row.

    Result rows constrain the torque variable: (a^T H^{-1}) tau >= b - a^T
    H^{-1} (tau_ext - bias).  Eliminates the dynamics equality from the QP.
    """
    from scipy.linalg import cho_factor, cho_solve

    if not rows:
        return []
    H = np.asarray(H, dtype=float)
    shift = np.asarray(tau_ext, dtype=float) - np.asarray(bias, dtype=float)
    try:
        factor = cho_factor(H, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ValueError("mass matrix must be positive definite") from exc
    # H symmetric: a^T H^{-1} = (H^{-1} a)^T, all rows in one multi-RHS solve
    W = cho_solve(factor, np.stack([row.a for row in rows], axis=1), check_finite=False).T
    offsets = W @ shift
    out = []
    for row, w, off in zip(rows, W, offsets):
        out.append(
            BarrierRow(
                a=w,
                b=row.b - float(off),
                kind=row.kind,
                hard=row.hard,
                h_value=row.h_value,
                hdot_value=row.hdot_value,
                tag=row.tag,
                extras=dict(row.extras),
            )
        )
    return out


def manipulability_hessian_fd(model: RobotModel, q: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Symmetric-difference Hessian of MI: columns from gradient differences.

    Offline reference for the temporal approximation used at runtime; too
    slow for the control loop.
    """
    q = np.asarray(q, dtype=float)
    n = model.n
    Hm = np.empty((n, n))
    for i in range(n):
        dq = np.zeros(n)
        dq[i] = step
        gp = manipulability_gradient(model, q + dq)
        gm = manipulability_gradient(model, q - dq)
        Hm[:, i] = (gp - gm) / (2.0 * step)
    return 0.5 * (Hm + Hm.T)
