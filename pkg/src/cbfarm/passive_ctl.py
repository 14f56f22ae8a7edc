"""Passive impedance law tracking a dynamical-system plan.

The damping matrix is built in an orthonormal basis whose first column
follows the desired velocity, so energy is injected along the plan and
dissipated transversally.  A storage-function monitor records the discrete
passivity inequality; it observes rather than enforces, because the QP can
only certify passivity on steps where torque tracking is feasible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion_plan import LinearDS, eval_ds, potential

DEGENERATE_SPEED = 1e-9  # below this the desired direction is undefined


@dataclass
class DampingSpec:
    """Damping eigenvalues: first along the motion direction, rest transverse."""

    lambdas: np.ndarray

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if np.any(self.lambdas < 0.0):
            raise ValueError("damping eigenvalues must be nonnegative")

    @property
    def lambda1(self) -> float:
        return float(self.lambdas[0])


def damping_basis(f_x: np.ndarray, tol: float = DEGENERATE_SPEED) -> np.ndarray:
    """Orthonormal basis with column 1 along f_x; identity when f_x ~ 0.

    The remaining columns come from Gram-Schmidt over the canonical basis,
    skipping the axis most parallel to f_x.  Continuous in f_x away from the
    axis-switching set.
    """
    f = np.asarray(f_x, dtype=float)
    d = f.shape[0]
    norm = np.linalg.norm(f)
    if norm <= tol:
        return np.eye(d)
    v1 = f / norm
    skip = int(np.argmax(np.abs(v1)))
    cols = [v1]
    for k in range(d):
        if k == skip:
            continue
        e = np.zeros(d)
        e[k] = 1.0
        for u in cols:
            e = e - (u @ e) * u
        n = np.linalg.norm(e)
        if n < 1e-12:
            raise ValueError("degenerate Gram-Schmidt step")
        cols.append(e / n)
    return np.column_stack(cols)


def damping_matrix(V: np.ndarray, spec: DampingSpec) -> np.ndarray:
    """D = V diag(lambda) V^T, symmetric positive semidefinite."""
    V = np.asarray(V, dtype=float)
    if spec.lambdas.shape[0] != V.shape[1]:
        raise ValueError("need one damping eigenvalue per basis column")
    D = V @ np.diag(spec.lambdas) @ V.T
    return 0.5 * (D + D.T)


def control_force(x, xdot, plan: LinearDS, spec: DampingSpec, G_x=None) -> np.ndarray:
    """Impedance law F_c = G_x - D(x) (xdot - f(x)).

    When the desired velocity is degenerate the damping falls back to
    lambda_1 * I (pure dissipation near the attractor).
    """
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    f = eval_ds(plan, x)
    if np.linalg.norm(f) <= DEGENERATE_SPEED:
        D = spec.lambda1 * np.eye(plan.d)
    else:
        D = damping_matrix(damping_basis(f), spec)
    G = np.zeros(plan.d) if G_x is None else np.asarray(G_x, dtype=float)
    return G - D @ (xdot - f)


def storage(x, xdot, H_x: np.ndarray, lambda1: float, plan: LinearDS) -> float:
    """S = 1/2 xdot^T H_x xdot + lambda_1 P(x); requires SPD task inertia."""
    xdot = np.asarray(xdot, dtype=float)
    H_x = np.asarray(H_x, dtype=float)
    if not np.allclose(H_x, H_x.T, atol=1e-8):
        raise ValueError("task-space inertia must be symmetric")
    kinetic = 0.5 * float(xdot @ H_x @ xdot)
    if kinetic < -1e-12:
        raise ValueError("task-space inertia must be positive definite")
    return kinetic + lambda1 * potential(plan, x)


@dataclass
class PassivityTrace:
    """Append-only record of the discrete passivity inequality."""

    t: list = field(default_factory=list)
    S: list = field(default_factory=list)
    Sdot: list = field(default_factory=list)
    power: list = field(default_factory=list)
    feasible: list = field(default_factory=list)
    violation: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def violation_count(self) -> int:
        return int(np.sum(self.violation))


def passivity_step(
    trace: PassivityTrace,
    S_prev: float,
    S_now: float,
    dt: float,
    F_ext,
    xdot,
    feasible: bool,
    t: float = 0.0,
    tol_scale: float = 1e-3,
) -> PassivityTrace:
    """Record one step: Sdot ~ (S_now - S_prev)/dt versus supplied power.

    A violation is flagged only on feasible steps, with tolerance
    tol_scale * max(1, |power|) absorbing discretization error.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    power = float(np.asarray(F_ext, dtype=float) @ np.asarray(xdot, dtype=float))
    sdot = (S_now - S_prev) / dt
    tol = tol_scale * max(1.0, abs(power))
    trace.t.append(float(t))
    trace.S.append(float(S_now))
    trace.Sdot.append(float(sdot))
    trace.power.append(power)
    trace.feasible.append(bool(feasible))
    trace.violation.append(bool(feasible) and sdot - power > tol)
    return trace
