"""Rigid-body kinematics and dynamics for serial chains of revolute joints.

Everything here is expressed with 6-D spatial vectors ordered [angular; linear].
The world frame coincides with the base link (link 0); link i's frame is the
joint-i frame after rotation, so a chain with n joints carries n+1 link frames.

Provides forward kinematics, geometric Jacobians, the composite-rigid-body
mass matrix, recursive Newton-Euler inverse dynamics, forward dynamics via
Cholesky, manipulability quantities, and damped pseudo-inverses.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.linalg import cho_factor, cho_solve


class ModelError(Exception):
    """Robot description is inconsistent (bad dimensions, non-SPD inertia...)."""


class NearSingularError(Exception):
    """J J^T is too ill-conditioned for the requested quantity."""


# --------------------------------------------------------------------------
# model description
# --------------------------------------------------------------------------


@dataclass
class Joint:
    """One revolute joint: fixed transform to the parent link, then rotation.

    ``origin_rot`` / ``origin_pos`` place the joint frame in the parent link
    frame; ``axis`` is the unit rotation axis in the joint frame.
    """

    axis: np.ndarray
    origin_rot: np.ndarray
    origin_pos: np.ndarray
    q_min: float
    q_max: float
    qd_max: float = 2.5
    tau_max: float = 50.0


@dataclass
class Link:
    """Inertial data of one moving link, about its own frame."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray  # 3x3 rotational inertia about the COM, link frame


@dataclass
class Capsule:
    """Line segment swept by a sphere, in the owning link's frame."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float


@dataclass
class RobotModel:
    """Kinematic/inertial description of an n-joint serial chain.

    ``capsules[i]`` holds the collision capsules of link i, with index 0 the
    fixed base.  ``adjacency`` lists link-index pairs exempt from
    self-collision checks and must contain at least every parent-child pair.
    ``task_dim`` selects the task space: 2 (planar x-y position), 3 (spatial
    position) or 6 (position + orientation).
    """

    name: str
    joints: list[Joint]
    links: list[Link]
    capsules: list[list[Capsule]]
    adjacency: set[tuple[int, int]]
    task_dim: int = 3
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    ee_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    @property
    def tau_max(self) -> np.ndarray:
        return np.array([j.tau_max for j in self.joints])

    def validate(self) -> None:
        n = self.n
        if n < 1:
            raise ModelError("chain needs at least one joint")
        if len(self.links) != n:
            raise ModelError("need one inertial link per joint")
        if len(self.capsules) != n + 1:
            raise ModelError("capsules must cover base + every moving link")
        if self.task_dim not in (2, 3, 6):
            raise ModelError(f"unsupported task_dim {self.task_dim}")
        for i, link in enumerate(self.links):
            if link.mass <= 0.0:
                raise ModelError(f"link {i + 1}: mass must be positive")
            I = np.asarray(link.inertia, dtype=float)
            if not np.allclose(I, I.T, atol=1e-12):
                raise ModelError(f"link {i + 1}: inertia not symmetric")
            if np.any(np.linalg.eigvalsh(I) <= 0.0):
                raise ModelError(f"link {i + 1}: inertia not positive definite")
        for i, joint in enumerate(self.joints):
            if not joint.q_min < joint.q_max:
                raise ModelError(f"joint {i + 1}: q_min must be below q_max")
        for caps in self.capsules:
            for c in caps:
                if c.radius <= 0.0:
                    raise ModelError("capsule radius must be positive")
        for i in range(n):
            if not self.is_adjacent(i, i + 1):
                raise ModelError(f"adjacency must contain parent-child pair ({i},{i + 1})")

    def is_adjacent(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.adjacency

    def collision_pairs(self) -> list[tuple[int, int]]:
        """Non-adjacent link-index pairs with capsules on both sides."""
        pairs = []
        for i in range(self.n + 1):
            for j in range(i + 1, self.n + 1):
                if self.is_adjacent(i, j):
                    continue
                if self.capsules[i] and self.capsules[j]:
                    pairs.append((i, j))
        return pairs

    def geometry_fingerprint(self) -> str:
        """Stable hash over the collision-relevant parts of the model."""
        h = hashlib.sha256()
        h.update(self.name.encode())
        h.update(np.round(self.q_min, 12).tobytes())
        h.update(np.round(self.q_max, 12).tobytes())
        for caps in self.capsules:
            for c in caps:
                h.update(np.round(np.concatenate([c.p0, c.p1, [c.radius]]), 12).tobytes())
        for pair in sorted(self.adjacency):
            h.update(str(pair).encode())
        return h.hexdigest()[:16]


@dataclass
class JointState:
    """Joint positions (rad) and velocities (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot must have matching length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("joint state must be finite")


@dataclass
class TaskState:
    """Task-space position and velocity, built from a joint state."""

    x: np.ndarray
    xdot: np.ndarray


def task_state(model: RobotModel, state: JointState) -> TaskState:
    """x from forward kinematics and xdot = J(q) qdot, by construction."""
    x = forward_kinematics(model, state.q).x
    J = jacobian(model, state.q)
    return TaskState(x=x, xdot=J @ state.qdot)


# --------------------------------------------------------------------------
# rotations / spatial algebra helpers
# --------------------------------------------------------------------------


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rot_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    a = np.asarray(axis, dtype=float)
    K = skew(a)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _spatial_xform(R: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Motion-vector transform into the child frame.

    (R, p) is the child pose in the parent frame; the returned 6x6 maps
    spatial motion vectors from parent to child coordinates.
    """
    E = R.T
    X = np.zeros((6, 6))
    X[:3, :3] = E
    X[3:, 3:] = E
    X[3:, :3] = -E @ skew(p)
    return X


def _crm(v: np.ndarray) -> np.ndarray:
    """Spatial cross product operator for motion vectors."""
    out = np.zeros((6, 6))
    wx = skew(v[:3])
    out[:3, :3] = wx
    out[3:, 3:] = wx
    out[3:, :3] = skew(v[3:])
    return out


def _spatial_inertia(link: Link) -> np.ndarray:
    """6x6 spatial inertia of a link about its frame origin."""
    m = link.mass
    cx = skew(link.com)
    I = np.zeros((6, 6))
    I[:3, :3] = link.inertia + m * (cx @ cx.T)
    I[:3, 3:] = m * cx
    I[3:, :3] = m * cx.T
    I[3:, 3:] = m * np.eye(3)
    return I


def _link_poses(model: RobotModel, q: np.ndarray):
    """World rotation and origin of every link frame, base included."""
    n = model.n
    Rs = np.empty((n + 1, 3, 3))
    ps = np.empty((n + 1, 3))
    Rs[0] = np.eye(3)
    ps[0] = 0.0
    for i, joint in enumerate(model.joints):
        R_local = joint.origin_rot @ rot_axis(joint.axis, q[i])
        Rs[i + 1] = Rs[i] @ R_local
        ps[i + 1] = ps[i] + Rs[i] @ joint.origin_pos
    return Rs, ps


# --------------------------------------------------------------------------
# kinematics
# --------------------------------------------------------------------------


@dataclass
class FKResult:
    """World pose of every link frame plus the end-effector task position."""

    link_rot: np.ndarray  # (n+1, 3, 3)
    link_pos: np.ndarray  # (n+1, 3)
    ee_pos: np.ndarray    # (3,)
    ee_rot: np.ndarray    # (3, 3)
    x: np.ndarray         # task vector, length task_dim (2/3 positions, 6 adds orientation)


def _check_q(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ValueError(f"expected q of length {model.n}, got shape {q.shape}")
    return q


def forward_kinematics(model: RobotModel, q) -> FKResult:
    """Pose of every link frame and the end-effector position."""
    q = _check_q(model, q)
    Rs, ps = _link_poses(model, q)
    ee_rot = Rs[-1]
    ee_pos = ps[-1] + ee_rot @ model.ee_offset
    if model.task_dim == 2:
        x = ee_pos[:2].copy()
    elif model.task_dim == 3:
        x = ee_pos.copy()
    else:
        # orientation packed as the rotation's axis-angle vector
        x = np.concatenate([ee_pos, _log_so3(ee_rot)])
    return FKResult(link_rot=Rs, link_pos=ps, ee_pos=ee_pos, ee_rot=ee_rot, x=x)


def _log_so3(R: np.ndarray) -> np.ndarray:
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta < 1e-10:
        return np.zeros(3)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * w


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Geometric Jacobian mapping qdot to task velocity, shape (task_dim, n)."""
    q = _check_q(model, q)
    Rs, ps = _link_poses(model, q)
    ee = ps[-1] + Rs[-1] @ model.ee_offset
    n = model.n
    Jv = np.empty((3, n))
    Jw = np.empty((3, n))
    for i, joint in enumerate(model.joints):
        z = Rs[i + 1] @ joint.axis
        r = ee - ps[i + 1]
        Jv[0, i] = z[1] * r[2] - z[2] * r[1]
        Jv[1, i] = z[2] * r[0] - z[0] * r[2]
        Jv[2, i] = z[0] * r[1] - z[1] * r[0]
        Jw[:, i] = z
    if model.task_dim == 2:
        return Jv[:2].copy()
    if model.task_dim == 3:
        return Jv
    return np.vstack([Jv, Jw])


def fk_batch(model: RobotModel, Q: np.ndarray):
    """Vectorized link poses for a batch of configurations.

    Returns (Rs, ps) with shapes (B, n+1, 3, 3) and (B, n+1, 3); used by the
    collision oracles and dataset samplers.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != model.n:
        raise ValueError(f"expected (B, {model.n}) batch of configurations")
    B, n = Q.shape
    Rs = np.empty((B, n + 1, 3, 3))
    ps = np.empty((B, n + 1, 3))
    Rs[:, 0] = np.eye(3)
    ps[:, 0] = 0.0
    for i, joint in enumerate(model.joints):
        K = skew(joint.axis)
        KK = K @ K
        c = np.cos(Q[:, i])[:, None, None]
        s = np.sin(Q[:, i])[:, None, None]
        R_joint = np.eye(3) + s * K + (1.0 - c) * KK
        R_local = joint.origin_rot @ R_joint
        Rs[:, i + 1] = Rs[:, i] @ R_local
        ps[:, i + 1] = ps[:, i] + Rs[:, i] @ joint.origin_pos
    return Rs, ps


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------


def _spatial_inertias(model: RobotModel) -> list[np.ndarray]:
    """Per-link spatial inertias, cached on the instance (links are fixed)."""
    cached = model.__dict__.get("_spatial_inertia_cache")
    if cached is None or len(cached) != model.n:
        cached = [_spatial_inertia(link) for link in model.links]
        model.__dict__["_spatial_inertia_cache"] = cached
    return cached


def _joint_kinematics(model: RobotModel, q: np.ndarray):
    """Per-joint spatial transform from parent coords and motion subspace."""
    Xups = []
    Ss = []
    for i, joint in enumerate(model.joints):
        R_local = joint.origin_rot @ rot_axis(joint.axis, q[i])
        Xups.append(_spatial_xform(R_local, joint.origin_pos))
        Ss.append(np.concatenate([joint.axis, np.zeros(3)]))
    return Xups, Ss


def _rnea(model: RobotModel, Xups, Ss, qdot, qddot, gravity: bool) -> np.ndarray:
    """Newton-Euler recursion on precomputed joint kinematics."""
    n = model.n
    a_base = np.zeros(6)
    if gravity:
        a_base[3:] = -model.gravity  # base acceleration trick emulates gravity

    inertias = _spatial_inertias(model)
    v = [np.zeros(6)] * (n + 1)
    a = [np.zeros(6)] * (n + 1)
    f = [np.zeros(6)] * (n + 1)
    a[0] = a_base
    for i in range(1, n + 1):
        S = Ss[i - 1]
        X = Xups[i - 1]
        vJ = S * qdot[i - 1]
        v[i] = X @ v[i - 1] + vJ
        a[i] = X @ a[i - 1] + S * qddot[i - 1] + _crm(v[i]) @ vJ
        I = inertias[i - 1]
        f[i] = I @ a[i] - _crm(v[i]).T @ (I @ v[i])

    tau = np.empty(n)
    for i in range(n, 0, -1):
        tau[i - 1] = Ss[i - 1] @ f[i]
        if i > 1:
            f[i - 1] = f[i - 1] + Xups[i - 1].T @ f[i]
    return tau


def inverse_dynamics(model: RobotModel, q, qdot, qddot, gravity: bool = True) -> np.ndarray:
    """Joint torques realizing qddot at (q, qdot): recursive Newton-Euler."""
    q = _check_q(model, q)
    qdot = _check_q(model, qdot)
    qddot = _check_q(model, qddot)
    Xups, Ss = _joint_kinematics(model, q)
    return _rnea(model, Xups, Ss, qdot, qddot, gravity)


def bias_forces(model: RobotModel, q, qdot) -> np.ndarray:
    """Coriolis/centrifugal plus gravity torques: C(q, qdot) qdot + G(q)."""
    return inverse_dynamics(model, q, qdot, np.zeros(model.n))


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    """Gravity torques G(q)."""
    zeros = np.zeros(model.n)
    return inverse_dynamics(model, q, zeros, zeros)


def bias_and_gravity(model: RobotModel, q, qdot) -> tuple[np.ndarray, np.ndarray]:
    """(C qdot + G, G) sharing one kinematics pass; the control loop's hot path."""
    q = _check_q(model, q)
    qdot = _check_q(model, qdot)
    Xups, Ss = _joint_kinematics(model, q)
    zeros = np.zeros(model.n)
    return _rnea(model, Xups, Ss, qdot, zeros, True), _rnea(model, Xups, Ss, zeros, zeros, True)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space inertia matrix by the composite-rigid-body recursion."""
    q = _check_q(model, q)
    n = model.n
    Xups, Ss = _joint_kinematics(model, q)
    IC = [I.copy() for I in _spatial_inertias(model)]
    H = np.zeros((n, n))
    for i in range(n, 0, -1):
        if i > 1:
            IC[i - 2] = IC[i - 2] + Xups[i - 1].T @ IC[i - 1] @ Xups[i - 1]
        F = IC[i - 1] @ Ss[i - 1]
        H[i - 1, i - 1] = Ss[i - 1] @ F
        j = i
        while j > 1:
            F = Xups[j - 1].T @ F
            j -= 1
            H[i - 1, j - 1] = Ss[j - 1] @ F
            H[j - 1, i - 1] = H[i - 1, j - 1]
    return 0.5 * (H + H.T)


def forward_dynamics(model: RobotModel, q, qdot, tau_c, tau_ext=None) -> np.ndarray:
    """Joint accelerations from applied torques: H^{-1}(tau - bias), SPD solve."""
    tau = np.asarray(tau_c, dtype=float)
    if tau_ext is not None:
        tau = tau + np.asarray(tau_ext, dtype=float)
    H = mass_matrix(model, q)
    rhs = tau - bias_forces(model, q, qdot)
    try:
        factor = cho_factor(H, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ModelError("mass matrix is not positive definite") from exc
    return cho_solve(factor, rhs, check_finite=False)


def kinetic_energy(model: RobotModel, q, qdot) -> float:
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * float(qdot @ mass_matrix(model, q) @ qdot)


# --------------------------------------------------------------------------
# manipulability
# --------------------------------------------------------------------------


def manipulability_index(model: RobotModel, q) -> float:
    """sqrt(det(J J^T)); the product of J's singular values, 0 at singularities."""
    J = jacobian(model, q)
    det = np.linalg.det(J @ J.T)
    return float(np.sqrt(max(det, 0.0)))


def manipulability_gradient(
    model: RobotModel,
    q,
    fd_step: float = 1e-6,
    cond_cap: float = 1e12,
) -> np.ndarray:
    """Gradient of the manipulability index.

    Per-joint value MI * trace((J J^T)^{-1} (dJ/dq_i) J^T), with dJ/dq_i from
    central finite differences of the geometric Jacobian.
    """
    q = _check_q(model, q)
    J = jacobian(model, q)
    JJt = J @ J.T
    if np.linalg.cond(JJt) > cond_cap:
        raise NearSingularError("J J^T condition number exceeds cap")
    mi = manipulability_index(model, q)
    JJt_inv = np.linalg.inv(JJt)
    grad = np.empty(model.n)
    for i in range(model.n):
        dq = np.zeros(model.n)
        dq[i] = fd_step
        dJ = (jacobian(model, q + dq) - jacobian(model, q - dq)) / (2.0 * fd_step)
        grad[i] = mi * np.trace(JJt_inv @ dJ @ J.T)
    return grad


# --------------------------------------------------------------------------
# damped pseudo-inverses
# --------------------------------------------------------------------------


def damped_pinv(J: np.ndarray, lambda_reg: float = 0.0) -> np.ndarray:
    """J^T (J J^T + lambda^2 I)^{-1}: maps task vectors to joint vectors."""
    if lambda_reg < 0.0:
        raise ValueError("lambda_reg must be nonnegative")
    J = np.asarray(J, dtype=float)
    d = J.shape[0]
    A = J @ J.T + lambda_reg**2 * np.eye(d)
    return np.linalg.solve(A, J).T


def damped_pinv_T(J: np.ndarray, lambda_reg: float = 0.0) -> np.ndarray:
    """(J J^T + lambda^2 I)^{-1} J: the damped J^{-T} mapping torques to forces."""
    return damped_pinv(J, lambda_reg).T


# --------------------------------------------------------------------------
# model file I/O
# --------------------------------------------------------------------------


def robot_to_dict(model: RobotModel) -> dict:
    return {
        "schema_version": 1,
        "name": model.name,
        "task_dim": model.task_dim,
        "gravity": model.gravity.tolist(),
        "ee_offset": model.ee_offset.tolist(),
        "joints": [
            {
                "axis": j.axis.tolist(),
                "origin_rot": np.asarray(j.origin_rot).tolist(),
                "origin_pos": j.origin_pos.tolist(),
                "q_min": float(j.q_min),
                "q_max": float(j.q_max),
                "qd_max": float(j.qd_max),
                "tau_max": float(j.tau_max),
            }
            for j in model.joints
        ],
        "links": [
            {
                "mass": float(l.mass),
                "com": l.com.tolist(),
                "inertia": np.asarray(l.inertia).tolist(),
            }
            for l in model.links
        ],
        "capsules": [
            [
                {"p0": c.p0.tolist(), "p1": c.p1.tolist(), "radius": float(c.radius)}
                for c in caps
            ]
            for caps in model.capsules
        ],
        "adjacency": sorted(list(pair) for pair in model.adjacency),
    }


def robot_from_dict(data: dict) -> RobotModel:
    if data.get("schema_version", 1) != 1:
        raise ModelError(f"unsupported robot schema version {data.get('schema_version')}")
    joints = [
        Joint(
            axis=np.asarray(j["axis"], dtype=float),
            origin_rot=np.asarray(j["origin_rot"], dtype=float),
            origin_pos=np.asarray(j["origin_pos"], dtype=float),
            q_min=float(j["q_min"]),
            q_max=float(j["q_max"]),
            qd_max=float(j.get("qd_max", 2.5)),
            tau_max=float(j.get("tau_max", 50.0)),
        )
        for j in data["joints"]
    ]
    links = [
        Link(
            mass=float(l["mass"]),
            com=np.asarray(l["com"], dtype=float),
            inertia=np.asarray(l["inertia"], dtype=float),
        )
        for l in data["links"]
    ]
    capsules = [
        [
            Capsule(
                p0=np.asarray(c["p0"], dtype=float),
                p1=np.asarray(c["p1"], dtype=float),
                radius=float(c["radius"]),
            )
            for c in caps
        ]
        for caps in data["capsules"]
    ]
    model = RobotModel(
        name=str(data.get("name", "robot")),
        joints=joints,
        links=links,
        capsules=capsules,
        adjacency={(min(a, b), max(a, b)) for a, b in data["adjacency"]},
        task_dim=int(data.get("task_dim", 3)),
        gravity=np.asarray(data.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
        ee_offset=np.asarray(data.get("ee_offset", [0.0, 0.0, 0.0]), dtype=float),
    )
    model.validate()
    return model


def load_robot(path) -> RobotModel:
    """Load a robot description from a YAML file (schema in README)."""
    with open(path, "r") as f:
        return robot_from_dict(yaml.safe_load(f))


def save_robot(model: RobotModel, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(robot_to_dict(model), f, sort_keys=False)
