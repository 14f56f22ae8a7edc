"""Shipped robot models: an analytically checkable planar arm and a 7-joint
spatial chain with Franka-like joint limits and capsule collision geometry.

The 7-joint chain follows modified-DH frame placement: each joint's fixed
transform is RotX(alpha) * TransX(a) * TransZ(d), then rotation about the
local z axis.
"""

from __future__ import annotations

import numpy as np

from .dynamics import (
    Capsule,
    Joint,
    Link,
    RobotModel,
    damped_pinv,
    forward_kinematics,
    jacobian,
    rot_x,
    rot_z,
)


def planar_arm(
    link_lengths=(1.0, 1.0, 1.0),
    link_masses=None,
    task_dim: int = 2,
    capsule_radius: float = 0.04,
) -> RobotModel:
    """Planar chain: z-axis joints, links along local +x, gravity along -y."""
    lengths = [float(l) for l in link_lengths]
    n = len(lengths)
    if link_masses is None:
        link_masses = [1.0] * n
    masses = [float(m) for m in link_masses]

    joints = []
    links = []
    capsules: list[list[Capsule]] = [[]]
    for i, (l, m) in enumerate(zip(lengths, masses)):
        origin_pos = np.zeros(3) if i == 0 else np.array([lengths[i - 1], 0.0, 0.0])
        joints.append(
            Joint(
                axis=np.array([0.0, 0.0, 1.0]),
                origin_rot=np.eye(3),
                origin_pos=origin_pos,
                q_min=-2.9,
                q_max=2.9,
                qd_max=2.5,
                tau_max=50.0,
            )
        )
        w = 0.05 * l
        # thin-box inertia about the COM; only Izz matters for planar motion
        links.append(
            Link(
                mass=m,
                com=np.array([l / 2.0, 0.0, 0.0]),
                inertia=np.diag([m * w**2 / 6.0, m * (l**2 + w**2) / 12.0, m * (l**2 + w**2) / 12.0]),
            )
        )
        capsules.append([Capsule(p0=np.zeros(3), p1=np.array([l, 0.0, 0.0]), radius=capsule_radius)])

    model = RobotModel(
        name=f"planar{n}",
        joints=joints,
        links=links,
        capsules=capsules,
        adjacency={(i, i + 1) for i in range(n)},
        task_dim=task_dim,
        gravity=np.array([0.0, -9.81, 0.0]),
        ee_offset=np.array([lengths[-1], 0.0, 0.0]),
    )
    model.validate()
    return model


def pendulum(mass: float = 1.0, length: float = 1.0, gravity=(0.0, -9.81, 0.0)) -> RobotModel:
    """Point-mass pendulum hanging straight down at q = 0."""
    joints = [
        Joint(
            axis=np.array([0.0, 0.0, 1.0]),
            origin_rot=rot_z(-np.pi / 2.0),
            origin_pos=np.zeros(3),
            q_min=-np.pi,
            q_max=np.pi,
        )
    ]
    links = [
        Link(
            mass=mass,
            com=np.array([length, 0.0, 0.0]),
            inertia=1e-9 * np.eye(3),  # point mass; epsilon keeps validation SPD
        )
    ]
    model = RobotModel(
        name="pendulum",
        joints=joints,
        links=links,
        capsules=[[], [Capsule(np.zeros(3), np.array([length, 0.0, 0.0]), 0.02)]],
        adjacency={(0, 1)},
        task_dim=2,
        gravity=np.asarray(gravity, dtype=float),
        ee_offset=np.array([length, 0.0, 0.0]),
    )
    model.validate()
    return model


# modified-DH rows (alpha_{i-1}, a_{i-1}, d_i) for the 7-joint chain
_SEVEN_DOF_MDH = [
    (0.0, 0.0, 0.333),
    (-np.pi / 2.0, 0.0, 0.0),
    (np.pi / 2.0, 0.0, 0.316),
    (np.pi / 2.0, 0.0825, 0.0),
    (-np.pi / 2.0, -0.0825, 0.384),
    (np.pi / 2.0, 0.0, 0.0),
    (np.pi / 2.0, 0.088, 0.0),
]

_SEVEN_DOF_Q_MIN = [-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973]
_SEVEN_DOF_Q_MAX = [2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973]
_SEVEN_DOF_QD_MAX = [2.175, 2.175, 2.175, 2.175, 2.61, 2.61, 2.61]
_SEVEN_DOF_TAU_MAX = [87.0, 87.0, 87.0, 87.0, 12.0, 12.0, 12.0]

_SEVEN_DOF_MASS = [4.97, 0.647, 3.228, 3.587, 1.226, 1.667, 0.735]
_SEVEN_DOF_COM = [
    [0.003, 0.002, -0.06],
    [-0.003, -0.07, 0.003],
    [0.04, 0.02, -0.03],
    [-0.04, 0.12, 0.0],
    [0.0, 0.03, -0.10],
    [0.05, 0.0, 0.0],
    [0.0, 0.0, 0.08],
]
_SEVEN_DOF_INERTIA = [
    [0.070, 0.070, 0.012],
    [0.008, 0.003, 0.008],
    [0.030, 0.030, 0.010],
    [0.030, 0.010, 0.030],
    [0.020, 0.020, 0.005],
    [0.003, 0.003, 0.002],
    [0.002, 0.002, 0.001],
]

# home pose used by the shipped scenarios
SEVEN_DOF_HOME = np.array([0.0, -np.pi / 4.0, 0.0, -3.0 * np.pi / 4.0, 0.0, np.pi / 2.0, np.pi / 4.0])


def seven_dof_arm() -> RobotModel:
    """7-joint spatial chain with Franka-like limits and capsule geometry."""
    joints = []
    for (alpha, a, d), lo, hi, qd, tau in zip(
        _SEVEN_DOF_MDH, _SEVEN_DOF_Q_MIN, _SEVEN_DOF_Q_MAX, _SEVEN_DOF_QD_MAX, _SEVEN_DOF_TAU_MAX
    ):
        R = rot_x(alpha)
        joints.append(
            Joint(
                axis=np.array([0.0, 0.0, 1.0]),
                origin_rot=R,
                origin_pos=R @ np.array([a, 0.0, d]),
                q_min=lo,
                q_max=hi,
                qd_max=qd,
                tau_max=tau,
            )
        )
    links = [
        Link(mass=m, com=np.asarray(c, dtype=float), inertia=np.diag(I))
        for m, c, I in zip(_SEVEN_DOF_MASS, _SEVEN_DOF_COM, _SEVEN_DOF_INERTIA)
    ]

    def cap(p0, p1, r):
        return Capsule(p0=np.asarray(p0, dtype=float), p1=np.asarray(p1, dtype=float), radius=r)

    capsules = [
        [cap([0.0, 0.0, 0.03], [0.0, 0.0, 0.20], 0.09)],        # base column
        [cap([0.0, 0.0, -0.12], [0.0, 0.0, 0.0], 0.08)],        # link 1: shoulder column
        [cap([0.0, 0.0, 0.0], [0.0, -0.26, 0.0], 0.075)],       # link 2: upper arm
        [cap([0.0, 0.0, -0.06], [0.0825, 0.0, 0.0], 0.07)],     # link 3: elbow
        [cap([0.0, 0.0, 0.0], [-0.0825, 0.30, 0.0], 0.06)],     # link 4: forearm
        [cap([0.0, 0.0, -0.14], [0.0, 0.0, 0.0], 0.06)],        # link 5: wrist column
        [cap([0.0, 0.0, 0.0], [0.088, 0.0, 0.0], 0.055)],       # link 6: wrist
        [cap([0.0, 0.0, 0.04], [0.0, 0.0, 0.17], 0.055)],       # link 7: hand
    ]
    adjacency = {(i, i + 1) for i in range(7)}
    # frame-sharing neighbours whose capsules legitimately overlap
    adjacency |= {(0, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7)}

    model = RobotModel(
        name="seven_dof",
        joints=joints,
        links=links,
        capsules=capsules,
        adjacency=adjacency,
        task_dim=3,
        gravity=np.array([0.0, 0.0, -9.81]),
        ee_offset=np.array([0.0, 0.0, 0.107]),
    )
    model.validate()
    return model


_BUILTIN = {
    "planar3": lambda: planar_arm((0.5, 0.4, 0.3)),
    "seven_dof": seven_dof_arm,
}


def builtin_robot(name: str) -> RobotModel:
    """Robot registry used by scenario files; raises KeyError on unknown names."""
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown builtin robot {name!r}; choices: {sorted(_BUILTIN)}") from None


def ik_position(
    model: RobotModel,
    target: np.ndarray,
    q0: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-8,
    step: float = 0.5,
    lambda_reg: float = 1e-3,
) -> np.ndarray:
    """Damped-least-squares position IK; clamps iterates to joint limits."""
    q = np.asarray(q0, dtype=float).copy()
    target = np.asarray(target, dtype=float)
    lo, hi = model.q_min, model.q_max
    for _ in range(max_iter):
        x = forward_kinematics(model, q).x
        err = target - x
        if np.linalg.norm(err) < tol:
            break
        J = jacobian(model, q)
        q = q + step * (damped_pinv(J, lambda_reg) @ err)
        q = np.clip(q, lo + 1e-3, hi - 1e-3)
    return q
