"""Closed-loop simulation harness.

A scenario file fixes the robot, the motion plan, damping, barrier toggles
with their gains and margins, obstacles, an external force profile, and the
integration settings.  Each step computes the passive impedance force,
builds the enabled barrier rows, substitutes the dynamics to get torque-space
constraints, solves the relaxed QP, applies external forces through the
Jacobian transpose, and integrates with semi-implicit Euler
(qd+ = qd + qdd dt; q+ = q + qd+ dt).  Everything is deterministic given the
scenario.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import barriers as bar
from . import boundary_learn as bl
from . import dynamics as dyn
from . import passive_ctl as pc
from . import robots
from .mlp import MLPModel, load_mlp
from .motion_plan import LinearDS, eval_ds
from .qp import QPError, assemble_rcbf_qp, solve_qp


class ScenarioError(Exception):
    """Scenario file or state is invalid."""


class SimulationAbort(Exception):
    """Non-finite state encountered; carries the partial log."""

    def __init__(self, message: str, log: "RunLog"):
        super().__init__(message)
        self.log = log


# --------------------------------------------------------------------------
# scenario description
# --------------------------------------------------------------------------


@dataclass
class ForceSegment:
    """Piecewise-constant end-effector wrench on [start, end)."""

    start: float
    end: float
    wrench: np.ndarray

    def __post_init__(self):
        self.wrench = np.asarray(self.wrench, dtype=float)


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)


@dataclass
class ConstraintConfig:
    enabled: bool = False
    margin: float = 0.0
    model: str | None = None   # boundary-model reference for SCA / ECA
    links: list[int] | None = None  # ECA only; None selects every link


@dataclass
class Scenario:
    """Everything needed to reproduce one closed-loop run."""

    name: str
    robot: str = "seven_dof"
    duration: float = 5.0
    dt: float = 1e-3
    seed: int = 0
    initial_q: np.ndarray | None = None
    initial_qdot: np.ndarray | None = None
    attractor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    plan_gain_diag: np.ndarray = field(default_factory=lambda: 25.0 * np.ones(3))
    damping: np.ndarray = field(default_factory=lambda: np.array([60.0, 35.0, 35.0]))
    poles: tuple[float, float] = (-8.0, -8.0)
    joint_limits: ConstraintConfig = field(default_factory=lambda: ConstraintConfig(True, 0.05))
    self_collision: ConstraintConfig = field(default_factory=ConstraintConfig)
    external_collision: ConstraintConfig = field(default_factory=ConstraintConfig)
    singularity: ConstraintConfig = field(default_factory=ConstraintConfig)
    obstacles: list[Obstacle] = field(default_factory=list)
    forces: list[ForceSegment] = field(default_factory=list)
    gravity_comp: str = "joint"      # "joint" | "task"
    pinv_damping: float = 1e-4
    rho_reg: float = 1e-8
    slack_penalty_eca: float = 1e3
    slack_penalty_sa: float = 1e3
    fallback_damping: float = 5.0
    qp_tol: float = 1e-10
    qp_max_iter: int = 100

    def __post_init__(self):
        if not 0.0 < self.dt <= 0.01:
            raise ScenarioError("dt must be in (0, 0.01]")
        if self.duration <= 0.0:
            raise ScenarioError("duration must be positive")
        if self.gravity_comp not in ("joint", "task"):
            raise ScenarioError("gravity_comp must be 'joint' or 'task'")

    def with_disabled(self, *kinds: str) -> "Scenario":
        """Copy with constraints C1..C4 (JL/SCA/ECA/SA) switched off."""
        mapping = {
            "C1": "joint_limits", "JL": "joint_limits",
            "C2": "self_collision", "SCA": "self_collision",
            "C3": "external_collision", "ECA": "external_collision",
            "C4": "singularity", "SA": "singularity",
        }
        sc = dataclasses.replace(self)
        for kind in kinds:
            attr = mapping.get(kind.upper())
            if attr is None:
                raise ScenarioError(f"unknown constraint {kind!r}; use C1..C4 or JL/SCA/ECA/SA")
            cfg = getattr(sc, attr)
            setattr(sc, attr, dataclasses.replace(cfg, enabled=False))
        sc.name = f"{self.name}-no-" + "-".join(k.upper() for k in kinds)
        return sc


def _resource_path(name: str) -> str:
    return str(importlib.resources.files("cbfarm").joinpath(name))


def resolve_boundary_model(ref: str | None, expected_fingerprint: str = "") -> MLPModel:
    """Load a boundary model from a path or a builtin: reference."""
    if ref is None:
        raise ScenarioError("constraint enabled but no boundary model configured")
    path = _resource_path(f"models/{ref.split(':', 1)[1]}.txt") if ref.startswith("builtin:") else ref
    if not os.path.exists(path):
        raise ScenarioError(
            f"boundary model {ref!r} not found at {path}; train one with "
            "`cbfarm train-sca` / `cbfarm train-jsdf` or fix the scenario path"
        )
    net = load_mlp(path)
    fp = net.meta.get("oracle_fingerprint", "")
    if expected_fingerprint and fp and fp != expected_fingerprint:
        raise ScenarioError(
            f"boundary model {ref!r} was trained against different robot geometry "
            f"({fp} != {expected_fingerprint}); retrain it"
        )
    return net


@dataclass
class ResolvedScenario:
    """Scenario with robot and boundary models materialized."""

    scenario: Scenario
    model: dyn.RobotModel
    plan: LinearDS
    damping: pc.DampingSpec
    gains: bar.BarrierGains
    sca_net: MLPModel | None
    jsdf_net: MLPModel | None
    initial: dyn.JointState


def resolve_scenario(sc: Scenario) -> ResolvedScenario:
    model = robots.builtin_robot(sc.robot) if not os.path.exists(str(sc.robot)) else dyn.load_robot(sc.robot)
    d = model.task_dim
    plan = LinearDS(attractor=sc.attractor, gain=np.diag(np.broadcast_to(sc.plan_gain_diag, (d,))))
    damping = pc.DampingSpec(np.broadcast_to(sc.damping, (d,)).copy())
    gains = bar.BarrierGains.from_poles(*sc.poles)

    fp = model.geometry_fingerprint()
    sca_net = resolve_boundary_model(sc.self_collision.model, fp) if sc.self_collision.enabled else None
    jsdf_net = (
        resolve_boundary_model(sc.external_collision.model, fp)
        if sc.external_collision.enabled
        else None
    )

    q0 = np.asarray(sc.initial_q, dtype=float) if sc.initial_q is not None else np.zeros(model.n)
    qd0 = np.asarray(sc.initial_qdot, dtype=float) if sc.initial_qdot is not None else np.zeros(model.n)
    state = dyn.JointState(q=q0, qdot=qd0)
    if np.any(q0 <= model.q_min) or np.any(q0 >= model.q_max):
        raise ScenarioError("initial configuration must be strictly inside joint limits")
    if sca_net is not None:
        gamma0 = bl.sca_value(sca_net, q0)
        if gamma0 <= sc.self_collision.margin:
            raise ScenarioError(
                f"initial configuration starts inside the self-collision margin "
                f"(gamma={gamma0:.2f} <= {sc.self_collision.margin})"
            )
    return ResolvedScenario(sc, model, plan, damping, gains, sca_net, jsdf_net, state)


def external_force(sc: Scenario, t: float, d: int) -> np.ndarray:
    F = np.zeros(d)
    for seg in sc.forces:
        if seg.start <= t < seg.end:
            F = F + seg.wrench[:d]
    return F


# --------------------------------------------------------------------------
# run log
# --------------------------------------------------------------------------

_SCALAR_COLUMNS = [
    "h_jl", "h_sca", "h_eca", "h_sa", "mi", "sca_gamma", "sca_clearance", "eca_oracle",
    "S", "Sdot", "power", "feasible", "violation", "qp_optimal", "qp_iterations",
    "track_residual", "n_active", "slack_max", "solve_time", "fallback",
]


def _sanitize(obj):
    """JSON-safe copy: numpy scalars to python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


@dataclass
class RunLog:
    """Per-step time series plus a derived summary block."""

    scenario_name: str
    n: int
    d: int
    t: list = field(default_factory=list)
    q: list = field(default_factory=list)
    qdot: list = field(default_factory=list)
    x: list = field(default_factory=list)
    xdot: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    F_c: list = field(default_factory=list)
    scalars: dict = field(default_factory=lambda: {k: [] for k in _SCALAR_COLUMNS})
    slacks: list = field(default_factory=list)           # per-step soft-row slacks
    soft_residuals: list = field(default_factory=list)   # per-step a.z - b per soft row
    soft_tags: list = field(default_factory=list)
    trace: pc.PassivityTrace = field(default_factory=pc.PassivityTrace)
    attractor: np.ndarray | None = None
    aborted: bool = False

    def __len__(self) -> int:
        return len(self.t)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.scalars[name], dtype=float)

    def summary(self) -> dict:
        if len(self) == 0:
            return {"scenario": self.scenario_name, "steps": 0, "aborted": self.aborted}
        solve = self.column("solve_time")
        min_h = {
            k: float(np.min(self.column(col)))
            for k, col in [("JL", "h_jl"), ("SCA", "h_sca"), ("ECA", "h_eca"), ("SA", "h_sa")]
            if np.isfinite(self.column(col)).any()
        }
        feasible = self.column("feasible").astype(bool)
        h_jl = self.column("h_jl")
        h_sca = self.column("h_sca")
        hard_viol = (np.nan_to_num(h_jl, nan=np.inf) < -1e-6) | (np.nan_to_num(h_sca, nan=np.inf) < -1e-6)
        out = {
            "scenario": self.scenario_name,
            "steps": len(self),
            "aborted": self.aborted,
            "min_h": min_h,
            "min_mi": float(np.min(self.column("mi"))),
            "min_sca_clearance": float(np.min(self.column("sca_clearance"))),
            "min_eca_oracle": float(np.min(self.column("eca_oracle"))),
            "hard_violations": int(np.sum(hard_viol)),
            "passivity_violations": int(self.trace.violation_count),
            "feasible_steps": int(feasible.sum()),
            "fallback_steps": int(self.column("fallback").sum()),
            "qp_iterations_mean": float(np.mean(self.column("qp_iterations"))),
            "solve_time_mean": float(np.mean(solve)),
            "solve_time_max": float(np.max(solve)),
        }
        if self.attractor is not None:
            out["final_tracking_error"] = float(np.linalg.norm(np.asarray(self.x[-1]) - self.attractor))
        return _sanitize(out)


# --------------------------------------------------------------------------
# closed-loop stepping
# --------------------------------------------------------------------------


@dataclass
class StepCaches:
    """State owned by the control loop across steps."""

    prev_sa_grad: np.ndarray | None = None
    S_prev: float | None = None
    t: float = 0.0
    kin: tuple | None = None  # (fk, J, H) computed at the upcoming state


def _effective_pinv_damping(lam0: float, mi: float, eps_sa: float) -> float:
    """Ramp the pseudo-inverse damping up smoothly as MI approaches zero."""
    if eps_sa <= 0.0 or mi >= 2.0 * eps_sa:
        return lam0
    return lam0 * (1.0 + 99.0 * (1.0 - mi / (2.0 * eps_sa)))


def step(state: dyn.JointState, rt: ResolvedScenario, caches: StepCaches):
    """One control + integration step; returns (next_state, log_row dict)."""
    sc = rt.scenario
    model = rt.model
    n, d = model.n, model.task_dim
    q, qd = state.q, state.qdot
    t = caches.t

    if caches.kin is not None:
        fk, J, H = caches.kin
    else:
        fk = dyn.forward_kinematics(model, q)
        J = dyn.jacobian(model, q)
        H = dyn.mass_matrix(model, q)
    x = fk.x
    xdot = J @ qd

    bias_full, G_q = dyn.bias_and_gravity(model, q, qd)
    Cqd = bias_full - G_q

    mi = dyn.manipulability_index(model, q)
    eps_sa = rt.scenario.singularity.margin if rt.scenario.singularity.enabled else 0.0
    lam = _effective_pinv_damping(sc.pinv_damping, mi, eps_sa)
    G = dyn.damped_pinv_T(J, lam)  # d x n map tau -> task force

    F_ext = external_force(sc, t, d)
    tau_ext = J.T @ F_ext

    if sc.gravity_comp == "joint":
        tau_base = G_q
        F_ref = pc.control_force(x, xdot, rt.plan, rt.damping, G_x=None)
        bias_for_rows = Cqd
    else:
        tau_base = np.zeros(n)
        F_ref = pc.control_force(x, xdot, rt.plan, rt.damping, G_x=G @ G_q)
        bias_for_rows = bias_full

    rows = []
    if sc.joint_limits.enabled:
        rows += bar.joint_limit_rows(q, qd, model, sc.joint_limits.margin, sc.joint_limits.margin, rt.gains)
    sca_gamma = np.nan
    if sc.self_collision.enabled:
        row = bar.sca_row(q, qd, rt.sca_net, sc.self_collision.margin, rt.gains)
        sca_gamma = row.extras["gamma"]
        rows.append(row)
    if sc.external_collision.enabled and sc.obstacles:
        points = [ob.center for ob in sc.obstacles]
        eps = [sc.external_collision.margin + ob.radius for ob in sc.obstacles]
        rows += bar.eca_rows(q, qd, rt.jsdf_net, points, eps, rt.gains, links=sc.external_collision.links)
    new_sa_grad = caches.prev_sa_grad
    if sc.singularity.enabled:
        row, new_sa_grad = bar.sa_row(q, qd, model, sc.singularity.margin, rt.gains, caches.prev_sa_grad, sc.dt)
        rows.append(row)

    torque_rows = bar.rows_to_torque_space(rows, H, bias_for_rows, tau_ext)

    t0 = time.perf_counter()
    fallback = False
    status_optimal = False
    iterations = 0
    slacks = np.zeros(0)
    soft_res = np.zeros(0)
    soft_tags = [r.tag for r in rows if not r.hard]
    try:
        qp = assemble_rcbf_qp(
            F_ref, G, torque_rows,
            Pi=sc.slack_penalty_eca, pi=sc.slack_penalty_sa, rho_reg=sc.rho_reg,
            tau_min=-model.tau_max - tau_base, tau_max=model.tau_max - tau_base,
        )
        sol = solve_qp(qp, tol=sc.qp_tol, max_iter=sc.qp_max_iter)
        status_optimal = sol.status == "optimal"
        iterations = sol.iterations
    except QPError:
        status_optimal = False
    solve_time = time.perf_counter() - t0

    if status_optimal:
        tau_tilde = sol.z[:n]
        slacks = sol.z[n:]
        tau_c = tau_base + tau_tilde
        soft_idx = [i for i, r in enumerate(torque_rows) if not r.hard]
        soft_res = np.array([torque_rows[i].residual(tau_tilde) for i in soft_idx])
        n_active = len(sol.active_set)
    else:
        # hard rows unsatisfiable (or solver failure): damp to a safe stop
        fallback = True
        tau_c = -sc.fallback_damping * qd + G_q
        tau_tilde = tau_c - tau_base
        n_active = 0

    track_residual = float(np.linalg.norm(G @ tau_tilde - F_ref))
    F_c_full = F_ref if sc.gravity_comp == "task" else F_ref + G @ G_q
    feasible = status_optimal and track_residual <= 1e-6 * (1.0 + np.linalg.norm(F_c_full))

    from scipy.linalg import cho_factor, cho_solve

    qdd = cho_solve(cho_factor(H), tau_c + tau_ext - bias_full)
    qd_next = qd + qdd * sc.dt
    q_next = q + qd_next * sc.dt
    if not (np.all(np.isfinite(q_next)) and np.all(np.isfinite(qd_next))):
        raise FloatingPointError("state became non-finite")

    # storage uses a fixed-damping task metric so its increments are comparable
    lam0 = sc.pinv_damping
    if caches.S_prev is None:
        G0 = dyn.damped_pinv_T(J, lam0)
        caches.S_prev = pc.storage(x, xdot, G0 @ H @ G0.T, rt.damping.lambda1, rt.plan)
    fk_next = dyn.forward_kinematics(model, q_next)
    J_next = dyn.jacobian(model, q_next)
    G_next = dyn.damped_pinv_T(J_next, lam0)
    H_next = dyn.mass_matrix(model, q_next)
    S_next = pc.storage(fk_next.x, J_next @ qd_next, G_next @ H_next @ G_next.T, rt.damping.lambda1, rt.plan)
    S_prev = caches.S_prev
    power_vel = J @ qd_next  # force's discrete work rate over this step
    caches.S_prev = S_next
    caches.prev_sa_grad = new_sa_grad
    caches.t = t + sc.dt
    caches.kin = (fk_next, J_next, H_next)

    # barrier diagnostics for the log
    h_jl = min((r.h_value for r in rows if r.kind in ("JL+", "JL-")), default=np.nan)
    h_sca = next((r.h_value for r in rows if r.kind == "SCA"), np.nan)
    h_eca = min((r.h_value for r in rows if r.kind == "ECA"), default=np.nan)
    h_sa = next((r.h_value for r in rows if r.kind == "SA"), np.nan)

    row_dict = {
        "t": t, "q": q.copy(), "qdot": qd.copy(), "x": x.copy(), "xdot": xdot.copy(),
        "tau": tau_c.copy(), "F_c": F_c_full.copy(),
        "h_jl": h_jl, "h_sca": h_sca, "h_eca": h_eca, "h_sa": h_sa,
        "mi": mi, "sca_gamma": sca_gamma,
        "S": S_prev, "Sdot": (S_next - S_prev) / sc.dt,
        "power": float(F_ext @ power_vel),
        "feasible": feasible, "qp_optimal": status_optimal, "qp_iterations": iterations,
        "track_residual": track_residual, "n_active": n_active,
        "slacks": slacks, "soft_residuals": soft_res, "soft_tags": soft_tags,
        "solve_time": solve_time, "fallback": fallback,
        "F_ext": F_ext, "xdot_next": power_vel,
    }
    return dyn.JointState(q=q_next, qdot=qd_next), row_dict


def run(scenario: Scenario, log_oracles: bool = True) -> RunLog:
    """Iterate the closed loop for duration/dt steps; deterministic."""
    rt = resolve_scenario(scenario)
    model = rt.model
    log = RunLog(scenario_name=scenario.name, n=model.n, d=model.task_dim)
    log.attractor = rt.plan.attractor.copy()
    caches = StepCaches()
    state = rt.initial
    n_steps = int(round(scenario.duration / scenario.dt))

    abort_exc = None
    for k in range(n_steps):
        try:
            state, row = step(state, rt, caches)
        except FloatingPointError as exc:
            log.aborted = True
            abort_exc = exc
            break

        sca_clear = np.nan
        eca_oracle = np.nan  # oracle columns are filled in batch after the loop

        log.t.append(row["t"])
        log.q.append(row["q"])
        log.qdot.append(row["qdot"])
        log.x.append(row["x"])
        log.xdot.append(row["xdot"])
        log.tau.append(row["tau"])
        log.F_c.append(row["F_c"])
        log.slacks.append(row["slacks"])
        log.soft_residuals.append(row["soft_residuals"])
        log.soft_tags = row["soft_tags"] or log.soft_tags
        s = log.scalars
        s["h_jl"].append(row["h_jl"])
        s["h_sca"].append(row["h_sca"])
        s["h_eca"].append(row["h_eca"])
        s["h_sa"].append(row["h_sa"])
        s["mi"].append(row["mi"])
        s["sca_gamma"].append(row["sca_gamma"])
        s["sca_clearance"].append(sca_clear)
        s["eca_oracle"].append(eca_oracle)
        s["S"].append(row["S"])
        s["Sdot"].append(row["Sdot"])
        s["power"].append(row["power"])
        s["feasible"].append(float(row["feasible"]))
        s["violation"].append(0.0)  # patched below from the passivity trace
        s["qp_optimal"].append(float(row["qp_optimal"]))
        s["qp_iterations"].append(row["qp_iterations"])
        s["track_residual"].append(row["track_residual"])
        s["n_active"].append(row["n_active"])
        s["slack_max"].append(float(np.max(row["slacks"])) if row["slacks"].size else 0.0)
        s["solve_time"].append(row["solve_time"])
        s["fallback"].append(float(row["fallback"]))

        pc.passivity_step(
            log.trace, row["S"], row["S"] + row["Sdot"] * scenario.dt, scenario.dt,
            row["F_ext"], row["xdot_next"], row["feasible"], t=row["t"],
        )
        s["violation"][-1] = float(log.trace.violation[-1])

    if log_oracles and len(log):
        Q = np.asarray(log.q)
        log.scalars["sca_clearance"] = list(bl.self_collision_clearance_batch(model, Q))
        if scenario.obstacles:
            links = scenario.external_collision.links or list(range(1, model.n + 1))
            idx = [l - 1 for l in links]
            per_ob = [
                bl.link_sdf_batch(model, Q, np.tile(ob.center, (len(Q), 1)))[:, idx].min(axis=1)
                for ob in scenario.obstacles
            ]
            log.scalars["eca_oracle"] = list(np.minimum.reduce(per_ob))

    if abort_exc is not None:
        raise SimulationAbort(f"aborted at step {len(log)}: {abort_exc}", log) from abort_exc
    return log


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

CSV_NOTE = (
    "fixed column order: t, q*, qdot*, x*, xdot*, tau*, Fc*, then scalar "
    "diagnostics in _SCALAR_COLUMNS order"
)


def emit_outputs(log: RunLog, out_dir) -> dict:
    """Write run.csv, summary.json and SVG plots; byte-stable across reruns."""
    if len(log) == 0:
        raise ValueError("cannot emit outputs for an empty log")
    os.makedirs(out_dir, exist_ok=True)
    n, d = log.n, log.d

    csv_path = os.path.join(out_dir, "run.csv")
    header = (
        ["t"]
        + [f"q{i+1}" for i in range(n)]
        + [f"qdot{i+1}" for i in range(n)]
        + [f"x{i+1}" for i in range(d)]
        + [f"xdot{i+1}" for i in range(d)]
        + [f"tau{i+1}" for i in range(n)]
        + [f"Fc{i+1}" for i in range(d)]
        + _SCALAR_COLUMNS
    )
    with open(csv_path, "w") as f:
        f.write(",".join(header) + "\n")
        for k in range(len(log)):
            vals = (
                [log.t[k]]
                + list(log.q[k]) + list(log.qdot[k]) + list(log.x[k]) + list(log.xdot[k])
                + list(log.tau[k]) + list(log.F_c[k])
                + [log.scalars[cname][k] for cname in _SCALAR_COLUMNS]
            )
            f.write(",".join(f"{v:.17g}" for v in vals) + "\n")

    summary = log.summary()
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    _plots(log, out_dir)
    return summary


def _plots(log: RunLog, out_dir) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cbfarm"
    t = np.asarray(log.t)
    meta = {"Date": None}

    fig, ax = plt.subplots(figsize=(7, 4))
    for col, label in [("h_jl", "h_JL (min)"), ("h_sca", "h_SCA"), ("h_eca", "h_ECA (min)"), ("h_sa", "h_SA")]:
        y = log.column(col)
        if np.isfinite(y).any():
            ax.plot(t, y, label=label)
    ax.axhline(0.0, color="k", lw=0.8, ls="--")
    ax.set_xlim(t[0], t[-1])
    ax.set_xlabel("time [s]")
    ax.set_ylabel("barrier value")
    ax.legend(loc="best")
    ax.set_title(f"{log.scenario_name}: boundary functions")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "h_traces.svg"), metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, log.column("mi"), label="MI")
    ax.set_xlim(t[0], t[-1])
    ax.set_xlabel("time [s]")
    ax.set_ylabel("manipulability index")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "mi.svg"), metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, log.column("S"), label="storage S")
    ax.plot(t, log.column("Sdot"), label="dS/dt", alpha=0.6)
    ax.plot(t, log.column("power"), label="F_ext . xdot", alpha=0.6)
    ax.set_xlim(t[0], t[-1])
    ax.set_xlabel("time [s]")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "storage_power.svg"), metadata=meta)
    plt.close(fig)


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------


def scenario_to_dict(sc: Scenario) -> dict:
    def ccfg(c: ConstraintConfig) -> dict:
        out = {"enabled": c.enabled, "margin": c.margin}
        if c.model is not None:
            out["model"] = c.model
        if c.links is not None:
            out["links"] = list(c.links)
        return out

    return {
        "schema_version": 1,
        "name": sc.name,
        "robot": sc.robot,
        "duration": sc.duration,
        "dt": sc.dt,
        "seed": sc.seed,
        "initial_q": None if sc.initial_q is None else np.asarray(sc.initial_q).tolist(),
        "initial_qdot": None if sc.initial_qdot is None else np.asarray(sc.initial_qdot).tolist(),
        "plan": {
            "attractor": np.asarray(sc.attractor).tolist(),
            "gain_diag": np.asarray(sc.plan_gain_diag).tolist(),
        },
        "damping": np.asarray(sc.damping).tolist(),
        "gains": {"poles": list(sc.poles)},
        "constraints": {
            "joint_limits": ccfg(sc.joint_limits),
            "self_collision": ccfg(sc.self_collision),
            "external_collision": ccfg(sc.external_collision),
            "singularity": ccfg(sc.singularity),
        },
        "obstacles": [{"center": ob.center.tolist(), "radius": ob.radius} for ob in sc.obstacles],
        "forces": [
            {"start": seg.start, "end": seg.end, "wrench": seg.wrench.tolist()} for seg in sc.forces
        ],
        "gravity_comp": sc.gravity_comp,
        "pinv_damping": sc.pinv_damping,
        "rho_reg": sc.rho_reg,
        "slack_penalty_eca": sc.slack_penalty_eca,
        "slack_penalty_sa": sc.slack_penalty_sa,
        "fallback_damping": sc.fallback_damping,
    }


def scenario_from_dict(data: dict) -> Scenario:
    if data.get("schema_version") != 1:
        raise ScenarioError(f"unsupported scenario schema version {data.get('schema_version')!r}")

    def ccfg(d: dict | None) -> ConstraintConfig:
        d = d or {}
        return ConstraintConfig(
            enabled=bool(d.get("enabled", False)),
            margin=float(d.get("margin", 0.0)),
            model=d.get("model"),
            links=d.get("links"),
        )

    cons = data.get("constraints", {})
    plan = data.get("plan", {})
    return Scenario(
        name=str(data["name"]),
        robot=str(data.get("robot", "seven_dof")),
        duration=float(data.get("duration", 5.0)),
        dt=float(data.get("dt", 1e-3)),
        seed=int(data.get("seed", 0)),
        initial_q=data.get("initial_q"),
        initial_qdot=data.get("initial_qdot"),
        attractor=np.asarray(plan.get("attractor", [0.0, 0.0, 0.0]), dtype=float),
        plan_gain_diag=np.asarray(plan.get("gain_diag", [25.0, 25.0, 25.0]), dtype=float),
        damping=np.asarray(data.get("damping", [60.0, 35.0, 35.0]), dtype=float),
        poles=tuple(data.get("gains", {}).get("poles", (-8.0, -8.0))),
        joint_limits=ccfg(cons.get("joint_limits", {"enabled": True, "margin": 0.05})),
        self_collision=ccfg(cons.get("self_collision")),
        external_collision=ccfg(cons.get("external_collision")),
        singularity=ccfg(cons.get("singularity")),
        obstacles=[
            Obstacle(center=np.asarray(ob["center"], dtype=float), radius=float(ob.get("radius", 0.0)))
            for ob in data.get("obstacles", [])
        ],
        forces=[
            ForceSegment(float(f["start"]), float(f["end"]), np.asarray(f["wrench"], dtype=float))
            for f in data.get("forces", [])
        ],
        gravity_comp=str(data.get("gravity_comp", "joint")),
        pinv_damping=float(data.get("pinv_damping", 1e-4)),
        rho_reg=float(data.get("rho_reg", 1e-8)),
        slack_penalty_eca=float(data.get("slack_penalty_eca", 1e3)),
        slack_penalty_sa=float(data.get("slack_penalty_sa", 1e3)),
        fallback_damping=float(data.get("fallback_damping", 5.0)),
    )


def load_scenario(path) -> Scenario:
    with open(path, "r") as f:
        return scenario_from_dict(yaml.safe_load(f))


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(sc), f, sort_keys=False)


_LIBRARY_FILES = {
    "s1_self_collision": "scenarios/s1_self_collision.yaml",
    "s2_external_collision": "scenarios/s2_external_collision.yaml",
    "s3_singularity": "scenarios/s3_singularity.yaml",
    "s4_all_constraints": "scenarios/s4_all_constraints.yaml",
    "s5_perturbation": "scenarios/s5_perturbation.yaml",
}


def scenario_library() -> dict[str, Scenario]:
    """The four built-in experiment scenarios plus the perturbation one."""
    return {name: load_scenario(_resource_path(rel)) for name, rel in _LIBRARY_FILES.items()}
