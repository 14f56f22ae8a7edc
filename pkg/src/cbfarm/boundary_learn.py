"""Data-driven C^2 boundary functions for collision constraints.

Ground truth comes from an analytic capsule oracle: self-collision clearance
is the minimum over non-adjacent link pairs of segment-segment distance minus
radii, and the per-link signed distance to a task point is point-to-capsule
distance.  A tanh-MLP classifier learns the self-collision boundary (its
logit gap is the boundary value) and a tanh-MLP regressor learns the
per-link distance field; both expose analytic gradients and Hessians.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import RobotModel, fk_batch
from .mlp import (
    MLPModel,
    TrainConfig,
    TrainingError,
    scalar_value_grad_hess,
    train_mlp,
    value_grad_hess,
)

# classifier outputs are ordered [free, collided]; the boundary value is
# their difference, positive in free space
_SCA_COMBO = np.array([1.0, -1.0])


@dataclass
class LabeledDataset:
    """Training records plus the oracle values they were labeled with."""

    inputs: np.ndarray           # (N, n) configurations, or (N, n+3) with query point
    targets: np.ndarray          # (N, 2) one-hot labels or (N, n_L) distances
    oracle_distance: np.ndarray  # (N,) clearances or (N, n_L) distances, meters
    kind: str                    # "sca" | "jsdf"

    def __len__(self) -> int:
        return self.inputs.shape[0]


# --------------------------------------------------------------------------
# segment / capsule geometry
# --------------------------------------------------------------------------


def segment_segment_distance(p0, p1, q0, q1) -> float:
    """Minimum distance between segments [p0,p1] and [q0,q1]."""
    return float(
        _segseg_batch(
            np.asarray(p0, float)[None], np.asarray(p1, float)[None],
            np.asarray(q0, float)[None], np.asarray(q1, float)[None],
        )[0]
    )


def _segseg_batch(P0, P1, Q0, Q1) -> np.ndarray:
    """Vectorized closest-distance between segment batches, shape (B,)."""
    d1 = P1 - P0
    d2 = Q1 - Q0
    r = P0 - Q0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    tiny = 1e-14
    a_s = np.maximum(a, tiny)
    e_s = np.maximum(e, tiny)

    denom = a * e - b * b
    s = np.where(denom > tiny, np.clip((b * f - c * e) / np.maximum(denom, tiny), 0.0, 1.0), 0.0)
    t = (b * s + f) / e_s
    s = np.where(t < 0.0, np.clip(-c / a_s, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / a_s, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments collapse to their start point
    s = np.where(a <= tiny, 0.0, s)
    t = np.where(e <= tiny, np.clip(f / e_s, 0.0, 1.0), t)

    diff = (P0 + s[:, None] * d1) - (Q0 + t[:, None] * d2)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def point_segment_distance(x, p0, p1) -> float:
    x = np.asarray(x, float)
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    d = p1 - p0
    dd = float(d @ d)
    t = 0.0 if dd < 1e-14 else float(np.clip((x - p0) @ d / dd, 0.0, 1.0))
    return float(np.linalg.norm(x - (p0 + t * d)))


def _world_capsules_batch(model: RobotModel, Q: np.ndarray):
    """World endpoints of every capsule for a batch of configurations.

    Returns a list of (link_index, P0 (B,3), P1 (B,3), radius).
    """
    Rs, ps = fk_batch(model, Q)
    out = []
    for link_idx, caps in enumerate(model.capsules):
        R = Rs[:, link_idx]
        p = ps[:, link_idx]
        for c in caps:
            out.append((link_idx, p + R @ c.p0, p + R @ c.p1, c.radius))
    return out


def self_collision_clearance_batch(model: RobotModel, Q: np.ndarray) -> np.ndarray:
    """Min signed clearance over non-adjacent capsule pairs, batched."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    caps = _world_capsules_batch(model, Q)
    best = np.full(Q.shape[0], np.inf)
    for i in range(len(caps)):
        li, P0i, P1i, ri = caps[i]
        for j in range(i + 1, len(caps)):
            lj, P0j, P1j, rj = caps[j]
            if li == lj or model.is_adjacent(li, lj):
                continue
            d = _segseg_batch(P0i, P1i, P0j, P1j) - (ri + rj)
            best = np.minimum(best, d)
    return best


def self_collision_oracle(model: RobotModel, q) -> float:
    """Min signed clearance (m) over non-adjacent link capsule pairs.

    Negative when any pair interpenetrates.
    """
    return float(self_collision_clearance_batch(model, np.asarray(q, float)[None])[0])


def link_sdf_batch(model: RobotModel, Q: np.ndarray, X0: np.ndarray) -> np.ndarray:
    """Per-moving-link point-to-capsule distances, batched: (B, n)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    caps = _world_capsules_batch(model, Q)
    dists = np.full((Q.shape[0], model.n), np.inf)
    for link_idx, P0, P1, r in caps:
        if link_idx == 0:
            continue  # base is fixed; not part of the joint-space field
        d = P1 - P0
        dd = np.maximum(np.einsum("ij,ij->i", d, d), 1e-14)
        t = np.clip(np.einsum("ij,ij->i", X0 - P0, d) / dd, 0.0, 1.0)
        diff = X0 - (P0 + t[:, None] * d)
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff)) - r
        dists[:, link_idx - 1] = np.minimum(dists[:, link_idx - 1], dist)
    return dists


def link_sdf_oracle(model: RobotModel, q, x0) -> np.ndarray:
    """Distance (m) from the query point to each moving link's capsules."""
    return link_sdf_batch(model, np.asarray(q, float)[None], np.asarray(x0, float)[None])[0]


# --------------------------------------------------------------------------
# dataset sampling
# --------------------------------------------------------------------------


def sample_sca_dataset(
    model: RobotModel,
    n_total: int,
    boundary_fraction: float = 0.5,
    seed: int = 0,
    boundary_tol: float = 5e-3,
) -> LabeledDataset:
    """Uniform joint-space samples plus boundary-refined ones.

    Boundary samples are bisections between mixed-label pairs, driven until
    the oracle clearance is within ``boundary_tol``.  Deterministic in seed.
    """
    if n_total <= 0:
        raise ValueError("n_total must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = model.q_min, model.q_max
    n_boundary = int(round(boundary_fraction * n_total))
    n_uniform = n_total - n_boundary

    qs = rng.uniform(lo, hi, size=(max(n_uniform, 1), model.n))
    clear = self_collision_clearance_batch(model, qs)
    if n_uniform == 0:
        qs = qs[:0]
        clear = clear[:0]

    if n_boundary > 0:
        pool = rng.uniform(lo, hi, size=(4 * n_boundary, model.n))
        pool_clear = self_collision_clearance_batch(model, pool)
        free = pool[pool_clear > 0]
        coll = pool[pool_clear <= 0]
        if len(free) == 0 or len(coll) == 0:
            raise TrainingError(
                "cannot refine boundary samples: one class is empty",
                {"free": len(free), "collided": len(coll)},
            )
        fi = rng.integers(0, len(free), n_boundary)
        ci = rng.integers(0, len(coll), n_boundary)
        A, B = free[fi].copy(), coll[ci].copy()  # clearance(A) > 0 >= clearance(B)
        mid = 0.5 * (A + B)
        for _ in range(40):
            mid = 0.5 * (A + B)
            cm = self_collision_clearance_batch(model, mid)
            done = np.abs(cm) < boundary_tol
            if done.all():
                break
            go_free = cm > 0
            A[go_free & ~done] = mid[go_free & ~done]
            B[~go_free & ~done] = mid[~go_free & ~done]
        # midpoints straddle the boundary, roughly balancing the classes
        qs = np.vstack([qs, mid])
        clear = self_collision_clearance_batch(model, qs)

    collided = clear <= 0.0
    targets = np.where(collided[:, None], [[0.0, 1.0]], [[1.0, 0.0]])
    return LabeledDataset(inputs=qs, targets=targets, oracle_distance=clear, kind="sca")


def sample_jsdf_dataset(
    model: RobotModel,
    n_total: int,
    workspace_box,
    seed: int = 0,
    near_fraction: float = 0.5,
    near_radius: float = 0.35,
) -> LabeledDataset:
    """Random (q, x0) pairs labeled with per-link oracle distances.

    ``near_fraction`` of the query points are drawn near the robot surface
    (random link point plus a bounded offset) so the regressor is most
    accurate where collision constraints activate.
    """
    if n_total <= 0:
        raise ValueError("n_total must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = model.q_min, model.q_max
    box_lo, box_hi = (np.asarray(b, dtype=float) for b in workspace_box)

    qs = rng.uniform(lo, hi, size=(n_total, model.n))
    n_near = int(round(near_fraction * n_total))
    x0 = rng.uniform(box_lo, box_hi, size=(n_total, 3))
    if n_near > 0:
        Rs, ps = fk_batch(model, qs[:n_near])
        link_pick = rng.integers(1, model.n + 1, n_near)
        anchors = ps[np.arange(n_near), link_pick]
        offs = rng.normal(size=(n_near, 3))
        offs *= (near_radius * rng.uniform(0.05, 1.0, n_near) / np.linalg.norm(offs, axis=1))[:, None]
        x0[:n_near] = np.clip(anchors + offs, box_lo, box_hi)

    dists = link_sdf_batch(model, qs, x0)
    inputs = np.hstack([qs, x0])
    return LabeledDataset(inputs=inputs, targets=dists, oracle_distance=dists, kind="jsdf")


def save_dataset(dataset: LabeledDataset, path) -> None:
    """CSV with header; numeric columns only."""
    n_in = dataset.inputs.shape[1]
    n_t = dataset.targets.shape[1]
    header = [f"in{i}" for i in range(n_in)] + [f"target{i}" for i in range(n_t)]
    oracle = np.atleast_2d(dataset.oracle_distance.T).T
    header += [f"oracle{i}" for i in range(oracle.shape[1])] + ["kind"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row_in, row_t, row_o in zip(dataset.inputs, dataset.targets, oracle):
            w.writerow(
                [f"{v:.17g}" for v in row_in]
                + [f"{v:.17g}" for v in row_t]
                + [f"{v:.17g}" for v in row_o]
                + [dataset.kind]
            )


def load_dataset(path) -> LabeledDataset:
    with open(path, "r", newline="") as f:
        r = csv.reader(f)
        header = next(r)
        rows = list(r)
    n_in = sum(1 for h in header if h.startswith("in"))
    n_t = sum(1 for h in header if h.startswith("target"))
    n_o = sum(1 for h in header if h.startswith("oracle"))
    data = np.array([[float(v) for v in row[: n_in + n_t + n_o]] for row in rows])
    kind = rows[0][-1]
    oracle = data[:, n_in + n_t:]
    return LabeledDataset(
        inputs=data[:, :n_in],
        targets=data[:, n_in:n_in + n_t],
        oracle_distance=oracle[:, 0] if n_o == 1 else oracle,
        kind=kind,
    )


# --------------------------------------------------------------------------
# training wrappers
# --------------------------------------------------------------------------


def train_classifier(
    dataset: LabeledDataset,
    layer_sizes: list[int] | None = None,
    hyper: TrainConfig | None = None,
    seed: int = 0,
    model: RobotModel | None = None,
    min_accuracy: float = 0.95,
    boundary_tol: float = 5e-3,
) -> MLPModel:
    """Two-output boundary classifier; logit gap gamma_1 - gamma_2 is the value.

    Trains with softmax cross-entropy so the gap is a log-odds score whose
    magnitude grows with confidence (the margin threshold lives in these
    units).  The accuracy gate is evaluated on held-out rows outside the
    bisection tolerance band (|clearance| >= boundary_tol): inside the band
    labels flip over sub-tolerance distances, so band rows shape the
    boundary but are reported separately instead of gated on.
    """
    if dataset.kind != "sca":
        raise ValueError("expected an sca dataset")
    n_in = dataset.inputs.shape[1]
    if layer_sizes is None:
        layer_sizes = [n_in, 80, 50, 30, 10, 2]
    hyper = hyper or TrainConfig(loss="softmax_ce")
    if hyper.loss != "softmax_ce":
        hyper = TrainConfig(**{**hyper.__dict__, "loss": "softmax_ce"})

    collided = dataset.targets[:, 1] > 0.5
    if collided.all() or (~collided).all():
        raise TrainingError("dataset needs both classes", {"collided_fraction": float(collided.mean())})

    # class-balanced cross-entropy: weight each class inversely to frequency
    frac = collided.mean()
    weights = np.where(collided, 0.5 / frac, 0.5 / (1.0 - frac))

    center, scale = _input_norm(dataset.inputs, model)
    net, history = train_mlp(
        dataset.inputs, dataset.targets, layer_sizes, hyper, seed,
        norm_center=center, norm_scale=scale, sample_weight=weights,
        aux=dataset.oracle_distance,
    )
    pred = net.forward(history["holdout_inputs"])
    hit = (pred[:, 0] > pred[:, 1]) == (history["holdout_targets"][:, 0] > 0.5)
    clear_band = np.abs(history["holdout_aux"]) >= boundary_tol
    acc = float(np.mean(hit[clear_band]))
    net.meta.update(
        kind="sca",
        holdout_accuracy=acc,
        holdout_accuracy_all=float(np.mean(hit)),
        holdout_accuracy_band=float(np.mean(hit[~clear_band])) if (~clear_band).any() else 1.0,
        n_samples=len(dataset),
        collided_fraction=float(collided.mean()),
        seed=seed,
        oracle_fingerprint=model.geometry_fingerprint() if model is not None else "",
    )
    if acc < min_accuracy:
        raise TrainingError(
            f"classifier held-out accuracy {acc:.4f} below gate {min_accuracy}",
            {"holdout_accuracy": acc, "final_loss": history["train_loss"][-1]},
        )
    return net


def train_jsdf(
    dataset: LabeledDataset,
    layer_sizes: list[int] | None = None,
    hyper: TrainConfig | None = None,
    seed: int = 0,
    model: RobotModel | None = None,
    max_rmse: float = 0.02,
    output_weight=None,
) -> MLPModel:
    """Per-link distance regressor on (q, x0) inputs; aborts above ``max_rmse``.

    Targets are standardized during optimization and the affine map is folded
    back into the last layer, so the returned net predicts meters directly.
    ``output_weight`` emphasizes selected links in the loss (distal links are
    the hardest to fit); it rescales the standardization, not the targets.
    """
    if dataset.kind != "jsdf":
        raise ValueError("expected a jsdf dataset")
    n_in = dataset.inputs.shape[1]
    n_out = dataset.targets.shape[1]
    if layer_sizes is None:
        layer_sizes = [n_in, 128, 128, 64, n_out]
    hyper = hyper or TrainConfig(loss="mse")

    t_mean = dataset.targets.mean(axis=0)
    t_std = np.maximum(dataset.targets.std(axis=0), 1e-9)
    if output_weight is not None:
        t_std = t_std / np.broadcast_to(np.asarray(output_weight, dtype=float), (n_out,))
    scaled = (dataset.targets - t_mean) / t_std

    center, scale = _input_norm(dataset.inputs, model)
    net, history = train_mlp(
        dataset.inputs, scaled, layer_sizes, hyper, seed,
        norm_center=center, norm_scale=scale,
    )
    net.weights[-1] = t_std[:, None] * net.weights[-1]
    net.biases[-1] = t_std * net.biases[-1] + t_mean

    hold_t = history["holdout_targets"] * t_std + t_mean
    err = net.forward(history["holdout_inputs"]) - hold_t
    rmse = float(np.sqrt(np.mean(err**2)))
    near = hold_t < 0.4  # the band where collision constraints activate
    net.meta.update(
        kind="jsdf",
        holdout_rmse=rmse,
        holdout_rmse_near=float(np.sqrt(np.mean(err[near] ** 2))) if near.any() else rmse,
        n_samples=len(dataset),
        seed=seed,
        oracle_fingerprint=model.geometry_fingerprint() if model is not None else "",
    )
    if rmse > max_rmse:
        raise TrainingError(
            f"jsdf held-out RMSE {rmse:.4f} m above gate {max_rmse}",
            {"holdout_rmse": rmse, "final_loss": history["train_loss"][-1]},
        )
    return net


def _input_norm(inputs: np.ndarray, model: RobotModel | None):
    """Map inputs to [-1, 1]: joint ranges when available, data range otherwise."""
    lo = inputs.min(axis=0)
    hi = inputs.max(axis=0)
    if model is not None:
        n = model.n
        lo[:n], hi[:n] = model.q_min, model.q_max
    center = 0.5 * (lo + hi)
    half = np.maximum(0.5 * (hi - lo), 1e-9)
    return center, 1.0 / half


# --------------------------------------------------------------------------
# boundary-function evaluation used by the constraint builders
# --------------------------------------------------------------------------


def sca_value(net: MLPModel, q) -> float:
    """Self-collision boundary value: positive free, negative collided."""
    out = net.forward(np.asarray(q, float)[None])[0]
    return float(out[0] - out[1])


def sca_value_grad_hess(net: MLPModel, q):
    """(value, gradient, Hessian) of the self-collision boundary function."""
    return scalar_value_grad_hess(net, np.asarray(q, float), _SCA_COMBO)


def jsdf_values(net: MLPModel, q, x0) -> np.ndarray:
    return net.forward(np.concatenate([np.asarray(q, float), np.asarray(x0, float)])[None])[0]


def jsdf_value_grad_hess(net: MLPModel, q, x0, n_joints: int):
    """Per-link (values, gradients, Hessians) w.r.t. the joint variables only."""
    z = np.concatenate([np.asarray(q, float), np.asarray(x0, float)])
    vals, jac, hess = value_grad_hess(net, z)
    return vals, jac[:, :n_joints], hess[:, :n_joints, :n_joints]
