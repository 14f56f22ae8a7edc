"""Small feed-forward tanh networks with analytic derivatives.

The forward pass is tanh on hidden layers and identity on the output, with a
per-input affine normalization folded into the analytic gradient/Hessian.
Training is plain mini-batch gradient descent with momentum; the dataset is
canonically sorted before shuffling so results depend only on its contents,
the seed and the hyperparameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class TrainingError(Exception):
    """Training failed a quality gate; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class MLPModel:
    """Weights/biases per layer plus input normalization z = (x - center) * scale."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm_center: np.ndarray
    norm_scale: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [W.shape[0] for W in self.weights]

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Batch forward pass; X is (B, input_dim), result (B, output_dim)."""
        Z = (np.atleast_2d(X) - self.norm_center) * self.norm_scale
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            Z = Z @ W.T + b
            if l < last:
                Z = np.tanh(Z)
        return Z

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


def init_mlp(
    layer_sizes: list[int],
    seed: int,
    norm_center=None,
    norm_scale=None,
    meta: dict | None = None,
) -> MLPModel:
    """Glorot-uniform initialization, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    d = layer_sizes[0]
    return MLPModel(
        weights=weights,
        biases=biases,
        norm_center=np.zeros(d) if norm_center is None else np.asarray(norm_center, dtype=float),
        norm_scale=np.ones(d) if norm_scale is None else np.asarray(norm_scale, dtype=float),
        meta=dict(meta or {}),
    )


# --------------------------------------------------------------------------
# analytic derivatives
# --------------------------------------------------------------------------


def value_grad_hess(model: MLPModel, x: np.ndarray):
    """Outputs with their input-space Jacobian and Hessians at a single point.

    Returns (value (m,), jac (m, d), hess (m, d, d)).  Derivatives propagate
    forward layer by layer using tanh' = 1 - t^2 and tanh'' = -2 t (1 - t^2),
    so the Hessians are exact and symmetric up to floating-point roundoff.
    """
    x = np.asarray(x, dtype=float).ravel()
    d = model.input_dim
    if x.shape != (d,):
        raise ValueError(f"expected input of length {d}")

    z = (x - model.norm_center) * model.norm_scale
    J = np.diag(model.norm_scale)          # (width, d)
    H = np.zeros((d, d, d))                # (width, d, d)
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        u = W @ z + b
        Ju = W @ J
        Hu = np.tensordot(W, H, axes=(1, 0))
        if l < last:
            t = np.tanh(u)
            dt = 1.0 - t**2
            ddt = -2.0 * t * dt
            z = t
            J = dt[:, None] * Ju
            H = ddt[:, None, None] * (Ju[:, :, None] * Ju[:, None, :]) + dt[:, None, None] * Hu
        else:
            z, J, H = u, Ju, Hu
    return z, J, H


def scalar_value_grad_hess(model: MLPModel, x: np.ndarray, combo: np.ndarray):
    """Value/gradient/Hessian of combo . outputs (e.g. gamma_1 - gamma_2)."""
    v, J, H = value_grad_hess(model, x)
    c = np.asarray(combo, dtype=float)
    return float(c @ v), c @ J, np.tensordot(c, H, axes=(0, 0))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 256
    loss: str = "mse"  # "mse" | "softmax_ce"
    holdout_fraction: float = 0.1
    lr_decay: float = 1.0     # multiplicative decay factor
    decay_every: int = 0      # epochs between decays; 0 disables


def _softmax(Y: np.ndarray) -> np.ndarray:
    e = np.exp(Y - Y.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grad(Y: np.ndarray, T: np.ndarray, loss: str, w: np.ndarray | None):
    """Mean loss over the batch and its gradient w.r.t. Y, optionally weighted."""
    B = Y.shape[0]
    wc = np.ones(B) if w is None else w
    if loss == "mse":
        diff = Y - T
        L = float((wc @ np.sum(diff**2, axis=1)) / diff.size)
        return L, (2.0 * wc[:, None] * diff) / diff.size
    if loss == "softmax_ce":
        P = _softmax(Y)
        eps = 1e-12
        L = float((wc @ -np.sum(T * np.log(P + eps), axis=1)) / B)
        return L, (wc[:, None] * (P - T)) / B
    raise ValueError(f"unknown loss {loss!r}")


def _canonical_order(inputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Permutation-invariant row order: lexicographic over (inputs, targets)."""
    keys = np.hstack([inputs, targets])
    return np.lexsort(keys.T[::-1])


def train_mlp(
    inputs: np.ndarray,
    targets: np.ndarray,
    layer_sizes: list[int],
    config: TrainConfig,
    seed: int,
    norm_center=None,
    norm_scale=None,
    sample_weight=None,
    aux=None,
):
    """Mini-batch SGD with momentum; returns (model, history).

    ``history`` carries per-epoch training loss plus the held-out split
    indices so callers can evaluate quality gates on untouched data.
    ``sample_weight`` reweights individual rows in the loss (training rows
    only; the held-out split is untouched).  ``aux`` rides along with the
    rows and its held-out slice is returned in the history.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[0] != inputs.shape[0]:
        targets = targets.T
    if layer_sizes[0] != inputs.shape[1] or layer_sizes[-1] != targets.shape[1]:
        raise ValueError("layer_sizes endpoints must match data dimensions")

    order = _canonical_order(inputs, targets)
    inputs, targets = inputs[order], targets[order]
    weights = None if sample_weight is None else np.asarray(sample_weight, dtype=float)[order]
    aux_sorted = None if aux is None else np.asarray(aux)[order]

    rng = np.random.default_rng(seed)
    n = inputs.shape[0]
    n_hold = int(round(config.holdout_fraction * n))
    perm = rng.permutation(n)
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    Xtr, Ttr = inputs[train_idx], targets[train_idx]
    Wtr = None if weights is None else weights[train_idx]

    model = init_mlp(layer_sizes, seed=seed, norm_center=norm_center, norm_scale=norm_scale)
    vel_W = [np.zeros_like(W) for W in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    last = len(model.weights) - 1

    losses = []
    n_tr = Xtr.shape[0]
    lr = config.lr
    for epoch in range(config.epochs):
        if config.decay_every and epoch and epoch % config.decay_every == 0:
            lr *= config.lr_decay
        epoch_perm = rng.permutation(n_tr)
        epoch_loss = 0.0
        for start in range(0, n_tr, config.batch_size):
            idx = epoch_perm[start:start + config.batch_size]
            X, T = Xtr[idx], Ttr[idx]

            # forward, caching activations
            acts = [(X - model.norm_center) * model.norm_scale]
            for l, (W, b) in enumerate(zip(model.weights, model.biases)):
                U = acts[-1] @ W.T + b
                acts.append(np.tanh(U) if l < last else U)
            loss, dY = _loss_and_grad(acts[-1], T, config.loss, None if Wtr is None else Wtr[idx])
            epoch_loss += loss * len(idx)

            # backward
            delta = dY
            for l in range(last, -1, -1):
                gW = delta.T @ acts[l]
                gb = delta.sum(axis=0)
                if l > 0:
                    delta = (delta @ model.weights[l]) * (1.0 - acts[l] ** 2)
                vel_W[l] = config.momentum * vel_W[l] - lr * gW
                vel_b[l] = config.momentum * vel_b[l] - lr * gb
                model.weights[l] = model.weights[l] + vel_W[l]
                model.biases[l] = model.biases[l] + vel_b[l]
        losses.append(epoch_loss / n_tr)

    history = {
        "train_loss": losses,
        "holdout_inputs": inputs[hold_idx],
        "holdout_targets": targets[hold_idx],
    }
    if aux_sorted is not None:
        history["holdout_aux"] = aux_sorted[hold_idx]
    return model, history


# --------------------------------------------------------------------------
# model file format (plain text, documented in the README)
# --------------------------------------------------------------------------


def save_mlp(model: MLPModel, path) -> None:
    with open(path, "w") as f:
        f.write("cbfarm-mlp v1\n")
        f.write("meta " + json.dumps(model.meta, sort_keys=True) + "\n")
        f.write("layers " + " ".join(str(s) for s in model.layer_sizes) + "\n")
        f.write("norm_center " + " ".join(f"{v:.17g}" for v in model.norm_center) + "\n")
        f.write("norm_scale " + " ".join(f"{v:.17g}" for v in model.norm_scale) + "\n")
        for l, (W, b) in enumerate(zip(model.weights, model.biases), start=1):
            f.write(f"W{l} {W.shape[0]} {W.shape[1]}\n")
            for row in W:
                f.write(" ".join(f"{v:.17g}" for v in row) + "\n")
            f.write(f"b{l} {b.shape[0]}\n")
            f.write(" ".join(f"{v:.17g}" for v in b) + "\n")


def load_mlp(path) -> MLPModel:
    with open(path, "r") as f:
        header = f.readline().strip()
        if header != "cbfarm-mlp v1":
            raise ValueError(f"unrecognized model file header: {header!r}")
        meta = json.loads(f.readline().split(" ", 1)[1])
        sizes = [int(s) for s in f.readline().split()[1:]]
        norm_center = np.array([float(v) for v in f.readline().split()[1:]])
        norm_scale = np.array([float(v) for v in f.readline().split()[1:]])
        weights, biases = [], []
        for _ in range(len(sizes) - 1):
            _, rows, cols = f.readline().split()
            W = np.array([[float(v) for v in f.readline().split()] for _ in range(int(rows))])
            if W.shape != (int(rows), int(cols)):
                raise ValueError("weight block shape mismatch")
            _, blen = f.readline().split()
            b = np.array([float(v) for v in f.readline().split()])
            if b.shape != (int(blen),):
                raise ValueError("bias block shape mismatch")
            weights.append(W)
            biases.append(b)
    model = MLPModel(weights, biases, norm_center, norm_scale, meta)
    if model.layer_sizes != sizes:
        raise ValueError("layer size header inconsistent with weight blocks")
    return model
