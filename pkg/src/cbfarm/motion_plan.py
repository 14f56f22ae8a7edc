"""Time-independent motion plans: conservative linear dynamical systems.

The desired task velocity is the negative gradient of a quadratic potential,
so trajectories converge to a single attractor from anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LinearDS:
    """Attractor plus symmetric positive-definite curvature gain."""

    attractor: np.ndarray
    gain: np.ndarray  # (d, d) SPD

    def __post_init__(self):
        self.attractor = np.asarray(self.attractor, dtype=float)
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        d = self.attractor.shape[0]
        if self.gain.shape != (d, d):
            raise ValueError("gain must be d x d")
        if not np.allclose(self.gain, self.gain.T, atol=1e-12):
            raise ValueError("gain must be symmetric")
        if np.any(np.linalg.eigvalsh(self.gain) <= 0.0):
            raise ValueError("gain must be positive definite")

    @property
    def d(self) -> int:
        return self.attractor.shape[0]


def eval_ds(plan: LinearDS, x) -> np.ndarray:
    """Desired velocity f(x) = -2 Q (x - x*); zero exactly at the attractor."""
    x = np.asarray(x, dtype=float)
    if x.shape != plan.attractor.shape:
        raise ValueError(f"expected x of length {plan.d}")
    return -2.0 * plan.gain @ (x - plan.attractor)


def potential(plan: LinearDS, x) -> float:
    """P(x) = (x - x*)^T Q (x - x*) >= 0, with -grad P = eval_ds."""
    e = np.asarray(x, dtype=float) - plan.attractor
    return float(e @ plan.gain @ e)
