"""Losses, readout error signals, and learning-signal broadcast.

The error signal at a readout is the gradient of the incremental loss with
respect to the readout voltage; the per-neuron learning signal is that error
vector projected through a fixed random feedback matrix.  A per-step binary
learning window gates both loss and error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_MSE = "mse"
LOSS_CROSS_ENTROPY = "cross-entropy-softmax"
LOSS_TEMPORAL_MSE = "temporal-mse"
LOSS_KINDS = (LOSS_MSE, LOSS_CROSS_ENTROPY, LOSS_TEMPORAL_MSE)

# floor inside log() for the cross-entropy loss; probabilities cannot be
# exactly zero after max-subtracted softmax unless inputs are far apart
PROB_FLOOR = 1e-12


@dataclass
class TargetSignal:
    """Per-step targets and the binary learning-window mask.

    ``values`` has shape (T, K): regression targets y*_k^t or one-hot class
    rows.  ``window`` has shape (T,) with entries in {0, 1}; plasticity and
    loss are gated off wherever it is 0.
    """

    values: np.ndarray
    window: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.window = np.asarray(self.window)
        if self.values.ndim != 2:
            raise ValueError("target values must have shape (T, K)")
        if self.window.shape != (self.values.shape[0],):
            raise ValueError("window length must match target length")
        if not np.isin(self.window, (0, 1)).all():
            raise ValueError("learning window mask must be binary")


@dataclass(frozen=True)
class FeedbackMatrix:
    """Fixed random feedback weights B (J x K); never updated during training."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("feedback matrix must be 2-D (J x K)")
        object.__setattr__(self, "matrix", m)
        self.matrix.setflags(write=False)


def random_feedback(
    n_rec: int, n_out: int, rng: np.random.Generator, scale: float = 1.0, dist: str = "normal"
) -> FeedbackMatrix:
    """Draw i.i.d. feedback weights; ``dist`` is 'normal' or 'uniform'."""
    if dist == "normal":
        b = rng.normal(0.0, scale, size=(n_rec, n_out))
    elif dist == "uniform":
        b = rng.uniform(-scale, scale, size=(n_rec, n_out))
    else:
        raise ValueError(f"unknown feedback distribution {dist!r}")
    return FeedbackMatrix(b)


def softmax(y: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max-subtracted)."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("softmax needs at least one entry")
    if not np.isfinite(y).all():
        raise ValueError("softmax input must be finite")
    shifted = y - y.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def step_loss_and_error(
    kind: str,
    y: np.ndarray,
    target_row: np.ndarray,
    window_bit: int,
) -> tuple[float, np.ndarray]:
    """Incremental loss and readout error vector for a single step.

    ``y`` holds readout voltages; for the cross-entropy kind the softmax
    coupling is applied here.  Both outputs are scaled by the window bit.
    """
    y = np.asarray(y, dtype=float)
    target_row = np.asarray(target_row, dtype=float)
    if y.shape != target_row.shape:
        raise ValueError("readout/target dimension mismatch")
    if not window_bit:
        return 0.0, np.zeros_like(y)
    if kind == LOSS_MSE:
        diff = y - target_row
        return 0.5 * float(diff @ diff), diff
    if kind == LOSS_TEMPORAL_MSE:
        diff = y - target_row
        k = y.shape[-1]
        return float(diff @ diff) / k, (2.0 / k) * diff
    if kind == LOSS_CROSS_ENTROPY:
        pi = softmax(y)
        loss = -float(target_row @ np.log(np.maximum(pi, PROB_FLOOR)))
        return loss, pi - target_row
    raise ValueError(f"unknown loss kind {kind!r}")


def learning_signal(feedback: FeedbackMatrix, error: np.ndarray) -> np.ndarray:
    """Broadcast error to recurrent neurons: L_j = sum_k B_jk E_k."""
    return feedback.matrix @ np.asarray(error, dtype=float)


def prediction(signals: np.ndarray, window: np.ndarray) -> int:
    """Predicted class: argmax of the window-masked mean readout signal.

    ``signals`` has shape (T, K) holding readout voltages or softmax
    probabilities; ties resolve to the lowest index (numpy argmax rule).
    """
    signals = np.asarray(signals, dtype=float)
    window = np.asarray(window, dtype=float)
    n_open = window.sum()
    if n_open == 0:
        raise ValueError("prediction needs a non-empty learning window")
    means = (signals * window[:, None]).sum(axis=0) / n_open
    return int(np.argmax(means))
