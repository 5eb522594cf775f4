"""Online ICA for EEG streams: batch whitening, a natural-gradient infomax
update applied sample by sample, component activations, artifact removal by
component exclusion, and scalp-map interpolation.

The separation quality score used throughout is the Amari index of the
combined system P = W V A (unmixing times mixing), which is zero exactly
when P is a scaled permutation, i.e. separation up to ICA's inherent
ambiguities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_ETA0_SCALE = 0.16
DEFAULT_TAU = 400.0


class IcaState:
    """Whitening + unmixing with online update bookkeeping."""

    def __init__(self, whitening: np.ndarray, unmixing: np.ndarray,
                 eta0: float, tau: float):
        self.whitening = np.asarray(whitening, dtype=np.float64)
        self.unmixing = np.asarray(unmixing, dtype=np.float64)
        self.n_channels = self.whitening.shape[0]
        self.eta0 = float(eta0)
        self.tau = float(tau)
        self.samples_seen = 0

    def learning_rate(self) -> float:
        return self.eta0 / (1.0 + self.samples_seen / self.tau)

    def mixing_estimate(self) -> np.ndarray:
        """Inverse of W V: columns are estimated scalp projections."""
        return np.linalg.inv(self.unmixing @ self.whitening)


def ica_init(buffer, eta0: float | None = None, tau: float = DEFAULT_TAU) -> IcaState:
    """Whiten from an initialization buffer and start with W = I.

    buffer is [N0 x n] with N0 >= 10 n. V = D^(-1/2) E^T from the
    eigen-decomposition of the buffer covariance, so cov(V x) = I on the
    buffer. A rank-deficient covariance raises, naming the channels loading
    on the near-null eigenvector.
    """
    X = np.asarray(buffer, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("init buffer must be [samples x channels]")
    n0, n = X.shape
    if n0 < 10 * n:
        raise ValueError(f"need at least {10 * n} init samples, got {n0}")
    C = np.cov(X, rowvar=False)
    evals, evecs = np.linalg.eigh(C)
    if evals[0] < 1e-12 * max(evals[-1], 1e-30):
        null = np.abs(evecs[:, 0])
        bad = [int(i) for i in np.where(null > 0.3 * null.max())[0]]
        raise ValueError(f"rank-deficient covariance; degenerate channels {bad}")
    V = np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    if eta0 is None:
        eta0 = DEFAULT_ETA0_SCALE / n
    return IcaState(whitening=V, unmixing=np.eye(n), eta0=eta0, tau=tau)


def ica_update(state: IcaState, chunk) -> IcaState:
    """Natural-gradient infomax, one sample at a time.

    Per sample x: y = W V x, then W <- W + eta (I - tanh(y) y^T) W with eta
    decaying as eta0 / (1 + samples_seen / tau). Non-finite input rejects
    the whole chunk and leaves the state untouched.
    """
    X = np.asarray(chunk, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite sample in chunk; state unchanged")
    if X.shape[1] != state.n_channels:
        raise ValueError(
            f"chunk has {X.shape[1]} channels, state {state.n_channels}"
        )
    W = state.unmixing
    V = state.whitening
    eye = np.eye(state.n_channels)
    for x in X:
        y = W @ (V @ x)
        eta = state.learning_rate()
        if eta:
            W = W + eta * (eye - np.outer(np.tanh(y), y)) @ W
        state.samples_seen += 1
    state.unmixing = W
    return state


def unmix(state: IcaState, chunk) -> np.ndarray:
    """Component activations y = W V x per sample. No state change."""
    X = np.asarray(chunk, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    Y = X @ (state.unmixing @ state.whitening).T
    return Y[0] if squeeze else Y


def reconstruct_excluding(state: IcaState, chunk, excluded) -> np.ndarray:
    """Channel-space reconstruction with the listed components zeroed.

    x_hat = (W V)^(-1) Z (W V) x, Z zeroing the excluded rows. Empty set is
    the identity to numerical precision.
    """
    excluded = set(int(i) for i in excluded)
    bad = [i for i in excluded if not 0 <= i < state.n_channels]
    if bad:
        raise ValueError(f"component indices out of range: {bad}")
    M = state.unmixing @ state.whitening
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"unmixing matrix is singular: {e}") from e
    keep = np.ones(state.n_channels)
    for i in excluded:
        keep[i] = 0.0
    X = np.asarray(chunk, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    Y = X @ M.T
    Y *= keep
    out = Y @ Minv.T
    return out[0] if squeeze else out


def amari_index(P) -> float:
    """Amari performance index of a combined mixing-unmixing system.

    Zero iff P is a permutation times a nonzero diagonal; normalized so the
    all-ones matrix scores 1. Invariant to row/column permutation and
    nonzero scaling.
    """
    A = np.abs(np.asarray(P, dtype=np.float64))
    n = A.shape[0]
    if A.shape != (n, n) or n < 2:
        raise ValueError("amari_index needs a square matrix of size >= 2")
    rows = np.sum(A / A.max(axis=1, keepdims=True)) - n
    cols = np.sum(A / A.max(axis=0, keepdims=True)) - n
    return float((rows + cols) / (2.0 * n * (n - 1)))


def ring_positions(n: int, radius: float = 0.8) -> np.ndarray:
    """n electrode positions evenly spaced on a circle inside the unit disc.

    Placeholder montage for synthetic sessions where no cap layout exists;
    starts at the top (0, radius) and goes clockwise.
    """
    if n < 1:
        raise ValueError("need at least one channel")
    ang = np.pi / 2 - 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


@dataclass
class ScalpMap:
    channel_positions: np.ndarray
    values: np.ndarray
    grid: np.ndarray


def scalp_grid(positions, values, resolution: int = 32) -> ScalpMap:
    """Inverse-distance-weighted interpolation onto the unit disc.

    Weight 1/(d^2 + 1e-6); grid nodes outside the disc are NaN. A node
    sitting exactly on a channel reproduces that channel's value to ~1e-6.
    """
    pos = np.asarray(positions, dtype=np.float64)
    val = np.asarray(values, dtype=np.float64)
    if len(pos) != len(val):
        raise ValueError("positions and values must pair up")
    axis = np.linspace(-1.0, 1.0, resolution)
    gx, gy = np.meshgrid(axis, axis)
    d2 = (gx[..., None] - pos[:, 0]) ** 2 + (gy[..., None] - pos[:, 1]) ** 2
    w = 1.0 / (d2 + 1e-6)
    grid = (w * val).sum(axis=-1) / w.sum(axis=-1)
    grid[gx ** 2 + gy ** 2 > 1.0] = np.nan
    return ScalpMap(channel_positions=pos, values=val, grid=grid)
