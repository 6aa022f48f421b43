"""Non-parametric behavior models built from measured trajectories.

A length-T input/output record is turned into a generalized (block)
Hankel matrix whose columns are successive length-(T_p + T_f) windows.
Splitting input and output Hankel matrices into past and future block
rows and stacking them as [U_p; Y_p; U_f; Y_f] yields the behavior
matrix W: when the injected input is persistently exciting of order
T_p + T_f + n, the column span of W contains every trajectory the plant
can produce, so W acts as a trajectory library in place of (A, B, C, D).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .linsys import StateSpace, TrajectoryDataset

__all__ = [
    "BehaviorMatrix",
    "hankel",
    "is_persistently_exciting",
    "min_samples",
    "excitation_order",
    "build_behavior_matrix",
    "span_residual",
    "past_window_pins_state",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class BehaviorMatrix:
    """Partitioned trajectory stack W = [U_p; Y_p; U_f; Y_f].

    U_p/Y_p hold the first T_p block rows of the input/output Hankel
    matrices, U_f/Y_f the last T_f block rows. n_cols is the number of
    length-(T_p + T_f) windows in the source record.
    """

    U_p: np.ndarray
    Y_p: np.ndarray
    U_f: np.ndarray
    Y_f: np.ndarray
    W: np.ndarray
    T_p: int
    T_f: int
    m: int
    q: int
    n_cols: int

    def __post_init__(self) -> None:
        rows = (self.m + self.q) * (self.T_p + self.T_f)
        if self.W.shape != (rows, self.n_cols):
            raise ValueError(
                f"W must be {rows}x{self.n_cols}, got {self.W.shape}"
            )


def _as_sequence(seq: np.ndarray) -> np.ndarray:
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("sequence must be 1-D (scalars) or 2-D (T, d)")
    return arr


def hankel(seq: np.ndarray, L: int) -> np.ndarray:
    """Generalized Hankel matrix of window length L.

    seq is a length-T sequence of d-vectors (shape (T, d), or (T,) for
    scalars). Column j of the result stacks seq[j], ..., seq[j+L-1], so
    the output is (d*L) x (T-L+1).
    """
    arr = _as_sequence(seq)
    T, d = arr.shape
    if L < 1:
        raise ValueError(f"window length must be >= 1, got {L}")
    if T < L:
        raise ValueError(f"sequence length {T} is shorter than window {L}")
    H = np.empty((d * L, T - L + 1))
    for j in range(T - L + 1):
        H[:, j] = arr[j : j + L].ravel()
    return H


def is_persistently_exciting(seq: np.ndarray, L: int, tol: float = 1e-9) -> bool:
    """True iff the order-L Hankel matrix of seq has full row rank.

    Rank counts singular values above tol * sigma_max.
    """
    arr = _as_sequence(seq)
    H = hankel(arr, L)
    if H.shape[1] < H.shape[0]:
        return False
    s = np.linalg.svd(H, compute_uv=False)
    rank = int(np.count_nonzero(s > tol * s[0])) if s[0] > 0 else 0
    return rank == arr.shape[1] * L


def min_samples(m: int, L: int) -> int:
    """Minimum record length for persistency of excitation of order L: (m+1)L - 1."""
    if m < 1 or L < 1:
        raise ValueError("m and L must be >= 1")
    return (m + 1) * L - 1


def excitation_order(T_p: int, T_f: int, n: int) -> int:
    """Excitation order needed to span the whole behavior: T_p + T_f + n."""
    if T_p < 1 or T_f < 1:
        raise ValueError("T_p and T_f must be >= 1")
    if n < 0:
        raise ValueError("n must be >= 0")
    return T_p + T_f + n


def past_window_pins_state(model: StateSpace, T_p: int) -> bool:
    """Whether T_p output samples (plus inputs) determine the latent state.

    Checks that the stacked T_p-step observability matrix has full
    column rank.
    """
    blocks = []
    Ak = np.eye(model.n)
    for _ in range(T_p):
        blocks.append(model.C @ Ak)
        Ak = model.A @ Ak
    obs = np.vstack(blocks)
    return bool(np.linalg.matrix_rank(obs) == model.n)


def build_behavior_matrix(
    data: TrajectoryDataset,
    T_p: int,
    T_f: int,
    model: StateSpace | None = None,
) -> BehaviorMatrix:
    """Assemble W = [U_p; Y_p; U_f; Y_f] from a measured record.

    If the generating model is supplied and its T_p-step observability
    matrix is rank deficient, a warning is issued: the past window then
    may not pin the initial condition and predictions can be ambiguous.
    """
    L = T_p + T_f
    if data.T_num < L:
        raise ValueError(
            f"need at least T_p + T_f = {L} samples, dataset has {data.T_num}"
        )
    if model is not None and not past_window_pins_state(model, T_p):
        warnings.warn(
            f"past window of length T_p={T_p} does not determine the "
            "state for this model; consider a longer window",
            stacklevel=2,
        )
    H_u = hankel(data.u_d, L)
    H_y = hankel(data.y_d, L)
    m, q = data.m, data.q
    U_p, U_f = H_u[: m * T_p], H_u[m * T_p :]
    Y_p, Y_f = H_y[: q * T_p], H_y[q * T_p :]
    W = np.vstack([U_p, Y_p, U_f, Y_f])
    return BehaviorMatrix(
        U_p=U_p,
        Y_p=Y_p,
        U_f=U_f,
        Y_f=Y_f,
        W=W,
        T_p=T_p,
        T_f=T_f,
        m=m,
        q=q,
        n_cols=data.T_num - L + 1,
    )


def span_residual(
    behavior: BehaviorMatrix, traj_u: np.ndarray, traj_y: np.ndarray
) -> float:
    """Relative least-squares distance of a trajectory from the span of W.

    traj_u and traj_y must cover exactly T_p + T_f steps. Returns
    ||W g* - w||_2 / max(1, ||w||_2) where w stacks the trajectory in
    partition order and g* is the least-squares minimizer; 0 means the
    trajectory is reproducible from the data.
    """
    u = _as_sequence(traj_u)
    y = _as_sequence(traj_y)
    L = behavior.T_p + behavior.T_f
    if u.shape != (L, behavior.m):
        raise ValueError(f"traj_u must be ({L}, {behavior.m}), got {u.shape}")
    if y.shape != (L, behavior.q):
        raise ValueError(f"traj_y must be ({L}, {behavior.q}), got {y.shape}")
    w = np.concatenate(
        [
            u[: behavior.T_p].ravel(),
            y[: behavior.T_p].ravel(),
            u[behavior.T_p :].ravel(),
            y[behavior.T_p :].ravel(),
        ]
    )
    g, *_ = np.linalg.lstsq(behavior.W, w, rcond=None)
    return float(np.linalg.norm(behavior.W @ g - w) / max(1.0, np.linalg.norm(w)))


def save_dataset(data: TrajectoryDataset, path: str, **metadata) -> None:
    """Write a dataset to JSON with full-precision floats and a content digest.

    Extra keyword arguments (e.g. a scenario hash) are stored alongside
    the data and returned by load_dataset.
    """
    doc = {
        "m": data.m,
        "q": data.q,
        "dt": data.dt,
        "T_num": data.T_num,
        "u_d": data.u_d.tolist(),
        "y_d": data.y_d.tolist(),
        "digest": data.content_digest(),
    }
    overlap = set(doc) & set(metadata)
    if overlap:
        raise ValueError(f"metadata keys collide with dataset fields: {sorted(overlap)}")
    doc.update(metadata)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_dataset(path: str) -> tuple[TrajectoryDataset, dict]:
    """Read a dataset written by save_dataset and verify its digest.

    Returns (dataset, metadata) where metadata holds any extra keys that
    were stored with the file.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    data = TrajectoryDataset(
        u_d=np.array(doc["u_d"], dtype=float),
        y_d=np.array(doc["y_d"], dtype=float),
        dt=float(doc["dt"]),
    )
    if (data.m, data.q, data.T_num) != (doc["m"], doc["q"], doc["T_num"]):
        raise ValueError(f"dataset dimensions in {path} are inconsistent")
    if data.content_digest() != doc["digest"]:
        raise ValueError(f"content digest mismatch in {path}")
    meta = {
        k: v
        for k, v in doc.items()
        if k not in ("m", "q", "dt", "T_num", "u_d", "y_d", "digest")
    }
    return data, meta
