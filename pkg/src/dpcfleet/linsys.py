"""Discrete-time LTI state-space models and closed-loop data collection.

The plant model is

    x(k+1) = A x(k) + B u(k)
    y(k)   = C x(k) + D u(k)

with the output evaluated at the pre-step state. Besides the plain
simulator this module provides the 12-state quadrotor model used by the
bundled scenarios, a discrete-time Riccati gain synthesis, and the
closed-loop excitation run (u = K y + u_r) that produces training data
with bounded outputs even when the open loop is not asymptotically
stable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StateSpace",
    "FeedbackGain",
    "TrajectoryDataset",
    "make_drone_model",
    "step",
    "spectral_radius",
    "is_stabilizing",
    "simulate_closed_loop",
    "design_stabilizing_gain",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class StateSpace:
    """Discrete-time LTI model (A, B, C, D) with sampling time dt."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        for name in ("A", "B", "C", "D"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
        n, m, q = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape != (n, m):
            raise ValueError(f"B must be {n}x{m}, got {self.B.shape}")
        if self.C.shape != (q, n):
            raise ValueError(f"C must be {q}x{n}, got {self.C.shape}")
        if self.D.shape != (q, m):
            raise ValueError(f"D must be {q}x{m}, got {self.D.shape}")
        if min(n, m, q) < 1:
            raise ValueError("state, input and output dimensions must be >= 1")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class FeedbackGain:
    """Static output-feedback gain K (m x q), applied as u = K y + u_r."""

    K: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))


def _gain_matrix(K: FeedbackGain | np.ndarray) -> np.ndarray:
    if isinstance(K, FeedbackGain):
        return K.K
    return np.atleast_2d(np.asarray(K, dtype=float))


@dataclass(frozen=True)
class TrajectoryDataset:
    """Paired input/output time series from a data-collection run.

    u_d has shape (T_num, m), y_d has shape (T_num, q); sample k of both
    belongs to the same time instant.
    """

    u_d: np.ndarray
    y_d: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        u = np.atleast_2d(np.asarray(self.u_d, dtype=float))
        y = np.atleast_2d(np.asarray(self.y_d, dtype=float))
        if u.ndim != 2 or y.ndim != 2:
            raise ValueError("u_d and y_d must be 2-D arrays (T, dim)")
        if len(u) != len(y):
            raise ValueError(f"u_d and y_d lengths differ: {len(u)} vs {len(y)}")
        if len(u) < 1:
            raise ValueError("dataset must contain at least one sample")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "u_d", u)
        object.__setattr__(self, "y_d", y)

    @property
    def T_num(self) -> int:
        return len(self.u_d)

    @property
    def m(self) -> int:
        return self.u_d.shape[1]

    @property
    def q(self) -> int:
        return self.y_d.shape[1]

    def content_digest(self) -> str:
        """SHA-256 over shapes, dt and the raw float64 bytes."""
        h = hashlib.sha256()
        h.update(f"{self.T_num},{self.m},{self.q},{self.dt!r};".encode())
        h.update(np.ascontiguousarray(self.u_d).tobytes())
        h.update(np.ascontiguousarray(self.y_d).tobytes())
        return h.hexdigest()


_DRONE_A = [
    [1, 0, 0, 0.1, 0, 0, 0, 0.049, 0, 0, 0.0016, 0],
    [0, 1, 0, 0, 0.1, 0, -0.049, 0, 0, -0.0016, 0, 0],
    [0, 0, 1, 0, 0, 0.1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, 0.981, 0, 0, 0.049, 0],
    [0, 0, 0, 0, 1, 0, -0.981, 0, 0, 0.049, 0, 0],
    [0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 1, 0, 0, 0.1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0.1, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0.1],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1],
]

_DRONE_B = [
    [-2.3e-5, 0, 2.3e-5, 0],
    [0, -2.3e-5, 0, 2.3e-5],
    [1.75e-2, 1.75e-2, 1.75e-2, 1.75e-2],
    [-9.21e-4, 0, 9.21e-4, 0],
    [0, -9.21e-4, 0, 9.21e-4],
    [0.35, 0.35, 0.35, 0.35],
    [0, 2.8e-3, 0, -2.8e-3],
    [-2.8e-3, 0, 2.8e-3, 0],
    [3.7e-3, -3.7e-3, 3.7e-3, -3.7e-3],
    [0, 5.6e-2, 0, -5.6e-2],
    [-5.6e-2, 0, 5.6e-2, 0],
    [7.3e-2, -7.3e-2, 7.3e-2, -7.3e-2],
]


def make_drone_model() -> StateSpace:
    """Build the 12-state / 4-input quadrotor model (0.1 s sampling).

    States are (p_x, p_y, p_z, velocities, angular coordinates, angular
    rates); inputs are the four motor thrusts as deviations from hover.
    All states are measured: C is the identity and D is zero.
    """
    return StateSpace(
        A=np.array(_DRONE_A, dtype=float),
        B=np.array(_DRONE_B, dtype=float),
        C=np.eye(12),
        D=np.zeros((12, 4)),
        dt=0.1,
    )


def step(
    model: StateSpace, x: np.ndarray, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Advance one sample: returns (x_next, y) with y taken at the pre-step state."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (model.n,):
        raise ValueError(f"state must have dimension {model.n}, got {x.shape}")
    if u.shape != (model.m,):
        raise ValueError(f"input must have dimension {model.m}, got {u.shape}")
    x_next = model.A @ x + model.B @ u
    y = model.C @ x + model.D @ u
    return x_next, y


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_stabilizing(
    model: StateSpace, K: FeedbackGain | np.ndarray, margin: float
) -> bool:
    """Check spectral_radius(A + B K C) <= 1 - margin.

    margin = 0 accepts marginal stability; pass a positive margin to
    demand a strict contraction.
    """
    Km = _gain_matrix(K)
    if Km.shape != (model.m, model.q):
        raise ValueError(f"gain must be {model.m}x{model.q}, got {Km.shape}")
    if not 0 <= margin <= 1:
        raise ValueError(f"margin must be in [0, 1], got {margin}")
    return spectral_radius(model.A + model.B @ Km @ model.C) <= 1.0 - margin


def simulate_closed_loop(
    model: StateSpace,
    K: FeedbackGain | np.ndarray,
    u_r_seq: np.ndarray,
    x0: np.ndarray,
) -> TrajectoryDataset:
    """Run the excitation loop u = K y + u_r and record (u_d, y_d).

    The recorded input is the one seen by the open-loop plant, i.e.
    u_d(k) = K y_d(k) + u_r(k). When D is nonzero the algebraic loop
    u = K (C x + D u) + u_r is solved exactly through (I - K D)^-1;
    raises if that matrix is singular. The caller is responsible for
    pairing a stabilizing K with an unstable plant; K = 0 reduces the
    run to plain open-loop injection of u_r.
    """
    Km = _gain_matrix(K)
    if Km.shape != (model.m, model.q):
        raise ValueError(f"gain must be {model.m}x{model.q}, got {Km.shape}")
    u_r = np.atleast_2d(np.asarray(u_r_seq, dtype=float))
    if u_r.shape[1] != model.m:
        raise ValueError(f"u_r samples must have dimension {model.m}")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (model.n,):
        raise ValueError(f"x0 must have dimension {model.n}, got {x.shape}")

    loop = np.eye(model.m) - Km @ model.D
    if np.linalg.matrix_rank(loop) < model.m:
        raise ValueError("algebraic loop I - K D is singular")
    loop_inv = np.linalg.inv(loop)

    T = len(u_r)
    u_d = np.empty((T, model.m))
    y_d = np.empty((T, model.q))
    for k in range(T):
        u = loop_inv @ (Km @ (model.C @ x) + u_r[k])
        y_d[k] = model.C @ x + model.D @ u
        u_d[k] = u
        x = model.A @ x + model.B @ u
    return TrajectoryDataset(u_d=u_d, y_d=y_d, dt=model.dt)


def design_stabilizing_gain(
    model: StateSpace,
    state_weight: np.ndarray,
    input_weight: np.ndarray,
    max_iters: int = 10000,
    tol: float = 1e-12,
) -> FeedbackGain:
    """LQR-style output-feedback gain via the discrete Riccati recursion.

    Iterates P <- Q + A'(P - P B (R + B'PB)^-1 B'P) A from P = Q until the
    iterate change drops below tol, then converts the state-feedback gain
    to output feedback through C^-1. Requires C to be square and
    invertible so that output feedback recovers state feedback; raises if
    the recursion diverges or the resulting gain is not stabilizing.
    """
    Q = np.atleast_2d(np.asarray(state_weight, dtype=float))
    R = np.atleast_2d(np.asarray(input_weight, dtype=float))
    n, m = model.n, model.m
    if Q.shape != (n, n):
        raise ValueError(f"state_weight must be {n}x{n}")
    if R.shape != (m, m):
        raise ValueError(f"input_weight must be {m}x{m}")
    if model.q != n or np.linalg.matrix_rank(model.C) < n:
        raise ValueError("C must be square and invertible for output-feedback recovery")

    A, B = model.A, model.B
    P = Q.copy()
    converged = False
    for _ in range(max_iters):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ (P @ A - P @ B @ gain)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.max(np.abs(P_next)) > 1e16:
            raise ValueError("Riccati recursion diverged")
        change = np.max(np.abs(P_next - P))
        P = P_next
        if change < tol:
            converged = True
            break
    if not converged:
        # a fixed point within tolerance was not certified; the gain below
        # may still stabilize, so fall through to the stability check
        pass
    BtP = B.T @ P
    F = -np.linalg.solve(R + BtP @ B, BtP @ A)
    K = F @ np.linalg.inv(model.C)
    if spectral_radius(A + B @ K @ model.C) >= 1.0:
        raise ValueError("Riccati recursion did not produce a stabilizing gain")
    return FeedbackGain(K=K)


def save_model(model: StateSpace, path: str) -> None:
    """Write a model to a JSON document with row-major nested arrays."""
    doc = {
        "n": model.n,
        "m": model.m,
        "q": model.q,
        "dt": model.dt,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> StateSpace:
    """Read a model written by save_model, validating the declared dimensions."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    model = StateSpace(
        A=np.array(doc["A"], dtype=float),
        B=np.array(doc["B"], dtype=float),
        C=np.array(doc["C"], dtype=float),
        D=np.array(doc["D"], dtype=float),
        dt=float(doc["dt"]),
    )
    declared = (int(doc["n"]), int(doc["m"]), int(doc["q"]))
    if declared != (model.n, model.m, model.q):
        raise ValueError(
            f"declared dimensions {declared} do not match matrices "
            f"({model.n}, {model.m}, {model.q})"
        )
    return model
