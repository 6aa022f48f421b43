"""Coupled data-driven predictive control and receding-horizon missions.

Each control step solves one quadratic program over all agents. The
per-agent decision block is z_i = (g_i, u_i, mu_i): behavior
coefficients, planned inputs and predicted outputs, tied together by
the equality W_i g_i = [u_p; y_p; u_i; mu_i] whose first T_p block rows
pin the most recent measurements. Pairwise collision constraints are
linearized at anchor trajectories (the previous plan, shifted) through
the half-space relaxation from the chance module, and can optionally be
re-linearized a few times per step (sequential convex iterations).

A parametric model-based MPC step with identical cost and constraint
semantics is provided as the equivalence oracle: with noise-free,
persistently exciting data both controllers must produce the same plan.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import qpsolve
from .behavior import (
    BehaviorMatrix,
    build_behavior_matrix,
    excitation_order,
    is_persistently_exciting,
)
from .chance import CollisionConstraint, relax_collision
from .linsys import (
    FeedbackGain,
    StateSpace,
    design_stabilizing_gain,
    simulate_closed_loop,
    step,
)

__all__ = [
    "AgentSpec",
    "AgentWindow",
    "StepSolution",
    "StepResult",
    "NoiseRegularization",
    "MpcAgentPlan",
    "MissionLog",
    "StepFailure",
    "assemble_agent_qp_blocks",
    "linearize_collisions",
    "solve_step",
    "prediction_matrices",
    "model_mpc_step",
    "collect_datasets",
    "run_mission",
]


class StepFailure(RuntimeError):
    """A control step could not be completed (solver failure or hard infeasibility)."""


@dataclass(frozen=True)
class NoiseRegularization:
    """Optional 1-norm regularization for noisy training data.

    Adds lambda_g * ||g_i||_1 plus a slack on the past-output equality
    rows weighted by lambda_slack, encoded with auxiliary variables so
    the problem stays a QP.
    """

    lambda_g: float = 0.1
    lambda_slack: float = 1e5


@dataclass(frozen=True)
class AgentSpec:
    """Per-agent data for the coupled step.

    Q and R weight the stacked predicted outputs (q*T_f) and planned
    inputs (m*T_f); r is the stacked output reference. bounds_u and
    bounds_y are per-step boxes (lo, hi) of the per-sample dimension,
    or None for unbounded. Sigma_schedule holds the output covariance
    per horizon step; pos_extract selects the position coordinates out
    of an output vector.
    """

    behavior: BehaviorMatrix
    Q: np.ndarray
    R: np.ndarray
    r: np.ndarray
    bounds_u: tuple[np.ndarray, np.ndarray] | None = None
    bounds_y: tuple[np.ndarray, np.ndarray] | None = None
    Sigma_schedule: np.ndarray | None = None
    pos_extract: np.ndarray | None = None

    def __post_init__(self) -> None:
        b = self.behavior
        n_u, n_y = b.m * b.T_f, b.q * b.T_f
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        r = np.asarray(self.r, dtype=float).reshape(-1)
        if Q.shape != (n_y, n_y):
            raise ValueError(f"Q must be {n_y}x{n_y}, got {Q.shape}")
        if R.shape != (n_u, n_u):
            raise ValueError(f"R must be {n_u}x{n_u}, got {R.shape}")
        if r.shape != (n_y,):
            raise ValueError(f"r must have length {n_y}, got {r.shape}")
        for M, name in ((Q, "Q"), (R, "R")):
            if not np.allclose(M, M.T, atol=1e-10):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(M)) < -1e-8:
                raise ValueError(f"{name} must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)

        def norm_bounds(bounds, dim, name):
            if bounds is None:
                return None
            lo = np.asarray(bounds[0], dtype=float).reshape(-1)
            hi = np.asarray(bounds[1], dtype=float).reshape(-1)
            if lo.shape != (dim,) or hi.shape != (dim,):
                raise ValueError(f"{name} bounds must have per-sample dimension {dim}")
            if np.any(lo > hi):
                raise ValueError(f"{name} bounds must satisfy lo <= hi")
            return (lo, hi)

        object.__setattr__(self, "bounds_u", norm_bounds(self.bounds_u, b.m, "input"))
        object.__setattr__(self, "bounds_y", norm_bounds(self.bounds_y, b.q, "output"))

        if self.Sigma_schedule is not None:
            sched = np.asarray(self.Sigma_schedule, dtype=float)
            if sched.shape != (b.T_f, b.q, b.q):
                raise ValueError(
                    f"Sigma_schedule must be ({b.T_f}, {b.q}, {b.q}), got {sched.shape}"
                )
            object.__setattr__(self, "Sigma_schedule", sched)
        if self.pos_extract is not None:
            M = np.atleast_2d(np.asarray(self.pos_extract, dtype=float))
            if M.shape[1] != b.q:
                raise ValueError(f"pos_extract must have {b.q} columns")
            is_basis = np.all(np.isin(M, (0.0, 1.0))) and np.all(M.sum(axis=1) == 1)
            if not is_basis or len({int(np.argmax(row)) for row in M}) != len(M):
                raise ValueError(
                    "pos_extract rows must be distinct standard basis vectors"
                )
            object.__setattr__(self, "pos_extract", M)


@dataclass(frozen=True)
class AgentWindow:
    """The most recent T_p input/output samples, oldest first."""

    u_p: np.ndarray
    y_p: np.ndarray

    def __post_init__(self) -> None:
        u = np.atleast_2d(np.asarray(self.u_p, dtype=float))
        y = np.atleast_2d(np.asarray(self.y_p, dtype=float))
        if len(u) != len(y):
            raise ValueError("u_p and y_p must cover the same number of steps")
        object.__setattr__(self, "u_p", u)
        object.__setattr__(self, "y_p", y)


@dataclass(frozen=True)
class StepSolution:
    """One agent's share of a solved control step."""

    g: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    first_input: np.ndarray
    qp_status: str
    active_collisions: tuple[CollisionConstraint, ...] = ()


@dataclass(frozen=True)
class StepResult:
    """Coupled-step output: per-agent solutions plus shared diagnostics.

    objective is the tracking cost sum_i (mu_i - r_i)' Q_i (mu_i - r_i)
    + u_i' R_i u_i at the returned plan; min_margin is the smallest
    slack of the linearized collision constraints (+inf when none).
    """

    agents: tuple[StepSolution, ...]
    status: str
    objective: float
    iterations: int
    primal_res: float
    dual_res: float
    soft: bool
    collisions: tuple[CollisionConstraint, ...]
    min_margin: float
    scp_iters: int
    z: np.ndarray


@dataclass(frozen=True)
class _AgentBlocks:
    P: sp.csc_matrix
    c: np.ndarray
    Aeq: sp.csc_matrix
    beq: np.ndarray
    Ain: sp.csc_matrix
    bin: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_g: int
    n_u: int
    n_y: int
    dim: int
    cost_const: float


def assemble_agent_qp_blocks(
    spec: AgentSpec,
    window: AgentWindow,
    regularization: NoiseRegularization | None = None,
) -> _AgentBlocks:
    """Cost, equality and box blocks for one agent's decision (g, u, mu).

    The equality rows follow the W partition order: the first
    (m+q)*T_p rows pin the measurement window, the remaining rows tie
    the planned inputs and predicted outputs to the behavior span. With
    regularization enabled the decision is extended by the past-output
    slack and the 1-norm epigraph variables.
    """
    b = spec.behavior
    if window.u_p.shape != (b.T_p, b.m):
        raise ValueError(f"window u_p must be ({b.T_p}, {b.m}), got {window.u_p.shape}")
    if window.y_p.shape != (b.T_p, b.q):
        raise ValueError(f"window y_p must be ({b.T_p}, {b.q}), got {window.y_p.shape}")
    n_g, n_u, n_y = b.n_cols, b.m * b.T_f, b.q * b.T_f
    n_pp = (b.m + b.q) * b.T_p
    n_sl = b.q * b.T_p if regularization is not None else 0
    dim = n_g + n_u + n_y + (n_sl + n_g + n_sl if regularization else 0)

    W = sp.csc_matrix(b.W)
    # [W | -S]: the future rows subtract the matching (u, mu) coordinates
    sel = sp.vstack(
        [sp.csc_matrix((n_pp, n_u + n_y)), sp.eye(n_u + n_y, format="csc")],
        format="csc",
    )
    Aeq = sp.hstack([W, -sel], format="csc")
    beq = np.concatenate([window.u_p.ravel(), window.y_p.ravel(), np.zeros(n_u + n_y)])

    P = sp.block_diag(
        [
            sp.csc_matrix((n_g, n_g)),
            2.0 * sp.csc_matrix(spec.R),
            2.0 * sp.csc_matrix(spec.Q),
        ],
        format="csc",
    )
    c = np.concatenate([np.zeros(n_g + n_u), -2.0 * (spec.Q @ spec.r)])
    cost_const = float(spec.r @ spec.Q @ spec.r)

    lo = np.full(n_g + n_u + n_y, -np.inf)
    hi = np.full(n_g + n_u + n_y, np.inf)
    if spec.bounds_u is not None:
        lo[n_g : n_g + n_u] = np.tile(spec.bounds_u[0], b.T_f)
        hi[n_g : n_g + n_u] = np.tile(spec.bounds_u[1], b.T_f)
    if spec.bounds_y is not None:
        lo[n_g + n_u :] = np.tile(spec.bounds_y[0], b.T_f)
        hi[n_g + n_u :] = np.tile(spec.bounds_y[1], b.T_f)

    Ain = sp.csc_matrix((0, dim))
    bin_ = np.zeros(0)

    if regularization is not None:
        # decision extends to (g, u, mu, slack, t_g, t_slack); the slack
        # enters the past-output rows and the t's bound magnitudes
        y_row0 = b.m * b.T_p
        slack_col = sp.lil_matrix((Aeq.shape[0], n_sl))
        for k in range(n_sl):
            slack_col[y_row0 + k, k] = -1.0
        Aeq = sp.hstack(
            [Aeq, slack_col.tocsc(), sp.csc_matrix((Aeq.shape[0], n_g + n_sl))],
            format="csc",
        )
        P = sp.block_diag(
            [P, sp.csc_matrix((n_sl + n_g + n_sl, n_sl + n_g + n_sl))], format="csc"
        )
        c = np.concatenate(
            [
                c,
                np.zeros(n_sl),
                np.full(n_g, regularization.lambda_g),
                np.full(n_sl, regularization.lambda_slack),
            ]
        )
        lo = np.concatenate([lo, np.full(n_sl, -np.inf), np.zeros(n_g + n_sl)])
        hi = np.concatenate([hi, np.full(n_sl + n_g + n_sl, np.inf)])
        # epigraph rows  +-g <= t_g  and  +-slack <= t_slack
        off_sl = n_g + n_u + n_y
        off_tg = off_sl + n_sl
        off_ts = off_tg + n_g
        rows = []
        for sign in (1.0, -1.0):
            blk = sp.lil_matrix((n_g, dim))
            blk[:, :n_g] = sign * sp.eye(n_g)
            blk[:, off_tg : off_tg + n_g] = -sp.eye(n_g)
            rows.append(blk.tocsc())
        for sign in (1.0, -1.0):
            blk = sp.lil_matrix((n_sl, dim))
            blk[:, off_sl : off_sl + n_sl] = sign * sp.eye(n_sl)
            blk[:, off_ts : off_ts + n_sl] = -sp.eye(n_sl)
            rows.append(blk.tocsc())
        Ain = sp.vstack(rows, format="csc")
        bin_ = np.zeros(Ain.shape[0])

    return _AgentBlocks(
        P=P,
        c=c,
        Aeq=Aeq,
        beq=beq,
        Ain=Ain,
        bin=bin_,
        lo=lo,
        hi=hi,
        n_g=n_g,
        n_u=n_u,
        n_y=n_y,
        dim=dim,
        cost_const=cost_const,
    )


def _phi_entry(phi, i: int, j: int) -> float:
    arr = np.asarray(phi, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    return float(arr[i, j])


def linearize_collisions(
    specs: list[AgentSpec],
    anchor_trajectories: list[np.ndarray],
    d_safe: float,
    phi,
) -> list[CollisionConstraint]:
    """Half-space collision constraints for every pair and horizon step.

    Anchor trajectories are (T_f, q) predicted outputs per agent; the
    separation directions are frozen at their extracted positions. When
    two anchors coincide at some step, the direction from the previous
    horizon step is reused (the first coordinate axis if there is none).
    """
    n_agents = len(specs)
    if len(anchor_trajectories) != n_agents:
        raise ValueError("one anchor trajectory per agent is required")
    T_f = specs[0].behavior.T_f
    out: list[CollisionConstraint] = []
    for i in range(n_agents):
        for j in range(i + 1, n_agents):
            M_i, M_j = specs[i].pos_extract, specs[j].pos_extract
            if M_i is None or M_j is None:
                raise ValueError("pos_extract is required for collision constraints")
            if specs[i].Sigma_schedule is None or specs[j].Sigma_schedule is None:
                raise ValueError("Sigma_schedule is required for collision constraints")
            p_i = np.atleast_2d(anchor_trajectories[i]) @ M_i.T
            p_j = np.atleast_2d(anchor_trajectories[j]) @ M_j.T
            prev_k = np.zeros(M_i.shape[0])
            prev_k[0] = 1.0
            for tau in range(T_f):
                S_i = M_i @ specs[i].Sigma_schedule[tau] @ M_i.T
                S_j = M_j @ specs[j].Sigma_schedule[tau] @ M_j.T
                cc = relax_collision(
                    p_i[tau],
                    p_j[tau],
                    S_i,
                    S_j,
                    d_safe,
                    _phi_entry(phi, i, j),
                    i=i,
                    j=j,
                    step=tau,
                    fallback_direction=prev_k,
                )
                prev_k = cc.k
                out.append(cc)
    return out


def _collision_rows(
    collisions: list[CollisionConstraint],
    specs: list[AgentSpec],
    offsets: list[int],
    blocks: list[_AgentBlocks],
    total_dim: int,
    n_slack: int,
) -> tuple[sp.csc_matrix, np.ndarray]:
    """Rows -k'M mu_i + k'M mu_j (- s) <= -(d_safe + eta) on the stacked decision."""
    rows, cols, vals = [], [], []
    rhs = np.empty(len(collisions))
    for ridx, cc in enumerate(collisions):
        for agent, sign in ((cc.i, -1.0), (cc.j, 1.0)):
            blk = blocks[agent]
            coeff = sign * (specs[agent].pos_extract.T @ cc.k)
            base = (
                offsets[agent] + blk.n_g + blk.n_u + cc.step * specs[agent].behavior.q
            )
            nz = np.nonzero(coeff)[0]
            rows.extend([ridx] * nz.size)
            cols.extend((base + nz).tolist())
            vals.extend(coeff[nz].tolist())
        if n_slack:
            rows.append(ridx)
            cols.append(total_dim - n_slack + ridx)
            vals.append(-1.0)
        rhs[ridx] = -(cc.d_safe + cc.eta)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(len(collisions), total_dim))
    return A, rhs


def _build_coupled_qp(
    specs: list[AgentSpec],
    blocks: list[_AgentBlocks],
    collisions: list[CollisionConstraint],
    soft: bool,
    soft_penalty: float,
) -> tuple[qpsolve.QpProblem, list[int], int]:
    offsets = []
    acc = 0
    for blk in blocks:
        offsets.append(acc)
        acc += blk.dim
    n_slack = len(collisions) if soft and collisions else 0
    total = acc + n_slack

    P = sp.block_diag([blk.P for blk in blocks], format="csc")
    c = np.concatenate([blk.c for blk in blocks])
    Aeq = sp.block_diag([blk.Aeq for blk in blocks], format="csc")
    beq = np.concatenate([blk.beq for blk in blocks])
    Ain_agents = sp.block_diag([blk.Ain for blk in blocks], format="csc")
    bin_agents = np.concatenate([blk.bin for blk in blocks])
    lo = np.concatenate([blk.lo for blk in blocks])
    hi = np.concatenate([blk.hi for blk in blocks])
    if n_slack:
        P = sp.block_diag([P, sp.csc_matrix((n_slack, n_slack))], format="csc")
        c = np.concatenate([c, np.full(n_slack, soft_penalty)])
        Aeq = sp.hstack([Aeq, sp.csc_matrix((Aeq.shape[0], n_slack))], format="csc")
        Ain_agents = sp.hstack(
            [Ain_agents, sp.csc_matrix((Ain_agents.shape[0], n_slack))], format="csc"
        )
        lo = np.concatenate([lo, np.zeros(n_slack)])
        hi = np.concatenate([hi, np.full(n_slack, np.inf)])

    if collisions:
        A_col, b_col = _collision_rows(collisions, specs, offsets, blocks, total, n_slack)
        Ain = sp.vstack([Ain_agents, A_col], format="csc")
        bin_ = np.concatenate([bin_agents, b_col])
    else:
        Ain = Ain_agents
        bin_ = bin_agents

    qp = qpsolve.QpProblem(
        P=P,
        c=c,
        Aeq=Aeq,
        beq=beq,
        Ain=Ain if Ain.shape[0] else None,
        bin=bin_ if bin_.size else None,
        lo=lo,
        hi=hi,
    )
    return qp, offsets, n_slack


def _extract(
    specs: list[AgentSpec],
    blocks: list[_AgentBlocks],
    offsets: list[int],
    z: np.ndarray,
    status: str,
    collisions: list[CollisionConstraint],
) -> tuple[list[StepSolution], float, float]:
    sols = []
    objective = 0.0
    mus = []
    for spec, blk, off in zip(specs, blocks, offsets):
        b = spec.behavior
        g = z[off : off + blk.n_g]
        u = z[off + blk.n_g : off + blk.n_g + blk.n_u].reshape(b.T_f, b.m)
        mu = z[off + blk.n_g + blk.n_u : off + blk.n_g + blk.n_u + blk.n_y].reshape(
            b.T_f, b.q
        )
        mus.append(mu)
        dy = mu.ravel() - spec.r
        objective += float(dy @ spec.Q @ dy + u.ravel() @ spec.R @ u.ravel())
        sols.append(
            StepSolution(
                g=g, u=u, mu=mu, first_input=u[0].copy(), qp_status=status
            )
        )
    min_margin = np.inf
    actives: dict[int, list[CollisionConstraint]] = {}
    for cc in collisions:
        p_i = specs[cc.i].pos_extract @ mus[cc.i][cc.step]
        p_j = specs[cc.j].pos_extract @ mus[cc.j][cc.step]
        margin = cc.margin(p_i, p_j)
        min_margin = min(min_margin, margin)
        if margin <= 1e-6:
            actives.setdefault(cc.i, []).append(cc)
            actives.setdefault(cc.j, []).append(cc)
    if actives:
        sols = [
            StepSolution(
                g=s.g,
                u=s.u,
                mu=s.mu,
                first_input=s.first_input,
                qp_status=s.qp_status,
                active_collisions=tuple(actives.get(idx, ())),
            )
            for idx, s in enumerate(sols)
        ]
    return sols, objective, float(min_margin)


def solve_step(
    specs: list[AgentSpec],
    windows: list[AgentWindow],
    anchors: list[np.ndarray] | None = None,
    d_safe: float | None = None,
    phi=None,
    settings: qpsolve.QpSettings | None = None,
    n_scp: int = 1,
    scp_tol: float = 1e-4,
    soft_collisions: bool = False,
    soften_on_infeasible: bool = True,
    soft_penalty: float = 1e4,
    regularization: NoiseRegularization | None = None,
    z0: np.ndarray | None = None,
) -> StepResult:
    """Assemble and solve the coupled step, optionally iterating anchors.

    Collision constraints are generated when d_safe is given and there
    is more than one agent (anchors are then required). In hard mode an
    infeasible program is retried once with penalized slack variables on
    the collision rows and the step is flagged soft; any other solver
    failure raises StepFailure. With n_scp > 1 the collision directions
    are re-linearized at the new plan until the anchors move less than
    scp_tol (in meters).
    """
    if settings is None:
        settings = qpsolve.QpSettings()
    if len(specs) != len(windows):
        raise ValueError("one window per agent is required")
    if len({spec.behavior.T_f for spec in specs}) != 1:
        raise ValueError("all agents must share the prediction horizon")

    blocks = [
        assemble_agent_qp_blocks(spec, win, regularization)
        for spec, win in zip(specs, windows)
    ]
    couple = d_safe is not None and len(specs) > 1
    if couple and anchors is None:
        raise ValueError("anchor trajectories are required for collision constraints")
    if couple and phi is None:
        raise ValueError("phi is required for collision constraints")

    anchors_cur = anchors
    warm = z0
    scp_rounds = max(1, int(n_scp))
    result = None
    for scp_it in range(scp_rounds):
        collisions = (
            linearize_collisions(specs, anchors_cur, d_safe, phi) if couple else []
        )
        soft = bool(soft_collisions)
        qp, offsets, n_slack = _build_coupled_qp(
            specs, blocks, collisions, soft, soft_penalty
        )
        w0 = warm
        if w0 is not None and w0.size != qp.d:
            w0 = (
                np.concatenate([w0, np.zeros(qp.d - w0.size)])
                if w0.size < qp.d
                else None
            )
        sol = qpsolve.solve(qp, settings, w0)
        if (
            sol.status == qpsolve.PRIMAL_INFEASIBLE
            and not soft
            and soften_on_infeasible
            and collisions
        ):
            soft = True
            qp, offsets, n_slack = _build_coupled_qp(
                specs, blocks, collisions, True, soft_penalty
            )
            sol = qpsolve.solve(qp, settings, None)
        if sol.status != qpsolve.OPTIMAL:
            raise StepFailure(
                f"QP solve failed with status '{sol.status}' "
                f"(primal {sol.primal_res:.2e}, dual {sol.dual_res:.2e})"
            )
        agents, objective, min_margin = _extract(
            specs, blocks, offsets, sol.z, sol.status, collisions
        )
        result = StepResult(
            agents=tuple(agents),
            status=sol.status,
            objective=objective,
            iterations=sol.iterations,
            primal_res=sol.primal_res,
            dual_res=sol.dual_res,
            soft=soft,
            collisions=tuple(collisions),
            min_margin=min_margin,
            scp_iters=scp_it + 1,
            z=sol.z,
        )
        if not couple or scp_it == scp_rounds - 1:
            break
        new_anchors = [s.mu for s in agents]
        move = max(
            float(
                np.max(
                    np.abs(
                        (new_anchors[k] - np.atleast_2d(anchors_cur[k]))
                        @ specs[k].pos_extract.T
                    )
                )
            )
            for k in range(len(specs))
        )
        anchors_cur = new_anchors
        warm = sol.z[: sum(blk.dim for blk in blocks)]
        if move < scp_tol:
            break
    return result


def prediction_matrices(
    model: StateSpace, T_f: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stacked prediction matrices over a T_f-step horizon.

    Returns (G, H, Gy, Hy): predicted states x(t+1..t+T_f) = G x_t + H v
    and predicted outputs y(t..t+T_f-1) = Gy x_t + Hy v for the planned
    inputs v = (u(t), ..., u(t+T_f-1)). The output stack is aligned with
    the data-driven predictor: its first block depends on v only through
    the feedthrough D.
    """
    n, m, q = model.n, model.m, model.q
    powers = [np.eye(n)]
    for _ in range(T_f):
        powers.append(model.A @ powers[-1])
    G = np.zeros((T_f * n, n))
    H = np.zeros((T_f * n, T_f * m))
    Gy = np.zeros((T_f * q, n))
    Hy = np.zeros((T_f * q, T_f * m))
    for k in range(1, T_f + 1):
        G[(k - 1) * n : k * n] = powers[k]
        for j in range(k):
            H[(k - 1) * n : k * n, j * m : (j + 1) * m] = powers[k - 1 - j] @ model.B
    for k in range(T_f):
        Gy[k * q : (k + 1) * q] = model.C @ powers[k]
        Hy[k * q : (k + 1) * q, k * m : (k + 1) * m] += model.D
        for j in range(k):
            Hy[k * q : (k + 1) * q, j * m : (j + 1) * m] = (
                model.C @ powers[k - 1 - j] @ model.B
            )
    return G, H, Gy, Hy


@dataclass(frozen=True)
class MpcAgentPlan:
    """Planned inputs with the model-predicted outputs and states."""

    u: np.ndarray
    y_pred: np.ndarray
    x_pred: np.ndarray


def model_mpc_step(
    models,
    x_t,
    Q,
    R,
    r,
    bounds_u=None,
    bounds_y=None,
    d_safe: float | None = None,
    phi=None,
    anchors=None,
    Sigma_schedules=None,
    pos_extracts=None,
    settings: qpsolve.QpSettings | None = None,
) -> list[MpcAgentPlan]:
    """Parametric MPC baseline with the same cost and constraint semantics.

    Accepts a single agent (StateSpace plus one state vector) or lists
    of per-agent data; x_t is the plant state at the first step of the
    planning window. The QP is solved over the planned inputs only;
    predicted outputs cover the same horizon window as the data-driven
    predictor, so the two are directly comparable. Requires the exact
    model; intended as the testing/comparison oracle.
    """
    if isinstance(models, StateSpace):
        models = [models]
        x_t, Q, R, r = [x_t], [Q], [R], [r]
        bounds_u = [bounds_u]
        bounds_y = [bounds_y]
        Sigma_schedules = [Sigma_schedules]
        pos_extracts = [pos_extracts]
    n_agents = len(models)
    if settings is None:
        settings = qpsolve.QpSettings()

    T_f = np.asarray(r[0]).size // models[0].q
    preds = [prediction_matrices(mdl, T_f) for mdl in models]

    dims = [mdl.m * T_f for mdl in models]
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    total = int(offsets[-1])
    P_blocks, c_parts, lo, hi = [], [], [], []
    free_terms = []
    for idx, mdl in enumerate(models):
        _, _, Gy, Hy = preds[idx]
        Qm = np.atleast_2d(np.asarray(Q[idx], dtype=float))
        Rm = np.atleast_2d(np.asarray(R[idx], dtype=float))
        rv = np.asarray(r[idx], dtype=float).reshape(-1)
        x0 = np.asarray(x_t[idx], dtype=float).reshape(-1)
        free = Gy @ x0
        free_terms.append(free)
        P_blocks.append(2.0 * (Hy.T @ Qm @ Hy + Rm))
        c_parts.append(2.0 * (Hy.T @ (Qm @ (free - rv))))
        if bounds_u is not None and bounds_u[idx] is not None:
            lo.append(np.tile(np.asarray(bounds_u[idx][0], dtype=float), T_f))
            hi.append(np.tile(np.asarray(bounds_u[idx][1], dtype=float), T_f))
        else:
            lo.append(np.full(dims[idx], -np.inf))
            hi.append(np.full(dims[idx], np.inf))

    Ain_rows, bin_vals = [], []
    for idx, mdl in enumerate(models):
        if bounds_y is not None and bounds_y[idx] is not None:
            _, _, Gy, Hy = preds[idx]
            lo_y = np.tile(np.asarray(bounds_y[idx][0], dtype=float), T_f)
            hi_y = np.tile(np.asarray(bounds_y[idx][1], dtype=float), T_f)
            block = np.zeros((2 * Hy.shape[0], total))
            block[: Hy.shape[0], offsets[idx] : offsets[idx + 1]] = Hy
            block[Hy.shape[0] :, offsets[idx] : offsets[idx + 1]] = -Hy
            Ain_rows.append(block)
            bin_vals.append(
                np.concatenate([hi_y - free_terms[idx], free_terms[idx] - lo_y])
            )

    if d_safe is not None and n_agents > 1:
        if anchors is None or phi is None or pos_extracts is None:
            raise ValueError("anchors, phi and pos_extracts are required for collisions")
        for i in range(n_agents):
            for j in range(i + 1, n_agents):
                M_i = np.atleast_2d(pos_extracts[i])
                M_j = np.atleast_2d(pos_extracts[j])
                p_i = np.atleast_2d(anchors[i]) @ M_i.T
                p_j = np.atleast_2d(anchors[j]) @ M_j.T
                prev_k = np.zeros(M_i.shape[0])
                prev_k[0] = 1.0
                for tau in range(T_f):
                    S_i = M_i @ Sigma_schedules[i][tau] @ M_i.T
                    S_j = M_j @ Sigma_schedules[j][tau] @ M_j.T
                    cc = relax_collision(
                        p_i[tau],
                        p_j[tau],
                        S_i,
                        S_j,
                        d_safe,
                        _phi_entry(phi, i, j),
                        i=i,
                        j=j,
                        step=tau,
                        fallback_direction=prev_k,
                    )
                    prev_k = cc.k
                    row = np.zeros(total)
                    rhs = -(cc.d_safe + cc.eta)
                    for agent, sign in ((i, -1.0), (j, 1.0)):
                        _, _, Gy_a, Hy_a = preds[agent]
                        q_a = models[agent].q
                        Ma = np.atleast_2d(pos_extracts[agent])
                        kM = sign * (cc.k @ Ma)
                        row[offsets[agent] : offsets[agent + 1]] += (
                            kM @ Hy_a[tau * q_a : (tau + 1) * q_a]
                        )
                        rhs -= float(kM @ free_terms[agent][tau * q_a : (tau + 1) * q_a])
                    Ain_rows.append(row[None, :])
                    bin_vals.append(np.array([rhs]))

    P_full = np.zeros((total, total))
    for idx in range(n_agents):
        P_full[offsets[idx] : offsets[idx + 1], offsets[idx] : offsets[idx + 1]] = (
            P_blocks[idx]
        )
    qp = qpsolve.QpProblem(
        P=P_full,
        c=np.concatenate(c_parts),
        Ain=np.vstack(Ain_rows) if Ain_rows else None,
        bin=np.concatenate(bin_vals) if bin_vals else None,
        lo=np.concatenate(lo),
        hi=np.concatenate(hi),
    )
    sol = qpsolve.solve(qp, settings)
    if sol.status != qpsolve.OPTIMAL:
        raise StepFailure(f"model MPC QP failed with status '{sol.status}'")

    plans = []
    for idx, mdl in enumerate(models):
        G, H, Gy, Hy = preds[idx]
        v = sol.z[offsets[idx] : offsets[idx + 1]]
        x0 = np.asarray(x_t[idx], dtype=float).reshape(-1)
        y_pred = (Gy @ x0 + Hy @ v).reshape(T_f, mdl.q)
        x_pred = (G @ x0 + H @ v).reshape(T_f, mdl.n)
        plans.append(
            MpcAgentPlan(u=v.reshape(T_f, mdl.m), y_pred=y_pred, x_pred=x_pred)
        )
    return plans


def collect_datasets(scenario, model: StateSpace, gain: FeedbackGain):
    """Closed-loop data collection for every agent (mission steps 1-2).

    Each agent gets its own excitation stream derived from the scenario
    seed plus the agent index; the recorded open-loop input must be
    persistently exciting of order T_p + T_f + n or an error explains
    how to enrich the data.
    """
    L = excitation_order(scenario.T_p, scenario.T_f, model.n)
    datasets = []
    for idx in range(scenario.n_agents):
        rng = np.random.default_rng([scenario.seed_collect, idx])
        u_r = rng.uniform(
            scenario.excitation_bounds[0],
            scenario.excitation_bounds[1],
            size=(scenario.T_num, model.m),
        )
        ds = simulate_closed_loop(model, gain, u_r, np.zeros(model.n))
        if not is_persistently_exciting(ds.u_d, L):
            raise ValueError(
                f"agent {idx}: collected input is not persistently exciting of "
                f"order {L}; increase T_num or widen the excitation bounds"
            )
        datasets.append(ds)
    return datasets


@dataclass(frozen=True)
class MissionLog:
    """Complete record of a receding-horizon mission.

    outputs[k] holds each agent's measured output at mission step k;
    the final row is the terminal zero-input measurement after the last
    applied input, so a mission of S steps yields S+1 output rows and S
    input rows (a partial log from an aborted mission lacks the terminal
    row). solve_times are wall clock and therefore excluded from
    determinism comparisons.
    """

    scenario_hash: str
    controller: str
    dt: float
    n_agents: int
    m: int
    q: int
    T_f: int
    pos_extract: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    predicted: np.ndarray
    objective: np.ndarray
    qp_iterations: np.ndarray
    qp_status: tuple[str, ...]
    soft_steps: np.ndarray
    min_margins: np.ndarray
    scp_iters: np.ndarray
    solve_times: np.ndarray
    seeds: dict

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def positions(self) -> np.ndarray:
        """Measured positions, shape (steps + 1, n_agents, 3)."""
        return self.outputs @ self.pos_extract.T


def _shift_anchor(mu: np.ndarray) -> np.ndarray:
    return np.vstack([mu[1:], mu[-1:]])


def run_mission(scenario, datasets=None, controller: str = "deepc") -> MissionLog:
    """Execute the full decision-making loop for a scenario.

    Verifies the stabilizing gain, collects (or reuses) the training
    data, builds the behavior matrices, then runs the receding-horizon
    loop: windows from the most recent T_p samples, one coupled solve
    per step, first input applied to the plant. controller selects the
    data-driven step ("deepc") or the parametric baseline ("mpc"). A
    failing step aborts with the partial log attached to the exception
    as exc.partial_log.
    """
    if controller not in ("deepc", "mpc"):
        raise ValueError(f"unknown controller '{controller}'")
    model = scenario.model
    gain = design_stabilizing_gain(
        model,
        scenario.gain_state_weight * np.eye(model.n),
        scenario.gain_input_weight * np.eye(model.m),
    )

    specs = None
    if controller == "deepc":
        if datasets is None:
            datasets = collect_datasets(scenario, model, gain)
        if len(datasets) != scenario.n_agents:
            raise ValueError("one dataset per agent is required")
        behaviors = [
            build_behavior_matrix(ds, scenario.T_p, scenario.T_f, model=model)
            for ds in datasets
        ]
        specs = [
            AgentSpec(
                behavior=bh,
                Q=scenario.Q_full,
                R=scenario.R_full,
                r=scenario.references[idx],
                bounds_u=scenario.input_bounds,
                bounds_y=scenario.output_bounds,
                Sigma_schedule=scenario.sigma_schedule,
                pos_extract=scenario.pos_extract,
            )
            for idx, bh in enumerate(behaviors)
        ]

    N = scenario.n_agents
    T_p, T_f = scenario.T_p, scenario.T_f
    M_pos = scenario.pos_extract
    x = [scenario.initial_states[i].copy() for i in range(N)]
    y0 = [model.C @ x[i] for i in range(N)]
    u_hist = [[np.zeros(model.m)] * T_p for _ in range(N)]
    y_hist = [[y0[i]] * T_p for i in range(N)]

    # first-step anchors: straight-line positions from start to target
    anchors = []
    for i in range(N):
        anchor = np.tile(y0[i], (T_f, 1))
        p0 = M_pos @ y0[i]
        frac = (np.arange(1, T_f + 1) / T_f)[:, None]
        line = p0 + frac * (scenario.destinations[i] - p0)
        anchor = anchor + (line - anchor @ M_pos.T) @ M_pos
        anchors.append(anchor)

    outputs: list[np.ndarray] = []
    inputs, predicted, objective = [], [], []
    qp_iters, statuses, softs, margins, scps, times = [], [], [], [], [], []
    reg = (
        NoiseRegularization(scenario.lambda_g, scenario.lambda_slack)
        if scenario.noisy_data_regularization
        else None
    )
    warm = None

    def build_log() -> MissionLog:
        S = len(inputs)
        return MissionLog(
            scenario_hash=scenario.scenario_hash,
            controller=controller,
            dt=model.dt,
            n_agents=N,
            m=model.m,
            q=model.q,
            T_f=T_f,
            pos_extract=M_pos,
            outputs=(
                np.stack(outputs) if outputs else np.zeros((0, N, model.q))
            ),
            inputs=np.stack(inputs) if S else np.zeros((0, N, model.m)),
            predicted=np.stack(predicted) if S else np.zeros((0, N, T_f, model.q)),
            objective=np.array(objective),
            qp_iterations=np.array(qp_iters, dtype=int),
            qp_status=tuple(statuses),
            soft_steps=np.array(softs, dtype=bool),
            min_margins=np.array(margins),
            scp_iters=np.array(scps, dtype=int),
            solve_times=np.array(times),
            seeds={"collect": scenario.seed_collect, "monte_carlo": scenario.seed_mc},
        )

    lo_u, hi_u = (
        scenario.input_bounds
        if scenario.input_bounds is not None
        else (np.full(model.m, -np.inf), np.full(model.m, np.inf))
    )

    for _ in range(scenario.mission_steps):
        t0 = time.perf_counter()
        try:
            if controller == "deepc":
                windows = [
                    AgentWindow(
                        u_p=np.stack(u_hist[i][-T_p:]), y_p=np.stack(y_hist[i][-T_p:])
                    )
                    for i in range(N)
                ]
                res = solve_step(
                    specs,
                    windows,
                    anchors=anchors,
                    d_safe=scenario.d_safe if N > 1 else None,
                    phi=scenario.phi,
                    settings=scenario.solver_settings,
                    n_scp=scenario.n_scp,
                    soft_collisions=scenario.collision_mode == "soft",
                    regularization=reg,
                    z0=warm,
                )
                plans = [(s.first_input, s.mu) for s in res.agents]
                objective.append(res.objective)
                qp_iters.append(res.iterations)
                statuses.append(res.status)
                softs.append(res.soft)
                margins.append(res.min_margin)
                scps.append(res.scp_iters)
                warm = res.z
            else:
                mpc = model_mpc_step(
                    [model] * N,
                    x,
                    [scenario.Q_full] * N,
                    [scenario.R_full] * N,
                    [scenario.references[i] for i in range(N)],
                    bounds_u=[scenario.input_bounds] * N,
                    bounds_y=[scenario.output_bounds] * N,
                    d_safe=scenario.d_safe if N > 1 else None,
                    phi=scenario.phi,
                    anchors=anchors,
                    Sigma_schedules=[scenario.sigma_schedule] * N,
                    pos_extracts=[M_pos] * N,
                    settings=scenario.solver_settings,
                )
                plans = [(p.u[0], p.y_pred) for p in mpc]
                obj = 0.0
                for i, p in enumerate(mpc):
                    dy = p.y_pred.ravel() - scenario.references[i]
                    obj += float(
                        dy @ scenario.Q_full @ dy
                        + p.u.ravel() @ scenario.R_full @ p.u.ravel()
                    )
                objective.append(obj)
                qp_iters.append(0)
                statuses.append(qpsolve.OPTIMAL)
                softs.append(False)
                margins.append(np.inf)
                scps.append(1)
        except StepFailure as exc:
            exc.partial_log = build_log()
            raise

        u_step, y_step, mu_step = [], [], []
        for i in range(N):
            u_app = np.clip(plans[i][0], lo_u, hi_u)
            x_next, y_meas = step(model, x[i], u_app)
            x[i] = x_next
            u_hist[i].append(u_app)
            y_hist[i].append(y_meas)
            u_step.append(u_app)
            y_step.append(y_meas)
            mu_step.append(plans[i][1])
        inputs.append(np.stack(u_step))
        outputs.append(np.stack(y_step))
        predicted.append(np.stack(mu_step))
        anchors = [_shift_anchor(plans[i][1]) for i in range(N)]
        times.append(time.perf_counter() - t0)

    # terminal zero-input measurement closes the trace
    outputs.append(np.stack([model.C @ x[i] for i in range(N)]))
    return build_log()
