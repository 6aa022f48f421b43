"""Self-contained convex quadratic-program solver with a KKT contract.

Solves

    minimize    0.5 z' P z + c' z
    subject to  Aeq z = beq,  Ain z <= bin,  lo <= z <= hi

by operator splitting on the stacked constraint set (alternating
proximal updates on an augmented Lagrangian, with Ruiz equilibration,
over-relaxation and a vectorized penalty that weights equality rows
more heavily). The x-update solves the regularized normal equations
(P + sigma I + A' diag(rho) A) through a sparse LU factorization.

Two exactness devices sit around the splitting loop: a direct
equality-KKT solve that short-circuits the iteration whenever the
inequality constraints turn out inactive, and an active-set polish for
small problems that re-solves the KKT system restricted to the
constraints the iteration identified as active. Every "optimal" status
is certified against independently recomputed KKT residuals; an
infeasible point is never reported as optimal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "QpProblem",
    "QpSettings",
    "QpSolution",
    "solve",
    "kkt_residuals",
    "dump_problem",
    "load_problem",
    "OPTIMAL",
    "MAX_ITERS",
    "PRIMAL_INFEASIBLE",
    "DUAL_INFEASIBLE",
]

OPTIMAL = "optimal"
MAX_ITERS = "max_iters"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"


def _to_csc(M, rows_hint=None, d=None):
    if M is None:
        return sp.csc_matrix((0 if rows_hint is None else rows_hint, d))
    if sp.issparse(M):
        return M.tocsc().astype(float)
    return sp.csc_matrix(np.atleast_2d(np.asarray(M, dtype=float)))


@dataclass(frozen=True)
class QpProblem:
    """Convex QP data. P must be symmetric positive semidefinite.

    Aeq/beq, Ain/bin, lo/hi may each be omitted (None); lo/hi default to
    unbounded. Matrices may be dense arrays or scipy sparse.
    """

    P: sp.csc_matrix
    c: np.ndarray
    Aeq: sp.csc_matrix | None = None
    beq: np.ndarray | None = None
    Ain: sp.csc_matrix | None = None
    bin: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=float).reshape(-1)
        d = c.size
        P = _to_csc(self.P, d, d)
        if P.shape != (d, d):
            raise ValueError(f"P must be {d}x{d}, got {P.shape}")
        asym = abs(P - P.T)
        max_asym = asym.max() if asym.nnz else 0.0
        scale = max(1.0, abs(P).max() if P.nnz else 0.0)
        if max_asym > 1e-10 * scale:
            raise ValueError("P must be symmetric")
        _check_psd(P)

        Aeq = _to_csc(self.Aeq, None, d)
        beq = (
            np.zeros(Aeq.shape[0])
            if self.beq is None
            else np.asarray(self.beq, dtype=float).reshape(-1)
        )
        if Aeq.shape != (beq.size, d):
            raise ValueError(f"Aeq must be {beq.size}x{d}, got {Aeq.shape}")
        Ain = _to_csc(self.Ain, None, d)
        bin_ = (
            np.zeros(Ain.shape[0])
            if self.bin is None
            else np.asarray(self.bin, dtype=float).reshape(-1)
        )
        if Ain.shape != (bin_.size, d):
            raise ValueError(f"Ain must be {bin_.size}x{d}, got {Ain.shape}")
        lo = (
            np.full(d, -np.inf)
            if self.lo is None
            else np.asarray(self.lo, dtype=float).reshape(-1)
        )
        hi = (
            np.full(d, np.inf)
            if self.hi is None
            else np.asarray(self.hi, dtype=float).reshape(-1)
        )
        if lo.shape != (d,) or hi.shape != (d,):
            raise ValueError("lo and hi must have the decision dimension")
        if np.any(lo > hi):
            raise ValueError("lo must be <= hi componentwise")

        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Aeq", Aeq)
        object.__setattr__(self, "beq", beq)
        object.__setattr__(self, "Ain", Ain)
        object.__setattr__(self, "bin", bin_)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self) -> int:
        return self.c.size

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float).reshape(-1)
        return float(0.5 * z @ (self.P @ z) + self.c @ z)


def _check_psd(P: sp.csc_matrix) -> None:
    d = P.shape[0]
    if d == 0 or P.nnz == 0:
        return
    if d <= 600:
        w_min = float(np.min(np.linalg.eigvalsh(P.toarray())))
    else:
        diag = P.diagonal()
        off = abs(P) - sp.diags(np.abs(diag))
        gersh = float(np.min(diag - np.asarray(off.sum(axis=1)).ravel()))
        if gersh >= -1e-8:
            return
        w_min = float(
            spla.eigsh(P, k=1, which="SA", return_eigenvectors=False, tol=1e-6)[0]
        )
    if w_min < -1e-8:
        raise ValueError(f"P must be positive semidefinite (min eigenvalue {w_min:.3e})")


@dataclass(frozen=True)
class QpSettings:
    """Solver parameters; the defaults match the documented contract."""

    eps_prim: float = 1e-6
    eps_dual: float = 1e-6
    max_iters: int = 20000
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    sigma: float = 1e-8
    alpha: float = 1.6
    check_every: int = 25
    scaling_iters: int = 10
    eps_infeas: float = 1e-7
    adaptive_rho: bool = True
    max_refactors: int = 4
    polish: bool = True
    polish_max_dim: int = 1200
    refine_steps: int = 3
    equality_first: bool = True


@dataclass(frozen=True)
class QpSolution:
    """Solver output with independently meaningful residuals.

    dual_box is a full-length signed vector: positive entries push away
    from upper bounds, negative from lower bounds. Residuals are
    (primal, dual, complementarity gap) in the infinity norm, computed
    from the reported primal/dual values, not from solver internals.
    """

    z: np.ndarray
    dual_eq: np.ndarray
    dual_in: np.ndarray
    dual_box: np.ndarray
    objective: float
    status: str
    iterations: int
    primal_res: float
    dual_res: float
    gap: float
    tikhonov: float
    polished: bool = False
    solve_path: str = "admm"


def _residuals(
    qp: QpProblem,
    z: np.ndarray,
    dual_eq: np.ndarray,
    dual_in: np.ndarray,
    dual_box: np.ndarray,
) -> tuple[float, float, float]:
    prim = 0.0
    if qp.Aeq.shape[0]:
        prim = max(prim, float(np.max(np.abs(qp.Aeq @ z - qp.beq))))
    ain_z = qp.Ain @ z if qp.Ain.shape[0] else np.zeros(0)
    if qp.Ain.shape[0]:
        prim = max(prim, float(np.max(np.maximum(ain_z - qp.bin, 0.0), initial=0.0)))
    prim = max(prim, float(np.max(np.maximum(qp.lo - z, 0.0), initial=0.0)))
    prim = max(prim, float(np.max(np.maximum(z - qp.hi, 0.0), initial=0.0)))

    grad = qp.P @ z + qp.c
    if qp.Aeq.shape[0]:
        grad = grad + qp.Aeq.T @ dual_eq
    if qp.Ain.shape[0]:
        grad = grad + qp.Ain.T @ dual_in
    grad = grad + dual_box
    dual = float(np.max(np.abs(grad))) if grad.size else 0.0

    gap = 0.0
    if qp.Ain.shape[0]:
        gap = max(gap, float(np.max(np.abs(dual_in * (qp.bin - ain_z)), initial=0.0)))
    up = dual_box > 0
    lo_ = dual_box < 0
    if np.any(up):
        gap = max(gap, float(np.max(np.abs(dual_box[up] * (qp.hi[up] - z[up])))))
    if np.any(lo_):
        gap = max(gap, float(np.max(np.abs(dual_box[lo_] * (z[lo_] - qp.lo[lo_])))))
    return prim, dual, gap


def kkt_residuals(qp: QpProblem, sol: QpSolution) -> tuple[float, float, float]:
    """Recompute (primal, dual, gap) residuals from scratch for certification."""
    z = np.asarray(sol.z, dtype=float).reshape(-1)
    if z.shape != (qp.d,):
        raise ValueError(f"solution dimension {z.shape} does not match problem {qp.d}")
    return _residuals(qp, z, sol.dual_eq, sol.dual_in, sol.dual_box)


def _stack(qp: QpProblem):
    """Stacked constraint form l <= A z <= u plus the row partition."""
    d = qp.d
    neq, nin = qp.Aeq.shape[0], qp.Ain.shape[0]
    box_idx = np.where(np.isfinite(qp.lo) | np.isfinite(qp.hi))[0]
    nbox = box_idx.size
    blocks = []
    if neq:
        blocks.append(qp.Aeq)
    if nin:
        blocks.append(qp.Ain)
    if nbox:
        eye = sp.csc_matrix(
            (np.ones(nbox), (np.arange(nbox), box_idx)), shape=(nbox, d)
        )
        blocks.append(eye)
    A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, d))
    l = np.concatenate([qp.beq, np.full(nin, -np.inf), qp.lo[box_idx]])
    u = np.concatenate([qp.beq, qp.bin, qp.hi[box_idx]])
    return A, l, u, neq, nin, box_idx


def _ruiz(P, A, c, iters):
    """Ruiz equilibration of [[P, A'], [A, 0]] plus cost normalization.

    Returns scaled (P, A, c) and the diagonal scalings (D, E, gamma) with
    z = D z_scaled and y = E y_scaled / gamma.
    """
    d, mr = P.shape[0], A.shape[0]
    D = np.ones(d)
    E = np.ones(mr)
    gamma = 1.0
    Ps, As, cs = P.copy(), A.copy(), c.copy()
    for _ in range(iters):
        col_p = np.zeros(d)
        if Ps.nnz:
            col_p = abs(Ps).max(axis=0).toarray().ravel()
        col_a = np.zeros(d)
        row_a = np.zeros(mr)
        if As.nnz:
            col_a = abs(As).max(axis=0).toarray().ravel()
            row_a = abs(As).max(axis=1).toarray().ravel()
        cn = np.maximum(col_p, col_a)
        cn[cn == 0] = 1.0
        rn = row_a.copy()
        rn[rn == 0] = 1.0
        dd = 1.0 / np.sqrt(cn)
        de = 1.0 / np.sqrt(rn)
        Dd = sp.diags(dd)
        De = sp.diags(de)
        Ps = (Dd @ Ps @ Dd).tocsc()
        As = (De @ As @ Dd).tocsc()
        cs = dd * cs
        D *= dd
        E *= de
        # cost scaling keeps the quadratic and linear parts comparable
        if Ps.nnz:
            mean_col = float(np.mean(abs(Ps).max(axis=0).toarray().ravel()))
        else:
            mean_col = 0.0
        cinf = float(np.max(np.abs(cs))) if cs.size else 0.0
        g = 1.0 / max(mean_col, cinf, 1e-6)
        Ps = Ps * g
        cs = cs * g
        gamma *= g
    return Ps, As, cs, D, E, gamma


def _solve_kkt_refined(P, A, sigma, rhs_top, rhs_bot, refine_steps):
    """Regularized KKT solve [[P+sI, A'], [A, -sI]] with iterative refinement.

    Refinement corrects toward the unregularized system; returns (z, nu)
    or None if the factorization fails.
    """
    d, mr = P.shape[0], A.shape[0]
    K = sp.bmat(
        [
            [P + sigma * sp.eye(d), A.T if mr else None],
            [A if mr else None, -sigma * sp.eye(mr) if mr else None],
        ],
        format="csc",
    )
    if K is None:
        K = (P + sigma * sp.eye(d)).tocsc()
    try:
        lu = spla.splu(K)
    except RuntimeError:
        return None
    rhs = np.concatenate([rhs_top, rhs_bot])
    sol = lu.solve(rhs)
    for _ in range(refine_steps):
        z, nu = sol[:d], sol[d:]
        r_top = rhs_top - (P @ z + (A.T @ nu if mr else 0.0))
        r_bot = rhs_bot - (A @ z if mr else np.zeros(0))
        corr = lu.solve(np.concatenate([r_top, r_bot]))
        sol = sol + corr
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:d], sol[d:]


def _try_equality_solution(qp: QpProblem, settings: QpSettings):
    """Solve with inequalities ignored; accept if they happen to hold."""
    z_nu = _solve_kkt_refined(
        qp.P,
        qp.Aeq,
        settings.sigma,
        -qp.c,
        qp.beq,
        settings.refine_steps,
    )
    if z_nu is None:
        return None
    z, nu = z_nu
    dual_in = np.zeros(qp.Ain.shape[0])
    dual_box = np.zeros(qp.d)
    prim, dual, gap = _residuals(qp, z, nu, dual_in, dual_box)
    if prim <= settings.eps_prim and dual <= settings.eps_dual:
        return QpSolution(
            z=z,
            dual_eq=nu,
            dual_in=dual_in,
            dual_box=dual_box,
            objective=qp.objective(z),
            status=OPTIMAL,
            iterations=0,
            primal_res=prim,
            dual_res=dual,
            gap=gap,
            tikhonov=settings.sigma,
            solve_path="equality_kkt",
        )
    return None


def _split_duals(y: np.ndarray, neq: int, nin: int, box_idx: np.ndarray, d: int):
    dual_eq = y[:neq]
    dual_in = np.maximum(y[neq : neq + nin], 0.0)
    dual_box = np.zeros(d)
    dual_box[box_idx] = y[neq + nin :]
    return dual_eq, dual_in, dual_box


def _polish(qp: QpProblem, settings: QpSettings, z, y, neq, nin, box_idx):
    """Active-set refinement: exact KKT solve on the identified actives."""
    d = qp.d
    y_in = y[neq : neq + nin]
    y_box = y[neq + nin :]
    act_in = np.where(y_in > 0)[0]
    act_up = box_idx[np.where(y_box > 0)[0]]
    act_lo = box_idx[np.where(y_box < 0)[0]]
    n_act = neq + act_in.size + act_up.size + act_lo.size
    if d + n_act > settings.polish_max_dim:
        return None

    rows = []
    b_act = []
    if neq:
        rows.append(qp.Aeq)
        b_act.append(qp.beq)
    if act_in.size:
        rows.append(qp.Ain[act_in])
        b_act.append(qp.bin[act_in])
    for idx_set, bounds in ((act_up, qp.hi), (act_lo, qp.lo)):
        if idx_set.size:
            sel = sp.csc_matrix(
                (np.ones(idx_set.size), (np.arange(idx_set.size), idx_set)),
                shape=(idx_set.size, d),
            )
            rows.append(sel)
            b_act.append(bounds[idx_set])
    G = sp.vstack(rows, format="csc") if rows else sp.csc_matrix((0, d))
    b = np.concatenate(b_act) if b_act else np.zeros(0)

    out = _solve_kkt_refined(qp.P, G, settings.sigma, -qp.c, b, settings.refine_steps)
    if out is None:
        return None
    z_pol, nu = out
    dual_eq = nu[:neq]
    dual_in = np.zeros(nin)
    off = neq
    dual_in[act_in] = np.maximum(nu[off : off + act_in.size], 0.0)
    off += act_in.size
    dual_box = np.zeros(d)
    dual_box[act_up] = np.maximum(nu[off : off + act_up.size], 0.0)
    off += act_up.size
    dual_box[act_lo] = np.minimum(nu[off : off + act_lo.size], 0.0)
    return z_pol, dual_eq, dual_in, dual_box


def solve(
    qp: QpProblem,
    settings: QpSettings | None = None,
    z0: np.ndarray | None = None,
) -> QpSolution:
    """Solve the QP; deterministic for identical inputs and settings.

    z0 is an optional initial primal guess. On status "optimal" the
    reported residuals satisfy the settings tolerances; infeasibility is
    signalled through the status, never through a silently infeasible
    "optimal" point.
    """
    if settings is None:
        settings = QpSettings()
    d = qp.d

    if settings.equality_first:
        shortcut = _try_equality_solution(qp, settings)
        if shortcut is not None:
            return shortcut

    A, l, u, neq, nin, box_idx = _stack(qp)
    mr = A.shape[0]

    if mr == 0:
        # unconstrained: the equality shortcut above already handles the
        # solvable case, so reaching here means P is singular along c
        z = np.zeros(d) if z0 is None else np.asarray(z0, dtype=float).reshape(-1)
        prim, dual, gap = _residuals(qp, z, np.zeros(0), np.zeros(0), np.zeros(d))
        return QpSolution(
            z=z,
            dual_eq=np.zeros(0),
            dual_in=np.zeros(0),
            dual_box=np.zeros(d),
            objective=qp.objective(z),
            status=DUAL_INFEASIBLE,
            iterations=0,
            primal_res=prim,
            dual_res=dual,
            gap=gap,
            tikhonov=settings.sigma,
        )

    Ps, As, cs, D, E, gamma = _ruiz(qp.P, A, qp.c, settings.scaling_iters)
    ls, us = E * l, E * u
    AsT = As.T.tocsc()

    rho_base = settings.rho
    is_eq = np.zeros(mr, dtype=bool)
    is_eq[:neq] = True

    def rho_vec(base):
        r = np.full(mr, base)
        r[is_eq] = base * settings.rho_eq_scale
        return r

    rho = rho_vec(rho_base)

    def factor(rho):
        M = (Ps + settings.sigma * sp.eye(d) + AsT @ sp.diags(rho) @ As).tocsc()
        return spla.splu(M)

    lu = factor(rho)
    refactors = 0

    if z0 is not None:
        x = np.asarray(z0, dtype=float).reshape(-1) / D
        if x.shape != (d,):
            raise ValueError("z0 must have the decision dimension")
    else:
        x = np.zeros(d)
    zc = np.clip(As @ x, ls, us)
    y = np.zeros(mr)

    alpha = settings.alpha
    status = MAX_ITERS
    iterations = settings.max_iters
    dx = np.zeros(d)
    dy = np.zeros(mr)

    fin_u = np.isfinite(u)
    fin_l = np.isfinite(l)

    for it in range(1, settings.max_iters + 1):
        x_prev, y_prev = x, y
        rhs = settings.sigma * x - cs + AsT @ (rho * zc - y)
        x_t = lu.solve(rhs)
        z_t = As @ x_t
        x = alpha * x_t + (1.0 - alpha) * x_prev
        w = alpha * z_t + (1.0 - alpha) * zc + y / rho
        zc_new = np.clip(w, ls, us)
        y = y + rho * (alpha * z_t + (1.0 - alpha) * zc - zc_new)
        zc = zc_new
        dx = x - x_prev
        dy = y - y_prev

        if it % settings.check_every == 0 or it == settings.max_iters:
            z_u = D * x
            y_u = (E * y) / gamma
            Az = A @ z_u
            zc_u = zc / E
            prim = float(np.max(np.abs(Az - zc_u), initial=0.0))
            grad = qp.P @ z_u + qp.c + A.T @ y_u
            dualr = float(np.max(np.abs(grad), initial=0.0))
            if prim <= settings.eps_prim and dualr <= settings.eps_dual:
                status = OPTIMAL
                iterations = it
                break

            # infeasibility certificates from the last iterate deltas
            dz_u = D * dx
            dy_u = (E * dy) / gamma
            ninf = settings.eps_infeas
            ndy = float(np.max(np.abs(dy_u), initial=0.0))
            if ndy > 0:
                atd = float(np.max(np.abs(A.T @ dy_u), initial=0.0))
                pos = np.maximum(dy_u, 0.0)
                neg = np.minimum(dy_u, 0.0)
                open_up = np.any(pos[~fin_u] > ninf * ndy)
                open_lo = np.any(neg[~fin_l] < -ninf * ndy)
                if atd <= ninf * ndy and not open_up and not open_lo:
                    support = float(u[fin_u] @ pos[fin_u] + l[fin_l] @ neg[fin_l])
                    if support <= -ninf * ndy:
                        status = PRIMAL_INFEASIBLE
                        iterations = it
                        break
            ndz = float(np.max(np.abs(dz_u), initial=0.0))
            if ndz > 0:
                pdz = float(np.max(np.abs(qp.P @ dz_u), initial=0.0))
                cdz = float(qp.c @ dz_u)
                adz = A @ dz_u
                ok_up = np.all(adz[fin_u] <= ninf * ndz)
                ok_lo = np.all(adz[fin_l] >= -ninf * ndz)
                if pdz <= ninf * ndz and cdz <= -ninf * ndz and ok_up and ok_lo:
                    status = DUAL_INFEASIBLE
                    iterations = it
                    break

            if (
                settings.adaptive_rho
                and refactors < settings.max_refactors
                and it >= settings.check_every * 2
            ):
                p_rel = prim / max(
                    float(np.max(np.abs(Az), initial=0.0)),
                    float(np.max(np.abs(zc_u), initial=0.0)),
                    1e-12,
                )
                d_rel = dualr / max(
                    float(np.max(np.abs(qp.P @ z_u), initial=0.0)),
                    float(np.max(np.abs(A.T @ y_u), initial=0.0)),
                    float(np.max(np.abs(qp.c), initial=0.0)),
                    1e-12,
                )
                ratio = math.sqrt(p_rel / max(d_rel, 1e-16))
                if ratio > 5.0 or ratio < 0.2:
                    rho_base = float(np.clip(rho_base * ratio, 1e-6, 1e6))
                    rho = rho_vec(rho_base)
                    lu = factor(rho)
                    refactors += 1

    z_u = D * x
    y_u = (E * y) / gamma
    dual_eq, dual_in, dual_box = _split_duals(y_u, neq, nin, box_idx, d)

    if status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        prim, dualr, gap = _residuals(qp, z_u, dual_eq, dual_in, dual_box)
        return QpSolution(
            z=z_u,
            dual_eq=dual_eq,
            dual_in=dual_in,
            dual_box=dual_box,
            objective=qp.objective(z_u),
            status=status,
            iterations=iterations,
            primal_res=prim,
            dual_res=dualr,
            gap=gap,
            tikhonov=settings.sigma,
        )

    prim, dualr, gap = _residuals(qp, z_u, dual_eq, dual_in, dual_box)
    polished = False
    if settings.polish and status == OPTIMAL:
        pol = _polish(qp, settings, z_u, y_u, neq, nin, box_idx)
        if pol is not None:
            zp, de, di, db = pol
            rp = _residuals(qp, zp, de, di, db)
            if max(rp) <= max(prim, dualr, gap):
                z_u, dual_eq, dual_in, dual_box = zp, de, di, db
                prim, dualr, gap = rp
                polished = True

    if status == OPTIMAL and (
        prim > settings.eps_prim or dualr > settings.eps_dual
    ):
        # the clamped duals must stand on their own; demote otherwise
        status = MAX_ITERS

    return QpSolution(
        z=z_u,
        dual_eq=dual_eq,
        dual_in=dual_in,
        dual_box=dual_box,
        objective=qp.objective(z_u),
        status=status,
        iterations=iterations,
        primal_res=prim,
        dual_res=dualr,
        gap=gap,
        tikhonov=settings.sigma,
        polished=polished,
        solve_path="admm+polish" if polished else "admm",
    )


def dump_problem(qp: QpProblem, path: str) -> None:
    """Write the problem to a JSON document for external cross-checking."""
    doc = {
        "P": qp.P.toarray().tolist(),
        "c": qp.c.tolist(),
        "Aeq": qp.Aeq.toarray().tolist(),
        "beq": qp.beq.tolist(),
        "Ain": qp.Ain.toarray().tolist(),
        "bin": qp.bin.tolist(),
        "lo": qp.lo.tolist(),
        "hi": qp.hi.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_problem(path: str) -> QpProblem:
    """Read a problem written by dump_problem."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)

    def arr(key):
        a = np.array(doc[key], dtype=float)
        return a if a.size else None

    return QpProblem(
        P=np.array(doc["P"], dtype=float),
        c=np.array(doc["c"], dtype=float),
        Aeq=arr("Aeq"),
        beq=arr("beq"),
        Ain=arr("Ain"),
        bin=arr("bin"),
        lo=np.array(doc["lo"], dtype=float),
        hi=np.array(doc["hi"], dtype=float),
    )
