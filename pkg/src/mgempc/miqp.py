"""Dense convex-QP / mixed-integer QP machinery.

A problem is ``min 0.5 x'Qx + c'x + const0`` subject to equality rows,
inequality rows (A x <= b) and per-variable bounds, with a designated set of
binary variables. The continuous relaxation is solved by a primal-dual
interior-point iteration after substituting fixed variables, folding
single-variable rows into bounds, and eliminating equality constraints
through a nullspace basis; the optimum is then certified by re-solving the
KKT system of the unregularized data on the detected active set. Binaries
are handled by a deterministic best-bound branch and bound that warm-starts
children from the parent's certified active set. An exhaustive enumeration
solver over all binary assignments is the verification oracle for small
instances.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import cho_factor, cho_solve


def _nnls(B, g, max_iter=None, w0=None):
    """Nonnegative least squares min ||B w - g||, w >= 0 (Lawson-Hanson on
    the normal equations). Small dense problems only; deterministic. ``w0``
    warm-starts the passive set."""
    n = B.shape[1]
    BtB = B.T @ B
    Btg = B.T @ g
    if w0 is not None:
        w = np.maximum(np.asarray(w0, dtype=float), 0.0)
        passive = w > 0
    else:
        w = np.zeros(n)
        passive = np.zeros(n, dtype=bool)
    grad = Btg - BtB @ w if passive.any() else Btg.copy()
    tol = 1e-12 * max(1.0, float(np.abs(Btg).max(initial=0.0)))
    max_iter = max_iter or max(60, 6 * n)
    it = 0
    need_resolve = bool(passive.any())
    while it < max_iter:
        it += 1
        if not need_resolve:
            cand = ~passive & (grad > tol)
            if not cand.any():
                break
            j = int(np.argmax(np.where(cand, grad, -np.inf)))
            passive[j] = True
        need_resolve = False
        while it < max_iter:
            idx = np.flatnonzero(passive)
            sub = BtB[np.ix_(idx, idx)]
            try:
                sol = np.linalg.solve(sub, Btg[idx])
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(sub, Btg[idx], rcond=None)
            if not np.all(np.isfinite(sol)):
                sol, *_ = np.linalg.lstsq(sub, Btg[idx], rcond=None)
            if sol.min(initial=1.0) > -1e-12:
                w[:] = 0.0
                w[idx] = np.maximum(sol, 0.0)
                break
            it += 1
            neg = sol < 0
            wi = w[idx]
            denom = wi[neg] - sol[neg]
            alpha = float(np.min(wi[neg] / np.maximum(denom, 1e-300)))
            w[idx] = wi + alpha * (sol - wi)
            drop = idx[w[idx] <= 1e-14]
            if drop.size == 0:
                drop = idx[neg][: 1]
            passive[drop] = False
            w[drop] = 0.0
        grad = Btg - BtB @ w
    resid = g - B @ w
    return w, float(np.linalg.norm(resid))


@dataclass
class MiqpProblem:
    """Dense MIQP data. Objective convention: f(x) = 0.5 x'Qx + c'x + const0."""

    Q: np.ndarray
    c: np.ndarray
    const0: float
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary_idx: np.ndarray
    layout: dict = field(default_factory=dict)
    row_tags: dict = field(default_factory=dict)  # optional {"eq": [...], "in": [...]}

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def n_cont(self) -> int:
        return self.n - self.binary_idx.shape[0]

    def objective_value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.const0)

    def validate(self) -> None:
        n = self.n
        if self.Q.shape != (n, n):
            raise ValueError(f"Q shape {self.Q.shape} != ({n}, {n})")
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if self.A_eq.shape != (self.b_eq.shape[0], n):
            raise ValueError("A_eq/b_eq shape mismatch")
        if self.A_in.shape != (self.b_in.shape[0], n):
            raise ValueError("A_in/b_in shape mismatch")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bound shape mismatch")
        b = self.binary_idx
        if b.size and (b.min() < 0 or b.max() >= n or np.unique(b).size != b.size):
            raise ValueError("binary_idx out of range or duplicated")
        if b.size and not (np.all(self.lb[b] == 0.0) and np.all(self.ub[b] == 1.0)):
            raise ValueError("every binary variable must have bounds [0, 1]")


@dataclass
class QpSolution:
    x: np.ndarray | None
    objective: float
    status: str                    # "optimal" | "infeasible" | "max_iter"
    kkt_residual: float
    active_set: tuple = ()         # tags of active inequality rows / bounds
    infeasible_row: tuple | None = None
    iterations: int = 0


@dataclass
class BnbResult:
    incumbent: np.ndarray | None
    objective: float
    gap: float
    nodes_explored: int
    wall_time: float
    status: str = "optimal"        # "optimal" | "infeasible" | "node_limit" | "time_limit"
    root_active: tuple = ()        # root relaxation's certified active set
    root_x: np.ndarray | None = None


@dataclass(frozen=True)
class SolverOptions:
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-8
    tol_int: float = 1e-6
    mip_gap: float = 1e-6
    node_limit: int | None = None
    time_limit: float | None = None
    branching: str = "most-fractional"   # or "pseudo-cost"
    node_order: str = "best-bound"

    def __post_init__(self):
        for name in ("tol_kkt", "tol_feas", "tol_int"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.mip_gap < 0:
            raise ValueError("mip_gap must be >= 0")
        if self.branching not in ("most-fractional", "pseudo-cost"):
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.node_order != "best-bound":
            raise ValueError(f"unknown node order {self.node_order!r}")


# ---------------------------------------------------------------------------
# Reduction: substitution, row folding, equality elimination
# ---------------------------------------------------------------------------

_PIN_TOL = 1e-11


@dataclass
class _Reduced:
    status: str                       # "ok" | "infeasible"
    bad_row: tuple | None = None
    free: np.ndarray | None = None    # original indices of free variables
    x_fixed: np.ndarray | None = None
    fixed_mask: np.ndarray | None = None
    lb: np.ndarray | None = None      # working bounds on free variables
    ub: np.ndarray | None = None
    eq_rows: np.ndarray | None = None  # remaining equality rows (free columns)
    eq_rhs: np.ndarray | None = None
    in_rows: np.ndarray | None = None  # remaining inequality rows (free cols)
    in_rhs: np.ndarray | None = None
    in_idx: np.ndarray | None = None   # original indices of kept rows
    x_p: np.ndarray | None = None      # particular equality solution (free space)
    Z: np.ndarray | None = None        # nullspace basis


def _reduce(p: MiqpProblem, fixed: dict, tol_feas: float) -> _Reduced:
    n = p.n
    lbw = p.lb.copy()
    ubw = p.ub.copy()
    for j, v in fixed.items():
        v = float(v)
        if v < p.lb[j] - tol_feas or v > p.ub[j] + tol_feas:
            return _Reduced(status="infeasible", bad_row=("fixed-bound", int(j)))
        lbw[j] = ubw[j] = v

    in_keep = np.ones(p.A_in.shape[0], dtype=bool)
    eq_keep = np.ones(p.A_eq.shape[0], dtype=bool)
    fixed_mask = np.zeros(n, dtype=bool)
    xf = np.zeros(n)

    abs_eq = np.abs(p.A_eq) > 1e-14
    abs_in = np.abs(p.A_in) > 1e-14
    for _ in range(12):
        changed = False
        gap = ubw - lbw
        if np.any(gap < -10 * tol_feas):
            return _Reduced(status="infeasible",
                            bad_row=("bound", int(np.argmin(gap))))
        newly = (~fixed_mask) & (gap <= _PIN_TOL)
        if newly.any():
            xf[newly] = 0.5 * (lbw[newly] + ubw[newly])
            fixed_mask |= newly
            changed = True
        free_idx = np.flatnonzero(~fixed_mask)
        fixed_idx = np.flatnonzero(fixed_mask)

        # equality rows: drop constants, pin single-variable rows
        act = np.flatnonzero(eq_keep)
        if act.size:
            rhs = p.b_eq[act] - (p.A_eq[np.ix_(act, fixed_idx)] @ xf[fixed_idx]
                                 if fixed_idx.size else 0.0)
            counts = abs_eq[np.ix_(act, free_idx)].sum(axis=1)
            for pos in np.flatnonzero(counts == 0):
                r = int(act[pos])
                if abs(rhs[pos]) > max(tol_feas, 1e-9 * max(1.0, abs(p.b_eq[r]))):
                    return _Reduced(status="infeasible", bad_row=("eq", r))
                eq_keep[r] = False
                changed = True
            for pos in np.flatnonzero(counts == 1):
                r = int(act[pos])
                j = int(free_idx[np.argmax(abs_eq[r, free_idx])])
                val = rhs[pos] / p.A_eq[r, j]
                if val < lbw[j] - 10 * tol_feas or val > ubw[j] + 10 * tol_feas:
                    return _Reduced(status="infeasible", bad_row=("eq", r))
                lbw[j] = ubw[j] = min(max(val, lbw[j]), ubw[j])
                eq_keep[r] = False
                changed = True

        # inequality rows: drop constants, fold single-variable rows into bounds
        act = np.flatnonzero(in_keep)
        if act.size:
            rhs = p.b_in[act] - (p.A_in[np.ix_(act, fixed_idx)] @ xf[fixed_idx]
                                 if fixed_idx.size else 0.0)
            counts = abs_in[np.ix_(act, free_idx)].sum(axis=1)
            for pos in np.flatnonzero(counts == 0):
                r = int(act[pos])
                if rhs[pos] < -max(tol_feas, 1e-9 * max(1.0, abs(p.b_in[r]))):
                    return _Reduced(status="infeasible", bad_row=("in", r))
                in_keep[r] = False
                changed = True
            for pos in np.flatnonzero(counts == 1):
                r = int(act[pos])
                j = int(free_idx[np.argmax(abs_in[r, free_idx])])
                a = p.A_in[r, j]
                bound = rhs[pos] / a
                if a > 0:
                    if bound < ubw[j] - _PIN_TOL:
                        ubw[j] = bound
                        changed = True
                else:
                    if bound > lbw[j] + _PIN_TOL:
                        lbw[j] = bound
                        changed = True
                in_keep[r] = False
        if not changed:
            break

    free = np.flatnonzero(~fixed_mask)
    nf = free.size
    eq_idx = np.flatnonzero(eq_keep)
    in_idx = np.flatnonzero(in_keep)
    Ae = p.A_eq[np.ix_(eq_idx, free)] if eq_idx.size else np.zeros((0, nf))
    be = (p.b_eq[eq_idx] - p.A_eq[np.ix_(eq_idx, np.flatnonzero(fixed_mask))]
          @ xf[fixed_mask]) if eq_idx.size else np.zeros(0)
    Ai = p.A_in[np.ix_(in_idx, free)] if in_idx.size else np.zeros((0, nf))
    bi = (p.b_in[in_idx] - p.A_in[np.ix_(in_idx, np.flatnonzero(fixed_mask))]
          @ xf[fixed_mask]) if in_idx.size else np.zeros(0)

    if nf == 0:
        return _Reduced(status="ok", free=free, x_fixed=xf, fixed_mask=fixed_mask,
                        lb=np.zeros(0), ub=np.zeros(0),
                        eq_rows=Ae, eq_rhs=be, in_rows=Ai, in_rhs=bi, in_idx=in_idx,
                        x_p=np.zeros(0), Z=np.zeros((0, 0)))

    # equality elimination: particular solution + nullspace via one SVD
    if Ae.shape[0]:
        scale = np.abs(Ae).max(axis=1)
        Aes = Ae / scale[:, None]
        bes = be / scale
        U, sv, Vt = np.linalg.svd(Aes, full_matrices=True)
        cutoff = (sv[0] * max(Aes.shape) * np.finfo(float).eps) if sv.size else 0.0
        rank = int(np.sum(sv > cutoff))
        x_p = Vt[:rank].T @ ((U[:, :rank].T @ bes) / sv[:rank])
        if np.abs(Aes @ x_p - bes).max() > max(tol_feas, 1e-9):
            r = int(np.argmax(np.abs(Aes @ x_p - bes)))
            return _Reduced(status="infeasible", bad_row=("eq", int(eq_idx[r])))
        Z = Vt[rank:].T
    else:
        x_p = np.zeros(nf)
        Z = np.eye(nf)

    return _Reduced(status="ok", free=free, x_fixed=xf, fixed_mask=fixed_mask,
                    lb=lbw[free], ub=ubw[free],
                    eq_rows=Ae, eq_rhs=be, in_rows=Ai, in_rhs=bi, in_idx=in_idx,
                    x_p=x_p, Z=Z)


def _assemble(red: _Reduced, y: np.ndarray) -> np.ndarray:
    x = red.x_fixed.copy()
    if red.free.size:
        x[red.free] = red.x_p + (red.Z @ y if red.Z.shape[1] else 0.0)
    return x


# ---------------------------------------------------------------------------
# Interior-point core: min 0.5 y'Hy + a'y  s.t.  G y <= h
# ---------------------------------------------------------------------------

def _ipm_solve(H, a, G, h, mu_target=1e-9, max_iter=60, start=None):
    """Mehrotra predictor-corrector on ``min 0.5 y'Hy + a'y, G y <= h``.

    Stops once complementarity and residuals reach ``mu_target`` scale;
    exactness is the job of the active-set polish that follows. Returns
    (status, y, lam, s, iterations, hint_row)."""
    n = H.shape[0]
    m = G.shape[0]
    reg = 1e-9 * max(1.0, float(H.diagonal().max(initial=0.0)))
    Hr = H + reg * np.eye(n)
    if m == 0:
        low = cho_factor(Hr, lower=True)
        return "optimal", -cho_solve(low, a), np.zeros(0), np.zeros(0), 0, None, True

    scale_d = max(1.0, float(np.abs(a).max()))
    scale_p = max(1.0, float(np.abs(h).max()))
    if start is None:
        y = np.zeros(n)
        s = np.maximum(h - G @ y, 1.0)
        lam = np.ones(m)
    else:
        y, lam, s = (v.copy() for v in start)
    lam1_0 = max(float(np.abs(lam).sum()), 1.0)
    saw_feasible = False

    it = 0
    for it in range(1, max_iter + 1):
        rd = Hr @ y + a + G.T @ lam
        rp = G @ y + s - h
        mu = float(lam @ s) / m
        if float(np.maximum(G @ y - h, 0.0).max(initial=0.0)) <= 1e-9 * scale_p:
            saw_feasible = True
        if (np.abs(rd).max() <= 1e2 * mu_target * scale_d
                and np.abs(rp).max() <= 1e2 * mu_target * scale_p
                and mu <= mu_target * max(1.0, scale_d)):
            return "optimal", y, lam, s, it, None, saw_feasible

        # Farkas-style certificate of primal infeasibility
        lam1 = float(np.abs(lam).sum())
        if lam1 > 1e7 * lam1_0:
            v = lam / lam1
            if np.abs(G.T @ v).max() <= 1e-6 and h @ v < -1e-8:
                return "infeasible", y, lam, s, it, int(np.argmax(v)), saw_feasible

        W = np.clip(lam / s, 1e-12, 1e12)
        M = Hr + (G.T * W) @ G
        jitter = reg
        while True:
            try:
                low = cho_factor(M, lower=True)
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 100.0, 1e-12 * float(np.abs(M.diagonal()).max()))
                M = M + jitter * np.eye(n)

        # predictor
        rc = lam * s
        dy = cho_solve(low, -rd + G.T @ (rc / s - W * rp))
        ds = -rp - G @ dy
        dl = -(rc / s) - W * ds

        def max_step(v, dv):
            neg = dv < 0
            if not neg.any():
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        alpha_aff = min(max_step(s, ds), max_step(lam, dl))
        mu_aff = float((lam + alpha_aff * dl) @ (s + alpha_aff * ds)) / m
        sigma = min(1.0, max((mu_aff / mu) ** 3, 1e-10))

        # corrector
        rc = lam * s + dl * ds - sigma * mu
        dy = cho_solve(low, -rd + G.T @ (rc / s - W * rp))
        ds = -rp - G @ dy
        dl = -(rc / s) - W * ds

        alpha = 0.995 * min(max_step(s, ds), max_step(lam, dl))
        if alpha <= 1e-12:
            break  # stalled; caller decides via polish / LP check
        y = y + alpha * dy
        s = np.maximum(s + alpha * ds, 1e-300)
        lam = np.maximum(lam + alpha * dl, 1e-300)

    # inconclusive: one last certificate attempt
    lam1 = float(np.abs(lam).sum())
    if lam1 > 0:
        v = lam / lam1
        if np.abs(G.T @ v).max() <= 1e-6 and h @ v < -1e-8:
            return "infeasible", y, lam, s, it, int(np.argmax(v)), saw_feasible
    return "max_iter", y, lam, s, it, None, saw_feasible


def _lp_feasible(G, h) -> bool:
    """Decisive feasibility check for {y : G y <= h} (rare fallback path)."""
    from scipy.optimize import linprog
    n = G.shape[1]
    res = linprog(c=np.zeros(n), A_ub=G, b_ub=h, bounds=[(None, None)] * n,
                  method="highs")
    return res.status != 2


# ---------------------------------------------------------------------------
# Active-set certification on the original data
# ---------------------------------------------------------------------------

def _polish(p: MiqpProblem, red: _Reduced, active_tags, tol_feas, tol_kkt,
            x_ref=None, allow_nnls=True):
    """Certify an active-set guess against the unregularized data.

    The primal point solves the equality-constrained QP on the guessed
    active rows; when that subproblem has a flat optimal face, a tiny
    proximal pull toward ``x_ref`` selects a point on the face near the
    iterate instead of an arbitrary one. Sign-feasible multipliers are then
    recovered by nonnegative least squares (the dual can be non-unique at
    degenerate vertices, so a plain linear solve would false-negative on
    signs). Returns (x_full, scaled_kkt_residual, used_tags) or None.
    """
    free = red.free
    nf = free.size
    fixed_cols = np.flatnonzero(red.fixed_mask)
    xf = red.x_fixed
    Qff = p.Q[np.ix_(free, free)]
    c_f = p.c[free] + (p.Q[np.ix_(free, fixed_cols)] @ xf[fixed_cols]
                       if fixed_cols.size else 0.0)
    col_of = {int(v): k for k, v in enumerate(free)}

    blocks = [red.eq_rows] if red.eq_rows.shape[0] else []
    rhs_blocks = [red.eq_rhs] if red.eq_rows.shape[0] else []
    n_eq = red.eq_rows.shape[0]
    sign = []  # +1: multiplier >= 0 (<=-rows), -1: multiplier <= 0 (lb rows)
    used = []
    for t in active_tags:
        kind, idx = t
        if kind == "in":
            pos = np.flatnonzero(red.in_idx == idx)
            if pos.size == 0:
                continue
            r = int(pos[0])
            blocks.append(red.in_rows[r : r + 1])
            rhs_blocks.append(red.in_rhs[r : r + 1])
            sign.append(+1)
        elif kind in ("lb", "ub"):
            if idx not in col_of:
                continue
            e = np.zeros((1, nf))
            e[0, col_of[idx]] = 1.0
            blocks.append(e)
            rhs_blocks.append(np.array([red.lb[col_of[idx]] if kind == "lb"
                                        else red.ub[col_of[idx]]]))
            sign.append(-1 if kind == "lb" else +1)
        else:
            continue
        used.append(t)
    A_all = np.vstack(blocks) if blocks else np.zeros((0, nf))
    b_all = np.concatenate(rhs_blocks) if rhs_blocks else np.zeros(0)
    sign_all = np.array([0] * n_eq + sign, dtype=int)

    # drop linearly dependent active rows so the KKT matrix stays regular;
    # redundant actives carry no extra information for the primal point
    if A_all.shape[0]:
        Rq = scipy.linalg.qr(A_all.T, mode="r", pivoting=True)
        Rmat, piv = Rq[0], Rq[1]
        diag = np.abs(np.diag(Rmat))
        if diag.size and diag[0] > 0:
            rank = int(np.sum(diag > 1e-11 * diag[0]))
        else:
            rank = 0
        keep = np.sort(piv[:rank])
        A = A_all[keep]
        b = b_all[keep]
        sign_k = sign_all[keep]
    else:
        A, b, sign_k = A_all, b_all, sign_all
        keep = np.arange(0)
    m = A.shape[0]

    # primal: KKT solve of the equality-restricted problem; the proximal
    # variant is nonsingular whenever the kept rows are independent
    prox0 = 1e-8 * max(1.0, float(np.abs(Qff.diagonal()).max(initial=0.0)))

    def kkt_solve(prox):
        K = np.zeros((nf + m, nf + m))
        K[:nf, :nf] = Qff
        if prox > 0:
            K[:nf, :nf] += prox * np.eye(nf)
        K[:nf, nf:] = A.T
        K[nf:, :nf] = A
        top = -c_f if prox == 0 or x_ref is None else -c_f + prox * x_ref[free]
        rhs = np.concatenate([top, b])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(sol)):
            return None
        if np.abs(K @ sol - rhs).max() > 1e-7 * max(1.0, np.abs(rhs).max()):
            return None
        return sol[:nf], sol[nf:]

    def full_feas(x):
        feas = 0.0
        if p.A_eq.shape[0]:
            feas = max(feas, float(np.abs(p.A_eq @ x - p.b_eq).max()))
        if p.A_in.shape[0]:
            feas = max(feas, float(np.maximum(p.A_in @ x - p.b_in, 0.0).max()))
        feas = max(feas, float(np.maximum(p.lb - x, 0.0).max()),
                   float(np.maximum(x - p.ub, 0.0).max()))
        return feas

    scale_p = max(1.0, float(np.abs(p.b_eq).max()) if p.b_eq.size else 1.0,
                  float(np.abs(p.b_in).max()) if p.b_in.size else 1.0)

    out = kkt_solve(0.0)
    x = None
    if out is not None:
        xfree, lam = out
        x = xf.copy()
        x[free] = xfree
        if full_feas(x) > tol_feas * scale_p:
            x = None
    if x is None:
        out = kkt_solve(prox0)
        if out is None:
            return None
        xfree, lam = out
        x = xf.copy()
        x[free] = xfree
        if full_feas(x) > tol_feas * scale_p:
            return None
    feas = full_feas(x)

    grad = Qff @ xfree + c_f
    scale_d = max(1.0, float(np.abs(grad).max()))
    tol_stat = max(tol_kkt, 1e-8) * scale_d

    # dual: -grad must be a signed combination of active normals. The KKT
    # multipliers settle it at nondegenerate vertices; otherwise the dual set
    # is non-unique and an existence check over the full active family
    # (feasibility LP, then nonnegative least squares as arbiter) decides.
    stat = float(np.abs(grad + (A.T @ lam if m else 0.0)).max())
    sign_bad = 0.0
    for k in range(m):
        if sign_k[k] > 0:
            sign_bad = max(sign_bad, -lam[k])
        elif sign_k[k] < 0:
            sign_bad = max(sign_bad, lam[k])
    if m and (stat > tol_stat or sign_bad > 1e-7 * scale_d) and \
            sign_bad <= 1e-4 * scale_d:
        # barely wrong-signed multipliers: clamping them often restores a
        # certificate without the existence LP
        lam_c = lam.copy()
        lam_c[(sign_k > 0) & (lam_c < 0)] = 0.0
        lam_c[(sign_k < 0) & (lam_c > 0)] = 0.0
        stat_c = float(np.abs(grad + A.T @ lam_c).max())
        if stat_c <= tol_stat:
            stat, sign_bad = stat_c, 0.0
    if stat > tol_stat or sign_bad > 1e-7 * scale_d:
        if not allow_nnls:
            return None
        m_all = A_all.shape[0]
        # complementarity: only rows actually tight at x may carry a
        # multiplier (guessed-but-slack rows must stay at zero)
        resid_all = A_all @ xfree - b_all if m_all else np.zeros(0)
        tight = np.abs(resid_all) <= max(tol_feas, 1e-8) * scale_p
        tight[:n_eq] = True
        parts = ([A_all[:n_eq].T, -A_all[:n_eq].T] if n_eq else []) + \
                [sign_all[k] * A_all[k : k + 1].T
                 for k in range(n_eq, m_all) if tight[k]]
        if parts:
            B = np.hstack(parts)
            # seed the passive set from the (clamped) KKT multipliers
            col_of_row = {}
            col = 2 * n_eq
            for k in range(n_eq, m_all):
                if tight[k]:
                    col_of_row[k] = col
                    col += 1
            w0 = np.zeros(B.shape[1])
            for pos, row in enumerate(keep):
                l = lam[pos]
                if row < n_eq:
                    if l >= 0:
                        w0[row] = l
                    else:
                        w0[n_eq + row] = -l
                elif row in col_of_row:
                    w0[col_of_row[row]] = max(sign_all[row] * l, 0.0)
            _, resid = _nnls(B, -grad, w0=w0)
            stat = float(resid)
        else:
            stat = float(np.abs(grad).max())
        if stat > tol_stat:
            return None

    kkt = max(stat / scale_d, feas / scale_p)
    if kkt > max(tol_kkt, 1e-8):
        return None
    return x, kkt, tuple(used)


def _detect_candidates(lam, s, h):
    """Candidate active sets from an interior-point iterate, most plausible
    first."""
    scale = np.maximum(1.0, np.abs(h))
    mu = float(lam @ s) / max(len(s), 1)
    cands = [lam > s]
    if mu > 0:
        cands.append(s <= np.sqrt(mu) * scale)
    for thr in (1e-7, 1e-6, 1e-5):
        cands.append(s <= thr * scale)
    seen = set()
    out = []
    for m in cands:
        key = m.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(m)
    return out


def solve_qp_relaxation(p: MiqpProblem, fixed: dict | None = None,
                        opts: SolverOptions | None = None,
                        warm_active=None, warm_x=None) -> QpSolution:
    """Solve the continuous relaxation of ``p`` with the given binaries fixed.

    Remaining binaries are relaxed to [0, 1]. A returned ``optimal`` status
    is always backed by a KKT certificate on the original problem data;
    ``kkt_residual`` is the scaled max of stationarity, feasibility and
    dual-sign residuals.
    """
    opts = opts or SolverOptions()
    fixed = dict(fixed) if fixed else {}
    if fixed:
        bins = set(p.binary_idx.tolist())
        for j in fixed:
            if j not in bins:
                raise ValueError(f"fixed index {j} is not a binary variable")

    red = _reduce(p, fixed, opts.tol_feas)
    if red.status == "infeasible":
        return QpSolution(x=None, objective=np.inf, status="infeasible",
                          kkt_residual=np.inf, infeasible_row=red.bad_row)

    nf = red.free.size
    if nf == 0 or red.Z.shape[1] == 0:
        x = _assemble(red, np.zeros(red.Z.shape[1] if nf else 0))
        feas = 0.0
        if p.A_in.shape[0]:
            feas = max(feas, float(np.maximum(p.A_in @ x - p.b_in, 0.0).max()))
        if p.A_eq.shape[0]:
            feas = max(feas, float(np.abs(p.A_eq @ x - p.b_eq).max()))
        feas = max(feas, float(np.maximum(p.lb - x, 0.0).max()),
                   float(np.maximum(x - p.ub, 0.0).max()))
        if feas > opts.tol_feas * max(1.0, float(np.abs(x).max())):
            return QpSolution(x=None, objective=np.inf, status="infeasible",
                              kkt_residual=np.inf, infeasible_row=("point", -1))
        return QpSolution(x=x, objective=p.objective_value(x), status="optimal",
                          kkt_residual=feas)

    if warm_active:
        out = _polish(p, red, tuple(warm_active), opts.tol_feas, opts.tol_kkt,
                      x_ref=warm_x)
        if out is not None:
            x, kkt, used = out
            return QpSolution(x=x, objective=p.objective_value(x), status="optimal",
                              kkt_residual=kkt, active_set=used)

    # inequality rows and finite bounds in nullspace coordinates: G y <= h
    Z, x_p = red.Z, red.x_p
    g_rows = [red.in_rows @ Z] if red.in_rows.shape[0] else []
    g_rhs = [red.in_rhs - red.in_rows @ x_p] if red.in_rows.shape[0] else []
    tags = [("in", int(i)) for i in red.in_idx]
    fin_lb = np.isfinite(red.lb)
    fin_ub = np.isfinite(red.ub)
    if fin_lb.any():
        g_rows.append(-Z[fin_lb])
        g_rhs.append(x_p[fin_lb] - red.lb[fin_lb])
        tags += [("lb", int(red.free[k])) for k in np.flatnonzero(fin_lb)]
    if fin_ub.any():
        g_rows.append(Z[fin_ub])
        g_rhs.append(red.ub[fin_ub] - x_p[fin_ub])
        tags += [("ub", int(red.free[k])) for k in np.flatnonzero(fin_ub)]
    if g_rows:
        G = np.vstack(g_rows)
        h = np.concatenate(g_rhs)
    else:
        G = np.zeros((0, Z.shape[1]))
        h = np.zeros(0)
    # normalize rows for the iteration; keep mapping back to original tags
    if G.shape[0]:
        norms = np.abs(G).max(axis=1)
        keep = norms > 1e-13
        bad_const = ~keep & (h < -opts.tol_feas)
        if bad_const.any():
            return QpSolution(x=None, objective=np.inf, status="infeasible",
                              kkt_residual=np.inf,
                              infeasible_row=tags[int(np.flatnonzero(bad_const)[0])])
        G, h = G[keep] / norms[keep, None], h[keep] / norms[keep]
        tags = [t for t, k in zip(tags, keep) if k]

    Qff = p.Q[np.ix_(red.free, red.free)]
    fixed_cols = np.flatnonzero(red.fixed_mask)
    c_f = p.c[red.free] + (p.Q[np.ix_(red.free, fixed_cols)] @ red.x_fixed[fixed_cols]
                           if fixed_cols.size else 0.0)
    H = Z.T @ Qff @ Z
    a = Z.T @ (Qff @ x_p + c_f)

    total_it = 0
    state = None
    feas_seen = False
    for mu_target in (1e-9, 1e-11, 1e-13):
        status, y, lam, s, it, bad, saw_feas = _ipm_solve(
            H, a, G, h, mu_target=mu_target, start=state)
        total_it += it
        state = (y, lam, s)
        feas_seen = feas_seen or saw_feas

        if status == "infeasible":
            # a strong Farkas vector is a proof on its own; weak ones are
            # corroborated with a decisive LP check
            lam1 = float(np.abs(lam).sum())
            v = lam / lam1 if lam1 > 0 else lam
            strong = (float(np.abs(G.T @ v).max(initial=0.0)) * 1e5
                      < -float(h @ v))
            if strong or not _lp_feasible(G, h):
                return QpSolution(x=None, objective=np.inf, status="infeasible",
                                  kkt_residual=np.inf, iterations=total_it,
                                  infeasible_row=tags[bad] if bad is not None else None)
            continue

        x_it = _assemble(red, y)
        masks = _detect_candidates(lam, s, h)
        for allow_nnls in (False, True):
            for mask in masks:
                cand = tuple(tags[i] for i in np.flatnonzero(mask))
                out = _polish(p, red, cand, opts.tol_feas, opts.tol_kkt,
                              x_ref=x_it, allow_nnls=allow_nnls)
                if out is not None:
                    x, kkt, used = out
                    return QpSolution(x=x, objective=p.objective_value(x),
                                      status="optimal", kkt_residual=kkt,
                                      active_set=used, iterations=total_it)

    if not feas_seen and not _lp_feasible(G, h):
        return QpSolution(x=None, objective=np.inf, status="infeasible",
                          kkt_residual=np.inf, iterations=total_it)
    x = _assemble(red, y)
    return QpSolution(x=x, objective=p.objective_value(x), status="max_iter",
                      kkt_residual=np.inf, iterations=total_it)


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------

def _fractionality(x, binary_idx, fixed):
    """(score, var) of the most fractional unfixed binary; score 0 = integral."""
    best_score = 0.0
    best_var = -1
    for j in binary_idx:
        j = int(j)
        if j in fixed:
            continue
        f = abs(x[j] - round(x[j]))
        if f > best_score + 1e-15:
            best_score = f
            best_var = j
    return best_score, best_var


def solve_bnb(p: MiqpProblem, opt: SolverOptions | None = None,
              warm_active=None, warm_x=None) -> BnbResult:
    """Best-bound branch and bound over the binary variables.

    Deterministic: most-fractional branching with lowest-index tie-break,
    FIFO tie-break on equal node bounds; children warm-start from the
    parent's certified active set. ``warm_active``/``warm_x`` seed the root
    relaxation (useful across receding-horizon re-solves).
    """
    opt = opt or SolverOptions()
    t0 = time.perf_counter()
    nodes = 0

    root = solve_qp_relaxation(p, {}, opt, warm_active=warm_active, warm_x=warm_x)
    nodes += 1
    if root.status == "infeasible":
        return BnbResult(incumbent=None, objective=np.inf, gap=np.inf,
                         nodes_explored=nodes, wall_time=time.perf_counter() - t0,
                         status="infeasible")

    def is_integral(sol):
        return sol.x is not None and all(
            abs(sol.x[int(j)] - round(sol.x[int(j)])) <= opt.tol_int
            for j in p.binary_idx)

    if root.status == "optimal" and is_integral(root):
        return BnbResult(incumbent=root.x, objective=root.objective, gap=0.0,
                         nodes_explored=nodes, wall_time=time.perf_counter() - t0,
                         status="optimal", root_active=root.active_set, root_x=root.x)

    incumbent = None
    inc_obj = np.inf
    # rounding heuristic for an initial incumbent
    if p.binary_idx.size:
        rounded = {int(j): int(round(root.x[int(j)])) for j in p.binary_idx}
        h = solve_qp_relaxation(p, rounded, opt, warm_active=root.active_set,
                                warm_x=root.x)
        if h.status == "optimal":
            incumbent, inc_obj = h.x, h.objective

    def dive(start_sol, start_fixed):
        """Fix-and-dive: round the most fractional binary, flipping on
        infeasibility, until an integral point or a dead end. Returns the
        number of relaxations solved."""
        nonlocal incumbent, inc_obj
        fixed = dict(start_fixed)
        sol = start_sol
        solves = 0
        for _ in range(p.binary_idx.size + 1):
            score, var = _fractionality(sol.x, p.binary_idx, fixed)
            if score <= opt.tol_int or var < 0:
                if sol.status == "optimal" and sol.objective < inc_obj:
                    incumbent, inc_obj = sol.x, sol.objective
                return solves
            val0 = int(round(sol.x[var]))
            nxt = None
            for val in (val0, 1 - val0):
                child = solve_qp_relaxation(p, {**fixed, var: val}, opt,
                                            warm_active=sol.active_set,
                                            warm_x=sol.x)
                solves += 1
                if child.status == "optimal":
                    nxt = (val, child)
                    break
            if nxt is None:
                return solves
            fixed[var] = nxt[0]
            sol = nxt[1]
        return solves

    if incumbent is None:
        nodes += dive(root, {})

    # pseudo-cost state: per-variable average objective gain per unit distance
    psc = {0: {}, 1: {}}

    def branch_var(sol, fixed):
        if opt.branching == "most-fractional":
            _, var = _fractionality(sol.x, p.binary_idx, fixed)
            return var
        best_score, best_var = -1.0, -1
        for j in p.binary_idx:
            j = int(j)
            if j in fixed:
                continue
            f = sol.x[j] - np.floor(sol.x[j])
            frac = min(f, 1.0 - f)
            if frac <= opt.tol_int:
                continue
            up, dn = psc[1].get(j), psc[0].get(j)
            if up is None or dn is None:
                score = 1e9 * frac  # explore uninitialized variables first
            else:
                score = max(up * (1.0 - f), 1e-12) * max(dn * f, 1e-12)
            if score > best_score + 1e-15:
                best_score, best_var = score, j
        return best_var

    counter = 0
    # only certified relaxation values are valid lower bounds; an uncertified
    # node inherits -inf (root) or its parent's bound
    root_lb = root.objective if root.status == "optimal" else -np.inf
    heap = [(root_lb, counter, {}, root)]
    counter += 1
    best_bound = root_lb
    status = "optimal"
    last_dive = nodes

    while heap:
        best_bound = heap[0][0]
        if incumbent is not None:
            if inc_obj - best_bound <= opt.mip_gap * max(1.0, abs(inc_obj)):
                break
        if opt.time_limit is not None and time.perf_counter() - t0 > opt.time_limit:
            status = "time_limit"
            break
        if opt.node_limit is not None and nodes >= opt.node_limit:
            status = "node_limit"
            break

        lb, _, fixed, sol = heapq.heappop(heap)
        if incumbent is not None and lb >= inc_obj - max(1e-9, 1e-9 * abs(inc_obj)):
            continue
        if incumbent is None and nodes - last_dive >= 200:
            nodes += dive(sol, fixed)
            last_dive = nodes
        var = branch_var(sol, fixed)
        if var < 0:
            if sol.status == "optimal" and sol.objective < inc_obj:
                incumbent, inc_obj = sol.x, sol.objective
            continue
        f = sol.x[var] - np.floor(sol.x[var])
        for val in (0, 1):
            child_fixed = dict(fixed)
            child_fixed[var] = val
            child = solve_qp_relaxation(p, child_fixed, opt,
                                        warm_active=sol.active_set, warm_x=sol.x)
            nodes += 1
            if child.status == "infeasible":
                continue
            if child.status != "optimal":
                # uncertified: keep exploring under the parent's valid bound,
                # never prune by or accept this node's objective
                heapq.heappush(heap, (lb, counter, child_fixed, child))
                counter += 1
                continue
            dist = (1.0 - f) if val == 1 else f
            if dist > opt.tol_int:
                gain = max(child.objective - sol.objective, 0.0)
                prev = psc[val].get(var)
                est = gain / dist
                psc[val][var] = est if prev is None else 0.5 * (prev + est)
            if is_integral(child):
                if child.objective < inc_obj:
                    incumbent, inc_obj = child.x, child.objective
                continue
            if incumbent is not None and child.objective >= inc_obj - max(
                    1e-9, 1e-9 * abs(inc_obj)):
                continue
            heapq.heappush(heap, (child.objective, counter, child_fixed, child))
            counter += 1

    if not heap:
        best_bound = inc_obj

    if incumbent is None:
        return BnbResult(incumbent=None, objective=np.inf, gap=np.inf,
                         nodes_explored=nodes, wall_time=time.perf_counter() - t0,
                         status="infeasible" if status == "optimal" else status,
                         root_active=root.active_set, root_x=root.x)
    gap = max(0.0, (inc_obj - best_bound) / max(1.0, abs(inc_obj)))
    return BnbResult(incumbent=incumbent, objective=inc_obj, gap=gap,
                     nodes_explored=nodes, wall_time=time.perf_counter() - t0,
                     status=status, root_active=root.active_set, root_x=root.x)


def solve_enumerate(p: MiqpProblem, opt: SolverOptions | None = None,
                    max_binaries: int = 24) -> BnbResult:
    """Exact oracle: one QP solve per binary assignment (2^k of them)."""
    opt = opt or SolverOptions()
    k = int(p.binary_idx.size)
    if k > max_binaries:
        raise ValueError(f"enumeration refused: {k} binaries > limit {max_binaries}")
    t0 = time.perf_counter()
    best_x = None
    best_obj = np.inf
    nodes = 0
    idx = [int(j) for j in p.binary_idx]
    for code in range(2 ** k):
        assign = {idx[i]: (code >> i) & 1 for i in range(k)}
        sol = solve_qp_relaxation(p, assign, opt)
        nodes += 1
        if sol.status == "optimal" and sol.objective < best_obj:
            best_obj = sol.objective
            best_x = sol.x
    if best_x is None:
        return BnbResult(incumbent=None, objective=np.inf, gap=np.inf,
                         nodes_explored=nodes, wall_time=time.perf_counter() - t0,
                         status="infeasible")
    return BnbResult(incumbent=best_x, objective=best_obj, gap=0.0,
                     nodes_explored=nodes, wall_time=time.perf_counter() - t0,
                     status="optimal")


# ---------------------------------------------------------------------------
# Plain-text problem interchange ("MIQP v1")
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return repr(float(v))


def dump_miqp(p: MiqpProblem, path) -> None:
    """Write the problem in the line-oriented ``MIQP v1`` format."""
    lines = ["MIQP v1",
             f"n {p.n} m_eq {p.A_eq.shape[0]} m_in {p.A_in.shape[0]} "
             f"n_binary {p.binary_idx.size}",
             "const0 " + _fmt(p.const0),
             "c " + " ".join(_fmt(v) for v in p.c)]

    def emit_matrix(name, A):
        ii, jj = np.nonzero(A)
        if name == "Q":
            keep = ii <= jj
            ii, jj = ii[keep], jj[keep]
        lines.append(f"{name} {ii.size}")
        for i, j in zip(ii, jj):
            lines.append(f"{i} {j} {_fmt(A[i, j])}")

    emit_matrix("Q", p.Q)
    emit_matrix("A_eq", p.A_eq)
    lines.append("b_eq " + " ".join(_fmt(v) for v in p.b_eq))
    emit_matrix("A_in", p.A_in)
    lines.append("b_in " + " ".join(_fmt(v) for v in p.b_in))
    lines.append("lb " + " ".join(_fmt(v) for v in p.lb))
    lines.append("ub " + " ".join(_fmt(v) for v in p.ub))
    lines.append("binary " + " ".join(str(int(j)) for j in p.binary_idx))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


class MiqpFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def load_miqp(path) -> MiqpProblem:
    """Parse a ``MIQP v1`` file; format errors carry the offending line."""
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(raw):
            raise MiqpFormatError(pos + 1, "unexpected end of file")
        pos += 1
        return raw[pos - 1]

    header = next_line()
    if header != "MIQP v1":
        raise MiqpFormatError(1, f"unsupported header {header!r} (expected 'MIQP v1')")

    def parse_kv(line, lineno, *keys):
        toks = line.split()
        if len(toks) != 2 * len(keys) or toks[::2] != list(keys):
            raise MiqpFormatError(lineno,
                                  f"expected '{' '.join(k + ' <v>' for k in keys)}'")
        return toks[1::2]

    dims = parse_kv(next_line(), pos, "n", "m_eq", "m_in", "n_binary")
    try:
        n, m_eq, m_in, n_bin = (int(v) for v in dims)
    except ValueError:
        raise MiqpFormatError(pos, "dimensions must be integers") from None

    def parse_vec(name, count):
        line = next_line()
        toks = line.split()
        if not toks or toks[0] != name:
            raise MiqpFormatError(pos, f"expected '{name} ...' line")
        if len(toks) != count + 1:
            raise MiqpFormatError(pos, f"{name}: expected {count} values, "
                                       f"got {len(toks) - 1}")
        try:
            return np.array([float(v) for v in toks[1:]])
        except ValueError:
            raise MiqpFormatError(pos, f"{name}: bad float") from None

    const0 = float(parse_vec("const0", 1)[0])
    c = parse_vec("c", n)

    def parse_matrix(name, nrows, ncols, symmetric=False):
        line = next_line()
        toks = line.split()
        if len(toks) != 2 or toks[0] != name:
            raise MiqpFormatError(pos, f"expected '{name} <nnz>' line")
        try:
            nnz = int(toks[1])
        except ValueError:
            raise MiqpFormatError(pos, f"{name}: bad nnz") from None
        A = np.zeros((nrows, ncols))
        for _ in range(nnz):
            t = next_line().split()
            if len(t) != 3:
                raise MiqpFormatError(pos, f"{name}: triplet must be 'i j v'")
            try:
                i, j, v = int(t[0]), int(t[1]), float(t[2])
            except ValueError:
                raise MiqpFormatError(pos, f"{name}: bad triplet") from None
            if not (0 <= i < nrows and 0 <= j < ncols):
                raise MiqpFormatError(pos, f"{name}: index ({i}, {j}) out of range")
            A[i, j] = v
            if symmetric and i != j:
                A[j, i] = v
        return A

    Q = parse_matrix("Q", n, n, symmetric=True)
    A_eq = parse_matrix("A_eq", m_eq, n)
    b_eq = parse_vec("b_eq", m_eq)
    A_in = parse_matrix("A_in", m_in, n)
    b_in = parse_vec("b_in", m_in)
    lb = parse_vec("lb", n)
    ub = parse_vec("ub", n)
    line = next_line()
    toks = line.split()
    if not toks or toks[0] != "binary":
        raise MiqpFormatError(pos, "expected 'binary ...' line")
    if len(toks) != n_bin + 1:
        raise MiqpFormatError(pos, f"binary: expected {n_bin} indices")
    binary_idx = np.array([int(v) for v in toks[1:]], dtype=int)
    prob = MiqpProblem(Q=Q, c=c, const0=const0, A_eq=A_eq, b_eq=b_eq,
                       A_in=A_in, b_in=b_in, lb=lb, ub=ub, binary_idx=binary_idx)
    prob.validate()
    return prob
