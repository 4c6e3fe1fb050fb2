"""Small dense continuous solvers: LP feasibility, convex QP, Frank-Wolfe.

Everything here is sized for desk problems (tens of variables, at most a few
thousand rows) and works on dense numpy arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9


class InfeasibleError(RuntimeError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, msg: str, best: np.ndarray | None = None):
        super().__init__(msg)
        self.best = best


@dataclass
class LinearSystem:
    """Rows ``a . x (sense) b`` plus box bounds ``lo <= x <= hi``."""

    rows: list[tuple[np.ndarray, str, float]]
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d arrays of equal length")
        rows = []
        for a, sense, b in self.rows:
            a = np.asarray(a, dtype=float)
            if a.shape != self.lo.shape:
                raise ValueError(f"row of length {a.shape} in a system of {self.n} variables")
            if sense not in ("<=", ">=", "="):
                raise ValueError(f"unknown sense {sense!r}")
            rows.append((a, sense, float(b)))
        self.rows = rows

    @property
    def n(self) -> int:
        return self.lo.shape[0]

    def violation(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        worst = max(0.0, float(np.max(self.lo - x, initial=0.0)),
                    float(np.max(x - self.hi, initial=0.0)))
        for a, sense, b in self.rows:
            act = float(a @ x)
            if sense == "<=":
                worst = max(worst, act - b)
            elif sense == ">=":
                worst = max(worst, b - act)
            else:
                worst = max(worst, abs(act - b))
        return worst

    def as_inequalities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(G, h, A_eq, b_eq) with every inequality and box bound written as G x <= h."""
        G, h, A, b = [], [], [], []
        for a, sense, rhs in self.rows:
            if sense == "<=":
                G.append(a); h.append(rhs)
            elif sense == ">=":
                G.append(-a); h.append(-rhs)
            else:
                A.append(a); b.append(rhs)
        eye = np.eye(self.n)
        for j in range(self.n):
            if np.isfinite(self.lo[j]):
                G.append(-eye[j]); h.append(-self.lo[j])
            if np.isfinite(self.hi[j]):
                G.append(eye[j]); h.append(self.hi[j])
        n = self.n
        return (np.array(G).reshape(-1, n), np.array(h, dtype=float),
                np.array(A).reshape(-1, n), np.array(b, dtype=float))


# ---------------------------------------------------------------------------
# LP feasibility: dense Phase-I simplex
# ---------------------------------------------------------------------------

def lp_feasible(system: LinearSystem, *, rule: str = "dantzig", max_pivots: int = 50_000
                ) -> np.ndarray | None:
    """A point satisfying every row within 1e-9, or None when the system is infeasible.

    Phase-I simplex on a dense tableau.  ``rule="bland"`` uses Bland's rule
    throughout; ``rule="dantzig"`` prices by the most negative reduced cost and
    drops to Bland's rule after a run of degenerate pivots, so termination is
    still guaranteed.
    """
    return phase_one(system, rule=rule, max_pivots=max_pivots)[0]


def phase_one(system: LinearSystem, *, rule: str = "dantzig", max_pivots: int = 50_000
              ) -> tuple[np.ndarray | None, np.ndarray | None]:
    """(point, None) when feasible, (None, y) when not.

    ``y`` is a Farkas certificate over the rows followed by the upper box
    bounds, each written as ``g.x <= h`` (">=" rows negated): y >= 0 on
    inequalities, ``sum y_r g_r >= 0`` componentwise and ``sum y_r h_r < 0``
    with ``h`` measured from the lower box corner.
    """
    n = system.n
    if not (np.all(np.isfinite(system.lo)) and np.all(np.isfinite(system.hi))):
        raise ValueError("lp_feasible needs finite box bounds")
    if np.any(system.hi < system.lo - FEAS_TOL):
        return None, None
    lo = system.lo
    ub = np.maximum(system.hi - lo, 0.0)

    A_rows, senses, rhs = [], [], []
    for a, sense, b in system.rows:
        A_rows.append(a); senses.append(sense); rhs.append(b - float(a @ lo))
    eye = np.eye(n)
    for j in range(n):
        A_rows.append(eye[j]); senses.append("<="); rhs.append(ub[j])
    R = len(A_rows)
    A = np.array(A_rows).reshape(R, n)
    rhs = np.array(rhs, dtype=float)
    flip = rhs < 0
    A[flip] *= -1
    rhs[flip] *= -1
    senses = [{"<=": ">=", ">=": "<=", "=": "="}[s] if f else s for s, f in zip(senses, flip)]

    n_slack = sum(s != "=" for s in senses)
    art_rows = [r for r, s in enumerate(senses) if s != "<="]
    C = n + n_slack + len(art_rows)
    T = np.zeros((R + 1, C + 1))
    T[:R, :n] = A
    T[:R, C] = rhs
    basis = np.empty(R, dtype=int)
    slack_col = np.full(R, -1)
    art_col = np.full(R, -1)
    col = n
    for r, s in enumerate(senses):
        if s == "<=":
            T[r, col] = 1.0
            basis[r] = col
            slack_col[r] = col
            col += 1
        elif s == ">=":
            T[r, col] = -1.0
            slack_col[r] = col
            col += 1
    first_art = col
    for k, r in enumerate(art_rows):
        T[r, first_art + k] = 1.0
        basis[r] = first_art + k
        art_col[r] = first_art + k
    if art_rows:
        T[R, :first_art] = -T[art_rows, :first_art].sum(axis=0)
        T[R, C] = -T[art_rows, C].sum()

    tol = 1e-11
    degenerate_run = 0
    use_bland = rule == "bland"
    for _ in range(max_pivots):
        if -T[R, C] <= FEAS_TOL * 1e-2:
            break
        costs = T[R, :first_art]
        cand = np.flatnonzero(costs < -tol)
        if cand.size == 0:
            break
        if use_bland:
            j = int(cand[0])
        else:
            j = int(cand[np.argmin(costs[cand])])
        colj = T[:R, j]
        pos = np.flatnonzero(colj > tol)
        if pos.size == 0:  # cannot happen in phase I (objective bounded below)
            break
        ratios = T[pos, C] / colj[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(ties[np.argmin(basis[ties])])
        if best <= 1e-12:
            degenerate_run += 1
            if degenerate_run > 50:
                use_bland = True
        else:
            degenerate_run = 0
        _pivot(T, r, j)
        basis[r] = j
    else:
        raise NonConvergenceError("phase-I simplex exceeded its pivot limit")

    if -T[R, C] > FEAS_TOL:
        return None, _farkas(T, senses, flip, slack_col, art_col, system)
    y = np.zeros(C)
    y[basis] = T[:R, C]
    x = lo + np.clip(y[:n], 0.0, ub)
    viol = system.violation(x)
    if viol > FEAS_TOL:
        x = _polish(system, x)
        viol = system.violation(x)
    assert viol <= FEAS_TOL, f"simplex point violates the system by {viol:.3e}"
    return x, None


def _farkas(T, senses, flip, slack_col, art_col, system) -> np.ndarray:
    R = len(senses)
    costs = T[R]
    y = np.zeros(R)
    n_rows = len(system.rows)
    for r in range(R):
        if senses[r] == "<=":
            pi = -costs[slack_col[r]]
        elif senses[r] == ">=":
            pi = costs[slack_col[r]]
        else:
            pi = 1.0 - costs[art_col[r]]
        sign = -1.0 if flip[r] else 1.0
        orig = system.rows[r][1] if r < n_rows else "<="
        y[r] = sign * pi if orig == ">=" else -sign * pi
    return y


def _pivot(T: np.ndarray, r: int, j: int) -> None:
    T[r] /= T[r, j]
    colj = T[:, j].copy()
    colj[r] = 0.0
    T -= np.outer(colj, T[r])


def _polish(system: LinearSystem, x: np.ndarray) -> np.ndarray:
    """Pull a nearly-feasible simplex point the last ulp inside by a tiny scaling toward lo."""
    best = x
    for shrink in (1e-12, 1e-10, 1e-9):
        cand = np.clip(x - shrink * np.sign(x - system.lo), system.lo, system.hi)
        if system.violation(cand) < system.violation(best):
            best = cand
    return best


# ---------------------------------------------------------------------------
# Convex QP: primal active-set method
# ---------------------------------------------------------------------------

@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    iterations: int
    active: list[int] = field(default_factory=list)
    multipliers: np.ndarray | None = None


def solve_box_qp(Q, c, system: LinearSystem, *, x0: np.ndarray | None = None,
                 max_iter: int = 10_000, tol: float = 1e-9) -> QPResult:
    """Minimize ``0.5 x'Qx + c'x`` over ``system`` for a positive semidefinite Q.

    Primal active-set method started from a feasible point (phase-I simplex
    unless ``x0`` is given).  Steps are computed in the null space of the
    working rows, so the working set stays linearly independent, and a
    singular reduced Hessian is handled by following a zero-curvature
    descent ray up to the first blocking row.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    c = np.asarray(c, dtype=float)
    n = system.n
    if Q.shape != (n, n) or c.shape != (n,):
        raise ValueError("objective dimensions do not match the system")
    G, h, Aeq, beq = system.as_inequalities()
    if x0 is None:
        x0 = lp_feasible(system)
        if x0 is None:
            raise InfeasibleError("QP constraints are infeasible")
    x = np.asarray(x0, dtype=float).copy()
    work: list[int] = []
    n_eq = Aeq.shape[0]
    qscale = 1.0 + np.abs(Q).max(initial=0.0)

    def objective(z):
        return float(0.5 * z @ Q @ z + c @ z)

    for it in range(1, max_iter + 1):
        g = Q @ x + c
        Aw = np.vstack([Aeq, G[work]]) if work else Aeq
        Z = _null_space(Aw, n)
        p = np.zeros(n)
        ray = False
        if Z.shape[1]:
            H = Z.T @ Q @ Z
            gz = Z.T @ g
            evals, U = np.linalg.eigh(0.5 * (H + H.T))
            coef = U.T @ gz
            flat = evals <= 1e-10 * qscale
            gscale = 1.0 + np.abs(g).max(initial=0.0)
            if np.any(flat & (np.abs(coef) > 1e-10 * gscale)):
                p = -Z @ (U[:, flat] @ coef[flat])
                ray = True
            else:
                step = np.where(flat, 0.0, coef / np.where(flat, 1.0, evals))
                p = -Z @ (U @ step)
        if not ray and np.linalg.norm(p) <= 1e-10 * (1.0 + np.linalg.norm(x)):
            if not work:
                return QPResult(x, objective(x), it, [], np.zeros(n_eq))
            lam, *_ = np.linalg.lstsq(Aw.T, -g, rcond=None)
            lam_in = lam[n_eq:]
            if lam_in.min() >= -tol * (1.0 + np.abs(g).max(initial=0.0)):
                return QPResult(x, objective(x), it, sorted(work), lam)
            work.pop(int(np.argmin(lam_in)))
            continue
        step = _ratio_test(G, h, x, p, work)
        if ray:
            if step is None:
                raise NonConvergenceError("QP is unbounded below", x)
            x = x + step[0] * p
            work.append(step[1])
        elif step is None or step[0] >= 1.0:
            x = x + p
        else:
            x = x + step[0] * p
            work.append(step[1])
    raise NonConvergenceError(f"active-set QP did not converge in {max_iter} iterations", x)


def _null_space(A: np.ndarray, n: int) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(A)
    rank = int((s > 1e-10 * max(1.0, s.max(initial=0.0))).sum())
    return vt[rank:].T


def _ratio_test(G, h, x, p, work) -> tuple[float, int] | None:
    Gp = G @ p
    slack = np.maximum(h - G @ x, 0.0)
    mask = Gp > 1e-12 * np.linalg.norm(G, axis=1) * np.linalg.norm(p)
    if work:
        mask[work] = False
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    ratios = slack[idx] / Gp[idx]
    k = int(np.argmin(ratios))
    return float(ratios[k]), int(idx[k])


# ---------------------------------------------------------------------------
# Frank-Wolfe over a convex hull of points
# ---------------------------------------------------------------------------

@dataclass
class FWResult:
    coeffs: np.ndarray
    point: np.ndarray
    gap: float
    iterations: int
    values: list[float]


def frank_wolfe(points, scales, *, max_iter: int = 5000, tol: float = 1e-8) -> FWResult:
    """Minimize ``0.25 * sum(scales * g**2)`` over ``g`` in conv(points).

    Fully corrective Frank-Wolfe (Wolfe's minimum-norm-point method): each
    outer step adds the vertex minimizing the linearized potential, then the
    inner loop re-optimizes exactly over the affine hull of the kept vertices,
    dropping vertices whose weight would turn negative.  Stops when the
    Frank-Wolfe duality gap drops below ``tol`` or after ``max_iter`` outer
    steps.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("frank_wolfe needs at least one point")
    s = np.asarray(scales, dtype=float)
    # in these coordinates the potential is the squared Euclidean norm
    Y = P * np.sqrt(0.25 * s)
    norms = np.einsum("ij,ij->i", Y, Y)
    start = int(np.argmin(norms))
    lam = np.zeros(P.shape[0])
    lam[start] = 1.0
    support = [start]
    x = Y[start].copy()
    values = [float(x @ x)]
    gap = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        scores = Y @ x
        j = int(np.argmin(scores))
        gap = 2.0 * (float(x @ x) - float(scores[j]))
        if gap <= tol or j in support:
            break
        support.append(j)
        while True:
            mu = _affine_min_norm(Y[support])
            if np.all(mu > 1e-14):
                lam[:] = 0.0
                lam[support] = mu
                break
            cur = lam[support]
            neg = mu <= 1e-14
            theta = min(1.0, float(np.min(cur[neg] / (cur[neg] - mu[neg]))))
            mixed = cur + theta * (mu - cur)
            keep = mixed > 1e-14
            lam[:] = 0.0
            lam[np.asarray(support)[keep]] = mixed[keep]
            support = [k for k, kp in zip(support, keep) if kp]
            if len(support) == 1:
                lam[support[0]] = 1.0
                break
        lam /= lam.sum()
        x = lam @ Y
        values.append(min(float(x @ x), values[-1]))
    return FWResult(lam, lam @ P, float(max(gap, 0.0)), it, values)


def _affine_min_norm(Ys: np.ndarray) -> np.ndarray:
    """Weights summing to one that minimize the norm of their combination of the rows of Ys."""
    k = Ys.shape[0]
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = Ys @ Ys.T
    K[:k, k] = K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:k]
