"""Learning surrogate weights from labeled sub-solutions.

Two separators are provided.  ``svm_separate`` solves a hard-margin
max-margin quadratic program over nonnegative weights.  ``sep_separate``
minimizes a scaled quadratic potential over the convex hull of the valid
inequalities known so far and reads the weights off the gradient.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Bits, WeightDomain, maximal, minimal
from .solvers import (FWResult, InfeasibleError, LinearSystem, frank_wolfe,
                      lp_feasible, solve_box_qp)

log = logging.getLogger(__name__)

SEPARATORS = ("svm", "sep")
DEGENERATE_GRAD = 1e-10
BETA_CAP_LIMIT = 1e12


class NotSeparable(RuntimeError):
    """Labeled pools admit no nonnegative separating hyperplane: labels are inconsistent."""


@dataclass
class Separation:
    w_hat: np.ndarray
    beta: float | None = None
    misclassified: int = 0
    degenerate: bool = False
    fw: FWResult | None = None


def misclassified(w: np.ndarray, positives: Sequence[Bits], negatives: Sequence[Bits],
                  tol: float = 1e-9) -> int:
    bad = sum(1 for s in positives if float(np.dot(w, s)) > 1 + tol)
    return bad + sum(1 for s in negatives if float(np.dot(w, s)) < 1 - tol)


def project_to_domain(w: np.ndarray, domain: WeightDomain) -> np.ndarray:
    """Clamp to the unit box, then Euclidean-project onto the extra rows if still outside."""
    w = np.clip(np.asarray(w, dtype=float), 0.0, 1.0)
    if domain.contains(w):
        return w
    system = LinearSystem([(a, "<=", b) for a, b in domain.extra_rows],
                          np.zeros(domain.n), np.ones(domain.n))
    return np.clip(solve_box_qp(np.eye(domain.n), -w, system).x, 0.0, 1.0)


# ---------------------------------------------------------------------------
# hard-margin SVM
# ---------------------------------------------------------------------------

def svm_system(n: int, positives: Sequence[Bits], negatives: Sequence[Bits],
               beta_cap: float) -> LinearSystem:
    """Constraints on (omega, beta): margins of at least 1 on both sides, omega_j <= beta."""
    rows = []
    for s in positives:
        rows.append((np.append(np.asarray(s, dtype=float), -1.0), "<=", -1.0))
    for s in negatives:
        rows.append((np.append(np.asarray(s, dtype=float), -1.0), ">=", 1.0))
    for j in range(n):
        a = np.zeros(n + 1)
        a[j], a[n] = 1.0, -1.0
        rows.append((a, "<=", 0.0))
    lo = np.append(np.zeros(n), 1.0)
    hi = np.append(np.full(n, beta_cap), beta_cap)
    return LinearSystem(rows, lo, hi)


def beta_interval(omega: np.ndarray, positives: Sequence[Bits], negatives: Sequence[Bits]
                  ) -> tuple[float, float]:
    lo = max([1.0, float(omega.max(initial=0.0))]
             + [1.0 + float(omega @ np.asarray(s, dtype=float)) for s in positives])
    hi = min([math.inf] + [float(omega @ np.asarray(s, dtype=float)) - 1.0 for s in negatives])
    return lo, hi


def svm_separate(domain: WeightDomain, positives: Sequence[Bits], negatives: Sequence[Bits],
                 ) -> Separation:
    """Max-margin nonnegative separator, returned as omega/beta.

    Only the maximal feasible and minimal infeasible points matter because
    the weights are nonnegative, so the QP is built from those.  The objective
    ignores beta, so after solving we pick beta inside its feasible interval
    for the optimal omega: the lower end when no infeasible point is known,
    otherwise the midpoint.
    """
    n = domain.n
    pos = maximal(positives) if positives else [(0,) * n]
    neg = minimal(negatives)
    Q = np.zeros((n + 1, n + 1))
    Q[:n, :n] = 2.0 * np.eye(n)
    # beta is unbounded in the model; nearly tight labels need a large scale, so the
    # box only grows when the smaller one is infeasible
    cap = 4.0 * (n + 2) ** 2
    while True:
        try:
            res = solve_box_qp(Q, np.zeros(n + 1), svm_system(n, pos, neg, cap))
            break
        except InfeasibleError as exc:
            if cap >= BETA_CAP_LIMIT:
                raise NotSeparable("labeled pools are not linearly separable "
                                   "by nonnegative weights") from exc
            cap *= 64.0
    omega = np.maximum(res.x[:n], 0.0)
    lo, hi = beta_interval(omega, pos, neg)
    if hi < lo - 1e-7:
        # round-off left omega marginally outside; fall back to the solver's beta
        beta = float(res.x[n])
    else:
        beta = lo if math.isinf(hi) else 0.5 * (lo + max(hi, lo))
    w = omega / beta
    w = project_to_domain(w, domain)
    return Separation(w, beta, misclassified(w, positives, negatives))


# ---------------------------------------------------------------------------
# potential-based separator
# ---------------------------------------------------------------------------

def dual_norm(a: np.ndarray, b: float, radius: float) -> float:
    return float(np.linalg.norm(np.append(radius * np.asarray(a, dtype=float), b))) / math.sqrt(2)


def inequality_points(domain: WeightDomain, positives: Sequence[Bits],
                      negatives: Sequence[Bits]) -> np.ndarray:
    """Valid inequalities (a, b) for the version space, each scaled to unit dual norm."""
    n = domain.n
    radius = math.sqrt(n)
    raw = [(np.asarray(a, dtype=float), float(b)) for a, b in domain.extra_rows]
    raw += [(np.asarray(s, dtype=float), 1.0) for s in positives]
    raw += [(-np.asarray(s, dtype=float), -1.0) for s in negatives]
    pts = []
    for a, b in raw:
        norm = dual_norm(a, b, radius)
        if norm > 0:
            pts.append(np.append(a, b) / norm)
    return np.array(pts).reshape(-1, n + 1)


def sep_separate(domain: WeightDomain, positives: Sequence[Bits], negatives: Sequence[Bits],
                 previous: np.ndarray | None = None, *, max_iter: int = 5000,
                 tol: float = 1e-8) -> Separation:
    n = domain.n
    radius = math.sqrt(n)
    scales = np.append(np.full(n, radius ** 2), 1.0)
    pts = inequality_points(domain, positives, negatives)
    if pts.shape[0] == 0:
        pts = np.append(np.zeros(n), math.sqrt(2))[None, :]
    fw = frank_wolfe(pts, scales, max_iter=max_iter, tol=tol)
    grad = 0.5 * scales * fw.point
    if abs(grad[n]) < DEGENERATE_GRAD:
        log.info("potential gradient has no weight component; keeping previous weights")
        w = np.zeros(n) if previous is None else np.asarray(previous, dtype=float)
        w = project_to_domain(w, domain)
        return Separation(w, None, misclassified(w, positives, negatives), True, fw)
    w = project_to_domain(-grad[:n] / grad[n], domain)
    bad = misclassified(w, positives, negatives)
    if bad:
        log.debug("potential separator misclassifies %d labeled points", bad)
    return Separation(w, None, bad, False, fw)


def separate(kind: str, domain: WeightDomain, positives, negatives,
             previous: np.ndarray | None = None) -> Separation:
    if kind == "svm":
        return svm_separate(domain, positives, negatives)
    if kind == "sep":
        return sep_separate(domain, positives, negatives, previous)
    raise ValueError(f"unknown separator {kind!r}")
