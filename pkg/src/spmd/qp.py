"""Box-constrained dual QP: assembly from features and a coordinate solver.

Each block subproblem minimizes, over v in R^D,

    0.5 v'v + mu1 * var(margins) - mu2 * mean(margins) + (lam/N) * sum hinge_i

with margins t_i z_i'v. Eliminating the slack via Lagrange duality gives

    min_alpha  0.5 alpha' H alpha + g' alpha,   0 <= alpha_i <= lam/N,

with G = Z'Z, Q = (2*mu1/N^2) (N I - t t'), H = T G (I + Q G)^{-1} T,
g = (mu2/N) H e - e, and primal recovery
v = Z (I + Q G)^{-1} T ((mu2/N) e + alpha).

The (I + QG) factorization is computed once per subproblem and reused for
both the H build and the recovery.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

ASYMMETRY_WARN = 1e-6
RIDGE = 1e-10


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 a'Ha + g'a subject to 0 <= a <= upper (elementwise)."""

    H: np.ndarray
    g: np.ndarray
    upper: float

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        g = np.asarray(self.g, dtype=np.float64).ravel()
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("H must be square")
        if g.size != H.shape[0]:
            raise ValueError(f"g has {g.size} entries, H is {H.shape[0]}x{H.shape[0]}")
        if not np.isfinite(H).all() or not np.isfinite(g).all():
            raise ValueError("non-finite entries in QP data")
        if not self.upper > 0:
            raise ValueError(f"upper bound must be positive, got {self.upper}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, alpha: np.ndarray) -> float:
        alpha = np.asarray(alpha, dtype=np.float64)
        return float(0.5 * alpha @ (self.H @ alpha) + self.g @ alpha)


@dataclass(frozen=True)
class QpSolution:
    alpha: np.ndarray
    iterations: int
    kkt_residual: float
    objective: float
    converged: bool
    objective_trace: tuple = field(default=())


class _Factor:
    """LU factorization of (I + QG) with a scaled-ridge retry on near-singularity."""

    def __init__(self, Q: np.ndarray | None, G: np.ndarray):
        self.identity = Q is None
        self.ridge_added = False
        if self.identity:
            return
        A = np.eye(G.shape[0]) + Q @ G
        self._lu = self._factor_checked(A)
        if self._lu is None:
            scale = max(1.0, float(np.abs(A).max()))
            self._lu = self._factor_checked(A + (RIDGE * scale) * np.eye(G.shape[0]))
            self.ridge_added = True
            if self._lu is None:
                cond = np.linalg.cond(A)
                raise np.linalg.LinAlgError(
                    "dual system (I + QG) is singular even after ridge "
                    f"regularization (condition estimate {cond:.3g})"
                )
            warnings.warn(
                "near-singular dual system; added scaled ridge "
                f"{RIDGE * scale:g} to (I + QG)",
                stacklevel=3,
            )

    @staticmethod
    def _factor_checked(A):
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
        d = np.abs(np.diag(lu))
        if d.min() <= 1e-14 * max(1.0, d.max()):
            return None
        return (lu, piv)

    def solve(self, b: np.ndarray, trans: int = 0) -> np.ndarray:
        """Solve (I+QG) x = b, or its transpose system with trans=1."""
        if self.identity:
            return np.asarray(b, dtype=np.float64)
        return scipy.linalg.lu_solve(self._lu, b, trans=trans, check_finite=False)


def regularized_solve(G: np.ndarray, Q: np.ndarray | None, B: np.ndarray) -> np.ndarray:
    """Solve (I + QG) X = B with the ridge-on-near-singularity policy.

    Q may be None (or all zeros) for the identity system. Raises
    LinAlgError with a condition estimate if the system stays singular
    after the ridge retry.
    """
    G = np.asarray(G, dtype=np.float64)
    if Q is not None:
        Q = np.asarray(Q, dtype=np.float64)
        if not np.any(Q):
            Q = None
    fac = _Factor(Q, G)
    return fac.solve(np.asarray(B, dtype=np.float64))


def variance_curvature(labels: np.ndarray, mu1: float) -> np.ndarray:
    """Q = (2*mu1/N^2) (N I - t t'), the margin-variance curvature in the dual."""
    t = np.asarray(labels, dtype=np.float64).ravel()
    n = t.size
    return (2.0 * mu1 / n**2) * (n * np.eye(n) - np.outer(t, t))


def _validate(features, labels, mu1, mu2, lam):
    Z = np.asarray(features, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64).ravel()
    if Z.ndim != 2:
        raise ValueError("features must be a D x N matrix")
    if t.size != Z.shape[1]:
        raise ValueError(f"{Z.shape[1]} feature columns but {t.size} labels")
    if not np.isfinite(Z).all():
        raise ValueError("non-finite feature values")
    if np.any(np.abs(t) != 1.0):
        raise ValueError("labels must be -1 or +1")
    if mu1 < 0 or mu2 < 0:
        raise ValueError("mu1 and mu2 must be nonnegative")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return Z, t


def assemble_dual(features, labels, mu1, mu2, lam):
    """Build the dual QP and a recovery closure sharing one factorization.

    Returns (problem, recover, info) where recover(alpha) gives the primal
    block vector v and info records ridge/asymmetry diagnostics.
    """
    Z, t = _validate(features, labels, mu1, mu2, lam)
    n = t.size
    G = Z.T @ Z
    if mu1 == 0.0:
        fac = _Factor(None, G)
        M = G
    else:
        Q = variance_curvature(t, mu1)
        fac = _Factor(Q, G)
        # G (I+QG)^{-1} = [(I+QG)^{-T} G]^T via the transposed solve
        M = fac.solve(G, trans=1).T
    H = M * np.outer(t, t)
    asym = float(np.abs(H - H.T).max())
    scale = max(1.0, float(np.abs(H).max()))
    if asym > ASYMMETRY_WARN * scale:
        warnings.warn(f"dual matrix asymmetry {asym:g}; symmetrizing", stacklevel=2)
    H = 0.5 * (H + H.T)
    e = np.ones(n)
    g = (mu2 / n) * (H @ e) - e
    problem = QpProblem(H, g, lam / n)

    def recover(alpha: np.ndarray) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=np.float64).ravel()
        y = fac.solve(t * (mu2 / n + alpha))
        return Z @ y

    info = {"ridge_added": fac.ridge_added, "asymmetry": asym}
    return problem, recover, info


def build_dual(features, labels, mu1, mu2, lam) -> QpProblem:
    """Dual QP for one block: H, g and the box bound lam/N."""
    problem, _, _ = assemble_dual(features, labels, mu1, mu2, lam)
    return problem


def recover_primal(features, labels, Q, G, mu2, alpha) -> np.ndarray:
    """Primal block vector v = Z (I+QG)^{-1} T ((mu2/N) e + alpha)."""
    Z = np.asarray(features, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64).ravel()
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    n = t.size
    fac = _Factor(None if Q is None or not np.any(Q) else np.asarray(Q, float),
                  np.asarray(G, dtype=np.float64))
    y = fac.solve(t * (mu2 / n + alpha))
    return Z @ y


def solve_box_qp(problem: QpProblem, tol: float = 1e-8, max_passes: int = 5000,
                 alpha0: np.ndarray | None = None,
                 perm: np.ndarray | None = None) -> QpSolution:
    """Cyclic coordinate descent with exact per-coordinate minimization.

    Coordinates are visited in a fixed permutation every pass. Each visit
    minimizes the quadratic exactly along that coordinate and clips to the
    box; a zero diagonal falls back to the linear rule (move to whichever
    box end decreases the objective). Terminates when the maximum projected
    gradient residual max_i |a_i - clip(a_i - grad_i)| drops to ``tol``.

    Parameters
    ----------
    alpha0 : warm-start point (clipped into the box), zeros by default.
    perm : visit order; defaults to 0..N-1. Pass a seeded permutation for
        run-reproducible schedules.
    """
    H, g, upper = problem.H, problem.g, problem.upper
    n = problem.n
    diag = np.diag(H).copy()
    alpha = np.zeros(n) if alpha0 is None else np.clip(
        np.asarray(alpha0, dtype=np.float64).ravel(), 0.0, upper)
    if alpha.size != n:
        raise ValueError(f"warm start has {alpha.size} entries, need {n}")
    order = np.arange(n) if perm is None else np.asarray(perm, dtype=np.int64)
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError("perm must be a permutation of 0..N-1")

    grad = H @ alpha + g
    trace = []
    residual = np.inf
    converged = False
    passes = 0
    for passes in range(1, max_passes + 1):
        for i in order:
            gi = grad[i]
            hii = diag[i]
            if hii > 0.0:
                new = min(max(alpha[i] - gi / hii, 0.0), upper)
            elif gi > 0.0:
                new = 0.0
            elif gi < 0.0:
                new = upper
            else:
                continue
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                grad += delta * H[i]
        if passes % 32 == 0:
            grad = H @ alpha + g  # shed incremental rounding drift
        trace.append(float(0.5 * alpha @ (grad + g)))
        residual = float(np.abs(alpha - np.clip(alpha - grad, 0.0, upper)).max())
        if residual <= tol:
            converged = True
            break
    grad = H @ alpha + g
    residual = float(np.abs(alpha - np.clip(alpha - grad, 0.0, upper)).max())
    if not converged and residual > tol:
        warnings.warn(
            f"coordinate descent stopped at residual {residual:g} after "
            f"{passes} passes (tol {tol:g})",
            stacklevel=2,
        )
    else:
        converged = True
    alpha.setflags(write=False)
    return QpSolution(alpha, passes, residual, problem.objective(alpha),
                      converged, tuple(trace))
