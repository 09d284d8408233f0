"""Multilevel hierarchy, hybrid smoothing, V-cycle and PCG driver.

Coarse operators come from Galerkin projection with the constrained edge
prolongator, so the curl null-space identity S @ D = 0 survives on every
level; the per-level check is enforced at build time. Smoothing is the
hybrid edge/node scheme: symmetric Gauss-Seidel on the edge system wrapped
around a nodal correction through the discrete gradient.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .edge_prolongator import EminConfig, build_edge_prolongator
from .sparse_ops import canonical, compress, max_abs

_NULLSPACE_TOL = 1e-10


@dataclass
class SolverConfig:
    """Hierarchy construction knobs."""

    coarse_size: int = 200         # stop once this few coarse edges remain
    max_levels: int = 10
    emin: EminConfig = field(default_factory=EminConfig)


class _TriangularSweeper:
    """Forward/backward Gauss-Seidel through cached triangular factors."""

    def __init__(self, A):
        A = canonical(A)
        d = A.diagonal()
        if np.any(d == 0.0):
            row = int(np.flatnonzero(d == 0.0)[0])
            raise ValueError(f"zero diagonal entry in row {row}")
        self.A = A
        self.lower = canonical(sp.tril(A, format="csr"))
        self.upper = canonical(sp.triu(A, format="csr"))

    def forward(self, x, b):
        r = b - self.A @ x
        x += spsolve_triangular(self.lower, r, lower=True)
        return x

    def backward(self, x, b):
        r = b - self.A @ x
        x += spsolve_triangular(self.upper, r, lower=False)
        return x

    def symmetric(self, x, b, sweeps=1):
        for _ in range(sweeps):
            x = self.forward(x, b)
            x = self.backward(x, b)
        return x


def symmetric_gauss_seidel(A, x, b, sweeps=1):
    """Forward then backward Gauss-Seidel sweeps, in place on x."""
    return _TriangularSweeper(A).symmetric(np.asarray(x, dtype=float),
                                           np.asarray(b, dtype=float),
                                           sweeps)


@dataclass
class Level:
    """One hierarchy level with its smoother workspace."""

    A_e: sp.csr_matrix
    S_e: sp.csr_matrix
    D: sp.csr_matrix
    nodal_aux: sp.csr_matrix
    P_e: sp.csr_matrix = None      # absent on the coarsest level
    P_n: sp.csr_matrix = None
    edge_sweeper: _TriangularSweeper = None
    aux_sweeper: _TriangularSweeper = None
    emin_energy: list = field(default_factory=list)
    subproblem_dims: dict = field(default_factory=dict)
    commutator_residual: float = 0.0
    n_augmented: int = 0

    @property
    def n_edges(self):
        return self.A_e.shape[0]


@dataclass
class Hierarchy:
    levels: list
    coarse_factorization: tuple    # scipy.linalg.lu_factor output
    operator_complexity: float

    @property
    def n_levels(self):
        return len(self.levels)


def _make_level(A_e, S_e, D, **extra):
    nodal_aux = canonical(D.T @ (A_e @ D))
    level = Level(A_e=A_e, S_e=S_e, D=D, nodal_aux=nodal_aux, **extra)
    level.edge_sweeper = _TriangularSweeper(A_e)
    level.aux_sweeper = _TriangularSweeper(nodal_aux)
    return level


def _check_nullspace(S, D, where):
    defect = max_abs(canonical(S @ D))
    scale = max(max_abs(S), 1e-300)
    if defect > _NULLSPACE_TOL * scale:
        raise ValueError(
            f"curl null-space identity violated on {where}: "
            f"max|S D| = {defect:.3e} vs max|S| = {scale:.3e}")


def build_hierarchy(A_e, S_e, A_n, D, cfg=None):
    """Galerkin hierarchy driven by the constrained edge prolongator.

    Coarsening stops at cfg.coarse_size edges or cfg.max_levels levels;
    the coarsest operator is factored densely. Raises when coarsening
    stagnates (fewer than 10% of the edges removed) or the null-space
    identity fails on any level.
    """
    cfg = cfg or SolverConfig()
    A_e, S_e = canonical(A_e), canonical(S_e)
    A_n, D = canonical(A_n), canonical(D)
    _check_nullspace(S_e, D, "the fine level")

    levels = []
    while (A_e.shape[0] > cfg.coarse_size
           and len(levels) < cfg.max_levels - 1):
        prol, cg, nod = build_edge_prolongator(A_n, A_e, S_e, D, cfg.emin)
        P_e, P_n = prol.P_e, nod.P
        n_coarse = cg.n_edges
        if n_coarse == 0:
            break
        if n_coarse >= 0.9 * A_e.shape[0]:
            raise ValueError(
                f"coarsening stagnated: {n_coarse} coarse edges from "
                f"{A_e.shape[0]} fine edges")
        levels.append(_make_level(
            A_e, S_e, D, P_e=P_e, P_n=P_n,
            emin_energy=prol.energy_history,
            subproblem_dims=dict(prol.subproblem_dims),
            commutator_residual=prol.commutator_residual,
            n_augmented=prol.n_augmented))
        A_e = compress(canonical(P_e.T @ (A_e @ P_e)), 0.0)
        S_e = compress(canonical(P_e.T @ (S_e @ P_e)), 0.0)
        A_n = compress(canonical(P_n.T @ (A_n @ P_n)), 0.0)
        D = canonical(cg.D_H)
        _check_nullspace(S_e, D, f"level {len(levels)}")

    levels.append(_make_level(A_e, S_e, D))
    factorization = la.lu_factor(A_e.toarray())
    nnz0 = levels[0].A_e.nnz
    oc = sum(lv.A_e.nnz for lv in levels) / nnz0
    return Hierarchy(levels=levels, coarse_factorization=factorization,
                     operator_complexity=oc)


def hiptmair_smooth(level, x, b):
    """One symmetric hybrid sweep: edge relaxation, nodal correction
    through the gradient, edge relaxation again."""
    x = level.edge_sweeper.symmetric(x, b)
    r = b - level.A_e @ x
    c = np.zeros(level.nodal_aux.shape[0])
    c = level.aux_sweeper.symmetric(c, level.D.T @ r)
    x += level.D @ c
    x = level.edge_sweeper.symmetric(x, b)
    return x


def v_cycle(h, x, b, level=0):
    """Standard V-cycle with hybrid pre/post smoothing and a dense
    coarsest solve."""
    lv = h.levels[level]
    if level == h.n_levels - 1:
        return la.lu_solve(h.coarse_factorization, b)
    x = hiptmair_smooth(lv, x, b)
    r = b - lv.A_e @ x
    rc = lv.P_e.T @ r
    ec = v_cycle(h, np.zeros(rc.size), rc, level + 1)
    x = x + lv.P_e @ ec
    x = hiptmair_smooth(lv, x, b)
    return x


def v_cycle_preconditioner(h):
    """The V-cycle as a fixed symmetric operator b -> V(b)."""
    def apply(b):
        return v_cycle(h, np.zeros(b.size), b)
    return apply


def hiptmair_preconditioner(level):
    """One symmetric hybrid sweep as a stand-alone preconditioner."""
    def apply(b):
        return hiptmair_smooth(level, np.zeros(b.size), b)
    return apply


def fine_level(A_e, S_e, D):
    """Single smoothing level without grid transfers (relaxation-only)."""
    return _make_level(canonical(A_e), canonical(S_e), canonical(D))


@dataclass
class PcgResult:
    x: np.ndarray
    iterations: int
    residual_history: list         # 2-norms, including the initial one
    precond_history: list          # sqrt(r^T z) per accepted iterate
    status: str                    # converged | maxit | stagnated | indefinite
    relative_residual: float


def pcg_solve(A, b, precond, rtol=1e-8, maxit=500):
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops when ||b - A x|| <= rtol ||b||. A breakdown with p^T A p <= 0
    ends with status "indefinite"; two consecutive identical iterates end
    with status "stagnated" (severe ill-conditioning).
    """
    A = canonical(A)
    b = np.asarray(b, dtype=float)
    norm_b = np.linalg.norm(b)
    x = np.zeros(b.size)
    if norm_b == 0.0:
        return PcgResult(x, 0, [0.0], [0.0], "converged", 0.0)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r))]
    precond_history = [float(np.sqrt(max(rz, 0.0)))]
    status = "maxit"
    iters = 0
    for k in range(maxit):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            status = "indefinite"
            break
        alpha = rz / pAp
        x_new = x + alpha * p
        if np.array_equal(x_new, x):
            status = "stagnated"
            iters = k + 1
            history.append(float(np.linalg.norm(b - A @ x_new)))
            precond_history.append(precond_history[-1])
            break
        x = x_new
        r = r - alpha * Ap
        iters = k + 1
        res = float(np.linalg.norm(r))
        history.append(res)
        if res <= rtol * norm_b:
            status = "converged"
            z = precond(r)
            precond_history.append(float(np.sqrt(max(float(r @ z), 0.0))))
            break
        z = precond(r)
        rz_new = float(r @ z)
        precond_history.append(float(np.sqrt(max(rz_new, 0.0))))
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    rel = history[-1] / norm_b
    return PcgResult(x=x, iterations=iters, residual_history=history,
                     precond_history=precond_history, status=status,
                     relative_residual=rel)
