"""Smoothed-aggregation setup for the auxiliary nodal problem.

Produces the nodal grid transfer used both to coarsen the nodal operator
and as the right-hand factor of the commutator constraint. Every returned
prolongator has rows scaled to sum exactly to one, which keeps the
commutator right-hand side consistent on every level.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse_ops import canonical


@dataclass
class Aggregation:
    """Partition of fine nodes into aggregates (coarse nodes)."""

    n_fine: int
    n_agg: int
    membership: np.ndarray   # aggregate id per fine node


@dataclass
class NodalProlongator:
    P: sp.csr_matrix
    omega_used: float
    rho_estimate: float


def strength_graph(A_n, drop_tol):
    """Symmetric strength-of-connection pattern.

    Keeps entry (i, j) when |a_ij| > drop_tol * sqrt(a_ii * a_jj), plus the
    full diagonal. With drop_tol = 0 this is the whole off-diagonal pattern.
    """
    A = canonical(A_n)
    d = A.diagonal()
    if np.any(d <= 0):
        row = int(np.flatnonzero(d <= 0)[0])
        raise ValueError(f"nonpositive diagonal entry in row {row}")
    C = A.tocoo()
    thresh = drop_tol * np.sqrt(d[C.row] * d[C.col])
    keep = np.abs(C.data) > thresh
    rows = np.concatenate([C.row[keep], np.arange(A.shape[0])])
    cols = np.concatenate([C.col[keep], np.arange(A.shape[0])])
    pattern = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=A.shape)
    pattern = canonical(pattern)
    pattern.data[:] = 1.0
    # symmetrize the pattern (strength criterion is symmetric for
    # symmetric A, but guard against stored-entry asymmetry)
    pattern = canonical(pattern + pattern.T)
    pattern.data[:] = 1.0
    return pattern


def aggregate(strength):
    """Greedy root aggregation over a symmetric strength pattern.

    Phase 1 walks nodes in order and seeds a new aggregate from every
    neighborhood that is still fully unaggregated. Phase 2 attaches each
    leftover node to the adjacent aggregate it has the most connections
    to, lowest aggregate id on ties.
    """
    S = canonical(strength)
    n = S.shape[0]
    indptr, indices = S.indptr, S.indices
    membership = np.full(n, -1, dtype=np.int64)
    n_agg = 0
    for i in range(n):
        if membership[i] >= 0:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        if np.all(membership[nbrs] < 0):
            membership[nbrs] = n_agg
            membership[i] = n_agg
            n_agg += 1
    for i in range(n):
        if membership[i] >= 0:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        owners = membership[nbrs]
        owners = owners[(owners >= 0) & (nbrs != i)]
        counts = np.bincount(owners, minlength=n_agg)
        membership[i] = int(np.argmax(counts))
    return Aggregation(n_fine=n, n_agg=n_agg, membership=membership)


def tentative_prolongator(agg):
    """Piecewise constant transfer: one unit entry per row."""
    rows = np.arange(agg.n_fine)
    return canonical(sp.coo_matrix(
        (np.ones(agg.n_fine), (rows, agg.membership)),
        shape=(agg.n_fine, agg.n_agg)))


def estimate_rho(A_scaled, iterations=10):
    """Power-method estimate of the spectral radius of a scaled operator.

    The start vector is deterministic: ones plus a small index-based
    perturbation to break symmetry.
    """
    n = A_scaled.shape[0]
    v = 1.0 + 0.01 * np.sin(np.arange(n, dtype=np.float64))
    v /= np.linalg.norm(v)
    rho = 1.0
    for _ in range(iterations):
        w = A_scaled @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        rho = norm
        v = w / norm
    return float(rho)


def normalize_rows(P):
    """Scale every row so its sum is exactly one.

    Raises
    ------
    ValueError
        If some row sum vanishes (the row is named in the message).
    """
    P = canonical(P)
    sums = np.asarray(P.sum(axis=1)).ravel()
    scale_tol = 1e-13 * np.maximum(
        1.0, np.asarray(abs(P).sum(axis=1)).ravel())
    bad = np.flatnonzero(np.abs(sums) <= scale_tol)
    if bad.size:
        raise ValueError(f"zero row sum before scaling in row {bad[0]}")
    out = sp.diags(1.0 / sums) @ P
    return canonical(out)


def smooth_and_normalize(A_n, P_tent):
    """Damped-Jacobi prolongator smoothing followed by row normalization.

    P = (I - omega * diag(A_n)^-1 A_n) P_tent with omega = 4 / (3 rho),
    rho estimated by ten power iterations on the diagonally scaled matrix.
    """
    A = canonical(A_n)
    if A.shape[1] != P_tent.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {P_tent.shape}")
    d = A.diagonal()
    if np.any(d == 0):
        raise ValueError("zero diagonal in nodal operator")
    Dinv_A = sp.diags(1.0 / d) @ A
    rho = estimate_rho(Dinv_A)
    omega = 4.0 / (3.0 * rho)
    P = canonical(P_tent - omega * (Dinv_A @ P_tent))
    P = normalize_rows(P)
    return NodalProlongator(P=P, omega_used=omega, rho_estimate=rho)
