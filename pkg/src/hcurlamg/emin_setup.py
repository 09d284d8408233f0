"""Per-edge commutator subproblems for the constrained prolongator solve.

For every fine edge the commutator equation pins its prolongator row
through a small signed-incidence submatrix of the coarse gradient. This
module builds the edge prolongator sparsity pattern, repairs coarse-edge
subgraphs that are not connected (appending coarse edges where needed),
and QR-factors each subproblem for least-norm constraint solves.

All pattern arithmetic runs on 0/1 indicator matrices whose products are
small exact integers, so the pattern test (entry equal to 2) is exact.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import coarse_gradient as cgrad
from .sparse_ops import abs_matrix, canonical, indicator

_RANK_TOL = 1e-10


@dataclass
class ConstraintSubproblem:
    """One fine-edge commutator block and its least-norm factors."""

    fine_edge: int
    coarse_edges: np.ndarray      # pattern of this prolongator row
    coarse_nodes: np.ndarray      # coarse nodes seen by the fine edge
    G: np.ndarray                 # dense signed incidence |I| x |J|
    Q: np.ndarray = None          # n_p x k
    R: np.ndarray = None          # k x k
    rank: int = 0
    has_dirichlet_edge: bool = False
    lsq: np.ndarray = None        # Q @ R^-T, applies the least-norm solve
    gt_ones: np.ndarray = None    # G^T @ ones, cached for initial guesses


@dataclass
class PatternBundle:
    """Pattern matrices of one setup pass."""

    T: sp.csr_matrix              # fine edge x coarse node
    Wdiag: np.ndarray             # fine-edge weights: 2 if one endpoint
    B: sp.csr_matrix              # fine edge x coarse edge counts
    N: sp.csr_matrix              # initial prolongator pattern
    coarse_weight: np.ndarray     # coarse-edge weights: 2 if one endpoint


@dataclass
class EminSetup:
    """Everything the energy-minimization solve needs, row by row."""

    bundle: PatternBundle
    cg: cgrad.CoarseGradient
    rows: list                    # ConstraintSubproblem or None per fine edge
    R_dp: sp.csr_matrix           # commutator right-hand side D_h @ P_n
    n_augmented: int = 0


def compute_pattern(D_h, P_n, D_H):
    """Pattern matrices T, W, B, N of the setup pass.

    N keeps coarse edge j for fine edge i exactly when both endpoints of j
    (its one endpoint, counted double, for single-node edges) appear among
    the coarse nodes interpolating to i's endpoints.
    """
    D_h = canonical(D_h)
    row_nnz = np.diff(D_h.indptr)
    if np.any((row_nnz < 1) | (row_nnz > 2)):
        bad = int(np.flatnonzero((row_nnz < 1) | (row_nnz > 2))[0])
        raise ValueError(f"malformed gradient: row {bad} has "
                         f"{row_nnz[bad]} nonzeros")
    Wdiag = (3 - row_nnz).astype(np.float64)

    T = indicator(abs_matrix(D_h) @ abs_matrix(P_n))
    coarse_nnz = np.diff(canonical(D_H).indptr)
    coarse_weight = (3 - coarse_nnz).astype(np.float64)
    B = canonical((T @ indicator(D_H).T) @ sp.diags(coarse_weight))
    N = B.copy()
    N.data = np.where(B.data == 2.0, 1.0, 0.0)
    N.eliminate_zeros()
    return PatternBundle(T=T, Wdiag=Wdiag, B=B, N=canonical(N),
                         coarse_weight=coarse_weight)


def _dense_block(indptr, indices, data, I, J):
    """Dense signed incidence of coarse-edge rows I on coarse nodes J."""
    G = np.zeros((len(I), len(J)))
    for r, e in enumerate(I):
        sl = slice(indptr[e], indptr[e + 1])
        pos = np.searchsorted(J, indices[sl])
        if np.any(pos >= J.size) or np.any(J[pos] != indices[sl]):
            raise ValueError(
                f"coarse edge {e} touches nodes outside the row pattern")
        G[r, pos] = data[sl]
    return G


def extract_subproblem(bundle, cg, fine_edge, extra_edges=()):
    """Constraint block of one fine edge.

    ``extra_edges`` lists coarse-edge ids appended after the pattern pass;
    each one joins the block when both its endpoints lie in the row's
    coarse-node set.
    """
    D_H = canonical(cg.D_H)
    return _extract(bundle, cg, D_H.indptr, D_H.indices, D_H.data,
                    3 - np.diff(D_H.indptr), fine_edge, extra_edges)


def _extract(bundle, cg, indptr, indices, data, weights, fine_edge,
             extra_edges=()):
    N, T = bundle.N, bundle.T
    I = N.indices[N.indptr[fine_edge]:N.indptr[fine_edge + 1]]
    J = T.indices[T.indptr[fine_edge]:T.indptr[fine_edge + 1]]
    if extra_edges:
        Jset = set(J.tolist())
        add = [e for e in extra_edges
               if all(n in Jset for n in cg.edge_endpoints[e])]
        if add:
            I = np.unique(np.concatenate(
                [I, np.asarray(add, dtype=np.int64)]))
    if I.size == 0 or J.size == 0:
        raise ValueError(f"fine edge {fine_edge} has an empty constraint "
                         "pattern (isolated edge or pattern bug)")
    G = _dense_block(indptr, indices, data, I, J)
    return ConstraintSubproblem(
        fine_edge=int(fine_edge), coarse_edges=I, coarse_nodes=J, G=G,
        has_dirichlet_edge=bool(np.any(weights[I] == 2)))


def _empty_shell(bundle, fine_edge):
    """Subproblem for a row with a nonzero rhs but no pattern edges."""
    T = bundle.T
    J = T.indices[T.indptr[fine_edge]:T.indptr[fine_edge + 1]]
    if J.size == 0:
        raise ValueError(f"fine edge {fine_edge} has an empty constraint "
                         "pattern (isolated edge or pattern bug)")
    if J.size == 1:
        raise ValueError(
            f"fine edge {fine_edge}: nonzero commutator row over a single "
            "coarse node cannot be satisfied by interior coarse edges")
    return ConstraintSubproblem(
        fine_edge=int(fine_edge), coarse_edges=np.zeros(0, dtype=np.int64),
        coarse_nodes=J, G=np.zeros((0, J.size)), has_dirichlet_edge=False)


def _components(G):
    """Connected components of the column graph. Rows with two nonzeros
    act as edges; single-nonzero rows only mark incidence."""
    ncols = G.shape[1]
    parent = list(range(ncols))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    incident = np.zeros(ncols, dtype=bool)
    for r in range(G.shape[0]):
        cols = np.flatnonzero(G[r])
        incident[cols] = True
        if cols.size == 2:
            ra, rb = find(int(cols[0])), find(int(cols[1]))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(c) for c in range(ncols)])
    return roots, incident


def check_irreducible(G):
    """True when the coarse-edge subgraph is connected and every coarse
    node has at least one incident coarse edge."""
    if G.shape[1] == 0:
        return False
    roots, incident = _components(G)
    return bool(np.all(incident) and np.unique(roots).size == 1)


def make_irreducible(sub, cg, R_dp_csc):
    """Connect the subproblem's coarse-node graph by appending coarse edges.

    Candidate pairs bridge two components; each is scored by the magnitude
    of the matching entry of the projected nodal operator, evaluated as a
    dot product of two columns of D_h @ P_n (the full projected operator is
    never formed). Highest score wins; ties and all-zero scores fall back
    to the lexicographically smallest pair. Never fails on a splittable
    graph: some bridging pair always exists.
    """
    J = sub.coarse_nodes
    while not check_irreducible(sub.G):
        roots, _ = _components(sub.G)
        if np.unique(roots).size <= 1:
            raise ValueError(
                f"fine edge {sub.fine_edge}: cannot repair a single-node "
                "constraint graph")
        best = None
        for ai in range(J.size):
            for bi in range(ai + 1, J.size):
                if roots[ai] == roots[bi]:
                    continue
                a, b = int(J[ai]), int(J[bi])
                dot = (R_dp_csc[:, a].T @ R_dp_csc[:, b]).toarray()
                score = abs(float(dot)) if dot.size else 0.0
                key = (-score, a, b)
                if best is None or key < best:
                    best = key
        _, a, b = best
        cg = cgrad.append_edge(cg, a, b)
        sub.coarse_edges = np.append(sub.coarse_edges, cg.n_edges - 1)
        D_H = canonical(cg.D_H)
        sub.G = _dense_block(D_H.indptr, D_H.indices, D_H.data,
                             sub.coarse_edges, J)
    return sub, cg


def factor_subproblem(sub):
    """Householder QR of the constraint block, truncated to known rank.

    Without a single-node (Dirichlet) coarse edge the block's column rank
    is one less than its column count, so the trailing QR column is
    dropped; with one present the block has full column rank.
    """
    G = sub.G
    n_p, nJ = G.shape
    Q, R = np.linalg.qr(G)
    expected = nJ if sub.has_dirichlet_edge else nJ - 1
    diag = np.abs(np.diag(R))
    scale = diag[0] if diag.size else 0.0
    if expected < 1 or expected > diag.size or scale == 0.0 or np.any(
            diag[:expected] < _RANK_TOL * scale):
        raise ValueError(
            f"fine edge {sub.fine_edge}: numerical rank below the expected "
            f"{expected} (topology bug)")
    if diag.size > expected and diag[expected] >= _RANK_TOL * scale:
        raise ValueError(
            f"fine edge {sub.fine_edge}: constraint block rank exceeds the "
            f"expected {expected} (topology bug)")
    k = expected
    sub.Q = np.ascontiguousarray(Q[:, :k])
    sub.R = np.ascontiguousarray(R[:k, :k])
    sub.rank = k
    sub.lsq = sub.Q @ np.linalg.inv(sub.R).T
    sub.gt_ones = G.T @ np.ones(n_p)
    return sub


def least_norm_solve(sub, rhs_on_J):
    """Minimum-norm p with G^T p = rhs, rhs given densely over J."""
    return sub.lsq @ rhs_on_J[:sub.rank]


def setup_constraints(D_h, P_n, cg, R_dp=None):
    """Full per-edge setup: pattern, irreducibility repair, QR factors.

    Returns an EminSetup whose ``rows`` holds one factored subproblem per
    fine edge, or None for rows with an empty pattern and a numerically
    zero commutator right-hand side (normal in piecewise-constant mode).
    Identical constraint blocks share factors through a cache; structured
    meshes produce only a handful of distinct blocks.
    """
    D_h = canonical(D_h)
    P_n = canonical(P_n)
    if R_dp is None:
        R_dp = canonical(D_h @ P_n)
    bundle = compute_pattern(D_h, P_n, cg.D_H)
    R_dp_csc = R_dp.tocsc()
    n_fine = D_h.shape[0]
    N = bundle.N
    rows = [None] * n_fine
    cache = {}
    aug_start = cg.n_edges

    def factored(sub):
        key = (sub.G.shape, sub.G.tobytes(), sub.has_dirichlet_edge)
        hit = cache.get(key)
        if hit is None:
            factor_subproblem(sub)
            cache[key] = (sub.Q, sub.R, sub.rank, sub.lsq, sub.gt_ones)
        else:
            sub.Q, sub.R, sub.rank, sub.lsq, sub.gt_ones = hit
        return sub

    D_H = canonical(cg.D_H)
    dh_arrays = (D_H.indptr, D_H.indices, D_H.data, 3 - np.diff(D_H.indptr))
    rdp_scale = max(1.0, float(np.max(np.abs(R_dp.data))) if R_dp.nnz else 1.0)

    for i in range(n_fine):
        if N.indptr[i] == N.indptr[i + 1]:
            sl = slice(R_dp.indptr[i], R_dp.indptr[i + 1])
            if not np.any(np.abs(R_dp.data[sl]) > 1e-12 * rdp_scale):
                continue
            sub = _empty_shell(bundle, i)
            sub, cg = make_irreducible(sub, cg, R_dp_csc)
            D_H = canonical(cg.D_H)
            dh_arrays = (D_H.indptr, D_H.indices, D_H.data,
                         3 - np.diff(D_H.indptr))
            rows[i] = factored(sub)
            continue
        sub = _extract(bundle, cg, *dh_arrays, i)
        if not check_irreducible(sub.G):
            sub, cg = make_irreducible(sub, cg, R_dp_csc)
            D_H = canonical(cg.D_H)
            dh_arrays = (D_H.indptr, D_H.indices, D_H.data,
                         3 - np.diff(D_H.indptr))
        rows[i] = factored(sub)

    new_edges = list(range(aug_start, cg.n_edges))
    if new_edges:
        # appended edges join every row that sees both endpoints,
        # keeping the pattern maximal
        T_csc = bundle.T.tocsc()
        affected = set()
        for e in new_edges:
            a, b = cg.edge_endpoints[e]
            rows_a = T_csc.indices[T_csc.indptr[a]:T_csc.indptr[a + 1]]
            rows_b = T_csc.indices[T_csc.indptr[b]:T_csc.indptr[b + 1]]
            affected.update(np.intersect1d(rows_a, rows_b).tolist())
        for i in sorted(affected):
            if rows[i] is None:
                continue
            sub = _extract(bundle, cg, *dh_arrays, i, extra_edges=new_edges)
            if sub.coarse_edges.size == rows[i].coarse_edges.size:
                continue
            if not check_irreducible(sub.G):
                sub, cg = make_irreducible(sub, cg, R_dp_csc)
                D_H = canonical(cg.D_H)
                dh_arrays = (D_H.indptr, D_H.indices, D_H.data,
                             3 - np.diff(D_H.indptr))
            rows[i] = factored(sub)

    return EminSetup(bundle=bundle, cg=cg, rows=rows, R_dp=R_dp,
                     n_augmented=cg.n_edges - aug_start)
