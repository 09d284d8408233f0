"""Coarse discrete gradients from nodal grid transfers.

A general nodal prolongator is first collapsed to piecewise-constant form
(one unit entry per row); the coarse edge set is then read off the
projected node-graph Laplacian, one edge per strictly upper-triangular
structural coupling. Absolute-valued factors keep the projected pattern
free of cancellation. Single-node coarse edges mirror fine gradient rows
that lost an endpoint to a Dirichlet boundary.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse_ops import abs_matrix, canonical, compress


@dataclass
class CoarseGradient:
    """Coarse edge-to-node incidence plus its edge bookkeeping."""

    D_H: sp.csr_matrix
    edge_endpoints: list              # (i, j) tuples, or (i,) single-node
    augmented_edges: list = field(default_factory=list)

    @property
    def n_edges(self):
        return self.D_H.shape[0]

    @property
    def n_nodes(self):
        return self.D_H.shape[1]


def gen_piecewise_const(P, n_passes=2):
    """Collapse a prolongator to one unit entry per row.

    Sweeps ``n_passes`` times over the columns; in each sweep a column
    claims its ceil(target / n_passes) largest-magnitude unassigned rows,
    where the per-column target is proportional to that column's nonzero
    count. Remaining rows go to the claimed column holding their largest
    entry. Every column is guaranteed at least one row.
    """
    P = canonical(P)
    m_h, m_H = P.shape
    col_nnz = np.diff(canonical(P.T).indptr)
    if np.any(col_nnz == 0):
        raise ValueError(
            f"empty column {int(np.flatnonzero(col_nnz == 0)[0])} "
            "cannot be assigned any row")
    total = col_nnz.sum()
    targets = np.maximum(1, np.rint(col_nnz / total * m_h).astype(np.int64))

    Pc = canonical(P.T)  # column-major access
    assignment = np.full(m_h, -1, dtype=np.int64)

    def column_rows(j):
        sl = slice(Pc.indptr[j], Pc.indptr[j + 1])
        return Pc.indices[sl], np.abs(Pc.data[sl])

    for _ in range(n_passes):
        for j in range(m_H):
            rows, mags = column_rows(j)
            free = assignment[rows] < 0
            rows, mags = rows[free], mags[free]
            if rows.size == 0:
                continue
            n_assign = -(-targets[j] // n_passes)  # ceil
            # stable sort: largest magnitude first, ties to the lowest row
            order = np.lexsort((rows, -mags))[:n_assign]
            assignment[rows[order]] = j

    # greedy pass for whatever is left
    counts = np.bincount(assignment[assignment >= 0], minlength=m_H)
    for i in np.flatnonzero(assignment < 0):
        sl = slice(P.indptr[i], P.indptr[i + 1])
        cols = P.indices[sl]
        mags = np.abs(P.data[sl])
        if cols.size == 0:
            raise ValueError(f"row {i} has no entries to assign")
        claimed = counts[cols] > 0
        if np.any(claimed):
            cols, mags = cols[claimed], mags[claimed]
        j = int(cols[np.lexsort((cols, -mags))[0]])
        assignment[i] = j
        counts[j] += 1

    # safeguard: every column keeps at least one row
    for j in np.flatnonzero(counts == 0):
        rows, mags = column_rows(j)
        donors = counts[assignment[rows]] > 1
        rows, mags = rows[donors], mags[donors]
        if rows.size == 0:
            raise ValueError(
                f"empty column {j} cannot be assigned any row")
        r = int(rows[np.lexsort((rows, -mags))[0]])
        counts[assignment[r]] -= 1
        assignment[r] = j
        counts[j] += 1

    return canonical(sp.coo_matrix(
        (np.ones(m_h), (np.arange(m_h), assignment)), shape=(m_h, m_H)))


def build_coarse_gradient(D_h, P_const):
    """Coarse edges from the projected node-graph Laplacian.

    Z = P_const^T |D_h|^T |D_h| P_const; each strictly upper-triangular
    structural nonzero Z_ij becomes the coarse edge (i, j) with the
    canonical -1 / +1 row.
    """
    A = abs_matrix(D_h) @ canonical(P_const)
    Z = compress(canonical(A.T @ A), 0.0)
    n_H = P_const.shape[1]
    Zu = sp.triu(Z, k=1).tocoo()
    order = np.lexsort((Zu.col, Zu.row))
    endpoints = [(int(Zu.row[k]), int(Zu.col[k])) for k in order]
    return CoarseGradient(D_H=_gradient_from_endpoints(endpoints, n_H),
                          edge_endpoints=endpoints)


def _gradient_from_endpoints(endpoints, n_nodes):
    rows, cols, vals = [], [], []
    for r, ends in enumerate(endpoints):
        if len(ends) == 2:
            i, j = ends
            rows += [r, r]
            cols += [i, j]
            vals += [-1.0, 1.0]
        else:
            rows.append(r)
            cols.append(ends[0])
            vals.append(1.0)
    return canonical(sp.coo_matrix(
        (vals, (rows, cols)), shape=(len(endpoints), n_nodes)))


def augment_dirichlet_edges(cg, D_h, P_const):
    """Append one single-node coarse edge per coarse node that interpolates
    to the interior node of a fine single-node gradient row."""
    D_h = canonical(D_h)
    P_const = canonical(P_const)
    row_nnz = np.diff(D_h.indptr)
    single = np.flatnonzero(row_nnz == 1)
    if single.size == 0:
        return cg
    interior_nodes = D_h.indices[D_h.indptr[single]]
    membership = P_const.indices[P_const.indptr[:-1]]  # one entry per row
    coarse = np.unique(membership[interior_nodes])
    existing = {e for e in cg.edge_endpoints if len(e) == 1}
    endpoints = list(cg.edge_endpoints)
    for c in coarse:
        e = (int(c),)
        if e not in existing:
            endpoints.append(e)
    return CoarseGradient(
        D_H=_gradient_from_endpoints(endpoints, cg.n_nodes),
        edge_endpoints=endpoints,
        augmented_edges=list(cg.augmented_edges))


def append_edge(cg, i, j):
    """Append interior coarse edge (i, j), recording it as augmented."""
    i, j = (int(min(i, j)), int(max(i, j)))
    endpoints = list(cg.edge_endpoints) + [(i, j)]
    new = CoarseGradient(
        D_H=_gradient_from_endpoints(endpoints, cg.n_nodes),
        edge_endpoints=endpoints,
        augmented_edges=list(cg.augmented_edges) + [(i, j)])
    return new
