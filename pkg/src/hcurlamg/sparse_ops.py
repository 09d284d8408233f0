"""CSR matrix kernels shared by every other module.

All operators in the solver (curl-curl and mass matrices, discrete
gradients, grid transfers) are stored as scipy CSR matrices in canonical
form: sorted column indices within each row, no duplicate entries.
Explicitly stored zeros are legal and meaningful (they record structural
couplings that cancelled numerically); ``compress`` is the only operation
that removes them.
"""

import numpy as np
import scipy.sparse as sp

SparseMatrix = sp.csr_matrix


def canonical(A):
    """Return ``A`` as a canonical CSR matrix (sorted indices, summed dups)."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def from_dense(M):
    """CSR matrix from a dense array, keeping only nonzero entries."""
    return canonical(sp.csr_matrix(np.asarray(M, dtype=np.float64)))


def indicator(A):
    """0/1 pattern matrix of A: one stored 1.0 per stored entry of A."""
    B = canonical(A).copy()
    B.data = np.ones_like(B.data)
    return B


def spgemm(A, B):
    """Sparse matrix product A @ B on the full structural pattern.

    The result contains an entry for every (i, j) reachable through the
    patterns of A and B, including entries whose value cancelled to zero
    exactly. scipy's ``@`` prunes those, so the structural pattern is
    computed with an indicator product and the numeric values are scattered
    back onto it.

    Raises
    ------
    ValueError
        If the inner dimensions disagree.
    """
    A = canonical(A)
    B = canonical(B)
    if A.shape[1] != B.shape[0]:
        raise ValueError(
            f"spgemm dimension mismatch: {A.shape} @ {B.shape}")
    pattern = canonical(indicator(A) @ indicator(B))
    numeric = canonical(A @ B)
    out = pattern.copy()
    out.data = np.zeros_like(pattern.data)
    if numeric.nnz:
        ncols = out.shape[1]
        pat_keys = _flat_keys(out, ncols)
        num_keys = _flat_keys(numeric, ncols)
        pos = np.searchsorted(pat_keys, num_keys)
        out.data[pos] = numeric.data
    return out


def _flat_keys(A, ncols):
    """Globally sorted (row, col) keys of a canonical CSR matrix."""
    rows = np.repeat(np.arange(A.shape[0], dtype=np.int64),
                     np.diff(A.indptr))
    return rows * np.int64(ncols) + A.indices.astype(np.int64)


def transpose(A):
    """Transpose, returned in canonical CSR form."""
    return canonical(canonical(A).transpose())


def diag_inverse(A):
    """Elementwise reciprocal of the diagonal of a square matrix.

    Raises
    ------
    ValueError
        If A is not square, or some diagonal entry is missing/zero
        (the offending row is named in the message).
    """
    A = canonical(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"diag_inverse needs a square matrix, got {A.shape}")
    d = A.diagonal()
    bad = np.flatnonzero(d == 0.0)
    if bad.size:
        raise ValueError(f"zero or missing diagonal entry in row {bad[0]}")
    return 1.0 / d


def abs_matrix(A):
    """Same pattern as A with absolute values."""
    B = canonical(A).copy()
    B.data = np.abs(B.data)
    return B


def compress(A, tol=0.0):
    """Drop stored entries with magnitude <= tol (exact zeros when tol=0)."""
    B = canonical(A).copy()
    if tol > 0.0:
        B.data[np.abs(B.data) <= tol] = 0.0
    B.eliminate_zeros()
    return B


def max_abs(A):
    """max |A_ij| over stored entries; 0.0 for an empty matrix."""
    A = sp.csr_matrix(A)
    return float(np.max(np.abs(A.data))) if A.nnz else 0.0
