"""Edge interpolation by constrained energy minimization.

The edge prolongator is the approximate minimizer of the curl-energy of
its columns subject to two constraints: a fixed sparsity pattern and the
commuting relation P_e @ D_H = D_h @ P_n. Starting from a feasible guess,
damped-Jacobi corrections are projected row by row onto the null space of
the constraint blocks, so every iterate stays exactly feasible.

In piecewise-constant (rsamg) mode the feasible guess alone reproduces the
classic +-1 interpolation between adjacent aggregates and no minimization
iterations run.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import coarse_gradient as cgrad
from . import emin_setup as es
from . import nodal_amg as na
from .assembly import build_discrete_gradient
from .meshing import build_structured_mesh
from .sparse_ops import canonical, compress, max_abs


@dataclass
class EminConfig:
    """Knobs of the prolongator energy minimization."""

    omega: float = 0.5
    iterations: int = 1
    mode: str = "sphcurl"          # "sphcurl" or "rsamg"
    n_passes: int = 2              # piecewise-constant conversion sweeps
    drop_tol: float = 0.0          # nodal strength-of-connection dropping

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ValueError(f"omega must be in (0, 2), got {self.omega}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.mode not in ("sphcurl", "rsamg"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class EdgeProlongator:
    P_e: sp.csr_matrix
    energy_history: list
    commutator_residual: float
    subproblem_dims: Counter = field(default_factory=Counter)
    n_augmented: int = 0


class _RowStructure:
    """Fixed CSR skeleton of the prolongator; iterates only swap values."""

    def __init__(self, setup, n_coarse):
        lengths = [r.coarse_edges.size if r is not None else 0
                   for r in setup.rows]
        self.indptr = np.concatenate(
            [[0], np.cumsum(lengths)]).astype(np.int64)
        if self.indptr[-1]:
            self.indices = np.concatenate(
                [r.coarse_edges for r in setup.rows if r is not None
                 and r.coarse_edges.size])
        else:
            self.indices = np.zeros(0, dtype=np.int64)
        self.shape = (len(setup.rows), n_coarse)

    def matrix(self, values):
        return canonical(sp.csr_matrix(
            (values.copy(), self.indices, self.indptr), shape=self.shape))

    def aligned(self, A):
        """Values of sparse A on this skeleton; entries outside it drop."""
        A = canonical(A)
        out = np.zeros(self.indptr[-1])
        ncols = np.int64(self.shape[1])
        rows_s = np.repeat(np.arange(self.shape[0], dtype=np.int64),
                           np.diff(self.indptr))
        keys_s = rows_s * ncols + self.indices
        rows_a = np.repeat(np.arange(A.shape[0], dtype=np.int64),
                           np.diff(A.indptr))
        keys_a = rows_a * ncols + A.indices.astype(np.int64)
        pos = np.searchsorted(keys_s, keys_a)
        pos = np.clip(pos, 0, max(keys_s.size - 1, 0))
        ok = (keys_s.size > 0) & (keys_s[pos] == keys_a)
        out[pos[ok]] = A.data[ok]
        return out


def _rhs_on_nodes(R_dp, sub):
    """Commutator right-hand-side row densified over the row's node set."""
    i, J = sub.fine_edge, sub.coarse_nodes
    sl = slice(R_dp.indptr[i], R_dp.indptr[i + 1])
    r = np.zeros(J.size)
    pos = np.searchsorted(J, R_dp.indices[sl])
    r[pos] = R_dp.data[sl]
    return r


def initial_feasible_guess(setup, structure=None):
    """All-ones seed corrected row by row to satisfy the constraints.

    Each row starts from ones on the sparsity pattern and adds the
    least-norm solution of G^T d = r^T - G^T 1, which makes the commutator
    equation hold exactly.
    """
    if structure is None:
        structure = _RowStructure(setup, setup.cg.n_edges)
    values = np.zeros(structure.indptr[-1])
    for sub in setup.rows:
        if sub is None or sub.coarse_edges.size == 0:
            continue
        if sub.lsq is None:
            raise ValueError(
                f"fine edge {sub.fine_edge}: subproblem not factored")
        r = _rhs_on_nodes(setup.R_dp, sub)
        c = r - sub.gt_ones
        p = 1.0 + es.least_norm_solve(sub, c)
        sl = slice(structure.indptr[sub.fine_edge],
                   structure.indptr[sub.fine_edge + 1])
        values[sl] = p
    return structure, values


def _project_values(values, setup, structure):
    """Row-wise removal of the constraint-space component: v - Q (Q^T v)."""
    out = values.copy()
    indptr = structure.indptr
    for sub in setup.rows:
        if sub is None or sub.coarse_edges.size == 0:
            continue
        sl = slice(indptr[sub.fine_edge], indptr[sub.fine_edge + 1])
        v = out[sl]
        out[sl] = v - sub.Q @ (sub.Q.T @ v)
    return out


def project_correction(dP, setup):
    """Project a sparse correction so every row satisfies G^T dP_i = 0.

    Entries of dP outside the prolongator pattern are dropped (the pattern
    half of the projection); the rest is the row-wise orthogonal projection
    through the stored QR factors.
    """
    structure = _RowStructure(setup, setup.cg.n_edges)
    vals = structure.aligned(dP)
    return structure.matrix(_project_values(vals, setup, structure))


def _energy(S, P):
    """Sum over columns of the curl energy quadratic form."""
    return float((P.multiply(S @ P)).sum())


def _jacobi_diag(S):
    d = S.diagonal().copy()
    top = d.max() if d.size else 0.0
    if top <= 0.0:
        raise ValueError("curl-curl diagonal is entirely zero")
    zero = d == 0.0
    if np.any(zero):
        d[zero] = 1e-12 * top
    return d


def emin_step(S, values, setup, structure, omega):
    """One projected damped-Jacobi sweep on the prolongator values."""
    P = structure.matrix(values)
    dP = canonical(sp.diags(1.0 / _jacobi_diag(S)) @ (S @ P))
    dvals = structure.aligned(dP)
    dvals = _project_values(dvals, setup, structure)
    return values - omega * dvals


def commutator_residual(P_e, D_H, R_dp):
    """max |P_e D_H - D_h P_n|, the feasibility defect."""
    return max_abs(canonical(P_e @ canonical(D_H) - R_dp))


def build_edge_prolongator(A_n, A_e, S, D_h, cfg=None):
    """Construct the edge prolongator and coarse gradient for one level.

    Runs the nodal AMG setup, the piecewise-constant conversion, the
    coarse-gradient projection (with Dirichlet single-node edges), the
    constraint setup and the configured number of projected minimization
    sweeps.

    Returns
    -------
    (EdgeProlongator, CoarseGradient, NodalProlongator)
    """
    cfg = cfg or EminConfig()
    strength = na.strength_graph(A_n, cfg.drop_tol)
    agg = na.aggregate(strength)
    P_tent = na.tentative_prolongator(agg)
    if cfg.mode == "rsamg":
        nod = na.NodalProlongator(P=P_tent, omega_used=0.0, rho_estimate=0.0)
    else:
        nod = na.smooth_and_normalize(A_n, P_tent)
    P_const = cgrad.gen_piecewise_const(nod.P, cfg.n_passes)
    cg = cgrad.build_coarse_gradient(D_h, P_const)
    cg = cgrad.augment_dirichlet_edges(cg, D_h, P_const)

    setup = es.setup_constraints(D_h, nod.P, cg)
    cg = setup.cg
    structure, values = initial_feasible_guess(setup)

    energy = []
    iters = 0 if cfg.mode == "rsamg" else cfg.iterations
    if iters:
        energy.append(_energy(S, structure.matrix(values)))
        for _ in range(iters):
            values = emin_step(S, values, setup, structure, cfg.omega)
            energy.append(_energy(S, structure.matrix(values)))

    P_e = structure.matrix(values)
    dims = Counter((r.coarse_edges.size, r.coarse_nodes.size)
                   for r in setup.rows if r is not None)
    res = commutator_residual(P_e, cg.D_H, setup.R_dp)
    prol = EdgeProlongator(P_e=P_e, energy_history=energy,
                           commutator_residual=res,
                           subproblem_dims=dims,
                           n_augmented=setup.n_augmented)
    return prol, cg, nod


# ---------------------------------------------------------------------------
# ideal-interpolation validation on nested triangular meshes


def _linear_interpolation(coarse_shape, fine_shape, fine_coords):
    """Geometric nodal transfer: barycentric weights of fine nodes inside
    the coarse triangles."""
    ncx, ncy = coarse_shape
    Hx, Hy = 1.0 / (ncx - 1), 1.0 / (ncy - 1)
    rows, cols, vals = [], [], []
    for n, (x, y) in enumerate(fine_coords):
        I = min(int(np.floor(x / Hx + 1e-12)), ncx - 2)
        J = min(int(np.floor(y / Hy + 1e-12)), ncy - 2)
        u = x / Hx - I
        v = y / Hy - J
        v00 = J * ncx + I
        v10 = v00 + 1
        v01 = v00 + ncx
        v11 = v01 + 1
        if u >= v:
            tri = [(v00, 1.0 - u), (v10, u - v), (v11, v)]
        else:
            tri = [(v00, 1.0 - v), (v11, u), (v01, v - u)]
        for node, w in tri:
            if w != 0.0:
                rows.append(n)
                cols.append(node)
                vals.append(w)
    return canonical(sp.coo_matrix(
        (vals, (rows, cols)), shape=(len(fine_coords), ncx * ncy)))


def _whitney_line_integral(tri_coords, a, b, p, q):
    """Integral of the edge basis of (a, b) along the segment p -> q,
    exact for the linear Whitney form."""
    ones = np.ones((3, 1))
    Ainv = np.linalg.inv(np.hstack([ones, tri_coords]))
    grads = Ainv[1:, :].T            # (3, 2) barycentric gradients
    lam_p = Ainv[0, :] + Ainv[1:, :].T @ p
    lam_q = Ainv[0, :] + Ainv[1:, :].T @ q
    d = q - p
    return (grads[b] @ d) * 0.5 * (lam_p[a] + lam_q[a]) \
        - (grads[a] @ d) * 0.5 * (lam_p[b] + lam_q[b])


def validate_ideal_stationarity(coarse_shape, refine_factor):
    """Check that geometric edge interpolation is a minimization fixed point.

    Builds a triangular coarse mesh, refines it uniformly, and forms the
    geometric ("ideal") edge interpolation P_0 together with linear nodal
    interpolation. Reports the commutator feasibility defect of P_0 and the
    largest curl-energy gradient entry on fine edges interior to the coarse
    triangles; both vanish for nested refinements.
    """
    from .assembly import assemble_curl_curl
    if np.isscalar(coarse_shape):
        coarse_shape = (int(coarse_shape),) * 2
    if refine_factor < 2:
        raise ValueError("refine_factor must be >= 2")
    fine_shape = tuple(refine_factor * (n - 1) + 1 for n in coarse_shape)
    coarse = build_structured_mesh(2, "tri", coarse_shape)
    fine = build_structured_mesh(2, "tri", fine_shape)
    if fine.nodal_shape != fine_shape:
        raise ValueError("refinement does not match the coarse mesh")

    P_n = _linear_interpolation(coarse_shape, fine_shape, fine.node_coords)
    D_h = build_discrete_gradient(fine)
    D_H = build_discrete_gradient(coarse)

    ncx = coarse_shape[0]
    Hx, Hy = coarse.spacing
    ctris = coarse.elements
    ccoords = coarse.node_coords
    # locate the coarse triangle holding each fine edge midpoint
    rows, cols, vals = [], [], []
    for e, (t, h) in enumerate(fine.edges):
        p = fine.node_coords[t]
        q = fine.node_coords[h]
        mid = 0.5 * (p + q)
        I = min(int(np.floor(mid[0] / Hx)), coarse_shape[0] - 2)
        J = min(int(np.floor(mid[1] / Hy)), coarse_shape[1] - 2)
        # element arrays are flattened with the y index fastest
        cell = I * (coarse_shape[1] - 1) + J
        u = mid[0] / Hx - I
        v = mid[1] / Hy - J
        tri_id = 2 * cell + (0 if u >= v else 1)
        tri_nodes = ctris[tri_id]
        tcoords = ccoords[tri_nodes]
        for k in range(3):
            a, b = k, (k + 1) % 3
            edge_id = coarse.element_edges[tri_id, k]
            sign = coarse.element_edge_signs[tri_id, k]
            w = sign * _whitney_line_integral(tcoords, a, b, p, q)
            rows.append(e)
            cols.append(edge_id)
            vals.append(w)
    P_0 = canonical(sp.coo_matrix(
        (vals, (rows, cols)), shape=(fine.n_edges, coarse.n_edges)))
    P_0 = compress(P_0, 1e-14)

    R_dp = canonical(D_h @ P_n)
    feas = max_abs(canonical(P_0 @ D_H - R_dp))

    S_h = assemble_curl_curl(fine)
    SP = canonical(S_h @ P_0)
    interior = ~_edges_on_coarse_lines(fine, coarse_shape)
    grad_max = max_abs(SP[interior]) if interior.any() else 0.0
    return {
        "feasibility_residual": feas,
        "interior_gradient_max": grad_max,
        "n_interior_fine_edges": int(interior.sum()),
        "refine_factor": refine_factor,
    }


def _edges_on_coarse_lines(fine, coarse_shape):
    """Mask of fine edges lying on a coarse mesh line (incl. diagonals)."""
    ncx, ncy = coarse_shape
    coords = fine.node_coords
    tol = 1e-9

    def on_grid(w, n):
        s = w * (n - 1)
        return np.abs(s - np.rint(s)) < tol

    x = coords[:, 0]
    y = coords[:, 1]
    on_v = on_grid(x, ncx)                      # vertical coarse lines
    on_h = on_grid(y, ncy)                      # horizontal coarse lines
    # cell diagonals: y - x constant at coarse spacing (square cells)
    Hx = 1.0 / (ncx - 1)
    s = (y - x) / Hx
    on_d = np.abs(s - np.rint(s)) < tol
    t, h = fine.edges[:, 0], fine.edges[:, 1]
    same_v = on_v[t] & on_v[h] & (np.abs(x[t] - x[h]) < tol)
    same_h = on_h[t] & on_h[h] & (np.abs(y[t] - y[h]) < tol)
    same_d = on_d[t] & on_d[h] & (
        np.abs((y[t] - x[t]) - (y[h] - x[h])) < tol)
    return same_v | same_h | same_d
