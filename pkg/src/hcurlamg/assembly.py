"""Edge-element and nodal operators on structured meshes.

The curl-curl matrix is assembled in factored form S = C^T W C, where C is
the signed incidence from elements (2D) or faces (3D) onto edges and W the
corresponding curl L2 weight: 1/|element| in 2D, the lowest-order face
(flux) mass matrix in 3D. Every row of C is a closed cycle of oriented
edges, so C @ D vanishes identically and the null-space identity S @ D = 0
holds to round-off by construction.

Edge bases are normalized by unit tangential line integral, face bases by
unit flux; with those conventions all incidence entries are exactly +-1.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse_ops import canonical
from .meshing import _local_edges

# local corner cycle per hex face, right-hand rule around the +axis normal;
# corners are indexed dx + 2*dy + 4*dz
_HEX_FACE_CYCLES = (
    (0, "x", [0, 2, 6, 4]), (1, "x", [1, 3, 7, 5]),
    (0, "y", [0, 4, 5, 1]), (1, "y", [2, 6, 7, 3]),
    (0, "z", [0, 1, 3, 2]), (1, "z", [4, 5, 7, 6]),
)

_TET_FACES = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))

_QUAD_TENSOR = np.array([0, 1, 3, 2])  # element position -> dx + 2*dy


@dataclass
class DiscretizedSystem:
    """Operators of one eddy-current model problem."""

    S: sp.csr_matrix       # curl-curl term, symmetric PSD
    M: sp.csr_matrix       # sigma-weighted edge mass, symmetric PD
    A_e: sp.csr_matrix     # S + M
    A_n: sp.csr_matrix     # nodal -Laplace + sigma mass, free nodes only
    D: sp.csr_matrix       # discrete gradient, edges x free nodes
    sigma: float


def discretize(mesh, sigma):
    """Assemble all operators of the model problem on one mesh."""
    S = assemble_curl_curl(mesh)
    M = assemble_edge_mass(mesh, sigma)
    A_n = assemble_nodal_problem(mesh, sigma)
    D = build_discrete_gradient(mesh)
    return DiscretizedSystem(S=S, M=M, A_e=canonical(S + M), A_n=A_n,
                             D=D, sigma=sigma)


def free_nodes(mesh):
    """Indices of non-Dirichlet nodes (all nodes under natural BCs)."""
    return np.flatnonzero(~mesh.dirichlet_nodes)


def build_discrete_gradient(mesh):
    """Signed node-to-edge incidence: -1 at the tail, +1 at the head.

    Columns of Dirichlet nodes are removed, so an edge with one
    constrained endpoint keeps a single nonzero.
    """
    free = free_nodes(mesh)
    col_of = np.full(mesh.n_nodes, -1, dtype=np.int64)
    col_of[free] = np.arange(free.size)
    tails = col_of[mesh.edges[:, 0]]
    heads = col_of[mesh.edges[:, 1]]
    edge_ids = np.arange(mesh.n_edges)
    keep_t, keep_h = tails >= 0, heads >= 0
    rows = np.concatenate([edge_ids[keep_t], edge_ids[keep_h]])
    cols = np.concatenate([tails[keep_t], heads[keep_h]])
    vals = np.concatenate([-np.ones(keep_t.sum()), np.ones(keep_h.sum())])
    return canonical(sp.coo_matrix(
        (vals, (rows, cols)), shape=(mesh.n_edges, free.size)))


# ---------------------------------------------------------------------------
# geometry helpers


def _simplex_geometry(mesh):
    """Batched barycentric gradients and measures of simplex elements.

    Returns (grads, vol) with grads[e, i, :] = grad lambda_i on element e.
    """
    coords = mesh.node_coords[mesh.elements]        # (nelem, nloc, dim)
    nelem, nloc, dim = coords.shape
    A = np.concatenate([np.ones((nelem, nloc, 1)), coords], axis=2)
    inv = np.linalg.inv(A)
    grads = inv[:, 1:, :].transpose(0, 2, 1)
    vol = np.abs(np.linalg.det(A)) / (2.0 if dim == 2 else 6.0)
    if np.any(vol <= 0) or not np.all(np.isfinite(grads)):
        raise ValueError("degenerate (zero-measure) element in mesh")
    return grads, vol


def _bary_ll(vol, nloc, i, j):
    """Exact integral of lambda_i * lambda_j over a simplex of measure vol."""
    denom = 12.0 if nloc == 3 else 20.0
    return vol * ((2.0 if i == j else 1.0) / denom)


def _hat_mass_1d(h):
    return (h / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])


def _hat_stiff_1d(h):
    return (1.0 / h) * np.array([[1.0, -1.0], [-1.0, 1.0]])


def _edge_key(mesh):
    """Sorted int64 keys of the canonical edge list, for pair lookups."""
    return mesh.edges[:, 0].astype(np.int64) * mesh.n_nodes + mesh.edges[:, 1]


def _scatter(rows, cols, vals, shape):
    """COO accumulate into a canonical CSR matrix, skipping negative ids."""
    rows = np.asarray(rows).ravel()
    cols = np.asarray(cols).ravel()
    vals = np.asarray(vals, dtype=np.float64).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return canonical(sp.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=shape))


# ---------------------------------------------------------------------------
# curl-curl


def assemble_curl_curl(mesh):
    """Curl-curl operator S = C^T W C; symmetric positive semidefinite."""
    if mesh.dim == 2:
        C, W = _curl_factor_2d(mesh)
    elif mesh.element_kind == "tet":
        C, W = _curl_factor_tet(mesh)
    else:
        C, W = _curl_factor_hex(mesh)
    S = canonical(C.T @ (W @ C))
    return canonical((S + S.T) * 0.5)


def _curl_factor_2d(mesh):
    """Element-to-edge cycle incidence and diagonal 1/area weight."""
    nelem, nloc = mesh.element_edges.shape
    rows = np.repeat(np.arange(nelem), nloc)
    cols = mesh.element_edges.ravel()
    vals = mesh.element_edge_signs.ravel().astype(np.float64)
    C = _scatter(rows, cols, vals, (nelem, mesh.n_edges))
    if mesh.element_kind == "tri":
        _, vol = _simplex_geometry(mesh)
    else:
        hx, hy = mesh.spacing
        vol = np.full(nelem, hx * hy)
    if np.any(vol <= 0):
        raise ValueError("degenerate (zero-measure) element in mesh")
    W = sp.diags(1.0 / vol).tocsr()
    return C, W


def _tet_face_table(mesh):
    """Unique mesh faces of a tet mesh plus per-element face references.

    Faces are canonically oriented by the cyclic order of their sorted
    node triple, which is shared between neighbouring elements.
    """
    elems = mesh.elements
    tris = np.sort(np.stack([elems[:, f] for f in _TET_FACES], axis=1), axis=2)
    n = np.int64(mesh.n_nodes)
    keys = (tris[..., 0] * n + tris[..., 1]) * n + tris[..., 2]
    uniq, inverse = np.unique(keys, return_inverse=True)
    a = uniq // (n * n)
    b = (uniq // n) % n
    c = uniq % n
    faces = np.column_stack([a, b, c])
    elem_faces = inverse.reshape(keys.shape)
    return faces, elem_faces


def _curl_factor_tet(mesh):
    """Face-to-edge incidence and exact face (flux) mass matrix."""
    faces, elem_faces = _tet_face_table(mesh)
    nfaces = faces.shape[0]
    keys = _edge_key(mesh)

    def edge_ids(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        q = lo.astype(np.int64) * mesh.n_nodes + hi
        pos = np.searchsorted(keys, q)
        pos = np.clip(pos, 0, keys.size - 1)
        ok = keys[pos] == q
        return np.where(ok, pos, -1)

    fa, fb, fc = faces[:, 0], faces[:, 1], faces[:, 2]
    rows = np.concatenate([np.arange(nfaces)] * 3)
    cols = np.concatenate([edge_ids(fa, fb), edge_ids(fb, fc),
                           edge_ids(fa, fc)])
    vals = np.concatenate([np.ones(nfaces), np.ones(nfaces),
                           -np.ones(nfaces)])
    C = _scatter(rows, cols, vals, (nfaces, mesh.n_edges))

    grads, vol = _simplex_geometry(mesh)
    nelem = mesh.elements.shape[0]
    # flux basis on face (a, b, c): psi = 2 * sum_cyc lambda_i grad_j x grad_k
    local_faces = np.array(_TET_FACES)
    v = np.empty((nelem, 4, 3, 3))
    for f, (a, b, c) in enumerate(local_faces):
        v[:, f, 0] = 2.0 * np.cross(grads[:, b], grads[:, c])
        v[:, f, 1] = 2.0 * np.cross(grads[:, c], grads[:, a])
        v[:, f, 2] = 2.0 * np.cross(grads[:, a], grads[:, b])
    mm = np.zeros((nelem, 4, 4))
    for f in range(4):
        for g in range(4):
            acc = np.zeros(nelem)
            for i in range(3):
                for j in range(3):
                    same = local_faces[f][i] == local_faces[g][j]
                    coef = vol * ((2.0 if same else 1.0) / 20.0)
                    acc += coef * np.einsum("ed,ed->e", v[:, f, i], v[:, g, j])
            mm[:, f, g] = acc
    rows = np.repeat(elem_faces, 4, axis=1)
    cols = np.tile(elem_faces, (1, 4))
    W = _scatter(rows, cols, mm, (nfaces, nfaces))
    return C, W


def _curl_factor_hex(mesh):
    """Hex face-to-edge incidence and tensor-product face mass matrix."""
    elems = mesh.elements
    nelem = elems.shape[0]
    keys = _edge_key(mesh)
    hx, hy, hz = mesh.spacing
    h = {"x": hx, "y": hy, "z": hz}
    axis_id = {"x": 0, "y": 1, "z": 2}

    # unique faces keyed by (min corner node, normal axis)
    cyc_nodes = []
    face_axis = []
    for side, ax, cyc in _HEX_FACE_CYCLES:
        cyc_nodes.append(elems[:, cyc])
        face_axis.append(np.full(nelem, axis_id[ax]))
    cyc_nodes = np.stack(cyc_nodes, axis=1)          # (nelem, 6, 4)
    face_axis = np.stack(face_axis, axis=1)          # (nelem, 6)
    fkeys = cyc_nodes.min(axis=2).astype(np.int64) * 3 + face_axis
    uniq, inverse = np.unique(fkeys, return_inverse=True)
    elem_faces = inverse.reshape(nelem, 6)
    nfaces = uniq.size

    # incidence: 4 cycle edges per face; any sharing element gives the same
    # cycle, so one representative per unique face suffices
    rep = np.zeros(nfaces, dtype=np.int64)
    flat = elem_faces.ravel()
    rep[flat] = np.arange(flat.size)
    sel_elem, sel_slot = np.unravel_index(rep, (nelem, 6))
    cyc = cyc_nodes[sel_elem, sel_slot]              # (nfaces, 4)
    rows, cols, vals = [], [], []
    for k in range(4):
        a = cyc[:, k]
        b = cyc[:, (k + 1) % 4]
        lo = np.minimum(a, b).astype(np.int64)
        hi = np.maximum(a, b).astype(np.int64)
        q = lo * mesh.n_nodes + hi
        pos = np.clip(np.searchsorted(keys, q), 0, keys.size - 1)
        eid = np.where(keys[pos] == q, pos, -1)
        rows.append(np.arange(nfaces))
        cols.append(eid)
        vals.append(np.where(a < b, 1.0, -1.0))
    C = _scatter(np.concatenate(rows), np.concatenate(cols),
                 np.concatenate(vals), (nfaces, mesh.n_edges))

    # face mass: only same-normal faces within a cell couple;
    # int psi_{a,da} . psi_{a,da'} = M1_a[da, da'] / (h_b * h_c)
    rows, cols, vals = [], [], []
    sides = {"x": (0, 1), "y": (2, 3), "z": (4, 5)}
    for ax, (s0, s1) in sides.items():
        others = [a for a in "xyz" if a != ax]
        scale = 1.0 / (h[others[0]] * h[others[1]])
        m1 = _hat_mass_1d(h[ax]) * scale
        for i, si in enumerate((s0, s1)):
            for j, sj in enumerate((s0, s1)):
                rows.append(elem_faces[:, si])
                cols.append(elem_faces[:, sj])
                vals.append(np.full(nelem, m1[i, j]))
    W = _scatter(np.concatenate(rows), np.concatenate(cols),
                 np.concatenate(vals), (nfaces, nfaces))
    return C, W


# ---------------------------------------------------------------------------
# edge mass


def assemble_edge_mass(mesh, sigma):
    """Exact first-order edge mass matrix scaled by sigma (> 0)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if mesh.element_kind in ("tri", "tet"):
        M = _edge_mass_simplex(mesh)
    else:
        M = _edge_mass_tensor(mesh)
    M = canonical(M * sigma)
    return canonical((M + M.T) * 0.5)


def _edge_mass_simplex(mesh):
    grads, vol = _simplex_geometry(mesh)
    pairs = _local_edges(mesh.dim, mesh.element_kind, mesh.elements.shape[1])
    nle = pairs.shape[0]
    nloc = mesh.elements.shape[1]
    nelem = mesh.elements.shape[0]
    gdot = np.einsum("eid,ejd->eij", grads, grads)
    loc = np.zeros((nelem, nle, nle))
    for i, (a, b) in enumerate(pairs):
        for j, (c, d) in enumerate(pairs):
            val = (gdot[:, b, d] * _bary_ll(vol, nloc, a, c)
                   - gdot[:, b, c] * _bary_ll(vol, nloc, a, d)
                   - gdot[:, a, d] * _bary_ll(vol, nloc, b, c)
                   + gdot[:, a, c] * _bary_ll(vol, nloc, b, d))
            loc[:, i, j] = val
    signs = mesh.element_edge_signs
    loc *= signs[:, :, None] * signs[:, None, :]
    rows = np.repeat(mesh.element_edges, nle, axis=1)
    cols = np.tile(mesh.element_edges, (1, nle))
    return _scatter(rows, cols, loc, (mesh.n_edges, mesh.n_edges))


def _tensor_edge_descriptors(kind):
    """(axis, transverse hat offsets) per local edge, in local-edge order."""
    if kind == "quad":
        # local edges (0,1),(1,2),(2,3),(3,0) on (v00, v10, v11, v01)
        return [("x", (0,)), ("y", (1,)), ("x", (1,)), ("y", (0,))]
    descr = []
    for c in range(8):
        for ax, step in (("x", 1), ("y", 2), ("z", 4)):
            if not (c >> "xyz".index(ax)) & 1:
                bits = [(c >> k) & 1 for k in range(3)]
                off = tuple(bits[k] for k in range(3) if "xyz"[k] != ax)
                descr.append((ax, off))
    return descr


def _edge_mass_tensor(mesh):
    """Grid-aligned edges carry +axis bases, so no sign factors appear."""
    h = dict(zip("xyz", mesh.spacing))
    descr = _tensor_edge_descriptors(mesh.element_kind)
    nle = len(descr)
    m1 = {ax: _hat_mass_1d(h[ax]) for ax in h}
    loc = np.zeros((nle, nle))
    for i, (axi, offi) in enumerate(descr):
        for j, (axj, offj) in enumerate(descr):
            if axi != axj:
                continue
            others = [a for a in h if a != axi]
            val = 1.0 / h[axi]
            for t, ax_t in enumerate(others):
                val *= m1[ax_t][offi[t], offj[t]]
            loc[i, j] = val
    ee = mesh.element_edges
    rows = np.repeat(ee, nle, axis=1)
    cols = np.tile(ee, (1, nle))
    vals = np.broadcast_to(loc.ravel(), (ee.shape[0], nle * nle))
    return _scatter(rows, cols, vals, (mesh.n_edges, mesh.n_edges))


# ---------------------------------------------------------------------------
# nodal problem


def assemble_nodal_problem(mesh, sigma):
    """First-order nodal operator for -Laplace + sigma, on free nodes."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if mesh.element_kind in ("tri", "tet"):
        K, Mn = _nodal_simplex(mesh)
    else:
        K, Mn = _nodal_tensor(mesh)
    A = canonical(K + sigma * Mn)
    A = canonical((A + A.T) * 0.5)
    free = free_nodes(mesh)
    if free.size != mesh.n_nodes:
        A = canonical(A[np.ix_(free, free)])
    return A


def _nodal_simplex(mesh):
    grads, vol = _simplex_geometry(mesh)
    nloc = mesh.elements.shape[1]
    stiff = np.einsum("eid,ejd->eij", grads, grads) * vol[:, None, None]
    mass = np.empty((vol.size, nloc, nloc))
    for i in range(nloc):
        for j in range(nloc):
            mass[:, i, j] = _bary_ll(vol, nloc, i, j)
    rows = np.repeat(mesh.elements, nloc, axis=1)
    cols = np.tile(mesh.elements, (1, nloc))
    shape = (mesh.n_nodes, mesh.n_nodes)
    return (_scatter(rows, cols, stiff, shape),
            _scatter(rows, cols, mass, shape))


def _nodal_tensor(mesh):
    hs = mesh.spacing
    mats_m = [_hat_mass_1d(h) for h in hs]
    mats_s = [_hat_stiff_1d(h) for h in hs]
    dim = mesh.dim

    def tensor(kind_axis):
        out = np.array([[1.0]])
        # kron with x fastest: index = dx + 2*dy (+ 4*dz)
        for ax in range(dim):
            m = mats_s[ax] if ax == kind_axis else mats_m[ax]
            out = np.kron(m, out)
        return out

    stiff = sum(tensor(ax) for ax in range(dim))
    mass = tensor(-1)
    if mesh.element_kind == "quad":
        t = _QUAD_TENSOR
        stiff = stiff[np.ix_(t, t)]
        mass = mass[np.ix_(t, t)]
    nloc = mesh.elements.shape[1]
    nelem = mesh.elements.shape[0]
    rows = np.repeat(mesh.elements, nloc, axis=1)
    cols = np.tile(mesh.elements, (1, nloc))
    shape = (mesh.n_nodes, mesh.n_nodes)
    return (_scatter(rows, cols,
                     np.broadcast_to(stiff.ravel(), (nelem, nloc * nloc)),
                     shape),
            _scatter(rows, cols,
                     np.broadcast_to(mass.ravel(), (nelem, nloc * nloc)),
                     shape))
