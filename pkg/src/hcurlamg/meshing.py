"""Structured meshes on the unit square / cube.

Node numbering is lexicographic with x fastest. Edges are stored with the
canonical orientation tail < head (node indices), so the discrete gradient
and all incidence signs are deterministic. Triangles come from splitting
each quadrilateral along the (i,j)-(i+1,j+1) diagonal; tetrahedra from the
six-way split of each hexahedron around its main diagonal, which keeps
face diagonals consistent between neighbouring cells.
"""

from dataclasses import dataclass, field

import numpy as np

SUPPORTED = {(2, "quad"), (2, "tri"), (3, "hex"), (3, "tet")}

# Kuhn split of the unit cube: each permutation of the axes is one tet,
# walking from corner (0,0,0) to (1,1,1).
_KUHN_ORDERS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


@dataclass
class Mesh:
    """Structured mesh with oriented edges and signed element-edge maps."""

    dim: int
    element_kind: str
    nodal_shape: tuple
    node_coords: np.ndarray          # (nnodes, dim)
    edges: np.ndarray                # (nedges, 2), tail < head
    elements: np.ndarray             # (nelems, nodes per element)
    element_edges: np.ndarray        # (nelems, edges per element) edge ids
    element_edge_signs: np.ndarray   # same shape, +-1 vs tail->head
    dirichlet_nodes: np.ndarray      # (nnodes,) bool
    spacing: tuple = field(default=())

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]


def _node_grid(shape):
    """Lexicographic node index array of the given nodal shape, x fastest."""
    return np.arange(int(np.prod(shape))).reshape(shape[::-1]).transpose(
        range(len(shape) - 1, -1, -1))


def _unique_edges(pairs, nnodes):
    """Canonical (tail<head) unique edge list plus a pair->edge-id lookup."""
    pairs = np.sort(pairs.reshape(-1, 2), axis=1)
    keys = pairs[:, 0].astype(np.int64) * nnodes + pairs[:, 1]
    uniq, inverse = np.unique(keys, return_inverse=True)
    edges = np.column_stack([uniq // nnodes, uniq % nnodes])
    return edges, uniq, inverse


def build_structured_mesh(dim, element_kind, nodal_shape, dirichlet=False):
    """Build a uniform mesh of the unit square (2D) or cube (3D).

    Parameters
    ----------
    dim : int
        2 or 3.
    element_kind : str
        'quad' or 'tri' (2D); 'hex' or 'tet' (3D).
    nodal_shape : int or sequence of int
        Nodes per axis (>= 2 each). A single int is used for all axes.
    dirichlet : bool
        When True, every boundary node is flagged Dirichlet. Model problems
        use natural boundary conditions (dirichlet=False).

    Returns
    -------
    Mesh
    """
    if np.isscalar(nodal_shape):
        nodal_shape = (int(nodal_shape),) * dim
    nodal_shape = tuple(int(n) for n in nodal_shape)
    if (dim, element_kind) not in SUPPORTED:
        raise ValueError(f"unsupported mesh: dim={dim}, kind={element_kind!r}")
    if len(nodal_shape) != dim or any(n < 2 for n in nodal_shape):
        raise ValueError(f"nodal_shape must have {dim} entries >= 2, "
                         f"got {nodal_shape}")

    grid = _node_grid(nodal_shape)
    nnodes = grid.size
    spacing = tuple(1.0 / (n - 1) for n in nodal_shape)

    axes = [np.linspace(0.0, 1.0, n) for n in nodal_shape]
    idx = np.arange(nnodes)
    per_axis = []
    stride = 1
    for ax, n in enumerate(nodal_shape):
        per_axis.append(axes[ax][(idx // stride) % n])
        stride *= n
    node_coords = np.column_stack(per_axis)

    if dim == 2:
        elements = _elements_2d(grid, element_kind)
    else:
        elements = _elements_3d(grid, element_kind)

    # element boundary cycles (2D) / full edge sets (3D) -> global edges
    local_cycles = _local_edges(dim, element_kind, elements.shape[1])
    pair_list = elements[:, local_cycles]            # (nelems, nloc, 2)
    tails = pair_list[..., 0]
    heads = pair_list[..., 1]
    edges, _, inverse = _unique_edges(
        np.stack([tails, heads], axis=-1), nnodes)
    element_edges = inverse.reshape(tails.shape)
    element_edge_signs = np.where(tails < heads, 1, -1).astype(np.int64)

    on_boundary = np.zeros(nnodes, dtype=bool)
    if dirichlet:
        coords = node_coords
        for ax in range(dim):
            on_boundary |= np.isclose(coords[:, ax], 0.0)
            on_boundary |= np.isclose(coords[:, ax], 1.0)

    mesh = Mesh(dim=dim, element_kind=element_kind, nodal_shape=nodal_shape,
                node_coords=node_coords, edges=edges, elements=elements,
                element_edges=element_edges,
                element_edge_signs=element_edge_signs,
                dirichlet_nodes=on_boundary, spacing=spacing)
    if dirichlet:
        _drop_constrained_edges(mesh)
    return mesh


def _elements_2d(grid, kind):
    nx, ny = grid.shape
    v00 = grid[:-1, :-1].reshape(-1)
    v10 = grid[1:, :-1].reshape(-1)
    v01 = grid[:-1, 1:].reshape(-1)
    v11 = grid[1:, 1:].reshape(-1)
    if kind == "quad":
        return np.column_stack([v00, v10, v11, v01])
    # two triangles per quad, split along the v00-v11 diagonal, both CCW
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    out = np.empty((2 * lower.shape[0], 3), dtype=np.int64)
    out[0::2] = lower
    out[1::2] = upper
    return out


def _elements_3d(grid, kind):
    corners = [grid[:-1, :-1, :-1], grid[1:, :-1, :-1],
               grid[:-1, 1:, :-1], grid[1:, 1:, :-1],
               grid[:-1, :-1, 1:], grid[1:, :-1, 1:],
               grid[:-1, 1:, 1:], grid[1:, 1:, 1:]]
    # local corner c = (dx, dy, dz) at index dx + 2*dy + 4*dz
    hexes = np.column_stack([c.reshape(-1) for c in corners])
    if kind == "hex":
        return hexes
    per_order = []
    for order in _KUHN_ORDERS:
        corner = 0
        locals_ = [0]
        for ax in order:
            corner += 1 << ax
            locals_.append(corner)
        per_order.append(hexes[:, locals_])
    return np.stack(per_order, axis=1).reshape(-1, 4)


def _local_edges(dim, kind, nloc):
    """Local node-pair list per element kind.

    2D lists are the CCW boundary cycle (used as the curl incidence);
    3D lists enumerate all element edges.
    """
    if kind == "quad":
        return np.array([(0, 1), (1, 2), (2, 3), (3, 0)])
    if kind == "tri":
        return np.array([(0, 1), (1, 2), (2, 0)])
    if kind == "tet":
        return np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    # hex corners indexed dx + 2*dy + 4*dz
    edges = []
    for c in range(8):
        for ax, step in ((0, 1), (1, 2), (2, 4)):
            if not (c >> ax) & 1:
                edges.append((c, c + step))
    return np.array(edges)


def _drop_constrained_edges(mesh):
    """Remove edges whose endpoints are both Dirichlet, renumbering in place.

    On quad/hex meshes these are exactly the boundary edges; on simplicial
    meshes a few near-corner cell diagonals are removed too, keeping every
    remaining gradient row at one or two nonzeros.
    """
    flags = mesh.dirichlet_nodes
    keep = ~(flags[mesh.edges[:, 0]] & flags[mesh.edges[:, 1]])
    new_id = np.full(mesh.edges.shape[0], -1, dtype=np.int64)
    new_id[keep] = np.arange(int(keep.sum()))
    mesh.edges = mesh.edges[keep]
    mesh.element_edges = new_id[mesh.element_edges]
    mesh.element_edge_signs = np.where(
        mesh.element_edges >= 0, mesh.element_edge_signs, 0)


def expected_edge_count(dim, element_kind, nodal_shape):
    """Closed-form edge count of an unconstrained structured mesh."""
    if np.isscalar(nodal_shape):
        nodal_shape = (int(nodal_shape),) * dim
    if dim == 2:
        n, m = nodal_shape
        grid = n * (m - 1) + m * (n - 1)
        return grid if element_kind == "quad" else grid + (n - 1) * (m - 1)
    n, m, p = nodal_shape
    grid = (n - 1) * m * p + n * (m - 1) * p + n * m * (p - 1)
    if element_kind == "hex":
        return grid
    face_diag = ((n - 1) * (m - 1) * p + (n - 1) * m * (p - 1)
                 + n * (m - 1) * (p - 1))
    body_diag = (n - 1) * (m - 1) * (p - 1)
    return grid + face_diag + body_diag
