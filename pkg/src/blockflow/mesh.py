"""Multi-block structured grids with ghost shells and finite-volume metrics.

Layout conventions:

- Cell fields over a block are padded with `ghost_depth` ghost layers on every
  axis that carries a stencil (i and j always, k only in 3D) and are allocated
  in i-fastest (Fortran) order so that each scalar field is contiguous with
  unit stride along i.
- Node lattices are padded the same way; ghost node coordinates are linear
  extrapolations of the interior lattice.
- 2D blocks have nk = 1, no k ghosts, and z-free geometry; cell "volumes" are
  areas and k faces do not exist.
- Face area vectors point toward increasing coordinate: the i-face array entry
  (f, j, k) is the face between cells (f-1, j, k) and (f, j, k) in interior
  numbering, scaled by face area. 3D quad faces are split into two triangles
  along the (corner 0 -> corner 2) diagonal, which makes every cell's outward
  area vectors sum to zero in exact arithmetic and defines the volume via the
  divergence theorem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridFormatError, MetricError
from .topology import (BoundarySpec, make_connected_pair, face_axis, face_side)

GHOST_DEPTH = 2

CASE_PRESETS = ("inlet_ramp_2d", "c_annulus_2d", "multiblock_box_3d", "cartesian_box")


def _extrapolate_ghost_nodes(comp, axis, depth):
    """Extend one coordinate component linearly by `depth` layers on both ends."""
    for _ in range(depth):
        lo = 2.0 * np.take(comp, [0], axis=axis) - np.take(comp, [1], axis=axis)
        hi = 2.0 * np.take(comp, [-1], axis=axis) - np.take(comp, [-2], axis=axis)
        comp = np.concatenate([lo, comp, hi], axis=axis)
    return comp


class Block:
    """One structured block: interior dims, ghost shell, padded node lattice."""

    def __init__(self, block_id: int, interior_nodes: np.ndarray, ndim: int,
                 ghost_depth: int = GHOST_DEPTH):
        if ghost_depth < GHOST_DEPTH:
            raise ValueError(f"ghost_depth must be >= {GHOST_DEPTH}")
        self.id = block_id
        self.ndim = ndim
        self.ghost_depth = ghost_depth
        nodes = np.asarray(interior_nodes, dtype=float)
        if nodes.ndim != ndim + 1 or nodes.shape[0] != ndim:
            raise GridFormatError(
                f"block {block_id}: node array must be ({ndim}, ...), got {nodes.shape}")
        if not np.all(np.isfinite(nodes)):
            raise GridFormatError(f"block {block_id}: non-finite node coordinates")
        dims = tuple(n - 1 for n in nodes.shape[1:])
        if any(n <= 0 for n in dims):
            raise GridFormatError(f"block {block_id}: degenerate block, dims {dims}")
        self.dims = dims if ndim == 3 else (*dims, 1)

        padded = []
        for c in range(ndim):
            comp = nodes[c]
            for axis in range(ndim):
                comp = _extrapolate_ghost_nodes(comp, axis, ghost_depth)
            padded.append(comp)
        self.nodes = np.stack(padded)

    @classmethod
    def from_padded_nodes(cls, block_id, padded_nodes, dims, ndim,
                          ghost_depth=GHOST_DEPTH):
        """Build a block whose ghost node coordinates are supplied rather than
        extrapolated (used when cutting children out of a parent lattice)."""
        blk = cls.__new__(cls)
        blk.id = block_id
        blk.ndim = ndim
        blk.ghost_depth = ghost_depth
        blk.dims = tuple(dims) if ndim == 3 else (dims[0], dims[1], 1)
        expect = tuple(blk.dims[a] + 2 * blk.ghost[a] + 1 for a in range(ndim))
        if padded_nodes.shape != (ndim, *expect):
            raise GridFormatError(
                f"block {block_id}: padded nodes shape {padded_nodes.shape} "
                f"does not match dims {dims}")
        blk.nodes = np.asarray(padded_nodes, dtype=float)
        return blk

    @property
    def ghost(self):
        """Ghost depth per axis: (g, g, g) in 3D, (g, g, 0) in 2D."""
        g = self.ghost_depth
        return (g, g, g if self.ndim == 3 else 0)

    @property
    def shape(self):
        """Padded cell-array shape (always 3 axes; nk stays 1 in 2D)."""
        return tuple(n + 2 * g for n, g in zip(self.dims, self.ghost))

    def interior(self):
        """Slices selecting interior cells of a padded array."""
        return tuple(slice(g, g + n) for n, g in zip(self.dims, self.ghost))

    def allocate_field(self, value=0.0):
        out = np.empty(self.shape, dtype=float, order="F")
        out.fill(value)
        return out

    def cell_count(self) -> int:
        return int(np.prod(self.dims))

    def node_view_3(self):
        """Padded node components as three arrays (z is a zero view in 2D)."""
        if self.ndim == 3:
            return self.nodes[0], self.nodes[1], self.nodes[2]
        x, y = self.nodes[0][..., None], self.nodes[1][..., None]
        return x, y, np.zeros_like(x)


@dataclass
class MultiBlockGrid:
    """Parent blocks plus their physical/connected boundary patches."""

    blocks: list
    boundaries: list = field(default_factory=list)

    def __post_init__(self):
        ids = [b.id for b in self.blocks]
        if len(set(ids)) != len(ids):
            raise GridFormatError(f"duplicate block ids: {ids}")
        self.validate_boundaries()

    @property
    def parent_count(self) -> int:
        return len(self.blocks)

    @property
    def ndim(self) -> int:
        return self.blocks[0].ndim

    def block(self, block_id: int) -> Block:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise KeyError(f"no block {block_id}")

    def block_boundaries(self, block_id: int):
        return [s for s in self.boundaries if s.block == block_id]

    def total_cells(self) -> int:
        return sum(b.cell_count() for b in self.blocks)

    def validate_boundaries(self):
        by_link = {}
        for s in self.boundaries:
            self.block(s.block)  # raises on missing block
            if s.kind == "connected":
                self.block(s.neighbor_block)
                by_link.setdefault(s.link_id, []).append(s)
        for link_id, specs in by_link.items():
            if len(specs) != 2:
                raise GridFormatError(
                    f"connected link {link_id} has {len(specs)} specs, expected 2")
            specs[0].validate_pair(specs[1])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class BlockMetrics:
    """Face area vectors, cell volumes and centers for one block.

    face_vectors[d] has shape (3, ...) with the d-axis running over the
    Nd + 1 interior face planes and tangential axes over the padded cell
    lattice (boundary conditions need wall normals out to the ghost columns).
    volume and centers cover the padded cell lattice too.
    """

    volume: np.ndarray
    centers: np.ndarray            # (3, padded cells); z zero in 2D
    face_vectors: list             # per direction, or None for k in 2D
    ghost: tuple = (0, 0, 0)       # per-axis ghost depth of the padded arrays

    def interior_faces(self, d):
        """Slices selecting interior-tangential entries of face_vectors[d]."""
        sl = [slice(g, v - g) for g, v in zip(self.ghost, self.face_vectors[d].shape[1:])]
        sl[d] = slice(None)
        return (slice(None), *sl)

    def areas(self, d, interior_only=True):
        sv = self.face_vectors[d]
        if interior_only:
            sv = sv[self.interior_faces(d)]
        return np.sqrt(np.sum(sv ** 2, axis=0))

    def unit_normals(self, d, interior_only=True):
        sv = self.face_vectors[d]
        if interior_only:
            sv = sv[self.interior_faces(d)]
        return sv / np.sqrt(np.sum(sv ** 2, axis=0))


def _cell_corner_nodes(x, y, z):
    """The 8 corner node arrays of every cell in a padded 3D node lattice."""
    def c(di, dj, dk):
        sl = (slice(di, x.shape[0] - 1 + di),
              slice(dj, x.shape[1] - 1 + dj),
              slice(dk, x.shape[2] - 1 + dk))
        return np.stack([x[sl], y[sl], z[sl]])

    return {(di, dj, dk): c(di, dj, dk)
            for di in (0, 1) for dj in (0, 1) for dk in (0, 1)}


def _quad_face_vector(c0, c1, c2, c3):
    """Area vector of a quad via the diagonal cross product (= both triangles)."""
    d1 = c2 - c0
    d2 = c3 - c1
    return 0.5 * np.cross(d1, d2, axis=0)


def _quad_face_flux(c0, c1, c2, c3):
    """Integral of (x/3) . n dA over the two triangles (0,1,2) and (0,2,3)."""
    t1 = 0.5 * np.cross(c1 - c0, c2 - c0, axis=0)
    t2 = 0.5 * np.cross(c2 - c0, c3 - c0, axis=0)
    g1 = (c0 + c1 + c2) / 3.0
    g2 = (c0 + c2 + c3) / 3.0
    return (np.sum(g1 * t1, axis=0) + np.sum(g2 * t2, axis=0)) / 3.0


def compute_metrics(block: Block) -> BlockMetrics:
    """Face metrics and volumes; raises MetricError on inverted interior cells."""
    if block.ndim == 2:
        metrics = _metrics_2d(block)
    else:
        metrics = _metrics_3d(block)

    interior = metrics.volume[block.interior()]
    if np.any(interior <= 0.0):
        bad = np.argwhere(interior <= 0.0)[0]
        raise MetricError(
            f"block {block.id}: inverted cell at interior index {tuple(bad)}")
    return metrics


def _metrics_2d(block: Block) -> BlockMetrics:
    x, y = block.nodes[0], block.nodes[1]
    g = block.ghost_depth
    ni, nj, _ = block.dims

    # Corner nodes of every padded cell, counterclockwise.
    x00, y00 = x[:-1, :-1], y[:-1, :-1]
    x10, y10 = x[1:, :-1], y[1:, :-1]
    x11, y11 = x[1:, 1:], y[1:, 1:]
    x01, y01 = x[:-1, 1:], y[:-1, 1:]

    vol = 0.5 * ((x00 * y10 - x10 * y00) + (x10 * y11 - x11 * y10)
                 + (x11 * y01 - x01 * y11) + (x01 * y00 - x00 * y01))
    volume = np.asfortranarray(vol[..., None])

    cx = 0.25 * (x00 + x10 + x11 + x01)
    cy = 0.25 * (y00 + y10 + y11 + y01)
    centers = np.stack([cx[..., None], cy[..., None], np.zeros_like(cx)[..., None]])

    # i-faces: nodes (i, j) -> (i, j+1); outward normal toward +i. Face planes
    # run over the interior range, tangential cells over the padded lattice.
    xs = x[g:g + ni + 1, :]
    ys = y[g:g + ni + 1, :]
    tx = xs[:, 1:] - xs[:, :-1]
    ty = ys[:, 1:] - ys[:, :-1]
    sv_i = np.stack([ty, -tx, np.zeros_like(tx)])[..., None]
    # j-faces: nodes (i, j) -> (i+1, j); normal toward +j.
    xs = x[:, g:g + nj + 1]
    ys = y[:, g:g + nj + 1]
    tx = xs[1:, :] - xs[:-1, :]
    ty = ys[1:, :] - ys[:-1, :]
    sv_j = np.stack([-ty, tx, np.zeros_like(tx)])[..., None]

    return BlockMetrics(volume=volume, centers=centers,
                        face_vectors=[sv_i, sv_j, None], ghost=block.ghost)


def _metrics_3d(block: Block) -> BlockMetrics:
    x, y, z = block.nodes[0], block.nodes[1], block.nodes[2]
    g = block.ghost_depth
    ni, nj, nk = block.dims
    corners = _cell_corner_nodes(x, y, z)

    # Face corner orderings chosen so normals point toward +axis.
    face_defs = {
        0: ((0, 0, 0), (0, 1, 0), (0, 1, 1), (0, 0, 1)),
        1: ((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 0, 0)),
        2: ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)),
    }

    # Volume via divergence theorem over the padded lattice: for each
    # direction, difference of face fluxes of consecutive face planes.
    volume = None
    for d, order in face_defs.items():
        flux_lo = _quad_face_flux(*(corners[c] for c in order))
        order_hi = [tuple(np.array(c) + np.eye(3, dtype=int)[d]) for c in order]
        flux_hi = _quad_face_flux(*(corners[c] for c in order_hi))
        contrib = flux_hi - flux_lo
        volume = contrib if volume is None else volume + contrib
    volume = np.asfortranarray(volume)

    centers = np.zeros((3, *volume.shape))
    for c in corners.values():
        centers += c
    centers /= 8.0

    face_vectors = []
    dims = (ni, nj, nk)
    for d, order in face_defs.items():
        node_sel = []
        for cidx in order:
            sl = []
            for a in range(3):
                if a == d:
                    sl.append(slice(g, g + dims[a] + 1))      # Nd + 1 face planes
                else:                                          # padded tangentials
                    sl.append(slice(cidx[a], cidx[a] + dims[a] + 2 * g))
            sl = tuple(sl)
            node_sel.append(np.stack([x[sl], y[sl], z[sl]]))
        face_vectors.append(_quad_face_vector(*node_sel))
    return BlockMetrics(volume=volume, centers=centers, face_vectors=face_vectors,
                        ghost=block.ghost)


# ---------------------------------------------------------------------------
# Grid file I/O (text; see README for the format)
# ---------------------------------------------------------------------------

def save_grid(grid: MultiBlockGrid, path):
    with open(path, "w") as f:
        f.write(f"{grid.parent_count}\n")
        for b in grid.blocks:
            ni, nj, nk = b.dims
            nk_out = 0 if b.ndim == 2 else nk
            f.write(f"{b.id} {ni} {nj} {nk_out}\n")
            g = b.ghost_depth
            if b.ndim == 2:
                xs = b.nodes[0][g:g + ni + 1, g:g + nj + 1]
                ys = b.nodes[1][g:g + ni + 1, g:g + nj + 1]
                for j in range(nj + 1):
                    for i in range(ni + 1):
                        f.write(f"{float(xs[i, j])!r} {float(ys[i, j])!r}\n")
            else:
                sl = tuple(slice(g, g + n + 1) for n in b.dims)
                xs, ys, zs = (b.nodes[c][sl] for c in range(3))
                for k in range(nk + 1):
                    for j in range(nj + 1):
                        for i in range(ni + 1):
                            f.write(f"{float(xs[i, j, k])!r} {float(ys[i, j, k])!r} "
                            f"{float(zs[i, j, k])!r}\n")


def load_grid(source) -> MultiBlockGrid:
    """Read a grid file. Boundaries are not part of the format; the returned
    grid has none attached."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
        name = getattr(source, "name", "<stream>")
    else:
        name = str(source)
        with open(source) as f:
            lines = f.read().splitlines()

    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            s = lines[pos].strip()
            pos += 1
            if s:
                return s, pos
        raise GridFormatError(f"{name}: unexpected end of file at line {pos}")

    header, ln = next_line()
    try:
        nblocks = int(header)
    except ValueError:
        raise GridFormatError(f"{name}:{ln}: malformed header {header!r}") from None
    if nblocks <= 0:
        raise GridFormatError(f"{name}:{ln}: non-positive block count {nblocks}")

    blocks = []
    for _ in range(nblocks):
        head, ln = next_line()
        parts = head.split()
        if len(parts) != 4:
            raise GridFormatError(f"{name}:{ln}: bad block header {head!r}")
        try:
            bid, ni, nj, nk = (int(p) for p in parts)
        except ValueError:
            raise GridFormatError(f"{name}:{ln}: bad block header {head!r}") from None
        ndim = 2 if nk == 0 else 3
        if ni <= 0 or nj <= 0 or nk < 0:
            raise GridFormatError(
                f"{name}:{ln}: degenerate block {bid} with dims {(ni, nj, nk)}")
        shape = (ni + 1, nj + 1) if ndim == 2 else (ni + 1, nj + 1, nk + 1)
        count = int(np.prod(shape))
        coords = np.empty((count, ndim))
        for n in range(count):
            row, ln = next_line()
            vals = row.split()
            if len(vals) != ndim:
                raise GridFormatError(
                    f"{name}:{ln}: block {bid} expected {ndim} coordinates at "
                    f"node {n}, got {row!r}")
            try:
                coords[n] = [float(v) for v in vals]
            except ValueError:
                raise GridFormatError(
                    f"{name}:{ln}: block {bid} bad coordinate at node {n}: {row!r}"
                ) from None
        # i-fastest ordering -> reshape with reversed axes then transpose.
        arr = coords.reshape(*shape[::-1], ndim).T  # (ndim, i, j[, k]) after T
        arr = np.ascontiguousarray(arr)
        blocks.append(Block(bid, arr, ndim))
    return MultiBlockGrid(blocks=blocks)


# ---------------------------------------------------------------------------
# Case grids
# ---------------------------------------------------------------------------

def make_cartesian_block(block_id, dims, lo, hi, ndim):
    """Uniform Cartesian block over the box [lo, hi]."""
    axes = [np.linspace(lo[a], hi[a], dims[a] + 1) for a in range(ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return Block(block_id, np.stack(mesh), ndim)


def _full_face_box(dims, face):
    axis, side = face_axis(face), face_side(face)
    box = [(0, dims[a]) for a in range(3)]
    box[axis] = (0, 1) if side == 0 else (dims[axis] - 1, dims[axis])
    return tuple(box)


def _physical(block_id, face, dims, bc_type):
    return BoundarySpec(kind="physical", block=block_id, face=face,
                        box=_full_face_box(dims, face), bc_type=bc_type)


def generate_case_grid(case: str, level: int = 0) -> MultiBlockGrid:
    """Built-in case geometries; `level` refines per the case's rule."""
    if case == "inlet_ramp_2d":
        return _inlet_ramp_2d(level)
    if case == "c_annulus_2d":
        return _c_annulus_2d(level)
    if case == "multiblock_box_3d":
        return _multiblock_box_3d(level)
    if case == "cartesian_box":
        return _cartesian_box_2d(level)
    raise ValueError(f"unknown case preset {case!r}; choose from {CASE_PRESETS}")


def _inlet_ramp_2d(level):
    # Channel x in [0, 1.8]: flat floor, top wall compresses 30 degrees over
    # x in [1.0, 1.52] then runs level. The incident oblique shock leaves
    # through the outflow plane before reaching the floor, keeping the flow
    # supersonic throughout (steady at the tabulated M = 4 inflow). Both dims
    # double per level; level 0 is 52x16.
    ni, nj = 52 * 2 ** level, 16 * 2 ** level
    xs = np.linspace(0.0, 1.8, ni + 1)
    drop = np.tan(np.radians(30.0))
    top = 1.0 - drop * np.clip(xs - 1.0, 0.0, 0.52)
    eta = np.linspace(0.0, 1.0, nj + 1)
    X = np.repeat(xs[:, None], nj + 1, axis=1)
    Y = eta[None, :] * top[:, None]
    block = Block(0, np.stack([X, Y]), 2)
    dims = block.dims
    boundaries = [
        _physical(0, "i_min", dims, "supersonic_inflow"),
        _physical(0, "i_max", dims, "supersonic_outflow"),
        _physical(0, "j_min", dims, "slip_wall"),
        _physical(0, "j_max", dims, "slip_wall"),
    ]
    return MultiBlockGrid(blocks=[block], boundaries=boundaries)


def _refine_lattice_midpoint(nodes, times):
    """Dyadically subdivide a (ncomp, ni+1, nj+1) node lattice `times` times.

    Midpoint insertion keeps the discrete domain (the base polygon) identical
    across refinement levels, so the total volume is level-invariant.
    """
    for _ in range(times):
        for axis in (1, 2):
            n = nodes.shape[axis]
            shape = list(nodes.shape)
            shape[axis] = 2 * n - 1
            out = np.empty(shape)
            head = [slice(None)] * nodes.ndim
            even, odd = head.copy(), head.copy()
            even[axis] = slice(0, None, 2)
            odd[axis] = slice(1, None, 2)
            lo, hi = head.copy(), head.copy()
            lo[axis] = slice(0, n - 1)
            hi[axis] = slice(1, n)
            out[tuple(even)] = nodes
            out[tuple(odd)] = 0.5 * (nodes[tuple(lo)] + nodes[tuple(hi)])
            nodes = out
    return nodes


def _c_annulus_2d(level, wall="slip_wall"):
    # Annulus: i wraps the full circle (the seam connects the block to
    # itself), j runs from the inner wall to the farfield circle.
    ni0, nj0 = 64, 16
    # Clockwise sweep keeps the (i, j) -> (x, y) map orientation-preserving.
    theta = np.linspace(0.0, -2.0 * np.pi, ni0 + 1)
    radius = np.linspace(0.5, 2.0, nj0 + 1)
    TH, R = np.meshgrid(theta, radius, indexing="ij")
    nodes = _refine_lattice_midpoint(np.stack([R * np.cos(TH), R * np.sin(TH)]), level)
    block = Block(0, nodes, 2)
    dims = block.dims
    seam_a, seam_b = make_connected_pair(
        0, "i_min", _full_face_box(dims, "i_min"),
        0, "i_max", _full_face_box(dims, "i_max"),
        link_id=0)
    boundaries = [
        seam_a, seam_b,
        _physical(0, "j_min", dims, wall),
        _physical(0, "j_max", dims, "farfield"),
    ]
    return MultiBlockGrid(blocks=[block], boundaries=boundaries)


def _multiblock_box_3d(level):
    # Four parent blocks of unequal size tiling the unit cube; cell counts in
    # ratio 4:2:1:1. Refinement doubles z, then y, then x, cyclically.
    base = 4
    ref = [base, base, base]
    for l in range(level):
        ref[2 - (l % 3)] *= 2
    rx, ry, rz = ref

    def box_block(bid, lo, hi, dims):
        return make_cartesian_block(bid, dims, lo, hi, 3)

    blocks = [
        box_block(0, (0.0, 0.0, 0.0), (0.5, 1.0, 1.0), (rx, 2 * ry, 2 * rz)),
        box_block(1, (0.5, 0.0, 0.0), (1.0, 0.5, 1.0), (rx, ry, 2 * rz)),
        box_block(2, (0.5, 0.5, 0.0), (1.0, 1.0, 0.5), (rx, ry, rz)),
        box_block(3, (0.5, 0.5, 0.5), (1.0, 1.0, 1.0), (rx, ry, rz)),
    ]
    d0, d1, d2, d3 = (b.dims for b in blocks)
    boundaries = []
    link = 0

    def connect(ba, fa, boxa, bb, fb, boxb):
        nonlocal link
        sa, sb = make_connected_pair(ba, fa, boxa, bb, fb, boxb, link_id=link)
        boundaries.extend([sa, sb])
        link += 1

    imax0 = (d0[0] - 1, d0[0])
    # Block 0's i_max face meets 1, 2 and 3 on sub-patches.
    connect(0, "i_max", (imax0, (0, ry), (0, 2 * rz)),
            1, "i_min", ((0, 1), (0, ry), (0, 2 * rz)))
    connect(0, "i_max", (imax0, (ry, 2 * ry), (0, rz)),
            2, "i_min", ((0, 1), (0, ry), (0, rz)))
    connect(0, "i_max", (imax0, (ry, 2 * ry), (rz, 2 * rz)),
            3, "i_min", ((0, 1), (0, ry), (0, rz)))
    # Block 1's j_max meets 2 and 3.
    jmax1 = (d1[1] - 1, d1[1])
    connect(1, "j_max", ((0, rx), jmax1, (0, rz)),
            2, "j_min", ((0, rx), (0, 1), (0, rz)))
    connect(1, "j_max", ((0, rx), jmax1, (rz, 2 * rz)),
            3, "j_min", ((0, rx), (0, 1), (0, rz)))
    # Block 2's k_max meets 3.
    connect(2, "k_max", ((0, rx), (0, ry), (d2[2] - 1, d2[2])),
            3, "k_min", ((0, rx), (0, ry), (0, 1)))

    # Everything else is farfield.
    covered = {(s.block, s.face) for s in boundaries}
    for b in blocks:
        for face in ("i_min", "i_max", "j_min", "j_max", "k_min", "k_max"):
            if (b.id, face) not in covered:
                boundaries.append(_physical(b.id, face, b.dims, "farfield"))
    return MultiBlockGrid(blocks=blocks, boundaries=boundaries)


def _cartesian_box_2d(level):
    # Unit square, refinement doubles j then i cyclically from an 8x8 base.
    ref = [8, 8]
    for l in range(level):
        ref[1 - (l % 2)] *= 2
    block = make_cartesian_block(0, tuple(ref), (0.0, 0.0), (1.0, 1.0), 2)
    dims = block.dims
    boundaries = [_physical(0, f, dims, "mms_dirichlet")
                  for f in ("i_min", "i_max", "j_min", "j_max")]
    return MultiBlockGrid(blocks=[block], boundaries=boundaries)
