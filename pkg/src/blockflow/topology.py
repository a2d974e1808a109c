"""Boundary specifications and face/orientation index algebra.

Index conventions:

- Cell indices are 0-based interior coordinates per block axis, half-open
  ranges [lo, hi).
- A BoundarySpec stores a full 3-axis cell box. The tangential axes carry the
  face patch ranges; the normal axis carries the single face-adjacent interior
  cell layer (lo=0, hi=1 on a min face; lo=N-1, hi=N on a max face), which
  makes box intersection uniform across axes when boundaries are split.
- Orientation maps are per-axis affine: owner axis a maps to neighbor axis
  axis_map[a][0] with direction axis_map[a][1] (+1 or -1). Along flipped axes
  ranges map end-for-end. Depth along the face normal is not encoded here;
  ghost layer g always pairs with the partner's g-th interior layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import TopologyError

FACES = ("i_min", "i_max", "j_min", "j_max", "k_min", "k_max")

PHYSICAL_BC_TYPES = (
    "supersonic_inflow",
    "supersonic_outflow",
    "slip_wall",
    "noslip_wall",
    "farfield",
    "mms_dirichlet",
)

IDENTITY_ORIENTATION = ((0, 1), (1, 1), (2, 1))


def face_axis(face: str) -> int:
    return FACES.index(face) // 2


def face_side(face: str) -> int:
    """0 for a min face, 1 for a max face."""
    return FACES.index(face) % 2


def opposite_face(face: str) -> str:
    axis, side = face_axis(face), face_side(face)
    return FACES[2 * axis + (1 - side)]


def normal_layer_range(face: str, dims) -> tuple[int, int]:
    """Cell range of the face-adjacent interior layer along the face normal."""
    axis = face_axis(face)
    if face_side(face) == 0:
        return (0, 1)
    return (dims[axis] - 1, dims[axis])


def box_intersection(a, b):
    """Intersect two 3-axis half-open boxes; None if empty."""
    out = []
    for (a0, a1), (b0, b1) in zip(a, b):
        lo, hi = max(a0, b0), min(a1, b1)
        if hi <= lo:
            return None
        out.append((lo, hi))
    return tuple(out)


def box_shift(box, offsets, sign=+1):
    return tuple((lo + sign * off, hi + sign * off) for (lo, hi), off in zip(box, offsets))


def box_cells(box) -> int:
    n = 1
    for lo, hi in box:
        n *= hi - lo
    return n


def invert_axis_map(axis_map):
    inv = [None] * 3
    for a, (b, sgn) in enumerate(axis_map):
        inv[b] = (a, sgn)
    if any(e is None for e in inv):
        raise TopologyError(f"orientation map is not a bijection: {axis_map}")
    return tuple(inv)


@dataclass(frozen=True)
class BoundarySpec:
    """One boundary patch of one block, physical or connected.

    For connected patches, (neighbor_block, neighbor_face, neighbor_box,
    axis_map) describe the partner patch; specs of one connection share a
    link_id and come in matching pairs (a self-connection pairs a block with
    itself).
    """

    kind: str                      # "physical" | "connected"
    block: int
    face: str
    box: tuple                     # ((i0,i1),(j0,j1),(k0,k1)) owner cell box
    bc_type: str | None = None     # physical only
    neighbor_block: int | None = None
    neighbor_face: str | None = None
    neighbor_box: tuple | None = None
    axis_map: tuple | None = None  # owner axis a -> (neighbor axis, sign)
    link_id: int | None = None

    def __post_init__(self):
        if self.kind not in ("physical", "connected"):
            raise TopologyError(f"unknown boundary kind {self.kind!r}")
        if self.face not in FACES:
            raise TopologyError(f"unknown face {self.face!r}")
        if self.kind == "physical":
            if self.bc_type not in PHYSICAL_BC_TYPES:
                raise TopologyError(f"unknown physical bc type {self.bc_type!r}")
        else:
            missing = [n for n in ("neighbor_block", "neighbor_face",
                                   "neighbor_box", "axis_map")
                       if getattr(self, n) is None]
            if missing:
                raise TopologyError(f"connected spec missing {missing}")
            invert_axis_map(self.axis_map)

    @property
    def axis(self) -> int:
        return face_axis(self.face)

    @property
    def side(self) -> int:
        return face_side(self.face)

    def tangential_axes(self):
        return tuple(a for a in range(3) if a != self.axis)

    def map_cell(self, cell):
        """Map an owner cell index triple into neighbor coordinates."""
        out = [0, 0, 0]
        for a, (b, sgn) in enumerate(self.axis_map):
            lo = self.box[a][0]
            nlo, nhi = self.neighbor_box[b]
            if sgn > 0:
                out[b] = nlo + (cell[a] - lo)
            else:
                out[b] = (nhi - 1) - (cell[a] - lo)
        return tuple(out)

    def map_box(self, box):
        """Map an owner cell box into neighbor coordinates (half-open)."""
        out = [None] * 3
        for a, (b, sgn) in enumerate(self.axis_map):
            lo = self.box[a][0]
            nlo, nhi = self.neighbor_box[b]
            b0, b1 = box[a]
            if sgn > 0:
                out[b] = (nlo + (b0 - lo), nlo + (b1 - lo))
            else:
                out[b] = ((nhi - 1) - (b1 - 1 - lo), (nhi - 1) - (b0 - lo) + 1)
        return tuple(out)

    def validate_pair(self, partner: "BoundarySpec"):
        """Check that partner is the consistent other end of this connection."""
        if self.kind != "connected" or partner.kind != "connected":
            raise TopologyError("validate_pair needs two connected specs")
        if self.link_id != partner.link_id:
            raise TopologyError(
                f"specs paired across link ids {self.link_id} vs {partner.link_id}")
        if (self.neighbor_block != partner.block
                or partner.neighbor_block != self.block
                or self.neighbor_face != partner.face
                or partner.neighbor_face != self.face):
            raise TopologyError(f"link {self.link_id}: endpoints disagree")
        if partner.axis_map != invert_axis_map(self.axis_map):
            raise TopologyError(f"link {self.link_id}: orientation maps not inverse")
        for a, (b, _) in enumerate(self.axis_map):
            la = self.box[a][1] - self.box[a][0]
            lb = self.neighbor_box[b][1] - self.neighbor_box[b][0]
            if la != lb:
                raise TopologyError(
                    f"link {self.link_id}: range lengths differ on axis {a} ({la} vs {lb})")
        if self.neighbor_box != partner.box or partner.neighbor_box != self.box:
            raise TopologyError(f"link {self.link_id}: boxes disagree")

    def canonical_key(self):
        """Deterministic sort key used for boundary-application order."""
        return (self.kind != "physical", self.block, FACES.index(self.face), self.box)


def make_connected_pair(block_a, face_a, box_a, block_b, face_b, box_b,
                        axis_map=IDENTITY_ORIENTATION, link_id=0):
    """Build the two matching specs of one connection (possibly self)."""
    a = BoundarySpec(kind="connected", block=block_a, face=face_a, box=tuple(box_a),
                     neighbor_block=block_b, neighbor_face=face_b,
                     neighbor_box=tuple(box_b), axis_map=tuple(axis_map),
                     link_id=link_id)
    b = BoundarySpec(kind="connected", block=block_b, face=face_b, box=tuple(box_b),
                     neighbor_block=block_a, neighbor_face=face_a,
                     neighbor_box=tuple(box_a), axis_map=invert_axis_map(axis_map),
                     link_id=link_id)
    a.validate_pair(b)
    b.validate_pair(a)
    return a, b


def with_box(spec: BoundarySpec, box, neighbor_box=None) -> BoundarySpec:
    if neighbor_box is None:
        return replace(spec, box=tuple(box))
    return replace(spec, box=tuple(box), neighbor_box=tuple(neighbor_box))


# ---------------------------------------------------------------------------
# Halo exchange regions
# ---------------------------------------------------------------------------
#
# Exchanges run in two rounds. Round 1 moves the face region proper: the
# ghost_depth interior layers adjacent to the face over the patch's own
# tangential ranges. Round 2 re-sends the region with tangential ranges
# extended by the ghost depth: the extension reaches into the sender's own
# (now freshly filled) ghost columns, which is what delivers exact edge and
# corner ghost values to the receiver. All boxes are in padded array indices.

def _normal_ranges(side, dims_axis, pad_axis, depth):
    if side == 0:
        send = (pad_axis, pad_axis + depth)
        recv = (pad_axis - depth, pad_axis)
    else:
        hi = pad_axis + dims_axis
        send = (hi - depth, hi)
        recv = (hi, hi + depth)
    return send, recv


def halo_regions(spec: BoundarySpec, dims, ghost, round_no: int):
    """Padded send/recv boxes of one connected-spec endpoint for one round.

    dims, ghost : the owning block's interior dims and per-axis ghost depths
    Returns (send_box, recv_box) as 3-axis half-open padded index ranges.
    The send box may reach into the block's own ghost columns in round 2.
    """
    if spec.kind != "connected":
        raise TopologyError("halo regions are defined for connected specs only")
    axis = spec.axis
    depth = ghost[axis]
    send_n, recv_n = _normal_ranges(spec.side, dims[axis], ghost[axis], depth)
    send, recv = [], []
    for a in range(3):
        if a == axis:
            send.append(send_n)
            recv.append(recv_n)
            continue
        lo, hi = spec.box[a]
        ext = ghost[a] if round_no == 2 else 0
        send.append((ghost[a] + lo - ext, ghost[a] + hi + ext))
        recv.append((ghost[a] + lo - ext, ghost[a] + hi + ext))
    return tuple(send), tuple(recv)


def normal_flip_needed(own_side: int, partner_side: int) -> bool:
    """Whether ghost-depth ordering flips between the paired face regions."""
    return own_side == partner_side
