"""Domain decomposition, aggregation load balancing, boundary re-linking and
deadlock-free exchange scheduling.

A DecompositionPlan tiles every parent block with child blocks, assigns each
child to a rank, and carries per-child boundary lists (inherited physical
patches, split connected patches, and the new sibling interfaces). Plans are
immutable once built and shared read-only by all rank workers.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import DecompositionError, TopologyError
from .mesh import Block, MultiBlockGrid
from .topology import (BoundarySpec, box_cells, box_intersection, box_shift,
                       face_axis, face_side, halo_regions, make_connected_pair,
                       with_box, FACES)

__all__ = [
    "ChildBlock", "DecompositionPlan", "ScheduleEntry", "ExchangeSchedule",
    "decompose", "aggregate", "relink_connected", "naive_schedule",
    "reorder_boundaries", "detect_deadlock", "estimate_comm_volume",
    "deadlock_demo_plan", "plan_to_dict", "plan_to_json",
]

FIELD_GROUPS_2D = (("rho", 1), ("vel", 2), ("p", 1), ("T", 1))
FIELD_GROUPS_3D = (("rho", 1), ("vel", 3), ("p", 1), ("T", 1))


@dataclass(frozen=True)
class ChildBlock:
    id: int
    parent: int
    offset: tuple          # cell offset of this child inside its parent
    dims: tuple
    rank: int

    def cell_count(self) -> int:
        return int(np.prod(self.dims))

    def cell_box(self):
        return tuple((o, o + d) for o, d in zip(self.offset, self.dims))


@dataclass
class DecompositionPlan:
    grid: MultiBlockGrid
    np_ranks: int
    children: list
    boundaries: dict                  # child id -> [BoundarySpec] (child-local)
    aggregated: bool = False

    _blocks: dict = field(default_factory=dict, repr=False)

    def child(self, child_id) -> ChildBlock:
        return self.children[child_id]

    def child_block(self, child_id) -> Block:
        """Child geometry cut from the parent's padded node lattice, so child
        ghost nodes reproduce the parent's real interior geometry at interior
        interfaces (and the parent's extrapolated ghosts at parent faces)."""
        if child_id not in self._blocks:
            c = self.children[child_id]
            parent = self.grid.block(c.parent)
            sl = []
            for a, g in enumerate(parent.ghost):
                if parent.ndim == 2 and a == 2:
                    break
                sl.append(slice(c.offset[a], c.offset[a] + c.dims[a] + 2 * g + 1))
            nodes = np.ascontiguousarray(parent.nodes[(slice(None), *sl)])
            self._blocks[child_id] = Block.from_padded_nodes(
                child_id, nodes, c.dims, parent.ndim, parent.ghost_depth)
        return self._blocks[child_id]

    def ranks(self):
        return sorted({c.rank for c in self.children})

    def rank_children(self, rank):
        return [c for c in self.children if c.rank == rank]

    def rank_loads(self):
        loads = {r: 0 for r in range(self.np_ranks)}
        for c in self.children:
            loads[c.rank] += c.cell_count()
        return loads

    def connected_specs(self):
        for cid in sorted(self.boundaries):
            for s in self.boundaries[cid]:
                if s.kind == "connected":
                    yield cid, s

    def validate(self):
        # Children tile each parent exactly.
        for parent in self.grid.blocks:
            kids = [c for c in self.children if c.parent == parent.id]
            total = sum(c.cell_count() for c in kids)
            if total != parent.cell_count():
                raise DecompositionError(
                    f"parent {parent.id}: child cells {total} != {parent.cell_count()}")
            boxes = [c.cell_box() for c in kids]
            for a, b in itertools.combinations(boxes, 2):
                if box_intersection(a, b) is not None:
                    raise DecompositionError(
                        f"parent {parent.id}: overlapping children {a} {b}")
        # Connected child specs pair up consistently.
        by_link = {}
        for cid, s in self.connected_specs():
            by_link.setdefault(s.link_id, []).append(s)
        for link_id, specs in by_link.items():
            if len(specs) != 2:
                raise TopologyError(
                    f"child link {link_id} has {len(specs)} endpoints")
            specs[0].validate_pair(specs[1])
        return self


# ---------------------------------------------------------------------------
# Clustered decomposition
# ---------------------------------------------------------------------------

def _split_axes(ndim, split_dims):
    """Axes allowed to split, most non-contiguous first (k, then j, then i)."""
    order = (2, 1, 0) if ndim == 3 else (1, 0)
    return order[:min(split_dims, len(order))]


def _factorizations(n, naxes):
    """All ordered tuples of `naxes` positive ints with product n."""
    if naxes == 1:
        yield (n,)
        return
    for f in range(1, n + 1):
        if n % f == 0:
            for rest in _factorizations(n // f, naxes - 1):
                yield (f, *rest)


def _lattice_for(dims, share, axes, ghost_depth):
    """Pick the per-axis split counts for one parent.

    Minimizes the internal-interface cell count (surface-to-volume proxy);
    ties prefer splitting the most non-contiguous axis. Split counts on axes
    outside `axes` stay 1.
    """
    best = None
    for combo in _factorizations(share, len(axes)):
        counts = [1, 1, 1]
        for ax, f in zip(axes, combo):
            counts[ax] = f
        if any(f > dims[ax] for ax, f in zip(axes, combo)):
            continue
        if any(dims[a] // counts[a] < ghost_depth for a in range(3) if counts[a] > 1):
            continue  # slices too thin for the stencil
        proxy = 0
        for a in range(3):
            tang = np.prod([dims[b] for b in range(3) if b != a])
            proxy += (counts[a] - 1) * tang
        key = (proxy, -counts[2], -counts[1], -counts[0])
        if best is None or key < best[0]:
            best = (key, counts)
    if best is None:
        raise DecompositionError(
            f"cannot split dims {dims} into {share} pieces: slice too thin "
            f"(children need at least ghost_depth={ghost_depth} cells per split axis)")
    return best[1]


def _axis_offsets(n, parts):
    sizes = [n // parts + (1 if t < n % parts else 0) for t in range(parts)]
    offs = [0]
    for s in sizes[:-1]:
        offs.append(offs[-1] + s)
    return offs, sizes


def _apportion_ranks(grid, np_ranks):
    """Ranks per parent, proportional to cell counts, each parent >= 1."""
    cells = [b.cell_count() for b in grid.blocks]
    total = sum(cells)
    raw = [np_ranks * c / total for c in cells]
    shares = [max(1, math.floor(r)) for r in raw]
    while sum(shares) > np_ranks:  # forced minimums overshot
        candidates = [i for i in range(len(shares)) if shares[i] > 1]
        i = max(candidates, key=lambda i: shares[i] - raw[i])
        shares[i] -= 1
    while sum(shares) < np_ranks:  # hand out leftovers by remainder
        i = max(range(len(shares)), key=lambda i: (raw[i] - shares[i], -i))
        shares[i] += 1
    return shares


def decompose(grid: MultiBlockGrid, np_ranks: int, split_dims: int = 3) -> DecompositionPlan:
    """Processor-clustered Cartesian decomposition: each parent's share of the
    ranks splits that parent into a near-cubic child lattice, one child per
    rank."""
    if np_ranks < 1:
        raise DecompositionError(f"np must be >= 1, got {np_ranks}")
    if np_ranks < grid.parent_count:
        raise DecompositionError(
            f"np={np_ranks} < {grid.parent_count} parent blocks; "
            "use aggregation (aggregate / --aggregate) for this regime")
    if split_dims not in (1, 2, 3):
        raise DecompositionError(f"split_dims must be 1, 2 or 3, got {split_dims}")

    shares = _apportion_ranks(grid, np_ranks)
    axes = _split_axes(grid.ndim, split_dims)
    ghost_depth = grid.blocks[0].ghost_depth

    counts_per_parent = {}
    for parent, share in zip(grid.blocks, shares):
        counts_per_parent[parent.id] = _lattice_for(parent.dims, share, axes,
                                                    ghost_depth)
    plan = _build_plan(grid, np_ranks, counts_per_parent, rank_of=None)
    return plan.validate()


def _build_plan(grid, np_ranks, counts_per_parent, rank_of):
    """Assemble children + boundaries given per-parent lattice split counts.

    rank_of: None assigns ranks sequentially in child order; otherwise a
    callable (child_index -> rank) from the aggregation assignment.
    """
    children = []
    child_of_cell = {}  # (parent, lattice coords) -> child id
    lattice = {}
    for parent in grid.blocks:
        counts = counts_per_parent[parent.id]
        offs = [_axis_offsets(parent.dims[a], counts[a]) for a in range(3)]
        lattice[parent.id] = (counts, offs)
        for ci in range(counts[0]):
            for cj in range(counts[1]):
                for ck in range(counts[2]):
                    cid = len(children)
                    offset = (offs[0][0][ci], offs[1][0][cj], offs[2][0][ck])
                    dims = (offs[0][1][ci], offs[1][1][cj], offs[2][1][ck])
                    rank = cid if rank_of is None else rank_of(cid)
                    children.append(ChildBlock(cid, parent.id, offset, dims, rank))
                    child_of_cell[(parent.id, (ci, cj, ck))] = cid

    boundaries = {c.id: [] for c in children}
    next_link = 0

    # Sibling interfaces inside each parent.
    for parent in grid.blocks:
        counts, offs = lattice[parent.id]
        for coords, cid in [(k[1], v) for k, v in child_of_cell.items()
                            if k[0] == parent.id]:
            c = children[cid]
            for a in range(3):
                if coords[a] + 1 >= counts[a]:
                    continue
                ncoords = list(coords)
                ncoords[a] += 1
                nid = child_of_cell[(parent.id, tuple(ncoords))]
                n = children[nid]
                box_a = [(0, c.dims[x]) for x in range(3)]
                box_a[a] = (c.dims[a] - 1, c.dims[a])
                box_b = [(0, n.dims[x]) for x in range(3)]
                box_b[a] = (0, 1)
                sa, sb = make_connected_pair(
                    cid, FACES[2 * a + 1], box_a, nid, FACES[2 * a], box_b,
                    link_id=next_link)
                next_link += 1
                boundaries[cid].append(sa)
                boundaries[nid].append(sb)

    # Parent physical boundaries, intersected with each child.
    for spec in grid.boundaries:
        if spec.kind != "physical":
            continue
        for c in children:
            if c.parent != spec.block:
                continue
            patch = box_intersection(spec.box, c.cell_box())
            if patch is None:
                continue
            boundaries[c.id].append(
                BoundarySpec(kind="physical", block=c.id, face=spec.face,
                             box=box_shift(patch, c.offset, -1),
                             bc_type=spec.bc_type))

    # Parent connected boundaries: split and re-link across both child sets.
    seen_links = set()
    for spec in grid.boundaries:
        if spec.kind != "connected" or spec.link_id in seen_links:
            continue
        seen_links.add(spec.link_id)
        next_link = _split_connected(spec, grid, children, boundaries, next_link)

    for cid in boundaries:
        boundaries[cid].sort(key=lambda s: s.canonical_key())

    return DecompositionPlan(grid=grid, np_ranks=np_ranks, children=children,
                             boundaries=boundaries)


def _split_connected(spec, grid, children, boundaries, next_link):
    """Intersect one parent connection with every owner/neighbor child pair."""
    owner_kids = [c for c in children if c.parent == spec.block]
    nbr_kids = [c for c in children if c.parent == spec.neighbor_block]
    for a in owner_kids:
        patch = box_intersection(spec.box, a.cell_box())
        if patch is None:
            continue
        mapped = spec.map_box(patch)
        for b in nbr_kids:
            piece_nbr = box_intersection(mapped, b.cell_box())
            if piece_nbr is None:
                continue
            piece_own = _inverse_map_box(spec, piece_nbr)
            sa, sb = make_connected_pair(
                a.id, spec.face, box_shift(piece_own, a.offset, -1),
                b.id, spec.neighbor_face, box_shift(piece_nbr, b.offset, -1),
                axis_map=spec.axis_map, link_id=next_link)
            next_link += 1
            boundaries[a.id].append(sa)
            boundaries[b.id].append(sb)
    return next_link


def _inverse_map_box(spec, nbr_box):
    out = [None] * 3
    for a, (b, sgn) in enumerate(spec.axis_map):
        lo = spec.box[a][0]
        nlo, nhi = spec.neighbor_box[b]
        b0, b1 = nbr_box[b]
        if sgn > 0:
            out[a] = (lo + (b0 - nlo), lo + (b1 - nlo))
        else:
            out[a] = (lo + (nhi - b1), lo + (nhi - b0))
    return tuple(out)


# ---------------------------------------------------------------------------
# Aggregation (over-decomposition + greedy co-assignment)
# ---------------------------------------------------------------------------

def _greedy_assign(unit_sizes, np_ranks):
    """Largest unit first onto the least-loaded rank; ties to the lowest rank."""
    order = sorted(range(len(unit_sizes)), key=lambda i: (-unit_sizes[i], i))
    loads = [0] * np_ranks
    assign = [None] * len(unit_sizes)
    for i in order:
        r = min(range(np_ranks), key=lambda r: (loads[r], r))
        assign[i] = r
        loads[r] += unit_sizes[i]
    return assign, loads


def aggregate(grid: MultiBlockGrid, np_ranks: int) -> DecompositionPlan:
    """Over-decompose parents into units and co-assign units to ranks so the
    cell load balances; same-rank connections need no messages.

    Unit counts are found by a bounded exhaustive search (per-parent counts up
    to 4 per rank), minimizing (load ratio, total units, max units/parent); the
    all-ones candidate is always included, so aggregation never loses to the
    naive parent-per-rank assignment.
    """
    if np_ranks < 1:
        raise DecompositionError(f"np must be >= 1, got {np_ranks}")
    cells = [b.cell_count() for b in grid.blocks]
    total = sum(cells)
    ghost_depth = grid.blocks[0].ghost_depth
    axes = _split_axes(grid.ndim, 3)

    feasible_units = []
    for parent, c in zip(grid.blocks, cells):
        cap = min(4 * np_ranks, max(1, math.ceil(4 * np_ranks * c / total)) + 2)
        ok = []
        for u in range(1, cap + 1):
            try:
                _lattice_for(parent.dims, u, axes, ghost_depth)
            except DecompositionError:
                continue
            ok.append(u)
        feasible_units.append(ok)

    combos = itertools.product(*feasible_units)
    space = np.prod([len(m) for m in feasible_units])
    if space > 200_000:
        allowed = [set(m) for m in feasible_units]
        combos = [c for c in _heuristic_unit_combos(cells, np_ranks)
                  if all(u in a for u, a in zip(c, allowed))]

    best = None
    for combo in combos:
        if sum(combo) < np_ranks:
            continue
        units = []
        for u, c in zip(combo, cells):
            q, r = divmod(c, u)
            units.extend([q + 1] * r + [q] * (u - r))
        assign, loads = _greedy_assign(units, np_ranks)
        if min(loads) == 0:
            continue
        ratio = max(loads) / min(loads)
        # Splitting a parent adds interfaces, so prefer fewer split parents,
        # then fewer units overall.
        key = (round(ratio, 12), sum(1 for u in combo if u > 1), sum(combo),
               max(combo))
        if best is None or key < best[0]:
            best = (key, combo)
    if best is None:
        raise DecompositionError(
            f"aggregation found no feasible unit split for np={np_ranks}")
    combo = best[1]

    counts_per_parent = {}
    unit_order = []  # (parent, lattice coords) in child construction order
    for parent, u in zip(grid.blocks, combo):
        counts = _lattice_for(parent.dims, u, axes, ghost_depth)
        counts_per_parent[parent.id] = counts

    # Recompute the greedy assignment against the actual lattice unit sizes,
    # in the same child enumeration order as _build_plan.
    sizes = []
    for parent in grid.blocks:
        counts = counts_per_parent[parent.id]
        offs = [_axis_offsets(parent.dims[a], counts[a]) for a in range(3)]
        for ci in range(counts[0]):
            for cj in range(counts[1]):
                for ck in range(counts[2]):
                    sizes.append(offs[0][1][ci] * offs[1][1][cj] * offs[2][1][ck])
    assign, _ = _greedy_assign(sizes, np_ranks)

    plan = _build_plan(grid, np_ranks, counts_per_parent,
                       rank_of=lambda cid: assign[cid])
    plan.aggregated = True
    return plan.validate()


def _heuristic_unit_combos(cells, np_ranks):
    """Fallback sweep when the exhaustive window is too large: proportional
    unit counts at granularities m*np, m = 1..4, plus the all-ones split."""
    total = sum(cells)
    combos = [tuple([1] * len(cells))]
    for m in range(1, 5):
        q = total / (m * np_ranks)
        combos.append(tuple(max(1, round(c / q)) for c in cells))
    return combos


# ---------------------------------------------------------------------------
# Re-linking and scheduling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Link:
    link_id: int
    child_a: int
    child_b: int
    rank_a: int
    rank_b: int
    tag: int
    local: bool


def relink_connected(plan: DecompositionPlan):
    """Neighbor-rank table: link_id -> Link with ranks, message tag, locality."""
    endpoints = {}
    for cid, s in plan.connected_specs():
        endpoints.setdefault(s.link_id, []).append((cid, s))
    table = {}
    for link_id in sorted(endpoints):
        eps = endpoints[link_id]
        if len(eps) != 2:
            raise TopologyError(f"link {link_id}: {len(eps)} endpoints after relink")
        (ca, sa), (cb, sb) = eps
        sa.validate_pair(sb)
        ra, rb = plan.child(ca).rank, plan.child(cb).rank
        table[link_id] = Link(link_id=link_id, child_a=ca, child_b=cb,
                              rank_a=ra, rank_b=rb, tag=link_id,
                              local=(ra == rb))
    return table


@dataclass(frozen=True)
class ScheduleEntry:
    child: int
    spec: BoundarySpec
    peer_rank: int
    peer_child: int
    tag: int
    local: bool


@dataclass
class ExchangeSchedule:
    """Per-rank ordered connected-boundary processing lists."""
    per_rank: dict                    # rank -> [ScheduleEntry]
    reordered: bool

    def entries(self, rank):
        return self.per_rank.get(rank, [])


def _schedule_from_order(plan, order_key=None):
    links = relink_connected(plan)
    per_rank = {r: [] for r in range(plan.np_ranks)}
    entries = []
    for cid, s in plan.connected_specs():
        link = links[s.link_id]
        peer_child = link.child_b if cid == link.child_a else link.child_a
        # A self-connected spec pairs a child with itself; both specs list it.
        if link.child_a == link.child_b:
            peer_child = cid
        peer_rank = plan.child(peer_child).rank
        entries.append(ScheduleEntry(child=cid, spec=s, peer_rank=peer_rank,
                                     peer_child=peer_child, tag=link.tag,
                                     local=link.local))
    if order_key is not None:
        entries.sort(key=order_key)
    for e in entries:
        per_rank[plan.child(e.child).rank].append(e)
    return per_rank


def naive_schedule(plan: DecompositionPlan) -> ExchangeSchedule:
    """Boundaries in each block's listed order (no global coordination)."""
    return ExchangeSchedule(per_rank=_schedule_from_order(plan), reordered=False)


def reorder_boundaries(plan: DecompositionPlan) -> ExchangeSchedule:
    """Sort boundaries by the global canonical key (rank pair, then face cell
    ranges), giving both endpoints of every link the same relative order; the
    resulting wait graph is acyclic under per-boundary blocking waits."""

    def key(e: ScheduleEntry):
        own_rank = plan.child(e.child).rank
        lo, hi = sorted((own_rank, e.peer_rank))
        boxes = tuple(sorted((e.spec.box, e.spec.neighbor_box)))
        return (lo, hi, boxes, e.tag)

    return ExchangeSchedule(per_rank=_schedule_from_order(plan, key), reordered=True)


def detect_deadlock(schedule: ExchangeSchedule):
    """All elementary cycles of the blocking-wait dependency graph.

    Rank r's n-th blocking wait needs its partner to have posted the matching
    operation, which happens only after the partner's earlier blocking waits
    complete. Local copies never block and are skipped. Returns a list of
    cycles, each a list of (rank, link tag) nodes.
    """
    # Position of every (rank, tag) in its rank's blocking sequence.
    blocking = {}
    for rank, entries in schedule.per_rank.items():
        seq = [e for e in entries if not e.local]
        for pos, e in enumerate(seq):
            blocking[(rank, e.tag)] = (pos, seq)

    graph = nx.DiGraph()
    for (rank, tag), (pos, seq) in blocking.items():
        graph.add_node((rank, tag))
        partner = seq[pos].peer_rank
        if (partner, tag) not in blocking:
            continue
        ppos, pseq = blocking[(partner, tag)]
        for j in range(ppos):
            graph.add_edge((rank, tag), (partner, pseq[j].tag))
    return [cycle for cycle in nx.simple_cycles(graph)]


# ---------------------------------------------------------------------------
# Communication estimates and demo topology
# ---------------------------------------------------------------------------

def estimate_comm_volume(plan: DecompositionPlan, rounds: int = 1,
                         scalar_bytes: int = 8):
    """Analytic per-rank remote traffic per exchange step.

    Returns {rank: {"messages": n, "bytes": n}} counting sends from that rank;
    matches the exchange engine's measured counters for the same rounds.
    """
    ndim = plan.grid.ndim
    groups = FIELD_GROUPS_2D if ndim == 2 else FIELD_GROUPS_3D
    nfields = sum(n for _, n in groups)
    out = {r: {"messages": 0, "bytes": 0} for r in range(plan.np_ranks)}
    for cid, s in plan.connected_specs():
        child = plan.child(cid)
        peer = s.neighbor_block
        peer_rank = plan.child(peer).rank
        if peer_rank == child.rank:
            continue
        blk = plan.child_block(cid)
        for rnd in range(1, rounds + 1):
            send, _ = halo_regions(s, child.dims, blk.ghost, rnd)
            cells = box_cells(send)
            out[child.rank]["messages"] += len(groups)
            out[child.rank]["bytes"] += cells * nfields * scalar_bytes
    return out


def deadlock_demo_plan(grid: MultiBlockGrid, np_ranks: int = 4) -> DecompositionPlan:
    """Ring decomposition reproducing the 4-rank circular-dependency scenario.

    Splits a self-connected single-block 2D case (the annulus) along the wrap
    direction into np children, one per rank; with the naive per-child
    boundary order every rank waits on its wrap-side link first, forming one
    cycle through all ranks.
    """
    if grid.parent_count != 1 or grid.ndim != 2:
        raise DecompositionError("deadlock demo needs a single-block 2D case")
    parent = grid.blocks[0]
    if parent.dims[0] // np_ranks < parent.ghost_depth:
        raise DecompositionError("too many ranks for the demo ring")
    counts = {parent.id: (np_ranks, 1, 1)}
    plan = _build_plan(grid, np_ranks, counts, rank_of=None)
    return plan.validate()


def plan_to_dict(plan: DecompositionPlan, schedule: ExchangeSchedule | None = None):
    def spec_dict(s):
        d = {"kind": s.kind, "block": s.block, "face": s.face,
             "box": [list(r) for r in s.box]}
        if s.kind == "physical":
            d["bc_type"] = s.bc_type
        else:
            d.update(neighbor_block=s.neighbor_block, neighbor_face=s.neighbor_face,
                     neighbor_box=[list(r) for r in s.neighbor_box],
                     axis_map=[list(e) for e in s.axis_map], link_id=s.link_id)
        return d

    out = {
        "np": plan.np_ranks,
        "aggregated": plan.aggregated,
        "parents": [{"id": b.id, "dims": list(b.dims)} for b in plan.grid.blocks],
        "children": [{"id": c.id, "parent": c.parent, "offset": list(c.offset),
                      "dims": list(c.dims), "rank": c.rank}
                     for c in plan.children],
        "boundaries": {str(cid): [spec_dict(s) for s in specs]
                       for cid, specs in sorted(plan.boundaries.items())},
    }
    if schedule is not None:
        out["schedule"] = {
            "reordered": schedule.reordered,
            "order": {str(r): [{"child": e.child, "tag": e.tag, "local": e.local,
                                "peer_rank": e.peer_rank}
                               for e in entries]
                      for r, entries in sorted(schedule.per_rank.items())},
        }
    return out


def plan_to_json(plan, schedule=None, **kwargs) -> str:
    return json.dumps(plan_to_dict(plan, schedule), indent=2, **kwargs)
