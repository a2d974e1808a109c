"""Pack/unpack primitives for connected-boundary ghost data.

Buffers are per field group: density, interleaved velocity components,
pressure, temperature. Entries are linearized i-fastest over the region box
(Fortran ravel), matching the block storage layout. The receiving side undoes
the partner's axis order with the spec's orientation map; ghost depth g always
receives the partner's g-th interior layer, so the normal axis flips exactly
when the two faces are same-sided.

Round semantics (see topology.halo_regions): round 1 moves partner interior
onto face ghosts; round 2 re-sends with tangential ranges widened by the ghost
depth, sourcing the partner's own freshly filled ghosts, which delivers exact
edge/corner ghost values. Round-2 sends must be packed before any round-2
unpack is applied on the same rank (snapshot semantics); both the serial and
threaded drivers do this.
"""

from __future__ import annotations

import numpy as np

from .topology import BoundarySpec, halo_regions, normal_flip_needed

VELOCITY_COMPONENTS = ("u", "v", "w")


def field_groups(ndim):
    """(group name, component field names) in buffer order."""
    return (("rho", ("rho",)),
            ("vel", VELOCITY_COMPONENTS[:ndim]),
            ("p", ("p",)),
            ("T", ("T",)))


def scalar_field_count(ndim):
    return 3 + ndim


def box_slices(box):
    return tuple(slice(lo, hi) for lo, hi in box)


def box_shape(box):
    return tuple(hi - lo for lo, hi in box)


def pack_face(fields, spec: BoundarySpec, dims, ghost, round_no=1):
    """Pack one connected boundary's send region into contiguous buffers.

    fields : mapping of field name -> padded block array
    Returns {group: array}; "vel" is (ncomp, n) with components interleaved,
    scalar groups are flat length-n arrays.
    """
    send, _ = halo_regions(spec, dims, ghost, round_no)
    sl = box_slices(send)
    ndim = 2 if ghost[2] == 0 else 3
    out = {}
    for group, comps in field_groups(ndim):
        if len(comps) == 1:
            out[group] = fields[comps[0]][sl].ravel(order="F")
        else:
            flat = [fields[c][sl].ravel(order="F") for c in comps]
            buf = np.empty((len(comps), flat[0].size), order="F")
            for i, f in enumerate(flat):
                buf[i] = f
            out[group] = buf
    return out


def unpack_face(buffers, fields, spec: BoundarySpec, dims, ghost,
                partner_side, round_no=1):
    """Scatter received buffers into this block's ghost region.

    The buffers were packed by the partner endpoint of `spec`; partner_side is
    the partner face's side (0 min / 1 max), which fixes the depth ordering.
    Ghost cells only are written; interior cells are never touched.
    """
    _, recv = halo_regions(spec, dims, ghost, round_no)
    shape_own = box_shape(recv)
    ndim = 2 if ghost[2] == 0 else 3
    # Partner's send box shape, axis-permuted: partner axis b holds the length
    # of the own axis mapped onto it.
    perm = [spec.axis_map[a][0] for a in range(3)]
    shape_partner = [0, 0, 0]
    for a in range(3):
        shape_partner[perm[a]] = shape_own[a]
    expected = int(np.prod(shape_partner))

    sl = box_slices(recv)
    for group, comps in field_groups(ndim):
        buf = buffers[group]
        rows = buf if len(comps) > 1 else [buf]
        for comp_name, row in zip(comps, rows):
            if row.size != expected:
                raise ValueError(
                    f"buffer for {comp_name!r} has {row.size} entries, "
                    f"boundary needs {expected}")
            arr = np.asarray(row).reshape(shape_partner, order="F")
            arr = np.transpose(arr, axes=perm)
            for a in range(3):
                if a == spec.axis:
                    if normal_flip_needed(spec.side, partner_side):
                        arr = np.flip(arr, axis=a)
                elif spec.axis_map[a][1] < 0:
                    arr = np.flip(arr, axis=a)
            fields[comp_name][sl] = arr


def copy_local(src_fields, dst_fields, dst_spec: BoundarySpec, src_spec: BoundarySpec,
               src_dims, src_ghost, dst_dims, dst_ghost, round_no=1):
    """Serve one link direction by direct copy (same-rank neighbors)."""
    buffers = pack_face(src_fields, src_spec, src_dims, src_ghost, round_no)
    unpack_face(buffers, dst_fields, dst_spec, dst_dims, dst_ghost,
                src_spec.side, round_no)
    return buffers
