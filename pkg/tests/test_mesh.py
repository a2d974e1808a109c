import io

import numpy as np
import pytest

from blockflow import mesh
from blockflow.errors import GridFormatError, MetricError

import oracles


def grid_text(nblocks, blocks):
    """Assemble grid-file text from (header, coord-lines) pieces."""
    out = [str(nblocks)]
    for header, coords in blocks:
        out.append(header)
        out.extend(coords)
    return io.StringIO("\n".join(out) + "\n")


def unit_square_2x2_text():
    coords = []
    for j in range(3):
        for i in range(3):
            coords.append(f"{i * 0.5} {j * 0.5}")
    return grid_text(1, [("0 2 2 0", coords)])


class TestLoadGrid:
    def test_smallest_well_formed_input(self):
        grid = mesh.load_grid(unit_square_2x2_text())
        b = grid.blocks[0]
        assert b.dims == (2, 2, 1)
        assert b.ndim == 2
        interior = b.nodes[:, 2:5, 2:5]
        assert interior.shape == (2, 3, 3)  # 9 nodes
        assert interior[0, 2, 0] == 1.0 and interior[1, 0, 2] == 1.0

    def test_degenerate_block_rejected(self):
        src = grid_text(1, [("0 0 2 0", ["0 0"] * 3)])
        with pytest.raises(GridFormatError, match="degenerate"):
            mesh.load_grid(src)

    def test_malformed_header(self):
        with pytest.raises(GridFormatError, match="header"):
            mesh.load_grid(io.StringIO("not_a_number\n"))

    def test_coordinate_count_mismatch_names_block_and_offset(self):
        coords = [f"{i * 0.5} {j * 0.5}" for j in range(3) for i in range(3)]
        coords[4] = "0.5 0.5 0.5 9"
        with pytest.raises(GridFormatError, match=r"block 0.*node 4"):
            mesh.load_grid(grid_text(1, [("0 2 2 0", coords)]))

    def test_truncated_file(self):
        coords = [f"{i * 0.5} {j * 0.5}" for j in range(2) for i in range(3)]
        with pytest.raises(GridFormatError, match="end of file"):
            mesh.load_grid(grid_text(1, [("0 2 2 0", coords)]))

    def test_four_parent_file_round_trip(self, tmp_path):
        grid = mesh.generate_case_grid("multiblock_box_3d", 0)
        path = tmp_path / "wing_like.grd"
        mesh.save_grid(grid, path)
        loaded = mesh.load_grid(path)
        assert loaded.parent_count == 4
        assert [b.dims for b in loaded.blocks] == [b.dims for b in grid.blocks]
        for a, b in zip(loaded.blocks, grid.blocks):
            np.testing.assert_array_equal(a.nodes, b.nodes)


class TestBlock:
    def test_ghost_shell_outside_interior(self):
        b = mesh.make_cartesian_block(0, (4, 3), (0, 0), (1, 1), 2)
        assert b.shape == (8, 7, 1)
        inner = b.interior()
        assert inner == (slice(2, 6), slice(2, 5), slice(0, 1))
        f = b.allocate_field()
        assert f.flags.f_contiguous
        f[inner] = 1.0
        assert f.sum() == 12.0  # no ghost cell was touched

    def test_ghost_nodes_linear_extrapolation(self):
        b = mesh.make_cartesian_block(0, (4, 4), (0, 0), (1, 1), 2)
        x = b.nodes[0]
        # Uniform spacing 0.25 continues into the ghost lattice.
        assert x[1, 3] == pytest.approx(-0.25, abs=1e-15)
        assert x[0, 3] == pytest.approx(-0.50, abs=1e-15)
        assert x[-1, 3] == pytest.approx(1.50, abs=1e-15)

    def test_ghost_depth_floor(self):
        nodes = np.stack(np.meshgrid(np.linspace(0, 1, 3), np.linspace(0, 1, 3),
                                     indexing="ij"))
        with pytest.raises(ValueError):
            mesh.Block(0, nodes, 2, ghost_depth=1)


class TestComputeMetrics:
    def test_unit_cartesian_cell(self):
        b = mesh.make_cartesian_block(0, (1, 1, 1), (0, 0, 0), (1, 1, 1), 3)
        m = mesh.compute_metrics(b)
        assert m.volume[b.interior()].item() == pytest.approx(1.0, rel=1e-14)
        for d in range(3):
            areas = m.areas(d)
            np.testing.assert_allclose(areas, 1.0, rtol=1e-14)
            normals = m.unit_normals(d)
            expected = np.zeros(3)
            expected[d] = 1.0
            for f in range(2):
                idx = [0, 0, 0]
                idx[d] = f
                np.testing.assert_allclose(normals[(slice(None), *idx)],
                                           expected, atol=1e-14)

    def test_rectangle_area(self):
        nodes = np.stack(np.meshgrid(np.array([0.0, 2.0]), np.array([0.0, 1.0]),
                                     indexing="ij"))
        b = mesh.Block(0, nodes, 2)
        m = mesh.compute_metrics(b)
        assert m.volume[b.interior()].item() == pytest.approx(2.0, rel=1e-14)

    def test_perturbed_hex_volume_matches_quadrature_oracle(self):
        rng = np.random.default_rng(42)
        nodes = np.stack(np.meshgrid(*[np.linspace(0, 1, 5)] * 3, indexing="ij"))
        nodes = nodes + rng.normal(scale=0.04, size=nodes.shape)
        b = mesh.Block(0, nodes, 3)
        m = mesh.compute_metrics(b)
        g = b.ghost_depth
        for idx in [(0, 0, 0), (1, 2, 3), (3, 1, 0), (2, 2, 2)]:
            corners = [[[np.array([b.nodes[c][g + idx[0] + di, g + idx[1] + dj,
                                               g + idx[2] + dk] for c in range(3)])
                         for dk in (0, 1)] for dj in (0, 1)] for di in (0, 1)]
            want = oracles.hex_volume_quadrature(corners)
            got = m.volume[g + idx[0], g + idx[1], g + idx[2]]
            assert got == pytest.approx(want, rel=1e-12)

    def test_inverted_cell_reported(self):
        nodes = np.stack(np.meshgrid(np.array([0.0, 1.0]), np.array([0.0, 1.0]),
                                     indexing="ij"))
        nodes = nodes[:, ::-1, :]  # flip i: negative shoelace area
        b = mesh.Block(0, np.ascontiguousarray(nodes), 2)
        with pytest.raises(MetricError, match="inverted cell"):
            mesh.compute_metrics(b)

    def test_unit_normal_magnitudes(self):
        grid = mesh.generate_case_grid("inlet_ramp_2d", 0)
        b = grid.blocks[0]
        m = mesh.compute_metrics(b)
        for d in (0, 1):
            norms = np.sqrt(np.sum(m.unit_normals(d) ** 2, axis=0))
            np.testing.assert_allclose(norms, 1.0, atol=1e-14)


def _watertight_max(block):
    m = mesh.compute_metrics(block)
    svs = [m.face_vectors[d][m.interior_faces(d)] if m.face_vectors[d] is not None
           else None for d in range(3)]
    if block.ndim == 2:
        closure = (svs[0][:, 1:, :, :] - svs[0][:, :-1, :, :]
                   + svs[1][:, :, 1:, :] - svs[1][:, :, :-1, :])
        scale = max(m.areas(0).max(), m.areas(1).max())
    else:
        closure = (svs[0][:, 1:, :, :] - svs[0][:, :-1, :, :]
                   + svs[1][:, :, 1:, :] - svs[1][:, :, :-1, :]
                   + svs[2][:, :, :, 1:] - svs[2][:, :, :, :-1])
        scale = max(m.areas(d).max() for d in range(3))
    return np.abs(closure).max() / scale


class TestInvariants:
    @pytest.mark.parametrize("case", mesh.CASE_PRESETS)
    def test_watertightness(self, case):
        grid = mesh.generate_case_grid(case, 0)
        for b in grid.blocks:
            assert _watertight_max(b) <= 1e-12

    def test_watertightness_random_3d(self):
        rng = np.random.default_rng(3)
        nodes = np.stack(np.meshgrid(*[np.linspace(0, 1, 6)] * 3, indexing="ij"))
        nodes = nodes + rng.normal(scale=0.05, size=nodes.shape)
        assert _watertight_max(mesh.Block(0, nodes, 3)) <= 1e-12

    @pytest.mark.parametrize("case", mesh.CASE_PRESETS)
    def test_refinement_volume_invariance(self, case):
        totals = []
        for level in (0, 1, 2):
            grid = mesh.generate_case_grid(case, level)
            totals.append(sum(mesh.compute_metrics(b).volume[b.interior()].sum()
                              for b in grid.blocks))
        for t in totals[1:]:
            assert t == pytest.approx(totals[0], rel=1e-10)


class TestCaseGrids:
    def test_inlet_paper_resolutions(self):
        assert mesh.generate_case_grid("inlet_ramp_2d", 0).blocks[0].dims == (52, 16, 1)
        assert mesh.generate_case_grid("inlet_ramp_2d", 3).blocks[0].dims == (416, 128, 1)

    def test_annulus_self_connection(self):
        grid = mesh.generate_case_grid("c_annulus_2d", 0)
        seams = [s for s in grid.boundaries if s.kind == "connected"]
        assert len(seams) == 2
        for s in seams:
            assert s.neighbor_block == s.block == 0
        faces = {s.face for s in seams}
        assert faces == {"i_min", "i_max"}
        # Seam nodes coincide: the wrap is geometrically closed.
        b = grid.blocks[0]
        g = b.ghost_depth
        np.testing.assert_allclose(b.nodes[:, g, g:-g], b.nodes[:, -g - 1, g:-g],
                                   atol=1e-12)

    def test_box3d_parent_sizes_match_aggregation_scenario(self):
        grid = mesh.generate_case_grid("multiblock_box_3d", 0)
        cells = sorted((b.cell_count() for b in grid.blocks), reverse=True)
        ratios = [c / cells[-1] for c in cells]
        assert ratios == [4.0, 2.0, 1.0, 1.0]

    def test_box3d_cyclic_refinement(self):
        d0 = [b.dims for b in mesh.generate_case_grid("multiblock_box_3d", 0).blocks]
        d1 = [b.dims for b in mesh.generate_case_grid("multiblock_box_3d", 1).blocks]
        d2 = [b.dims for b in mesh.generate_case_grid("multiblock_box_3d", 2).blocks]
        for a, b in zip(d0, d1):
            assert b == (a[0], a[1], 2 * a[2])        # z first
        for a, b in zip(d1, d2):
            assert b == (a[0], 2 * a[1], a[2])        # then y

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown case preset"):
            mesh.generate_case_grid("bogus", 0)

    def test_duplicate_block_ids_rejected(self):
        b0 = mesh.make_cartesian_block(0, (2, 2), (0, 0), (1, 1), 2)
        b1 = mesh.make_cartesian_block(0, (2, 2), (1, 0), (2, 1), 2)
        with pytest.raises(GridFormatError, match="duplicate"):
            mesh.MultiBlockGrid(blocks=[b0, b1])
