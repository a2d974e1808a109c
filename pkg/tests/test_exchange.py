import itertools

import numpy as np
import pytest

from blockflow import decomp, exchange, halo, mesh, physics, solver
from blockflow.errors import DeadlockError
from blockflow.topology import halo_regions, make_connected_pair

import oracles

GAS = physics.GasModel()
FS = solver.FreestreamState.from_mach(GAS, 2.0, 9.0e4, 280.0, 4.0, 2)
CFG = solver.SchemeConfig(flux="van_leer", limiter="van_albada", rk_stages=1,
                          cfl=0.5)


def ramp_fields(dims, ghost):
    """value = i + 10 j + 100 k (+1000 per field) over the padded lattice."""
    idx = np.meshgrid(*[np.arange(-g, d + g) for d, g in zip(dims, ghost)],
                      indexing="ij")
    base = idx[0] + 10.0 * idx[1] + 100.0 * idx[2]
    return {n: np.asfortranarray(base + k * 1000.0)
            for k, n in enumerate(("rho", "u", "v", "w", "p", "T"))}


def brute_force_ghost_fill(own_fields, src_fields, own_spec, src_spec,
                           own_dims, src_dims, own_ghost, src_ghost,
                           round_no=1):
    """Cell-by-cell oracle: map tangential coords through the affine
    orientation map; ghost depth g pairs with partner interior depth g."""
    ndim = 2 if own_dims[2] == 1 else 3
    names = ["rho", "u", "v", "p", "T"] + (["w"] if ndim == 3 else [])
    axis = own_spec.axis
    _, recv = halo_regions(own_spec, own_dims, own_ghost, round_no)
    out = {k: v.copy() for k, v in own_fields.items()}
    for idx in itertools.product(*(range(lo, hi) for lo, hi in recv)):
        depth = (own_ghost[axis] - 1 - idx[axis]) if own_spec.side == 0 \
            else (idx[axis] - own_ghost[axis] - own_dims[axis])
        cell = [idx[a] - own_ghost[a] for a in range(3)]
        cell[axis] = own_spec.box[axis][0]
        mapped = list(own_spec.map_cell(tuple(cell)))
        paxis = src_spec.axis
        mapped[paxis] = depth if src_spec.side == 0 \
            else src_dims[paxis] - 1 - depth
        src_idx = tuple(mapped[a] + src_ghost[a] for a in range(3))
        for name in names:
            out[name][idx] = src_fields[name][src_idx]
    return out


G2 = (2, 2, 0)
G3 = (2, 2, 2)


class TestPackUnpack:
    def test_single_cell_face_buffer(self):
        # A 1x1-cell tangential face packs ghost_depth values per scalar,
        # first entry the face-adjacent cell.
        dims = (4, 1, 1)
        sa, sb = make_connected_pair(0, "i_max", ((3, 4), (0, 1), (0, 1)),
                                     1, "i_min", ((0, 1), (0, 1), (0, 1)),
                                     link_id=0)
        f = ramp_fields(dims, G3)
        bufs = halo.pack_face(f, sa, dims, G3, 1)
        assert bufs["rho"].shape == (2,)
        assert bufs["vel"].shape == (3, 2)
        # Send region: interior cells 2, 3 in ascending padded order.
        assert bufs["rho"][0] == f["rho"][4, 2, 2]
        assert bufs["rho"][1] == f["rho"][5, 2, 2]

    def test_known_ramp_closed_form(self):
        dims = (8, 4, 1)
        sa, sb = make_connected_pair(0, "i_max", ((7, 8), (0, 4), (0, 1)),
                                     1, "i_min", ((0, 1), (0, 4), (0, 1)),
                                     link_id=0)
        f = ramp_fields(dims, G2)
        bufs = halo.pack_face(f, sa, dims, G2, 1)
        # Region i in {6, 7}, j in 0..3; linearized i-fastest.
        expect = np.array([i + 10.0 * j for j in range(4) for i in (6, 7)])
        np.testing.assert_array_equal(bufs["rho"], expect)
        np.testing.assert_array_equal(bufs["p"], expect + 4000.0)

    def test_pack_unpack_round_trip_identity(self):
        dims = (8, 4, 1)
        s_min, s_max = make_connected_pair(0, "i_min", ((0, 1), (0, 4), (0, 1)),
                                           0, "i_max", ((7, 8), (0, 4), (0, 1)),
                                           link_id=0)
        src = ramp_fields(dims, G2)
        dst = {k: np.zeros_like(v) for k, v in src.items()}
        halo.copy_local(src, dst, s_min, s_max, dims, G2, dims, G2, 1)
        # Ghosts at i_min (padded 0,1 = depths 1,0) equal interior cells 6,7.
        np.testing.assert_array_equal(dst["u"][0:2, 2:6, :],
                                      src["u"][8:10, 2:6, :])
        # No interior cell was modified.
        assert np.all(dst["u"][2:10, 2:6, :] == 0.0)

    @pytest.mark.parametrize("name,case", [
        ("identity", dict(spec=((0, 1), (1, 1), (2, 1)), dims_b=(8, 4, 1))),
        ("flipped_j", dict(spec=((0, 1), (1, -1), (2, 1)), dims_b=(8, 4, 1))),
        ("mirror_same_side", None),
        ("cross_axis_3d", None),
        ("round2_extension", None),
        ("partial_patch", None),
    ])
    def test_against_brute_force_oracle(self, name, case):
        if name == "identity":
            pair = make_connected_pair(0, "i_max", ((7, 8), (0, 4), (0, 1)),
                                       1, "i_min", ((0, 1), (0, 4), (0, 1)),
                                       link_id=0)
            da = db = (8, 4, 1)
            ga = gb = G2
            rnd = 1
        elif name == "flipped_j":
            pair = make_connected_pair(0, "i_max", ((7, 8), (0, 4), (0, 1)),
                                       1, "i_min", ((0, 1), (0, 4), (0, 1)),
                                       axis_map=((0, 1), (1, -1), (2, 1)),
                                       link_id=0)
            da = db = (8, 4, 1)
            ga = gb = G2
            rnd = 1
        elif name == "mirror_same_side":
            pair = make_connected_pair(0, "i_min", ((0, 1), (0, 4), (0, 1)),
                                       1, "i_min", ((0, 1), (0, 4), (0, 1)),
                                       axis_map=((0, 1), (1, -1), (2, 1)),
                                       link_id=0)
            da, db = (8, 4, 1), (6, 4, 1)
            ga = gb = G2
            rnd = 1
        elif name == "cross_axis_3d":
            pair = make_connected_pair(0, "i_max", ((3, 4), (0, 5), (0, 6)),
                                       1, "j_min", ((0, 5), (0, 1), (0, 6)),
                                       axis_map=((1, 1), (0, 1), (2, -1)),
                                       link_id=0)
            da, db = (4, 5, 6), (5, 4, 6)
            ga = gb = G3
            rnd = 1
        elif name == "round2_extension":
            pair = make_connected_pair(0, "i_max", ((7, 8), (0, 4), (0, 1)),
                                       1, "i_min", ((0, 1), (0, 4), (0, 1)),
                                       link_id=0)
            da = db = (8, 4, 1)
            ga = gb = G2
            rnd = 2
        else:  # partial_patch
            pair = make_connected_pair(0, "i_max", ((7, 8), (1, 5), (0, 1)),
                                       1, "i_min", ((0, 1), (1, 5), (0, 1)),
                                       link_id=0)
            da = db = (8, 6, 1)
            ga = gb = G2
            rnd = 1
        sa, sb = pair
        A = ramp_fields(da, ga)
        B = {k: v * 1.3 + 0.25 for k, v in ramp_fields(db, gb).items()}
        got = {k: v.copy() for k, v in A.items()}
        bufs = halo.pack_face(B, sb, db, gb, rnd)
        halo.unpack_face(bufs, got, sa, da, ga, sb.side, rnd)
        want = brute_force_ghost_fill(A, B, sa, sb, da, db, ga, gb, rnd)
        ndim = 2 if da[2] == 1 else 3
        names = ["rho", "u", "v", "p", "T"] + (["w"] if ndim == 3 else [])
        for n in names:
            np.testing.assert_array_equal(got[n], want[n])

    def test_length_mismatch_rejected(self):
        dims = (8, 4, 1)
        sa, sb = make_connected_pair(0, "i_max", ((7, 8), (0, 4), (0, 1)),
                                     1, "i_min", ((0, 1), (0, 4), (0, 1)),
                                     link_id=0)
        f = ramp_fields(dims, G2)
        bufs = halo.pack_face(f, sb, dims, G2, 1)
        bufs["rho"] = bufs["rho"][:-1]
        with pytest.raises(ValueError, match="entries"):
            halo.unpack_face(bufs, f, sa, dims, G2, sb.side, 1)


class TestRunCounting:
    def test_iface_8x8_5fields(self):
        # Paper-table style comparison point: tangential 8x8 with 5 fields.
        box = ((2, 4), (2, 10), (2, 10))
        padded = (12, 12, 12)
        assert exchange.predict_face_runs(box, padded, 5, "sliced") == 320
        assert exchange.predict_face_runs(box, padded, 5, "packed") == 5

    def test_jface_2d_ghost_depth_runs(self):
        box = ((2, 10), (8, 10), (0, 1))  # full interior i, two j layers
        padded = (12, 12, 1)
        assert exchange.predict_face_runs(box, padded, 1, "sliced") == 2

    def test_counts_match_bruteforce(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            shape = tuple(int(rng.integers(3, 9)) for _ in range(3))
            box = []
            for s in shape:
                lo = int(rng.integers(0, s))
                hi = int(rng.integers(lo + 1, s + 1))
                box.append((lo, hi))
            box = tuple(box)
            got = exchange.count_region_runs(box, shape)
            want = oracles.contiguous_runs_bruteforce(shape, box)
            assert got == want
            runs = exchange.contiguous_run_slices(box, shape)
            assert len(runs) == want

    def test_run_slices_cover_box_disjointly(self):
        shape = (8, 6, 5)
        box = ((1, 4), (0, 6), (2, 5))
        marker = np.zeros(shape, dtype=int)
        for sl in exchange.contiguous_run_slices(box, shape):
            marker[sl] += 1
        sub = marker[1:4, 0:6, 2:5]
        assert np.all(sub == 1)
        assert marker.sum() == sub.size


def two_rank_setup(strategy=None, timeout_s=5.0):
    grid = mesh.MultiBlockGrid(blocks=[
        mesh.make_cartesian_block(0, (8, 4), (0, 0), (1, 1), 2)])
    plan = decomp.decompose(grid, 2, 2)
    schedule = decomp.reorder_boundaries(plan)
    solvers_by_rank = {}
    for rank in range(2):
        solvers = {}
        for c in plan.rank_children(rank):
            s = solver.BlockSolver(plan.child_block(c.id), plan.boundaries[c.id],
                                   GAS, CFG, FS)
            s.init_uniform()
            for name in s.fields:
                s.fields[name][...] = ramp_fields(s.block.dims, s.block.ghost)[name] \
                    + 7000.0 * rank
            solvers[c.id] = s
        solvers_by_rank[rank] = solvers
    runtimes = exchange.make_rank_runtimes(plan, schedule, solvers_by_rank,
                                           strategy, timeout_s)
    return plan, schedule, solvers_by_rank, runtimes


class TestExchangeStep:
    def test_two_ranks_one_link(self):
        plan, schedule, solvers_by_rank, runtimes = two_rank_setup()
        exchange.exchange_step(runtimes, rounds=1)
        # Ghost correctness, bitwise: each side's ghosts equal the partner's
        # interior layers.
        s0 = list(solvers_by_rank[0].values())[0]
        s1 = list(solvers_by_rank[1].values())[0]
        for n in ("rho", "u", "v", "p", "T"):
            np.testing.assert_array_equal(s0.fields[n][6:8, 2:6, :],
                                          s1.fields[n][2:4, 2:6, :])
            np.testing.assert_array_equal(s1.fields[n][0:2, 2:6, :],
                                          s0.fields[n][4:6, 2:6, :])
        # Messages initiated: 2 per field group (one send per rank).
        total_msgs = sum(rt.counters.messages for rt in runtimes)
        assert total_msgs == 2 * len(halo.field_groups(2))
        assert runtimes[0].fabric.quiescent()

    def test_matches_sequential_oracle(self):
        grid = mesh.generate_case_grid("multiblock_box_3d", 0)
        plan = decomp.decompose(grid, 8, 3)
        schedule = decomp.reorder_boundaries(plan)

        def build(seed_offset):
            by_rank = {}
            for rank in range(8):
                solvers = {}
                for c in plan.rank_children(rank):
                    s = solver.BlockSolver(plan.child_block(c.id),
                                           plan.boundaries[c.id], GAS, CFG, FS)
                    ramp = ramp_fields(s.block.dims, s.block.ghost)
                    for name in s.fields:
                        s.fields[name][...] = ramp[name] + 977.0 * c.id + seed_offset
                    solvers[c.id] = s
                by_rank[rank] = solvers
            return by_rank

        threaded = build(0.0)
        runtimes = exchange.make_rank_runtimes(plan, schedule, threaded)
        exchange.exchange_step(runtimes, rounds=1)

        serial = build(0.0)
        flat = {cid: s for rank in serial.values() for cid, s in rank.items()}
        fn = solver.make_serial_exchange(plan, schedule, flat)
        fn(1)

        for rank in threaded:
            for cid, s in threaded[rank].items():
                for n in ("rho", "u", "v", "w", "p", "T"):
                    np.testing.assert_array_equal(s.fields[n], flat[cid].fields[n])

    def test_self_connection_single_rank(self):
        grid = mesh.generate_case_grid("c_annulus_2d", 0)
        plan = decomp.decompose(grid, 1, 2)
        schedule = decomp.reorder_boundaries(plan)
        s = solver.BlockSolver(plan.child_block(0), plan.boundaries[0], GAS, CFG, FS)
        s.init_uniform()
        ramp = ramp_fields(s.block.dims, s.block.ghost)
        for name in s.fields:
            s.fields[name][...] = ramp[name]
        runtimes = exchange.make_rank_runtimes(plan, schedule, {0: {0: s}})
        exchange.exchange_step(runtimes, rounds=1)
        ni = s.block.dims[0]
        g = 2
        np.testing.assert_array_equal(s.fields["p"][0:2, 2:-2, :],
                                      ramp["p"][ni:ni + 2, 2:-2, :])
        np.testing.assert_array_equal(s.fields["p"][ni + g:ni + 2 * g, 2:-2, :],
                                      ramp["p"][g:g + 2, 2:-2, :])
        assert runtimes[0].counters.messages == 0  # self links are local

    def test_deadlock_timeout_and_cure(self):
        grid = mesh.generate_case_grid("c_annulus_2d", 0)
        plan = decomp.deadlock_demo_plan(grid, 4)

        def build_runtimes(schedule, timeout):
            by_rank = {}
            for rank in range(4):
                solvers = {}
                for c in plan.rank_children(rank):
                    s = solver.BlockSolver(plan.child_block(c.id),
                                           plan.boundaries[c.id], GAS, CFG, FS)
                    s.init_uniform()
                    solvers[c.id] = s
                by_rank[rank] = solvers
            return exchange.make_rank_runtimes(
                plan, schedule, by_rank,
                exchange.ExchangeStrategy(wait_policy="per_block"), timeout)

        naive = decomp.naive_schedule(plan)
        with pytest.raises(DeadlockError) as err:
            exchange.exchange_step(build_runtimes(naive, 0.4), rounds=1)
        blocked_ranks = {rank for rank, _ in err.value.blocked}
        assert blocked_ranks == {0, 1, 2, 3}

        reordered = decomp.reorder_boundaries(plan)
        runtimes = build_runtimes(reordered, 5.0)
        exchange.exchange_step(runtimes, rounds=1)  # completes
        assert runtimes[0].fabric.quiescent()

    def test_deferred_waits_survive_naive_order(self):
        # Posting everything before any wait removes the circular dependency.
        grid = mesh.generate_case_grid("c_annulus_2d", 0)
        plan = decomp.deadlock_demo_plan(grid, 4)
        by_rank = {}
        for rank in range(4):
            solvers = {}
            for c in plan.rank_children(rank):
                s = solver.BlockSolver(plan.child_block(c.id),
                                       plan.boundaries[c.id], GAS, CFG, FS)
                s.init_uniform()
                solvers[c.id] = s
            by_rank[rank] = solvers
        runtimes = exchange.make_rank_runtimes(
            plan, decomp.naive_schedule(plan), by_rank,
            exchange.ExchangeStrategy(wait_policy="deferred_all"), 5.0)
        exchange.exchange_step(runtimes, rounds=1)
        assert runtimes[0].fabric.quiescent()

    def test_execution_agrees_with_cycle_analysis(self):
        import test_decomp
        rng = np.random.default_rng(77)
        hits = 0
        for _ in range(30):
            plan = test_decomp.random_topology(rng, nranks=8, nlinks=10)
            schedule = decomp.naive_schedule(plan)
            cycles = decomp.detect_deadlock(schedule)
            by_rank = {}
            for rank in range(plan.np_ranks):
                solvers = {}
                for c in plan.rank_children(rank):
                    s = solver.BlockSolver(plan.child_block(c.id),
                                           plan.boundaries[c.id], GAS, CFG, FS)
                    s.init_uniform()
                    solvers[c.id] = s
                by_rank[rank] = solvers
            runtimes = exchange.make_rank_runtimes(
                plan, schedule, by_rank,
                exchange.ExchangeStrategy(wait_policy="per_block"), 0.4)
            if cycles:
                hits += 1
                with pytest.raises(DeadlockError):
                    exchange.exchange_step(runtimes, rounds=1)
            else:
                exchange.exchange_step(runtimes, rounds=1)
        assert hits > 0


class TestCountersAndStrategies:
    @pytest.mark.parametrize("case,np_ranks,viscous", [
        ("inlet_ramp_2d", 4, False),
        ("c_annulus_2d", 4, True),
        ("multiblock_box_3d", 8, False),
    ])
    def test_predicted_equals_measured_all_strategies(self, case, np_ranks,
                                                      viscous):
        gas = physics.GasModel(mu=1.8e-5 if viscous else 0.0)
        ndim = 3 if case.endswith("3d") else 2
        fs = solver.FreestreamState.from_mach(gas, 0.5, 9e4, 280.0, 0.0, ndim)
        cfg = solver.SchemeConfig(flux="van_leer", rk_stages=1, cfl=0.3,
                                  viscous=viscous)
        grid = mesh.generate_case_grid(case, 0)
        plan = decomp.decompose(grid, np_ranks, ndim)
        schedule = decomp.reorder_boundaries(plan)
        steps = 2
        rounds = cfg.ghost_rounds
        exchanges = steps * cfg.rk_stages
        for strategy in exchange.ExchangeStrategy.all_combinations():
            out = exchange.run_distributed(plan, schedule, gas, cfg, fs,
                                           strategy, max_steps=steps)
            pred = exchange.predict_counters(plan, schedule, strategy, rounds)
            for rank in range(np_ranks):
                p, m = pred[rank], out.counters[rank]
                assert m.messages == p.messages * exchanges
                assert m.runs == p.runs * exchanges
                assert m.bytes == p.bytes * exchanges
                assert m.staging_copies == p.staging_copies * exchanges
                assert m.waits == p.waits * exchanges
                assert m.max_pending == p.max_pending

    def test_staged_adds_two_copies_per_message(self):
        grid = mesh.generate_case_grid("inlet_ramp_2d", 0)
        plan = decomp.decompose(grid, 4, 2)
        schedule = decomp.reorder_boundaries(plan)
        fs = solver.FreestreamState.from_mach(GAS, 4.0, 12270.0, 217.0, 0.0, 2)
        direct = exchange.run_distributed(plan, schedule, GAS, CFG, fs,
                                          exchange.ExchangeStrategy(transport="direct"),
                                          max_steps=2)
        staged = exchange.run_distributed(plan, schedule, GAS, CFG, fs,
                                          exchange.ExchangeStrategy(transport="staged"),
                                          max_steps=2)
        total_msgs = sum(c.messages for c in staged.counters.values())
        total_staging = sum(c.staging_copies for c in staged.counters.values())
        assert total_staging == 2 * total_msgs
        assert sum(c.staging_copies for c in direct.counters.values()) == 0

    def test_strategy_neutrality_bitwise(self):
        gas = physics.GasModel(mu=1.8e-5)
        fs = solver.FreestreamState.from_mach(gas, 0.25, 84307.0, 300.0, 5.0, 2)
        cfg = solver.SchemeConfig(flux="roe", limiter="van_albada", rk_stages=2,
                                  cfl=0.4, viscous=True)
        grid = mesh.generate_case_grid("c_annulus_2d", 0)
        plan = decomp.decompose(grid, 2, 2)
        schedule = decomp.reorder_boundaries(plan)
        ref = None
        for strategy in exchange.ExchangeStrategy.all_combinations():
            out = exchange.run_distributed(plan, schedule, gas, cfg, fs,
                                           strategy, max_steps=8)
            if ref is None:
                ref = out
                continue
            np.testing.assert_array_equal(out.history, ref.history)
            for bid in out.fields:
                for n in ("rho", "u", "v", "p"):
                    np.testing.assert_array_equal(out.fields[bid][n],
                                                  ref.fields[bid][n])

    def test_comm_volume_estimate_matches_counters(self):
        grid = mesh.generate_case_grid("multiblock_box_3d", 0)
        plan = decomp.decompose(grid, 8, 3)
        schedule = decomp.reorder_boundaries(plan)
        fs = solver.FreestreamState.from_mach(GAS, 0.8, 3e5, 255.0, 3.0, 3)
        cfg = solver.SchemeConfig(flux="van_leer", rk_stages=1, cfl=0.3)
        out = exchange.run_distributed(plan, schedule, GAS, cfg, fs,
                                       exchange.ExchangeStrategy(), max_steps=1)
        estimate = decomp.estimate_comm_volume(plan, rounds=1)
        for rank in range(8):
            assert out.counters[rank].messages == estimate[rank]["messages"]
            assert out.counters[rank].bytes == estimate[rank]["bytes"]


class TestRunDistributed:
    def test_single_rank_matches_direct_iterate(self):
        grid = mesh.generate_case_grid("inlet_ramp_2d", 0)
        plan = decomp.decompose(grid, 1, 2)
        schedule = decomp.reorder_boundaries(plan)
        fs = solver.FreestreamState.from_mach(GAS, 4.0, 12270.0, 217.0, 0.0, 2)
        cfg = solver.SchemeConfig(flux="van_leer", limiter="van_albada",
                                  rk_stages=2, cfl=0.8)
        direct = solver.iterate(plan, schedule, GAS, cfg, fs, 25)
        dist = exchange.run_distributed(plan, schedule, GAS, cfg, fs,
                                        max_steps=25)
        np.testing.assert_array_equal(dist.history, direct.history)
        s = direct.solvers[0]
        for n in ("rho", "u", "v", "p"):
            np.testing.assert_array_equal(dist.fields[0][n],
                                          s.fields[n][s.block.interior()])

    def test_parallel_matches_serial_bitwise(self):
        grid = mesh.generate_case_grid("c_annulus_2d", 0)
        gas = physics.GasModel(mu=1.8e-5)
        fs = solver.FreestreamState.from_mach(gas, 0.25, 84307.0, 300.0, 5.0, 2)
        cfg = solver.SchemeConfig(flux="roe", limiter="van_albada", rk_stages=2,
                                  cfl=0.4, viscous=True)
        plan1 = decomp.decompose(grid, 1, 2)
        out1 = exchange.run_distributed(plan1, decomp.reorder_boundaries(plan1),
                                        gas, cfg, fs, max_steps=20)
        plan4 = decomp.decompose(grid, 4, 2)
        out4 = exchange.run_distributed(plan4, decomp.reorder_boundaries(plan4),
                                        gas, cfg, fs, max_steps=20)
        for n in ("rho", "u", "v", "p", "T"):
            np.testing.assert_array_equal(out1.fields[0][n], out4.fields[0][n])

    def test_worker_failure_propagates_with_rank(self):
        grid = mesh.generate_case_grid("inlet_ramp_2d", 0)
        plan = decomp.decompose(grid, 2, 2)
        schedule = decomp.reorder_boundaries(plan)
        fs = solver.FreestreamState.from_mach(GAS, 4.0, 12270.0, 217.0, 0.0, 2)
        cfg = solver.SchemeConfig(flux="roe", limiter="none", rk_stages=1,
                                  cfl=80.0)  # guaranteed blow-up
        with pytest.raises(Exception) as err:
            exchange.run_distributed(plan, schedule, GAS, cfg, fs, max_steps=400,
                                     timeout_s=10.0)
        assert "block" in str(err.value) or "residual" in str(err.value)

    def test_counters_json_dump(self):
        grid = mesh.generate_case_grid("inlet_ramp_2d", 0)
        plan = decomp.decompose(grid, 2, 2)
        schedule = decomp.reorder_boundaries(plan)
        fs = solver.FreestreamState.from_mach(GAS, 4.0, 12270.0, 217.0, 0.0, 2)
        out = exchange.run_distributed(plan, schedule, GAS, CFG, fs, max_steps=1)
        import json
        data = json.loads(exchange.counters_to_json(out.counters))
        assert [d["rank"] for d in data] == [0, 1]
        for d in data:
            for key in ("messages", "runs", "bytes", "staging_copies", "waits"):
                assert key in d
