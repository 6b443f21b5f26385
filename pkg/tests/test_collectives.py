import numpy as np
import pytest

from deskdl.collectives import (CollectiveError, ReduceJob, hybrid_allreduce,
                                local_broadcast, oracle_reduce, ring_allreduce)
from deskdl.collectives import ChunkChannel, _chunk_bounds
from deskdl.core import NamedTensor, RankTopology
from deskdl.runtime import run_rank_threads


def test_oracle_reduce_basics():
    assert np.array_equal(oracle_reduce([[1], [2], [3]], "sum"), [6.0])
    assert np.array_equal(oracle_reduce([[4, 8]], "sum"), [4.0, 8.0])
    out = oracle_reduce([[1, 2], [10, 20], [100, 200]], "mean")
    assert np.allclose(out, [37.0, 74.0])
    with pytest.raises(ValueError):
        oracle_reduce([])
    with pytest.raises(ValueError):
        oracle_reduce([[1, 2], [1]])


def test_chunk_bounds_cover_range():
    for n in (0, 1, 5, 17, 100):
        for parts in (1, 2, 3, 7):
            bounds = _chunk_bounds(n, parts)
            assert len(bounds) == parts
            assert bounds[0][0] == 0 and bounds[-1][1] == n
            for (a0, b0), (a1, b1) in zip(bounds, bounds[1:]):
                assert b0 == a1
                assert 0 <= (b0 - a0) - (b1 - a1) <= 1  # near-equal, front-loaded


def test_reduce_job_validates_op():
    t = NamedTensor("g", (2,), np.zeros(2))
    with pytest.raises(ValueError):
        ReduceJob(t, "max", RankTopology(1, 1, 1))


def _ring_world(world, inputs, op="sum"):
    peers = list(range(world))

    def actor(rank, dx):
        chan = ChunkChannel(dx, timeout=30.0)
        return ring_allreduce(chan, peers, "t", inputs[rank], op=op)

    return run_rank_threads(world, actor)


def test_ring_single_rank_identity():
    out = _ring_world(1, [np.array([1.0, 2.0, 3.0])])
    assert np.array_equal(out[0], [1.0, 2.0, 3.0])


def test_ring_three_rank_example():
    inputs = [np.array([1.0, 2.0]), np.array([10.0, 20.0]),
              np.array([100.0, 200.0])]
    outs = _ring_world(3, inputs)
    for o in outs:
        assert np.allclose(o, [111.0, 222.0])
    assert all(o.tobytes() == outs[0].tobytes() for o in outs)


def test_ring_zeros():
    outs = _ring_world(4, [np.zeros(9, dtype=np.float32)] * 4)
    for o in outs:
        assert not o.any()


def test_ring_length_shorter_than_world():
    # 5 ranks, 3 elements: some chunks are empty, result still correct
    rng = np.random.default_rng(3)
    inputs = [rng.uniform(-1, 1, 3).astype(np.float32) for _ in range(5)]
    outs = _ring_world(5, inputs)
    want = oracle_reduce(inputs, "sum")
    for o in outs:
        assert np.max(np.abs(o - want)) / np.max(np.abs(want)) < 1e-5


def test_ring_empty_peer_list_rejected():
    with pytest.raises(CollectiveError):
        ring_allreduce(None, [], "t", np.zeros(1))


def _hybrid_world(topology, inputs, op="sum"):
    def actor(rank, dx):
        chan = ChunkChannel(dx, timeout=30.0)
        return hybrid_allreduce(chan, topology, "g", inputs[rank], op=op)

    return run_rank_threads(topology.world_size, actor)


def test_hybrid_single_node_is_intra_ring():
    topo = RankTopology(1, 4, 2)
    rng = np.random.default_rng(11)
    inputs = [rng.uniform(-1, 1, 33).astype(np.float32) for _ in range(4)]
    outs = _hybrid_world(topo, inputs)
    want = oracle_reduce(inputs, "sum")
    for o in outs:
        assert np.max(np.abs(o - want)) / np.max(np.abs(want)) < 1e-5
    assert all(o.tobytes() == outs[0].tobytes() for o in outs)


def test_hybrid_identical_inputs_scale_by_world():
    topo = RankTopology(2, 3, 2)
    v = np.linspace(-1, 1, 17, dtype=np.float32)
    outs = _hybrid_world(topo, [v.copy() for _ in range(topo.world_size)])
    for o in outs:
        assert np.allclose(o, 6.0 * v, rtol=1e-6)


def test_hybrid_oracle_and_byte_identity():
    # N=3, G=6, L=4 with an awkward length
    topo = RankTopology(3, 6, 4)
    rng = np.random.default_rng(23)
    inputs = [rng.uniform(-1, 1, 10007).astype(np.float32)
              for _ in range(topo.world_size)]
    outs = _hybrid_world(topo, inputs)
    want = oracle_reduce(inputs, "sum")
    scale = np.max(np.abs(want))
    for o in outs:
        assert np.max(np.abs(o - want)) / scale < 1e-5
    assert all(o.tobytes() == outs[0].tobytes() for o in outs)


def test_hybrid_mean_matches_oracle():
    topo = RankTopology(2, 2, 2)
    rng = np.random.default_rng(5)
    inputs = [rng.uniform(-1, 1, 257).astype(np.float32) for _ in range(4)]
    outs = _hybrid_world(topo, inputs, op="mean")
    want = oracle_reduce(inputs, "mean")
    for o in outs:
        assert np.max(np.abs(o - want)) / np.max(np.abs(want)) < 1e-5


def test_hybrid_length_one():
    topo = RankTopology(2, 2, 2)
    inputs = [np.array([float(r + 1)], dtype=np.float32) for r in range(4)]
    outs = _hybrid_world(topo, inputs)
    for o in outs:
        assert np.allclose(o, [10.0])


def test_hybrid_short_tensor_degrades_lanes():
    # length 3 over 4 lanes: one shard is empty, nothing breaks
    topo = RankTopology(2, 4, 4)
    rng = np.random.default_rng(7)
    inputs = [rng.uniform(-1, 1, 3).astype(np.float32)
              for _ in range(topo.world_size)]
    outs = _hybrid_world(topo, inputs)
    want = oracle_reduce(inputs, "sum")
    for o in outs:
        assert np.max(np.abs(o - want)) / np.max(np.abs(want)) < 1e-5


def test_local_broadcast_copies_bytes():
    topo = RankTopology(1, 6, 4)
    v = np.arange(11, dtype=np.float32)

    def actor(rank, dx):
        chan = ChunkChannel(dx, timeout=30.0)
        data = v if rank == 2 else None
        return local_broadcast(chan, 2, topo.node_peers(rank), "b", data)

    outs = run_rank_threads(6, actor)
    for o in outs:
        assert o.tobytes() == v.tobytes()


def test_interleaved_broadcasts_stay_separate():
    # every lane broadcasts its own payload; receivers tag-check per lane
    topo = RankTopology(1, 4, 4)
    payloads = [np.full(7, float(lane), dtype=np.float32) for lane in range(4)]

    def actor(rank, dx):
        chan = ChunkChannel(dx, timeout=30.0)
        got = {}
        for lane in range(4):
            data = payloads[lane] if rank == lane else None
            got[lane] = local_broadcast(chan, lane, topo.node_peers(rank),
                                        f"s{lane}", data, index=lane)
        return got

    outs = run_rank_threads(4, actor)
    for got in outs:
        for lane in range(4):
            assert np.array_equal(got[lane], payloads[lane])


def test_sweep_matches_oracle_small():
    """Small-scale version of the full sweep the acceptance suite runs."""
    rng = np.random.default_rng(41)
    for topo in (RankTopology(2, 1, 1), RankTopology(2, 2, 2),
                 RankTopology(3, 2, 1)):
        world = topo.world_size
        for length in (1, 17, 1000):
            inputs = [rng.uniform(-1, 1, length).astype(np.float32)
                      for _ in range(world)]
            outs = _hybrid_world(topo, inputs)
            want = oracle_reduce(inputs, "sum")
            scale = max(np.max(np.abs(want)), 1e-30)
            for o in outs:
                assert np.max(np.abs(o - want)) / scale < 1e-5, \
                    f"topology {topo}, length {length}"
            assert all(o.tobytes() == outs[0].tobytes() for o in outs)
