import numpy as np
import pytest

from deskdl.core import NamedTensor, RankTopology, ShapeError, topology_map


def test_named_tensor_flattens_and_checks():
    t = NamedTensor("g", (2, 3), np.arange(6, dtype=np.float64))
    assert t.data.dtype == np.float32
    assert t.data.shape == (6,)
    assert t.reshaped().shape == (2, 3)
    assert t.size == 6


def test_named_tensor_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        NamedTensor("g", (2, 3), np.zeros(5))
    with pytest.raises(ShapeError):
        NamedTensor("g", (0, 3), np.zeros(0))
    with pytest.raises(ValueError):
        NamedTensor("", (1,), np.zeros(1))


def test_topology_rank_mapping():
    topo = RankTopology(num_nodes=3, local_ranks=6, lanes=4)
    assert topo.world_size == 18
    assert topo.node_of(7) == 1
    assert topo.slot_of(7) == 1
    assert topo.rank_of(1, 1) == 7
    assert topo.node_peers(7) == [6, 7, 8, 9, 10, 11]
    assert topo.lane_peers(2) == [2, 8, 14]
    node, slot, lane = topology_map(topo, 10)
    assert (node, slot, lane) == (1, 4, None)
    node, slot, lane = topology_map(topo, 9)
    assert (node, slot, lane) == (1, 3, 3)


def test_topology_round_trip_all_ranks():
    topo = RankTopology(num_nodes=4, local_ranks=5, lanes=3)
    for rank in range(topo.world_size):
        assert topo.rank_of(topo.node_of(rank), topo.slot_of(rank)) == rank


def test_topology_validation():
    with pytest.raises(ValueError):
        RankTopology(num_nodes=0)
    with pytest.raises(ValueError):
        RankTopology(num_nodes=1, local_ranks=2, lanes=3)
    with pytest.raises(ValueError):
        RankTopology(num_nodes=1, local_ranks=2, lanes=2, control_radix=1)
    topo = RankTopology(num_nodes=2, local_ranks=2, lanes=2)
    with pytest.raises(ValueError):
        topo.node_of(4)
    with pytest.raises(ValueError):
        topo.lane_peers(3)
