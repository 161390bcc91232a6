import numpy as np
import pytest

from snowgraph.errors import MorphologyError, ShapeError
from snowgraph.morphology import (
    EnvObservation,
    MorphologyGraph,
    NodeType,
    assemble_action,
    build_chain_graph,
    factor_observation,
)


class TestBuildChainGraph:
    def test_degenerate_single_link(self):
        g = build_chain_graph(1)
        assert g.n_nodes == 1
        assert g.edges == ()
        assert g.joint_order == ()

    def test_three_links(self):
        g = build_chain_graph(3)
        assert g.n_nodes == 3
        assert len(g.edges) == 4
        assert g.joint_order == (1, 2)

    def test_edge_count_scales(self):
        g = build_chain_graph(10)
        assert g.n_nodes == 10
        assert len(g.edges) == 18

    def test_zero_links_rejected(self):
        with pytest.raises(MorphologyError):
            build_chain_graph(0)

    def test_deterministic_construction(self):
        assert build_chain_graph(7) == build_chain_graph(7)

    def test_edges_symmetric(self):
        g = build_chain_graph(9)
        edge_set = set(g.edges)
        assert all((v, u) in edge_set for u, v in edge_set)


class TestGraphValidation:
    def test_requires_one_root(self):
        with pytest.raises(MorphologyError):
            MorphologyGraph(((0, NodeType.JOINT),), (), (0,))
        with pytest.raises(MorphologyError):
            MorphologyGraph(((0, NodeType.ROOT), (1, NodeType.ROOT)), ((0, 1), (1, 0)), ())

    def test_rejects_one_way_edge(self):
        with pytest.raises(MorphologyError):
            MorphologyGraph(((0, NodeType.ROOT), (1, NodeType.JOINT)), ((0, 1),), (1,))

    def test_rejects_disconnected(self):
        nodes = ((0, NodeType.ROOT), (1, NodeType.JOINT), (2, NodeType.JOINT))
        with pytest.raises(MorphologyError):
            MorphologyGraph(nodes, ((1, 2), (2, 1)), (1, 2))

    def test_rejects_bad_joint_order(self):
        nodes = ((0, NodeType.ROOT), (1, NodeType.JOINT))
        with pytest.raises(MorphologyError):
            MorphologyGraph(nodes, ((0, 1), (1, 0)), ())
        with pytest.raises(MorphologyError):
            MorphologyGraph(nodes, ((0, 1), (1, 0)), (1, 1))

    def test_rejects_self_loop_and_unknown_nodes(self):
        nodes = ((0, NodeType.ROOT), (1, NodeType.JOINT))
        with pytest.raises(MorphologyError):
            MorphologyGraph(nodes, ((0, 0), (0, 1), (1, 0)), (1,))
        with pytest.raises(MorphologyError):
            MorphologyGraph(nodes, ((0, 5), (5, 0)), (1,))

    def test_adjacency_is_receiver_by_sender(self):
        g = build_chain_graph(3)
        a = g.adjacency()
        # node row order is (root, j1, j2); root receives only from j1
        assert np.array_equal(a, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


class TestFactorObservation:
    def test_zero_observation(self):
        g = build_chain_graph(3)
        obs = EnvObservation(np.zeros(2), np.zeros(2), 0.0)
        f = factor_observation(g, obs)
        assert f.shape == (3, 8)
        root = f[0]
        assert np.array_equal(root, [0, 0, 0, 1, 0, 0, 1, 0])
        assert np.array_equal(f[1], [0, 0, 0, 0, 0, 0, 0, 1])

    def test_root_aggregates(self):
        g = build_chain_graph(3)
        obs = EnvObservation(np.array([0.1, 0.2]), np.array([0.0, 0.0]), 0.0)
        f = factor_observation(g, obs)
        assert f[0, 1] == pytest.approx(0.15000000000000002, abs=0)

    def test_joint_slots(self):
        g = build_chain_graph(4)
        obs = EnvObservation(np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]), 0.5)
        f = factor_observation(g, obs)
        for i, node_id in enumerate(g.joint_order):
            row = f[g.node_row(node_id)]
            assert row[0] == obs.angles[i]
            assert row[1] == obs.velocities[i]
        assert f[0, 0] == 0.5

    def test_size_mismatch_names_counts(self):
        g = build_chain_graph(4)
        obs = EnvObservation(np.zeros(2), np.zeros(2), 0.0)
        with pytest.raises(ShapeError, match="2.*3|3.*2"):
            factor_observation(g, obs)

    def test_relabeling_symmetry(self):
        # renaming node ids consistently permutes nothing observable
        g = build_chain_graph(3)
        nodes = ((10, NodeType.ROOT), (20, NodeType.JOINT), (30, NodeType.JOINT))
        edges = ((10, 20), (20, 10), (20, 30), (30, 20))
        g2 = MorphologyGraph(nodes, edges, (20, 30))
        obs = EnvObservation(np.array([0.4, -0.2]), np.array([1.0, -1.0]), 0.1)
        assert np.array_equal(factor_observation(g, obs), factor_observation(g2, obs))


class TestAssembleAction:
    def test_ordering(self):
        g = build_chain_graph(3)
        out = assemble_action(g, {1: 0.5, 2: -0.5, 0: 9.0})
        assert np.array_equal(out, [0.5, -0.5])

    def test_degenerate_no_joints(self):
        g = build_chain_graph(1)
        assert assemble_action(g, {0: 1.0}).shape == (0,)

    def test_reordered_joint_order(self):
        nodes = ((0, NodeType.ROOT), (1, NodeType.JOINT), (2, NodeType.JOINT))
        edges = ((0, 1), (1, 0), (1, 2), (2, 1))
        g = MorphologyGraph(nodes, edges, (2, 1))
        out = assemble_action(g, {1: 0.5, 2: -0.5})
        assert np.array_equal(out, [-0.5, 0.5])

    def test_missing_joint_raises(self):
        g = build_chain_graph(3)
        with pytest.raises(MorphologyError, match="2"):
            assemble_action(g, {1: 0.5})


def test_factor_assemble_round_trip():
    # reading each joint's angle slot back through assemble_action returns
    # the original angle vector
    g = build_chain_graph(6)
    rng = np.random.default_rng(0)
    obs = EnvObservation(rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5), 0.3)
    f = factor_observation(g, obs)
    outputs = {nid: f[g.node_row(nid), 0] for nid, t in g.nodes if t is NodeType.JOINT}
    outputs[0] = 123.0  # root output must be discarded
    assert np.array_equal(assemble_action(g, outputs), obs.angles)


def test_observation_flat_layout():
    obs = EnvObservation(np.array([1.0, 2.0]), np.array([3.0, 4.0]), 5.0)
    assert np.array_equal(obs.flat(), [1, 2, 3, 4, 5])
    with pytest.raises(ShapeError):
        EnvObservation(np.zeros(2), np.zeros(3), 0.0)
