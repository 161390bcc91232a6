import math

import numpy as np
import pytest

from snowgraph.errors import ConfigError, MorphologyError, ShapeError
from snowgraph.morphology import (
    EnvObservation,
    MorphologyGraph,
    NodeType,
    build_chain_graph,
    factor_observation,
)
from snowgraph.policy import (
    ActionDistribution,
    GnnActor,
    GnnConfig,
    GnnPolicy,
    MlpActor,
    MlpPolicy,
    SNOWFLAKE_FROZEN,
    ValueFunction,
    distribution,
    gnn_forward,
    gnn_forward_batch,
    kl_divergence,
    log_prob,
    mlp_policy_forward,
    sample,
)


def small_config(layers=4, width=8, freeze=frozenset()):
    return GnnConfig(layers=layers, hidden_width=width, encoder_hidden=width,
                     message_hidden=width, decoder_hidden=width, freeze=freeze)


def random_features(graph, seed=0):
    rng = np.random.default_rng(seed)
    obs = EnvObservation(rng.uniform(-0.5, 0.5, graph.n_joints),
                         rng.uniform(-1, 1, graph.n_joints), rng.uniform(-1, 1))
    return factor_observation(graph, obs)


class TestGnnForward:
    def test_zero_layers_skips_propagation(self):
        g = build_chain_graph(4)
        pol = GnnPolicy(small_config(layers=0), np.random.default_rng(0))
        feats = random_features(g)
        out = gnn_forward(pol, g, feats)
        # with T=0 the output per node depends only on that node's features
        from snowgraph.layers import mlp_apply
        expected = mlp_apply(pol.store["decoder"], mlp_apply(pol.store["encoder"], feats))[:, 0]
        assert np.array_equal(out, expected)

    def test_single_node_no_edges(self):
        g = build_chain_graph(1)
        pol = GnnPolicy(small_config(), np.random.default_rng(0))
        feats = factor_observation(g, EnvObservation(np.zeros(0), np.zeros(0), 0.2))
        from snowgraph.layers import gru_cell, mlp_apply
        h = mlp_apply(pol.store["encoder"], feats)
        for _ in range(4):
            h = gru_cell(pol.store["update"], h, np.zeros_like(h))
        expected = mlp_apply(pol.store["decoder"], h)[:, 0]
        assert np.allclose(gnn_forward(pol, g, feats), expected, atol=1e-14)

    def test_two_identical_senders_double_the_message(self):
        # star: root receives from two joints given identical features
        nodes = ((0, NodeType.ROOT), (1, NodeType.JOINT), (2, NodeType.JOINT))
        edges = ((1, 0), (0, 1), (2, 0), (0, 2))
        star = MorphologyGraph(nodes, edges, (1, 2))
        pol = GnnPolicy(small_config(layers=1), np.random.default_rng(1))
        obs = EnvObservation(np.array([0.3, 0.3]), np.array([-0.1, -0.1]), 0.0)
        feats = factor_observation(star, obs)

        from snowgraph.layers import gru_cell, mlp_apply
        h = mlp_apply(pol.store["encoder"], feats)
        msg = mlp_apply(pol.store["message"], h)
        assert np.allclose(msg[1], msg[2], atol=1e-15)
        agg = star.adjacency() @ msg
        assert np.allclose(agg[0], 2.0 * msg[1], atol=1e-14)

    def test_batch_forward_matches_single(self):
        g = build_chain_graph(5)
        pol = GnnPolicy(small_config(), np.random.default_rng(2))
        stack = np.stack([random_features(g, s) for s in range(6)])
        nm = np.ascontiguousarray(stack.transpose(1, 0, 2))
        means = gnn_forward_batch(pol, g, nm)
        for b in range(6):
            single = gnn_forward(pol, g, stack[b])[g.joint_rows()]
            assert np.allclose(means[b], single, atol=1e-12)

    def test_feature_shape_checked(self):
        g = build_chain_graph(4)
        pol = GnnPolicy(small_config(), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            gnn_forward(pol, g, np.zeros((4, 5)))


class TestPermutationEquivariance:
    def permuted_chain(self, n, rng):
        """Relabel node ids by a random permutation and shuffle the node
        list order; returns (base graph, relabeled graph, old id -> new id)."""
        base = build_chain_graph(n)
        ids = [int(p) for p in rng.permutation(n)]
        nodes = tuple((ids[nid], t) for nid, t in base.nodes)
        edges = tuple((ids[u], ids[v]) for u, v in base.edges)
        joint_order = tuple(ids[j] for j in base.joint_order)
        shuffled = list(nodes)
        rng.shuffle(shuffled)
        g2 = MorphologyGraph(tuple(shuffled), edges, joint_order)
        return base, g2, ids

    def test_relabeling_permutes_outputs(self):
        rng = np.random.default_rng(11)
        pol = GnnPolicy(small_config(), np.random.default_rng(5))
        for _ in range(10):
            g1, g2, ids = self.permuted_chain(10, rng)
            obs = EnvObservation(rng.uniform(-0.4, 0.4, 9), rng.uniform(-1, 1, 9), 0.25)
            out1 = gnn_forward(pol, g1, factor_observation(g1, obs))
            out2 = gnn_forward(pol, g2, factor_observation(g2, obs))
            for nid, _ in g1.nodes:
                assert abs(out1[g1.node_row(nid)] - out2[g2.node_row(ids[nid])]) < 1e-10
            # action assembly identical regardless of labels
            d1 = distribution(pol, g1, factor_observation(g1, obs))
            d2 = distribution(pol, g2, factor_observation(g2, obs))
            assert np.allclose(d1.mean, d2.mean, atol=1e-10)

    def test_mirror_symmetry_on_symmetric_features(self):
        # a path graph is invariant under reversal; symmetric features must
        # produce symmetric outputs
        g = build_chain_graph(6)
        pol = GnnPolicy(small_config(), np.random.default_rng(8))
        feats = np.zeros((6, 8))
        rng = np.random.default_rng(3)
        half = rng.uniform(-1, 1, (3, 8))
        feats[:3] = half
        feats[3:] = half[::-1]
        out = gnn_forward(pol, g, feats)
        assert np.allclose(out, out[::-1], atol=1e-10)


class TestFreezing:
    def test_snowflake_spec_marks_groups(self):
        pol = GnnPolicy(small_config(freeze=SNOWFLAKE_FROZEN), np.random.default_rng(0))
        assert pol.store["encoder"].frozen
        assert pol.store["message"].frozen
        assert pol.store["decoder"].frozen
        assert not pol.store["update"].frozen
        assert not pol.store["log_std"].frozen

    def test_unknown_freeze_name_rejected(self):
        with pytest.raises(ConfigError):
            GnnConfig(freeze=frozenset({"gru"}))

    def test_all_frozen_forward_constant(self):
        freeze = frozenset({"encoder", "message", "update", "decoder"})
        pol = GnnPolicy(small_config(freeze=freeze), np.random.default_rng(0))
        g = build_chain_graph(4)
        feats = random_features(g)
        before = gnn_forward(pol, g, feats)
        from snowgraph.params import adam_step
        grads = {gr.name: [np.ones_like(t) for t in gr.tensors] for gr in pol.store.groups()}
        for _ in range(10):
            adam_step(pol.store, grads, 1e-2)
        assert np.array_equal(gnn_forward(pol, g, feats), before)


class TestSizeIndependence:
    def test_gnn_bytes_equal_across_sizes(self):
        sizes = []
        for n in (6, 12, 20):
            pol = GnnPolicy(small_config(), np.random.default_rng(0))
            sizes.append(len(pol.store.to_bytes()))
        assert sizes[0] == sizes[1] == sizes[2]

    def test_mlp_bytes_grow_with_size(self):
        sizes = []
        for n in (6, 12, 20):
            pol = MlpPolicy(2 * (n - 1) + 1, n - 1, np.random.default_rng(0))
            sizes.append(len(pol.store.to_bytes()))
        assert sizes[0] < sizes[1] < sizes[2]


class TestDistributionOps:
    def test_decoder_zero_weights_mean_is_bias(self):
        pol = GnnPolicy(small_config(), np.random.default_rng(0))
        dec = pol.store["decoder"]
        for p in dec.params:
            p.tensor.value[...] = 0.0
        dec.params[-1].tensor.value[...] = 0.7
        g = build_chain_graph(4)
        d = distribution(pol, g, random_features(g))
        assert np.allclose(d.mean, 0.7, atol=1e-15)

    def test_log_std_zero_gives_unit_std(self):
        pol = GnnPolicy(small_config(), np.random.default_rng(0))
        g = build_chain_graph(5)
        d = distribution(pol, g, random_features(g))
        assert np.array_equal(d.log_std, np.zeros(4))

    def test_degenerate_single_link_empty_distribution(self):
        pol = GnnPolicy(small_config(), np.random.default_rng(0))
        g = build_chain_graph(1)
        d = distribution(pol, g, factor_observation(g, EnvObservation(np.zeros(0), np.zeros(0), 0.0)))
        assert d.dim == 0
        assert log_prob(d, np.zeros(0)) == 0.0

    def test_log_prob_closed_forms(self):
        d = ActionDistribution(np.array([0.0]), np.array([0.0]))
        assert log_prob(d, np.array([0.0])) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
        assert log_prob(d, np.array([1.0])) == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_log_prob_factorises_over_dims(self):
        d2 = ActionDistribution(np.array([0.3, -0.4]), np.array([0.1, -0.2]))
        a = np.array([0.5, 0.1])
        parts = [
            log_prob(ActionDistribution(d2.mean[i:i + 1], d2.log_std[i:i + 1]), a[i:i + 1])
            for i in range(2)
        ]
        assert log_prob(d2, a) == pytest.approx(sum(parts), abs=1e-12)

    def test_log_prob_shape_mismatch(self):
        d = ActionDistribution(np.zeros(2), np.zeros(2))
        with pytest.raises(ShapeError):
            log_prob(d, np.zeros(3))

    def test_kl_identity_is_zero(self):
        d = ActionDistribution(np.array([0.1, 0.2]), np.array([0.3, -0.1]))
        assert kl_divergence(d, d) == 0.0

    def test_kl_mean_shift(self):
        old = ActionDistribution(np.array([0.0]), np.array([0.0]))
        new = ActionDistribution(np.array([0.5]), np.array([0.0]))
        assert kl_divergence(old, new) == pytest.approx(0.125, abs=1e-12)

    def test_kl_std_change(self):
        old = ActionDistribution(np.array([0.0]), np.array([0.0]))
        new = ActionDistribution(np.array([0.0]), np.array([math.log(2.0)]))
        assert kl_divergence(old, new) == pytest.approx(math.log(2) + 1 / 8 - 1 / 2, abs=1e-12)

    def test_kl_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            kl_divergence(ActionDistribution(np.zeros(1), np.zeros(1)),
                          ActionDistribution(np.zeros(2), np.zeros(2)))

    def test_sample_deterministic_per_seed(self):
        d = ActionDistribution(np.array([0.0, 1.0]), np.array([0.5, -0.5]))
        a1 = sample(d, np.random.default_rng(3))
        a2 = sample(d, np.random.default_rng(3))
        assert np.array_equal(a1, a2)

    def test_non_finite_distribution_rejected(self):
        with pytest.raises(ShapeError):
            ActionDistribution(np.array([np.inf]), np.array([0.0]))


class TestMlpPolicy:
    def test_zero_weights_mean_is_bias(self):
        pol = MlpPolicy(11, 5, np.random.default_rng(0))
        for p in pol.store["policy"].params:
            p.tensor.value[...] = 0.0
        pol.store["policy"].params[-1].tensor.value[...] = 0.25
        d = mlp_policy_forward(pol, np.zeros(11))
        assert np.allclose(d.mean, 0.25)

    def test_output_length_matches_joints(self):
        pol = MlpPolicy(11, 5, np.random.default_rng(0))
        d = mlp_policy_forward(pol, np.random.default_rng(1).standard_normal(11))
        assert d.dim == 5

    def test_parameter_count_grows_with_size(self):
        counts = []
        for n in (6, 10, 14):
            pol = MlpPolicy(2 * (n - 1) + 1, n - 1, np.random.default_rng(0))
            counts.append(sum(g.num_values() for g in pol.store.groups()))
        assert counts[0] < counts[1] < counts[2]

    def test_width_mismatch(self):
        pol = MlpPolicy(11, 5, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            mlp_policy_forward(pol, np.zeros(13))

    def test_actor_rejects_wrong_morphology(self):
        pol = MlpPolicy(11, 5, np.random.default_rng(0))
        with pytest.raises(MorphologyError):
            MlpActor(pol, build_chain_graph(8))


class TestActors:
    def test_gnn_actor_act_matches_distribution(self):
        g = build_chain_graph(5)
        pol = GnnPolicy(small_config(), np.random.default_rng(4))
        actor = GnnActor(pol, g)
        obs = EnvObservation(np.full(4, 0.1), np.zeros(4), 0.0)
        step = actor.act(obs, deterministic=True)
        d = distribution(pol, g, factor_observation(g, obs))
        assert np.array_equal(step.action, d.mean)
        assert step.log_prob == pytest.approx(log_prob(d, d.mean), abs=1e-12)

    def test_gnn_actor_rebinds_to_other_sizes(self):
        pol = GnnPolicy(small_config(), np.random.default_rng(4))
        for n in (3, 6, 9):
            actor = GnnActor(pol, build_chain_graph(n))
            obs = EnvObservation(np.zeros(n - 1), np.zeros(n - 1), 0.0)
            assert actor.act(obs, deterministic=True).action.shape == (n - 1,)

    def test_log_prob_gradients_match_finite_differences(self):
        from snowgraph import tape
        from snowgraph.ppo import _log_prob_t
        from snowgraph.tape import Tensor, backward

        rng = np.random.default_rng(12)
        mean = rng.standard_normal((3, 2))
        log_std = rng.standard_normal(2) * 0.3
        actions = rng.standard_normal((3, 2))

        mean_t, log_std_t = Tensor(mean.copy()), Tensor(log_std.copy())
        loss = tape.tmean(_log_prob_t(mean_t, log_std_t, actions, 2))
        backward(loss)

        def loss_at(m, s):
            per = [log_prob(ActionDistribution(m[i], s), actions[i]) for i in range(3)]
            return float(np.mean(per))

        h = 1e-6
        for arr, grad in ((mean, mean_t.grad), (log_std, log_std_t.grad)):
            fd = np.zeros_like(arr)
            flat = arr.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_at(mean, log_std)
                flat[i] = orig - h
                fm = loss_at(mean, log_std)
                flat[i] = orig
                fd.ravel()[i] = (fp - fm) / (2 * h)
            assert np.allclose(grad, fd, rtol=1e-4, atol=1e-7)


def test_value_function_batch_matches_single():
    vf = ValueFunction(7, np.random.default_rng(0))
    xs = np.random.default_rng(1).standard_normal((4, 7))
    batch = vf.predict_batch(xs)
    for i in range(4):
        assert batch[i] == pytest.approx(vf.predict(xs[i]), abs=1e-12)
