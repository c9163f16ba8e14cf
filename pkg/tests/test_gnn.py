import numpy as np
import pytest

from hypermsg import autodiff as ad
from hypermsg import gnn, training
from hypermsg.gnn import GinConfig, GraphInstance

NP_ACT = {"tanh": np.tanh, "linear": lambda v: v}


def np_mlp(spec, params, x):
    """Row-vector MLP straight from the flat layout: W (a, b) row-major, then bias."""
    h, at = np.asarray(x, dtype=float), 0
    for (a, b), act in zip(spec.layer_shapes(), spec.activations):
        w = params[at:at + a * b].reshape(a, b)
        at += a * b
        h = h @ w
        if spec.bias:
            h = h + params[at:at + b]
            at += b
        h = NP_ACT[act](h)
    return h


def dense_reference(model, graph):
    """Loop-by-loop forward pass of one graph, written independently of the tape."""
    p = model.store
    a = graph.adjacency.astype(float)
    x = graph.features
    eps0 = float(p["eps0"]) if "eps0" in p else 0.0
    h0 = np_mlp(model.mlp0, p["mlp0"], (1 + eps0) * x + a @ x)
    states = [h0]
    c = model.damping if model.config.kind == "hyper" else None
    for k in range(1, model.config.iterations + 1):
        h = states[-1]
        if model.config.kind == "hyper":
            z = c * h0 + (1 - c) * (h + a @ h)
            new = np.stack([np_mlp(model.g_spec, np_mlp(model.f_spec, p["theta_f"], z[v]), z[v])
                            for v in range(graph.num_nodes)])
        else:
            eps = float(p[f"eps{k}"])
            new = np_mlp(model.mlps[k - 1], p[f"mlp{k}"], (1 + eps) * h + a @ h)
        states.append(new)
    emb = np.concatenate([s.sum(axis=0) for s in states[1:]])
    return np_mlp(model.head, p["head"], emb)[0]


def small(kind="hyper", seed=0, damping=None, **kw):
    cfg = GinConfig(hidden=4, iterations=2, kind=kind, f_hidden=(5,), g_hidden=(3,),
                    head_hidden=4, **kw)
    return gnn.new_model(cfg, seed=seed, damping=damping)


def triangle():
    return gnn.cycle_graph(3)


class TestGraphInstance:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            GraphInstance(np.array([[0, 1], [0, 0]]), np.ones((2, 1)), 0)

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError, match="self-loops"):
            GraphInstance(np.array([[1]]), np.ones((1, 1)), 0)

    def test_rejects_feature_mismatch(self):
        with pytest.raises(ValueError):
            GraphInstance(np.zeros((3, 3)), np.ones((2, 1)), 0)

    def test_permuted(self):
        g = gnn.path_graph(3)
        p = g.permuted([1, 0, 2])
        assert sorted(p.edges()) == [(0, 1), (0, 2)]

    def test_empty_batch_refused(self):
        with pytest.raises(ValueError):
            gnn.GraphBatch.of([])
        with pytest.raises(ValueError):
            gnn.GraphBatch.of([GraphInstance(np.zeros((0, 0)), np.zeros((0, 1)), 0)])

    def test_batch_block_diagonal(self):
        b = gnn.GraphBatch.of([gnn.path_graph(2), triangle()])
        assert b.adjacency.shape == (5, 5)
        assert b.adjacency[:2, 2:].sum() == 0
        assert b.segments.tolist() == [[1, 1, 0, 0, 0], [0, 0, 1, 1, 1]]
        assert b.labels.tolist() == [0.0, 1.0]


class TestConfigAndModel:
    def test_bad_kind(self):
        with pytest.raises(ValueError):
            GinConfig(kind="gat")

    def test_round_trip(self):
        cfg = GinConfig(hidden=3, f_hidden=(2,), kind="gin")
        assert GinConfig.from_dict(cfg.to_dict()) == cfg

    def test_hyper_shares_f_and_g(self):
        m = small("hyper")
        assert "mlp1" not in m.store and "eps1" not in m.store
        assert m.f_spec.output_width == m.g_spec.num_params

    def test_gin_has_per_iteration_mlps(self):
        m = small("gin")
        assert {"mlp1", "mlp2", "eps1", "eps2"} <= set(m.store.names())
        assert "theta_f" not in m.store

    def test_fixed_eps(self):
        m = small("gin", learn_eps=False)
        assert "eps0" not in m.store and m.fixed["eps0"] == 0.0


class TestForward:
    @pytest.mark.parametrize("kind", ["hyper", "gin"])
    def test_dense_reference_on_triangle(self, kind):
        m = small(kind, seed=3)
        if "eps0" in m.store:
            m.store.params["eps0"] = np.array(0.25)
        assert gnn.scores(m, [triangle()])[0] == pytest.approx(dense_reference(m, triangle()),
                                                               abs=1e-12)

    def test_isolated_node(self):
        m = small(seed=1)
        lone = GraphInstance(np.zeros((1, 1)), np.array([[2.0]]), 0)
        h0 = gnn.gin_step_0(m, lone).data
        expect = np_mlp(m.mlp0, m.store["mlp0"], (1 + float(m.store["eps0"])) * np.array([[2.0]]))
        np.testing.assert_allclose(h0, expect, atol=1e-15)
        assert gnn.scores(m, [lone])[0] == pytest.approx(dense_reference(m, lone), abs=1e-12)

    @pytest.mark.parametrize("kind", ["hyper", "gin"])
    def test_permutation_invariance(self, kind, rng):
        m = small(kind, seed=2)
        g = gnn.GraphInstance(gnn._random_graph(9, 0.4, rng), rng.normal(size=(9, 1)), 1)
        base = gnn.scores(m, [g])[0]
        for _ in range(5):
            assert abs(gnn.scores(m, [g.permuted(rng.permutation(9))])[0] - base) <= 1e-9

    def test_disjoint_copy_doubles_embedding(self):
        m = small(seed=4)
        g = gnn.path_graph(4)
        a = g.adjacency
        twice = GraphInstance(np.block([[a, np.zeros_like(a)], [np.zeros_like(a), a]]),
                              np.ones((8, 1)), 0)
        emb = lambda graph: gnn.graph_embedding(m, graph, gnn.node_states(m, graph)).data
        np.testing.assert_allclose(emb(twice), 2 * emb(g), rtol=1e-12)

    def test_batch_equals_single(self):
        m = small(seed=5)
        graphs = [gnn.path_graph(5), gnn.cycle_graph(6), triangle()]
        together = gnn.scores(m, graphs)
        apart = [gnn.scores(m, [g])[0] for g in graphs]
        np.testing.assert_allclose(together, apart, atol=1e-12)

    def test_readout_needs_all_states(self):
        m = small()
        states = gnn.node_states(m, triangle())
        with pytest.raises(ValueError):
            gnn.graph_embedding(m, triangle(), states[:-1])


class TestReductionIdentities:
    def test_zero_damping_ignores_h0(self, rng):
        m = small(seed=6, damping=0.0)
        g = gnn.cycle_graph(5)
        h = rng.normal(size=(5, 4))
        a = gnn.hyper_gin_step(m, g, h, rng.normal(size=(5, 4))).data
        b = gnn.hyper_gin_step(m, g, h, rng.normal(size=(5, 4))).data
        assert np.array_equal(a, b)
        z = h + g.adjacency @ h
        ref = np.stack([np_mlp(m.g_spec, np_mlp(m.f_spec, m.store["theta_f"], z[v]), z[v])
                        for v in range(5)])
        np.testing.assert_allclose(a, ref, atol=1e-13)

    def test_unit_damping_freezes_theta(self, rng):
        m = small(seed=7, damping=1.0)
        g = gnn.path_graph(6)
        h0 = gnn.gin_step_0(m, g).data
        thetas = [gnn.hyper_gin_step(m, g, rng.normal(size=(6, 4)), h0, return_theta=True)[1].data
                  for _ in range(3)]
        assert all(np.array_equal(thetas[0], t) for t in thetas[1:])


class TestLossAndTraining:
    def test_loss_hand_values(self):
        tape = ad.Tape()
        logits = tape.const(np.array([0.0, 0.0]))
        assert gnn.classification_loss(logits, [0, 1]).item() == pytest.approx(np.log(2))
        big = tape.const(np.array([30.0, -30.0]))
        assert gnn.classification_loss(big, [1, 0]).item() == pytest.approx(0.0, abs=1e-12)

    def test_short_training_lowers_loss(self):
        train, test = gnn.make_synthetic_dataset("cycle-vs-path", sizes=range(4, 7), per_size=4)
        m = small(seed=0)
        clf = gnn.GinClassifier(m, train, test)
        report = training.train(clf, gnn.default_train_config(steps=60, batch_size=16, lr=1e-2),
                                seed=0)
        assert not report.diverged
        assert np.mean(report.losses[-10:]) < np.mean(report.losses[:10])

    def test_checkpoint_round_trip(self, tmp_path):
        m = small(seed=8)
        path = tmp_path / "gin.npz"
        ad.save_checkpoint(path, m.store, gnn.GinClassifier(m, [triangle()]).meta())
        again = gnn.model_from_checkpoint(*ad.load_checkpoint(path))
        graphs = [triangle(), gnn.path_graph(4)]
        np.testing.assert_array_equal(gnn.scores(m, graphs), gnn.scores(again, graphs))


class TestData:
    @pytest.mark.parametrize("family", gnn.FAMILIES)
    def test_deterministic_and_balanced(self, family):
        a_train, a_test = gnn.make_synthetic_dataset(family, seed=3, per_size=4)
        b_train, b_test = gnn.make_synthetic_dataset(family, seed=3, per_size=4)
        assert [g.label for g in a_train] == [g.label for g in b_train]
        assert all(np.array_equal(x.adjacency, y.adjacency) for x, y in zip(a_test, b_test))
        labels = [g.label for g in a_train + a_test]
        assert labels.count(0) == labels.count(1) == len(labels) // 2

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            gnn.make_synthetic_dataset("planarity")

    def test_triangle_parity_labels(self):
        train, _ = gnn.make_synthetic_dataset("triangle-count-parity", per_size=3)
        assert all(gnn.triangle_count(g.adjacency) % 2 == g.label for g in train)

    def test_triangle_count(self):
        k4 = np.ones((4, 4), dtype=np.uint8) - np.eye(4, dtype=np.uint8)
        assert gnn.triangle_count(k4) == 4
        assert gnn.triangle_count(gnn.path_graph(5).adjacency) == 0

    def test_wl_separates_cycle_and_path(self):
        assert gnn.wl_colors(gnn.cycle_graph(6), 2) != gnn.wl_colors(gnn.path_graph(6), 2)

    def test_wl_invariant_under_relabelling(self, rng):
        g = GraphInstance(gnn._random_graph(8, 0.4, rng), np.ones((8, 1)), 0)
        assert gnn.wl_colors(g, 3) == gnn.wl_colors(g.permuted(rng.permutation(8)), 3)

    def test_dump_load(self, tmp_path, rng):
        graphs = [gnn.cycle_graph(4), GraphInstance(gnn._random_graph(5, 0.5, rng),
                                                    rng.normal(size=(5, 2)), 0)]
        gnn.dump_graphs(graphs, tmp_path / "g.txt")
        back = gnn.load_graphs(tmp_path / "g.txt")
        for x, y in zip(graphs, back):
            assert np.array_equal(x.adjacency, y.adjacency)
            assert np.array_equal(x.features, y.features) and x.label == y.label

    def test_load_rejects_garbage(self, tmp_path):
        (tmp_path / "bad.txt").write_text("node 3\n")
        with pytest.raises(ValueError, match="graph"):
            gnn.load_graphs(tmp_path / "bad.txt")
