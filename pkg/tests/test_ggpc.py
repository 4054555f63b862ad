"""Graph construction, propagation invariants, select, task-feature fusion."""

import numpy as np
import pytest

from gghm import tensor as T
from gghm.errors import ConfigError, DegenerateGraphError
from gghm.gradcheck import grad_check
from gghm.ggpc import (GgpcParams, GraphState, SimilarityCube,
                       build_task_features, edge_aggregation, edge_similarity,
                       graph_logits, graph_loss, graph_predictions, init_graph,
                       node_aggregation, pool_support_shots, propagate, select,
                       _split_channels)
from gghm.tensor import Parameter, Tensor


def make_params(c=8, seed=0, dtype=np.float64):
    return GgpcParams.create(np.random.default_rng(seed), c, dtype)


def rand_state(n_support=5, n_query=3, c=8, seed=1, dtype=np.float64):
    rng = np.random.default_rng(seed)
    seeds = Tensor(rng.standard_normal((n_support + n_query, c)).astype(dtype))
    return init_graph(seeds, np.arange(n_support), n_support, n_query)


# -- initialization ---------------------------------------------------------------


def test_init_same_class_support_pair():
    rng = np.random.default_rng(0)
    seeds = Tensor(rng.standard_normal((3, 4)))
    state = init_graph(seeds, np.array([0, 0]), 2, 1)
    assert state.edges.data[0, 1].tolist() == [1.0, 0.0]


def test_init_support_query_pair_is_half_half():
    state = rand_state(2, 1, 4)
    assert state.edges.data[0, 2].tolist() == [0.5, 0.5]
    assert state.edges.data[2, 0].tolist() == [0.5, 0.5]
    assert state.edges.data[2, 2].tolist() == [0.5, 0.5]


def test_init_five_way_structure():
    state = rand_state(5, 1, 8)
    e = state.edges.data
    off_diag = [(i, j) for i in range(5) for j in range(5) if i != j]
    assert len(off_diag) == 20  # 10 unordered pairs, both directions
    for i, j in off_diag:
        assert e[i, j].tolist() == [0.0, 1.0]
    for i in range(5):
        assert e[i, i].tolist() == [1.0, 0.0]
    assert e.shape == (6, 6, 2)


def test_init_label_count_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        init_graph(Tensor(rng.standard_normal((3, 4))), np.array([0]), 2, 1)


def edges_normalized(edges):
    ok_nonneg = (edges >= -1e-12).all()
    ok_sum = np.allclose(edges.sum(axis=2), 1.0, atol=1e-6)
    return ok_nonneg and ok_sum


def test_init_edges_normalized():
    assert edges_normalized(rand_state().edges.data)


# -- node aggregation ---------------------------------------------------------------


def test_node_aggregation_uniform_edges_average_neighbors():
    rng = np.random.default_rng(2)
    c = 4
    nodes = Tensor(rng.standard_normal((3, c)))
    edges = Tensor(np.full((3, 3, 2), 0.5))
    state = GraphState(nodes, edges, 2, 1)
    params = make_params(c, seed=3)
    # make f_node the identity on the channel-0 aggregate so we can see it
    params.node_fc1.w.data = np.vstack([np.eye(c), np.zeros((c, c))])
    params.node_fc1.b.data = np.zeros(c)
    params.node_fc2.w.data = np.eye(c)
    params.node_fc2.b.data = np.zeros(c)
    out = node_aggregation(state, params)
    mean_neighbors = nodes.data.mean(axis=0)
    expected = np.where(mean_neighbors > 0, mean_neighbors, 0.01 * mean_neighbors)
    assert np.allclose(out.data, np.tile(expected, (3, 1)), atol=1e-10)


def test_node_aggregation_concentrated_edge_selects_neighbor():
    rng = np.random.default_rng(4)
    c = 4
    nodes = Tensor(rng.standard_normal((3, c)))
    e = np.zeros((3, 3, 2))
    e[:, :, 1] = 1 / 3
    e[0, 2, 0] = 1.0  # node 0's channel-0 mass sits entirely on node 2
    e[1, :, 0] = 1 / 3
    e[2, :, 0] = 1 / 3
    params = make_params(c, seed=5)
    params.node_fc1.w.data = np.vstack([np.eye(c), np.zeros((c, c))])
    params.node_fc1.b.data = np.zeros(c)
    params.node_fc2.w.data = np.eye(c)
    params.node_fc2.b.data = np.zeros(c)
    out = node_aggregation(GraphState(Tensor(nodes.data), Tensor(e), 2, 1), params)
    v2 = nodes.data[2]
    expected = np.where(v2 > 0, v2, 0.01 * v2)
    assert np.allclose(out.data[0], expected, atol=1e-10)


def test_node_aggregation_zero_row_sum_degenerate():
    nodes = Tensor(np.ones((2, 4)))
    edges = Tensor(np.zeros((2, 2, 2)))
    with pytest.raises(DegenerateGraphError):
        node_aggregation(GraphState(nodes, edges, 1, 1), make_params(4))


def test_node_aggregation_gradients():
    # seeds chosen so no f_node preactivation sits within the FD step of the
    # LeakyReLU kink
    state = rand_state(3, 1, 4, seed=60)
    params = make_params(4, seed=70)
    nodes = Parameter(state.nodes.data.copy(), "nodes", dtype=np.float64)

    def f():
        st = GraphState(nodes, state.edges, 3, 1)
        return T.mean(node_aggregation(st, params))

    err = grad_check(f, [nodes] + params.node_fc1.parameters()
                     + params.node_fc2.parameters())
    assert err < 1e-4


# -- edge aggregation -----------------------------------------------------------------


def test_edge_rowsum_conservation_before_normalization():
    state = rand_state(5, 2, 8, seed=8)
    params = make_params(8, seed=9)
    nodes = node_aggregation(state, params)
    _, prenorm = edge_aggregation(nodes, state.edges, params,
                                  return_prenorm=True)
    before = state.edges.data.sum(axis=1)
    after = prenorm.data.sum(axis=1)
    assert np.allclose(before, after, atol=1e-6)


def test_edge_vectors_normalized_after_update():
    state = rand_state(5, 2, 8, seed=10)
    params = make_params(8, seed=11)
    nodes = node_aggregation(state, params)
    out = edge_aggregation(nodes, state.edges, params)
    assert edges_normalized(out.data)


def test_edge_similarity_in_unit_interval_and_symmetric():
    rng = np.random.default_rng(12)
    nodes = Tensor(rng.standard_normal((6, 8)))
    s = edge_similarity(nodes, make_params(8, seed=13)).data
    assert ((s > 0) & (s < 1)).all()
    assert np.allclose(s, s.T, atol=1e-12)


def test_identical_nodes_intra_strength_exceeds_distant_node():
    # two coincident nodes and one node far away: after one update, the
    # coincident pair's channel-0 edge must dominate the far pair's
    c = 8
    nodes_np = np.zeros((3, c))
    nodes_np[2] = 5.0
    edges = np.full((3, 3, 2), 0.5)
    params = make_params(c, seed=14)
    out = edge_aggregation(Tensor(nodes_np), Tensor(edges), params)
    s = edge_similarity(Tensor(nodes_np), params).data
    if s[0, 1] > s[0, 2]:  # f_edge judged the pair more similar at init
        assert out.data[0, 1, 0] > out.data[0, 2, 0]
    else:
        assert out.data[0, 1, 0] < out.data[0, 2, 0]


def test_edge_aggregation_gradients():
    state = rand_state(3, 1, 4, seed=15)
    params = make_params(4, seed=16)
    nodes = Parameter(state.nodes.data.copy(), "nodes", dtype=np.float64)
    edge_params = [p for lin, bn in params.edge_fcs
                   for p in lin.parameters() + bn.parameters()]

    def f():
        return T.mean(edge_aggregation(nodes, state.edges, params))

    err = grad_check(f, [nodes] + edge_params)
    assert err < 1e-4


# -- propagation ---------------------------------------------------------------------


def test_propagate_zero_layers_is_identity():
    state = rand_state(seed=17)
    out = propagate(state, 0, make_params(8, seed=18))
    assert out.nodes is state.nodes
    assert out.edges is state.edges


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_propagate_invariants_hold_per_layer(layers):
    state = rand_state(5, 3, 8, seed=19)
    params = make_params(8, seed=20)
    out = propagate(state, layers, params)
    assert out.layer == layers
    assert edges_normalized(out.edges.data)


# -- select ---------------------------------------------------------------------------


def test_select_single_query_copies_matrix():
    e = Tensor(np.array([[1.0, 0.0, 0.6], [0.0, 1.0, 0.2], [0.6, 0.2, 1.0]]))
    cube = select(e, 2, 1)
    assert np.array_equal(cube.m_siam.data[0], e.data)


def test_select_two_queries_share_support_block():
    rng = np.random.default_rng(21)
    e = Tensor(rng.random((4, 4)))
    cube = select(e, 2, 2)
    assert cube.m_siam.shape == (2, 3, 3)
    assert np.array_equal(cube.m_siam.data[0][:2, :2], e.data[:2, :2])
    assert np.array_equal(cube.m_siam.data[1][:2, :2], e.data[:2, :2])
    # last row/col carry that query's edges, corner its self-edge
    assert np.array_equal(cube.m_siam.data[0][:2, 2], e.data[:2, 2])
    assert np.array_equal(cube.m_siam.data[0][2, :2], e.data[2, :2])
    assert cube.m_siam.data[0][2, 2] == e.data[2, 2]
    assert cube.m_siam.data[1][2, 2] == e.data[3, 3]


def test_select_shape_for_five_way():
    state = rand_state(5, 4, 8, seed=22)
    params = make_params(8, seed=23)
    out = propagate(state, 1, params)
    a0, _ = _split_channels(out.edges)
    cube = select(a0, 5, 4)
    assert cube.m_siam.shape == (4, 6, 6)
    assert (cube.m_siam.data >= 0).all() and (cube.m_siam.data <= 1).all()


# -- task features ---------------------------------------------------------------------


def test_build_task_features_shapes():
    rng = np.random.default_rng(24)
    n_s, n_q, t, c = 5, 3, 4, 8
    cube = SimilarityCube(Tensor(rng.random((n_q, n_s + 1, n_s + 1))))
    task = build_task_features(
        cube,
        Tensor(rng.standard_normal((n_s, t, c))),
        Tensor(rng.standard_normal((n_s, c))),
        Tensor(rng.standard_normal((n_q, t, c))),
        Tensor(rng.standard_normal((n_q, c))),
        make_params(c, seed=25))
    assert task.support.shape == (n_q, n_s, t, c)
    assert task.query.shape == (n_q, t, c)


def test_build_task_features_identity_cube_no_mixing():
    rng = np.random.default_rng(26)
    n_s, n_q, t, c = 3, 2, 2, 4
    params = make_params(c, seed=27)
    params.emb.w.data = np.eye(c)
    params.emb.b.data = np.zeros(c)
    params.ffn.w.data = np.eye(c)
    params.ffn.b.data = np.zeros(c)
    eye = np.tile(np.eye(n_s + 1), (n_q, 1, 1))
    cube = SimilarityCube(Tensor(eye))
    sup_seed = rng.standard_normal((n_s, c))
    qry_seed = rng.standard_normal((n_q, c))
    sup_pf = Tensor(rng.standard_normal((n_s, t, c)))
    qry_pf = Tensor(rng.standard_normal((n_q, t, c)))
    task = build_task_features(cube, sup_pf, Tensor(sup_seed), qry_pf,
                               Tensor(qry_seed), params)
    # with identity cube and identity emb/ffn the graph part is the node seeds,
    # so the fused support feature is f_fuse([sup_pf ; sup_seed]) exactly
    manual = np.concatenate(
        [sup_pf.data[None, :, :, :].repeat(n_q, 0),
         np.tile(sup_seed[None, :, None, :], (n_q, 1, t, 1))], axis=-1)
    expected = manual @ params.fuse.w.data + params.fuse.b.data
    assert np.allclose(task.support.data, expected, atol=1e-10)


def test_build_task_features_gradients():
    rng = np.random.default_rng(28)
    n_s, n_q, t, c = 3, 2, 2, 4
    params = make_params(c, seed=29)
    cube = SimilarityCube(Tensor(rng.random((n_q, n_s + 1, n_s + 1))))
    sup_pf = Parameter(rng.standard_normal((n_s, t, c)), "sp", dtype=np.float64)
    sup_seed = Parameter(rng.standard_normal((n_s, c)), "ss", dtype=np.float64)
    qry_pf = Parameter(rng.standard_normal((n_q, t, c)), "qp", dtype=np.float64)
    qry_seed = Parameter(rng.standard_normal((n_q, c)), "qs", dtype=np.float64)

    def f():
        task = build_task_features(cube, sup_pf, sup_seed, qry_pf, qry_seed,
                                   params)
        return T.add(T.mean(task.support), T.mean(task.query))

    trainable = [sup_pf, sup_seed, qry_pf, qry_seed] + params.emb.parameters() \
        + params.ffn.parameters() + params.fuse.parameters()
    err = grad_check(f, trainable)
    assert err < 1e-4


def test_permuting_queries_permutes_task_features():
    rng = np.random.default_rng(30)
    n_s, n_q, t, c = 4, 3, 2, 8
    params = make_params(c, seed=31)
    seeds = rng.standard_normal((n_s + n_q, c))
    state = init_graph(Tensor(seeds), np.arange(n_s), n_s, n_q)
    out = propagate(state, 1, params)
    a0, _ = _split_channels(out.edges)
    cube = select(a0, n_s, n_q)
    sup_pf = Tensor(rng.standard_normal((n_s, t, c)))
    qry_pf = rng.standard_normal((n_q, t, c))
    task = build_task_features(cube, sup_pf, Tensor(seeds[:n_s]),
                               Tensor(qry_pf), Tensor(seeds[n_s:]), params)

    perm = np.array([2, 0, 1])
    seeds_p = np.concatenate([seeds[:n_s], seeds[n_s:][perm]])
    state_p = init_graph(Tensor(seeds_p), np.arange(n_s), n_s, n_q)
    out_p = propagate(state_p, 1, params)
    a0_p, _ = _split_channels(out_p.edges)
    cube_p = select(a0_p, n_s, n_q)
    task_p = build_task_features(cube_p, sup_pf, Tensor(seeds[:n_s]),
                                 Tensor(qry_pf[perm]), Tensor(seeds[n_s:][perm]),
                                 params)
    assert np.allclose(task_p.support.data, task.support.data[perm], atol=1e-8)
    assert np.allclose(task_p.query.data, task.query.data[perm], atol=1e-8)


# -- shot pooling -----------------------------------------------------------------------


def test_pool_support_shots_k1_identity():
    rng = np.random.default_rng(32)
    pf = Tensor(rng.standard_normal((4, 2, 3)))
    seed = Tensor(rng.standard_normal((4, 3)))
    out_pf, out_seed = pool_support_shots(pf, seed, 1)
    assert out_pf is pf and out_seed is seed


def test_pool_support_shots_mean():
    pf = Tensor(np.stack([np.ones((2, 3)), 3 * np.ones((2, 3)),
                          2 * np.ones((2, 3)), 2 * np.ones((2, 3))]))
    seed = Tensor(np.stack([np.ones(3), 3 * np.ones(3),
                            -np.ones(3), np.ones(3)]))
    out_pf, out_seed = pool_support_shots(pf, seed, 2)
    assert np.allclose(out_pf.data[0], 2.0)
    assert np.allclose(out_pf.data[1], 2.0)
    assert np.allclose(out_seed.data[0], 2.0)
    assert np.allclose(out_seed.data[1], 0.0)  # f and -f average to zero


def test_pool_support_shots_identical_pair_is_the_shot():
    rng = np.random.default_rng(33)
    shot = rng.standard_normal((2, 3))
    pf = Tensor(np.stack([shot, shot]))
    seed = Tensor(np.stack([shot[0], shot[0]]))
    out_pf, _ = pool_support_shots(pf, seed, 2)
    assert np.allclose(out_pf.data[0], shot, atol=1e-12)


def test_pool_support_shots_ragged_rejected():
    rng = np.random.default_rng(34)
    pf = Tensor(rng.standard_normal((5, 2, 3)))
    seed = Tensor(rng.standard_normal((5, 3)))
    with pytest.raises(ConfigError):
        pool_support_shots(pf, seed, 2)


# -- graph loss ---------------------------------------------------------------------------


def test_graph_loss_uniform_edges_is_log_n():
    c = 8
    rng = np.random.default_rng(35)
    seeds = Tensor(rng.standard_normal((7, c)))
    state = init_graph(seeds, np.arange(5), 5, 2)
    loss = graph_loss(state, np.array([0, 3]))
    assert np.isclose(float(loss.data), np.log(5.0), atol=1e-9)


def test_graph_loss_confident_edges_small_positive():
    e = np.full((3, 3, 2), 0.5)
    e[2, 0, 0] = 0.999
    e[2, 1, 0] = 0.001
    state = GraphState(Tensor(np.zeros((3, 4))), Tensor(e), 2, 1)
    loss = float(graph_loss(state, np.array([0])).data)
    assert 0 < loss < np.log(2.0)


def test_graph_predictions_argmax_of_aca_row():
    e = np.full((4, 4, 2), 0.5)
    e[3, 0, 0] = 0.2
    e[3, 1, 0] = 0.9
    e[3, 2, 0] = 0.1
    state = GraphState(Tensor(np.zeros((4, 2))), Tensor(e), 3, 1)
    assert graph_predictions(state).tolist() == [1]
    logits = graph_logits(state)
    assert logits.shape == (1, 3)
