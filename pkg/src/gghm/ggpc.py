"""Graph-guided task conditioning of episode features.

Every video in an episode becomes a node; each node pair carries a 2-channel
edge whose channels encode intra-class vs inter-class relation strength.
Edges are initialized from support labels, propagated by alternating node and
edge aggregation, and the final channel-0 edges provide (a) per-query
similarity matrices and (b) class logits for an auxiliary edge loss. Task
features fuse the per-frame enhanced features with graph-conditioned node
features, so every query owns its own view of the supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateGraphError, DimensionError
from .ops import BatchNormParams, LinearParams, batchnorm, linear
from .tensor import Tensor

LEAKY_SLOPE = 0.01
_ROW_SUM_TINY = 1e-20


@dataclass
class GgpcConfig:
    layers: int = 1
    transductive: bool = True
    enabled: bool = True

    def validate(self):
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")


@dataclass
class GgpcParams:
    node_fc1: LinearParams   # 2C -> C
    node_fc2: LinearParams   # C -> C
    edge_fcs: list           # four (LinearParams, BatchNormParams) stages -> 1
    emb: LinearParams        # C -> C
    ffn: LinearParams        # C -> C
    fuse: LinearParams       # 2C -> C

    @classmethod
    def create(cls, rng, c, dtype, prefix="ggpc"):
        widths = [c, c, max(1, c // 2), max(1, c // 4), 1]
        stages = []
        for i in range(4):
            stages.append((
                LinearParams.create(rng, widths[i], widths[i + 1],
                                    f"{prefix}.f_edge.{i}", dtype),
                BatchNormParams.create(widths[i + 1],
                                       f"{prefix}.f_edge.{i}.bn", dtype),
            ))
        return cls(
            node_fc1=LinearParams.create(rng, 2 * c, c, f"{prefix}.f_node.fc1", dtype),
            node_fc2=LinearParams.create(rng, c, c, f"{prefix}.f_node.fc2", dtype),
            edge_fcs=stages,
            emb=LinearParams.create(rng, c, c, f"{prefix}.f_emb", dtype),
            ffn=LinearParams.create(rng, c, c, f"{prefix}.f_ffn", dtype),
            fuse=LinearParams.create(rng, 2 * c, c, f"{prefix}.f_fuse", dtype),
        )

    def parameters(self):
        out = self.node_fc1.parameters() + self.node_fc2.parameters()
        for lin, bn in self.edge_fcs:
            out += lin.parameters() + bn.parameters()
        return out + self.emb.parameters() + self.ffn.parameters() + self.fuse.parameters()


@dataclass
class GraphState:
    nodes: Tensor        # [B, C]
    edges: Tensor        # [B, B, 2]; channel 0 intra-class, 1 inter-class
    n_support: int
    n_query: int
    layer: int = 0


@dataclass
class SimilarityCube:
    m_siam: Tensor       # [N_Q, N_S+1, N_S+1]


@dataclass
class TaskFeatures:
    support: Tensor      # [N_Q, N_S, T, C]: each query's view of the supports
    query: Tensor        # [N_Q, T, C]


def init_graph(node_seed, support_labels, n_support, n_query):
    """Label-informed edge init: same-class support pairs [1,0], different-class
    support pairs [0,1], every pair involving a query [0.5,0.5]."""
    b = node_seed.shape[0]
    support_labels = np.asarray(support_labels)
    if support_labels.shape != (n_support,):
        raise ConfigError(
            f"expected {n_support} support labels, got {support_labels.shape}")
    if b != n_support + n_query:
        raise ConfigError(
            f"node count {b} != n_support {n_support} + n_query {n_query}")
    if n_query < 1:
        raise ConfigError("at least one query node is required")
    edges = np.full((b, b, 2), 0.5, dtype=node_seed.dtype)
    same = support_labels[:, None] == support_labels[None, :]
    edges[:n_support, :n_support, 0] = np.where(same, 1.0, 0.0)
    edges[:n_support, :n_support, 1] = np.where(same, 0.0, 1.0)
    return GraphState(node_seed, Tensor(edges), n_support, n_query)


def _split_channels(edges):
    b = edges.shape[0]
    a0 = T.reshape(T.slice_axis(edges, 2, 0, 1), (b, b))
    a1 = T.reshape(T.slice_axis(edges, 2, 1, 2), (b, b))
    return a0, a1


def node_aggregation(state, params):
    """Weighted neighbor sums per channel, concatenated and mapped 2C -> C."""
    rowsum = T.sum_(state.edges, axis=1, keepdims=True)     # [B, 1, 2]
    if rowsum.data.min() <= _ROW_SUM_TINY:
        raise DegenerateGraphError(
            f"zero row-sum in edge channel at layer {state.layer}")
    norm = T.div(state.edges, rowsum)
    n0, n1 = _split_channels(norm)
    agg0 = T.matmul(n0, state.nodes)
    agg1 = T.matmul(n1, state.nodes)
    h = T.concat([agg0, agg1], axis=1)
    h = T.leaky_relu(linear(h, params.node_fc1), LEAKY_SLOPE)
    return linear(h, params.node_fc2)


def edge_similarity(nodes, params):
    """sigmoid(f_edge(|v_i - v_j|)) for all pairs -> [B, B] in (0, 1)."""
    b, c = nodes.shape
    vi = T.reshape(nodes, (b, 1, c))
    vj = T.reshape(nodes, (1, b, c))
    x = T.reshape(T.abs_(T.sub(vi, vj)), (b * b, c))
    for lin, bn in params.edge_fcs:
        x = T.leaky_relu(batchnorm(linear(x, lin), bn), LEAKY_SLOPE)
    s = T.sigmoid(x)
    if not np.all(np.isfinite(s.data)):
        raise DegenerateGraphError("non-finite edge similarity")
    return T.reshape(s, (b, b))


def edge_aggregation(nodes, edges, params, return_prenorm=False):
    """Similarity-weighted edge update conserving per-row channel mass, then
    per-edge L1 normalization."""
    b = edges.shape[0]
    s = edge_similarity(nodes, params)
    a0, a1 = _split_channels(edges)

    def channel_update(a, weight):
        num = T.mul(weight, a)
        den = T.sum_(num, axis=1, keepdims=True)
        if den.data.min() <= _ROW_SUM_TINY:
            raise DegenerateGraphError("zero weighted row-sum in edge update")
        rowmass = T.sum_(a, axis=1, keepdims=True)
        return T.mul(T.div(num, den), rowmass)

    bar0 = channel_update(a0, s)
    bar1 = channel_update(a1, T.sub(1.0, s))
    prenorm = T.concat([T.reshape(bar0, (b, b, 1)), T.reshape(bar1, (b, b, 1))],
                       axis=2)
    total = T.sum_(prenorm, axis=2, keepdims=True)
    if total.data.min() <= _ROW_SUM_TINY:
        raise DegenerateGraphError("zero edge mass after update")
    out = T.div(prenorm, total)
    if return_prenorm:
        return out, prenorm
    return out


def propagate(state, layers, params):
    """Alternate node and edge aggregation `layers` times."""
    for _ in range(layers):
        nodes = node_aggregation(state, params)
        edges = edge_aggregation(nodes, state.edges, params)
        state = GraphState(nodes, edges, state.n_support, state.n_query,
                           state.layer + 1)
    return state


def select(edges_channel0, n_support, n_query):
    """Per-query (N_S+1)x(N_S+1) similarity matrices from the final edges.

    Row/column order: the support nodes first, then that query; the shared
    support-support block is identical across queries.
    """
    b = edges_channel0.shape[0]
    if b != n_support + n_query:
        raise DimensionError(
            f"edge matrix size {b} != n_support {n_support} + n_query {n_query}")
    sel = np.empty((n_query, n_support + 1), dtype=np.int64)
    sel[:, :n_support] = np.arange(n_support)[None, :]
    sel[:, n_support] = n_support + np.arange(n_query)
    rows = T.take(edges_channel0, sel.reshape(-1), axis=0)
    rows = T.reshape(rows, (n_query, n_support + 1, b))
    cols = np.broadcast_to(sel[:, None, :],
                           (n_query, n_support + 1, n_support + 1))
    return SimilarityCube(T.take_along_last(rows, cols))


def pool_support_shots(per_frame, node_seed, k):
    """Mean over the K shots of each class; inputs are class-major [N*K, ...]."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    nk = per_frame.shape[0]
    if nk % k != 0:
        raise ConfigError(f"{nk} support videos not divisible into shots of {k}")
    if k == 1:
        return per_frame, node_seed
    n = nk // k
    _, t, c = per_frame.shape
    pooled_pf = T.mean(T.reshape(per_frame, (n, k, t, c)), axis=1)
    pooled_seed = T.mean(T.reshape(node_seed, (n, k, c)), axis=1)
    return pooled_pf, pooled_seed


def build_task_features(cube, support_per_frame, support_seed,
                        query_per_frame, query_seed, params):
    """Fuse graph-conditioned node features with the per-frame features.

    support_per_frame: [N_S, T, C]; query_per_frame: [N_Q, T, C];
    seeds are the matching [*, C] node vectors. Output: TaskFeatures.
    """
    n_s, t, c = support_per_frame.shape
    n_q = query_per_frame.shape[0]
    if cube.m_siam.shape != (n_q, n_s + 1, n_s + 1):
        raise DimensionError(
            f"similarity cube {cube.m_siam.shape} does not match "
            f"N_S={n_s}, N_Q={n_q} at the node-fusion stage")
    sup_nodes = T.repeat_leading(support_seed, n_q)            # [N_Q, N_S, C]
    qry_nodes = T.reshape(query_seed, (n_q, 1, c))
    f_node = T.concat([sup_nodes, qry_nodes], axis=1)          # [N_Q, N_S+1, C]
    graph = linear(T.matmul(cube.m_siam, linear(f_node, params.emb)), params.ffn)
    sup_graph = T.expand_axis(T.slice_axis(graph, 1, 0, n_s), 2, t)
    qry_graph = T.expand_axis(
        T.reshape(T.slice_axis(graph, 1, n_s, n_s + 1), (n_q, c)), 1, t)
    sup_hid = T.repeat_leading(support_per_frame, n_q)         # [N_Q, N_S, T, C]
    support = linear(T.concat([sup_hid, sup_graph], axis=-1), params.fuse)
    query = linear(T.concat([query_per_frame, qry_graph], axis=-1), params.fuse)
    return TaskFeatures(support, query)


def graph_logits(state):
    """Channel-0 edge values from each query to the support nodes: [N_Q, N_S]."""
    a0, _ = _split_channels(state.edges)
    rows = T.take(a0, state.n_support + np.arange(state.n_query), axis=0)
    return T.slice_axis(rows, 1, 0, state.n_support)


def graph_loss(state, query_labels):
    """Cross-entropy of the query-to-support edge rows against the true class."""
    logits = graph_logits(state)
    return T.softmax_cross_entropy(logits, np.asarray(query_labels))


def graph_predictions(state):
    """Intermediate class predictions read directly off the edge rows."""
    with T.no_grad():
        return np.argmax(graph_logits(state).data, axis=1)
