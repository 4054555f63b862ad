"""Self-contained property suites: oracles, invariants, gradient checks.

Each suite returns a list of (name, passed, detail) triples. The Hausdorff
oracles here are deliberately naive nested loops, independent of the
vectorized implementations they judge, but they pin the same canonical
reduction order (per-pair last-axis sums, ascending sort, multiply by the
reciprocal) so agreement can be asserted bitwise.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .engine import Episode, EpisodeConfig, sample_episode
from .features import SyntheticSpec, generate_synthetic
from .ggpc import (GgpcConfig, GgpcParams, _split_channels, edge_aggregation,
                   init_graph, node_aggregation, select)
from .gradcheck import grad_check
from .hpm import HpmConfig, build_tuples, frame_hausdorff, tuple_count, tuple_hausdorff
from .ldtm import LdtmConfig, LdtmParams, ldtm_forward
from .model import Model, ModelConfig
from .ops import AttentionParams, depthwise_conv1d, scaled_dot_attention
from .tensor import Parameter, Tensor


def _base_distance(u, v, distance):
    if distance == "euclidean":
        d = u - v
        return np.sqrt(np.sum(d * d))
    nu = max(np.sqrt(np.sum(u * u)), 1e-12)
    nv = max(np.sqrt(np.sum(v * v)), 1e-12)
    return 1.0 - np.dot(u / nu, v / nv)


def mean_hausdorff_oracle(a, b, distance="euclidean"):
    """Brute-force bidirectional mean Hausdorff over numpy [m, c] sets."""
    m = a.shape[0]
    mins = []
    for i in range(m):
        best = None
        for j in range(m):
            d = _base_distance(a[i], b[j], distance)
            if best is None or d < best:
                best = d
        mins.append(best)
    for j in range(m):
        best = None
        for i in range(m):
            d = _base_distance(b[j], a[i], distance)
            if best is None or d < best:
                best = d
        mins.append(best)
    return np.sort(np.asarray(mins)).sum() * (1.0 / m)


def build_tuples_oracle(x, encoding):
    """Brute-force positional-encoded pair construction for numpy [T, C]."""
    t = x.shape[0]
    xpe = x + encoding
    out = []
    for i1 in range(t):
        for i2 in range(i1 + 1, t):
            out.append(np.concatenate([xpe[i1], xpe[i2]]))
    return np.stack(out)


# -- suites -------------------------------------------------------------------


def hausdorff_suite(n_instances=100, seed=0, frame_fn=None, tuple_fn=None):
    """Bitwise agreement with the brute-force oracle plus metric properties."""
    frame_fn = frame_fn or (lambda s, q: frame_hausdorff(s, q, "euclidean"))
    tuple_fn = tuple_fn or (lambda s, q: tuple_hausdorff(s, q, "euclidean"))
    rng = np.random.default_rng(seed)
    results = []

    frame_exact = tuple_exact = symmetric = nonneg = self_zero = True
    for _ in range(n_instances):
        t = int(rng.integers(2, 9))
        c = int(rng.integers(2, 17))
        s = rng.standard_normal((t, c))
        q = rng.standard_normal((t, c))
        impl = float(frame_fn(Tensor(s), Tensor(q)).data)
        if impl != mean_hausdorff_oracle(s, q):
            frame_exact = False
        if impl != float(frame_fn(Tensor(q), Tensor(s)).data):
            symmetric = False
        if impl < 0:
            nonneg = False
        if float(frame_fn(Tensor(s), Tensor(s)).data) != 0.0:
            self_zero = False
        ts = build_tuples(Tensor(s)).data
        tq = build_tuples(Tensor(q)).data
        if float(tuple_fn(Tensor(ts), Tensor(tq)).data) != \
                mean_hausdorff_oracle(ts, tq):
            tuple_exact = False
    results.append((f"frame Hausdorff == brute-force oracle bitwise "
                    f"({n_instances} instances)", frame_exact, ""))
    results.append((f"tuple Hausdorff == brute-force oracle bitwise "
                    f"({n_instances} instances)", tuple_exact, ""))
    results.append(("Hausdorff symmetric in its arguments", symmetric, ""))
    results.append(("Hausdorff nonnegative, zero on identical sets",
                    nonneg and self_zero, ""))
    return results


def tuple_suite():
    """Pair-count law L = T(T-1)/2, with the T=8 -> 28 case called out."""
    results = []
    rng = np.random.default_rng(1)
    ok = True
    for t in range(2, 9):
        x = Tensor(rng.standard_normal((t, 6)))
        l_actual = build_tuples(x).shape[0]
        if l_actual != tuple_count(t) or l_actual != t * (t - 1) // 2:
            ok = False
    results.append(("tuple count L = T(T-1)/2 for T in 2..8", ok, ""))
    x8 = Tensor(rng.standard_normal((8, 6)))
    results.append(("28 tuples at T=8", build_tuples(x8).shape[0] == 28, ""))
    return results


def graph_suite(seed=0, dtype=np.float64):
    """Edge invariants after init and after each of 1..3 layers."""
    rng = np.random.default_rng(seed)
    params = GgpcParams.create(rng, 16, dtype)
    results = []
    norm_ok = conserve_ok = block_ok = True
    for trial in range(5):
        n_s, n_q = 5, int(rng.integers(1, 5))
        seeds = Tensor(rng.standard_normal((n_s + n_q, 16)).astype(dtype))
        state = init_graph(seeds, np.arange(n_s), n_s, n_q)
        edges = state.edges
        if not _edges_normalized(edges.data):
            norm_ok = False
        nodes = state.nodes
        for layer in range(3):
            nodes = node_aggregation(
                _restate(state, nodes, edges), params)
            new_edges, prenorm = edge_aggregation(nodes, edges, params,
                                                  return_prenorm=True)
            if not np.allclose(edges.data.sum(axis=1),
                               prenorm.data.sum(axis=1), atol=1e-6):
                conserve_ok = False
            edges = new_edges
            if not _edges_normalized(edges.data):
                norm_ok = False
        a0, _ = _split_channels(edges)
        cube = select(a0, n_s, n_q).m_siam.data
        for qv in range(1, n_q):
            if not np.array_equal(cube[qv][:n_s, :n_s], cube[0][:n_s, :n_s]):
                block_ok = False
    results.append(("edge 2-vectors nonnegative and sum to 1 within 1e-6 "
                    "after init and layers 1..3", norm_ok, ""))
    results.append(("pre-normalization row sums conserved within 1e-6",
                    conserve_ok, ""))
    results.append(("support-support block identical across queries",
                    block_ok, ""))
    return results


def _restate(state, nodes, edges):
    from .ggpc import GraphState
    return GraphState(nodes, edges, state.n_support, state.n_query, state.layer)


def _edges_normalized(edges):
    return bool((edges >= -1e-12).all()
                and np.allclose(edges.sum(axis=2), 1.0, atol=1e-6))


def toy_episode(t=4, c=8, h=3, w=3, n_way=2, k_shot=1, n_query=1, seed=5):
    """Tiny deterministic episode for end-to-end gradient checks."""
    spec = SyntheticSpec(n_classes=max(4, n_way), videos_per_class=k_shot + 2,
                         t_raw=t, c=c, h=h, w=w, noise_sigma=0.3,
                         order_pair_fraction=0.0, seed=seed)
    ds = generate_synthetic(spec)
    rng = np.random.default_rng(seed)
    cfg = EpisodeConfig(n_way=n_way, k_shot=k_shot, n_query=n_query, t=t)
    return sample_episode(ds, cfg, "train", rng)


def toy_model(t=4, c=8, seed=6, gamma=0.4, beta=0.6, alpha=0.5,
              dtype=np.float64):
    cfg = ModelConfig(
        t=t, c=c,
        ldtm=LdtmConfig(gap=2, gamma=gamma, beta=beta, kernel_size=3),
        ggpc=GgpcConfig(layers=1, transductive=True, enabled=True),
        hpm=HpmConfig(alpha=alpha, distance="euclidean", temperature=1.0))
    return Model(cfg, seed=seed, dtype=dtype)


def gradient_suite(step=1e-3):
    """Finite-difference checks: primitives, the temporal module, the pipeline."""
    results = []
    rng = np.random.default_rng(2)

    a = Parameter(rng.standard_normal((3, 4)), "a", dtype=np.float64)
    b = Parameter(rng.standard_normal((4, 2)), "b", dtype=np.float64)
    err = grad_check(lambda: T.sum_(T.matmul(a, b)), [a, b], step)
    results.append(("matmul gradient vs finite differences", err < 1e-4,
                    f"max err {err:.2e}"))

    x = Parameter(rng.standard_normal((2, 3, 4)), "x", dtype=np.float64)
    attn = AttentionParams.create(rng, 4, "attn", np.float64)
    err = grad_check(lambda: T.mean(scaled_dot_attention(x, attn)),
                     [x] + attn.parameters(), step)
    results.append(("attention gradient vs finite differences", err < 1e-4,
                    f"max err {err:.2e}"))

    k = Parameter(rng.standard_normal((3, 3)), "k", dtype=np.float64)
    xc = Parameter(rng.standard_normal((2, 3, 5)), "xc", dtype=np.float64)
    wc = Tensor(rng.standard_normal((2, 3, 5)))
    err = grad_check(lambda: T.sum_(T.mul(depthwise_conv1d(xc, k), wc)),
                     [xc, k], step)
    results.append(("depthwise conv gradient vs finite differences",
                    err < 1e-4, f"max err {err:.2e}"))

    lg = Parameter(rng.standard_normal((3, 5)), "lg", dtype=np.float64)
    tg = rng.integers(0, 5, size=3)
    err = grad_check(lambda: T.softmax_cross_entropy(lg, tg), [lg], step)
    results.append(("cross-entropy gradient vs finite differences",
                    err < 1e-4, f"max err {err:.2e}"))

    ld_params = LdtmParams.create(np.random.default_rng(3), 4, 8, 3, np.float64)
    f = Parameter(np.random.default_rng(4).standard_normal((2, 4, 8, 3, 3)),
                  "f", dtype=np.float64)
    ld_cfg = LdtmConfig(gamma=0.3, beta=0.6, gap=2)
    err = grad_check(
        lambda: T.mean(ldtm_forward(f, ld_cfg, ld_params).per_frame),
        [f] + ld_params.parameters(), step)
    results.append(("temporal module gradient vs finite differences",
                    err < 1e-4, f"max err {err:.2e}"))

    model = toy_model()
    episode = toy_episode()
    err = grad_check(
        lambda: model.forward_episode(episode, graph_loss_weight=1.0)[3],
        model.parameters(), step)
    results.append(("end-to-end episode loss gradient vs finite differences",
                    err < 1e-4, f"max err {err:.2e}"))
    return results


def all_suites():
    return {
        "gradients": gradient_suite(),
        "hausdorff-oracles": hausdorff_suite(),
        "tuple-combinatorics": tuple_suite(),
        "graph-invariants": graph_suite(),
    }
