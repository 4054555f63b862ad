"""Full matching model: parameter container and episode-level forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ggpc as G
from . import hpm as H
from . import ldtm as L
from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass
class ModelConfig:
    t: int = 8
    c: int = 64
    ldtm: L.LdtmConfig = None
    ggpc: G.GgpcConfig = None
    hpm: H.HpmConfig = None

    def __post_init__(self):
        self.ldtm = self.ldtm or L.LdtmConfig()
        self.ggpc = self.ggpc or G.GgpcConfig()
        self.hpm = self.hpm or H.HpmConfig()

    def validate(self):
        if self.t < 1 or self.c < 1:
            raise ConfigError("t and c must be positive")
        self.ldtm.validate()
        self.ggpc.validate()
        self.hpm.validate()


class Model:
    """Owns every trainable parameter and the episode forward wiring."""

    def __init__(self, cfg: ModelConfig, seed=0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.ldtm_params = L.LdtmParams.create(
            rng, cfg.t, cfg.c, cfg.ldtm.kernel_size, self.dtype)
        self.ggpc_params = G.GgpcParams.create(rng, cfg.c, self.dtype)

    def parameters(self):
        return self.ldtm_params.parameters() + self.ggpc_params.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state):
        params = {p.name: p for p in self.parameters()}
        missing = set(params) - set(state)
        if missing:
            raise ConfigError(f"checkpoint is missing parameter {sorted(missing)[0]!r}")
        for name, arr in state.items():
            if name not in params:
                raise ConfigError(f"checkpoint has unknown parameter {name!r}")
            p = params[name]
            if tuple(arr.shape) != p.shape:
                raise ConfigError(
                    f"checkpoint parameter {name!r} has shape {tuple(arr.shape)}, "
                    f"model expects {p.shape}")
            p.data = arr.astype(self.dtype)

    def forward_episode(self, episode, graph_loss_weight=1.0):
        """Run one episode end to end.

        Returns (MatchResult, graph loss Tensor, SimilarityCube | None,
        total loss Tensor).
        """
        cfg = self.cfg
        n_way = episode.n_way
        k = episode.k_shot
        sup = np.asarray(episode.support_frames, dtype=self.dtype)
        qry = np.asarray(episode.query_frames, dtype=self.dtype)
        if sup.shape[1:] != qry.shape[1:]:
            raise DimensionError(
                f"support/query frame shapes disagree: {sup.shape} vs {qry.shape}")
        if sup.shape[2] != cfg.c:
            raise DimensionError(
                f"episode features have {sup.shape[2]} channels, model expects {cfg.c}")
        n_s_vid = sup.shape[0]
        n_q = qry.shape[0]

        x = Tensor(np.concatenate([sup, qry], axis=0))
        enhanced = L.ldtm_forward(x, cfg.ldtm, self.ldtm_params)
        sup_pf = T.slice_axis(enhanced.per_frame, 0, 0, n_s_vid)
        qry_pf = T.slice_axis(enhanced.per_frame, 0, n_s_vid, n_s_vid + n_q)
        sup_seed = T.slice_axis(enhanced.node_seed, 0, 0, n_s_vid)
        qry_seed = T.slice_axis(enhanced.node_seed, 0, n_s_vid, n_s_vid + n_q)

        # class-pool multi-shot supports so the graph sees one node per class
        sup_pf, sup_seed = G.pool_support_shots(sup_pf, sup_seed, k)
        class_labels = np.arange(n_way)

        if cfg.ggpc.enabled:
            if cfg.ggpc.transductive:
                seeds = T.concat([sup_seed, qry_seed], axis=0)
                state = G.init_graph(seeds, class_labels, n_way, n_q)
                state = G.propagate(state, cfg.ggpc.layers, self.ggpc_params)
                a0, _ = G._split_channels(state.edges)
                cube = G.select(a0, n_way, n_q)
                gloss = G.graph_loss(state, episode.query_labels)
            else:
                cubes, glosses = [], []
                for qi in range(n_q):
                    seeds = T.concat(
                        [sup_seed, T.slice_axis(qry_seed, 0, qi, qi + 1)], axis=0)
                    state = G.init_graph(seeds, class_labels, n_way, 1)
                    state = G.propagate(state, cfg.ggpc.layers, self.ggpc_params)
                    a0, _ = G._split_channels(state.edges)
                    cubes.append(G.select(a0, n_way, 1).m_siam)
                    glosses.append(G.graph_logits(state))
                cube = G.SimilarityCube(T.concat(cubes, axis=0))
                logits = T.concat(glosses, axis=0)
                gloss = T.softmax_cross_entropy(
                    logits, np.asarray(episode.query_labels))
            task = G.build_task_features(cube, sup_pf, sup_seed,
                                         qry_pf, qry_seed, self.ggpc_params)
        else:
            cube = None
            gloss = Tensor(np.zeros((), dtype=self.dtype))
            task = G.TaskFeatures(T.repeat_leading(sup_pf, n_q), qry_pf)

        match = H.classify_and_loss(task, episode.query_labels, cfg.hpm)
        if graph_loss_weight == 0.0:
            total = match.loss
        else:
            total = T.add(match.loss, T.mul(gloss, graph_loss_weight))
        return match, gloss, cube, total
