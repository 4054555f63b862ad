"""Episodic sampling, Adam training with a multi-step schedule, evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, SamplingError, TrainingDiverged
from .features import tsn_sample
from .hpm import fuse_distances


@dataclass
class EpisodeConfig:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 5
    t: int = 8

    def validate(self):
        if min(self.n_way, self.k_shot, self.n_query, self.t) < 1:
            raise ConfigError("n_way, k_shot, n_query and t must be positive")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    iterations_per_step: int = 100
    step_boundaries: list = field(default_factory=lambda: [0])
    lr_factors: list = field(default_factory=lambda: [1.0])
    total_steps: int = 5
    graph_loss_weight: float = 1.0

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.iterations_per_step < 1 or self.total_steps < 1:
            raise ConfigError("iterations_per_step and total_steps must be >= 1")
        if len(self.step_boundaries) != len(self.lr_factors):
            raise ConfigError(
                "step_boundaries and lr_factors must have equal length")
        if not self.step_boundaries or self.step_boundaries[0] != 0:
            raise ConfigError("step_boundaries must start at 0")
        if list(self.step_boundaries) != sorted(self.step_boundaries):
            raise ConfigError("step_boundaries must be ascending")
        if any(not 0 < f <= 1 for f in self.lr_factors):
            raise ConfigError("lr_factors must lie in (0, 1]")
        if self.graph_loss_weight < 0:
            raise ConfigError("graph_loss_weight must be >= 0")

    def lr_at_step(self, step):
        factor = self.lr_factors[0]
        for b, f in zip(self.step_boundaries, self.lr_factors):
            if step >= b:
                factor = f
        return self.learning_rate * factor


@dataclass
class Episode:
    support_frames: np.ndarray   # [N*K, T, C, H, W], class-major
    support_labels: np.ndarray   # [N*K] local labels 0..N-1
    query_frames: np.ndarray     # [N_Q, T, C, H, W]
    query_labels: np.ndarray     # [N_Q] local labels
    class_map: np.ndarray        # local -> global class ids
    n_way: int
    k_shot: int


def sample_episode(dataset, cfg: EpisodeConfig, mode, rng):
    """Draw one episode; support and query videos are disjoint per class.

    Training assigns queries round-robin over the sampled classes (one per
    class when n_query == n_way); evaluation draws each query's class at
    random. Frames come from segment sampling in the matching mode.
    """
    cfg.validate()
    groups = dataset.by_class()
    class_ids = sorted(groups)
    if len(class_ids) < cfg.n_way:
        raise SamplingError(
            f"dataset has {len(class_ids)} classes, episode needs {cfg.n_way}")
    chosen = rng.choice(len(class_ids), size=cfg.n_way, replace=False)
    class_map = np.array([class_ids[i] for i in chosen])

    if mode == "train":
        query_classes = np.arange(cfg.n_query) % cfg.n_way
    else:
        query_classes = rng.integers(0, cfg.n_way, size=cfg.n_query)
    need_queries = np.bincount(query_classes, minlength=cfg.n_way)

    sup_frames, sup_labels = [], []
    qry_frames, qry_labels = [], []
    for local, gcls in enumerate(class_map):
        pool = groups[gcls]
        need = cfg.k_shot + need_queries[local]
        if len(pool) < need:
            raise SamplingError(
                f"class {gcls} has {len(pool)} videos, episode needs {need}")
        picks = rng.choice(len(pool), size=need, replace=False)
        for j in range(cfg.k_shot):
            sup_frames.append(tsn_sample(pool[picks[j]], cfg.t, mode, rng))
            sup_labels.append(local)
        for j in range(need_queries[local]):
            qry_frames.append(tsn_sample(pool[picks[cfg.k_shot + j]],
                                         cfg.t, mode, rng))
            qry_labels.append(local)
    return Episode(
        support_frames=np.stack(sup_frames),
        support_labels=np.array(sup_labels),
        query_frames=np.stack(qry_frames),
        query_labels=np.array(qry_labels),
        class_map=class_map,
        n_way=cfg.n_way,
        k_shot=cfg.k_shot,
    )


class Adam:
    """Standard Adam with bias correction; one state slot per parameter."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def adam_step(params, state, lr):
    """One optimizer update from the gradients currently held by params."""
    state.step(lr)
    return state


def train(dataset, ecfg: EpisodeConfig, tcfg: TrainConfig, model, seed=0,
          log=None):
    """Episode-per-update training; returns per-step metrics dictionaries.

    Aborts with TrainingDiverged (carrying the last finite-step state) if the
    loss goes non-finite.
    """
    ecfg.validate()
    tcfg.validate()
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters())
    metrics = []
    last_good = model.state_dict()
    for step in range(tcfg.total_steps):
        lr = tcfg.lr_at_step(step)
        losses, match_losses, graph_losses, hits, total_q = [], [], [], 0, 0
        for _ in range(tcfg.iterations_per_step):
            episode = sample_episode(dataset, ecfg, "train", rng)
            model.zero_grad()
            match, gloss, _, total = model.forward_episode(
                episode, tcfg.graph_loss_weight)
            loss_val = float(total.data)
            if not math.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at step {step}", last_good, metrics)
            total.backward()
            opt.step(lr)
            losses.append(loss_val)
            match_losses.append(float(match.loss.data))
            graph_losses.append(float(gloss.data))
            hits += int((match.predicted == episode.query_labels).sum())
            total_q += len(episode.query_labels)
        entry = {
            "step": step,
            "mean_loss": float(np.mean(losses)),
            "mean_match_loss": float(np.mean(match_losses)),
            "mean_graph_loss": float(np.mean(graph_losses)),
            "accuracy": hits / total_q,
            "lr": lr,
        }
        metrics.append(entry)
        last_good = model.state_dict()
        if log is not None:
            log(entry)
    return metrics


@dataclass
class EvalResult:
    accuracy: float
    ci95: float | None            # half-width; None when undefined (n == 1)
    per_episode: np.ndarray       # per-episode accuracy in [0, 1]
    alpha_accuracies: dict        # alpha -> accuracy, when a sweep was requested


def evaluate(dataset, ecfg: EpisodeConfig, n_episodes, model, seed=0,
             alphas=None, graph_loss_weight=0.0):
    """Mean episode accuracy with a normal-approximation 95% interval.

    Evaluation is side-effect free (parameters untouched) and deterministic
    for a fixed seed. When `alphas` is given, frame/tuple distances are
    computed once per episode and re-fused per alpha.
    """
    ecfg.validate()
    rng = np.random.default_rng(seed)
    per_episode = np.empty(n_episodes)
    alpha_hits = {a: 0 for a in (alphas or [])}
    total_q = 0
    with T.no_grad():
        for e in range(n_episodes):
            episode = sample_episode(dataset, ecfg, "eval", rng)
            match, _, _, _ = model.forward_episode(episode, graph_loss_weight)
            correct = (match.predicted == episode.query_labels)
            per_episode[e] = correct.mean()
            total_q += len(episode.query_labels)
            for a in alpha_hits:
                fused = fuse_distances(match.frame_distances,
                                       match.tuple_distances, a)
                pred = np.argmin(fused.data, axis=1)
                alpha_hits[a] += int((pred == episode.query_labels).sum())
    accuracy = float(np.mean(per_episode))
    if n_episodes > 1:
        ci = 1.96 * float(np.std(per_episode, ddof=1)) / math.sqrt(n_episodes)
    else:
        ci = None
    alpha_acc = {a: h / total_q for a, h in alpha_hits.items()}
    return EvalResult(accuracy, ci, per_episode, alpha_acc)
