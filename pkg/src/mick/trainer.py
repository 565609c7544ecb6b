"""Episodic meta-training with a fast-slow learner and three-phase task enrichment.

Each episode updates the support classifier (fast parameters) with its own
support loss. The encoder (slow parameters) accumulates the gradient of
``L_sup + L_match`` and steps once every ``epsilon`` episodes. The encoder
is fixed inside an accumulation window, so summing per-episode gradients
equals differentiating the summed loss.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .classifier import CLASSIFIER_PARAMS, init_classifier_params, support_loss
from .data import CROSS_DOMAIN, Dataset, Episode, Vocab, build_vocab, sample_episode
from .encoder import ENCODER_PARAMS, encode_instances, init_encoder_params
from .matching import compute_prototypes, match_loss, predict

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n_way: int = 5
    k_shot: int = 5
    q_query: int = 5
    alpha: float = 0.1
    beta: float = 0.1
    epsilon: int = 5
    episodes: int = 3000
    phase_episodes: tuple[int, int, int] | None = None
    T: int = 128
    d_c: int = 50
    d_p: int = 5
    d_h: int = 230
    w: int = 3
    seed: int = 0
    vocab_mode: str = "word"
    support_classifier: bool = True
    reset_fast_each_episode: bool = False

    def __post_init__(self):
        if self.phase_episodes is not None:
            self.phase_episodes = tuple(int(p) for p in self.phase_episodes)
            if len(self.phase_episodes) != 3 or min(self.phase_episodes) < 0:
                raise ValueError(f"phase_episodes must be three non-negative counts, got {self.phase_episodes}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        for name in ("n_way", "k_shot", "q_query", "epsilon", "T", "d_c", "d_p", "d_h", "w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")

    def phases(self, have_cross: bool) -> tuple[int, int, int]:
        """Resolved (P1, P2, P3); without cross-domain data P2 is 0."""
        if self.phase_episodes is not None:
            p1, p2, p3 = self.phase_episodes
            return (p1, p2 if have_cross else 0, p3)
        if not have_cross:
            return (self.episodes, 0, 0)
        third = self.episodes // 3
        return (third, third, self.episodes - 2 * third)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["phase_episodes"] is not None:
            d["phase_episodes"] = list(d["phase_episodes"])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(d))


@dataclass
class TrainState:
    episode_counter: int = 0
    fast_update_count: int = 0
    slow_update_count: int = 0
    accumulated_slow_loss: float = 0.0
    episodes_accumulated: int = 0
    metrics: list[dict] = field(default_factory=list)


@dataclass
class EpisodeResult:
    l_sup: float
    l_match: float
    accuracy: float
    dispersion: float
    fast_grads: dict[str, np.ndarray]
    slow_grads: dict[str, np.ndarray]

    @property
    def slow_loss(self) -> float:
        return self.l_sup + self.l_match


def support_dispersion(support: np.ndarray) -> float:
    """Mean squared distance of support vectors (``N x K x d``) to their class mean."""
    centred = support - support.mean(axis=1, keepdims=True)
    return float((centred ** 2).sum(axis=-1).mean())


def _episode_forward(g: nx.Graph, leaves, episode: Episode):
    N = episode.n_way
    K = len(episode.support[0])
    batch = [e for row in episode.support for e in row] + [e for row in episode.query for e in row]
    E = encode_instances(batch, leaves)
    d_h = E.shape[1]
    n_sup = N * K
    sup = nx.embedding_lookup(E, np.arange(n_sup))
    qry = nx.embedding_lookup(E, np.arange(n_sup, len(batch)))
    sup_slots = [e.relation_slot for row in episode.support for e in row]
    qry_slots = np.array([e.relation_slot for row in episode.query for e in row])
    protos = compute_prototypes(nx.reshape(sup, (N, K, d_h)), episode.class_labels)
    return sup, sup_slots, qry, qry_slots, protos


class MickTrainer:
    """Holds both parameter partitions and the fast-slow schedule."""

    def __init__(self, cfg: TrainConfig, vocab: Vocab, encoder_params: Mapping[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.vocab = vocab
        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        self.sample_rng = np.random.default_rng(seeds[1])
        if encoder_params is None:
            encoder_params = init_encoder_params(
                len(vocab), cfg.T, np.random.default_rng(seeds[0]), cfg.d_c, cfg.d_p, cfg.d_h, cfg.w
            )
        self.slow = {k: np.array(encoder_params[k], dtype=np.float64) for k in ENCODER_PARAMS}
        self.fast = init_classifier_params(cfg.n_way, cfg.d_h)
        self.state = TrainState()
        self._slow_grad_acc: dict[str, np.ndarray] | None = None

    def run_episode(self, episode: Episode) -> EpisodeResult:
        if episode.n_way != self.fast["W"].shape[0]:
            raise TrainingError(f"{episode.n_way}-way episode for a {self.fast['W'].shape[0]}-way classifier")
        if self.cfg.reset_fast_each_episode:
            self.fast = init_classifier_params(self.cfg.n_way, self.cfg.d_h)
        g = nx.Graph()
        leaves = {k: g.param(k, v) for k, v in {**self.slow, **self.fast}.items()}
        sup, sup_slots, qry, qry_slots, protos = _episode_forward(g, leaves, episode)
        l_match = match_loss(qry, qry_slots, protos)
        if self.cfg.support_classifier:
            l_sup = support_loss(sup, sup_slots, leaves)
            total = nx.add(l_sup, l_match)
        else:
            l_sup = g.constant(0.0)
            total = l_match
        grads = g.backward(total)
        acc = float(np.mean(predict(qry, protos) == qry_slots))
        N, K = episode.n_way, len(episode.support[0])
        return EpisodeResult(
            l_sup=l_sup.item(),
            l_match=l_match.item(),
            accuracy=acc,
            dispersion=support_dispersion(sup.data.reshape(N, K, -1)),
            fast_grads=g.param_grads(grads, CLASSIFIER_PARAMS),
            slow_grads=g.param_grads(grads, ENCODER_PARAMS),
        )

    def fast_step(self, result: EpisodeResult) -> None:
        self.fast = nx.sgd_update(self.fast, result.fast_grads, self.cfg.alpha)
        self.state.fast_update_count += 1

    def accumulate(self, result: EpisodeResult) -> None:
        if self._slow_grad_acc is None:
            self._slow_grad_acc = {k: v.copy() for k, v in result.slow_grads.items()}
        else:
            for k, v in result.slow_grads.items():
                self._slow_grad_acc[k] += v
        self.state.accumulated_slow_loss += result.slow_loss
        self.state.episodes_accumulated += 1

    def slow_step(self) -> None:
        if self.state.episodes_accumulated != self.cfg.epsilon or self._slow_grad_acc is None:
            raise TrainingError(
                f"slow step after {self.state.episodes_accumulated} of {self.cfg.epsilon} episodes"
            )
        self.slow = nx.sgd_update(self.slow, self._slow_grad_acc, self.cfg.beta)
        self._slow_grad_acc = None
        self.state.accumulated_slow_loss = 0.0
        self.state.episodes_accumulated = 0
        self.state.slow_update_count += 1

    def step(self, episode: Episode, phase: int = 1) -> EpisodeResult:
        """One full episode: forward, fast update, accumulate, and slow update when due."""
        result = self.run_episode(episode)
        self.fast_step(result)
        self.accumulate(result)
        self.state.episode_counter += 1
        if self.state.episodes_accumulated == self.cfg.epsilon:
            self.slow_step()
        self.state.metrics.append(
            {
                "episode": self.state.episode_counter,
                "phase": phase,
                "l_sup": result.l_sup,
                "l_match": result.l_match,
                "accuracy": result.accuracy,
                "dispersion": result.dispersion,
            }
        )
        return result


def _union_pool(original: Dataset, cross: Dataset) -> tuple[dict, set[str]]:
    pool = dict(original.groups)
    cross_keys = set()
    for label, items in cross.groups.items():
        key = label if label not in pool else f"{CROSS_DOMAIN}:{label}"
        pool[key] = items
        cross_keys.add(key)
    return pool, cross_keys


def train(
    original: Dataset,
    cross: Dataset | None,
    cfg: TrainConfig,
    vocab: Vocab | None = None,
    on_episode: Callable[[dict], None] | None = None,
) -> MickTrainer:
    """Run the three training phases and return the trained state.

    Phase 1 and 3 sample classes from ``original`` only; phase 2 samples
    from the union with ``cross``. A trailing partial accumulation window
    is discarded.
    """
    if vocab is None:
        vocab = build_vocab([original] + ([cross] if cross is not None else []), cfg.vocab_mode)
    trainer = MickTrainer(cfg, vocab)
    phases = cfg.phases(cross is not None)
    pools = [original.groups, None, original.groups]
    if phases[1]:
        pools[1], _ = _union_pool(original, cross)
    for phase_idx, (count, pool) in enumerate(zip(phases, pools), start=1):
        if count and pool is not None:
            _check_pool(pool, cfg, phase_idx)
        for _ in range(count):
            ep = sample_episode(pool, cfg.n_way, cfg.k_shot, cfg.q_query, trainer.sample_rng, vocab, cfg.T)
            trainer.step(ep, phase_idx)
            rec = trainer.state.metrics[-1]
            if on_episode is not None:
                on_episode(rec)
            if rec["episode"] % 500 == 0:
                log.info("episode %d phase %d L_sup=%.4f L_match=%.4f acc=%.3f",
                         rec["episode"], phase_idx, rec["l_sup"], rec["l_match"], rec["accuracy"])
    return trainer


def _check_pool(pool: Mapping[str, Sequence], cfg: TrainConfig, phase: int) -> None:
    need = cfg.k_shot + cfg.q_query
    usable = [k for k, v in pool.items() if len(v) >= need]
    if len(usable) < len(pool):
        small = sorted(set(pool) - set(usable))
        raise TrainingError(f"phase {phase}: classes with fewer than {need} instances: {small}")
    if len(pool) < cfg.n_way:
        raise TrainingError(f"phase {phase}: {len(pool)} classes available, need {cfg.n_way}")


@dataclass
class EvalReport:
    mean: float
    std: float
    task_count: int
    n_way: int
    k_shot: int
    q_query: int
    seed: int
    accuracies: list[float] = field(repr=False, default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("accuracies")
        return d


def _eval_task(test, params, vocab, N, K, Q, T, seed, idx) -> float:
    rng = np.random.default_rng([seed, idx])
    ep = sample_episode(test, N, K, Q, rng, vocab, T)
    g = nx.Graph()
    leaves = {k: g.constant(params[k]) for k in ENCODER_PARAMS}
    _, _, qry, qry_slots, protos = _episode_forward(g, leaves, ep)
    return float(np.mean(predict(qry, protos) == qry_slots))


def evaluate(
    test: Dataset,
    params: Mapping[str, np.ndarray],
    vocab: Vocab,
    N: int = 5,
    K: int = 1,
    Q: int = 5,
    task_count: int = 2000,
    seed: int = 0,
    T: int | None = None,
    workers: int = 1,
) -> EvalReport:
    """Mean and standard deviation of per-task query accuracy.

    Only the encoder parameters are read; task ``i`` is sampled from a
    generator seeded by ``(seed, i)`` so the worker count never changes
    the result.
    """
    if task_count < 1:
        raise ValueError("task_count must be at least 1")
    if T is None:
        T = (params["pos_head_table"].shape[0] + 1) // 2
    eligible = {k: v for k, v in test.groups.items() if len(v) >= K + Q}
    if len(eligible) < N:
        raise TrainingError(f"test data cannot support {N}-way {K}-shot with {Q} queries")
    frozen = {k: params[k] for k in ENCODER_PARAMS}

    def run(i):
        return _eval_task(eligible, frozen, vocab, N, K, Q, T, seed, i)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            accs = list(pool.map(run, range(task_count)))
    else:
        accs = [run(i) for i in range(task_count)]
    arr = np.array(accs)
    return EvalReport(float(arr.mean()), float(arr.std()), task_count, N, K, Q, seed, accs)


def expected_cross_probability(n_orig: int, n_cross: int, N: int, episodes: int) -> float:
    """Lower bound on P(some phase-2 episode contains a cross-domain class)."""
    return 1.0 - (n_orig / (n_orig + n_cross)) ** (N * episodes)


__all__ = [
    "TrainConfig", "TrainState", "EpisodeResult", "MickTrainer", "TrainingError",
    "train", "evaluate", "EvalReport", "support_dispersion", "expected_cross_probability",
]
