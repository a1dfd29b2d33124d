"""Synthetic contextual-bandit environment.

Actions live in latent topics; each action's embedding is drawn from its
topic's Gaussian. The expected reward is a randomly initialized two-layer
MLP over [context || action embedding || noise], averaged over a fixed set
of seeded noise draws so it is deterministic per world. Logged rewards use
fresh noise per sample.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .bandit import BanditDataset, EmbeddingTable, PolicyEvaluator, RewardOracle


def stream(seed: int, label: str) -> np.random.Generator:
    """Named RNG stream derived from (master seed, label)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode())])
    )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class SynthConfig:
    n_actions: int = 2000
    n_topics: int = 32
    d_context: int = 32
    d_embed: int = 16
    d_noise: int = 8
    beta: float = 0.0
    epsilon: float = 0.05
    n_logged: int = 10_000
    n_test: int = 100_000
    seed: int = 0
    n_noise_draws: int = 64
    hidden_width: int = 32

    def __post_init__(self):
        if self.n_topics > self.n_actions:
            raise ValueError("n_topics must not exceed n_actions")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if min(self.d_context, self.d_embed, self.d_noise, self.n_noise_draws) < 1:
            raise ValueError("dimensions and noise draw count must be positive")


# Named presets for logging quality and target greediness.
BETA_PRESETS = {"uniform": 0.0, "good": 3.0, "bad": -3.0}
EPSILON_PRESETS = {"good": 0.05, "bad": 0.8}


class SynthWorld(RewardOracle):
    """Fully built synthetic environment; immutable after construction."""

    def __init__(self, config: SynthConfig):
        self.config = config
        c = config
        rng = stream(c.seed, "world")
        self.topic_of = rng.integers(0, c.n_topics, size=c.n_actions)
        self.topic_means = rng.standard_normal((c.n_topics, c.d_embed))
        # a raw normal draw is not a valid covariance; use |draw| per-dim scales
        self.topic_scales = np.abs(rng.standard_normal((c.n_topics, c.d_embed)))
        emb = self.topic_means[self.topic_of] + self.topic_scales[
            self.topic_of
        ] * rng.standard_normal((c.n_actions, c.d_embed))
        self.embeddings = EmbeddingTable(emb)
        self.n_actions = c.n_actions

        d_in = c.d_context + c.d_embed + c.d_noise
        h = c.hidden_width
        self.w1 = rng.standard_normal((d_in, h)) / np.sqrt(d_in)
        self.w2 = rng.standard_normal(h) / np.sqrt(h)
        self.noise_draws = stream(c.seed, "oracle-noise").standard_normal(
            (c.n_noise_draws, c.d_noise)
        )
        dx, de = c.d_context, c.d_embed
        self._w1x = self.w1[:dx]
        self._w1e = self.w1[dx : dx + de]
        self._w1n = self.w1[dx + de :]
        # action and noise contributions to the hidden pre-activation are fixed
        self._emb_h = self.embeddings.vectors @ self._w1e  # (A, h)
        self._noise_h = self.noise_draws @ self._w1n  # (M, h)

    def reward_row(self, context) -> np.ndarray:
        return self.reward_matrix(np.asarray(context)[None, :])[0]

    def reward_matrix(self, contexts, chunk: int = 256) -> np.ndarray:
        """Expected rewards delta(a, x) of shape (n_contexts, n_actions)."""
        contexts = np.asarray(contexts, dtype=float)
        ctx_h = contexts @ self._w1x  # (n, h)
        n, a_cnt, m = len(contexts), self.n_actions, len(self._noise_h)
        out = np.empty((n, a_cnt))
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            base = ctx_h[lo:hi, None, :] + self._emb_h[None, :, :]  # (c, A, h)
            acc = np.zeros((hi - lo, a_cnt))
            for noise_h in self._noise_h:
                acc += _sigmoid(np.tanh(base + noise_h) @ self.w2)
            out[lo:hi] = acc / m
        return out

    def sample_rewards(self, contexts, actions, rng: np.random.Generator) -> np.ndarray:
        """Noisy reward realizations with fresh noise per sample."""
        contexts = np.asarray(contexts, dtype=float)
        eps = rng.standard_normal((len(actions), self.config.d_noise))
        pre = (
            contexts @ self._w1x
            + self._emb_h[np.asarray(actions, dtype=int)]
            + eps @ self._w1n
        )
        return _sigmoid(np.tanh(pre) @ self.w2)


def build_world(config: SynthConfig) -> SynthWorld:
    return SynthWorld(config)


class SoftmaxPolicy(PolicyEvaluator):
    """Temperature softmax over the ground-truth reward row."""

    def __init__(self, oracle: RewardOracle, beta: float):
        if not np.isfinite(beta):
            raise ValueError("beta must be finite")
        self.oracle = oracle
        self.beta = float(beta)
        self.n_actions = oracle.n_actions

    def _rows(self, delta: np.ndarray) -> np.ndarray:
        logits = self.beta * delta
        logits = logits - logits.max(axis=-1, keepdims=True)
        ex = np.exp(logits)
        return ex / ex.sum(axis=-1, keepdims=True)

    def prob_row(self, context) -> np.ndarray:
        return self._rows(self.oracle.reward_row(context))

    def prob_matrix(self, contexts) -> np.ndarray:
        return self._rows(self.oracle.reward_matrix(contexts))


class EpsilonGreedyPolicy(PolicyEvaluator):
    """(1 - eps) mass on the reward argmax (lowest index on ties) plus
    eps / n_actions everywhere."""

    def __init__(self, oracle: RewardOracle, epsilon: float):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self.oracle = oracle
        self.epsilon = float(epsilon)
        self.n_actions = oracle.n_actions

    def _rows(self, delta: np.ndarray) -> np.ndarray:
        delta = np.atleast_2d(delta)
        rows = np.full(delta.shape, self.epsilon / self.n_actions)
        rows[np.arange(len(delta)), delta.argmax(axis=1)] += 1.0 - self.epsilon
        return rows

    def prob_row(self, context) -> np.ndarray:
        return self._rows(self.oracle.reward_row(context))[0]

    def prob_matrix(self, contexts) -> np.ndarray:
        return self._rows(self.oracle.reward_matrix(contexts))


def logging_policy(world: SynthWorld, beta: float) -> SoftmaxPolicy:
    return SoftmaxPolicy(world, beta)


def target_policy(world: SynthWorld, epsilon: float) -> EpsilonGreedyPolicy:
    return EpsilonGreedyPolicy(world, epsilon)


class MaskedPolicy(PolicyEvaluator):
    """A policy restricted to a fixed action subset, renormalized per row."""

    def __init__(self, base: PolicyEvaluator, keep: np.ndarray):
        self.base = base
        self.keep = np.asarray(keep, dtype=bool)
        self.n_actions = base.n_actions

    def _mask(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(rows) * self.keep
        mass = rows.sum(axis=1, keepdims=True)
        if np.any(mass <= 0):
            raise ValueError("masking removed all probability mass from a row")
        return rows / mass

    def prob_row(self, context) -> np.ndarray:
        return self._mask(self.base.prob_row(context))[0]

    def prob_matrix(self, contexts) -> np.ndarray:
        return self._mask(self.base.prob_matrix(contexts))


def apply_deficient_support(
    policy: PolicyEvaluator, deficient_fraction: float, seed: int
) -> PolicyEvaluator:
    """Zero out a global random action subset and renormalize each row."""
    if not 0.0 <= deficient_fraction < 1.0:
        raise ValueError("deficient_fraction must be in [0, 1)")
    if deficient_fraction == 0.0:
        return policy
    n = policy.n_actions
    n_drop = int(np.ceil(deficient_fraction * n))
    if n_drop >= n:
        raise ValueError("deficient fraction leaves no supported actions")
    dropped = stream(seed, "deficient-support").choice(n, size=n_drop, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[dropped] = False
    return MaskedPolicy(policy, keep)


def sample_actions(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized categorical sampling, one draw per probability row."""
    cum = np.cumsum(rows, axis=1)
    u = rng.random(len(rows)) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), rows.shape[1] - 1)


def generate_dataset(
    world: SynthWorld, logging: PolicyEvaluator, n: int, seed: int
) -> BanditDataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed, "logged-data")
    contexts = rng.standard_normal((n, world.config.d_context))
    rows = logging.prob_matrix(contexts)
    actions = sample_actions(rows, rng)
    rewards = world.sample_rewards(contexts, actions, rng)
    return BanditDataset(
        contexts,
        actions,
        rewards,
        logging,
        world.embeddings,
        logging_rows=rows,
        meta={"seed": seed, "env": "synthetic"},
    )
