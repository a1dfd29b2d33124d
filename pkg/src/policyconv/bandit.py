"""Core domain types for logged bandit feedback.

Everything here is immutable after construction and safe to share across
parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class DataIntegrityError(Exception):
    """Logged data violates an assumption it was supposed to satisfy."""


@dataclass(frozen=True)
class LoggedInteraction:
    """A single (context, action, reward) record."""

    context: Any
    action: int
    reward: float


class EmbeddingTable:
    """Dense action embeddings, one row per action.

    Parameters
    ----------
    vectors : ndarray of shape (n_actions, d)
    """

    def __init__(self, vectors):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-d, got shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding matrix contains non-finite entries")
        self.vectors = vectors
        self.vectors.setflags(write=False)

    @property
    def n_actions(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, action):
        return self.vectors[action]


class PolicyEvaluator:
    """A policy that yields a full probability row over actions per context.

    Subclasses implement ``prob_row``; ``prob_matrix`` may be overridden
    with a vectorized version. Rows must be nonnegative and sum to 1
    within 1e-9.
    """

    n_actions: int

    def prob_row(self, context) -> np.ndarray:
        raise NotImplementedError

    def prob_matrix(self, contexts) -> np.ndarray:
        return np.stack([self.prob_row(c) for c in contexts])


class StaticPolicy(PolicyEvaluator):
    """Same action distribution in every context."""

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or np.any(probs < 0):
            raise ValueError("probs must be a nonnegative vector")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probs sum to {probs.sum()}, expected 1")
        self.probs = probs
        self.n_actions = len(probs)

    def prob_row(self, context) -> np.ndarray:
        return self.probs

    def prob_matrix(self, contexts) -> np.ndarray:
        return np.tile(self.probs, (len(contexts), 1))


class UniformPolicy(StaticPolicy):
    def __init__(self, n_actions: int):
        super().__init__(np.full(n_actions, 1.0 / n_actions))


class TabularPolicy(PolicyEvaluator):
    """Policy over integer-keyed contexts, backed by a row matrix."""

    def __init__(self, rows):
        rows = np.asarray(rows, dtype=float)
        self.rows = rows
        self.n_actions = rows.shape[1]

    def prob_row(self, context) -> np.ndarray:
        return self.rows[int(context)]

    def prob_matrix(self, contexts) -> np.ndarray:
        return self.rows[np.asarray(contexts, dtype=int)]


class RewardOracle:
    """Ground-truth expected reward, deterministic per (action, context)."""

    n_actions: int

    def expected_reward(self, action: int, context) -> float:
        return float(self.reward_row(context)[action])

    def reward_row(self, context) -> np.ndarray:
        raise NotImplementedError

    def reward_matrix(self, contexts) -> np.ndarray:
        return np.stack([self.reward_row(c) for c in contexts])


class StaticOracle(RewardOracle):
    """Context-independent expected rewards (toy/analytic instances)."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self.n_actions = len(self.values)

    def reward_row(self, context) -> np.ndarray:
        return self.values


class TabularOracle(RewardOracle):
    """Expected-reward table over integer-keyed contexts."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)
        self.n_actions = self.table.shape[1]

    def reward_row(self, context) -> np.ndarray:
        return self.table[int(context)]


def true_value(policy: PolicyEvaluator, oracle: RewardOracle, test_contexts) -> float:
    """Exact policy value averaged over a set of test contexts.

    Computes the mean over contexts of sum_a pi(a|x) * delta(a, x), using
    the full inner sum rather than sampled actions.
    """
    if len(test_contexts) == 0:
        raise ValueError("test_contexts must be nonempty")
    pi = policy.prob_matrix(test_contexts)
    delta = oracle.reward_matrix(test_contexts)
    return float(np.mean(np.sum(pi * delta, axis=1)))


class BanditDataset:
    """Logged bandit feedback with a known logging policy.

    Logged propensities (and full logging-policy rows) are cached at
    construction; estimators never re-derive them per call.

    Parameters
    ----------
    contexts : sequence of contexts (array of vectors, or int keys)
    actions : int array of shape (n,)
    rewards : float array of shape (n,)
    logging_policy : PolicyEvaluator
    embeddings : EmbeddingTable
    features : optional float array (n, d_x) used by reward models;
        defaults to ``contexts`` when contexts are already dense vectors.
    logging_rows : optional precomputed (n, n_actions) logging-policy rows.
    meta : free-form environment config / generation seed record.
    """

    def __init__(
        self,
        contexts,
        actions,
        rewards,
        logging_policy: PolicyEvaluator,
        embeddings: EmbeddingTable,
        features=None,
        logging_rows=None,
        meta: dict | None = None,
    ):
        self.contexts = np.asarray(contexts)
        self.actions = np.asarray(actions, dtype=int)
        self.rewards = np.asarray(rewards, dtype=float)
        n = len(self.actions)
        if len(self.contexts) != n or len(self.rewards) != n:
            raise ValueError("contexts, actions, rewards must have equal length")
        if not np.all(np.isfinite(self.rewards)):
            raise DataIntegrityError("rewards contain non-finite values")
        self.logging_policy = logging_policy
        self.embeddings = embeddings
        self.n_actions = embeddings.n_actions
        if logging_policy.n_actions != self.n_actions:
            raise ValueError("logging policy and embeddings disagree on action count")
        if np.any(self.actions < 0) or np.any(self.actions >= self.n_actions):
            raise ValueError("action index out of range")
        if features is None:
            if self.contexts.ndim != 2:
                raise ValueError("features required when contexts are not dense vectors")
            features = self.contexts
        self.features = np.asarray(features, dtype=float)
        if logging_rows is None:
            logging_rows = logging_policy.prob_matrix(self.contexts)
        self.logging_rows = np.asarray(logging_rows, dtype=float)
        self.propensities = self.logging_rows[np.arange(n), self.actions]
        if np.any(self.propensities <= 0):
            bad = int(np.argmax(self.propensities <= 0))
            raise DataIntegrityError(
                f"sample {bad}: logged action {self.actions[bad]} has zero propensity "
                "under the logging policy"
            )
        self.meta = dict(meta or {})

    def __len__(self) -> int:
        return len(self.actions)

    def interaction(self, i: int) -> LoggedInteraction:
        return LoggedInteraction(self.contexts[i], int(self.actions[i]), float(self.rewards[i]))

    def logged_propensity(self, i: int) -> float:
        """Cached mu(a_i | x_i); strictly positive by construction."""
        if i < 0 or i >= len(self):
            raise IndexError(f"interaction index {i} out of range")
        return float(self.propensities[i])


def export_dataset(dataset: BanditDataset, path) -> None:
    """Write a dataset as delimited text: context components, action, reward, propensity."""
    feats = dataset.features
    header = [f"x{j}" for j in range(feats.shape[1])] + ["action", "reward", "propensity"]
    body = np.column_stack(
        [feats, dataset.actions.astype(float), dataset.rewards, dataset.propensities]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in body:
            cells = [repr(float(v)) for v in row[:-3]]
            cells.append(str(int(row[-3])))
            cells.append(repr(float(row[-2])))
            cells.append(repr(float(row[-1])))
            fh.write(",".join(cells) + "\n")
