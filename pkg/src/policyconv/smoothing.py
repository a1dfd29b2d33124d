"""Action-similarity (smoothing) operators over embeddings.

Each smoother prepares a structure from an :class:`EmbeddingTable` via
``fit`` and then answers two queries:

- ``similarity_row(a)``: the full similarity vector f(E(a), E(a')) over a'.
- ``convolve_at(policy_row, a)``: the smoothed policy value
  sum_a' policy_row[a'] * f(E(a), E(a')).

Tree, ball and kNN rows are row-stochastic; kernel rows are raw product
Gaussian density values and are intentionally not normalized.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.cluster import KMeans

from .bandit import EmbeddingTable

# Full pairwise-distance matrices are only precomputed below this size.
DENSE_PAIRWISE_LIMIT = 4096


def _sq_distances(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = vectors - query
    return np.einsum("ij,ij->i", diff, diff)


def pairwise_sq_distances(embeddings: EmbeddingTable) -> np.ndarray:
    v = embeddings.vectors
    sq = np.einsum("ij,ij->i", v, v)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


class Smoother:
    """Base class for prepared convolution functions."""

    kind: str

    def fit(self, embeddings: EmbeddingTable) -> "Smoother":
        raise NotImplementedError

    def similarity_row(self, action: int) -> np.ndarray:
        raise NotImplementedError

    def convolve_at(self, policy_row: np.ndarray, action: int) -> float:
        return float(policy_row @ self.similarity_row(action))

    def convolve(self, policy_row: np.ndarray) -> np.ndarray:
        """Smoothed policy evaluated at every action."""
        return np.array(
            [self.convolve_at(policy_row, a) for a in range(self.n_actions)]
        )

    def is_identity(self) -> bool:
        return False

    def get_params(self) -> dict:
        return {"kind": self.kind, "tau": self.tau}


class ActionTree:
    """Nested partitions of the action set, one per level.

    Level 1 is all singletons, level ``depth`` is a single cluster holding
    every action, and every level-k cluster is a union of level-(k-1)
    clusters.
    """

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels, dtype=int)
        self.labels = labels  # shape (depth, n_actions), row d-1 = level d
        self.depth = labels.shape[0]
        self.n_actions = labels.shape[1]
        self._validate()

    def _validate(self) -> None:
        if not np.array_equal(self.labels[0], np.arange(self.n_actions)):
            raise ValueError("level 1 must be all singletons")
        if self.depth > 1 and len(np.unique(self.labels[-1])) != 1:
            raise ValueError("top level must be a single cluster")
        for d in range(1, self.depth):
            # nestedness: actions sharing a level-d cluster may not split at level d+1
            fine, coarse = self.labels[d - 1], self.labels[d]
            for c in np.unique(fine):
                if len(np.unique(coarse[fine == c])) != 1:
                    raise ValueError(f"level {d + 1} is not a coarsening of level {d}")

    def level_labels(self, level: int) -> np.ndarray:
        if not 1 <= level <= self.depth:
            raise ValueError(f"level {level} outside [1, {self.depth}]")
        return self.labels[level - 1]

    def clusters(self, level: int) -> list[np.ndarray]:
        lab = self.level_labels(level)
        return [np.flatnonzero(lab == c) for c in np.unique(lab)]

    def serialize(self) -> str:
        """One line per level (bottom to top); clusters as `;`-separated `,`-lists."""
        lines = []
        for level in range(1, self.depth + 1):
            parts = [",".join(map(str, members)) for members in self.clusters(level)]
            lines.append(";".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "ActionTree":
        rows = []
        for line in text.strip().splitlines():
            clusters = [
                [int(tok) for tok in part.split(",")] for part in line.split(";")
            ]
            n = sum(len(c) for c in clusters)
            lab = np.empty(n, dtype=int)
            for cid, members in enumerate(clusters):
                lab[members] = cid
            rows.append(lab)
        return cls(np.stack(rows))


def full_tree_depth(n_actions: int) -> int:
    """Deepest tree depth allowed for an action count (2^(depth-1) <= n)."""
    return int(math.floor(math.log2(n_actions))) + 1 if n_actions > 1 else 1


def build_tree(embeddings: EmbeddingTable, depth: int, seed: int = 0) -> ActionTree:
    """Recursively bisect the action space into a nested partition.

    Each split is 2-means on the embeddings (50 Lloyd iterations, best of
    4 restarts); clusters smaller than 2 stop splitting and copy down.
    Level 1 is always the singleton partition.
    """
    n = embeddings.n_actions
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if 2 ** (depth - 1) > n:
        raise ValueError(f"depth {depth} too large for {n} actions")
    labels = np.empty((depth, n), dtype=int)
    labels[depth - 1] = 0
    labels[0] = np.arange(n)
    rng = np.random.default_rng(seed)
    for row in range(depth - 2, 0, -1):  # levels depth-1 .. 2
        parent = labels[row + 1]
        next_id = 0
        out = np.empty(n, dtype=int)
        for c in np.unique(parent):
            members = np.flatnonzero(parent == c)
            if len(members) < 2:
                out[members] = next_id
                next_id += 1
                continue
            points = embeddings.vectors[members]
            if len(members) == 2:
                halves = np.array([0, 1])
            else:
                km = KMeans(
                    n_clusters=2,
                    n_init=4,
                    max_iter=50,
                    random_state=int(rng.integers(2**31 - 1)),
                )
                halves = km.fit_predict(points)
                if len(np.unique(halves)) == 1:  # duplicate points
                    halves = np.zeros(len(members), dtype=int)
                    halves[len(members) // 2 :] = 1
            out[members[halves == 0]] = next_id
            out[members[halves == 1]] = next_id + 1
            next_id += 2
        labels[row] = out
    return ActionTree(labels)


class TreeSmoother(Smoother):
    """Within-cluster averaging at one level of an action tree."""

    kind = "tree"

    def __init__(
        self,
        tau: int,
        tree: ActionTree | None = None,
        depth: int | None = None,
        seed: int = 0,
    ):
        if int(tau) != tau or tau < 1:
            raise ValueError("tree tau must be an integer level >= 1")
        self.tau = int(tau)
        self.tree = tree
        self.depth = depth
        self.seed = seed

    def fit(self, embeddings: EmbeddingTable) -> "TreeSmoother":
        if self.tree is None:
            depth = self.depth
            if depth is None:
                depth = full_tree_depth(embeddings.n_actions)
            depth = max(depth, self.tau)
            self.tree = build_tree(embeddings, depth, seed=self.seed)
        if self.tau > self.tree.depth:
            raise ValueError(f"tau {self.tau} exceeds tree depth {self.tree.depth}")
        self.n_actions = self.tree.n_actions
        self._labels = self.tree.level_labels(self.tau)
        _, inverse, counts = np.unique(
            self._labels, return_inverse=True, return_counts=True
        )
        self._inverse = inverse
        self._sizes = counts[inverse]
        return self

    def similarity_row(self, action: int) -> np.ndarray:
        row = np.zeros(self.n_actions)
        members = self._inverse == self._inverse[action]
        row[members] = 1.0 / self._sizes[action]
        return row

    def convolve_at(self, policy_row: np.ndarray, action: int) -> float:
        members = self._inverse == self._inverse[action]
        return float(policy_row[members].mean())

    def convolve(self, policy_row: np.ndarray) -> np.ndarray:
        sums = np.bincount(self._inverse, weights=policy_row)
        counts = np.bincount(self._inverse)
        return (sums / counts)[self._inverse]

    def is_identity(self) -> bool:
        return self.tau == 1


class KNNSmoother(Smoother):
    """Uniform averaging over the tau nearest neighbors of each action.

    An action is always its own first neighbor; remaining ties in distance
    break toward the lower action index, so tau=1 is the exact identity.
    """

    kind = "knn"

    def __init__(self, tau: int):
        if int(tau) != tau or tau < 1:
            raise ValueError("knn tau must be an integer >= 1")
        self.tau = int(tau)

    def fit(self, embeddings: EmbeddingTable) -> "KNNSmoother":
        n = embeddings.n_actions
        if self.tau > n:
            raise ValueError(f"tau {self.tau} exceeds action count {n}")
        self.n_actions = n
        v = embeddings.vectors
        nbrs = np.empty((n, self.tau), dtype=int)
        if n <= DENSE_PAIRWISE_LIMIT:
            d2 = pairwise_sq_distances(embeddings)
            np.fill_diagonal(d2, -1.0)  # self first regardless of duplicates
            order = np.argsort(d2, axis=1, kind="stable")
            nbrs = order[:, : self.tau]
        else:
            for a in range(n):
                d2 = _sq_distances(v, v[a])
                d2[a] = -1.0
                nbrs[a] = np.argsort(d2, kind="stable")[: self.tau]
        self._neighbors = nbrs
        return self

    def similarity_row(self, action: int) -> np.ndarray:
        row = np.zeros(self.n_actions)
        row[self._neighbors[action]] = 1.0 / self.tau
        return row

    def convolve_at(self, policy_row: np.ndarray, action: int) -> float:
        return float(policy_row[self._neighbors[action]].mean())

    def convolve(self, policy_row: np.ndarray) -> np.ndarray:
        return policy_row[self._neighbors].mean(axis=1)

    def is_identity(self) -> bool:
        return self.tau == 1


class BallSmoother(Smoother):
    """Uniform averaging over actions within squared distance tau.

    The normalizer counts every action inside the ball, including the
    query action itself.
    """

    kind = "ball"

    def __init__(self, tau: float):
        if tau <= 0:
            raise ValueError("ball tau (squared radius) must be > 0")
        self.tau = float(tau)

    def fit(self, embeddings: EmbeddingTable) -> "BallSmoother":
        self.n_actions = embeddings.n_actions
        self._embeddings = embeddings
        self._dense = None
        if self.n_actions <= DENSE_PAIRWISE_LIMIT:
            self._dense = pairwise_sq_distances(embeddings) < self.tau
        return self

    def _members(self, action: int) -> np.ndarray:
        if self._dense is not None:
            return self._dense[action]
        v = self._embeddings.vectors
        return _sq_distances(v, v[action]) < self.tau

    def similarity_row(self, action: int) -> np.ndarray:
        members = self._members(action)
        row = np.zeros(self.n_actions)
        row[members] = 1.0 / members.sum()
        return row

    def convolve_at(self, policy_row: np.ndarray, action: int) -> float:
        members = self._members(action)
        return float(policy_row[members].mean())

    def convolve(self, policy_row: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return (self._dense @ policy_row) / self._dense.sum(axis=1)
        return super().convolve(policy_row)


class KernelSmoother(Smoother):
    """Product-Gaussian kernel density similarity with bandwidth tau.

    f(e, e') = (1 / tau^d) * prod_i phi((e_i - e'_i) / tau), where phi is
    the standard normal density. Rows are not normalized.
    """

    kind = "kernel"

    def __init__(self, tau: float):
        if tau <= 0:
            raise ValueError("kernel bandwidth tau must be > 0")
        self.tau = float(tau)

    def fit(self, embeddings: EmbeddingTable) -> "KernelSmoother":
        self.n_actions = embeddings.n_actions
        self._embeddings = embeddings
        d = embeddings.dim
        self._log_norm = -d * math.log(self.tau) - 0.5 * d * math.log(2.0 * math.pi)
        self._dense = None
        if self.n_actions <= DENSE_PAIRWISE_LIMIT:
            d2 = pairwise_sq_distances(embeddings)
            self._dense = np.exp(self._log_norm - d2 / (2.0 * self.tau**2))
        return self

    def similarity_row(self, action: int) -> np.ndarray:
        if self._dense is not None:
            return self._dense[action]
        v = self._embeddings.vectors
        d2 = _sq_distances(v, v[action])
        return np.exp(self._log_norm - d2 / (2.0 * self.tau**2))

    def convolve(self, policy_row: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ policy_row
        return super().convolve(policy_row)


def gaussian_kernel_value(diff, tau: float) -> float:
    """Closed-form f(e, e') for a coordinate difference vector (test oracle)."""
    diff = np.atleast_1d(np.asarray(diff, dtype=float))
    d = len(diff)
    dens = np.exp(-((diff / tau) ** 2) / 2.0) / math.sqrt(2.0 * math.pi)
    return float(np.prod(dens) / tau**d)


def make_smoother(kind: str, tau, tree: ActionTree | None = None, seed: int = 0) -> Smoother:
    if kind == "tree":
        return TreeSmoother(int(tau), tree=tree, seed=seed)
    if kind == "knn":
        return KNNSmoother(int(tau))
    if kind == "ball":
        return BallSmoother(float(tau))
    if kind == "kernel":
        return KernelSmoother(float(tau))
    raise ValueError(f"unknown smoother kind {kind!r}")
