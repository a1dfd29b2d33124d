"""Movielens-100k as a bandit benchmark.

Ingests the `u.data` tab-separated file, binarizes ratings at >= 4,
factorizes the binary matrix with a truncated randomized SVD, and builds a
reward table plus a two-stage (shortlist then softmax) logging policy.
Users are the contexts: estimator-facing context keys are user indices and
the user factors double as dense context features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.utils.extmath import randomized_svd

from .bandit import PolicyEvaluator, TabularOracle


@dataclass(frozen=True)
class RatingsMatrix:
    n_users: int
    n_items: int
    users: np.ndarray  # 0-based
    items: np.ndarray  # 0-based
    ratings: np.ndarray  # integers 1..5

    def __len__(self) -> int:
        return len(self.ratings)


@dataclass(frozen=True)
class FactorModel:
    user_factors: np.ndarray  # (n_users, k)
    item_factors: np.ndarray  # (n_items, k)

    @property
    def rank(self) -> int:
        return self.user_factors.shape[1]


def load_movielens(path) -> RatingsMatrix:
    """Parse the `u.data` format: tab-separated user, item, rating, timestamp."""
    users, items, ratings = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 tab-separated fields")
            try:
                u, i, r = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-integer field") from exc
            if not 1 <= r <= 5:
                raise ValueError(f"line {lineno}: rating {r} outside 1..5")
            if u < 1 or i < 1:
                raise ValueError(f"line {lineno}: ids must be 1-based positive")
            users.append(u - 1)
            items.append(i - 1)
            ratings.append(r)
    users = np.asarray(users, dtype=int)
    items = np.asarray(items, dtype=int)
    ratings = np.asarray(ratings, dtype=int)
    n_users = int(users.max()) + 1 if len(users) else 0
    n_items = int(items.max()) + 1 if len(items) else 0
    return RatingsMatrix(n_users, n_items, users, items, ratings)


def binarize(matrix: RatingsMatrix) -> sp.csr_matrix:
    """Sparse 0/1 matrix with ones exactly where the rating is >= 4."""
    positive = matrix.ratings >= 4
    return sp.csr_matrix(
        (
            np.ones(int(positive.sum())),
            (matrix.users[positive], matrix.items[positive]),
        ),
        shape=(matrix.n_users, matrix.n_items),
    )


def factorize(binary: sp.spmatrix, rank: int, seed: int = 0) -> FactorModel:
    """Truncated rank-k SVD (randomized subspace iteration); factors are the
    singular vectors scaled by sqrt(sigma) so U @ V.T reconstructs."""
    n_users, n_items = binary.shape
    if rank > min(n_users, n_items):
        raise ValueError(f"rank {rank} exceeds min matrix dimension")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    u, s, vt = randomized_svd(binary, n_components=rank, n_iter=7, random_state=seed)
    root = np.sqrt(s)
    return FactorModel(u * root, vt.T * root)


def movielens_reward_oracle(matrix: RatingsMatrix, factors: FactorModel) -> TabularOracle:
    """Expected-reward table over (user, item).

    Observed pairs keep their binary reward; missing entries get the
    factor dot product clamped to [0, 1].
    """
    table = np.clip(factors.user_factors @ factors.item_factors.T, 0.0, 1.0)
    table[matrix.users, matrix.items] = (matrix.ratings >= 4).astype(float)
    return TabularOracle(table)


class TwoStageLoggingPolicy(PolicyEvaluator):
    """Shortlist-then-softmax logging with a uniform exploration floor.

    Per user: the 100 items with highest expected reward get logits
    U(0, 1); 400 distinct random other items get logits U(0, 0.8); a
    temperature softmax runs over the 500 shortlist logits only; the final
    row mixes (1 - eps_floor) of that softmax with eps_floor / n_items of
    uniform mass, guaranteeing full support. Logits are fixed per
    (seed, user), so the policy is a deterministic evaluator.
    """

    N_TOP = 100
    N_RANDOM = 400

    def __init__(self, oracle, factors: FactorModel, beta: float, eps_floor: float = 0.1, seed: int = 0):
        n_items = oracle.n_actions
        if n_items < self.N_TOP + self.N_RANDOM:
            raise ValueError(f"need at least {self.N_TOP + self.N_RANDOM} items, got {n_items}")
        if not 0.0 < eps_floor < 1.0:
            raise ValueError("eps_floor must be in (0, 1)")
        self.n_actions = n_items
        self.beta = float(beta)
        self.eps_floor = float(eps_floor)
        n_users = len(factors.user_factors)
        rows = np.empty((n_users, n_items))
        for user in range(n_users):
            rows[user] = self._build_row(oracle.reward_row(user), user, seed)
        self.rows = rows

    def _build_row(self, delta: np.ndarray, user: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, user]))
        top = np.argsort(-delta, kind="stable")[: self.N_TOP]
        rest = np.setdiff1d(np.arange(self.n_actions), top, assume_unique=False)
        randoms = rng.choice(rest, size=self.N_RANDOM, replace=False)
        logits = np.concatenate(
            [rng.random(self.N_TOP), rng.random(self.N_RANDOM) * 0.8]
        )
        shortlist = np.concatenate([top, randoms])
        z = self.beta * logits
        z -= z.max()
        soft = np.exp(z)
        soft /= soft.sum()
        row = np.full(self.n_actions, self.eps_floor / self.n_actions)
        row[shortlist] += (1.0 - self.eps_floor) * soft
        return row

    def prob_row(self, context) -> np.ndarray:
        return self.rows[int(context)]

    def prob_matrix(self, contexts) -> np.ndarray:
        return self.rows[np.asarray(contexts, dtype=int)]


def two_stage_logging_policy(
    oracle, factors: FactorModel, beta: float, eps_floor: float = 0.1, seed: int = 0
) -> TwoStageLoggingPolicy:
    return TwoStageLoggingPolicy(oracle, factors, beta, eps_floor=eps_floor, seed=seed)


def generate_movielens_dataset(
    oracle: TabularOracle,
    factors: FactorModel,
    logging: PolicyEvaluator,
    n: int,
    seed: int,
):
    """Logged bandit feedback over uniformly sampled users.

    Rewards are the (continuous) oracle values themselves: observed pairs
    contribute their binary reward, missing pairs the factor dot product.
    """
    from .bandit import BanditDataset, EmbeddingTable
    from .synthetic import sample_actions, stream

    rng = stream(seed, "movielens-logged")
    n_users = len(factors.user_factors)
    users = rng.integers(0, n_users, size=n)
    rows = logging.prob_matrix(users)
    actions = sample_actions(rows, rng)
    rewards = oracle.table[users, actions]
    return BanditDataset(
        users,
        actions,
        rewards,
        logging,
        EmbeddingTable(factors.item_factors),
        features=factors.user_factors[users],
        logging_rows=rows,
        meta={"seed": seed, "env": "movielens"},
    )
