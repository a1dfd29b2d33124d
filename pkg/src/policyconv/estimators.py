"""Off-policy value estimators.

Five backbones (direct method, IPS, self-normalized IPS, doubly robust,
self-normalized DR) plus a wrapper that replaces the importance weights of
any IPS-family backbone with smoothed-policy weights. All estimators are
pure functions of (dataset, target policy) and expose per-sample terms so
bias/variance checks never have to re-run them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bandit import BanditDataset, PolicyEvaluator, RewardOracle
from .smoothing import Smoother


class EstimationError(Exception):
    """An estimator could not produce a value on the given data."""


@dataclass
class EstimateDiagnostics:
    """Estimator output with internals retained for analysis."""

    value: float
    per_sample_terms: np.ndarray
    min_weight: float
    max_weight: float
    rho: float | None = None


class RewardModel:
    """Predicted expected reward delta_hat(a, x)."""

    def predict_matrix(self, dataset: BanditDataset) -> np.ndarray:
        """Predictions of shape (n_samples, n_actions)."""
        raise NotImplementedError


class ConstantRewardModel(RewardModel):
    def __init__(self, value: float):
        self.value = float(value)

    def predict_matrix(self, dataset: BanditDataset) -> np.ndarray:
        return np.full((len(dataset), dataset.n_actions), self.value)


class OracleRewardModel(RewardModel):
    """Wraps a ground-truth oracle as a (perfect) reward model."""

    def __init__(self, oracle: RewardOracle):
        self.oracle = oracle

    def predict_matrix(self, dataset: BanditDataset) -> np.ndarray:
        return self.oracle.reward_matrix(dataset.contexts)


def ridge_fit(X: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """Solve (X'X + alpha I) w = X'y. Every coefficient is penalized."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    gram = X.T @ X + alpha * np.eye(X.shape[1])
    return np.linalg.solve(gram, X.T @ y)


class RidgeRewardModel(RewardModel):
    """Ridge least squares on [context features || action embedding || 1].

    The same model used by the direct method, DR and SNDR; fit only on the
    logged samples.
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = float(alpha)
        self.coef_ = None

    def fit(self, dataset: BanditDataset) -> "RidgeRewardModel":
        if len(dataset) == 0:
            raise ValueError("cannot fit a reward model on an empty dataset")
        feats = dataset.features
        emb = dataset.embeddings.vectors[dataset.actions]
        X = np.hstack([feats, emb, np.ones((len(dataset), 1))])
        self.coef_ = ridge_fit(X, dataset.rewards, self.alpha)
        self._d_context = feats.shape[1]
        self._d_embed = emb.shape[1]
        return self

    def predict_matrix(self, dataset: BanditDataset) -> np.ndarray:
        if self.coef_ is None:
            raise ValueError("reward model is not fitted")
        w = self.coef_
        dx, de = self._d_context, self._d_embed
        ctx_part = dataset.features @ w[:dx]  # (n,)
        emb_part = dataset.embeddings.vectors @ w[dx : dx + de]  # (A,)
        return ctx_part[:, None] + emb_part[None, :] + w[-1]

    def get_params(self) -> dict:
        return {"alpha": self.alpha}


def fit_reward_model(dataset: BanditDataset, alpha: float = 1.0) -> RidgeRewardModel:
    return RidgeRewardModel(alpha=alpha).fit(dataset)


def _target_rows(dataset: BanditDataset, target: PolicyEvaluator, target_rows):
    if target_rows is None:
        target_rows = target.prob_matrix(dataset.contexts)
    return np.asarray(target_rows, dtype=float)


class DirectMethod:
    """Model-based value estimate: mean over contexts of pi . delta_hat."""

    name = "dm"

    def __init__(self, reward_model: RewardModel):
        self.reward_model = reward_model

    def estimate(self, dataset, target, target_rows=None) -> EstimateDiagnostics:
        rows = _target_rows(dataset, target, target_rows)
        preds = self.reward_model.predict_matrix(dataset)
        terms = np.sum(rows * preds, axis=1)
        return EstimateDiagnostics(float(terms.mean()), terms, 0.0, 0.0)


class _WeightedEstimator:
    """Shared machinery for the IPS family; weights are injected so the
    smoothed-policy variants reuse the exact backbone arithmetic."""

    def _weights(self, dataset: BanditDataset, rows: np.ndarray) -> np.ndarray:
        idx = np.arange(len(dataset))
        return rows[idx, dataset.actions] / dataset.propensities

    def estimate(self, dataset, target, target_rows=None) -> EstimateDiagnostics:
        rows = _target_rows(dataset, target, target_rows)
        w = self._weights(dataset, rows)
        return self._from_weights(dataset, w, rows)

    def _from_weights(self, dataset, w, rows) -> EstimateDiagnostics:
        raise NotImplementedError


class InversePropensityScoring(_WeightedEstimator):
    name = "ips"

    def _from_weights(self, dataset, w, rows):
        terms = w * dataset.rewards
        return EstimateDiagnostics(
            float(terms.mean()), terms, float(w.min()), float(w.max())
        )


class SelfNormalizedIPS(_WeightedEstimator):
    name = "snips"

    def _from_weights(self, dataset, w, rows):
        rho = float(w.mean())
        if rho <= 0:
            raise EstimationError("target policy places no mass on any logged action")
        terms = (w / rho) * dataset.rewards
        return EstimateDiagnostics(
            float(terms.mean()), terms, float(w.min()), float(w.max()), rho=rho
        )


class DoublyRobust(_WeightedEstimator):
    name = "dr"

    def __init__(self, reward_model: RewardModel):
        self.reward_model = reward_model

    def _from_weights(self, dataset, w, rows):
        preds = self.reward_model.predict_matrix(dataset)
        idx = np.arange(len(dataset))
        baseline = np.sum(rows * preds, axis=1)
        terms = w * (dataset.rewards - preds[idx, dataset.actions]) + baseline
        return EstimateDiagnostics(
            float(terms.mean()), terms, float(w.min()), float(w.max())
        )


class SelfNormalizedDR(_WeightedEstimator):
    name = "sndr"

    def __init__(self, reward_model: RewardModel):
        self.reward_model = reward_model

    def _from_weights(self, dataset, w, rows):
        rho = float(w.mean())
        if rho <= 0:
            raise EstimationError("target policy places no mass on any logged action")
        preds = self.reward_model.predict_matrix(dataset)
        idx = np.arange(len(dataset))
        baseline = np.sum(rows * preds, axis=1)
        terms = (w / rho) * (dataset.rewards - preds[idx, dataset.actions]) + baseline
        return EstimateDiagnostics(
            float(terms.mean()), terms, float(w.min()), float(w.max()), rho=rho
        )


class PolicyConvolution(_WeightedEstimator):
    """Backbone estimator with smoothed-policy importance weights.

    The target and logging policies may be smoothed with different
    operators (or not at all: pass None to leave one side untouched).
    With identity smoothing on both sides the output matches the backbone
    bit-for-bit.
    """

    def __init__(
        self,
        backbone: _WeightedEstimator,
        target_smoother: Smoother | None = None,
        logging_smoother: Smoother | None = None,
    ):
        if isinstance(backbone, DirectMethod):
            raise ValueError("the direct method has no importance weights to smooth")
        if target_smoother is None and logging_smoother is None:
            raise ValueError("at least one smoother must be provided")
        self.backbone = backbone
        self.target_smoother = target_smoother
        self.logging_smoother = logging_smoother

    @property
    def name(self) -> str:
        return "pc-" + self.backbone.name

    def _smoothed_at_logged(self, rows, actions, smoother):
        from .smoothing import KNNSmoother, TreeSmoother

        n = len(actions)
        if isinstance(smoother, KNNSmoother):
            nbrs = smoother._neighbors[actions]
            return rows[np.arange(n)[:, None], nbrs].mean(axis=1)
        if isinstance(smoother, TreeSmoother):
            inverse = smoother._inverse
            out = np.empty(n)
            for c in np.unique(inverse[actions]):
                members = inverse == c
                hit = inverse[actions] == c
                out[hit] = rows[np.ix_(hit, members)].mean(axis=1)
            return out
        return np.array(
            [smoother.convolve_at(rows[i], a) for i, a in enumerate(actions)]
        )

    def _weights(self, dataset: BanditDataset, rows: np.ndarray) -> np.ndarray:
        idx = np.arange(len(dataset))
        if self.target_smoother is not None:
            num = self._smoothed_at_logged(rows, dataset.actions, self.target_smoother)
        else:
            num = rows[idx, dataset.actions]
        if self.logging_smoother is not None:
            den = self._smoothed_at_logged(
                dataset.logging_rows, dataset.actions, self.logging_smoother
            )
        else:
            den = dataset.propensities
        bad = den <= 0
        if np.any(bad):
            i = int(np.argmax(bad))
            raise EstimationError(
                f"sample {i}: smoothed logging propensity is {den[i]} at action "
                f"{dataset.actions[i]} (smoothing failed to cover a blind spot)"
            )
        return num / den

    def _from_weights(self, dataset, w, rows):
        return self.backbone._from_weights(dataset, w, rows)


def estimate_dm(dataset, target, model, target_rows=None):
    return DirectMethod(model).estimate(dataset, target, target_rows)


def estimate_ips(dataset, target, target_rows=None):
    return InversePropensityScoring().estimate(dataset, target, target_rows)


def estimate_snips(dataset, target, target_rows=None):
    return SelfNormalizedIPS().estimate(dataset, target, target_rows)


def estimate_dr(dataset, target, model, target_rows=None):
    return DoublyRobust(model).estimate(dataset, target, target_rows)


def estimate_sndr(dataset, target, model, target_rows=None):
    return SelfNormalizedDR(model).estimate(dataset, target, target_rows)
