"""Objectives, gradients, and the local-SGD inner loop.

Desk-scale objectives stand in for deep networks: least squares has an
analytic smoothness constant and optimum, so every closed-form bound can
be evaluated exactly; logistic regression adds a nonquadratic case. Both
are defined over synthetic per-client datasets with a planted weight
vector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DivergedError, InvalidParameterError

OBJECTIVE_KINDS = ("least_squares", "logistic")


@dataclass
class LocalDataset:
    """One client's (features, targets) shard."""

    features: np.ndarray
    targets: np.ndarray
    client_id: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.shape[0] != self.targets.shape[0]:
            raise InvalidParameterError("feature/target row counts differ")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise InvalidParameterError("dataset entries must be finite")

    @property
    def n(self):
        return self.features.shape[0]


@dataclass(frozen=True)
class ObjectiveSpec:
    """Certified constants of an objective, measured or derived once.

    smoothness is analytic (largest Gram eigenvalue, scaled by 1/4 for
    logistic, plus the ridge); grad_variance is the empirical single-sample
    gradient variance bound at theta0; optimum_gap is F(theta0) - F(theta*).
    """

    kind: str
    dimension: int
    smoothness: float
    grad_variance: float
    optimum_gap: float
    ridge: float = 0.0


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Objective:
    """A differentiable objective over N client shards.

    The global objective is the unweighted mean of per-client means plus an
    optional ridge term. All evaluation paths are pure in (theta, data).
    """

    def __init__(self, datasets, kind="least_squares", ridge=0.0):
        if kind not in OBJECTIVE_KINDS:
            raise InvalidParameterError(f"unknown objective kind {kind!r}")
        if ridge < 0.0:
            raise InvalidParameterError("ridge must be >= 0")
        if not datasets:
            raise InvalidParameterError("need at least one client dataset")
        self.kind = kind
        self.ridge = float(ridge)
        self.datasets = list(datasets)
        self.dimension = self.datasets[0].features.shape[1]
        # Per-sample weight so that stacked evaluation equals the mean of
        # per-client means even with unequal shard sizes.
        w = np.concatenate([np.full(ds.n, 1.0 / (len(datasets) * ds.n))
                            for ds in self.datasets])
        self._X = np.vstack([ds.features for ds in self.datasets])
        self._y = np.concatenate([ds.targets for ds in self.datasets])
        self._w = w
        self._nu = None
        self._optimum = None

    # -- evaluation ---------------------------------------------------------

    def full_loss(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        z = self._X @ theta
        if self.kind == "least_squares":
            data = 0.5 * np.sum(self._w * (z - self._y) ** 2)
        else:
            # Stable log(1 + exp(z)) - y*z.
            data = np.sum(self._w * (np.logaddexp(0.0, z) - self._y * z))
        return float(data + 0.5 * self.ridge * theta @ theta)

    def full_gradient(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        z = self._X @ theta
        resid = (z - self._y) if self.kind == "least_squares" else (_sigmoid(z) - self._y)
        return self._X.T @ (self._w * resid) + self.ridge * theta

    def sample_gradients(self, theta, dataset, indices):
        """Per-sample gradients (len(indices) x d) of one client's loss."""
        theta = np.asarray(theta, dtype=np.float64)
        X = dataset.features[indices]
        y = dataset.targets[indices]
        z = X @ theta
        resid = (z - y) if self.kind == "least_squares" else (_sigmoid(z) - y)
        return X * resid[:, None] + self.ridge * theta

    # -- certified constants ------------------------------------------------

    def smoothness(self):
        """Largest eigenvalue of the mean Gram matrix (1/4-scaled for logistic)."""
        if self._nu is None:
            gram = (self._X * self._w[:, None]).T @ self._X
            lam = float(np.linalg.eigvalsh(gram)[-1])
            factor = 1.0 if self.kind == "least_squares" else 0.25
            self._nu = factor * lam + self.ridge
        return self._nu

    def optimum(self):
        """(theta*, F(theta*)); analytic for least squares, converged otherwise."""
        if self._optimum is None:
            if self.kind == "least_squares":
                gram = (self._X * self._w[:, None]).T @ self._X
                gram = gram + self.ridge * np.eye(self.dimension)
                rhs = self._X.T @ (self._w * self._y)
                theta = np.linalg.solve(gram, rhs)
            else:
                res = minimize(self.full_loss, np.zeros(self.dimension),
                               jac=self.full_gradient, method="L-BFGS-B",
                               options={"gtol": 1e-12, "maxiter": 2000})
                theta = res.x
            self._optimum = (theta, self.full_loss(theta))
        return self._optimum

    def grad_variance_bound(self, theta0):
        """Max over clients of the empirical single-sample gradient variance."""
        worst = 0.0
        for ds in self.datasets:
            grads = self.sample_gradients(theta0, ds, np.arange(ds.n))
            worst = max(worst, float(np.mean(np.sum((grads - grads.mean(0)) ** 2, axis=1))))
        return worst

    def spec(self, theta0) -> ObjectiveSpec:
        _, f_star = self.optimum()
        return ObjectiveSpec(kind=self.kind, dimension=self.dimension,
                             smoothness=self.smoothness(),
                             grad_variance=self.grad_variance_bound(theta0),
                             optimum_gap=self.full_loss(theta0) - f_star,
                             ridge=self.ridge)


@dataclass
class ModelState:
    """Global parameters plus round index and the objective handle."""

    theta: np.ndarray
    round: int
    objective: Objective

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(self.theta)):
            raise InvalidParameterError("model parameters must be finite")


def stochastic_gradient(model: ModelState, dataset: LocalDataset, batch_indices):
    """Mini-batch gradient of one client's local objective at the model."""
    idx = np.asarray(batch_indices, dtype=np.int64)
    if idx.size == 0:
        raise InvalidParameterError("batch must be nonempty")
    if np.any(idx < 0) or np.any(idx >= dataset.n):
        raise InvalidParameterError("batch index out of range")
    grads = model.objective.sample_gradients(model.theta, dataset, idx)
    return grads.mean(axis=0)


def local_rounds(model: ModelState, dataset: LocalDataset, Q: int, eta: float,
                 batch_size: int, stream, divergence_ceiling: float = 1e6):
    """Run Q local SGD steps and return the resulting model update.

    The caller's model is never mutated; batches are drawn with replacement
    from ``stream`` (one uniform per index), or deterministically full-batch
    when batch_size covers the shard.
    """
    if Q < 1:
        raise InvalidParameterError("Q must be >= 1")
    if eta < 0.0:
        raise InvalidParameterError("eta must be >= 0")
    theta = model.theta.copy()
    local = ModelState(theta=theta, round=model.round, objective=model.objective)
    for _ in range(Q):
        if batch_size >= dataset.n:
            idx = np.arange(dataset.n)
        else:
            idx = np.floor(stream.next(batch_size) * dataset.n).astype(np.int64)
        g = stochastic_gradient(local, dataset, idx)
        local.theta = local.theta - eta * g
        if float(np.linalg.norm(local.theta)) > divergence_ceiling:
            raise DivergedError(
                f"local model norm exceeded ceiling {divergence_ceiling:g}")
    return local.theta - model.theta


def estimate_tau(F_k: float, F_0: float, k: int) -> float:
    """Per-round decay estimate (F_k / F_0)^(1/k), clamped into (0, 1]."""
    if k < 1:
        raise InvalidParameterError("k must be >= 1")
    if F_0 <= 0.0 or F_k <= 0.0:
        raise InvalidParameterError("objective values must be > 0")
    ratio = (F_k / F_0) ** (1.0 / k)
    if ratio > 1.0:
        warnings.warn("objective increased; tau estimate clamped to 1.0",
                      stacklevel=2)
        return 1.0
    return ratio


def weighted_error(grad_sq_norms, tau: float) -> float:
    """Late-round-weighted mean: sum tau^{-k} g_k / sum tau^{-k}.

    Computed with weights renormalized to tau^{K-1-k} so that small tau and
    large K cannot overflow.
    """
    values = np.asarray(grad_sq_norms, dtype=np.float64)
    if values.size == 0:
        raise InvalidParameterError("need at least one gradient norm")
    if not (0.0 < tau <= 1.0):
        raise InvalidParameterError("tau must lie in (0, 1]")
    k = np.arange(values.size, dtype=np.float64)
    w = tau ** (values.size - 1 - k)
    return float(np.sum(w * values) / np.sum(w))


def synth_partition(global_seed: int, N: int, d: int, n_per_client: int,
                    noise_std: float, kind: str = "least_squares",
                    heterogeneity: float = 0.0):
    """Planted-model synthetic shards, deterministic under the seed.

    Features are iid standard normal; targets come from a planted weight
    vector (plus Gaussian label noise for least squares, Bernoulli labels
    through a sigmoid for logistic). ``heterogeneity`` shifts each client's
    planted vector independently; zero gives iid shards.
    """
    if kind not in OBJECTIVE_KINDS:
        raise InvalidParameterError(f"unknown objective kind {kind!r}")
    if N < 1 or d < 1 or n_per_client < 1:
        raise InvalidParameterError("all counts must be positive")
    rng = np.random.default_rng(global_seed)
    w_star = rng.standard_normal(d)
    datasets = []
    for i in range(N):
        w = w_star + heterogeneity * rng.standard_normal(d)
        X = rng.standard_normal((n_per_client, d))
        z = X @ w
        if kind == "least_squares":
            y = z + noise_std * rng.standard_normal(n_per_client)
        else:
            y = (rng.random(n_per_client) < _sigmoid(z)).astype(np.float64)
        datasets.append(LocalDataset(features=X, targets=y, client_id=i))
    return datasets
