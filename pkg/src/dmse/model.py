"""The multi-species embedding model.

Each species ``j`` carries two embedding vectors: a habitat vector ``s_j``
whose inner product with the environment embedding scores habitat
suitability, and an interaction vector whose normalized inner products
give inter-species latent correlations. The environment embedding is
``W @ network(l)`` for an observation's feature vector ``l`` (or ``W @ l``
when the model is configured without the network).

The joint probability of a presence/absence pattern is the probability
that a latent normal vector with mean ``mu(l)`` and the learned
correlation matrix falls in the rectangle encoding the pattern.

Model-layer functions expect features already standardized with the
model's stored per-feature statistics; ingestion and evaluation layers own
that transform.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import DimMismatch, ZeroColumn
from .mlp import MlpParams, MlpTape, glorot_uniform, mlp_forward, mlp_init
from .mvn import (
    CdfEstimate,
    DEFAULT_CDF_TOL,
    DEFAULT_MAX_SAMPLES,
    MvnProblem,
    Rectangle,
    cdf_rectangle,
    cholesky,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

__all__ = [
    "Observation",
    "FeatureStandardization",
    "CorrelationMatrix",
    "ModelParams",
    "init_model_params",
    "sigma_from_lambda",
    "mu_forward",
    "predict_marginal",
    "joint_probability",
    "log_likelihood_obs",
    "log_likelihood_dataset",
]

#: Columns of the raw interaction matrix are re-perturbed below this norm.
MIN_COLUMN_NORM = 1e-10

#: Off-diagonal correlations are clamped to at most 1 - this margin.
CORR_CLAMP = 1e-12


@dataclass(frozen=True)
class Observation:
    """One checklist: presence bits ``b`` plus environmental features ``l``."""

    b: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b)
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("presence entries must be 0 or 1")
        object.__setattr__(self, "b", b.astype(np.int8))
        object.__setattr__(self, "l", np.asarray(self.l, dtype=float))


@dataclass(frozen=True)
class FeatureStandardization:
    """Per-feature centering/scaling recorded at training time.

    ``std`` entries are the population standard deviation, except for
    features flagged constant, whose std is recorded as 1 so the transform
    only centers them.
    """

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @classmethod
    def identity(cls, m: int) -> "FeatureStandardization":
        return cls(np.zeros(m), np.ones(m), np.zeros(m, dtype=bool))

    def apply(self, l: np.ndarray) -> np.ndarray:
        return (np.asarray(l, dtype=float) - self.mean) / self.std


@dataclass(frozen=True)
class CorrelationMatrix:
    """Unit-diagonal, symmetric PSD matrix of latent correlations."""

    sigma: np.ndarray

    @property
    def n(self) -> int:
        return self.sigma.shape[0]


@dataclass
class ModelParams:
    """Full trainable state plus the metadata needed to apply it.

    ``S`` is ``(d1, n)`` with habitat embeddings as columns; ``Lambda_raw``
    is ``(d2, n)`` with un-normalized interaction embeddings as columns;
    ``W`` is ``(d1, n_output)``. ``mlp`` may be None, in which case the
    feature extractor is the identity and ``n_output == m``.
    """

    species_names: list[str]
    feature_names: list[str]
    S: np.ndarray
    Lambda_raw: np.ndarray
    W: np.ndarray
    mlp: MlpParams | None
    standardization: FeatureStandardization

    @property
    def n_species(self) -> int:
        return self.S.shape[1]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def d1(self) -> int:
        return self.S.shape[0]

    @property
    def d2(self) -> int:
        return self.Lambda_raw.shape[0]

    @property
    def n_output(self) -> int:
        return self.W.shape[1]

    def validate(self) -> None:
        n, m = self.n_species, self.n_features
        if len(self.species_names) != n:
            raise DimMismatch("species name count does not match S columns")
        if self.Lambda_raw.shape[1] != n:
            raise DimMismatch("Lambda_raw column count does not match S")
        if self.W.shape[0] != self.d1:
            raise DimMismatch("W rows must equal d1")
        if self.mlp is None:
            if self.n_output != m:
                raise DimMismatch("without an MLP, W columns must equal the feature count")
        else:
            if self.mlp.n_input != m:
                raise DimMismatch("MLP input dim must equal the feature count")
            if self.n_output != self.mlp.n_output:
                raise DimMismatch("W columns must equal the MLP output dim")
        if self.standardization.mean.shape[0] != m:
            raise DimMismatch("standardization stats must cover every feature")


def init_model_params(
    species_names,
    feature_names,
    d1: int = 100,
    d2: int = 100,
    hidden_dims=None,
    seed: int = 0,
    standardization: FeatureStandardization | None = None,
) -> ModelParams:
    """Seed-deterministic initialization of all parameter tensors.

    Every matrix uses the same zero-mean uniform scheme as the network
    (half-width ``sqrt(6/(rows+cols))``), drawn from named sub-streams of
    ``seed``. ``hidden_dims=None`` or an empty tuple builds the model
    without a network (identity feature extractor).
    """
    species_names = list(species_names)
    feature_names = list(feature_names)
    n, m = len(species_names), len(feature_names)
    if n < 1 or m < 1 or d1 < 1 or d2 < 1:
        raise DimMismatch("all dimensions must be >= 1")
    hidden = tuple(hidden_dims) if hidden_dims else ()
    if hidden:
        mlp = mlp_init((m,) + hidden, derive_seed(seed, "init", "mlp"))
        n_output = mlp.n_output
    else:
        mlp = None
        n_output = m
    s_mat = glorot_uniform(np.random.default_rng(derive_seed(seed, "init", "S")), d1, n)
    lam = glorot_uniform(np.random.default_rng(derive_seed(seed, "init", "Lambda")), d2, n)
    w = glorot_uniform(np.random.default_rng(derive_seed(seed, "init", "W")), d1, n_output)
    _reperturb_zero_columns(lam)
    params = ModelParams(
        species_names,
        feature_names,
        s_mat,
        lam,
        w,
        mlp,
        standardization or FeatureStandardization.identity(m),
    )
    params.validate()
    return params


def _reperturb_zero_columns(lam: np.ndarray) -> None:
    """Nudge numerically-zero columns onto cycled basis vectors, in place."""
    norms = np.linalg.norm(lam, axis=0)
    for j in np.nonzero(norms < MIN_COLUMN_NORM)[0]:
        lam[:, j] = 0.0
        lam[j % lam.shape[0], j] = 1e-6


def sigma_from_lambda(lambda_raw: np.ndarray) -> CorrelationMatrix:
    """Correlation matrix from raw interaction embeddings.

    Columns are L2-normalized before the Gram product, so the diagonal is
    exactly 1 and the result is invariant to rescaling any raw column by a
    positive scalar. Off-diagonals are clamped to ``1 - 1e-12`` in absolute
    value so coinciding columns cannot produce an exactly singular matrix.
    """
    lam = np.asarray(lambda_raw, dtype=float)
    norms = np.linalg.norm(lam, axis=0)
    if np.any(norms < MIN_COLUMN_NORM):
        bad = int(np.argmin(norms))
        raise ZeroColumn(f"interaction column {bad} has norm {norms[bad]:.3e}")
    lhat = lam / norms
    sigma = lhat.T @ lhat
    sigma = 0.5 * (sigma + sigma.T)
    np.clip(sigma, -(1.0 - CORR_CLAMP), 1.0 - CORR_CLAMP, out=sigma)
    np.fill_diagonal(sigma, 1.0)
    return CorrelationMatrix(sigma)


def mu_forward(
    params: ModelParams, l: np.ndarray
) -> tuple[np.ndarray, MlpTape | None, np.ndarray]:
    """Latent means for one standardized feature vector.

    Returns ``(mu, tape, h)`` where ``h = W @ extractor(l)`` is the
    environment embedding and ``mu[j] = s_j . h``. The tape (None for the
    identity extractor) is retained for backpropagation.
    """
    l = np.asarray(l, dtype=float)
    if l.shape != (params.n_features,):
        raise DimMismatch(f"feature vector shape {l.shape} != ({params.n_features},)")
    if params.mlp is None:
        out, tape = l, None
    else:
        out, tape = mlp_forward(params.mlp, l)
    h = params.W @ out
    return params.S.T @ h, tape, h


def predict_marginal(params: ModelParams, l: np.ndarray) -> np.ndarray:
    """Per-species presence probabilities ``Phi(mu_j)`` for standardized ``l``.

    Marginals depend only on the habitat side of the model; the interaction
    embeddings never enter.
    """
    mu, _, _ = mu_forward(params, l)
    return ndtr(mu)


def joint_probability(
    params: ModelParams,
    b: np.ndarray,
    l: np.ndarray,
    tol: float = DEFAULT_CDF_TOL,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    seed: int = 0,
    problem: MvnProblem | None = None,
) -> CdfEstimate:
    """Probability of the presence pattern ``b`` at standardized ``l``.

    ``problem`` may carry a pre-factorized covariance (the correlation
    matrix does not depend on ``l``, so batch callers factorize once); its
    mean is ignored and replaced by the forward map's output.
    """
    b = np.asarray(b)
    if b.shape != (params.n_species,):
        raise DimMismatch(f"pattern length {b.shape} != species count {params.n_species}")
    mu, _, _ = mu_forward(params, l)
    if problem is None:
        sigma = sigma_from_lambda(params.Lambda_raw).sigma
        problem = MvnProblem(mu, sigma)
    else:
        problem = MvnProblem(
            mu, problem.cov, chol=problem.chol, precision=problem.precision,
            jitter_applied=problem.jitter_applied,
        )
    return cdf_rectangle(problem, Rectangle.from_presence(b), tol, max_samples, seed)


def log_likelihood_obs(
    params: ModelParams,
    obs: Observation,
    tol: float = DEFAULT_CDF_TOL,
    seed: int = 0,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    problem: MvnProblem | None = None,
) -> float:
    """Log joint probability of one observation's pattern.

    The result is the log of a probability, hence in ``(-inf, 0]``; the
    value is floored at the smallest positive normal to keep it finite.
    With the identity correlation the closed-form probit factorization is
    used instead of quadrature.
    """
    if problem is not None and _is_identity(problem.cov):
        mu, _, _ = mu_forward(params, obs.l)
        return _independent_loglik(mu, obs.b)
    est = joint_probability(params, obs.b, obs.l, tol, max_samples, seed, problem)
    if not est.tolerance_reached:
        log.warning(
            "joint probability tolerance %g not reached (error %.2e after %d samples)",
            tol, est.error_estimate, est.samples_used,
        )
    return math.log(max(est.value, 1e-300))


def _is_identity(cov: np.ndarray) -> bool:
    return cov.shape[0] == cov.shape[1] and np.array_equal(cov, np.eye(cov.shape[0]))


def _independent_loglik(mu: np.ndarray, b: np.ndarray) -> float:
    """Sum of probit log-marginals; exact when correlations vanish."""
    signs = 2.0 * np.asarray(b, dtype=float) - 1.0
    return float(np.sum(log_ndtr(signs * mu)))


def log_likelihood_dataset(
    params: ModelParams,
    dataset,
    tol: float = DEFAULT_CDF_TOL,
    seed: int = 0,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    sigma: np.ndarray | None = None,
) -> float:
    """Sum of per-observation log-likelihoods over standardized observations.

    ``dataset`` is a Dataset or any iterable of observations. The
    per-observation integration seed is ``seed XOR index`` so the total is
    deterministic and independent of iteration order; a failed tolerance on
    one observation never aborts the rest. ``sigma`` overrides the model's
    correlation matrix (used for the independent baseline).
    """
    observations = list(getattr(dataset, "observations", dataset))
    if not observations:
        return 0.0
    if sigma is None:
        sigma = sigma_from_lambda(params.Lambda_raw).sigma
    if _is_identity(sigma):
        total = 0.0
        for obs in observations:
            mu, _, _ = mu_forward(params, obs.l)
            total += _independent_loglik(mu, obs.b)
        return total
    chol, jit = cholesky(sigma)
    shared = MvnProblem(np.zeros(params.n_species), sigma, chol=chol, jitter_applied=jit)
    total = 0.0
    for i, obs in enumerate(observations):
        total += log_likelihood_obs(
            params, obs, tol, seed ^ i, max_samples, problem=shared
        )
    return total
