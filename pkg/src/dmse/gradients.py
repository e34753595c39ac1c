"""Monte-Carlo likelihood gradients and their chain-rule assembly.

The gradient of the log rectangle-probability with respect to the latent
mean and covariance equals the expectation, under the normal restricted to
the rectangle, of the score functions

    F(x) = Sigma^{-1} (x - mu)
    G(x) = -1/2 (Sigma^{-1} - Sigma^{-1} (x - mu)(x - mu)^T Sigma^{-1})

so both are estimated as plain averages over truncated Gibbs draws. The
same draws serve F and G (common random numbers). Standard errors of both
estimates are tracked with batch means, which stay honest under the
sampler's autocorrelation.

Because the correlation matrix has unit diagonal by construction, the
diagonal of the covariance gradient is an infeasible direction and is
projected out before backpropagating into the raw interaction embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch
from .mlp import MlpGrads, MlpTape, mlp_backward
from .model import ModelParams, Observation
from .mvn import MvnProblem, Rectangle, SamplerConfig, clip_rectangle, sample_truncated

__all__ = [
    "MuSigmaGrad",
    "GradientBundle",
    "score_F",
    "score_G",
    "grad_mu_sigma",
    "assemble_bundle",
]


@dataclass(frozen=True)
class MuSigmaGrad:
    """Estimated gradients of one observation's log-probability.

    ``d_sigma`` is symmetrized. ``se_mu``/``se_sigma`` are batch-means
    standard errors of the corresponding estimates.
    """

    d_mu: np.ndarray
    d_sigma: np.ndarray
    se_mu: np.ndarray
    se_sigma: np.ndarray


@dataclass
class GradientBundle:
    """Accumulated parameter gradients for a minibatch."""

    d_S: np.ndarray
    d_Lambda_raw: np.ndarray
    d_W: np.ndarray
    d_mlp: MlpGrads | None
    n_obs: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "GradientBundle":
        return cls(
            np.zeros_like(params.S),
            np.zeros_like(params.Lambda_raw),
            np.zeros_like(params.W),
            MlpGrads.zeros_like(params.mlp) if params.mlp is not None else None,
            0,
        )

    def add_(self, other: "GradientBundle") -> "GradientBundle":
        self.d_S += other.d_S
        self.d_Lambda_raw += other.d_Lambda_raw
        self.d_W += other.d_W
        if self.d_mlp is not None:
            self.d_mlp.add_(other.d_mlp)
        self.n_obs += other.n_obs
        return self

    def scale_(self, c: float) -> "GradientBundle":
        self.d_S *= c
        self.d_Lambda_raw *= c
        self.d_W *= c
        if self.d_mlp is not None:
            self.d_mlp.scale_(c)
        return self

    def is_finite(self) -> bool:
        ok = (
            np.all(np.isfinite(self.d_S))
            and np.all(np.isfinite(self.d_Lambda_raw))
            and np.all(np.isfinite(self.d_W))
        )
        if self.d_mlp is not None:
            ok = ok and self.d_mlp.is_finite()
        return bool(ok)


def score_F(sigma_inv: np.ndarray, mu: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Mean-score ``Sigma^{-1}(x - mu)`` of the normal log-density."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mu.shape[0]:
        raise DimMismatch(f"point dim {x.shape[-1]} != mean dim {mu.shape[0]}")
    return (x - mu) @ sigma_inv


def score_G(sigma_inv: np.ndarray, mu: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Covariance-score of the normal log-density, symmetrized."""
    f = score_F(sigma_inv, mu, x)
    g = -0.5 * (sigma_inv - np.outer(f, f))
    return 0.5 * (g + g.T)


def _batch_se(per_draw: np.ndarray, n_batches: int = 32) -> np.ndarray:
    """Batch-means standard error of the mean along axis 0."""
    m = per_draw.shape[0]
    n_batches = min(n_batches, m)
    usable = (m // n_batches) * n_batches
    batches = per_draw[:usable].reshape(n_batches, usable // n_batches, *per_draw.shape[1:])
    means = batches.mean(axis=1)
    if n_batches < 2:
        return np.full(per_draw.shape[1:], np.inf)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def grad_mu_sigma(
    problem: MvnProblem, rect: Rectangle, cfg: SamplerConfig
) -> MuSigmaGrad:
    """Monte-Carlo estimate of the mean/covariance gradients of ``log Pr(rect)``.

    The rectangle's infinite ends are clipped internally at
    ``cfg.cutoff_k`` conditional standard deviations before sampling; the
    discarded mass per coordinate is bounded by
    :func:`dmse.mvn.truncation_bound`. Deterministic given
    ``cfg.rng_seed``.
    """
    clipped = clip_rectangle(rect, problem, cfg.cutoff_k)
    draws = sample_truncated(problem, clipped, cfg)
    q = problem.precision
    centered = draws - problem.mean
    f_draws = centered @ q  # row-wise Sigma^{-1}(x - mu)
    d_mu = f_draws.mean(axis=0)
    se_mu = _batch_se(f_draws)

    # Per-draw G is -1/2 (Q - f f^T); averaging the outer products first
    # is the same estimator without materializing M matrices.
    m = draws.shape[0]
    ff_mean = f_draws.T @ f_draws / m
    d_sigma = -0.5 * (q - ff_mean)
    d_sigma = 0.5 * (d_sigma + d_sigma.T)
    # SE of the G estimate: only the 1/2 f f^T term fluctuates. Batch the
    # outer products without materializing one matrix per draw.
    n_batches = min(32, m)
    usable = (m // n_batches) * n_batches
    if n_batches >= 2:
        fb = f_draws[:usable].reshape(n_batches, usable // n_batches, -1)
        batch_means = 0.5 * np.einsum("bki,bkj->bij", fb, fb) / (usable // n_batches)
        se_sigma = batch_means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    else:
        se_sigma = np.full_like(d_sigma, np.inf)
    return MuSigmaGrad(d_mu, d_sigma, se_mu, se_sigma)


def lambda_grad_from_sigma(lambda_raw: np.ndarray, d_sigma: np.ndarray) -> np.ndarray:
    """Backpropagate a covariance gradient through the normalized Gram map.

    Uses the symmetrized ``d_sigma`` with its diagonal discarded (the
    diagonal is pinned at 1 and cannot move). For each raw column the
    result is tangent to the unit sphere:
    ``(2/||lambda_j||) (I - lhat_j lhat_j^T) (Lhat d_sigma[:, j])``.
    """
    d = 0.5 * (d_sigma + d_sigma.T)
    d = d - np.diag(np.diag(d))
    norms = np.linalg.norm(lambda_raw, axis=0)
    lhat = lambda_raw / norms
    grad_hat = 2.0 * (lhat @ d)
    radial = np.sum(lhat * grad_hat, axis=0)
    return (grad_hat - lhat * radial) / norms


def assemble_bundle(
    params: ModelParams,
    obs: Observation,
    musig: MuSigmaGrad,
    tape: MlpTape | None,
    h: np.ndarray,
) -> GradientBundle:
    """Chain-rule assembly of one observation's parameter gradients.

    ``tape`` and ``h`` must come from the same :func:`dmse.model.mu_forward`
    call whose outputs produced ``musig``.
    """
    d_mu = musig.d_mu
    if d_mu.shape[0] != params.n_species:
        raise DimMismatch("gradient dimension does not match species count")
    d_s = np.outer(h, d_mu)
    d_h = params.S @ d_mu
    extractor_out = obs.l if tape is None else tape.output
    d_w = np.outer(d_h, extractor_out)
    if params.mlp is None:
        d_mlp = None
    else:
        d_mlp, _ = mlp_backward(params.mlp, tape, params.W.T @ d_h)
    d_lambda = lambda_grad_from_sigma(params.Lambda_raw, musig.d_sigma)
    return GradientBundle(d_s, d_lambda, d_w, d_mlp, 1)
