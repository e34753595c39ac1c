"""Stochastic-gradient maximum-likelihood training with AdaGrad.

One step: draw a minibatch, estimate each observation's log-likelihood
gradient by Monte Carlo (the correlation matrix, its factor, and its
inverse are computed once per minibatch since they do not depend on the
features), average the bundles, and apply an AdaGrad ascent update.

Per-observation gradient work is read-only in the parameters and may run
on a thread pool; bundles are always reduced in observation order so the
result is independent of the thread count.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import Dataset, standardize
from .errors import InvalidK, NonFiniteGradient
from .gradients import GradientBundle, assemble_bundle, grad_mu_sigma
from .mlp import DEFAULT_HIDDEN_DIMS, MlpGrads
from .model import (
    ModelParams,
    init_model_params,
    log_likelihood_dataset,
    mu_forward,
    sigma_from_lambda,
    _reperturb_zero_columns,
)
from .mvn import MvnProblem, Rectangle, SamplerConfig, cdf_rectangle, cholesky
from .seeding import derive_seed

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdagradState",
    "TrainingLog",
    "adagrad_step",
    "train",
    "kfold_split",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``cdf_tol`` controls the tolerance of the log-likelihood *estimates*
    logged during training and used for validation evaluations; gradient
    estimation never integrates. ``hidden_dims=()`` trains the model
    without the network (projection of raw features only). ``threads=0``
    (the default) means one worker per available core; results are
    identical for any thread count.
    """

    learning_rate: float = 0.05
    adagrad_epsilon: float = 1e-8
    minibatch_size: int = 32
    epochs: int = 30
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    cdf_tol: float = 1e-3
    seed: int = 0
    eval_every: int = 100
    d1: int = 100
    d2: int = 100
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    patience: int = 0
    threads: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.adagrad_epsilon <= 0:
            raise ValueError("learning_rate and adagrad_epsilon must be positive")
        if self.minibatch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError("minibatch_size and eval_every must be positive, epochs >= 0")
        if self.d1 < 1 or self.d2 < 1:
            raise ValueError("embedding dims must be >= 1")


@dataclass
class AdagradState:
    """Per-tensor accumulators of squared gradients (entrywise, nondecreasing)."""

    acc_S: np.ndarray
    acc_Lambda: np.ndarray
    acc_W: np.ndarray
    acc_mlp: MlpGrads | None
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdagradState":
        return cls(
            np.zeros_like(params.S),
            np.zeros_like(params.Lambda_raw),
            np.zeros_like(params.W),
            MlpGrads.zeros_like(params.mlp) if params.mlp is not None else None,
            0,
        )


@dataclass
class TrainingLog:
    """Step and evaluation records of one run.

    Step records hold: step, epoch, minibatch mean log-likelihood estimate,
    mean gradient standard error, wall time, and skip flag. Records are
    plain dicts so they stream as line-delimited JSON.
    """

    steps: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    skipped_steps: int = 0

    def record_step(self, rec: dict, sink=None) -> None:
        self.steps.append(rec)
        if sink is not None:
            sink(rec)

    def record_eval(self, rec: dict, sink=None) -> None:
        self.evals.append(rec)
        if sink is not None:
            sink(rec)


def _ascent(tensor: np.ndarray, acc: np.ndarray, g: np.ndarray, lr: float, eps: float):
    acc += g * g
    tensor += lr * g / (np.sqrt(acc) + eps)


def adagrad_step(
    params: ModelParams,
    state: AdagradState,
    bundle: GradientBundle,
    cfg: TrainConfig,
) -> tuple[ModelParams, AdagradState]:
    """One AdaGrad ascent update in place; returns the mutated pair.

    ``bundle`` must already be averaged over its minibatch. Raises
    :class:`NonFiniteGradient` (leaving parameters and accumulators
    untouched) when any gradient entry is NaN or infinite; callers skip
    and log such steps.
    """
    if not bundle.is_finite():
        raise NonFiniteGradient(f"non-finite gradient at step {state.step}")
    lr, eps = cfg.learning_rate, cfg.adagrad_epsilon
    _ascent(params.S, state.acc_S, bundle.d_S, lr, eps)
    _ascent(params.Lambda_raw, state.acc_Lambda, bundle.d_Lambda_raw, lr, eps)
    _ascent(params.W, state.acc_W, bundle.d_W, lr, eps)
    if params.mlp is not None:
        for w, a, g in zip(params.mlp.weights, state.acc_mlp.weights, bundle.d_mlp.weights):
            _ascent(w, a, g, lr, eps)
        for b, a, g in zip(params.mlp.biases, state.acc_mlp.biases, bundle.d_mlp.biases):
            _ascent(b, a, g, lr, eps)
    _reperturb_zero_columns(params.Lambda_raw)
    state.step += 1
    return params, state


def _observation_gradient(params, obs, shared_problem, sampler_cfg, cdf_tol):
    """Gradient bundle and log-likelihood estimate for one observation."""
    mu, tape, h = mu_forward(params, obs.l)
    problem = MvnProblem(
        mu,
        shared_problem.cov,
        chol=shared_problem.chol,
        precision=shared_problem.precision,
        jitter_applied=shared_problem.jitter_applied,
    )
    rect = Rectangle.from_presence(obs.b)
    musig = grad_mu_sigma(problem, rect, sampler_cfg)
    bundle = assemble_bundle(params, obs, musig, tape, h)
    est = cdf_rectangle(
        problem, rect, tol=cdf_tol, max_samples=100_000, seed=sampler_cfg.rng_seed
    )
    loglik = float(np.log(max(est.value, 1e-300)))
    grad_se = float(np.mean(musig.se_mu))
    return bundle, loglik, grad_se


def _minibatch_bundle(params, batch, indices, cfg, sampler_seed, threads):
    """Averaged bundle plus logging statistics for one minibatch.

    The reduction runs in dataset-index order regardless of the thread
    count, so results are bitwise identical across `threads` settings.
    """
    sigma = sigma_from_lambda(params.Lambda_raw).sigma
    chol, jit = cholesky(sigma)
    shared = MvnProblem(np.zeros(params.n_species), sigma, chol=chol, jitter_applied=jit)

    def work(pair):
        obs, ds_index = pair
        cfg_i = replace(cfg.sampler, rng_seed=sampler_seed ^ int(ds_index))
        return _observation_gradient(params, obs, shared, cfg_i, cfg.cdf_tol)

    pairs = list(zip(batch, indices))
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]

    total = GradientBundle.zeros_like(params)
    logliks, ses = [], []
    for bundle, loglik, se in results:
        total.add_(bundle)
        logliks.append(loglik)
        ses.append(se)
    total.scale_(1.0 / len(pairs))
    total.n_obs = len(pairs)
    return total, float(np.mean(logliks)), float(np.mean(ses))


def _resolve_threads(threads: int) -> int:
    if threads > 0:
        return threads
    import os

    return os.cpu_count() or 1


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    init_seed: int = 0,
    validation: Dataset | None = None,
    log_sink=None,
) -> tuple[ModelParams, TrainingLog]:
    """Maximize the dataset log-likelihood from a seeded initialization.

    The dataset is standardized internally and the statistics are stored in
    the returned parameters; ``validation`` (raw features, same schema) is
    evaluated every ``cfg.eval_every`` steps with the same statistics. The
    whole run is deterministic given ``cfg.seed`` and ``init_seed``.

    Aborts (raising :class:`NonFiniteGradient`) only if more than half the
    steps of an epoch were skipped for non-finite gradients.
    """
    n_obs = len(dataset)
    if n_obs == 0:
        raise ValueError("dataset is empty")
    if cfg.minibatch_size > n_obs:
        raise ValueError("minibatch_size exceeds the dataset size")
    std_data, stats = standardize(dataset)
    params = init_model_params(
        dataset.species_names,
        dataset.feature_names,
        d1=cfg.d1,
        d2=cfg.d2,
        hidden_dims=cfg.hidden_dims,
        seed=init_seed,
        standardization=stats,
    )
    state = AdagradState.zeros_like(params)
    tlog = TrainingLog()
    val_std = None
    if validation is not None:
        from .dataio import apply_standardization

        val_std = apply_standardization(validation, stats)

    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    sampler_base = derive_seed(cfg.seed, "sampler")
    eval_seed = derive_seed(cfg.seed, "eval")
    threads = _resolve_threads(cfg.threads)
    observations = std_data.observations
    t0 = time.monotonic()
    step = 0
    best_val = -np.inf
    stale_evals = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n_obs)
        skipped_this_epoch = 0
        steps_this_epoch = 0
        for start in range(0, n_obs, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            batch = [observations[i] for i in idx]
            sampler_seed = sampler_base ^ (epoch << 32)
            bundle, mean_ll, mean_se = _minibatch_bundle(
                params, batch, idx, cfg, sampler_seed, threads
            )
            step += 1
            steps_this_epoch += 1
            skipped = False
            try:
                adagrad_step(params, state, bundle, cfg)
            except NonFiniteGradient:
                skipped = True
                skipped_this_epoch += 1
                tlog.skipped_steps += 1
                log.warning("step %d skipped: non-finite gradient", step)
            tlog.record_step(
                {
                    "step": step,
                    "epoch": epoch,
                    "minibatch_loglik": mean_ll,
                    "grad_se": mean_se,
                    "wall_time": time.monotonic() - t0,
                    "skipped": skipped,
                },
                log_sink,
            )
            if val_std is not None and step % cfg.eval_every == 0:
                val_ll = log_likelihood_dataset(
                    params, val_std, tol=cfg.cdf_tol, seed=eval_seed
                ) / len(val_std)
                tlog.record_eval(
                    {"step": step, "epoch": epoch, "validation_loglik": val_ll},
                    log_sink,
                )
                if cfg.patience > 0:
                    if val_ll > best_val:
                        best_val, stale_evals = val_ll, 0
                    else:
                        stale_evals += 1
                        if stale_evals >= cfg.patience:
                            log.info("early stop after %d stale evaluations", stale_evals)
                            return params, tlog
        if steps_this_epoch > 0 and skipped_this_epoch > steps_this_epoch / 2:
            raise NonFiniteGradient(
                f"{skipped_this_epoch}/{steps_this_epoch} steps skipped in epoch {epoch}"
            )
    return params, tlog


def kfold_split(dataset, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded permutation split into ``k`` near-equal folds.

    Fold ``i``'s validation indices are block ``i`` of the permutation;
    every index appears in exactly one validation set.
    """
    n = len(dataset) if not isinstance(dataset, int) else dataset
    if k < 2 or k > n:
        raise InvalidK(f"k must be in [2, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(perm, k)
    splits = []
    for i in range(k):
        val = np.sort(blocks[i])
        trn = np.sort(np.concatenate([blocks[j] for j in range(k) if j != i]))
        splits.append((trn, val))
    return splits
