"""Predictive metrics: per-species AUC and joint log-likelihood.

The comparison baseline throughout is the *independent* model: identical
marginal means with the correlation matrix replaced by the identity, so a
log-likelihood gap isolates what the learned correlations contribute.
AUC is computed from marginal probabilities and is therefore identical
under both models by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, apply_standardization
from .errors import DegenerateLabels, DimMismatch
from .model import ModelParams, log_likelihood_dataset, predict_marginal
from .seeding import derive_seed

__all__ = ["EvalReport", "auc", "evaluate"]


@dataclass
class EvalReport:
    """Metrics of one model on one dataset.

    ``per_species_auc`` maps species name to AUC, or None when the species
    has a single class in the data (AUC undefined, reported absent rather
    than 0.5). Log-likelihoods are totals over the dataset.
    """

    per_species_auc: dict
    mean_auc: float
    joint_loglik: float
    independent_loglik: float
    n_obs: int

    def to_text(self) -> str:
        lines = [
            f"n_obs = {self.n_obs}",
            f"joint_loglik = {self.joint_loglik!r}",
            f"independent_loglik = {self.independent_loglik!r}",
            f"joint_minus_independent_per_obs = "
            f"{(self.joint_loglik - self.independent_loglik) / max(self.n_obs, 1)!r}",
            f"mean_auc = {self.mean_auc!r}",
        ]
        for name, value in self.per_species_auc.items():
            lines.append(f"auc[{name}] = {'absent' if value is None else repr(value)}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "species", "value"])
            writer.writerow(["n_obs", "", self.n_obs])
            writer.writerow(["joint_loglik", "", repr(self.joint_loglik)])
            writer.writerow(["independent_loglik", "", repr(self.independent_loglik)])
            writer.writerow(["mean_auc", "", repr(self.mean_auc)])
            for name, value in self.per_species_auc.items():
                writer.writerow(["auc", name, "" if value is None else repr(value)])


def auc(scores, labels) -> float:
    """Area under the ROC curve, Mann-Whitney form with half-credit ties.

    Equals ``(concordant + 0.5 * tied) / (positives * negatives)`` over all
    positive/negative pairs, computed via average ranks.

    Raises
    ------
    DegenerateLabels
        If only one class is present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimMismatch("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    cdf_tol: float = 1e-6,
    seed: int = 0,
) -> EvalReport:
    """Score a model on a raw dataset.

    Features are standardized with the model's stored statistics. The
    independent log-likelihood reuses the same means with the identity
    correlation (closed-form probit factorization).
    """
    if dataset.species_names != params.species_names:
        missing = set(params.species_names) - set(dataset.species_names)
        raise DimMismatch(
            f"dataset species do not match the model"
            + (f"; missing {sorted(missing)}" if missing else "")
        )
    if dataset.feature_names != params.feature_names:
        raise DimMismatch("dataset features do not match the model")
    std_data = apply_standardization(dataset, params.standardization)
    presence = std_data.presence_matrix()
    scores = np.array([predict_marginal(params, obs.l) for obs in std_data.observations])

    per_species = {}
    defined = []
    for j, name in enumerate(params.species_names):
        labels = presence[:, j]
        if labels.min() == labels.max():
            per_species[name] = None
            continue
        value = auc(scores[:, j], labels)
        per_species[name] = value
        defined.append(value)
    mean_auc = float(np.mean(defined)) if defined else float("nan")

    joint = log_likelihood_dataset(
        params, std_data, tol=cdf_tol, seed=derive_seed(seed, "joint")
    )
    independent = log_likelihood_dataset(
        params,
        std_data,
        tol=cdf_tol,
        seed=derive_seed(seed, "independent"),
        sigma=np.eye(params.n_species),
    )
    return EvalReport(per_species, mean_auc, joint, independent, len(dataset))
