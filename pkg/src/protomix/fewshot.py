"""Class prototypes and the mixed-label episodic cross-entropy loss.

A query's class probabilities come from a softmax over the negated squared
Euclidean distances to the episode's prototypes. Each mixed query pays
lambda_1 times the negative log-probability of its first source label plus
lambda_2 times that of its second; the episode loss is the mean over all
queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import LossError


@dataclass
class Prototypes:
    """Per-class mean support features, aligned with class_ids."""

    vectors: Tensor  # (n_classes, d_model)
    class_ids: list


@dataclass
class LossBreakdown:
    """Episode loss with its per-query terms, for logging and tests."""

    loss: Tensor
    total: float
    per_query: list  # (lambda_1 * nll_i, lambda_2 * nll_k) per query
    mean_lambda1: float
    mean_lambda2: float


def compute_prototypes(features, class_labels, class_ids=None):
    """Arithmetic mean of support features per class."""
    features = ad.as_tensor(features)
    class_labels = np.asarray(class_labels)
    if class_ids is None:
        class_ids = sorted(int(c) for c in np.unique(class_labels))
    rows = []
    for cid in class_ids:
        idx = np.nonzero(class_labels == cid)[0]
        if idx.size == 0:
            raise LossError(f"episode class {cid} has no support features")
        rows.append(features[idx].mean(axis=0, keepdims=True))
    return Prototypes(vectors=ad.concat(rows, axis=0), class_ids=list(class_ids))


def class_log_probs(query_features, prototypes: Prototypes):
    """Log-probabilities over the episode's classes for each query feature."""
    features = ad.as_tensor(query_features)
    single = features.data.ndim == 1
    if single:
        features = features.reshape(1, -1)
    logits = -ad.pairwise_sqdist(features, prototypes.vectors)
    out = ad.log_softmax_rows(logits)
    return out[0] if single else out


def mixed_episode_loss(mixed_queries, features, prototypes: Prototypes, lambda_tensors=None):
    """Mean over queries of lambda_1 * nll(label_i) + lambda_2 * nll(label_k).

    ``lambda_tensors`` optionally supplies the weights as autodiff tensors of
    shape (n_queries,) each, so gradients can flow through attention-derived
    weights; otherwise the float weights stored on the mixed queries are
    used as constants.
    """
    if not mixed_queries:
        raise LossError("episode has no mixed queries")
    position = {cid: j for j, cid in enumerate(prototypes.class_ids)}
    try:
        idx_i = np.array([position[q.label_i] for q in mixed_queries])
        idx_k = np.array([position[q.label_k] for q in mixed_queries])
    except KeyError as exc:
        raise LossError(f"mixed-query label {exc.args[0]} is not an episode class") from exc
    n = len(mixed_queries)
    log_probs = class_log_probs(features, prototypes)
    rows = np.arange(n)
    nll_i = -log_probs[rows, idx_i]
    nll_k = -log_probs[rows, idx_k]
    if lambda_tensors is not None:
        lam_1, lam_2 = lambda_tensors
    else:
        lam_1 = np.array([q.lambda_1 for q in mixed_queries])
        lam_2 = np.array([q.lambda_2 for q in mixed_queries])
    term_i = nll_i * lam_1
    term_k = nll_k * lam_2
    loss = (term_i + term_k).mean()
    lam_1_values = lam_1.data if isinstance(lam_1, Tensor) else lam_1
    lam_2_values = lam_2.data if isinstance(lam_2, Tensor) else lam_2
    return LossBreakdown(
        loss=loss,
        total=float(loss.data),
        per_query=list(zip(term_i.data.tolist(), term_k.data.tolist())),
        mean_lambda1=float(np.mean(lam_1_values)),
        mean_lambda2=float(np.mean(lam_2_values)),
    )
