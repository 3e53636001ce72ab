"""Ranking-aware cross-modality retrieval loss and softmax identity loss.

Both losses act on the same embedding matrix and come with analytic
gradients, validated against central finite differences in the test suite.

The retrieval loss takes every sample in the batch as a query in turn,
builds its gallery from all opposite-modality samples, computes halved
cosine distances, soft-ranks them, and penalizes the normalized L1 gap
(Spearman's footrule) between the soft ranks and the target ranking that
places same-identity entries at rank 1 and everything else at rank n. The
combined objective is the plain, unweighted sum of the two losses.

The halved cosine distance here is bit-for-bit the one the evaluation
protocol ranks galleries with, keeping train and test geometry identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .softrank import SoftRankParams, _soft_rank_core, soft_rank_vjp

MODALITIES = ("vis", "ir")


@dataclass
class EmbeddingBatch:
    """B x D embeddings with per-row identity and modality labels."""

    embeddings: np.ndarray
    ids: np.ndarray
    modalities: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.ids = np.asarray(self.ids)
        self.modalities = np.asarray(self.modalities)
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be B x D, got shape {self.embeddings.shape}")
        b = self.embeddings.shape[0]
        if self.ids.shape != (b,) or self.modalities.shape != (b,):
            raise ValueError("ids and modalities must be length-B vectors")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("embeddings contain non-finite values")
        if np.any(np.linalg.norm(self.embeddings, axis=1) == 0.0):
            raise ValueError("embedding rows must be nonzero (cosine distance undefined)")
        bad = set(np.unique(self.modalities)) - set(MODALITIES)
        if bad:
            raise ValueError(f"modalities must be one of {MODALITIES}, got {sorted(bad)}")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class LossReport:
    """Loss components plus the gradient of the total w.r.t. the embeddings.

    classifier_grad is populated only when the identity loss contributed.
    """

    total: float
    id_component: float
    cmr_component: float
    grad: np.ndarray
    classifier_grad: np.ndarray | None = field(default=None, repr=False)


def cosine_distance_row(q: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Halved cosine distances (1 - cos) / 2 from q to each gallery row; in [0, 1]."""
    q = np.asarray(q, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or q.shape != (gallery.shape[1],):
        raise ValueError(
            f"expected q of shape (D,) and gallery of shape (n, D), got {q.shape} and {gallery.shape}"
        )
    q_norm = np.linalg.norm(q)
    g_norms = np.linalg.norm(gallery, axis=1)
    if q_norm == 0.0 or np.any(g_norms == 0.0):
        raise ValueError("cosine distance undefined for zero-norm vectors")
    cos = (gallery @ q) / (q_norm * g_norms)
    return (1.0 - cos) / 2.0


def cosine_distance_row_grad(
    q: np.ndarray, gallery: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate upstream through cosine_distance_row.

    Returns (grad_q, grad_gallery) with grad_gallery[j] the pull of distance
    j on gallery row j only (distances are row-separable).
    """
    q = np.asarray(q, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (gallery.shape[0],):
        raise ValueError(f"upstream must have one entry per gallery row, got {upstream.shape}")
    q_norm = np.linalg.norm(q)
    g_norms = np.linalg.norm(gallery, axis=1)
    if q_norm == 0.0 or np.any(g_norms == 0.0):
        raise ValueError("cosine distance undefined for zero-norm vectors")
    cos = (gallery @ q) / (q_norm * g_norms)
    # d/dx of (1 - cos)/2 is -(1/2) d cos/dx
    coeff = upstream / (q_norm * g_norms)
    grad_q = -0.5 * (gallery.T @ coeff - (upstream @ cos) * q / q_norm**2)
    grad_gallery = -0.5 * (
        np.outer(coeff, q) - (upstream * cos / g_norms**2)[:, None] * gallery
    )
    return grad_q, grad_gallery


def target_ranks(query_id, gallery_ids) -> np.ndarray:
    """Rank 1 for gallery entries sharing the query identity, n for the rest."""
    gallery_ids = np.asarray(gallery_ids)
    if gallery_ids.ndim != 1 or gallery_ids.size == 0:
        raise ValueError("gallery ids must be a nonempty vector")
    n = gallery_ids.size
    return np.where(gallery_ids == query_id, 1.0, float(n))


def footrule(ranks, targets) -> float:
    """Spearman's footrule normalized by length: mean absolute rank gap."""
    ranks = np.asarray(ranks, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if ranks.shape != targets.shape or ranks.ndim != 1:
        raise ValueError(f"rank vectors must share one shape, got {ranks.shape} vs {targets.shape}")
    return float(np.mean(np.abs(ranks - targets)))


def cmr_loss(batch: EmbeddingBatch, params: SoftRankParams = SoftRankParams()) -> LossReport:
    """Mean footrule between soft ranks and target ranks over all queries.

    Every batch sample serves as the query exactly once, against the gallery
    of all opposite-modality samples, so both retrieval directions are
    covered. Gradients flow through query and gallery embeddings alike. A
    single-entry gallery is legal and contributes zero (its rank is pinned
    to 1, matching the target).
    """
    emb = batch.embeddings
    mods = batch.modalities
    present = set(np.unique(mods))
    if len(present) < 2:
        raise ValueError(f"cross-modality loss needs both modalities in the batch, got only {sorted(present)}")
    b = batch.size
    grad = np.zeros_like(emb)
    total = 0.0
    for i in range(b):
        gal_idx = np.flatnonzero(mods != mods[i])
        gallery = emb[gal_idx]
        dist = cosine_distance_row(emb[i], gallery)
        ranks, perm, sizes, _ = _soft_rank_core(dist, params)
        rhat = target_ranks(batch.ids[i], batch.ids[gal_idx])
        n = gal_idx.size
        total += float(np.sum(np.abs(ranks - rhat))) / n
        # d footrule / d rank, then back through soft rank and the distances
        up_ranks = np.sign(ranks - rhat) / n
        up_dist = soft_rank_vjp(dist, params, up_ranks)
        g_q, g_gal = cosine_distance_row_grad(emb[i], gallery, up_dist)
        grad[i] += g_q / b
        grad[gal_idx] += g_gal / b
    value = total / b
    return LossReport(total=value, id_component=0.0, cmr_component=value, grad=grad)


def id_loss(
    embeddings: np.ndarray, classifier_weights: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Softmax cross-entropy over identity logits = embeddings @ weights.T.

    Returns (loss, grad wrt embeddings, grad wrt classifier weights), all
    averaged over the batch.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    weights = np.asarray(classifier_weights, dtype=np.float64)
    labels = np.asarray(labels)
    if emb.ndim != 2 or weights.ndim != 2 or emb.shape[1] != weights.shape[1]:
        raise ValueError(
            f"embeddings (B x D) and classifier (C x D) must agree on D, got {emb.shape} and {weights.shape}"
        )
    b, n_classes = emb.shape[0], weights.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"labels must be a length-B vector, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    logits = emb @ weights.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    loss = float(-log_probs[np.arange(b), labels].mean())
    d_logits = np.exp(log_probs)
    d_logits[np.arange(b), labels] -= 1.0
    d_logits /= b
    return loss, d_logits @ weights, d_logits.T @ emb


def total_loss(
    batch: EmbeddingBatch,
    classifier_weights: np.ndarray,
    params: SoftRankParams = SoftRankParams(),
) -> LossReport:
    """Unweighted sum of the identity and retrieval losses.

    Batch ids must already be class indices into the classifier rows.
    """
    id_value, id_grad, classifier_grad = id_loss(batch.embeddings, classifier_weights, batch.ids)
    cmr = cmr_loss(batch, params)
    return LossReport(
        total=id_value + cmr.cmr_component,
        id_component=id_value,
        cmr_component=cmr.cmr_component,
        grad=id_grad + cmr.grad,
        classifier_grad=classifier_grad,
    )
