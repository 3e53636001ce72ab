"""Desk-scale end-to-end harness for the retrieval losses.

Pieces: a synthetic two-modality dataset generator (identity clusters plus
a shared per-modality offset, the vector-space caricature of a modality
gap), a P x K cross-modality batch sampler, a tiny embedder (linear
projection + batch-norm neck + linear classifier), an adaptive-moment
training loop on the combined identity/retrieval objective, retrieval
evaluation on held-out identities, and a finite-difference gradient-check
suite for every differentiable operation.

Everything is driven by numpy Generators seeded explicitly; two runs with
the same seeds are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imgproc import MaaConfig, apply_maa
from .losses import (
    EmbeddingBatch,
    LossReport,
    MODALITIES,
    cmr_loss,
    cosine_distance_row,
    footrule,
    id_loss,
    target_ranks,
    total_loss,
)
from .metrics import EvalConfig, MetricsReport, RetrievalManifest, evaluate
from .softrank import SoftRankParams, hard_rank, soft_rank, soft_rank_vjp

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
# camera convention for synthetic manifests: one camera per modality
CAMERA_OF = {"vis": 0, "ir": 1}

LOSS_MODES = ("id", "cmr", "id+cmr")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class SyntheticSpec:
    n_identities: int = 32
    samples_per_identity_per_modality: int = 8
    input_dim: int = 16
    cluster_spread: float = 0.5
    modality_offset_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_identities < 1 or self.samples_per_identity_per_modality < 1 or self.input_dim < 1:
            raise ValueError("counts must be >= 1")
        if self.cluster_spread < 0 or self.modality_offset_scale < 0:
            raise ValueError("spread and offset scales must be >= 0")


@dataclass
class SyntheticDataset:
    """Vectors (or flattened images) with identity/modality labels."""

    inputs: np.ndarray
    ids: np.ndarray
    modalities: np.ndarray
    manifest: RetrievalManifest
    images: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def _make_manifest(ids, modalities) -> RetrievalManifest:
    counter: dict[tuple[int, str], int] = {}
    keys = []
    for pid, m in zip(ids, modalities):
        j = counter.get((pid, m), 0)
        counter[(pid, m)] = j + 1
        keys.append(f"{m}{pid:03d}_{j}")
    cams = [CAMERA_OF[m] for m in modalities]
    return RetrievalManifest.from_arrays(keys, ids, cams, modalities)


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> SyntheticDataset:
    """Identity clusters separated by a shared per-modality offset.

    Each identity gets a unit-scale latent center; each modality a single
    offset vector of exact length modality_offset_scale added to all its
    samples; per-sample noise has RMS length cluster_spread. Row order is
    identity-major, then modality, then sample index.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    d = spec.input_dim
    sqrt_d = math.sqrt(d)
    centers = rng.standard_normal((spec.n_identities, d)) / sqrt_d
    offsets = {}
    for m in MODALITIES:
        v = rng.standard_normal(d)
        norm = np.linalg.norm(v)
        offsets[m] = spec.modality_offset_scale * v / norm if norm > 0 else np.zeros(d)
    rows, ids, mods = [], [], []
    for pid in range(spec.n_identities):
        for m in MODALITIES:
            for _ in range(spec.samples_per_identity_per_modality):
                noise = spec.cluster_spread * rng.standard_normal(d) / sqrt_d
                rows.append(centers[pid] + offsets[m] + noise)
                ids.append(pid)
                mods.append(m)
    inputs = np.array(rows, dtype=np.float64)
    ids_arr = np.array(ids, dtype=np.int64)
    mods_arr = np.array(mods)
    return SyntheticDataset(inputs, ids_arr, mods_arr, _make_manifest(ids_arr, mods_arr))


def generate_synthetic_images(
    spec: SyntheticSpec, rng: np.random.Generator | None = None, side: int = 8
) -> SyntheticDataset:
    """Image-mode variant: tiny color-coded identity patterns.

    Each identity has a fixed 3 x side x side color template; visible
    samples are noisy copies, infrared samples collapse the channels to a
    luminance plane first (the modality gap here is the gray collapse, so
    modality_offset_scale is ignored). inputs holds the flattened pixels.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    noise_scale = 0.1 * spec.cluster_spread
    templates = rng.uniform(0.15, 0.85, size=(spec.n_identities, 3, side, side))
    lum = np.array([0.299, 0.587, 0.114])
    images, ids, mods = [], [], []
    for pid in range(spec.n_identities):
        for m in MODALITIES:
            for _ in range(spec.samples_per_identity_per_modality):
                img = templates[pid] + noise_scale * rng.standard_normal((3, side, side))
                img = np.clip(img, 0.0, 1.0)
                if m == "ir":
                    img = np.broadcast_to(np.tensordot(lum, img, axes=1), img.shape).copy()
                images.append(img)
                ids.append(pid)
                mods.append(m)
    images_arr = np.array(images, dtype=np.float64)
    ids_arr = np.array(ids, dtype=np.int64)
    mods_arr = np.array(mods)
    return SyntheticDataset(
        inputs=images_arr.reshape(len(images), -1),
        ids=ids_arr,
        modalities=mods_arr,
        manifest=_make_manifest(ids_arr, mods_arr),
        images=images_arr,
    )


def pk_sample(
    dataset: SyntheticDataset,
    p: int,
    k: int,
    rng: np.random.Generator,
    id_pool: np.ndarray | None = None,
) -> np.ndarray:
    """Batch indices: p identities, k samples each, split k/2 per modality.

    Identities are drawn uniformly without replacement from id_pool (all
    dataset identities by default), samples uniformly without replacement
    within each (identity, modality) group.
    """
    if k < 2 or k % 2 != 0:
        raise ValueError(f"k must be even and >= 2, got {k}")
    pool = np.unique(dataset.ids) if id_pool is None else np.asarray(id_pool)
    if p < 1 or p > pool.size:
        raise ValueError(f"p must be in [1, {pool.size}], got {p}")
    half = k // 2
    chosen = rng.choice(pool, size=p, replace=False)
    batch: list[int] = []
    for pid in chosen:
        for m in MODALITIES:
            members = np.flatnonzero((dataset.ids == pid) & (dataset.modalities == m))
            if members.size < half:
                raise ValueError(
                    f"identity {pid} has only {members.size} {m} samples, need {half}"
                )
            picked = rng.choice(members, size=half, replace=False)
            batch.extend(int(i) for i in picked)
    return np.array(batch, dtype=np.int64)


@dataclass
class TinyModel:
    """Linear projection + batch-norm neck + linear identity classifier.

    The post-BN embedding is both classified and retrieved, so both losses
    constrain the same representation.
    """

    projection: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    classifier: np.ndarray

    def __post_init__(self):
        if np.any(self.bn_running_var <= 0):
            raise ValueError("bn_running_var entries must be positive")

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[0]

    def copy(self) -> "TinyModel":
        return TinyModel(*(np.array(getattr(self, f)) for f in (
            "projection", "bn_scale", "bn_shift", "bn_running_mean", "bn_running_var", "classifier")))


def init_model(rng: np.random.Generator, d_in: int, d_out: int, n_classes: int) -> TinyModel:
    return TinyModel(
        projection=rng.standard_normal((d_out, d_in)) / math.sqrt(d_in),
        bn_scale=np.ones(d_out),
        bn_shift=np.zeros(d_out),
        bn_running_mean=np.zeros(d_out),
        bn_running_var=np.ones(d_out),
        classifier=rng.standard_normal((n_classes, d_out)) / math.sqrt(d_out),
    )


def split_identities(dataset: SyntheticDataset) -> tuple[np.ndarray, np.ndarray]:
    """Identity-disjoint split: last 25% of identities held out for evaluation."""
    ids = np.unique(dataset.ids)
    n_held = max(1, ids.size // 4)
    if n_held >= ids.size:
        raise ValueError(f"need at least 2 identities to split, got {ids.size}")
    return ids[:-n_held], ids[-n_held:]


def new_model(dataset: SyntheticDataset, embed_dim: int | None = None, seed: int = 0) -> TinyModel:
    """Model sized for the dataset's training split (classifier over train identities)."""
    train_ids, _ = split_identities(dataset)
    d_in = dataset.inputs.shape[1]
    return init_model(np.random.default_rng(seed), d_in, embed_dim or d_in, train_ids.size)


def _forward_parts(model: TinyModel, x: np.ndarray, mode: str):
    if x.ndim != 2 or x.shape[1] != model.projection.shape[1]:
        raise ValueError(
            f"inputs must be B x {model.projection.shape[1]}, got shape {x.shape}"
        )
    h = x @ model.projection.T
    if mode == "train":
        mu = h.mean(axis=0)
        var = h.var(axis=0)  # biased batch variance, matching the backward pass
        model.bn_running_mean = (1.0 - BN_MOMENTUM) * model.bn_running_mean + BN_MOMENTUM * mu
        model.bn_running_var = (1.0 - BN_MOMENTUM) * model.bn_running_var + BN_MOMENTUM * var
    elif mode == "eval":
        mu = model.bn_running_mean
        var = model.bn_running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    xhat = (h - mu) / np.sqrt(var + BN_EPS)
    e = model.bn_scale * xhat + model.bn_shift
    logits = e @ model.classifier.T
    return h, mu, var, xhat, e, logits


def forward(model: TinyModel, inputs: np.ndarray, mode: str = "eval"):
    """Returns (pre-BN, post-BN, logits); train mode also updates running stats."""
    x = np.asarray(inputs, dtype=np.float64)
    h, _, _, _, e, logits = _forward_parts(model, x, mode)
    return h, e, logits


def _bn_backward(de, h, mu, var, xhat, bn_scale):
    b = h.shape[0]
    inv = 1.0 / np.sqrt(var + BN_EPS)
    dgamma = np.sum(de * xhat, axis=0)
    dbeta = np.sum(de, axis=0)
    dxhat = de * bn_scale
    centered = h - mu
    dvar = np.sum(dxhat * centered, axis=0) * (-0.5) * inv**3
    dmu = -inv * np.sum(dxhat, axis=0) - 2.0 * dvar * centered.mean(axis=0)
    dh = dxhat * inv + (2.0 / b) * dvar * centered + dmu / b
    return dh, dgamma, dbeta


def embed_dataset(model: TinyModel, dataset: SyntheticDataset) -> np.ndarray:
    """Eval-mode post-BN embeddings for every sample (batch-independent)."""
    _, e, _ = forward(model, dataset.inputs, mode="eval")
    return e


@dataclass(frozen=True)
class TrainConfig:
    p: int = 8
    k: int = 8
    epochs: int = 30
    steps_per_epoch: int = 20
    learning_rate: float = 3.5e-4
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    softrank: SoftRankParams = field(default_factory=SoftRankParams)
    loss_mode: str = "id+cmr"
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if self.k < 2 or self.k % 2 != 0:
            raise ValueError(f"k must be even and >= 2, got {self.k}")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")


@dataclass
class StepRecord:
    epoch: int
    step: int
    total: float
    id_component: float
    cmr_component: float


@dataclass
class TrainLog:
    steps: list[StepRecord]
    train_ids: np.ndarray
    heldout_ids: np.ndarray

    def epoch_mean_total(self, epoch: int) -> float:
        vals = [s.total for s in self.steps if s.epoch == epoch]
        return float(np.mean(vals))


class _Adam:
    """Adaptive-moment optimizer over named model parameters.

    Weight decay is classic L2 added to the gradients of the projection and
    classifier; the BN scale/shift are left undecayed.
    """

    DECAYED = ("projection", "classifier")

    def __init__(self, model: TinyModel, names: tuple[str, ...], cfg: TrainConfig):
        self.names = names
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(getattr(model, n)) for n in names}
        self.v = {n: np.zeros_like(getattr(model, n)) for n in names}

    def step(self, model: TinyModel, grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.adam_beta1**self.t
        bc2 = 1.0 - cfg.adam_beta2**self.t
        for n in self.names:
            g = grads[n]
            if cfg.weight_decay and n in self.DECAYED:
                g = g + cfg.weight_decay * getattr(model, n)
            self.m[n] = cfg.adam_beta1 * self.m[n] + (1.0 - cfg.adam_beta1) * g
            self.v[n] = cfg.adam_beta2 * self.v[n] + (1.0 - cfg.adam_beta2) * g * g
            update = (self.m[n] / bc1) / (np.sqrt(self.v[n] / bc2) + cfg.adam_eps)
            getattr(model, n)[...] -= cfg.learning_rate * update


def _batch_loss(e, labels, mods, classifier, cfg: TrainConfig) -> LossReport:
    if cfg.loss_mode == "id":
        value, grad_e, grad_c = id_loss(e, classifier, labels)
        return LossReport(total=value, id_component=value, cmr_component=0.0,
                          grad=grad_e, classifier_grad=grad_c)
    batch = EmbeddingBatch(e, labels, mods)
    if cfg.loss_mode == "cmr":
        report = cmr_loss(batch, cfg.softrank)
        report.classifier_grad = np.zeros_like(classifier)
        return report
    return total_loss(batch, classifier, cfg.softrank)


def train(dataset: SyntheticDataset, model: TinyModel, cfg: TrainConfig = TrainConfig()) -> TrainLog:
    """Optimize the model in place on the dataset's training identities.

    Each step draws a fresh P x K cross-modality batch, runs the train-mode
    forward pass, backpropagates the selected loss through the BN neck and
    projection, and applies one adaptive-moment update. Aborts with
    DivergenceError on a non-finite loss.
    """
    rng = np.random.default_rng(cfg.seed)
    train_ids, heldout_ids = split_identities(dataset)
    if model.classifier.shape[0] != train_ids.size:
        raise ValueError(
            f"classifier has {model.classifier.shape[0]} rows but the training split has"
            f" {train_ids.size} identities (build the model with new_model)"
        )
    label_of = {int(pid): i for i, pid in enumerate(train_ids)}
    opt = _Adam(model, ("projection", "bn_scale", "bn_shift", "classifier"), cfg)
    maa_cfg = MaaConfig()
    records: list[StepRecord] = []
    for epoch in range(cfg.epochs):
        for step in range(cfg.steps_per_epoch):
            idx = pk_sample(dataset, cfg.p, cfg.k, rng, id_pool=train_ids)
            if cfg.augment:
                if dataset.images is None:
                    raise ValueError("augment=True requires an image-mode dataset")
                imgs = [
                    apply_maa(dataset.images[i], rng, maa_cfg)
                    if dataset.modalities[i] == "vis" else dataset.images[i]
                    for i in idx
                ]
                x = np.stack([im.reshape(-1) for im in imgs])
            else:
                x = dataset.inputs[idx]
            labels = np.array([label_of[int(pid)] for pid in dataset.ids[idx]])
            h, mu, var, xhat, e, _ = _forward_parts(model, x, mode="train")
            if not np.all(np.isfinite(e)):
                raise DivergenceError(
                    f"non-finite embeddings at epoch {epoch} step {step}"
                )
            report = _batch_loss(e, labels, dataset.modalities[idx], model.classifier, cfg)
            if not math.isfinite(report.total):
                raise DivergenceError(
                    f"non-finite loss {report.total} at epoch {epoch} step {step}"
                )
            dh, dgamma, dbeta = _bn_backward(report.grad, h, mu, var, xhat, model.bn_scale)
            grads = {
                "projection": dh.T @ x,
                "bn_scale": dgamma,
                "bn_shift": dbeta,
                "classifier": report.classifier_grad,
            }
            opt.step(model, grads)
            records.append(StepRecord(epoch, step, report.total,
                                      report.id_component, report.cmr_component))
    return TrainLog(steps=records, train_ids=train_ids, heldout_ids=heldout_ids)


def evaluate_heldout(
    dataset: SyntheticDataset,
    embeddings: np.ndarray,
    heldout_ids: np.ndarray,
    cfg: EvalConfig = EvalConfig(),
) -> MetricsReport:
    """Cross-modality retrieval on held-out identities: infrared queries, visible gallery."""
    held = np.isin(dataset.ids, heldout_ids)
    q_idx = np.flatnonzero(held & (dataset.modalities == "ir"))
    g_idx = np.flatnonzero(held & (dataset.modalities == "vis"))
    if q_idx.size == 0 or g_idx.size == 0:
        raise ValueError("held-out split must contain both modalities")
    return evaluate(
        embeddings[q_idx],
        dataset.manifest.subset(q_idx),
        embeddings[g_idx],
        dataset.manifest.subset(g_idx),
        cfg,
    )


def mean_heldout_footrule(
    dataset: SyntheticDataset, embeddings: np.ndarray, heldout_ids: np.ndarray
) -> float:
    """Mean footrule between hard ranks and target ranks over held-out queries.

    Uses hard ranks (the zero-temperature limit), so the number measures
    pure retrieval ordering independent of the softening parameters. Every
    held-out sample queries the opposite modality, mirroring the loss.
    """
    held_idx = np.flatnonzero(np.isin(dataset.ids, heldout_ids))
    total = 0.0
    for i in held_idx:
        gal = held_idx[dataset.modalities[held_idx] != dataset.modalities[i]]
        dist = cosine_distance_row(embeddings[i], embeddings[gal])
        total += footrule(hard_rank(dist), target_ranks(dataset.ids[i], dataset.ids[gal]))
    return total / held_idx.size


@dataclass
class GradCheckResult:
    name: str
    n_cases: int
    max_error: float
    tolerance: float
    passed: bool


def _fd_grad(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = f(x)
        xf[i] = orig - h
        down = f(x)
        xf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return g


def gradcheck_suite(seed: int = 0, n_cases: int = 100) -> list[GradCheckResult]:
    """Finite-difference validation of every analytic gradient.

    Tolerances: soft-rank VJP 1e-5 absolute; retrieval loss 1e-4 relative
    (infinity norms); identity loss 1e-6 absolute.
    """
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.integers(2, 13))
        params = SoftRankParams(epsilon=float(rng.uniform(0.3, 3.0)))
        theta = rng.standard_normal(n)
        upstream = rng.standard_normal(n)
        analytic = soft_rank_vjp(theta, params, upstream)
        fd = _fd_grad(lambda t: float(upstream @ soft_rank(t, params)), theta.copy(), h=1e-7)
        worst = max(worst, float(np.max(np.abs(analytic - fd))))
    results.append(GradCheckResult("soft_rank_vjp", n_cases, worst, 1e-5, worst < 1e-5))

    worst = 0.0
    for _ in range(n_cases):
        b, d = 8, 4
        emb = rng.standard_normal((b, d))
        ids = rng.integers(0, 3, size=b)
        mods = np.array(["vis", "ir"] * (b // 2))
        analytic = cmr_loss(EmbeddingBatch(emb, ids, mods)).grad
        fd = _fd_grad(
            lambda e: cmr_loss(EmbeddingBatch(e, ids, mods)).total, emb.copy(), h=1e-6
        )
        rel = float(np.max(np.abs(analytic - fd)) / max(np.max(np.abs(fd)), 1e-12))
        worst = max(worst, rel)
    results.append(GradCheckResult("cmr_loss", n_cases, worst, 1e-4, worst < 1e-4))

    worst = 0.0
    for _ in range(n_cases):
        b, d, c = 8, 4, 5
        emb = rng.standard_normal((b, d))
        weights = rng.standard_normal((c, d))
        labels = rng.integers(0, c, size=b)
        _, g_emb, g_w = id_loss(emb, weights, labels)
        fd_emb = _fd_grad(lambda e: id_loss(e, weights, labels)[0], emb.copy(), h=1e-6)
        fd_w = _fd_grad(lambda w: id_loss(emb, w, labels)[0], weights.copy(), h=1e-6)
        worst = max(
            worst,
            float(np.max(np.abs(g_emb - fd_emb))),
            float(np.max(np.abs(g_w - fd_w))),
        )
    results.append(GradCheckResult("id_loss", n_cases, worst, 1e-6, worst < 1e-6))
    return results
