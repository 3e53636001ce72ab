"""Retrieval evaluation protocol: CMC at rank k, mAP, and mINP.

Queries and galleries come from opposite modalities. Per query the gallery
is sorted by ascending halved cosine distance with ties broken by gallery
index, entries sharing both identity and camera with the query are masked
out (the standard re-id exclusion, switchable for synthetic data), and the
three metrics are computed from the ranked positive flags:

    first hit   rank of the earliest positive among valid entries
    AP          mean over positives of (positives at or above rank) / rank
    INP         (number of positives) / (rank of the last positive)

Queries with no valid positive are skipped and tallied, never errors.
Gallery sub-sampling for the single-shot / multi-shot protocol keeps at
most `shot` images per (identity, camera) pair; protocol runs average the
reports over repeated samplings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .losses import MODALITIES, cosine_distance_row

CMC_KS = (1, 10, 20)


@dataclass(frozen=True)
class ManifestRecord:
    key: str
    person_id: int
    camera_id: int
    modality: str


@dataclass(frozen=True)
class RetrievalManifest:
    """Per-sample retrieval labels; row order matches the embedding matrix."""

    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for i, rec in enumerate(self.records):
            if rec.key in seen:
                raise ValueError(f"record {i}: duplicate key {rec.key!r}")
            seen.add(rec.key)
            if rec.person_id < 0 or rec.camera_id < 0:
                raise ValueError(f"record {i}: person_id and camera_id must be nonnegative")
            if rec.modality not in MODALITIES:
                raise ValueError(f"record {i}: modality must be one of {MODALITIES}, got {rec.modality!r}")

    @classmethod
    def from_arrays(cls, keys, person_ids, camera_ids, modalities) -> "RetrievalManifest":
        rows = zip(keys, person_ids, camera_ids, modalities, strict=True)
        return cls(tuple(ManifestRecord(str(k), int(p), int(c), str(m)) for k, p, c, m in rows))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def keys(self) -> list[str]:
        return [r.key for r in self.records]

    @property
    def person_ids(self) -> np.ndarray:
        return np.array([r.person_id for r in self.records], dtype=np.int64)

    @property
    def camera_ids(self) -> np.ndarray:
        return np.array([r.camera_id for r in self.records], dtype=np.int64)

    @property
    def modalities(self) -> np.ndarray:
        return np.array([r.modality for r in self.records])

    def subset(self, indices) -> "RetrievalManifest":
        return RetrievalManifest(tuple(self.records[int(i)] for i in indices))


@dataclass(frozen=True)
class EvalConfig:
    cmc_ks: tuple[int, ...] = CMC_KS
    # standard protocol masks gallery entries sharing both identity and
    # camera with the query; synthetic fixtures may want it off
    camera_filter: bool = True

    def __post_init__(self):
        if not self.cmc_ks or any(k < 1 for k in self.cmc_ks):
            raise ValueError(f"cmc_ks must be positive ranks, got {self.cmc_ks}")


@dataclass
class MetricsReport:
    cmc: dict[int, float]
    map_score: float
    minp: float
    n_queries: int
    n_skipped: int = 0

    def as_flat_dict(self) -> dict[str, float]:
        out = {f"cmc{k}": v for k, v in sorted(self.cmc.items())}
        out.update(
            map=self.map_score,
            minp=self.minp,
            n_queries=self.n_queries,
            n_skipped=self.n_skipped,
        )
        return out


class QueryMetrics(NamedTuple):
    first_hit_rank: int
    average_precision: float
    inp: float


def rank_gallery(query_embedding: np.ndarray, gallery_embeddings: np.ndarray) -> np.ndarray:
    """Gallery indices sorted by ascending cosine distance, ties by index."""
    dist = cosine_distance_row(query_embedding, gallery_embeddings)
    return np.argsort(dist, kind="stable")


def query_metrics(positive_flags, valid_mask=None) -> QueryMetrics | None:
    """Metrics for one query given gallery flags in ranked order.

    Invalid entries are dropped before ranks are counted, so rank r means
    "r-th valid gallery entry". Returns None when no valid positive exists;
    the caller tallies such skipped queries.
    """
    flags = np.asarray(positive_flags, dtype=bool)
    if flags.ndim != 1:
        raise ValueError(f"positive flags must be a vector, got shape {flags.shape}")
    if valid_mask is not None:
        valid = np.asarray(valid_mask, dtype=bool)
        if valid.shape != flags.shape:
            raise ValueError(f"valid mask shape {valid.shape} does not match flags {flags.shape}")
        flags = flags[valid]
    if flags.size == 0 or not flags.any():
        return None
    ranks = np.flatnonzero(flags) + 1
    n_pos = ranks.size
    ap = float(np.mean(np.arange(1, n_pos + 1) / ranks))
    inp = float(n_pos / ranks[-1])
    return QueryMetrics(first_hit_rank=int(ranks[0]), average_precision=ap, inp=inp)


def evaluate(
    query_embeddings: np.ndarray,
    query_manifest: RetrievalManifest,
    gallery_embeddings: np.ndarray,
    gallery_manifest: RetrievalManifest,
    cfg: EvalConfig = EvalConfig(),
) -> MetricsReport:
    """Full cross-modality retrieval evaluation.

    Aggregates query_metrics over every query against the whole gallery;
    CMC at k is the fraction of evaluated queries whose first hit lands at
    rank ≤ k. Fixed-order accumulation keeps results reproducible.
    """
    qe = np.asarray(query_embeddings, dtype=np.float64)
    ge = np.asarray(gallery_embeddings, dtype=np.float64)
    if qe.ndim != 2 or ge.ndim != 2 or qe.shape[1] != ge.shape[1]:
        raise ValueError(f"embedding matrices must agree on dimension, got {qe.shape} and {ge.shape}")
    if qe.shape[0] != len(query_manifest) or ge.shape[0] != len(gallery_manifest):
        raise ValueError("manifest length must match embedding row count")
    shared = set(np.unique(query_manifest.modalities)) & set(np.unique(gallery_manifest.modalities))
    if shared:
        raise ValueError(f"query and gallery must come from opposite modalities, both contain {sorted(shared)}")

    g_ids = gallery_manifest.person_ids
    g_cams = gallery_manifest.camera_ids
    q_ids = query_manifest.person_ids
    q_cams = query_manifest.camera_ids

    first_hits: list[int] = []
    ap_sum = 0.0
    inp_sum = 0.0
    n_skipped = 0
    for i in range(qe.shape[0]):
        order = rank_gallery(qe[i], ge)
        positives = g_ids[order] == q_ids[i]
        valid = None
        if cfg.camera_filter:
            valid = ~((g_ids[order] == q_ids[i]) & (g_cams[order] == q_cams[i]))
        qm = query_metrics(positives, valid)
        if qm is None:
            n_skipped += 1
            continue
        first_hits.append(qm.first_hit_rank)
        ap_sum += qm.average_precision
        inp_sum += qm.inp
    n_eval = len(first_hits)
    if n_eval == 0:
        raise ValueError("every query was skipped (no valid positives); metrics undefined")
    hits = np.array(first_hits)
    cmc = {k: float(np.mean(hits <= k)) for k in cfg.cmc_ks}
    return MetricsReport(
        cmc=cmc,
        map_score=ap_sum / n_eval,
        minp=inp_sum / n_eval,
        n_queries=n_eval,
        n_skipped=n_skipped,
    )


def sample_gallery_shot(
    manifest: RetrievalManifest, shot: int, rng: np.random.Generator
) -> tuple[RetrievalManifest, np.ndarray]:
    """Sub-sample the gallery to at most `shot` images per (identity, camera).

    Groups with fewer images than requested keep all of them. Returns the
    sub-manifest together with the selected row indices (ascending, so the
    caller can slice the embedding matrix and index-based tie-breaking
    stays aligned with the original order).
    """
    if shot < 1:
        raise ValueError(f"shot must be >= 1, got {shot}")
    groups: dict[tuple[int, int], list[int]] = {}
    for i, rec in enumerate(manifest.records):
        groups.setdefault((rec.person_id, rec.camera_id), []).append(i)
    chosen: list[int] = []
    for key in sorted(groups):
        members = groups[key]
        take = min(shot, len(members))
        picked = rng.choice(len(members), size=take, replace=False)
        chosen.extend(members[j] for j in picked)
    indices = np.array(sorted(chosen), dtype=np.int64)
    return manifest.subset(indices), indices


def evaluate_repeated(
    query_embeddings: np.ndarray,
    query_manifest: RetrievalManifest,
    gallery_embeddings: np.ndarray,
    gallery_manifest: RetrievalManifest,
    shot: int,
    repeats: int,
    rng: np.random.Generator,
    cfg: EvalConfig = EvalConfig(),
) -> tuple[MetricsReport, list[MetricsReport]]:
    """Protocol runner: `repeats` gallery samplings, mean-of-runs report.

    The returned mean report averages every metric across runs; query
    counts are averaged and rounded (they can differ between runs only
    through skipped queries).
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    ge = np.asarray(gallery_embeddings, dtype=np.float64)
    runs: list[MetricsReport] = []
    for _ in range(repeats):
        sub_manifest, idx = sample_gallery_shot(gallery_manifest, shot, rng)
        runs.append(evaluate(query_embeddings, query_manifest, ge[idx], sub_manifest, cfg))
    cmc = {k: float(np.mean([r.cmc[k] for r in runs])) for k in cfg.cmc_ks}
    mean = MetricsReport(
        cmc=cmc,
        map_score=float(np.mean([r.map_score for r in runs])),
        minp=float(np.mean([r.minp for r in runs])),
        n_queries=int(round(np.mean([r.n_queries for r in runs]))),
        n_skipped=int(round(np.mean([r.n_skipped for r in runs]))),
    )
    return mean, runs
