"""Zero-shot evaluation on precomputed embeddings.

Cross-modal retrieval reports Recall@K in both directions plus their
Recall@1 average, supporting many captions per image: an image-to-text
query hits if any of its captions lands in the top K, a text-to-image
query has exactly one valid image. Prototype classification predicts
the nearest class prototype by cosine. All rankings break ties toward
the lower index, so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import as_embedding, cosine_affinity
from .errors import DataError, ParameterError


@dataclass(frozen=True)
class RecallReport:
    """Recall@K per direction (percent) and the Recall@1 average."""

    t2i_at: dict[int, float]
    i2t_at: dict[int, float]
    mean_r1: float


def _ranks_of_targets(scores: np.ndarray, target_lists: list[list[int]]) -> np.ndarray:
    """Best (lowest) rank of any valid target per query row; stable sort
    breaks score ties toward the lower index."""
    n_queries, n_items = scores.shape
    best = np.empty(n_queries, dtype=np.int64)
    for q in range(n_queries):
        order = np.argsort(-scores[q], kind="stable")
        rank_of = np.empty(n_items, dtype=np.int64)
        rank_of[order] = np.arange(n_items)
        best[q] = min(rank_of[t] for t in target_lists[q])
    return best


def retrieval_recall(Z_img, Z_txt, gt: dict[int, list[int]] | None = None, ks=(1, 5, 10)) -> RecallReport:
    """Recall@K for image-to-text and text-to-image retrieval.

    `gt` maps each image row to its valid text rows; None means the
    identity mapping (row i of each side corresponds). K = 1 is always
    evaluated so the Recall@1 average is defined.
    """
    Z_img, Z_txt = as_embedding(Z_img), as_embedding(Z_txt)
    if gt is None:
        if Z_img.n != Z_txt.n:
            raise ParameterError("identity ground truth needs equal image/text counts")
        gt = {i: [i] for i in range(Z_img.n)}
    if len(gt) == 0:
        raise DataError("retrieval_recall: empty ground truth")
    text_to_image: dict[int, int] = {}
    for img, texts in gt.items():
        if len(texts) == 0:
            raise DataError(f"retrieval_recall: image {img} has no valid text")
        for t in texts:
            if not 0 <= t < Z_txt.n:
                raise DataError(f"retrieval_recall: text index {t} out of range")
            if t in text_to_image:
                raise DataError(f"retrieval_recall: text {t} assigned to two images")
            text_to_image[t] = img
        if not 0 <= img < Z_img.n:
            raise DataError(f"retrieval_recall: image index {img} out of range")
    ks = sorted(set(int(k) for k in ks) | {1})
    sims = cosine_affinity(Z_img, Z_txt).values

    images = sorted(gt)
    i2t_best = _ranks_of_targets(sims[images, :], [gt[i] for i in images])
    texts = sorted(text_to_image)
    t2i_best = _ranks_of_targets(sims.T[texts, :], [[text_to_image[t]] for t in texts])

    i2t_at = {k: float(100.0 * np.mean(i2t_best < k)) for k in ks}
    t2i_at = {k: float(100.0 * np.mean(t2i_best < k)) for k in ks}
    return RecallReport(t2i_at, i2t_at, (t2i_at[1] + i2t_at[1]) / 2.0)


def zero_shot_classify(Z_img, class_prototypes, labels) -> float:
    """Top-1 accuracy (percent) of nearest-prototype classification.

    Ties between prototypes resolve to the lower class index.
    """
    Z_img = as_embedding(Z_img)
    prototypes = as_embedding(class_prototypes)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (Z_img.n,):
        raise ParameterError(f"labels must have shape ({Z_img.n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= prototypes.n):
        raise DataError(f"labels must lie in [0, {prototypes.n}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    sims = cosine_affinity(Z_img, prototypes).values
    predictions = sims.argmax(axis=1)
    return float(100.0 * np.mean(predictions == labels))


def write_recall_csv(report: RecallReport, path) -> None:
    """CSV rows (direction, k, recall) plus the mean_r1 summary row."""
    lines = ["direction,k,recall_percent"]
    for k in sorted(report.t2i_at):
        lines.append(f"t2i,{k},{report.t2i_at[k]!r}")
    for k in sorted(report.i2t_at):
        lines.append(f"i2t,{k},{report.i2t_at[k]!r}")
    lines.append(f"mean_r1,,{report.mean_r1!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def format_recall_table(report: RecallReport) -> str:
    """Fixed-width table for terminal output."""
    ks = sorted(report.t2i_at)
    rows = [
        "K     " + "".join(f"{k:>10d}" for k in ks),
        "T2I   " + "".join(f"{report.t2i_at[k]:>10.2f}" for k in ks),
        "I2T   " + "".join(f"{report.i2t_at[k]:>10.2f}" for k in ks),
        f"MeanR@1 {report.mean_r1:.2f}",
    ]
    return "\n".join(rows)
