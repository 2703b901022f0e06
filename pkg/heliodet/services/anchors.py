"""
Anchor priors from the training boxes
K-means clustering of ground-truth (w, h) pairs
"""

from typing import List, Tuple
import logging

import numpy as np
from sklearn.cluster import KMeans

from heliodet.exceptions import ArgumentError
from heliodet.services.dataset import DatasetManifest, load_split

logger = logging.getLogger(__name__)


def cluster_anchors(sizes: np.ndarray, boxes_per_cell: int, seed: int = 0) -> List[Tuple[float, float]]:
    """
    Cluster normalized (w, h) pairs into boxes_per_cell anchors

    Args:
        sizes: (N, 2) array of box widths and heights
        boxes_per_cell: Number of anchors (B)
        seed: KMeans random_state

    Returns:
        B (w, h) anchors sorted by area, each in (0, 1]

    Raises:
        ArgumentError: Fewer distinct boxes than anchors
    """
    sizes = np.asarray(sizes, dtype=np.float64).reshape(-1, 2)
    if len(np.unique(sizes, axis=0)) < boxes_per_cell:
        raise ArgumentError(
            f"need at least {boxes_per_cell} distinct box sizes for {boxes_per_cell} anchors, got {len(sizes)} boxes"
        )

    kmeans = KMeans(n_clusters=boxes_per_cell, n_init=10, random_state=seed)
    kmeans.fit(sizes)
    centers = np.clip(kmeans.cluster_centers_, 1e-6, 1.0)
    order = np.argsort(centers[:, 0] * centers[:, 1], kind="stable")

    anchors = [(round(float(w), 6), round(float(h), 6)) for w, h in centers[order]]
    logger.info(f"Anchors from {len(sizes)} boxes: {anchors}")
    return anchors


def compute_anchors(manifest: DatasetManifest, boxes_per_cell: int, seed: int = 0) -> List[Tuple[float, float]]:
    """Anchors from every upright box of the train split"""
    sizes = [
        (a.bbox.w, a.bbox.h)
        for sample in load_split(manifest, "train")
        for a in sample.annotations
    ]
    return cluster_anchors(np.array(sizes), boxes_per_cell, seed)
