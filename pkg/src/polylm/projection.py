"""2-D PCA view of one or more embedding spaces."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .align import AlignError, EmbeddingSpace
from .corpus import UNK


def pca_2d(points: np.ndarray) -> np.ndarray:
    """Project mean-centred rows onto the top two principal axes.

    Each axis is oriented so its largest-magnitude loading is positive.
    Data of rank < 2 yields zeros in the missing coordinate.
    """
    x = np.asarray(points, dtype=np.float64)
    x = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    out = np.zeros((len(x), 2))
    tol = s[0] * max(x.shape) * np.finfo(float).eps if s.size else 0.0
    for j in range(min(2, len(s))):
        if s[j] <= tol:
            break
        axis = vt[j]
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
        out[:, j] = x @ axis
    return out


def project(spaces: Sequence[EmbeddingSpace], n_points: int = 1000) -> list[tuple[str, str, float, float]]:
    """Pool the first ``n_points`` words of each space and PCA them jointly.

    Rows are assumed to be in frequency order, as exported.  UNK is skipped.
    """
    if not spaces:
        raise AlignError("project needs at least one embedding space")
    labels: list[tuple[str, str]] = []
    rows = []
    for sp in spaces:
        keep = [i for i, t in enumerate(sp.tokens) if t != UNK][:n_points]
        labels += [(sp.lang, sp.tokens[i]) for i in keep]
        rows.append(np.asarray(sp.matrix, dtype=np.float64)[keep])
    if len(labels) < 2:
        raise AlignError(f"need at least 2 points to project, got {len(labels)}")
    dims = {r.shape[1] for r in rows}
    if len(dims) != 1:
        raise AlignError(f"spaces have different dimensions: {sorted(dims)}")
    coords = pca_2d(np.concatenate(rows, axis=0))
    return [(lang, tok, float(x), float(y)) for (lang, tok), (x, y) in zip(labels, coords)]
