"""Document-level similarity (top-k edge averages) and the three
unsupervised objectives: cross-document, intra-document, and dropout
sub-document, summed into the per-document total.

Document similarity: each row's best column defines one candidate edge and
each column's best row another; the strongest k of each side are averaged
(2k values, duplicates counted twice).  The negative variant scores the
least-likely edges through the identity neg_tk(M) = -tk(-M).

All losses are hinge-based with hard negative mining inside the mini-batch:
the most offending other document supplies the gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .encoder import similarity_matrix
from .errors import BatchError, ConfigError
from .rng import RngStream
from .tensor import Tensor, max_reduce, neg, relu, stack


@dataclass
class ObjectiveConfig:
    alpha: float = 0.2
    p_sub: float = 0.6
    k_override: int | None = None  # None: k = min(rows, cols) per matrix

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not (0.0 < self.p_sub <= 1.0):
            raise ConfigError(f"p_sub must lie in (0, 1], got {self.p_sub}")
        if self.k_override is not None and self.k_override < 1:
            raise ConfigError(f"k_override must be >= 1, got {self.k_override}")


@dataclass
class LossBreakdown:
    """Per-document objective values; tensors stay attached to the graph."""

    l_cross: Tensor
    l_intra: Tensor
    l_sub: Tensor
    total: Tensor
    s_pos: float  # document-level positive similarity of the own matrix
    s_neg: float  # document-level negative similarity of the own matrix


def hinge(m, n, margin: float) -> Tensor:
    """max(0, n - m + margin); zero subgradient on the flat branch."""
    m = m if isinstance(m, Tensor) else Tensor(m)
    n = n if isinstance(n, Tensor) else Tensor(n)
    return relu(n - m + margin)


def resolve_k(shape, config: ObjectiveConfig) -> int:
    rows, cols = shape
    return min(rows, cols) if config.k_override is None else config.k_override


def tk(M: Tensor, k: int) -> Tensor:
    """Mean similarity of the selected edge multiset.

    Selected edges: per-row maxima (strongest min(k, rows) of them) plus
    per-column maxima (strongest min(k, cols)).  Ties break toward the lower
    index; a cell selected by both sides counts twice.  The selection is a
    constant of the backward pass: the gradient puts 1/(number selected) on
    each selection.
    """
    rows, cols = M.shape
    if k < 1 or k > max(rows, cols):
        raise ConfigError(
            f"k={k} invalid for a {rows}x{cols} matrix; need 1 <= k <= {max(rows, cols)}"
        )
    data = M.data
    kr, kc = min(k, rows), min(k, cols)
    weights = np.zeros_like(data)

    row_arg = np.argmax(data, axis=1)
    row_vals = data[np.arange(rows), row_arg]
    for r in np.argsort(-row_vals, kind="stable")[:kr]:
        weights[r, row_arg[r]] += 1.0

    col_arg = np.argmax(data, axis=0)
    col_vals = data[col_arg, np.arange(cols)]
    for c in np.argsort(-col_vals, kind="stable")[:kc]:
        weights[col_arg[c], c] += 1.0

    return (M * Tensor(weights)).sum() * (1.0 / (kr + kc))


def neg_tk(M: Tensor, k: int) -> Tensor:
    """Mean similarity of the least-likely edges: exactly -tk(-M, k)."""
    return neg(tk(neg(M), k))


def _max_over(values: list) -> Tensor:
    if len(values) == 1:
        return values[0]
    return max_reduce(stack(values))


class _PairwiseCache:
    """Similarity matrices and their tk values for every (i, j) document
    pairing of a batch; built once and shared by all three objectives."""

    def __init__(self, batch: list, config: ObjectiveConfig):
        self.config = config
        self.size = len(batch)
        self.matrix = {}
        self.tk_value = {}
        for i, (sent, _) in enumerate(batch):
            for j, (_, img) in enumerate(batch):
                M = similarity_matrix(sent, img)
                self.matrix[i, j] = M
                self.tk_value[i, j] = tk(M, resolve_k(M.shape, config))


def _cross_terms(cache: _PairwiseCache, positive: Tensor, i: int, margin: float) -> Tensor:
    """Hinge vs the hardest negative pairing, both directions."""
    sentence_side = [cache.tk_value[i, j] for j in range(cache.size) if j != i]
    image_side = [cache.tk_value[j, i] for j in range(cache.size) if j != i]
    return hinge(positive, _max_over(sentence_side), margin) + hinge(
        positive, _max_over(image_side), margin
    )


def _require_batch(batch) -> None:
    if len(batch) < 2:
        raise BatchError(f"hard negative mining needs >= 2 documents, got {len(batch)}")


def cross_document_loss(batch: list, config: ObjectiveConfig) -> list:
    """Per-document hinge against the hardest non-co-occurring pairing.

    ``batch`` holds (sentence_reps, image_reps) tensor pairs, one per
    document.
    """
    _require_batch(batch)
    cache = _PairwiseCache(batch, config)
    return [
        _cross_terms(cache, cache.tk_value[i, i], i, config.alpha)
        for i in range(cache.size)
    ]


def intra_document_loss(M: Tensor, config: ObjectiveConfig) -> Tensor:
    """Hinge (margin alpha/2) between the document's own most-likely and
    least-likely edge averages."""
    k = resolve_k(M.shape, config)
    return hinge(tk(M, k), neg_tk(M, k), config.alpha / 2.0)


def _sample_subdocument(count: int, p_sub: float, rng: RngStream) -> np.ndarray:
    keep = int(np.floor(p_sub * count))
    if keep < 1:
        return np.array([], dtype=np.int64)
    return np.sort(rng.choice(count, size=keep, replace=False))


def dropout_subdoc_loss(batch: list, config: ObjectiveConfig, rng: RngStream) -> list:
    """Sub-document positives against full-document negatives (margin
    alpha/2).  Degenerate draws (no sentences or no images kept) contribute
    zero with a warning."""
    _require_batch(batch)
    cache = _PairwiseCache(batch, config)
    return _subdoc_terms(batch, cache, config, rng)


def _subdoc_terms(batch: list, cache: _PairwiseCache, config: ObjectiveConfig, rng: RngStream) -> list:
    losses = []
    for i, (sent, img) in enumerate(batch):
        rows = _sample_subdocument(sent.shape[0], config.p_sub, rng)
        cols = _sample_subdocument(img.shape[0], config.p_sub, rng)
        if rows.size == 0 or cols.size == 0:
            warnings.warn(
                f"document {i} in batch: sub-document degenerate under "
                f"p_sub={config.p_sub}; contributing zero"
            )
            losses.append(Tensor(0.0))
            continue
        sub = cache.matrix[i, i][np.ix_(rows, cols)]
        positive = tk(sub, resolve_k(sub.shape, config))
        losses.append(_cross_terms(cache, positive, i, config.alpha / 2.0))
    return losses


def total_loss(
    batch: list,
    config: ObjectiveConfig,
    rng: RngStream,
    use_cross: bool = True,
    use_intra: bool = True,
    use_sub: bool = True,
):
    """Mean per-document total over the batch plus per-document breakdowns.

    The pairwise similarity matrices and their tk values are computed once
    and shared by the cross-document and sub-document objectives.
    """
    _require_batch(batch)
    cache = _PairwiseCache(batch, config)
    zero = Tensor(0.0)
    sub_losses = _subdoc_terms(batch, cache, config, rng) if use_sub else None

    breakdowns = []
    for i in range(cache.size):
        own = cache.matrix[i, i]
        k = resolve_k(own.shape, config)
        s_pos = cache.tk_value[i, i]
        s_neg = neg_tk(own, k)
        l_cross = _cross_terms(cache, s_pos, i, config.alpha) if use_cross else zero
        l_intra = hinge(s_pos, s_neg, config.alpha / 2.0) if use_intra else zero
        l_sub = sub_losses[i] if use_sub else zero
        total = l_cross + l_intra + l_sub
        breakdowns.append(
            LossBreakdown(
                l_cross=l_cross,
                l_intra=l_intra,
                l_sub=l_sub,
                total=total,
                s_pos=float(s_pos.data),
                s_neg=float(s_neg.data),
            )
        )
    batch_mean = stack([b.total for b in breakdowns]).mean()
    return batch_mean, breakdowns
