"""Multi-channel label propagation over meta-path adjacencies."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import diffnum as dn
from .hin import MetaPathAdjacency


def init_labels(num_nodes: int, labeled, labels, num_classes: int) -> np.ndarray:
    """One-hot rows for labeled nodes, uniform rows everywhere else."""
    labeled = np.asarray(labeled, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)[labeled]
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes}) among labeled nodes")
    out = np.full((num_nodes, num_classes), 1.0 / num_classes)
    out[labeled] = 0.0
    out[labeled, y] = 1.0
    return out


def propagation_weights(logits: dn.Tensor, adj: MetaPathAdjacency) -> dn.Tensor:
    """Softmax of the intensity logits over each node's neighbor set."""
    return dn.segment_softmax(logits, adj.indptr)


def propagate(l0: np.ndarray, weights: dn.Tensor, adj: MetaPathAdjacency, k: int,
              labeled_mask) -> list[dn.Tensor]:
    """Run ``k`` propagation layers; returns ``[l^1, ..., l^k]``.

    Labeled rows stay at their one-hot start at every layer and nodes with no
    neighbors keep their current row.
    """
    if k < 1:
        raise ValueError("propagation needs at least one layer")
    update = ~np.asarray(labeled_mask, dtype=bool) & (adj.degrees() > 0)
    start = dn.Tensor(l0)
    layers = []
    current = start
    for _ in range(k):
        mixed = dn.segment_weighted_sum(weights, current, adj.indptr, adj.indices)
        current = dn.where_rows(update, mixed, start)
        layers.append(current)
    return layers


def combine_channels(channel_logits: dn.Tensor, outputs: Sequence[dn.Tensor]) -> dn.Tensor:
    if channel_logits.shape[1] != len(outputs):
        raise ValueError(
            f"{len(outputs)} channel outputs for {channel_logits.shape[1]} channel weights"
        )
    if len(outputs) == 1:
        return outputs[0]
    alpha = dn.row_softmax(channel_logits)
    return dn.convex_combine(alpha, outputs)


class GlobalModule:
    """Parameters and forward pass of the label-propagation module."""

    def __init__(self, adjs: Sequence[MetaPathAdjacency], k: int, params: dn.ParamStore,
                 prefix: str = "global"):
        self.adjs = list(adjs)
        self.k = k
        self.prefix = prefix
        n = self.adjs[0].n
        self.intensity = [params.add(f"{prefix}.s.{a.name}", np.zeros(a.num_edges)) for a in self.adjs]
        self.channel = params.add(f"{prefix}.a", np.zeros((n, len(self.adjs))))

    def gate_names(self) -> list[str]:
        return [self.channel.name]

    def alpha(self) -> np.ndarray:
        return dn.row_softmax(dn.Tensor(self.channel.value)).value

    def forward(self, l0: np.ndarray, labeled_mask) -> tuple[dn.Tensor, list[dn.Tensor]]:
        finals = []
        for s, adj in zip(self.intensity, self.adjs):
            w = propagation_weights(s, adj)
            finals.append(propagate(l0, w, adj, self.k, labeled_mask)[-1])
        return combine_channels(self.channel, finals), finals
