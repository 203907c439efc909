"""Schema-aware local prediction: type-specific projection, label projection
and averaging over each target node's schema-instance members."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .hin import SchemaNeighborhood


@dataclass
class FeatureStore:
    """Raw feature matrix per node type, rows aligned with type-local indices."""

    features: dict[str, np.ndarray]
    _identity: dict[str, bool] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for t, x in self.features.items():
            x = np.asarray(x, dtype=np.float64)
            if x.ndim != 2:
                raise ValueError(f"features for type {t!r} must be a matrix, got shape {x.shape}")
            if not np.isfinite(x).all():
                raise ValueError(f"features for type {t!r} contain non-finite entries")
            self.features[t] = x

    def __getitem__(self, t: str) -> np.ndarray:
        return self.features[t]

    def dim(self, t: str) -> int:
        return self.features[t].shape[1]

    def is_identity(self, t: str) -> bool:
        """True when the type carries one-hot id features (x = I)."""
        if t not in self._identity:
            x = self.features[t]
            n, d = x.shape
            self._identity[t] = n == d and np.count_nonzero(x) == n and bool(np.all(np.diag(x) == 1.0))
        return self._identity[t]

    def check(self, node_counts: dict[str, int]) -> None:
        for t, n in node_counts.items():
            if t not in self.features:
                raise ValueError(f"no features for node type {t!r}")
            if self.features[t].shape[0] != n:
                raise ValueError(
                    f"type {t!r}: {self.features[t].shape[0]} feature rows for {n} nodes"
                )


def project_features(weights: dict[str, dn.Tensor], features: FeatureStore,
                     types: list[str]) -> dn.Tensor:
    """``h_u = x_u W_type(u)`` for every node, stacked in ``types`` order."""
    blocks = []
    for t in types:
        if t not in weights:
            raise KeyError(f"no projection for node type {t!r}")
        if features.is_identity(t):
            blocks.append(weights[t])  # I @ W == W
        else:
            blocks.append(dn.matmul(dn.Tensor(features[t]), weights[t]))
    return dn.concat_rows(blocks) if len(blocks) > 1 else blocks[0]


def label_project(mlp: dict[str, dn.Tensor], h: dn.Tensor, dropout: float = 0.0,
                  rng: np.random.Generator | None = None) -> dn.Tensor:
    hidden = dn.relu(dn.add(dn.matmul(h, mlp["W1"]), mlp["b1"]))
    hidden = dn.dropout(hidden, dropout, rng)
    return dn.row_softmax(dn.add(dn.matmul(hidden, mlp["W2"]), mlp["b2"]))


def neighbor_mean_layout(nbhd: SchemaNeighborhood, target_offset: int):
    """Edges and weights for averaging p over N_v; empty N_v averages p_v itself."""
    sizes = nbhd.sizes()
    empty = sizes == 0
    counts = np.where(empty, 1, sizes)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.empty(indptr[-1], dtype=np.int64)
    weights = np.repeat(1.0 / counts, counts)
    filled = np.repeat(~empty, counts)
    indices[filled] = nbhd.indices
    indices[~filled] = target_offset + np.flatnonzero(empty)
    return indptr, indices, weights


def local_predict(beta_logits: dn.Tensor, p: dn.Tensor, nbhd: SchemaNeighborhood,
                  target_offset: int = 0, layout=None) -> dn.Tensor:
    """``beta_v p_v + (1 - beta_v) mean_{u in N_v} p_u``; ``p_v`` when N_v is empty."""
    if layout is None:
        layout = neighbor_mean_layout(nbhd, target_offset)
    indptr, indices, weights = layout
    n = nbhd.n_targets
    p_self = dn.gather_rows(p, np.arange(target_offset, target_offset + n))
    mean = dn.segment_weighted_sum(weights, p, indptr, indices, n_out=n)
    return dn.blend(dn.sigmoid(beta_logits), p_self, mean)


class LocalModule:
    def __init__(self, node_types: list[str], target_type: str, features: FeatureStore,
                 nbhd: SchemaNeighborhood, num_classes: int, params: dn.ParamStore,
                 rng: np.random.Generator, hidden: int = 128, mlp_hidden: int = 128,
                 dropout: float = 0.5, prefix: str = "local"):
        self.types = list(node_types)
        self.features = features
        self.nbhd = nbhd
        self.dropout = dropout
        offset = 0
        for t in self.types:
            if t == target_type:
                break
            offset += features[t].shape[0]
        self.target_offset = offset
        self.layout = neighbor_mean_layout(nbhd, offset)
        self.proj = {
            t: params.add(f"{prefix}.W.{t}", dn.xavier_normal_init((features.dim(t), hidden), rng))
            for t in self.types
        }
        self.mlp = {
            "W1": params.add(f"{prefix}.mlp.W1", dn.xavier_normal_init((hidden, mlp_hidden), rng)),
            "b1": params.add(f"{prefix}.mlp.b1", np.zeros(mlp_hidden)),
            "W2": params.add(f"{prefix}.mlp.W2", dn.xavier_normal_init((mlp_hidden, num_classes), rng)),
            "b2": params.add(f"{prefix}.mlp.b2", np.zeros(num_classes)),
        }
        self.beta = params.add(f"{prefix}.beta", np.zeros(nbhd.n_targets))

    def gate_names(self) -> list[str]:
        return [self.beta.name]

    def forward(self, rng: np.random.Generator | None = None) -> dn.Tensor:
        h = project_features(self.proj, self.features, self.types)
        p = label_project(self.mlp, h, self.dropout if rng is not None else 0.0, rng)
        return local_predict(self.beta, p, self.nbhd, self.target_offset, self.layout)
