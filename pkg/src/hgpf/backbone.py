"""Built-in black-box backbone: a single-layer meta-path attention network.

Each meta-path channel attends over N^P_v (or over v itself when that set is
empty); per-node semantic weights mix the channel summaries, and a linear
head with a row softmax produces label distributions.  The receptive field
is exactly one meta-path hop.
"""

from __future__ import annotations

import numpy as np

from . import diffnum as dn
from .eval_diag import f1_scores
from .training import PhaseResult, run_epochs

NEG_SLOPE = 0.05


def attention_layout(adj):
    """CSR neighbor lists with isolated nodes pointing at themselves."""
    deg = adj.degrees()
    counts = np.where(deg == 0, 1, deg)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.empty(indptr[-1], dtype=np.int64)
    filled = np.repeat(deg > 0, counts)
    indices[filled] = adj.indices
    indices[~filled] = np.flatnonzero(deg == 0)
    dst = np.repeat(np.arange(adj.n), counts)
    return indptr, indices, dst


class Backbone:
    def __init__(self, graph, num_classes: int, hidden: int = 64, dropout: float = 0.5,
                 rng: np.random.Generator | None = None, prefix: str = "backbone"):
        rng = rng if rng is not None else dn.make_rng(0)
        self.graph = graph
        self.dropout = dropout
        self.layouts = [attention_layout(a) for a in graph.adjs]
        self.names = [a.name for a in graph.adjs]
        target = graph.hin.target_type
        self.target = target
        self.identity_input = graph.features.is_identity(target)
        p = self.params = dn.ParamStore()
        d_in = graph.features.dim(target)
        # only target-type features are read by meta-path attention
        self.w_in = p.add(f"{prefix}.in.W.{target}", dn.xavier_normal_init((d_in, hidden), rng))
        self.b_in = p.add(f"{prefix}.in.b.{target}", np.zeros(hidden))
        self.att_src, self.att_dst = [], []
        for name in self.names:
            self.att_src.append(p.add(f"{prefix}.att.src.{name}", dn.xavier_normal_init((hidden,), rng)))
            self.att_dst.append(p.add(f"{prefix}.att.dst.{name}", dn.xavier_normal_init((hidden,), rng)))
        self.sem = p.add(f"{prefix}.sem.q", dn.xavier_normal_init((hidden,), rng))
        self.w_out = p.add(f"{prefix}.out.W", dn.xavier_normal_init((hidden, num_classes), rng))
        self.b_out = p.add(f"{prefix}.out.b", np.zeros(num_classes))

    def gate_names(self) -> list[str]:
        return []

    def project(self, rng=None) -> dn.Tensor:
        x = self.graph.target_features
        if self.identity_input:
            h = dn.add(self.w_in, self.b_in)
        else:
            h = dn.add(dn.matmul(dn.dropout(dn.Tensor(x), self.dropout, rng), self.w_in), self.b_in)
        return h

    def channel(self, h: dn.Tensor, j: int, rng=None) -> dn.Tensor:
        """Attention-weighted neighbor aggregate for meta-path ``j`` (pre-activation)."""
        indptr, indices, dst = self.layouts[j]
        src_score = dn.gather_rows(dn.matmul(h, self.att_src[j]), indices)
        dst_score = dn.gather_rows(dn.matmul(h, self.att_dst[j]), dst)
        att = dn.segment_softmax(dn.leaky_relu(dn.add(src_score, dst_score), NEG_SLOPE), indptr)
        att = dn.dropout(att, self.dropout, rng)
        return dn.segment_weighted_sum(att, h, indptr, indices)

    def forward(self, rng: np.random.Generator | None = None) -> dn.Tensor:
        h = self.project(rng)
        summaries = [dn.relu(self.channel(h, j, rng)) for j in range(len(self.layouts))]
        if len(summaries) == 1:
            z = summaries[0]
        else:
            scores = dn.stack_cols([dn.matmul(s, self.sem) for s in summaries])
            z = dn.convex_combine(dn.row_softmax(scores), summaries)
        z = dn.dropout(z, self.dropout, rng)
        return dn.row_softmax(dn.add(dn.matmul(z, self.w_out), self.b_out))

    def predict(self) -> np.ndarray:
        return self.forward().value


def pretrain(model: Backbone, splits, labels, epochs: int = 150, lr: float = 0.01,
             weight_decay: float = 0.0005, rng: np.random.Generator | None = None,
             tag: dict | None = None) -> PhaseResult:
    """Cross-entropy on the labeled set; returns the best-validation snapshot (loaded).

    Only ``labels[splits.train]`` enters the loss; ``labels[splits.val]`` is
    read for model selection.
    """
    train = np.asarray(splits.train, dtype=np.int64)
    if train.size == 0:
        raise ValueError("pretraining needs a non-empty labeled set")
    y_train = np.asarray(labels, dtype=np.int64)[train]
    val = np.asarray(splits.val, dtype=np.int64)
    y_val = np.asarray(labels, dtype=np.int64)[val]
    opt = dn.Adam(model.params, lr=lr, weight_decay=weight_decay)

    def loss_fn():
        f = model.forward(rng)
        loss = dn.cross_entropy(dn.gather_rows(f, train), y_train)
        return loss, {"ce": float(loss.value)}

    def eval_fn():
        return f1_scores(model.predict()[val], y_val)

    result = run_epochs(model.params, opt, epochs, loss_fn, eval_fn, tag or {"phase": "pretrain"})
    model.params.load(result.snapshot)
    return result
