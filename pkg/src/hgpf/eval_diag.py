"""Micro/Macro-F1, hard-node groupings and gate statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path


def confusion(pred_labels, true_labels, num_classes: int) -> np.ndarray:
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(true_labels), np.asarray(pred_labels)), 1)
    return m


def per_class_scores(conf: np.ndarray) -> dict[str, np.ndarray]:
    tp = np.diag(conf).astype(np.float64)
    pred_pos = conf.sum(axis=0)
    true_pos = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        recall = np.where(true_pos > 0, tp / true_pos, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return {"precision": precision, "recall": recall, "f1": f1, "support": true_pos}


def f1_scores(pred: np.ndarray, true_labels, node_set=None, num_classes: int | None = None):
    """(micro, macro) F1 of row-argmax predictions (ties go to the lowest class).

    ``node_set`` selects rows of both ``pred`` and ``true_labels``; when omitted
    they are taken as already aligned.  Every one of the ``num_classes``
    classes (default: columns of ``pred``) enters the macro average.
    """
    pred = np.asarray(pred)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if node_set is not None:
        node_set = np.asarray(node_set, dtype=np.int64)
        pred, true_labels = pred[node_set], true_labels[node_set]
    if len(true_labels) == 0:
        raise ValueError("F1 over an empty node set")
    num_classes = pred.shape[1] if num_classes is None else num_classes
    if true_labels.min() < 0 or true_labels.max() >= num_classes:
        raise ValueError(f"true labels outside [0, {num_classes})")
    conf = confusion(pred.argmax(axis=1), true_labels, num_classes)
    micro = float(np.trace(conf) / conf.sum())
    macro = float(per_class_scores(conf)["f1"].mean())
    return micro, macro


def accuracy(pred: np.ndarray, true_labels, nodes) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return float("nan")
    return float((pred[nodes].argmax(axis=1) == np.asarray(true_labels)[nodes]).mean())


def _distances_from(union: sp.csr_matrix, sources) -> np.ndarray:
    return shortest_path(union, directed=False, unweighted=True, indices=np.asarray(sources))


def graph_diameter(union: sp.csr_matrix, chunk: int = 512) -> int:
    """Largest finite hop distance in the union graph."""
    n = union.shape[0]
    best = 0
    for start in range(0, n, chunk):
        d = _distances_from(union, np.arange(start, min(n, start + chunk)))
        finite = d[np.isfinite(d)]
        if finite.size:
            best = max(best, int(finite.max()))
    return best


def hard_node_groups(union: sp.csr_matrix, splits, labels, receptive_hops: int = 1):
    """Two binary partitions of the test set.

    Returns ``(far, interfered, info)`` boolean arrays aligned with
    ``splits.test``.  FAR: mean hop distance to same-class training nodes
    (unreachable counted as diameter + 1) exceeds ``receptive_hops``.
    INTERFERED: within ``receptive_hops``, other-class training nodes outnumber
    same-class ones.
    """
    if receptive_hops < 1:
        raise ValueError("receptive_hops must be at least 1")
    labels = np.asarray(labels, dtype=np.int64)
    train = np.asarray(splits.train, dtype=np.int64)
    test = np.asarray(splits.test, dtype=np.int64)
    sentinel = graph_diameter(union) + 1
    d = _distances_from(union, train)[:, test] if train.size else np.zeros((0, test.size))
    unreachable = int(np.isinf(d).sum())
    d = np.where(np.isinf(d), sentinel, d)
    same = labels[train][:, None] == labels[test][None, :]
    n_same = same.sum(axis=0)
    with np.errstate(invalid="ignore"):
        mean_same = np.where(n_same > 0, (d * same).sum(axis=0) / np.maximum(n_same, 1), sentinel)
    far = mean_same > receptive_hops
    near = d <= receptive_hops
    interfered = (near & ~same).sum(axis=0) > (near & same).sum(axis=0)
    info = {"diameter_sentinel": sentinel, "unreachable_pairs": unreachable}
    return far, interfered, info


def _stats(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return float("nan"), float("nan")
    # shifting by one sample keeps constant inputs exact (std exactly 0)
    d = x - x.flat[0]
    return float(x.flat[0] + d.mean()), float(d.std())


def gate_report(aux, metapath_names=None) -> dict:
    """Means and standard deviations of the learned gates over all target nodes."""
    out: dict = {}
    sig = lambda z: 0.5 * (1.0 + np.tanh(0.5 * z))
    if getattr(aux, "gamma", None) is not None:
        out["gamma_mean"], out["gamma_std"] = _stats(sig(aux.gamma.value))
    if getattr(aux, "local", None) is not None:
        out["beta_mean"], out["beta_std"] = _stats(sig(aux.local.beta.value))
    if getattr(aux, "global_", None) is not None:
        alpha = aux.global_.alpha()
        names = metapath_names or [a.name for a in aux.global_.adjs]
        out["alpha"] = {name: _stats(alpha[:, j]) for j, name in enumerate(names)}
    return out


@dataclass
class EvalReport:
    model: str
    micro_f1: float
    macro_f1: float
    num_nodes: int
    per_class: dict[str, np.ndarray]
    groups: dict[str, tuple[int, float]]  # name -> (node count, accuracy)
    gates: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["[summary]", f"model {self.model}", f"micro_f1 {self.micro_f1!r}",
                 f"macro_f1 {self.macro_f1!r}", f"nodes {self.num_nodes}"]
        for k, v in self.notes.items():
            lines.append(f"{k} {v}")
        lines += ["", "[per_class]", "class\tprecision\trecall\tf1\tsupport"]
        pc = self.per_class
        for c in range(len(pc["f1"])):
            lines.append(f"{c}\t{float(pc['precision'][c])!r}\t{float(pc['recall'][c])!r}\t"
                         f"{float(pc['f1'][c])!r}\t{int(pc['support'][c])}")
        lines += ["", "[groups]", "group\tnodes\taccuracy"]
        for name, (n, acc) in self.groups.items():
            lines.append(f"{name}\t{n}\t{acc!r}")
        if self.gates:
            lines += ["", "[gates]"]
            for key in ("gamma", "beta"):
                if f"{key}_mean" in self.gates:
                    lines.append(f"{key}_mean {self.gates[key + '_mean']!r}")
                    lines.append(f"{key}_std {self.gates[key + '_std']!r}")
            for name, (m, s) in self.gates.get("alpha", {}).items():
                lines.append(f"alpha.{name}_mean {m!r}")
                lines.append(f"alpha.{name}_std {s!r}")
        return "\n".join(lines) + "\n"


def evaluate(model: str, pred: np.ndarray, labels, splits, union, receptive_hops: int = 1,
             gates: dict | None = None):
    """Test-set report plus the per-test-node group flags ``(far, interfered)``."""
    labels = np.asarray(labels, dtype=np.int64)
    test = np.asarray(splits.test, dtype=np.int64)
    num_classes = pred.shape[1]
    micro, macro = f1_scores(pred, labels, test, num_classes)
    conf = confusion(pred[test].argmax(axis=1), labels[test], num_classes)
    far, interfered, info = hard_node_groups(union, splits, labels, receptive_hops)
    groups = {}
    for name, mask in (("far", far), ("close", ~far), ("interfered", interfered),
                       ("not_interfered", ~interfered)):
        groups[name] = (int(mask.sum()), accuracy(pred, labels, test[mask]))
    notes = {"receptive_hops": receptive_hops, **info}
    report = EvalReport(model, micro, macro, len(test), per_class_scores(conf), groups,
                        gates or {}, notes)
    return report, far, interfered


def write_predictions(path, ids, pred: np.ndarray, labels, splits, far, interfered) -> None:
    test = np.asarray(splits.test, dtype=np.int64)
    labels = np.asarray(labels)
    arg = pred.argmax(axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        for j, v in enumerate(test):
            fh.write(f"{ids[v]}\t{labels[v]}\t{arg[v]}\t{'FAR' if far[j] else 'CLOSE'}\t"
                     f"{'INTERFERED' if interfered[j] else 'NOT-INTERFERED'}\n")
