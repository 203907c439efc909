"""Alternating post-training of the backbone and the auxiliary predictor."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import diffnum as dn
from .aux_system import AuxSystem
from .backbone import Backbone, pretrain
from .eval_diag import f1_scores
from .training import run_epochs

log = logging.getLogger(__name__)

DISTANCES = {"sq_euclidean": dn.sq_euclidean, "kl": dn.kl_divergence}
AUX_VARIANTS = ("full", "global-only", "local-only", "self-cotrain")


@dataclass
class TrainConfig:
    lam: float = 0.3
    iterations: int = 5
    epochs: int = 150
    pretrain_epochs: int = 150
    k: int = 8
    aux_lr: float = 0.01
    aux_weight_decay: float = 0.0005
    aux_dropout: float = 0.5
    aux_hidden: int = 128
    backbone_lr: float = 0.01
    backbone_weight_decay: float = 0.0005
    backbone_dropout: float = 0.5
    backbone_hidden: int = 64
    decay_gates: bool = False
    system_distance: str = "sq_euclidean"
    module_distance: str = "kl"
    theta_distance: str = "kl"
    variant: str = "full"
    seed: int = 0

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.iterations < 0 or self.epochs < 1 or self.pretrain_epochs < 0:
            raise ValueError("iterations >= 0, epochs >= 1 and pretrain_epochs >= 0 required")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.variant not in AUX_VARIANTS:
            raise ValueError(f"variant must be one of {AUX_VARIANTS}")
        for d in (self.system_distance, self.module_distance, self.theta_distance):
            if d not in DISTANCES:
                raise ValueError(f"unknown distance {d!r}; choose from {sorted(DISTANCES)}")


def omega_objective(f_out, g_out: dn.Tensor, g_global: dn.Tensor | None,
                    g_local: dn.Tensor | None, unlabeled, lam: float,
                    system_distance: str = "sq_euclidean", module_distance: str = "kl"):
    """System consistency to the frozen backbone plus ``lam`` times module consistency.

    Returns ``(objective, terms)``; the module term is skipped when either
    module is absent.
    """
    unlabeled = np.asarray(unlabeled, dtype=np.int64)
    if unlabeled.size == 0:
        raise ValueError("omega objective needs unlabeled nodes")
    f = dn.Tensor(np.asarray(getattr(f_out, "value", f_out))[unlabeled])
    system = DISTANCES[system_distance](f, dn.gather_rows(g_out, unlabeled))
    terms = {"system": float(system.value)}
    total = system
    if g_global is not None and g_local is not None and lam != 0:
        module = DISTANCES[module_distance](dn.gather_rows(g_global, unlabeled),
                                            dn.gather_rows(g_local, unlabeled))
        terms["module"] = float(module.value)
        total = dn.add(system, dn.scale(module, lam))
    return total, terms


def theta_objective(f_out: dn.Tensor, g_out, labeled, unlabeled, labels,
                    distance: str = "kl", unlabeled_weight: float = 1.0):
    """Consistency of the backbone to the frozen auxiliary output plus labeled cross-entropy."""
    labeled = np.asarray(labeled, dtype=np.int64)
    unlabeled = np.asarray(unlabeled, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("theta objective needs labeled nodes")
    ce = dn.cross_entropy(dn.gather_rows(f_out, labeled), np.asarray(labels)[labeled])
    terms = {"ce": float(ce.value)}
    if unlabeled_weight == 0 or unlabeled.size == 0:
        return ce, terms
    g = dn.Tensor(np.asarray(getattr(g_out, "value", g_out))[unlabeled])
    cons = DISTANCES[distance](dn.gather_rows(f_out, unlabeled), g)
    terms["system"] = float(cons.value)
    if unlabeled_weight != 1.0:
        cons = dn.scale(cons, unlabeled_weight)
    return dn.add(cons, ce), terms


class BackboneAux:
    """A second backbone standing in for the auxiliary predictor."""

    variant = "self-cotrain"

    def __init__(self, model: Backbone):
        self.model = model
        self.params = model.params

    def gate_names(self) -> list[str]:
        return []

    def forward(self, labeled, labels, rng=None):
        return None, None, self.model.forward(rng)

    def predict(self, labeled, labels) -> np.ndarray:
        return self.model.predict()


def build_aux(graph, num_classes: int, config: TrainConfig, rng):
    if config.variant == "self-cotrain":
        return BackboneAux(Backbone(graph, num_classes, hidden=config.backbone_hidden,
                                    dropout=config.backbone_dropout, rng=rng, prefix="aux_backbone"))
    return AuxSystem(graph, num_classes, k=config.k, variant=config.variant,
                     dropout=config.aux_dropout, hidden=config.aux_hidden, rng=rng)


def train_only_labels(labels, train) -> np.ndarray:
    """Copy of ``labels`` with every non-training entry hidden (-1)."""
    out = np.full(len(labels), -1, dtype=np.int64)
    train = np.asarray(train, dtype=np.int64)
    out[train] = np.asarray(labels)[train]
    return out


@dataclass
class PostTrainResult:
    backbone: Backbone
    aux: object
    history: list[dict] = field(default_factory=list)
    pretrained: dict[str, np.ndarray] = field(default_factory=dict)
    best_theta_score: float = float("nan")
    best_omega_score: float = float("nan")


def _seeds(seed: int):
    ss = np.random.SeedSequence(seed).spawn(4)
    return [dn.make_rng(s) for s in ss]


def run_hgpf(graph, labels, splits, config: TrainConfig | None = None,
             backbone: Backbone | None = None, sink: Callable[[dict], None] | None = None,
             num_classes: int | None = None) -> PostTrainResult:
    """Pretrain (unless ``backbone`` is given), then alternate Omega and Theta phases.

    Each phase reloads its best-validation epoch before the other phase
    starts; the returned models hold the overall best snapshots.
    """
    config = config or TrainConfig()
    config.validate()
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = num_classes or int(labels.max()) + 1
    train, val = np.asarray(splits.train), np.asarray(splits.val)
    unlabeled = splits.unlabeled
    y_train = train_only_labels(labels, train)
    y_val = labels[val]
    init_b, init_a, drop_b, drop_a = _seeds(config.seed)

    history: list[dict] = []

    def emit(rec: dict) -> None:
        history.append(rec)
        if sink is not None:
            sink(rec)

    if backbone is None:
        backbone = Backbone(graph, num_classes, hidden=config.backbone_hidden,
                            dropout=config.backbone_dropout, rng=init_b)
        pre = pretrain(backbone, splits, labels, epochs=config.pretrain_epochs,
                       lr=config.backbone_lr, weight_decay=config.backbone_weight_decay,
                       rng=drop_b, tag={"iteration": 0, "phase": "pretrain"})
        for rec in pre.records:
            emit(rec)
        emit({"iteration": 0, "phase": "pretrain", "selected_epoch": pre.selected,
              "best_val_micro_f1": pre.best_score})
    pretrained = backbone.params.snapshot()
    theta_best = f1_scores(backbone.predict()[val], y_val, num_classes=num_classes)[0]
    theta_snap = pretrained

    aux = build_aux(graph, num_classes, config, init_a)
    omega_best, omega_snap = -np.inf, aux.params.snapshot()
    no_decay = [] if config.decay_gates else aux.gate_names()

    for it in range(1, config.iterations + 1):
        f_fixed = backbone.predict()
        opt = dn.Adam(aux.params, lr=config.aux_lr, weight_decay=config.aux_weight_decay,
                      no_decay=no_decay)

        def omega_loss():
            g_global, g_local, g = aux.forward(train, y_train, drop_a)
            return omega_objective(f_fixed, g, g_global, g_local, unlabeled, config.lam,
                                   config.system_distance, config.module_distance)

        def omega_eval():
            return f1_scores(aux.predict(train, y_train)[val], y_val, num_classes=num_classes)

        res = run_epochs(aux.params, opt, config.epochs, omega_loss, omega_eval,
                         {"iteration": it, "phase": "omega"})
        aux.params.load(res.snapshot)
        for rec in res.records:
            emit(rec)
        emit({"iteration": it, "phase": "omega", "selected_epoch": res.selected,
              "best_val_micro_f1": res.best_score})
        if res.best_score > omega_best:
            omega_best, omega_snap = res.best_score, res.snapshot

        g_fixed = aux.predict(train, y_train)
        opt = dn.Adam(backbone.params, lr=config.backbone_lr,
                      weight_decay=config.backbone_weight_decay)

        def theta_loss():
            f = backbone.forward(drop_b)
            return theta_objective(f, g_fixed, train, unlabeled, y_train, config.theta_distance)

        def theta_eval():
            return f1_scores(backbone.predict()[val], y_val, num_classes=num_classes)

        res = run_epochs(backbone.params, opt, config.epochs, theta_loss, theta_eval,
                         {"iteration": it, "phase": "theta"})
        backbone.params.load(res.snapshot)
        for rec in res.records:
            emit(rec)
        emit({"iteration": it, "phase": "theta", "selected_epoch": res.selected,
              "best_val_micro_f1": res.best_score})
        if res.best_score > theta_best:
            theta_best, theta_snap = res.best_score, res.snapshot
        log.info("iteration %d: omega val %.4f, theta val %.4f", it, omega_best, theta_best)

    aux.params.load(omega_snap)
    backbone.params.load(theta_snap)
    return PostTrainResult(backbone, aux, history, pretrained, float(theta_best), float(omega_best))


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
