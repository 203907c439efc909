"""Auxiliary predictor: global propagation and local schema modules mixed by a
per-node gate."""

from __future__ import annotations

import numpy as np

from . import diffnum as dn
from .global_mclp import GlobalModule, init_labels
from .local_schema import LocalModule

VARIANTS = ("full", "global-only", "local-only")


class AuxSystem:
    """g = gamma * g_global + (1 - gamma) * g_local.

    ``variant`` drops one module for the ablations; the gate is then unused and
    not registered.
    """

    def __init__(self, graph, num_classes: int, k: int = 8, variant: str = "full",
                 dropout: float = 0.5, hidden: int = 128, rng: np.random.Generator | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown auxiliary variant {variant!r}")
        self.variant = variant
        self.graph = graph
        self.num_classes = num_classes
        self.params = dn.ParamStore()
        rng = rng if rng is not None else dn.make_rng(0)
        self.global_ = None
        self.local = None
        if variant in ("full", "global-only"):
            self.global_ = GlobalModule(graph.adjs, k, self.params)
        if variant in ("full", "local-only"):
            self.local = LocalModule(graph.hin.node_types, graph.hin.target_type, graph.features,
                                     graph.nbhd, num_classes, self.params, rng,
                                     hidden=hidden, mlp_hidden=hidden, dropout=dropout)
        self.gamma = None
        if variant == "full":
            self.gamma = self.params.add("gate.gamma", np.zeros(graph.hin.num_targets))

    @property
    def k(self) -> int | None:
        return self.global_.k if self.global_ is not None else None

    def gate_names(self) -> list[str]:
        names = []
        for part in (self.global_, self.local):
            if part is not None:
                names += part.gate_names()
        if self.gamma is not None:
            names.append(self.gamma.name)
        return names

    def forward(self, labeled, labels, rng: np.random.Generator | None = None):
        """Returns ``(g_global, g_local, g)``; a dropped module is returned as None."""
        n = self.graph.hin.num_targets
        g_global = g_local = None
        if self.global_ is not None:
            l0 = init_labels(n, labeled, labels, self.num_classes)
            mask = np.zeros(n, dtype=bool)
            mask[np.asarray(labeled, dtype=np.int64)] = True
            g_global, _ = self.global_.forward(l0, mask)
        if self.local is not None:
            g_local = self.local.forward(rng)
        if self.variant == "global-only":
            return g_global, None, g_global
        if self.variant == "local-only":
            return None, g_local, g_local
        return g_global, g_local, dn.blend(dn.sigmoid(self.gamma), g_global, g_local)

    def predict(self, labeled, labels) -> np.ndarray:
        return self.forward(labeled, labels)[2].value
