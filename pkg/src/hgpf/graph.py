"""Inputs shared by both predictors, derived once per dataset."""

from __future__ import annotations

from dataclasses import dataclass

import scipy.sparse as sp

from .hin import (Hin, MetaPath, MetaPathAdjacency, SchemaNeighborhood,
                  compose_metapath_adjacency, schema_neighbors, union_adjacency)
from .local_schema import FeatureStore


@dataclass
class PreparedGraph:
    hin: Hin
    features: FeatureStore
    metapaths: list[MetaPath]
    adjs: list[MetaPathAdjacency]
    nbhd: SchemaNeighborhood
    union: sp.csr_matrix

    @property
    def target_features(self):
        return self.features[self.hin.target_type]


def prepare(hin: Hin, features: FeatureStore, metapaths: list[MetaPath]) -> PreparedGraph:
    if not metapaths:
        raise ValueError("at least one meta-path is required")
    features.check(hin.node_counts)
    adjs = [compose_metapath_adjacency(hin, mp) for mp in metapaths]
    return PreparedGraph(hin, features, list(metapaths), adjs, schema_neighbors(hin),
                         union_adjacency(adjs))
