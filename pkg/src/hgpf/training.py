"""Epoch loop with best-validation snapshot selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffnum as dn


class NumericFailure(FloatingPointError):
    pass


def best_epoch(scores) -> int:
    """Index of the highest score; earliest on ties."""
    scores = list(scores)
    if not scores:
        raise ValueError("no epochs to select from")
    return int(np.argmax(np.asarray(scores)))


@dataclass
class PhaseResult:
    selected: int
    best_score: float
    snapshot: dict[str, np.ndarray]
    records: list[dict] = field(default_factory=list)


def run_epochs(params: dn.ParamStore, optimizer: dn.Adam, epochs: int,
               loss_fn: Callable[[], tuple[dn.Tensor, dict[str, float]]],
               eval_fn: Callable[[], tuple[float, float]],
               tag: dict | None = None) -> PhaseResult:
    """Optimize ``loss_fn`` for ``epochs`` steps, keeping the best-validation snapshot.

    ``loss_fn`` runs under an active tape and returns the scalar objective
    plus named term values; ``eval_fn`` returns validation (micro, macro) F1.
    """
    best_score, best_snap, selected = -math.inf, params.snapshot(), -1
    records = []
    for epoch in range(epochs):
        params.zero_grad()
        with dn.Tape() as tape:
            loss, terms = loss_fn()
            if not np.isfinite(loss.value):
                raise NumericFailure(f"non-finite objective at epoch {epoch}: {loss.value}")
            tape.backward(loss)
        optimizer.step()
        micro, macro = eval_fn()
        rec = dict(tag or {})
        rec.update(epoch=epoch, objective=float(loss.value),
                   terms={k: float(v) for k, v in terms.items()},
                   val_micro_f1=float(micro), val_macro_f1=float(macro))
        records.append(rec)
        if micro > best_score:
            best_score, best_snap, selected = micro, params.snapshot(), epoch
    params.zero_grad()
    return PhaseResult(selected, float(best_score), best_snap, records)
