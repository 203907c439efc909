import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hgpf import diffnum as dn
from hgpf.graph import prepare
from hgpf.synthetic import make_random_toy


def numeric_grad(fn, tensor: dn.Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``tensor``."""
    out = np.zeros_like(tensor.value)
    flat = tensor.value.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = float(fn().value)
        flat[i] = old - step
        down = float(fn().value)
        flat[i] = old
        out.reshape(-1)[i] = (up - down) / (2 * step)
    return out


def analytic_grads(fn, tensors) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
    with dn.Tape() as tape:
        loss = fn()
        tape.backward(loss)
    return [np.zeros_like(t.value) if t.grad is None else t.grad.copy() for t in tensors]


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def gradcheck(fn, tensors, tol: float = 1e-4) -> float:
    """Largest relative error between tape gradients and central differences."""
    grads = analytic_grads(fn, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        worst = max(worst, max_rel_error(g, numeric_grad(fn, t)))
    assert worst < tol, worst
    return worst


def toy_graph(seed: int, n_targets: int = 8, **kw):
    ds = make_random_toy(dn.make_rng(seed), n_targets=n_targets, **kw)
    return ds, prepare(ds.hin, ds.features, ds.manifest.metapaths)


@pytest.fixture
def toy():
    return toy_graph(3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
