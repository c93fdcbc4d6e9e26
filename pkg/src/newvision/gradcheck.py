"""Central finite-difference checking for anything built on the tape.

Checks run the graph in float64. At f32, rounding noise in a central
difference at step 1e-3 is on the order of 5e-4 of the gradient magnitude,
which would drown the 1e-3 acceptance threshold; in f64 the truncation error
(about step squared) dominates and sits comfortably below it.

Two entry points: check_full differences every entry of every leaf and is
meant for single ops on small tensors; check_sampled differences a random
subset of entries per leaf so a whole model's joint loss stays affordable.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward

BuildFn = Callable[[Tape, list], Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = 1e-3) -> float:
    """Worst elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / den).max()) if a.size else 0.0


def _run(build: BuildFn, arrays: list) -> tuple[Tape, list, Tensor]:
    tape = Tape()
    leaves = [tape.leaf(a.copy(), requires_grad=True) for a in arrays]
    return tape, leaves, build(tape, leaves)


def _analytic(build: BuildFn, arrays: list) -> list:
    tape, leaves, loss = _run(build, arrays)
    grads = backward(tape, loss)
    return [grads[leaf.node_id].data for leaf in leaves]


def _fd_at(build: BuildFn, arrays: list, leaf: int, flat_index: int,
           step: float) -> float:
    flat = arrays[leaf].reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + step
    hi = float(_run(build, arrays)[2].data)
    flat[flat_index] = orig - step
    lo = float(_run(build, arrays)[2].data)
    flat[flat_index] = orig
    return (hi - lo) / (2.0 * step)


def check_full(build: BuildFn, arrays: Sequence[np.ndarray],
               step: float = 1e-3) -> float:
    """Max relative error over every entry of every leaf."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    analytic = _analytic(build, arrays)
    worst = 0.0
    for li, a in enumerate(arrays):
        numeric = np.empty(a.size)
        for i in range(a.size):
            numeric[i] = _fd_at(build, arrays, li, i, step)
        worst = max(worst, relative_error(
            analytic[li].reshape(-1), numeric))
    return worst


def check_sampled(build: BuildFn, arrays: Sequence[np.ndarray],
                  per_leaf: int = 5, step: float = 1e-3,
                  seed: int = 0) -> float:
    """Max relative error over a deterministic random sample of entries."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    analytic = _analytic(build, arrays)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for li, a in enumerate(arrays):
        n = min(per_leaf, a.size)
        idxs = rng.choice(a.size, size=n, replace=False)
        numeric = np.array(
            [_fd_at(build, arrays, li, int(i), step) for i in idxs])
        worst = max(worst, relative_error(
            analytic[li].reshape(-1)[idxs], numeric))
    return worst
