"""Shared test utilities: finite-difference gradient oracle and tiny catalogs."""

import numpy as np

from alcir.core_math import GradientTape
from alcir.data import Catalog, ItemRecord, discretize_prices

FD_STEP = 1e-5
FD_TOL = 1e-4


def numeric_grad(fn, params, path, h=FD_STEP):
    """Central differences of the scalar ``fn(params, None)`` w.r.t. one parameter array."""
    arr = params[path]
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = float(fn(params, None).value)
        arr[i] = old - h
        down = float(fn(params, None).value)
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def relative_error(a, b, floor=1e-6):
    """Elementwise |a-b| / max(|a|, |b|, floor), maximised."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def gradcheck(fn, params, paths=None):
    """Max relative error between tape gradients and central differences.

    ``fn(params, tape)`` must return a scalar graph value. Returns
    ``(worst_error, {path: error})``.
    """
    tape = GradientTape()
    loss = fn(params, tape)
    grads = tape.backward(loss)
    paths = list(grads) if paths is None else paths
    # parameters the loss never reads have an implicit zero gradient
    errs = {p: relative_error(grads.get(p, np.zeros_like(params[p])), numeric_grad(fn, params, p)) for p in paths}
    return max(errs.values(), default=0.0), errs


def make_catalog(sizes, width=4, seed=0, binned=True, bins=5):
    """Catalog with ``sizes[c]`` items in category c and random features."""
    rng = np.random.default_rng(seed)
    items = []
    for c, n in enumerate(sizes):
        for k in range(n):
            items.append(ItemRecord(f"i{c}_{k:03d}", c, float(rng.uniform(1, 100)), rng.standard_normal(width)))
    cat = Catalog(items, [f"cat{c}" for c in range(len(sizes))])
    return discretize_prices(cat, bins) if binned else cat


# acceptance criteria register here; conftest prints them after the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def criterion(name: str, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE.append((name, bool(ok), detail))
    return bool(ok)
