"""Small reverse-mode autodiff over float64 numpy arrays.

Only the op set the model needs is provided. Values are batched row-major:
a batch of vectors is a ``(batch, width)`` array. Every op takes an optional
:class:`GradientTape`; with ``tape=None`` it just computes the forward value.

    tape = GradientTape()
    x = constant(batch)
    h = mlp_forward(spec, params, x, tape, prefix="enc")
    loss = mean(row_sum(h), tape)
    tape.backward(loss)
    optimizer_step(params, tape.grads, lr=0.1)
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateVectorError, DimensionError, EmbeddingLookupError, TrainingDivergenceError

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class Var:
    """A value in the graph. ``path`` is set for parameter leaves."""

    __slots__ = ("value", "grad", "needs_grad", "path")

    def __init__(self, value, needs_grad=False, path=None):
        self.value = value
        self.grad = None
        self.needs_grad = needs_grad
        self.path = path

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" path={self.path!r}" if self.path else ""
        return f"Var(shape={self.value.shape}{tag})"


def constant(x) -> Var:
    return Var(np.asarray(x, dtype=np.float64))


class GradientTape:
    """Records ops in forward order and replays them backwards.

    After :meth:`backward`, ``grads`` maps each parameter path touched by the
    tape to its accumulated gradient (same shape as the parameter).
    """

    def __init__(self):
        self.ops: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.grads: dict[str, np.ndarray] = {}
        self._params: dict[str, Var] = {}

    def param(self, store: "ParamStore", path: str) -> Var:
        v = self._params.get(path)
        if v is None:
            v = Var(store[path], needs_grad=True, path=path)
            self._params[path] = v
        return v

    def record(self, out: Var, inputs: tuple[Var, ...], backward: Callable) -> None:
        self.ops.append((out, inputs, backward))

    def backward(self, loss: Var, seed_grad=None) -> dict[str, np.ndarray]:
        loss.grad = np.ones_like(loss.value) if seed_grad is None else np.asarray(seed_grad, dtype=np.float64)
        for out, inputs, fn in reversed(self.ops):
            if out.grad is None:
                continue
            for v, g in zip(inputs, fn(out.grad)):
                if g is None or not v.needs_grad:
                    continue
                v.grad = g if v.grad is None else v.grad + g
        self.grads = {
            path: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for path, v in self._params.items()
        }
        return self.grads


def _param(store, path, tape):
    if tape is None:
        return Var(store[path])
    return tape.param(store, path)


def _out(value, inputs, tape, backward):
    needs = tape is not None and any(v.needs_grad for v in inputs)
    out = Var(value, needs_grad=needs)
    if needs:
        tape.record(out, tuple(inputs), backward)
    return out


# --------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Var, b: Var, tape=None) -> Var:
    return _out(a.value + b.value, (a, b), tape, lambda g: (g, g))


def sub(a: Var, b: Var, tape=None) -> Var:
    return _out(a.value - b.value, (a, b), tape, lambda g: (g, -g))


def scale(a: Var, c: float, tape=None) -> Var:
    return _out(a.value * c, (a,), tape, lambda g: (g * c,))


def relu(x: Var, tape=None) -> Var:
    mask = x.value > 0
    return _out(np.where(mask, x.value, 0.0), (x,), tape, lambda g: (np.where(mask, g, 0.0),))


def hinge(x: Var, tape=None) -> Var:
    """max(x, 0); identical to relu but named for loss code."""
    return relu(x, tape)


def matmul(x: Var, w: Var, tape=None) -> Var:
    return _out(x.value @ w.value, (x, w), tape, lambda g: (g @ w.value.T, x.value.T @ g))


def add_bias(x: Var, b: Var, tape=None) -> Var:
    return _out(x.value + b.value, (x, b), tape, lambda g: (g, g.sum(axis=0)))


def concat(parts: Sequence[Var], tape=None) -> Var:
    widths = [p.value.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _out(np.concatenate([p.value for p in parts], axis=1), tuple(parts), tape, back)


def concat_rows(parts: Sequence[Var], tape=None) -> Var:
    bounds = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _out(np.concatenate([p.value for p in parts], axis=0), tuple(parts), tape, back)


def slice_rows(x: Var, start: int, stop: int, tape=None) -> Var:
    def back(g):
        out = np.zeros_like(x.value)
        out[start:stop] = g
        return (out,)

    return _out(x.value[start:stop], (x,), tape, back)


def embed(table: Var, idx, tape=None) -> Var:
    """Row lookup ``table[idx]``."""
    idx = np.asarray(idx, dtype=np.int64)
    n = table.value.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise EmbeddingLookupError(f"index {bad} outside embedding table {table.path or ''} of {n} rows")

    def back(g):
        out = np.zeros_like(table.value)
        np.add.at(out, idx, g)
        return (out,)

    return _out(table.value[idx], (table,), tape, back)


def gradient_reversal(x: Var, tape=None) -> Var:
    """Identity forward; backward hands on the negated upstream gradient."""
    return _out(x.value, (x,), tape, lambda g: (-g,))


def stop_gradient(x: Var, tape=None) -> Var:
    """Identity forward; backward hands on exactly zero."""
    return _out(x.value, (x,), tape, lambda g: (np.zeros_like(g),))


def row_sum(x: Var, tape=None) -> Var:
    shape = x.value.shape
    return _out(x.value.sum(axis=1), (x,), tape, lambda g: (np.broadcast_to(g[:, None], shape).copy(),))


def mean(x: Var, tape=None) -> Var:
    n = x.value.size
    shape = x.value.shape
    if n == 0:
        return Var(np.float64(0.0))
    return _out(np.float64(x.value.sum() / n), (x,), tape, lambda g: (np.full(shape, g / n),))


def log(x: Var, tape=None) -> Var:
    """Natural log with the argument clamped at ``LOG_CLAMP``."""
    v = x.value
    clamped = v < LOG_CLAMP
    if np.any(clamped):
        logger.debug("log argument clamped at %g for %d entries", LOG_CLAMP, int(clamped.sum()))
    safe = np.where(clamped, LOG_CLAMP, v)
    return _out(np.log(safe), (x,), tape, lambda g: (np.where(clamped, 0.0, g / safe),))


# --------------------------------------------------------------------------
# softmax, cosine, distances


def softmax_probabilities(logits) -> np.ndarray:
    """Max-shifted softmax along the last axis (plain array in, array out)."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Var, tape=None) -> Var:
    p = softmax_probabilities(x.value)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _out(p, (x,), tape, back)


def pick(x: Var, cols, tape=None) -> Var:
    """``x[i, cols[i]]`` for every row i."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(x.value.shape[0])
    if cols.size and (cols.min() < 0 or cols.max() >= x.value.shape[1]):
        raise EmbeddingLookupError(f"category index outside [0, {x.value.shape[1]})")

    def back(g):
        out = np.zeros_like(x.value)
        out[rows, cols] = g
        return (out,)

    return _out(x.value[rows, cols], (x,), tape, back)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"cosine of vectors with widths {u.size} and {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def row_cosine(a: Var, b: Var, tape=None) -> Var:
    """Per-row cosine similarity of two ``(batch, d)`` values."""
    u, v = a.value, b.value
    if u.shape != v.shape:
        raise DimensionError(f"row_cosine shapes {u.shape} and {v.shape}")
    nu = np.sqrt((u * u).sum(axis=1))
    nv = np.sqrt((v * v).sum(axis=1))
    if np.any(nu == 0.0) or np.any(nv == 0.0):
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    dot = (u * v).sum(axis=1)
    c = dot / (nu * nv)

    def back(g):
        gu = (v / (nu * nv)[:, None] - (c / nu**2)[:, None] * u) * g[:, None]
        gv = (u / (nu * nv)[:, None] - (c / nv**2)[:, None] * v) * g[:, None]
        return gu, gv

    return _out(c, (a, b), tape, back)


def row_sq_dist(a: Var, b: Var, tape=None) -> Var:
    """Per-row squared Euclidean distance."""
    if a.value.shape != b.value.shape:
        raise DimensionError(f"row_sq_dist shapes {a.value.shape} and {b.value.shape}")
    diff = a.value - b.value

    def back(g):
        gd = 2.0 * diff * g[:, None]
        return gd, -gd

    return _out((diff * diff).sum(axis=1), (a, b), tape, back)


# --------------------------------------------------------------------------
# parameters and MLPs


@dataclass
class ParamStore:
    """Named parameter arrays. Initialisation of a path depends only on
    ``rng_seed`` and the path itself, never on creation order."""

    rng_seed: int = 0
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, path):
        return self.arrays[path]

    def __setitem__(self, path, value):
        self.arrays[path] = value

    def __contains__(self, path):
        return path in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def paths(self, prefix=""):
        return [p for p in self.arrays if p.startswith(prefix)]

    def _rng(self, path):
        return np.random.default_rng([self.rng_seed, zlib.crc32(path.encode())])

    def _add(self, path, value):
        if path in self.arrays:
            raise KeyError(f"parameter path {path!r} already exists")
        self.arrays[path] = value

    def glorot(self, path, fan_in, fan_out, shape=None):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        shape = shape or (fan_in, fan_out)
        self._add(path, self._rng(path).uniform(-limit, limit, size=shape))

    def zeros(self, path, shape):
        self._add(path, np.zeros(shape))

    def embedding(self, path, rows, dim):
        self.glorot(path, rows, dim)

    def copy(self) -> "ParamStore":
        return ParamStore(self.rng_seed, {k: v.copy() for k, v in self.arrays.items()})

    def equals(self, other: "ParamStore") -> bool:
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )


ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise DimensionError(f"an MLP needs at least two positive widths, got {widths}")
        acts = tuple(self.activations) or ("relu",) * (len(widths) - 2)
        if len(acts) != len(widths) - 2 or any(a not in ACTIVATIONS for a in acts):
            raise DimensionError(f"bad hidden activations {acts} for widths {widths}")
        object.__setattr__(self, "activations", acts)

    @property
    def in_width(self):
        return self.layer_widths[0]

    @property
    def out_width(self):
        return self.layer_widths[-1]


def init_mlp(spec: MlpSpec, params: ParamStore, prefix: str) -> None:
    for i, (a, b) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
        params.glorot(f"{prefix}/{i}/W", a, b)
        params.zeros(f"{prefix}/{i}/b", (b,))


def mlp_forward(spec: MlpSpec, params: ParamStore, x: Var, tape=None, prefix="mlp") -> Var:
    if x.value.ndim != 2 or x.value.shape[1] != spec.in_width:
        raise DimensionError(f"{prefix}: input shape {x.value.shape}, expected (*, {spec.in_width})")
    h = x
    n_layers = len(spec.layer_widths) - 1
    for i in range(n_layers):
        w = _param(params, f"{prefix}/{i}/W", tape)
        b = _param(params, f"{prefix}/{i}/b", tape)
        h = add_bias(matmul(h, w, tape), b, tape)
        if i < n_layers - 1 and spec.activations[i] == "relu":
            h = relu(h, tape)
    return h


def embedding_lookup(params: ParamStore, path: str, idx, tape=None) -> Var:
    return embed(_param(params, path, tape), idx, tape)


# --------------------------------------------------------------------------
# optimisation


def check_finite(grads: dict[str, np.ndarray]) -> None:
    for path, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for parameter {path!r}")


def optimizer_step(params: ParamStore, grads: dict[str, np.ndarray], lr: float) -> ParamStore:
    """Plain gradient descent, in place: ``p <- p - lr * g``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    check_finite(grads)
    for path, g in grads.items():
        if path not in params:
            raise KeyError(f"gradient for unknown parameter {path!r}")
        params[path] = params[path] - lr * g
    return params


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {p: g * factor for p, g in grads.items()}


class Optimizer:
    """Gradient descent with optional heavy-ball momentum, weight decay and
    global gradient-norm clipping (``clip_norm=None`` disables it)."""

    def __init__(self, lr: float, momentum: float = 0.0, weight_decay: float = 0.0, clip_norm: float | None = None):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if clip_norm is not None and clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, grads: dict[str, np.ndarray]) -> ParamStore:
        check_finite(grads)
        if self.clip_norm is not None:
            grads = clip_global_norm(grads, self.clip_norm)
        if self.momentum == 0.0 and self.weight_decay == 0.0:
            return optimizer_step(params, grads, self.lr)
        for path in sorted(grads):
            g = grads[path]
            if self.weight_decay:
                g = g + self.weight_decay * params[path]
            if self.momentum:
                v = self.velocity.get(path)
                v = g if v is None else self.momentum * v + g
                self.velocity[path] = v
                g = v
            params[path] = params[path] - self.lr * g
        return params
