"""Small differentiable kernel: parameter store, forward/backward primitives,
a GRU cell, Adam and a finite-difference gradient checker.

Everything works on numpy arrays whose leading axis is the batch.  Backward
functions take the upstream gradient plus whatever the forward returned and
accumulate parameter gradients into a :class:`ParamStore`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

LOG_FLOOR = 1e-12
INIT_SCALE = 0.08


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where finite values are required."""


class ParamStore:
    """Named parameters with matching gradient buffers and Adam moments."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return value

    def add_uniform(self, name: str, shape, rng: np.random.Generator,
                    scale: float = INIT_SCALE) -> np.ndarray:
        return self.add(name, rng.uniform(-scale, scale, size=shape))

    def add_zeros(self, name: str, shape) -> np.ndarray:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for name, p in self.params.items():
            out.params[name] = p.copy()
            out.grads[name] = self.grads[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        out.step = self.step
        return out

    def assign(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place, checking names and shapes."""
        for name, value in values.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            if self.params[name].shape != np.shape(value):
                raise ValueError(
                    f"shape mismatch for {name!r}: expected {self.params[name].shape}, "
                    f"got {np.shape(value)}")
            self.params[name][...] = value


def check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def embedding_lookup(table: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    return table[ids]


def embedding_backward(grad_table: np.ndarray, ids, grad_out: np.ndarray) -> None:
    np.add.at(grad_table, np.asarray(ids), grad_out)


def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ValueError(f"affine shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W + b


def affine_backward(grad_out: np.ndarray, x: np.ndarray, W: np.ndarray,
                    grad_W: np.ndarray, grad_b: np.ndarray) -> np.ndarray:
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    grad_W += x2.T @ g2
    grad_b += g2.sum(axis=0)
    return grad_out @ W.T


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_out * y * (1.0 - y)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_out * (1.0 - y * y)


def softmax(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax over the last axis; masked-out entries get weight 0."""
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * (grad_out - (grad_out * y).sum(axis=-1, keepdims=True))


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def concat(parts: Iterable[np.ndarray]) -> np.ndarray:
    return np.concatenate(list(parts), axis=-1)


def concat_backward(grad_out: np.ndarray, sizes: Iterable[int]) -> list[np.ndarray]:
    return np.split(grad_out, np.cumsum(list(sizes))[:-1], axis=-1)


def weighted_sum(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Attention pooling: (B, L) weights over (B, L, D) values -> (B, D)."""
    return np.einsum("bl,bld->bd", weights, values)


def weighted_sum_backward(grad_out: np.ndarray, weights: np.ndarray,
                          values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grad_w = np.einsum("bld,bd->bl", values, grad_out)
    grad_v = weights[:, :, None] * grad_out[:, None, :]
    return grad_w, grad_v


def cross_entropy(probs: np.ndarray, targets) -> np.ndarray:
    """Per-row negative log-likelihood of ``targets`` under ``probs``."""
    targets = np.asarray(targets)
    p = probs[np.arange(probs.shape[0]), targets]
    return -np.log(np.maximum(p, LOG_FLOOR))


def cross_entropy_backward(grad_out: np.ndarray, probs: np.ndarray, targets) -> np.ndarray:
    """Gradient w.r.t. ``probs`` (the epsilon floor has zero derivative)."""
    targets = np.asarray(targets)
    rows = np.arange(probs.shape[0])
    p = probs[rows, targets]
    grad = np.zeros_like(probs)
    grad[rows, targets] = np.where(p > LOG_FLOOR, -grad_out / np.maximum(p, LOG_FLOOR), 0.0)
    return grad


def softmax_cross_entropy(logits: np.ndarray, targets) -> tuple[np.ndarray, np.ndarray]:
    """Fused loss and logit gradient; returns (per-row loss, probs)."""
    probs = softmax(logits)
    return cross_entropy(probs, targets), probs


def softmax_cross_entropy_backward(grad_out: np.ndarray, probs: np.ndarray,
                                   targets) -> np.ndarray:
    grad = probs * grad_out[:, None]
    grad[np.arange(probs.shape[0]), np.asarray(targets)] -= grad_out
    return grad


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

def add_gru(store: ParamStore, prefix: str, n_in: int, n_hidden: int,
            rng: np.random.Generator) -> None:
    store.add_uniform(prefix + "W", (n_in, 3 * n_hidden), rng)
    store.add_uniform(prefix + "U", (n_hidden, 3 * n_hidden), rng)
    store.add_zeros(prefix + "b", (3 * n_hidden,))


@dataclass
class GRUCache:
    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    u: np.ndarray
    n: np.ndarray


def gru_forward(x: np.ndarray, h_prev: np.ndarray, W: np.ndarray, U: np.ndarray,
                b: np.ndarray) -> tuple[np.ndarray, GRUCache]:
    """h = u * h_prev + (1 - u) * tanh(x Wn + (r * h_prev) Un + bn)."""
    H = h_prev.shape[-1]
    xw = x @ W + b
    hu = h_prev @ U[:, :2 * H]
    r = sigmoid(xw[:, :H] + hu[:, :H])
    u = sigmoid(xw[:, H:2 * H] + hu[:, H:])
    n = np.tanh(xw[:, 2 * H:] + (r * h_prev) @ U[:, 2 * H:])
    h = u * h_prev + (1.0 - u) * n
    return h, GRUCache(x, h_prev, r, u, n)


def gru_backward(grad_h: np.ndarray, cache: GRUCache, W: np.ndarray, U: np.ndarray,
                 grad_W: np.ndarray, grad_U: np.ndarray,
                 grad_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_h_prev) and accumulates parameter gradients."""
    x, h_prev, r, u, n = cache.x, cache.h_prev, cache.r, cache.u, cache.n
    H = h_prev.shape[-1]
    grad_hp = grad_h * u
    du = grad_h * (h_prev - n) * u * (1.0 - u)
    dn = grad_h * (1.0 - u) * (1.0 - n * n)
    rh = r * h_prev
    grad_U[:, 2 * H:] += rh.T @ dn
    g_rh = dn @ U[:, 2 * H:].T
    dr = g_rh * h_prev * r * (1.0 - r)
    grad_hp += g_rh * r
    dgate = np.concatenate([dr, du], axis=-1)
    grad_U[:, :2 * H] += h_prev.T @ dgate
    grad_hp += dgate @ U[:, :2 * H].T
    dxw = np.concatenate([dr, du, dn], axis=-1)
    grad_W += x.T @ dxw
    grad_b += dxw.sum(axis=0)
    return dxw @ W.T, grad_hp


def gru_step(x: np.ndarray, h_prev: np.ndarray, store: ParamStore,
             prefix: str = "") -> np.ndarray:
    """One checked GRU update for a single vector or a batch of rows."""
    W, U, b = store[prefix + "W"], store[prefix + "U"], store[prefix + "b"]
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h2 = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    if x2.shape[-1] != W.shape[0]:
        raise ValueError(f"GRU input has dim {x2.shape[-1]}, expected {W.shape[0]}")
    if h2.shape[-1] != U.shape[0]:
        raise ValueError(f"GRU state has dim {h2.shape[-1]}, expected {U.shape[0]}")
    check_finite("GRU input", x2)
    check_finite("GRU state", h2)
    h, _ = gru_forward(x2, h2, W, U, b)
    return h.reshape(np.shape(h_prev)) if np.ndim(h_prev) == 1 else h


# ---------------------------------------------------------------------------
# optimisation and verification
# ---------------------------------------------------------------------------

def adam_update(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8, names: Iterable[str] | None = None) -> None:
    """One bias-corrected Adam descent step on ``store`` using its gradients.

    All gradients are validated before any parameter is touched, so a
    non-finite gradient leaves the store exactly as it was.
    """
    names = list(store.params) if names is None else list(names)
    for name in names:
        if not np.all(np.isfinite(store.grads[name])):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for name in names:
        g = store.grads[name]
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def failed(self) -> list[str]:
        return [k for k, e in self.max_rel_error.items() if not e < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failed

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(loss_fn: Callable[[ParamStore], float], store: ParamStore,
               tolerance: float = 1e-4, step: float = 1e-5,
               names: Iterable[str] | None = None, max_entries: int | None = None,
               rng: np.random.Generator | None = None,
               abs_floor: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(store)`` must return the scalar loss and accumulate its
    gradient into ``store.grads`` (which are zeroed first).  With
    ``max_entries`` only a random subset of each parameter is probed.
    Relative error is ``|a - n| / max(|a| + |n|, abs_floor)``.
    """
    names = list(store.params) if names is None else list(names)
    store.zero_grad()
    loss_fn(store)
    analytic = {k: store.grads[k].copy() for k in names}
    report = GradCheckReport(tolerance=tolerance)
    for name in names:
        p = store.params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(store)
            flat[i] = orig - step
            down = loss_fn(store)
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - num) / max(abs(a) + abs(num), abs_floor)
            worst = max(worst, err)
        report.max_rel_error[name] = float(worst)
    store.zero_grad()
    return report
