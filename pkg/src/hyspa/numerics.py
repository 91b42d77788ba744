"""Dense float64 tensors with reverse-mode autodiff, plus training utilities.

Everything is double precision and CPU-bound by design; the goal is
verifiability (finite-difference checks, bitwise-reproducible inference), not
throughput.  Masked scores use a large negative constant instead of -inf so
arithmetic stays finite while softmax still underflows masked slots to 0.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

NEG_INF = -1e30


# ---------------------------------------------------------------------------
# tensor core
# ---------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward = backward
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data, parents=(a,))
    out._backward = lambda g: _accumulate(a, -g)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = backward
    return out


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data * c, parents=(a,))
    out._backward = lambda g: _accumulate(a, g * c)
    return out


def matmul(a, b) -> Tensor:
    """2-D or batched 3-D matrix product; batch dims must match exactly."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim > 2 or b.ndim > 2:
        if a.data.shape[:-2] != b.data.shape[:-2]:
            raise ValueError(f"batch dims differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data), parents=(a, b))

    def backward(g):
        _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    out._backward = backward
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), parents=(a,))
    out._backward = lambda g: _accumulate(a, g * (a.data > 0.0))
    return out


def softmax(a) -> Tensor:
    """Stable softmax over the last axis; NEG_INF slots come out exactly 0."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, parents=(a,))

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        _accumulate(a, p * (g - inner))

    out._backward = backward
    return out


def log_softmax(a) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    out = Tensor(logp, parents=(a,))

    def backward(g):
        p = np.exp(logp)
        _accumulate(a, g - p * g.sum(axis=-1, keepdims=True))

    out._backward = backward
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data, parents=(x, gamma, beta))

    def backward(g):
        d = x.data.shape[-1]
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(beta, g.sum(axis=reduce_axes))
        _accumulate(gamma, (g * xhat).sum(axis=reduce_axes))
        gx = g * gamma.data
        gxm = gx.mean(axis=-1, keepdims=True)
        gxxm = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gx - gxm - xhat * gxxm))

    out._backward = backward
    return out


def take_rows(table, ids) -> Tensor:
    """Row gather (embedding lookup); gradients scatter-add back."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    out = Tensor(table.data[ids], parents=(table,))

    def backward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    out._backward = backward
    return out


def concat_rows(parts: Sequence) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), parents=tuple(parts))
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi])

    out._backward = backward
    return out


def concat_cols(parts: Sequence) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts))
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    out._backward = backward
    return out


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data[start:stop], parents=(a,))

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accumulate(a, full)

    out._backward = backward
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), parents=(a,))
    out._backward = lambda g: _accumulate(a, g.reshape(a.data.shape))
    return out


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes), parents=(a,))
    out._backward = lambda g: _accumulate(a, np.transpose(g, inverse))
    return out


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(), parents=(a,))
    out._backward = lambda g: _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
    return out


def unfold(v, m: int, fill: float = NEG_INF) -> Tensor:
    """Sliding windows of width ``m`` with stride 1 over the last axis.

    out[..., j, d] = v[..., j+d] for j+d < n, else ``fill``; the fill cells do
    not propagate gradient.
    """
    v = _as_tensor(v)
    n = v.data.shape[-1]
    j = np.arange(n)[:, None]
    d = np.arange(m)[None, :]
    idx = j + d
    valid = idx < n
    idx_c = np.minimum(idx, n - 1)
    data = np.where(valid, v.data[..., idx_c], fill)
    out = Tensor(data, parents=(v,))

    def backward(g):
        if not v.requires_grad:
            return
        if v.grad is None:
            v.grad = np.zeros_like(v.data)
        gv = np.zeros_like(v.data)
        if v.data.ndim == 1:
            np.add.at(gv, idx[valid], g[valid])
        else:
            rows = np.broadcast_to(
                np.arange(v.data.shape[0])[:, None, None], g.shape
            )
            cols = np.broadcast_to(idx[None, :, :], g.shape)
            sel = np.broadcast_to(valid[None, :, :], g.shape)
            np.add.at(gv, (rows[sel], cols[sel]), g[sel])
        v.grad += gv

    out._backward = backward
    return out


def dropout(a, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return _as_tensor(a)
    a = _as_tensor(a)
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * keep, parents=(a,))
    out._backward = lambda g: _accumulate(a, g * keep)
    return out


# ---------------------------------------------------------------------------
# loss, schedule, optimizer
# ---------------------------------------------------------------------------

def label_smoothed_ce(logits: Tensor, target, epsilon: float) -> Tensor:
    """Cross entropy with uniform label smoothing over admissible classes.

    ``logits`` is (C,) or (T, C) and already carries NEG_INF on masked slots;
    those slots are excluded from the smoothing mass.  The target class gets
    1 - epsilon, the rest of the admissible classes share epsilon evenly.
    """
    logits = _as_tensor(logits)
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    squeeze = logits.ndim == 1
    data = logits.data[None, :] if squeeze else logits.data
    targets = np.atleast_1d(np.asarray(target, dtype=np.intp))
    if targets.shape[0] != data.shape[0]:
        raise ValueError("target count does not match logit rows")
    admissible = data > NEG_INF / 2
    rows = np.arange(data.shape[0])
    if not admissible[rows, targets].all():
        bad = int(rows[~admissible[rows, targets]][0])
        raise ValueError(f"target class is masked at row {bad}")
    counts = admissible.sum(axis=-1)
    q = np.zeros_like(data)
    spread = np.where(counts > 1, epsilon / np.maximum(counts - 1, 1), 0.0)
    q[admissible] = np.repeat(spread, counts)
    q[rows, targets] = np.where(counts > 1, 1.0 - epsilon, 1.0)
    logp = log_softmax(logits if not squeeze else reshape(logits, (1, -1)))
    per_row = sum_all(mul(logp, Tensor(-q)))
    return scale(per_row, 1.0 / data.shape[0])


def inv_sqrt_lr(step: int, peak_lr: float, warmup: int) -> float:
    """Linear warmup to ``peak_lr`` then inverse-square-root decay."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if step <= warmup:
        return peak_lr * step / warmup
    return peak_lr * math.sqrt(warmup / step)


def clip_global_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


class AdamW:
    """Decoupled-weight-decay Adam with an inverse-sqrt learning-rate schedule."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        peak_lr: float = 2e-4,
        warmup: int = 2000,
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.peak_lr = peak_lr
        self.warmup = warmup
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def current_lr(self) -> float:
        return inv_sqrt_lr(max(self.step_count, 1), self.peak_lr, self.warmup)

    def step(self) -> float:
        self.step_count += 1
        lr = inv_sqrt_lr(self.step_count, self.peak_lr, self.warmup)
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            decay = self.weight_decay * p.data
            p.data -= lr * (mhat / (np.sqrt(vhat) + self.eps) + decay)
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adamw_step(state: AdamW) -> float:
    """Functional alias: apply one optimizer step, returning the lr used."""
    return state.step()


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

class FiniteDiffReport:
    def __init__(self):
        self.max_rel_err = 0.0
        self.worst: tuple[str, int, float, float] | None = None
        self.checked = 0

    def record(self, name: str, idx: int, fd: float, ad: float) -> None:
        rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-5)
        self.checked += 1
        if rel > self.max_rel_err:
            self.max_rel_err = rel
            self.worst = (name, idx, fd, ad)

    def __repr__(self):
        return f"FiniteDiffReport(max_rel_err={self.max_rel_err:.3e}, checked={self.checked})"


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    coords_per_tensor: int = 4,
    rng: np.random.Generator | None = None,
) -> FiniteDiffReport:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph on every call and be deterministic.  For each
    parameter tensor a handful of coordinates is sampled (always including the
    largest-|grad| one) and perturbed in place.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    loss.backward()
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    report = FiniteDiffReport()
    for name, p in params.items():
        size = p.data.size
        if size <= coords_per_tensor:
            coords = list(range(size))
        else:
            coords = list(rng.choice(size, size=coords_per_tensor, replace=False))
            coords.append(int(np.abs(grads[name]).argmax()))
        flat = p.data.reshape(-1)
        for idx in sorted(set(int(c) for c in coords)):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = f().data.item()
            flat[idx] = orig - h
            f_minus = f().data.item()
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            report.record(name, idx, fd, float(grads[name].reshape(-1)[idx]))
    return report
