"""Differentiable numeric kernel.

A fixed set of array operations, each with an analytic backward pass,
built on a minimal reverse-mode tape: every op returns a Tensor holding
its inputs in `_prev` and a `_backward` closure that scatters the output
gradient into the input gradients. `Tensor.backward()` runs the closures
in reverse topological order.

Training runs in float32; gradient checking runs the same code in
float64 (finite differences are unreliable in single precision).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError


class Tensor:
    """Dense n-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def check_finite(self, what="tensor"):
        if not np.isfinite(self.data).all():
            from .errors import NumericError

            raise NumericError(f"non-finite values in {what}")
        return self

    def backward(self, seed=None):
        """Run reverse-mode accumulation from this tensor.

        `seed` defaults to ones (for a scalar loss this is the usual 1).
        """
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))

        if seed is None:
            seed = np.ones_like(self.data)
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _make(out_data, inputs, backward):
    """Wrap an op result; record the tape entry only if a grad is needed."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out._prev = tuple(inputs)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# convolution / pooling


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [N,C,H,W] with w [F,C,kh,kw] plus bias [F].

    Output spatial extents (H+2p-kh)/stride + 1 must be positive integers.
    """
    N, C, H, W = x.data.shape
    F, Cw, kh, kw = w.data.shape
    if C != Cw:
        raise ContractError(
            f"conv2d channel mismatch: input {x.data.shape} vs weight {w.data.shape}"
        )
    if b.data.shape != (F,):
        raise ContractError(f"conv2d bias shape {b.data.shape}, expected ({F},)")
    ho, rh = divmod(H + 2 * padding - kh, stride)
    wo, rw = divmod(W + 2 * padding - kw, stride)
    ho += 1
    wo += 1
    if rh or rw or ho <= 0 or wo <= 0:
        raise ContractError(
            f"conv2d size contract: input {x.data.shape}, kernel {w.data.shape}, "
            f"stride {stride}, padding {padding} does not yield integral output"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # [N,C,ho,wo,kh,kw] -> rows of length C*kh*kw per output position
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(N * ho * wo, C * kh * kw)
    wmat = w.data.reshape(F, -1)
    out = cols @ wmat.T + b.data
    out_data = np.ascontiguousarray(out.reshape(N, ho, wo, F).transpose(0, 3, 1, 2))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(N * ho * wo, F)
        if w.requires_grad:
            w._accumulate((gm.T @ cols).reshape(w.data.shape))
        if b.requires_grad:
            b._accumulate(gm.sum(axis=0))
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(N, ho, wo, C, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if padding:
                dxp = dxp[:, :, padding : padding + H, padding : padding + W]
            x._accumulate(dxp)

    return _make(out_data, (x, w, b), backward)


def max_pool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Windowed max over [N,C,H,W]; ties route gradient to the first
    element in row-major window order."""
    N, C, H, W = x.data.shape
    ho, rh = divmod(H - k, stride)
    wo, rw = divmod(W - k, stride)
    ho += 1
    wo += 1
    if rh or rw or ho <= 0 or wo <= 0:
        raise ContractError(
            f"max_pool2d size contract: input {x.data.shape}, k={k}, stride={stride}"
        )
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(N, C, ho, wo, k * k)
    idx = flat.argmax(axis=-1)  # first max in row-major order
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        di, dj = np.divmod(idx, k)
        ii = np.arange(ho)[None, None, :, None] * stride + di
        jj = np.arange(wo)[None, None, None, :] * stride + dj
        nn_ = np.arange(N)[:, None, None, None]
        cc = np.arange(C)[None, :, None, None]
        flat_idx = ((nn_ * C + cc) * H + ii) * W + jj
        dx = np.zeros(x.data.size, dtype=x.data.dtype)
        np.add.at(dx, flat_idx.ravel(), g.ravel())
        x._accumulate(dx.reshape(x.data.shape))

    return _make(np.ascontiguousarray(out_data), (x,), backward)


def pad2d(x: Tensor, bottom: int, right: int, value: float) -> Tensor:
    """Pad the two trailing dims at the bottom/right edges with a constant."""
    if bottom == 0 and right == 0:
        return x
    out_data = np.pad(
        x.data, ((0, 0), (0, 0), (0, bottom), (0, right)), constant_values=value
    )
    H, W = x.data.shape[2], x.data.shape[3]

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[:, :, :H, :W])

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# pointwise / affine


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(np.maximum(x.data, 0), (x,), backward)


def frozen_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel y = scale*x + shift on [N,C,H,W]; scale/shift never
    receive gradient (frozen normalization stand-in)."""
    C = x.data.shape[1]
    if scale.data.shape != (C,) or shift.data.shape != (C,):
        raise ContractError(
            f"frozen_affine expects scale/shift of shape ({C},), "
            f"got {scale.data.shape} and {shift.data.shape}"
        )
    s = scale.data[None, :, None, None]
    out_data = x.data * s + shift.data[None, :, None, None]

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * s)

    return _make(out_data, (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map [N,D] @ [O,D]^T + [O]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ContractError(
            f"linear shape mismatch: input {x.data.shape} vs weight {w.data.shape}"
        )
    out_data = x.data @ w.data.T + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(out_data, (x, w, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ContractError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x._accumulate(g * c)

    return _make(x.data * c, (x,), backward)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.data.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def take(x: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; duplicate indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            x._accumulate(dx)

    return _make(x.data[idx].copy(), (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def backward(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(a, b)
                t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def inner(x: Tensor, weights) -> Tensor:
    """Scalar projection sum(x * weights) for a constant weight array.

    Used to reduce non-scalar op outputs to a scalar in gradient checks.
    """
    wv = np.asarray(weights, dtype=x.data.dtype)
    if wv.shape != x.data.shape:
        raise ContractError(f"inner shape mismatch: {x.data.shape} vs {wv.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * wv)

    return _make((x.data * wv).sum(), (x,), backward)


# ---------------------------------------------------------------------------
# losses


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array, stabilized by max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]."""
    t = np.asarray(targets, dtype=np.intp)
    n, c = logits.data.shape
    if t.shape != (n,):
        raise ContractError(f"targets shape {t.shape}, expected ({n},)")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise ContractError(f"target class out of range [0,{c}): {t.min()}..{t.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(n), t]
    out_data = np.asarray(nll.mean(), dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            p = softmax(logits.data)
            p[np.arange(n), t] -= 1.0
            logits._accumulate(g * p / n)

    return _make(out_data, (logits,), backward)


def smooth_l1(pred: Tensor, target: Tensor, beta: float = 1.0) -> Tensor:
    """Huber-style loss: 0.5 d^2/beta inside |d|<beta, |d|-0.5 beta outside,
    summed and divided by the element count."""
    if pred.data.shape != target.data.shape:
        raise ContractError(
            f"smooth_l1 shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    if beta <= 0:
        raise ContractError(f"smooth_l1 beta must be positive, got {beta}")
    d = pred.data - target.data
    ad = np.abs(d)
    quad = ad < beta
    el = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = max(d.size, 1)
    out_data = np.asarray(el.sum() / n, dtype=pred.data.dtype)

    def backward(g):
        dd = g * np.clip(d / beta, -1.0, 1.0) / n
        if pred.requires_grad:
            pred._accumulate(dd)
        if target.requires_grad:
            target._accumulate(-dd)

    return _make(out_data, (pred, target), backward)


# ---------------------------------------------------------------------------
# parameters and optimization


class ParamStore:
    """Ordered table of named parameters plus SGD momentum state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.velocities: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, tensor: Tensor):
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        self.params[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def trainable(self):
        return {k: t for k, t in self.params.items() if t.requires_grad}

    def num_elements(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grads(self):
        for t in self.params.values():
            if t.requires_grad:
                t.zero_grad()

    def scale_grads(self, factor: float):
        for t in self.params.values():
            if t.requires_grad and t.grad is not None:
                t.grad *= factor


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.0):
    """velocity = momentum*velocity + grad; param -= lr*velocity; grads zeroed.

    Gradients are read from the parameter buffers, where backward passes
    (and any accumulation across micro-batches) have summed them.
    """
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    for name, p in store.params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        v = store.velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + p.grad
        store.velocities[name] = v
        p.data -= lr * v
        p.grad = np.zeros_like(p.data)
    store.step_count += 1


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(fn, tensors: dict, eps: float = 1e-6, exclude: dict | None = None) -> dict:
    """Compare analytic gradients of a scalar-valued fn against central
    finite differences.

    `fn` maps the tensors (passed positionally, in dict order) to a scalar
    Tensor; it is re-invoked for every probe so the graph is rebuilt each
    time. Returns {name: max relative error} for every tensor that
    requires a gradient; frozen tensors are absent from the result.
    `exclude` may carry per-name boolean masks of elements to skip
    (points too close to a non-differentiable kink).
    """
    for name, t in tensors.items():
        if t.data.dtype != np.float64:
            raise ContractError(f"grad_check requires float64 tensors ({name!r} is {t.data.dtype})")
        t.grad = None

    args = list(tensors.values())
    loss = fn(*args)
    if loss.data.shape != ():
        raise ContractError("grad_check target must be scalar")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
        if t.requires_grad
    }

    errors = {}
    for name, t in tensors.items():
        if not t.requires_grad:
            continue
        mask = None if exclude is None else exclude.get(name)
        flat = t.data.ravel()
        worst = 0.0
        for i in range(flat.size):
            if mask is not None and mask.ravel()[i]:
                continue
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(*args).data)
            flat[i] = orig - eps
            lo = float(fn(*args).data)
            flat[i] = orig
            num = (hi - lo) / (2 * eps)
            ana = analytic[name].ravel()[i]
            denom = max(abs(num), abs(ana))
            err = abs(num - ana) if denom < 1e-10 else abs(num - ana) / denom
            worst = max(worst, err)
        errors[name] = worst
    return errors
