"""Reverse-mode tape over float64 numpy arrays.

Every value in the model stack is a Tensor wrapping a C-contiguous
float64 ndarray. Forward ops run eagerly; each op output remembers its
parents and a vjp closure, and Tensor.backward() replays the tape in
reverse topological order. Heavy sequence ops (LSTM, CTC) are single
tape nodes with hand-derived backward passes.

Tensors are immutable after construction. Parameter updates replace
arrays in a ParameterStore rather than mutating them, which keeps
re-runs bit-identical. All randomness in the package flows through
numpy's PCG64 (np.random.default_rng).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


class Tensor:
    """float64 array plus the tape edge that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        # np.ascontiguousarray would promote 0-d to 1-d; keep scalars 0-d.
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor holds non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.shape != ():
            raise ShapeError("backward() starts from a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # Arithmetic sugar used throughout the model stack.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def node(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    """Build an op-output tensor; drops the tape edge when no parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b; b may also be a row vector broadcast over a's rows."""
    if a.shape == b.shape:
        return node(a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.shape == (a.shape[1],):
        return node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return node(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return node(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return node(a.data.T.copy(), (a,), lambda g: (g.T,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return node(out, (a,), lambda g: (g * out * (1.0 - out),))


def square(a: Tensor) -> Tensor:
    return node(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return node(out, tuple(parts), vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_rows expects a matrix")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return node(a.data[start:stop].copy(), (a,), vjp)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup: out[i] = table[ids[i]]. Grad scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return node(table.data[idx], (table,), vjp)


def softmax_rows(a: Tensor) -> Tensor:
    s = _softmax_rows(a.data)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return node(s, (a,), vjp)


def log_softmax_rows(a: Tensor) -> Tensor:
    y = _log_softmax_rows(a.data)

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)

    return node(y, (a,), vjp)


def mean_rows(a: Tensor) -> Tensor:
    """(T, K) -> (K,), arithmetic mean over rows."""
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise ShapeError("mean_rows expects a non-empty matrix")
    n = a.shape[0]

    def vjp(g):
        return (np.repeat(g[None, :] / n, n, axis=0),)

    return node(a.data.mean(axis=0), (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ShapeError("mean_all of empty tensor")
    return node(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.full_like(a.data, float(g) / n),),
    )


def sum_all(a: Tensor) -> Tensor:
    return node(np.asarray(a.data.sum()), (a,), lambda g: (np.full_like(a.data, float(g)),))


def logsumexp(a: Tensor) -> Tensor:
    """Stable log sum exp of a vector; max-shifted so huge inputs don't overflow."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise ShapeError("logsumexp expects a non-empty vector")
    m = a.data.max()
    out = np.asarray(m + np.log(np.exp(a.data - m).sum()))
    w = np.exp(a.data - out)
    return node(out, (a,), lambda g: (w * float(g),))


# ---------------------------------------------------------------------------
# LSTM over a whole sequence as one tape node (hand-derived backward).
# ---------------------------------------------------------------------------


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=1, keepdims=True))


def lstm_forward(x, wx, wh, b, reverse=False):
    """Run an LSTM over x (T, D) with gate weights wx (D, 4K), wh (K, 4K), b (4K,).

    Gate columns are packed [input | forget | cell | output]. Initial
    state is zero. With reverse=True the scan runs right to left and
    output row t still corresponds to input row t. Returns (h (T, K),
    cache) where cache carries everything lstm_backward needs.
    """
    t_len = x.shape[0]
    k = wh.shape[0]
    pre = x @ wx + b
    h = np.zeros((t_len, k))
    gi = np.empty((t_len, k))
    gf = np.empty((t_len, k))
    gc = np.empty((t_len, k))
    go = np.empty((t_len, k))
    cells = np.empty((t_len, k))
    tanh_c = np.empty((t_len, k))
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    h_prev = np.zeros(k)
    c_prev = np.zeros(k)
    for t in order:
        a = pre[t] + h_prev @ wh
        gi[t] = _sigmoid(a[:k])
        gf[t] = _sigmoid(a[k : 2 * k])
        gc[t] = np.tanh(a[2 * k : 3 * k])
        go[t] = _sigmoid(a[3 * k :])
        cells[t] = gf[t] * c_prev + gi[t] * gc[t]
        tanh_c[t] = np.tanh(cells[t])
        h[t] = go[t] * tanh_c[t]
        h_prev = h[t]
        c_prev = cells[t]
    cache = (x, wx, wh, h, gi, gf, gc, go, cells, tanh_c, reverse)
    return h, cache


def lstm_backward(dh_out, cache):
    """Backward of lstm_forward. dh_out (T, K) -> (dx, dwx, dwh, db)."""
    x, wx, wh, h, gi, gf, gc, go, cells, tanh_c, reverse = cache
    t_len, k = h.shape
    dx = np.zeros_like(x)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * k)
    dh_next = np.zeros(k)
    dc_next = np.zeros(k)
    order = range(t_len) if reverse else range(t_len - 1, -1, -1)
    for t in order:
        if reverse:
            h_prev = h[t + 1] if t + 1 < t_len else np.zeros(k)
            c_prev = cells[t + 1] if t + 1 < t_len else np.zeros(k)
        else:
            h_prev = h[t - 1] if t > 0 else np.zeros(k)
            c_prev = cells[t - 1] if t > 0 else np.zeros(k)
        dh = dh_out[t] + dh_next
        do = dh * tanh_c[t]
        dc = dc_next + dh * go[t] * (1.0 - tanh_c[t] * tanh_c[t])
        df = dc * c_prev
        di = dc * gc[t]
        dg = dc * gi[t]
        da = np.concatenate(
            [
                di * gi[t] * (1.0 - gi[t]),
                df * gf[t] * (1.0 - gf[t]),
                dg * (1.0 - gc[t] * gc[t]),
                do * go[t] * (1.0 - go[t]),
            ]
        )
        dx[t] = da @ wx.T
        dwx += np.outer(x[t], da)
        dwh += np.outer(h_prev, da)
        db += da
        dh_next = da @ wh.T
        dc_next = dc * gf[t]
    return dx, dwx, dwh, db


def lstm_sequence(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Tape node for a full LSTM scan; see lstm_forward for shapes."""
    if x.data.ndim != 2 or x.shape[1] != wx.shape[0]:
        raise ShapeError(f"lstm_sequence: input {x.shape} vs wx {wx.shape}")
    if wx.shape[1] != 4 * wh.shape[0] or wh.shape[1] != wx.shape[1] or b.shape != (wx.shape[1],):
        raise ShapeError("lstm_sequence: inconsistent gate weight shapes")
    h, cache = lstm_forward(x.data, wx.data, wh.data, b.data, reverse=reverse)

    def vjp(g):
        return lstm_backward(g, cache)

    return node(h, (x, wx, wh, b), vjp)


# ---------------------------------------------------------------------------
# Parameter storage with named groups and per-group freezing.
# ---------------------------------------------------------------------------


class ParameterStore:
    """Named float64 arrays, each assigned to a freeze group.

    Training builds a fresh leaf-Tensor view per step (trainable leaves
    requiring grad), reads gradients off the leaves after backward and
    writes replacement arrays back with put().
    """

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}
        self._groups: dict[str, str] = {}

    def register(self, name: str, value: np.ndarray, group: str) -> None:
        if name in self._arrays:
            raise ConfigError(f"parameter {name!r} registered twice")
        arr = np.ascontiguousarray(value, dtype=np.float64)
        arr.flags.writeable = False
        self._arrays[name] = arr
        self._groups[name] = group

    def get(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def put(self, name: str, value: np.ndarray) -> None:
        if name not in self._arrays:
            raise KeyError(name)
        arr = np.ascontiguousarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite update for parameter {name}")
        arr.flags.writeable = False
        self._arrays[name] = arr

    def names(self) -> list[str]:
        return list(self._arrays)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def groups(self) -> list[str]:
        out: list[str] = []
        for g in self._groups.values():
            if g not in out:
                out.append(g)
        return out

    def group_size(self, group: str) -> int:
        return sum(a.size for n, a in self._arrays.items() if self._groups[n] == group)

    def leaves(self, trainable_groups: Iterable[str] = ()) -> dict[str, Tensor]:
        tg = set(trainable_groups)
        return {
            name: Tensor(arr, requires_grad=self._groups[name] in tg)
            for name, arr in self._arrays.items()
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return dict(self._arrays)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking.
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    step: float = 1e-4,
) -> float:
    """Max over parameters of |analytic - central difference| / max(1, |analytic|).

    loss_fn must be a deterministic function of the leaf dict it is
    handed. Raises NumericError on a non-finite loss.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = {
        k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(leaves[k].data))
        for k in params
    }
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def eval_loss():
        pts = {k: Tensor(v) for k, v in work.items()}
        val = float(loss_fn(pts).data)
        if not np.isfinite(val):
            raise NumericError("loss is not finite during finite differencing")
        return val

    worst = 0.0
    for k in params:
        flat = work[k].reshape(-1)
        gflat = analytic[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lo_plus = eval_loss()
            flat[i] = orig - step
            lo_minus = eval_loss()
            flat[i] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * step)
            rel = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, rel)
    return worst
