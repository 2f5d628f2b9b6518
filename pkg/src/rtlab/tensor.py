"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small. A Tensor wraps one float64 ndarray.
Every primitive op whose inputs participate in differentiation records a
node (parents + a vector-Jacobian closure) on its output; the tape is the
topological order of those nodes and is rebuilt on every forward pass.
``backward`` replays the tape exactly once; replaying a consumed tape is
an error.

Broadcasting is restricted to bias addition (a 1-D vector against the
channel/feature axis) so that every backward rule stays auditable.
"""

from __future__ import annotations

import json
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, TapeError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``data`` is always a C-contiguous float64 ndarray (a flat row-major
    buffer viewed through ``shape``). ``grad`` is populated by
    ``backward`` for every tensor with ``requires_grad`` reachable from
    the loss; it always matches ``data`` in shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._op = None
        self._parents = ()
        self._vjp = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar over the primitive ops ---------------------------
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis=axis)


def _result(value, op, parents, vjp):
    """Wrap a forward value, recording the tape node when grads are live."""
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; the right operand may be a bias vector.

    Supported shapes: equal shapes, (N,F)+(F,), and (N,K,H,W)+(K,).
    """
    av, bv = a.data, b.data
    if av.shape == bv.shape:
        out = av + bv

        def vjp(g):
            return g, g

    elif bv.ndim == 1 and av.ndim == 2 and av.shape[1] == bv.shape[0]:
        out = av + bv[None, :]

        def vjp(g):
            return g, g.sum(axis=0)

    elif bv.ndim == 1 and av.ndim == 4 and av.shape[1] == bv.shape[0]:
        out = av + bv[None, :, None, None]

        def vjp(g):
            return g, g.sum(axis=(0, 2, 3))

    else:
        raise DimensionError(f"add: incompatible shapes {av.shape} and {bv.shape}")
    return _result(out, "add", (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    av, bv = a.data, b.data
    if av.shape != bv.shape:
        raise DimensionError(f"mul: shapes {av.shape} and {bv.shape} differ")

    def vjp(g):
        return g * bv, g * av

    return _result(av * bv, "mul", (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _result(a.data * c, "scale", (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    av, bv = a.data, b.data
    if av.ndim != 2 or bv.ndim != 2:
        raise DimensionError(f"matmul: expected 2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: inner axes differ, {av.shape} @ {bv.shape}")

    def vjp(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, "matmul", (a, b), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.data.shape

    def vjp(g):
        return (g.reshape(old),)

    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from exc
    return _result(out, "reshape", (a,), vjp)


def relu(a: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is taken to be 0."""
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _result(a.data * mask, "relu", (a,), vjp)


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    shape = a.data.shape
    if axis is None:
        def vjp(g):
            return (np.broadcast_to(g, shape).copy(),)

        return _result(a.data.sum(), "sum", (a,), vjp)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)

    def vjp_ax(g):
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, shape).copy(),)

    return _result(a.data.sum(axis=axes), "sum", (a,), vjp_ax)


def tensor_mean(a: Tensor, axis=None) -> Tensor:
    shape = a.data.shape
    if axis is None:
        count = a.data.size

        def vjp(g):
            return (np.broadcast_to(g / count, shape).copy(),)

        return _result(a.data.mean(), "mean", (a,), vjp)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    count = int(np.prod([shape[ax] for ax in axes]))

    def vjp_ax(g):
        ge = np.expand_dims(g / count, axes)
        return (np.broadcast_to(ge, shape).copy(),)

    return _result(a.data.mean(axis=axes), "mean", (a,), vjp_ax)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 2-D cross-correlation (the standard conv layer semantics).

    x: (N,C,H,W), kernel: (K,C,R,S) -> (N,K,H',W') with
    H' = (H + 2*padding - R)/stride + 1.
    """
    xv, kv = x.data, kernel.data
    if xv.ndim != 4:
        raise DimensionError(f"conv2d: input must be 4-D (N,C,H,W), got {xv.shape}")
    if kv.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be 4-D (K,C,R,S), got {kv.shape}")
    n, c, h, w = xv.shape
    k, ck, r, s = kv.shape
    if ck != c:
        raise DimensionError(f"conv2d: channel axes differ, input C={c} vs kernel C={ck}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d: bad stride={stride} or padding={padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < r or wp < s or (hp - r) % stride or (wp - s) % stride:
        raise DimensionError(
            f"conv2d: output extent not a positive integer for H axis {h} (pad {padding}, "
            f"window {r}, stride {stride}) or W axis {w} (window {s})"
        )
    ho = (hp - r) // stride + 1
    wo = (wp - s) // stride + 1

    xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xv
    win = sliding_window_view(xp, (r, s), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwrs,kcrs->nkhw", win, kv, optimize=True)

    def vjp(g):
        dk = np.einsum("nchwrs,nkhw->kcrs", win, g, optimize=True)
        gk = np.einsum("nkhw,kcrs->nchwrs", g, kv, optimize=True)
        dxp = np.zeros((n, c, hp, wp))
        for dr in range(r):
            for ds in range(s):
                dxp[:, :, dr:dr + stride * ho:stride, ds:ds + stride * wo:stride] += gk[:, :, :, :, dr, ds]
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return dx, dk

    return _result(out, "conv2d", (x, kernel), vjp)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first window slot."""
    xv = x.data
    if xv.ndim != 4:
        raise DimensionError(f"max_pool2: input must be 4-D, got {xv.shape}")
    n, c, h, w = xv.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2: spatial extents must be even, got {h}x{w}")
    flat = xv.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        return (dflat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _result(out, "max_pool2", (x,), vjp)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    training: bool,
    update_stats: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over a (N,C,H,W) input.

    In training mode normalization uses batch statistics; eval mode uses
    the running estimates. ``update_stats`` controls whether the running
    arrays are refreshed (they are mutated in place); attacks forward with
    batch statistics but must never update them.
    """
    xv = x.data
    if xv.ndim != 4:
        raise DimensionError(f"batch_norm: input must be 4-D, got {xv.shape}")
    chans = xv.shape[1]
    if gamma.data.shape != (chans,) or beta.data.shape != (chans,):
        raise DimensionError(
            f"batch_norm: scale/shift must have shape ({chans},), got {gamma.data.shape}/{beta.data.shape}"
        )

    if training:
        mu = xv.mean(axis=(0, 2, 3))
        var = xv.var(axis=(0, 2, 3))
        if update_stats:
            count = xv.shape[0] * xv.shape[2] * xv.shape[3]
            unbiased = var * (count / (count - 1)) if count > 1 else var
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mu = running_mean
        var = running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    gv = gamma.data

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        if training:
            dxhat = g * gv[None, :, None, None]
            m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            dx = inv[None, :, None, None] * (dxhat - m1 - xhat * m2)
        else:
            dx = g * (gv * inv)[None, :, None, None]
        return dx, dgamma, dbeta

    return _result(out, "batch_norm", (x, gamma, beta), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    lv = logits.data
    if lv.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be (N,C), got {lv.shape}")
    y = np.asarray(labels)
    n, c = lv.shape
    if y.shape != (n,):
        raise DimensionError(f"softmax_cross_entropy: labels must be ({n},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise IndexError(f"softmax_cross_entropy: label out of range [0, {c})")

    z = lv - lv.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), y].mean()
    probs = np.exp(logp)

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), y] -= 1.0
        return (g * d / n,)

    return _result(loss, "softmax_cross_entropy", (logits,), vjp)


# ---------------------------------------------------------------------------
# the tape and backward replay
# ---------------------------------------------------------------------------

class Tape:
    """Topologically ordered record of the primitives behind one loss."""

    def __init__(self, nodes):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)


def trace(loss: Tensor) -> Tape:
    """Collect the tape below ``loss`` (inputs before the ops that use them)."""
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return Tape(order)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    The tape is consumed: invoking backward twice without a fresh forward
    pass raises TapeError. Gradients are overwritten, not accumulated
    across calls.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape = trace(loss)
    for node in tape.nodes:
        if node._consumed:
            raise TapeError("backward: tape already consumed; rerun the forward pass")

    grads = {id(loss): np.ones(())}
    tensors = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        node._consumed = True
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            tensors[key] = parent
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for key, g in grads.items():
        t = tensors[key]
        if t.requires_grad:
            t.grad = np.ascontiguousarray(np.broadcast_to(g, t.data.shape))


def grad_check(f, point: Tensor, h: float = 1e-5) -> float:
    """Max relative error between backward and central-difference gradients.

    ``f`` must map one tensor to a scalar tensor and be smooth at ``point``
    (callers keep the point away from relu kinks). The relative error per
    coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    p = Tensor(point.data.copy(), requires_grad=True)
    out = f(p)
    if out.data.shape != ():
        raise ContractError(f"grad_check: f must return a scalar, got shape {out.data.shape}")
    backward(out)
    analytic = p.grad.reshape(-1).copy()

    base = p.data.copy()
    flat = base.reshape(-1)
    numeric = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(Tensor(base)).data)
            flat[i] = orig - h
            fm = float(f(Tensor(base)).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0


# ---------------------------------------------------------------------------
# serialization: one JSON header line, then little-endian float64 payload
# ---------------------------------------------------------------------------

def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    header = json.dumps({"shape": list(arr.shape), "dtype": "f64"}, separators=(",", ":"))
    return header.encode("ascii") + b"\n" + arr.astype("<f8").tobytes(order="C")


def read_tensor(stream) -> np.ndarray:
    """Read one serialized tensor from a binary stream."""
    header = bytearray()
    while True:
        b = stream.read(1)
        if not b:
            raise DimensionError("tensor stream: truncated header")
        if b == b"\n":
            break
        header.extend(b)
        if len(header) > 4096:
            raise DimensionError("tensor stream: unterminated header")
    try:
        meta = json.loads(header.decode("ascii"))
        shape = tuple(int(s) for s in meta["shape"])
        dtype = meta["dtype"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DimensionError(f"tensor stream: bad header {header!r}") from exc
    if dtype != "f64":
        raise DimensionError(f"tensor stream: unsupported dtype {dtype!r}")
    count = int(np.prod(shape)) if shape else 1
    payload = stream.read(8 * count)
    if len(payload) != 8 * count:
        raise DimensionError("tensor stream: truncated payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h
