"""Dense tensors with a small, closed catalog of differentiable ops.

Every op has a forward rule and a vector-Jacobian rule.  ``Tensor`` records
the graph only when some input requires a gradient, so evaluation code pays
nothing for bookkeeping.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> y = (x * x).sum()
    >>> y.backward()
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import enum
from typing import Any, Callable, Sequence

import numpy as np

from .errors import NonFiniteGradient, NumericOverflow, OddAxis, ShapeMismatch, VocabOverflow

MASK_VALUE = -1e9
PROB_FLOOR = 1e-12


class OpKind(str, enum.Enum):
    MATMUL = "matmul"
    ADD = "add"
    SCALE = "scale"
    SOFTMAX = "softmax"
    LAYERNORM = "layernorm"
    GELU = "gelu"
    EMBED_LOOKUP = "embed_lookup"
    CROSS_ENTROPY = "cross_entropy"
    MEAN_POOL_PAIR = "mean_pool_pair"
    CONCAT = "concat"
    MASK_FILL = "mask_fill"
    # structural and elementwise helpers the router/LMM graphs need
    MUL = "mul"
    RESHAPE = "reshape"
    TRANSPOSE = "transpose"
    GETITEM = "getitem"
    SUM = "sum"
    LOG = "log"
    RELU = "relu"


_FORWARD: dict[OpKind, Callable] = {}
_VJP: dict[OpKind, Callable] = {}


def _rule(kind: OpKind):
    def register(cls):
        _FORWARD[kind] = cls.forward
        _VJP[kind] = cls.vjp
        return cls

    return register


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


@_rule(OpKind.MATMUL)
class _MatMul:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError as exc:
            raise ShapeMismatch(f"matmul batch dims {a.shape} @ {b.shape}") from exc
        return a @ b, None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        a, b = xs
        return [_unbroadcast(g @ _swap(b), a.shape), _unbroadcast(_swap(a) @ g, b.shape)]


@_rule(OpKind.ADD)
class _Add:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        _broadcast_shape(a, b)
        return a + b, None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        return [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)]


@_rule(OpKind.MUL)
class _Mul:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        _broadcast_shape(a, b)
        return a * b, None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        a, b = xs
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


@_rule(OpKind.SCALE)
class _Scale:
    @staticmethod
    def forward(xs, attrs):
        return xs[0] * attrs["factor"], None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        return [g * attrs["factor"]]


@_rule(OpKind.SOFTMAX)
class _Softmax:
    @staticmethod
    def forward(xs, attrs):
        axis = attrs.get("axis", -1)
        x = xs[0]
        e = x - x.max(axis=axis, keepdims=True)
        np.exp(e, out=e)
        e /= e.sum(axis=axis, keepdims=True)
        return e, None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        axis = attrs.get("axis", -1)
        gy = g * out
        gy -= out * gy.sum(axis=axis, keepdims=True)
        return [gy]


@_rule(OpKind.LAYERNORM)
class _LayerNorm:
    @staticmethod
    def forward(xs, attrs):
        x, gamma, beta = xs
        if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
            raise ShapeMismatch(f"layernorm affine {gamma.shape}/{beta.shape} vs {x.shape}")
        eps = attrs.get("eps", 1e-5)
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * rstd
        return xhat * gamma + beta, (xhat, rstd)

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        x, gamma, _ = xs
        xhat, rstd = ctx
        lead = tuple(range(x.ndim - 1))
        dxhat = g * gamma
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return [dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)]


_GELU_C = float(np.sqrt(2.0 / np.pi))


@_rule(OpKind.GELU)
class _Gelu:
    # tanh approximation
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        x2 = x * x
        t = x2 * (_GELU_C * 0.044715)
        t += _GELU_C
        t *= x
        np.tanh(t, out=t)
        out = t + 1.0
        out *= x
        out *= 0.5
        return out, (t, x2)

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        x = xs[0]
        t, x2 = ctx
        dt = x2 * (3 * 0.044715 * _GELU_C)
        dt += _GELU_C
        dt *= 1.0 - t * t
        dt *= x
        dt += 1.0 + t
        dt *= 0.5
        dt *= g
        return [dt]


@_rule(OpKind.EMBED_LOOKUP)
class _EmbedLookup:
    @staticmethod
    def forward(xs, attrs):
        table = xs[0]
        ids = np.asarray(attrs["ids"])
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise VocabOverflow(f"ids outside [0, {table.shape[0]})")
        return table[ids], None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        gt = np.zeros_like(xs[0])
        np.add.at(gt, np.asarray(attrs["ids"]), g)
        return [gt]


@_rule(OpKind.CROSS_ENTROPY)
class _CrossEntropy:
    """Negative log-likelihood of integer targets over the last axis.

    ``from_logits`` selects between logits (log-softmax applied) and
    probabilities (clamped at ``floor`` before the log).
    """

    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        targets = np.asarray(attrs["targets"])
        if targets.shape != x.shape[:-1]:
            raise ShapeMismatch(f"targets {targets.shape} vs inputs {x.shape}")
        if targets.size and (targets.min() < 0 or targets.max() >= x.shape[-1]):
            raise ShapeMismatch("target index out of range")
        picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
        if attrs.get("from_logits", False):
            m = x.max(axis=-1, keepdims=True)
            lse = np.log(np.exp(x - m).sum(axis=-1)) + m[..., 0]
            per = lse - picked
        else:
            per = -np.log(np.maximum(picked, attrs.get("floor", PROB_FLOOR)))
        reduction = attrs.get("reduction", "mean")
        if reduction == "mean":
            return np.asarray(per.mean()), None
        if reduction == "sum":
            return np.asarray(per.sum()), None
        return per, None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        x = xs[0]
        targets = np.asarray(attrs["targets"])
        reduction = attrs.get("reduction", "mean")
        if reduction == "mean":
            g_rows = np.full(targets.shape, g / max(targets.size, 1), dtype=x.dtype)
        elif reduction == "sum":
            g_rows = np.full(targets.shape, g, dtype=x.dtype)
        else:
            g_rows = g
        onehot = np.zeros_like(x)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        if attrs.get("from_logits", False):
            e = np.exp(x - x.max(axis=-1, keepdims=True))
            p = e / e.sum(axis=-1, keepdims=True)
            return [(p - onehot) * g_rows[..., None]]
        picked = np.take_along_axis(x, targets[..., None], axis=-1)
        live = picked > attrs.get("floor", PROB_FLOOR)
        d = np.where(live, -1.0 / np.where(live, picked, 1.0), 0.0)
        return [onehot * d * g_rows[..., None]]


def pool_pairs(x: np.ndarray, axis: int) -> np.ndarray:
    """Mean of adjacent pairs along ``axis``; the length must be even."""
    axis = axis % x.ndim
    n = x.shape[axis]
    if n % 2:
        raise OddAxis(f"axis {axis} has odd length {n}")
    lo = np.take(x, np.arange(0, n, 2), axis=axis)
    hi = np.take(x, np.arange(1, n, 2), axis=axis)
    return (lo + hi) * 0.5


@_rule(OpKind.MEAN_POOL_PAIR)
class _MeanPoolPair:
    @staticmethod
    def forward(xs, attrs):
        return pool_pairs(xs[0], attrs["axis"]), None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        return [np.repeat(g * 0.5, 2, axis=attrs["axis"])]


@_rule(OpKind.CONCAT)
class _Concat:
    @staticmethod
    def forward(xs, attrs):
        try:
            return np.concatenate(xs, axis=attrs.get("axis", 0)), None
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from exc

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        axis = attrs.get("axis", 0)
        cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.split(g, cuts, axis=axis)


@_rule(OpKind.MASK_FILL)
class _MaskFill:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        mask = np.asarray(attrs["mask"], dtype=bool)
        if np.broadcast_shapes(mask.shape, x.shape) != x.shape:
            raise ShapeMismatch(f"mask {mask.shape} does not broadcast to {x.shape}")
        return np.where(mask, x.dtype.type(attrs.get("value", MASK_VALUE)), x), None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        return [np.where(np.asarray(attrs["mask"], dtype=bool), 0.0, g).astype(g.dtype)]


@_rule(OpKind.RESHAPE)
class _Reshape:
    @staticmethod
    def forward(xs, attrs):
        try:
            return xs[0].reshape(attrs["shape"]), None
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from exc

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        return [g.reshape(xs[0].shape)]


@_rule(OpKind.TRANSPOSE)
class _Transpose:
    @staticmethod
    def forward(xs, attrs):
        return np.transpose(xs[0], attrs["axes"]), None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        return [np.transpose(g, np.argsort(attrs["axes"]))]


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


@_rule(OpKind.GETITEM)
class _GetItem:
    @staticmethod
    def forward(xs, attrs):
        try:
            return np.array(xs[0][attrs["index"]]), None
        except IndexError as exc:
            raise ShapeMismatch(str(exc)) from exc

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        index = attrs["index"]
        gx = np.zeros_like(xs[0])
        if _is_basic_index(index):
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return [gx]


@_rule(OpKind.SUM)
class _Sum:
    @staticmethod
    def forward(xs, attrs):
        return np.asarray(xs[0].sum(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))), None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        x = xs[0]
        axis = attrs.get("axis")
        if axis is not None and not attrs.get("keepdims", False):
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, x.shape).astype(x.dtype)]


@_rule(OpKind.LOG)
class _Log:
    @staticmethod
    def forward(xs, attrs):
        return np.log(np.maximum(xs[0], attrs.get("floor", PROB_FLOOR))), None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        x = xs[0]
        live = x > attrs.get("floor", PROB_FLOOR)
        return [np.where(live, g / np.where(live, x, 1.0), 0.0).astype(x.dtype)]


@_rule(OpKind.RELU)
class _Relu:
    @staticmethod
    def forward(xs, attrs):
        return np.maximum(xs[0], 0.0), None

    @staticmethod
    def vjp(xs, out, ctx, g, attrs):
        return [np.where(xs[0] > 0, g, 0.0).astype(g.dtype)]


def _run_forward(kind: OpKind, arrays: Sequence[np.ndarray], attrs: dict) -> tuple[np.ndarray, Any]:
    # overflow is reported as NumericOverflow below rather than as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        out, ctx = _FORWARD[kind](list(arrays), attrs)
        out = np.asarray(out)
        finite = out.dtype.kind != "f" or np.isfinite(out.sum())
    # one reduction catches any inf/nan; only a finite-but-huge sum needs the full scan
    if not finite and not np.isfinite(out).all():
        raise NumericOverflow(f"{kind.value} produced non-finite values")
    return out, ctx


def forward_op(kind: OpKind | str, inputs: Sequence["Tensor"], attrs: dict | None = None) -> "Tensor":
    """Apply a catalog op; records the graph node when any input needs a gradient."""
    kind = OpKind(kind)
    attrs = attrs or {}
    arrays = [t.data for t in inputs]
    out, ctx = _run_forward(kind, arrays, attrs)
    needs_grad = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs_grad)
    if needs_grad:
        result._node = (kind, tuple(inputs), attrs, ctx)
    return result


def backward_vjp(
    kind: OpKind | str,
    inputs: Sequence["Tensor"],
    upstream_grad: "Tensor | np.ndarray",
    attrs: dict | None = None,
) -> list[np.ndarray]:
    """Vector-Jacobian product of one op, one gradient per input."""
    kind = OpKind(kind)
    attrs = attrs or {}
    arrays = [t.data for t in inputs]
    out, ctx = _run_forward(kind, arrays, attrs)
    g = np.asarray(upstream_grad.data if isinstance(upstream_grad, Tensor) else upstream_grad)
    if g.shape != out.shape:
        raise ShapeMismatch(f"upstream grad {g.shape} vs output {out.shape}")
    grads = _VJP[kind](arrays, out, ctx, g, attrs)
    return [np.asarray(gr, dtype=a.dtype).reshape(a.shape) for gr, a in zip(grads, arrays)]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return forward_op(OpKind.GETITEM, [self], {"index": index})

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_op(OpKind.RESHAPE, [self], {"shape": shape})

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return forward_op(OpKind.TRANSPOSE, [self], {"axes": axes})

    def sum(self, axis=None, keepdims: bool = False):
        return forward_op(OpKind.SUM, [self], {"axis": axis, "keepdims": keepdims})

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._node is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            kind, inputs, attrs, ctx = node._node
            arrays = [t.data for t in inputs]
            in_grads = _VJP[kind](arrays, node.data, ctx, g, attrs)
            for t, gi in zip(inputs, in_grads):
                if not t.requires_grad or gi is None:
                    continue
                key = id(t)
                grads[key] = gi if key not in grads else grads[key] + gi


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for parent in t._node[1]:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


# functional wrappers -------------------------------------------------------


def matmul(a, b) -> Tensor:
    return forward_op(OpKind.MATMUL, [_as_tensor(a), _as_tensor(b)])


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    return forward_op(OpKind.ADD, [a, _as_tensor(b, a.dtype)])


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    return forward_op(OpKind.MUL, [a, _as_tensor(b, a.dtype)])


def scale(x, factor: float) -> Tensor:
    return forward_op(OpKind.SCALE, [_as_tensor(x)], {"factor": float(factor)})


def softmax(x, axis: int = -1) -> Tensor:
    return forward_op(OpKind.SOFTMAX, [_as_tensor(x)], {"axis": axis})


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    return forward_op(OpKind.LAYERNORM, [_as_tensor(x), gamma, beta], {"eps": eps})


def gelu(x) -> Tensor:
    return forward_op(OpKind.GELU, [_as_tensor(x)])


def embed_lookup(table: Tensor, ids) -> Tensor:
    return forward_op(OpKind.EMBED_LOOKUP, [table], {"ids": np.asarray(ids, dtype=np.int64)})


def cross_entropy(x, targets, *, from_logits: bool = False, reduction: str = "mean", floor: float = PROB_FLOOR) -> Tensor:
    attrs = {"targets": np.asarray(targets, dtype=np.int64), "from_logits": from_logits, "reduction": reduction, "floor": floor}
    return forward_op(OpKind.CROSS_ENTROPY, [_as_tensor(x)], attrs)


def mean_pool_pair(x, axis: int) -> Tensor:
    return forward_op(OpKind.MEAN_POOL_PAIR, [_as_tensor(x)], {"axis": axis})


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    return forward_op(OpKind.CONCAT, [_as_tensor(x) for x in xs], {"axis": axis})


def mask_fill(x, mask, value: float = MASK_VALUE) -> Tensor:
    return forward_op(OpKind.MASK_FILL, [_as_tensor(x)], {"mask": np.asarray(mask, dtype=bool), "value": value})


def log(x, floor: float = PROB_FLOOR) -> Tensor:
    return forward_op(OpKind.LOG, [_as_tensor(x)], {"floor": floor})


def relu(x) -> Tensor:
    return forward_op(OpKind.RELU, [_as_tensor(x)])


# verification --------------------------------------------------------------


def check_gradient(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    eps: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``coords`` restricts the finite-difference sweep to some flat indices,
    which keeps checks on large parameter tensors affordable.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64 if not isinstance(x, Tensor) else x.dtype)
    if not np.isfinite(base).all():
        raise NonFiniteGradient("input is not finite")
    probe = Tensor(base.copy(), requires_grad=True)
    f(probe).backward()
    analytic = np.zeros_like(base) if probe.grad is None else probe.grad
    if not np.isfinite(analytic).all():
        raise NonFiniteGradient("analytic gradient is not finite")
    flat = base.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        up = f(Tensor(bumped.reshape(base.shape))).item()
        bumped[i] = flat[i] - eps
        down = f(Tensor(bumped.reshape(base.shape))).item()
        numeric = (up - down) / (2 * eps)
        if not np.isfinite(numeric):
            raise NonFiniteGradient(f"finite difference at coordinate {i} is not finite")
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return float(worst)


def check_param_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Run ``check_gradient`` on each parameter tensor with the rest held fixed.

    ``loss_fn`` reads the live ``params`` dict.  Returns the worst relative
    error per parameter name.
    """
    rng = np.random.default_rng(seed)
    report = {}
    for name in sorted(params):
        original = params[name]

        def f(t: Tensor, name=name) -> Tensor:
            params[name] = t
            try:
                return loss_fn()
            finally:
                params[name] = original

        coords = None
        if max_coords is not None and original.data.size > max_coords:
            coords = rng.choice(original.data.size, size=max_coords, replace=False)
        report[name] = check_gradient(f, original, eps, coords)
    return report
