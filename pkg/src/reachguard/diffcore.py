"""Reverse-mode autodiff over float64 numpy arrays, MLPs, Adam and schedules.

Every learned function in the package (policies, critics, certificates,
multiplier, dynamics members) is an MLP from this module.  Operations accept
either plain arrays or :class:`Var` handles; only expressions that touch a
``Var`` are recorded on a :class:`Tape`, so the same code path serves both
inference and training.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError, UsageError

ACTIVATIONS = ("relu", "tanh", "swish", "identity")
DTYPE = np.float64


# --------------------------------------------------------------------------
# tape machinery


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("value", "tape", "idx")
    __array_priority__ = 100.0

    def __init__(self, value, tape, idx):
        self.value = value
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape}, idx={self.idx})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return take(self, key)


class _Node:
    __slots__ = ("inputs", "fn")

    def __init__(self, inputs, fn):
        self.inputs = inputs
        self.fn = fn


class Tape:
    """Records forward operations of one scalar loss evaluation.

    Nodes are appended in creation order, which is a topological order of the
    expression graph; :func:`backward` walks them in reverse once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._watched: dict[int, tuple[object, list[Var]]] = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> Var:
        value = np.asarray(value, dtype=DTYPE)
        self.nodes.append(_Node((), None))
        return Var(value, self, len(self.nodes) - 1)

    def watch(self, params) -> list[Var]:
        """Leaf handles for every array of ``params`` (memoized per object)."""
        key = id(params)
        hit = self._watched.get(key)
        if hit is not None:
            return hit[1]
        leaves = []
        for a in params.arrays():
            self.nodes.append(_Node((), None))
            leaves.append(Var(a, self, len(self.nodes) - 1))
        self._watched[key] = (params, leaves)
        return leaves

    def record(self, value, inputs, fn) -> Var:
        self.nodes.append(_Node(inputs, fn))
        return Var(value, self, len(self.nodes) - 1)


class Gradients:
    """Result of :func:`backward`; index with a watched parameter object."""

    def __init__(self, tape, leaf_grads):
        self._tape = tape
        self._leaf = leaf_grads

    def __getitem__(self, params) -> list[np.ndarray]:
        hit = self._tape._watched.get(id(params))
        if hit is None:
            return [np.zeros_like(a) for a in params.arrays()]
        out = []
        for v in hit[1]:
            g = self._leaf.get(v.idx)
            out.append(np.zeros_like(v.value) if g is None else g)
        return out

    def wrt(self, var: Var) -> np.ndarray:
        g = self._leaf.get(var.idx)
        return np.zeros_like(var.value) if g is None else g


def backward(tape: Tape, loss: Var) -> Gradients:
    """Reverse sweep from the scalar ``loss``; returns leaf gradients."""
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise UsageError("loss must be a Var recorded on this tape")
    if loss.value.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.value.shape}")
    grads = {loss.idx: np.ones_like(loss.value)}
    leaf = {}
    nodes = tape.nodes
    for idx in range(loss.idx, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = nodes[idx]
        if node.fn is None:
            leaf[idx] = g
            continue
        parts = node.fn(g)
        for inp, gi in zip(node.inputs, parts):
            if inp is None or gi is None:
                continue
            prev = grads.get(inp.idx)
            grads[inp.idx] = gi if prev is None else prev + gi
    return Gradients(tape, leaf)


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_input(x):
    return x if isinstance(x, Var) else None


# --------------------------------------------------------------------------
# primitive ops


def add(a, b):
    va, vb = value(a), value(b)
    out = va + vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return tape.record(out, (_as_input(a), _as_input(b)),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    va, vb = value(a), value(b)
    out = va - vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return tape.record(out, (_as_input(a), _as_input(b)),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    va, vb = value(a), value(b)
    out = va * vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    ga, gb = isinstance(a, Var), isinstance(b, Var)
    return tape.record(out, (_as_input(a), _as_input(b)), lambda g: (
        _unbroadcast(g * vb, sa) if ga else None,
        _unbroadcast(g * va, sb) if gb else None))


def div(a, b):
    va, vb = value(a), value(b)
    out = va / vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    ga, gb = isinstance(a, Var), isinstance(b, Var)
    return tape.record(out, (_as_input(a), _as_input(b)), lambda g: (
        _unbroadcast(g / vb, sa) if ga else None,
        _unbroadcast(-g * out / vb, sb) if gb else None))


def neg(a):
    out = -value(a)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (-g,))


def _unary(a, f, df):
    va = value(a)
    out = f(va)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (g * df(va, out),))


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def square(a):
    return _unary(a, np.square, lambda x, y: 2.0 * x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0.0).astype(DTYPE))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    return _unary(a, _sigmoid, lambda x, y: y * (1.0 - y))


def _softplus(x):
    return np.logaddexp(0.0, x)


def softplus(a):
    return _unary(a, _softplus, lambda x, y: _sigmoid(x))


def swish(a):
    def f(x):
        return x * _sigmoid(x)

    def df(x, y):
        s = _sigmoid(x)
        return s + x * s * (1.0 - s)

    return _unary(a, f, df)


def identity(a):
    return a


def clip(a, lo, hi):
    """Clamp; gradient passes only where the input lies inside [lo, hi]."""
    va = value(a)
    out = np.clip(va, lo, hi)
    if not isinstance(a, Var):
        return out
    mask = ((va >= lo) & (va <= hi)).astype(DTYPE)
    return a.tape.record(out, (a,), lambda g: (g * mask,))


def maximum(a, b):
    """Elementwise max; ties route the gradient to ``a``."""
    va, vb = value(a), value(b)
    out = np.maximum(va, vb)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    pick_a = (va >= vb).astype(DTYPE)
    sa, sb = np.shape(va), np.shape(vb)
    return tape.record(out, (_as_input(a), _as_input(b)), lambda g: (
        _unbroadcast(g * pick_a, sa), _unbroadcast(g * (1.0 - pick_a), sb)))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    va = value(a)
    out = np.sum(va, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    shape = va.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record(out, (a,), fn)


def mean(a, axis=None, keepdims=False):
    va = value(a)
    n = va.size if axis is None else va.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def take(a, key):
    va = value(a)
    out = va[key]
    if not isinstance(a, Var):
        return out
    shape = va.shape

    def fn(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[key] += g
        return (full,)

    return a.tape.record(out, (a,), fn)


def concat(parts, axis=-1):
    vals = [value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    tape = _tape_of(*parts)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(vals)))

    return tape.record(out, tuple(_as_input(p) for p in parts), fn)


def dense(x, w, b):
    """``x @ w.T + b``; a leading member axis on ``w``/``b`` is batched."""
    vx, vw, vb = value(x), value(w), value(b)
    wt = np.swapaxes(vw, -1, -2)
    if vw.ndim == 3:
        out = np.matmul(vx, wt) + vb[:, None, :]
    else:
        out = vx @ wt + vb
    tape = _tape_of(x, w, b)
    if tape is None:
        return out
    gx, gw, gb = isinstance(x, Var), isinstance(w, Var), isinstance(b, Var)
    sx = vx.shape

    def fn(g):
        dx = dw = db = None
        if gx:
            dx = _unbroadcast(np.matmul(g, vw), sx)
        if gw:
            if vw.ndim == 3:
                xb = vx if vx.ndim == 3 else np.broadcast_to(vx, (vw.shape[0],) + vx.shape)
                dw = np.matmul(np.swapaxes(g, -1, -2), xb)
            else:
                g2 = g.reshape(-1, g.shape[-1])
                dw = g2.T @ vx.reshape(-1, vx.shape[-1])
        if gb:
            db = g.sum(axis=-2) if vw.ndim == 3 else g.reshape(-1, g.shape[-1]).sum(axis=0)
        return dx, dw, db

    return tape.record(out, (_as_input(x), _as_input(w), _as_input(b)), fn)


_ACT_FN = {"relu": relu, "tanh": tanh, "swish": swish, "identity": identity}


def activate(x, name):
    try:
        return _ACT_FN[name](x)
    except KeyError:
        raise ConfigurationError(f"unknown activation {name!r}") from None


# --------------------------------------------------------------------------
# parameters


@dataclass(eq=False)
class NetworkParams:
    """Dense layers ``[(W, b), ...]`` with W shaped (out, in).

    Weights may carry a leading member axis (``W`` of shape (B, out, in)) for
    ensembles evaluated in one batched pass; :meth:`member` returns views.
    """

    layers: list
    activations: tuple
    head_count: int = 1
    name: str = ""

    def __post_init__(self):
        if len(self.activations) != len(self.layers) - 1:
            raise ConfigurationError(
                f"{len(self.layers)} layers need {len(self.layers) - 1} hidden activations, "
                f"got {len(self.activations)}")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r}")
        for k in range(len(self.layers) - 1):
            if self.layers[k + 1][0].shape[-1] != self.layers[k][0].shape[-2]:
                raise ConfigurationError(f"layer {k + 1} input does not match layer {k} output")

    def arrays(self):
        return [a for pair in self.layers for a in pair]

    @property
    def stacked(self):
        return self.layers[0][0].ndim == 3

    @property
    def in_dim(self):
        return self.layers[0][0].shape[-1]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[-2]

    @property
    def layer_dims(self):
        return [self.in_dim] + [w.shape[-2] for w, _ in self.layers]

    def copy(self, name=None):
        return NetworkParams([(w.copy(), b.copy()) for w, b in self.layers],
                             tuple(self.activations), self.head_count,
                             self.name if name is None else name)

    def member(self, i):
        if not self.stacked:
            raise UsageError("member() needs stacked parameters")
        return NetworkParams([(w[i], b[i]) for w, b in self.layers],
                             tuple(self.activations), self.head_count, f"{self.name}[{i}]")

    def num_params(self):
        return int(np.sum([a.size for a in self.arrays()]))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def load_flat(self, flat):
        flat = np.asarray(flat, dtype=DTYPE)
        if flat.size != self.num_params():
            raise ConfigurationError(f"expected {self.num_params()} values, got {flat.size}")
        pos = 0
        for a in self.arrays():
            a[...] = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size


class ScalarParam:
    """A single learnable scalar (used for log-temperature)."""

    def __init__(self, v=0.0, name=""):
        self.value = np.array([float(v)], dtype=DTYPE)
        self.name = name

    def arrays(self):
        return [self.value]

    def __float__(self):
        return float(self.value[0])


def init_mlp(sizes, activation, rng, head_count=1, n_members=None, name="", out_scale=1.0):
    """Uniform fan-in initialization: He-style for relu/swish, Xavier otherwise.

    ``sizes`` lists every layer width including input and output.
    """
    if len(sizes) < 2:
        raise ConfigurationError("an MLP needs at least an input and an output size")
    acts = (activation,) * (len(sizes) - 2) if isinstance(activation, str) else tuple(activation)
    layers = []
    lead = () if n_members is None else (n_members,)
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        act = acts[k] if k < len(acts) else "identity"
        if act in ("relu", "swish"):
            bound = math.sqrt(6.0 / fan_in)
        else:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
        if k == len(sizes) - 2:
            bound *= out_scale
        w = rng.uniform(-bound, bound, size=lead + (fan_out, fan_in)).astype(DTYPE)
        b = np.zeros(lead + (fan_out,), dtype=DTYPE)
        layers.append((w, b))
    return NetworkParams(layers, acts, head_count, name)


def mlp_forward(params: NetworkParams, x, tape: Tape | None = None):
    """Evaluate the network; with ``tape`` the parameters become differentiable."""
    vx = value(x)
    if np.shape(vx)[-1] != params.in_dim:
        raise ConfigurationError(
            f"{params.name or 'network'} expects input dim {params.in_dim}, got {np.shape(vx)[-1]}")
    if tape is not None:
        leaves = tape.watch(params)
        pairs = [(leaves[2 * k], leaves[2 * k + 1]) for k in range(len(params.layers))]
    else:
        pairs = params.layers
    h = x
    last = len(pairs) - 1
    for k, (w, b) in enumerate(pairs):
        h = dense(h, w, b)
        if k < last:
            h = activate(h, params.activations[k])
        if not np.isfinite(value(h)).all():
            raise NumericalError(
                f"non-finite activation in {params.name or 'network'} layer {k}", where=k)
    return h


# --------------------------------------------------------------------------
# serialization

_HDR = struct.Struct("<I")


def network_to_bytes(params: NetworkParams) -> bytes:
    header = {
        "name": params.name,
        "activation": list(params.activations),
        "layer_dims": params.layer_dims,
        "head_count": params.head_count,
        "members": params.layers[0][0].shape[0] if params.stacked else None,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = params.flat().astype("<f8").tobytes()
    return _HDR.pack(len(hb)) + hb + _HDR.pack(len(body)) + body


def network_from_bytes(buf: bytes, offset: int = 0):
    """Decode one network; returns ``(params, next_offset)``."""
    (n,) = _HDR.unpack_from(buf, offset)
    offset += _HDR.size
    header = json.loads(buf[offset:offset + n].decode("utf-8"))
    offset += n
    (m,) = _HDR.unpack_from(buf, offset)
    offset += _HDR.size
    flat = np.frombuffer(buf, dtype="<f8", count=m // 8, offset=offset).astype(DTYPE)
    offset += m
    dims = header["layer_dims"]
    lead = () if header["members"] is None else (header["members"],)
    layers = [(np.zeros(lead + (dims[k + 1], dims[k])), np.zeros(lead + (dims[k + 1],)))
              for k in range(len(dims) - 1)]
    params = NetworkParams(layers, tuple(header["activation"]), header["head_count"],
                           header["name"])
    params.load_flat(flat)
    return params, offset


# --------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.99
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params, beta1=0.99, beta2=0.999, epsilon=1e-8) -> AdamState:
    arrs = params.arrays()
    return AdamState([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs],
                     0, beta1, beta2, epsilon)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place.

    Returns ``(params, state)`` for call-chaining; both are the mutated inputs.
    Non-finite gradients leave everything untouched and raise.
    """
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    arrs = params.arrays()
    if len(grads) != len(arrs):
        raise ConfigurationError(f"expected {len(arrs)} gradient arrays, got {len(grads)}")
    for k, (a, g) in enumerate(zip(arrs, grads)):
        if a.shape != g.shape:
            raise ConfigurationError(f"gradient {k} shape {g.shape} != param shape {a.shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in array {k}; update refused", where=k)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    step = lr / c1
    for a, g, m, v in zip(arrs, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        a -= step * m / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def soft_update(target: NetworkParams, source: NetworkParams, tau: float) -> NetworkParams:
    """Polyak averaging ``target <- tau*source + (1-tau)*target`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    ta, sa = target.arrays(), source.arrays()
    if len(ta) != len(sa) or any(t.shape != s.shape for t, s in zip(ta, sa)):
        raise ConfigurationError("soft_update needs identically shaped networks")
    if tau == 0.0:
        return target
    for t, s in zip(ta, sa):
        if tau == 1.0:
            t[...] = s
        else:
            t *= 1.0 - tau
            t += tau * s
    return target


def cosine_anneal_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    if step <= 0 or total_steps <= 0:
        return lr_start
    if step >= total_steps:
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class Optimizer:
    """Adam state bundled with a cosine learning-rate schedule."""

    params: object
    lr_start: float
    lr_end: float
    total_steps: int
    state: AdamState = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = adam_init(self.params)

    @property
    def lr(self):
        return cosine_anneal_lr(self.state.step_count, self.total_steps, self.lr_start, self.lr_end)

    def step(self, grads):
        adam_step(self.params, grads, self.state, self.lr)
