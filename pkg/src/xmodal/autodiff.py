"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

A ``Tape`` records primitive applications define-by-run; ``Tape.backward``
replays the recorded vector-Jacobian products in reverse topological order.
Everything upstream (encoders, CVAE branches, losses) is expressed in these
primitives so gradients are exact and finite-difference checkable.

All values are double precision. NaN/Inf are rejected at tensor creation and
at every primitive output. A tape is confined to a single thread for its
lifetime; distinct tapes over distinct parameter copies may run in parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "GraphError",
    "Tensor",
    "Tape",
    "apply_primitive",
    "grad_check",
    "AdamState",
    "adam_step",
    "ParamStore",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested primitive."""


class NonFiniteError(ArithmeticError):
    """A tensor value contains NaN or Inf."""


class GraphError(RuntimeError):
    """Tape misuse: wrong tape, non-scalar loss, unknown primitive, ..."""


def _as_array(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("tensor values must be finite, got NaN/Inf")
    return a


class Tensor:
    """A dense float64 array, optionally attached to a tape node.

    Constants (``tape is None``) carry no node id and receive no gradient.
    """

    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: "Tape | None" = None, node: int | None = None):
        self.value = _as_array(value)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        tag = "const" if self.tape is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {tag})"

    # -- operator sugar; all routed through apply_primitive -------------

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(other)

    def __add__(self, other):
        return _dispatch("add", [self, self._lift(other)])

    def __radd__(self, other):
        return _dispatch("add", [self._lift(other), self])

    def __neg__(self):
        return _dispatch("negate", [self])

    def __sub__(self, other):
        lifted = self._lift(other)
        if lifted.tape is None:
            lifted = Tensor(-lifted.value)
        else:
            lifted = -lifted
        return _dispatch("add", [self, lifted])

    def __rsub__(self, other):
        return _dispatch("add", [self._lift(other), -self])

    def __mul__(self, other):
        return _dispatch("multiply", [self, self._lift(other)])

    def __rmul__(self, other):
        return _dispatch("multiply", [self._lift(other), self])

    def __matmul__(self, other):
        return _dispatch("matmul", [self, self._lift(other)])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _dispatch("reshape", [self], shape=tuple(shape))

    def sum(self, axis=None):
        return _dispatch("sum", [self], axis=axis)

    def mean(self, axis=None):
        return _dispatch("mean", [self], axis=axis)

    def max(self, axis=None):
        return _dispatch("max", [self], axis=axis)

    def min(self, axis=None):
        return -(-self).max(axis=axis)

    def take(self, indices):
        return _dispatch("take", [self], indices=np.asarray(indices, dtype=np.intp))

    def __getitem__(self, key):
        return _dispatch("slice", [self], key=key)


def _tape_of(inputs) -> "Tape":
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise GraphError("operands recorded on different tapes")
            tape = t.tape
    if tape is None:
        raise GraphError(
            "at least one operand must be attached to a tape "
            "(wrap constants with Tape.constant to use them standalone)"
        )
    return tape


def _dispatch(kind, inputs, **attrs):
    return apply_primitive(_tape_of(inputs), kind, inputs, **attrs)


# ---------------------------------------------------------------------------
# primitive forward/VJP definitions
#
# Each entry maps values -> (output array, vjp), where vjp(g) returns one
# gradient array (or None) per input.
# ---------------------------------------------------------------------------


def _suffix_broadcast(sa, sb):
    """add/multiply broadcast: the smaller shape must be a suffix of the
    larger (leading-axis expansion only). Returns the output shape."""
    small, large = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(small) > 0 and large[len(large) - len(small):] != small:
        raise ShapeError(f"incompatible shapes for broadcast: {sa} vs {sb}")
    return large


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = tuple(range(g.ndim - len(shape)))
    return g.sum(axis=lead)


def _op_matmul(vals):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects (n,k)@(k,m) 2-D operands, got {a.shape} @ {b.shape}")
    out = a @ b

    def vjp(g):
        return [g @ b.T, a.T @ g]

    return out, vjp


def _op_add(vals):
    a, b = vals
    _suffix_broadcast(a.shape, b.shape)
    out = a + b

    def vjp(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return out, vjp


def _op_multiply(vals):
    a, b = vals
    _suffix_broadcast(a.shape, b.shape)
    out = a * b

    def vjp(g):
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]

    return out, vjp


def _op_concat(vals, axis=0):
    if not vals:
        raise ShapeError("concat needs at least one input")
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return list(np.split(g, splits, axis=axis))

    return out, vjp


def _op_sum(vals, axis=None):
    (x,) = vals
    out = x.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return [np.broadcast_to(g, x.shape).copy()]
        return [np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()]

    return out, vjp


def _op_mean(vals, axis=None):
    (x,) = vals
    out = x.mean(axis=axis)
    n = x.size if axis is None else x.shape[axis]

    def vjp(g):
        if axis is None:
            return [np.broadcast_to(g / n, x.shape).copy()]
        return [np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy()]

    return out, vjp


def _op_max(vals, axis=None):
    """Reduce-max; the subgradient routes to the first attaining entry
    (lowest flat/axis index) so tie-breaking is deterministic."""
    (x,) = vals
    out = x.max(axis=axis)

    def vjp(g):
        gx = np.zeros_like(x)
        if axis is None:
            gx.flat[int(np.argmax(x))] = g
        else:
            idx = np.expand_dims(np.argmax(x, axis=axis), axis)
            np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return [gx]

    return out, vjp


def _op_reshape(vals, shape=()):
    (x,) = vals
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out = x.reshape(shape)

    def vjp(g):
        return [g.reshape(x.shape)]

    return out, vjp


def _op_slice(vals, key=()):
    (x,) = vals
    out = x[key]

    def vjp(g):
        gx = np.zeros_like(x)
        gx[key] = g
        return [gx]

    return out, vjp


def _op_take(vals, indices=None):
    """Row gather along axis 0 (repeats allowed); VJP scatter-adds."""
    (x,) = vals
    out = x[indices]

    def vjp(g):
        gx = np.zeros_like(x)
        np.add.at(gx, indices, g)
        return [gx]

    return out, vjp


def _op_relu(vals):
    (x,) = vals
    mask = x > 0
    out = np.where(mask, x, 0.0)

    def vjp(g):
        return [np.where(mask, g, 0.0)]

    return out, vjp


def _op_leaky_relu(vals, slope=0.2):
    (x,) = vals
    mask = x > 0
    out = np.where(mask, x, slope * x)

    def vjp(g):
        return [np.where(mask, g, slope * g)]

    return out, vjp


def _op_sigmoid(vals):
    (x,) = vals
    # overflow-free two-branch evaluation
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g):
        return [g * out * (1.0 - out)]

    return out, vjp


def _op_tanh(vals):
    (x,) = vals
    out = np.tanh(x)

    def vjp(g):
        return [g * (1.0 - out * out)]

    return out, vjp


def _op_exp(vals):
    (x,) = vals
    with np.errstate(over="ignore"):
        out = np.exp(x)

    def vjp(g):
        return [g * out]

    return out, vjp


def _op_log(vals):
    (x,) = vals
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)

    def vjp(g):
        return [g / x]

    return out, vjp


def _op_square(vals):
    (x,) = vals
    out = x * x

    def vjp(g):
        return [2.0 * g * x]

    return out, vjp


def _op_negate(vals):
    (x,) = vals

    def vjp(g):
        return [-g]

    return -x, vjp


def _op_sorted_segment_sum(vals, segment_ids=None, num_segments=0):
    """Per-segment row sum with a content-canonical accumulation order.

    Rows within each segment are lexicographically sorted before summation,
    so the result is bitwise independent of the input row order. Used by the
    message-passing aggregation to make permutation invariance exact.
    """
    (x,) = vals
    if x.ndim != 2 or len(segment_ids) != x.shape[0]:
        raise ShapeError(f"segment sum expects (rows, dim) with one id per row, got {x.shape}")
    out = np.zeros((num_segments, x.shape[1]))
    for s in range(num_segments):
        rows = x[segment_ids == s]
        if rows.shape[0]:
            order = np.lexsort(rows.T[::-1])
            out[s] = rows[order].sum(axis=0)

    def vjp(g):
        return [g[segment_ids]]

    return out, vjp


_OPS = {
    "matmul": _op_matmul,
    "add": _op_add,
    "multiply": _op_multiply,
    "concat": _op_concat,
    "sum": _op_sum,
    "mean": _op_mean,
    "max": _op_max,
    "reshape": _op_reshape,
    "slice": _op_slice,
    "take": _op_take,
    "relu": _op_relu,
    "leaky_relu": _op_leaky_relu,
    "sigmoid": _op_sigmoid,
    "tanh": _op_tanh,
    "exp": _op_exp,
    "log": _op_log,
    "square": _op_square,
    "negate": _op_negate,
    "sorted_segment_sum": _op_sorted_segment_sum,
}

PRIMITIVE_KINDS = tuple(_OPS)


class _Node:
    __slots__ = ("kind", "inputs", "vjp")

    def __init__(self, kind, inputs, vjp):
        self.kind = kind
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Computation graph recorded define-by-run.

    Nodes are appended in execution order, which is a topological order by
    construction. The tape is rebuilt per training step.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: dict[int, tuple[int, ...]] = {}  # node id -> shape

    def __len__(self):
        return len(self._nodes)

    def _record(self, kind, input_ids, value, vjp) -> Tensor:
        self._nodes.append(_Node(kind, input_ids, vjp))
        return Tensor(value, tape=self, node=len(self._nodes) - 1)

    def constant(self, value) -> Tensor:
        """Attach a constant leaf (no gradient) to this tape."""
        return self._record("const", (), _as_array(value), None)

    def param(self, value) -> Tensor:
        """Attach a differentiable leaf; backward() reports its gradient."""
        t = self._record("param", (), _as_array(value), None)
        self._params[t.node] = t.shape
        return t

    def _lift(self, t: Tensor) -> int:
        if t.tape is None:
            return self.constant(t.value).node
        if t.tape is not self:
            raise GraphError("operand belongs to a different tape")
        return t.node

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every param leaf on this tape.

        Params not on any path to the loss get zero gradients.
        """
        if loss.tape is not self:
            raise GraphError("loss is not recorded on this tape")
        if loss.value.shape != ():
            raise GraphError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        adjoint: dict[int, np.ndarray] = {loss.node: np.ones(())}
        for nid in range(loss.node, -1, -1):
            g = adjoint.get(nid)
            node = self._nodes[nid]
            if g is None or node.vjp is None:
                continue
            for iid, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                acc = adjoint.get(iid)
                adjoint[iid] = gi if acc is None else acc + gi
        return {
            pid: adjoint.get(pid, np.zeros(shape))
            for pid, shape in self._params.items()
        }


def apply_primitive(tape: Tape, kind: str, inputs, **attrs) -> Tensor:
    """Apply one primitive, record the node, and return the forward value.

    Raises ShapeError on incompatible operands and NonFiniteError if the
    output contains NaN/Inf.
    """
    if kind not in _OPS:
        raise GraphError(f"unknown primitive kind {kind!r}")
    inputs = [t if isinstance(t, Tensor) else Tensor(t) for t in inputs]
    value, vjp = _OPS[kind]([t.value for t in inputs], **attrs)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"primitive {kind!r} produced non-finite values")
    ids = tuple(tape._lift(t) for t in inputs)
    return tape._record(kind, ids, value, vjp)


def concat(tensors, axis=0):
    return _dispatch("concat", list(tensors), axis=axis)


def grad_check(build, points, step: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``build(tape, *tensors)`` must return a scalar Tensor. Returns
    ``max_i |analytic_i - central_i| / max(1, |central_i|)`` over every
    coordinate of every point.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    points = [np.asarray(p, dtype=np.float64) for p in points]

    tape = Tape()
    leaves = [tape.param(p) for p in points]
    loss = build(tape, *leaves)
    grads = tape.backward(loss)

    def eval_at(pts):
        t = Tape()
        return float(build(t, *[t.param(p) for p in pts]).value)

    worst = 0.0
    for k, p in enumerate(points):
        analytic = grads[leaves[k].node]
        flat = p.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = eval_at(points)
            flat[i] = saved - step
            lo = eval_at(points)
            flat[i] = saved
            central = (hi - lo) / (2.0 * step)
            err = abs(analytic.reshape(-1)[i] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment optimizer state, keyed by param name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One update over a name->array parameter dict; returns new params."""
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        out[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


# ---------------------------------------------------------------------------
# named parameters and checkpoint files
# ---------------------------------------------------------------------------


class ParamStore:
    """Named float64 parameter arrays with read-access instrumentation.

    ``get`` counts reads per name, which is how the single-modality
    inference contract is asserted (no reads of the unused branch).
    """

    def __init__(self, arrays: dict | None = None):
        self._data: dict[str, np.ndarray] = {}
        self.reads: dict[str, int] = {}
        if arrays:
            for name, a in arrays.items():
                self.add(name, a)

    def add(self, name: str, array) -> None:
        self._data[name] = _as_array(array)

    def get(self, name: str) -> np.ndarray:
        self.reads[name] = self.reads.get(name, 0) + 1
        return self._data[name]

    def update(self, arrays: dict) -> None:
        for name, a in arrays.items():
            if name not in self._data:
                raise KeyError(name)
            self._data[name] = _as_array(a)

    def names(self):
        return sorted(self._data)

    def raw(self) -> dict:
        """Uninstrumented view, for the optimizer and checkpointing."""
        return dict(self._data)

    def read_count(self, prefix: str) -> int:
        return sum(n for name, n in self.reads.items() if name.startswith(prefix))

    def reset_reads(self) -> None:
        self.reads = {}

    def __contains__(self, name):
        return name in self._data

    def __len__(self):
        return len(self._data)


CHECKPOINT_VERSION = 1


def save_checkpoint(path, store: ParamStore) -> None:
    """JSON checkpoint; doubles serialize as shortest round-trip decimals,
    so load(save(x)) is value-exact."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "params": {
            name: {"shape": list(a.shape), "values": a.reshape(-1).tolist()}
            for name, a in sorted(store.raw().items())
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)


def load_checkpoint(path) -> ParamStore:
    with open(path) as f:
        payload = json.load(f)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version: {version!r}")
    store = ParamStore()
    for name, entry in payload["params"].items():
        store.add(name, np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"]))
    return store


class TapeParams:
    """Binds a ParamStore to one tape, caching one leaf per name.

    Maps gradients back to names after backward().
    """

    def __init__(self, tape: Tape, store: ParamStore):
        self.tape = tape
        self.store = store
        self._leaves: dict[str, Tensor] = {}

    def __call__(self, name: str) -> Tensor:
        leaf = self._leaves.get(name)
        if leaf is None:
            leaf = self.tape.param(self.store.get(name))
            self._leaves[name] = leaf
        return leaf

    def named_grads(self, loss: Tensor) -> dict[str, np.ndarray]:
        by_node = self.tape.backward(loss)
        return {name: by_node[leaf.node] for name, leaf in self._leaves.items()}
