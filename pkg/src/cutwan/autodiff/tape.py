"""Scalar computation graphs with reverse-mode derivatives recorded as graph nodes.

Derivatives produced by :func:`grad` are ordinary nodes on the same tape, so
they can be differentiated again. This is what weak-form losses need:
``grad`` w.r.t. parameters of an expression that already contains an
input gradient.

ReLU has derivative 0 at the kink (``relu'(0) = 0``), ``abs`` likewise uses
``sign(0) = 0``.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

from . import _ops
from ._backend import TapeCore


class TapeBuildError(TypeError):
    """Raised when a builder uses an operation the tape cannot record."""


class GraphTape:
    """Append-only sequence of scalar nodes plus a registry of named leaves."""

    def __init__(self, core=None):
        self.core = TapeCore() if core is None else core
        self.leaves: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.core)

    @property
    def backend(self) -> str:
        return self.core.backend

    def leaf(self, name: str, value: float) -> "ScalarNode":
        if name in self.leaves:
            raise ValueError(f"leaf {name!r} already registered")
        i = self.core.push_leaf(float(value))
        self.leaves[name] = i
        return ScalarNode(self, i)

    def const(self, value: float) -> "ScalarNode":
        return ScalarNode(self, self.core.push_const(float(value)))

    def node(self, i: int) -> "ScalarNode":
        if not 0 <= i < len(self.core):
            raise IndexError(f"node {i} not on tape")
        return ScalarNode(self, i)

    def __getitem__(self, name: str) -> "ScalarNode":
        return ScalarNode(self, self.leaves[name])

    def op_name(self, i: int) -> str:
        return _ops.OP_NAMES[self.core.op(i)]

    def describe(self) -> list[tuple[str, tuple[int, ...], float]]:
        """(op, parents, aux) per node, in id order; used to compare recordings."""
        return [(self.op_name(i), tuple(self.core.parents(i)), self.core.aux(i)) for i in range(len(self))]

    def evaluate(self, **values: float) -> "GraphTape":
        """Re-run the recorded arithmetic with new leaf values."""
        unknown = set(values) - set(self.leaves)
        if unknown:
            raise KeyError(f"unknown leaves: {sorted(unknown)}")
        self.core.replay({self.leaves[k]: float(v) for k, v in values.items()})
        return self

    @property
    def has_nan(self) -> bool:
        return self.core.first_nan >= 0

    @property
    def diagnostics(self) -> dict:
        first = self.core.first_nan
        return {
            "nodes": len(self),
            "nan_node": first if first >= 0 else None,
            "nan_op": self.op_name(first) if first >= 0 else None,
        }


class ScalarNode:
    """Handle on one node of a :class:`GraphTape`."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: GraphTape, i: int):
        self.tape = tape
        self.id = i

    @property
    def value(self) -> float:
        return self.tape.core.value(self.id)

    @property
    def op(self) -> str:
        return self.tape.op_name(self.id)

    def __repr__(self) -> str:
        return f"ScalarNode(id={self.id}, op={self.op}, value={self.value!r})"

    def _lift(self, other) -> int:
        if isinstance(other, ScalarNode):
            if other.tape is not self.tape:
                raise TapeBuildError("nodes belong to different tapes")
            return other.id
        if isinstance(other, (int, float)) and not isinstance(other, bool):
            return self.tape.core.push_const(float(other))
        raise TapeBuildError(f"unsupported operand type {type(other).__name__}")

    def _new(self, op: int, a: int, b: int = -1, aux: float = 0.0) -> "ScalarNode":
        return ScalarNode(self.tape, self.tape.core.push(op, a, b, aux))

    def __add__(self, other):
        return self._new(_ops.ADD, self.id, self._lift(other))

    def __radd__(self, other):
        return self._new(_ops.ADD, self._lift(other), self.id)

    def __mul__(self, other):
        return self._new(_ops.MUL, self.id, self._lift(other))

    def __rmul__(self, other):
        return self._new(_ops.MUL, self._lift(other), self.id)

    def __neg__(self):
        return self._new(_ops.MUL, self.tape.core.push_const(-1.0), self.id)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-ScalarNode(self.tape, self._lift(other)))

    def __rsub__(self, other):
        return ScalarNode(self.tape, self._lift(other)) + (-self)

    def __truediv__(self, other):
        if isinstance(other, ScalarNode):
            return self * other._new(_ops.POW, other.id, -1, -1.0)
        return self * (1.0 / float(other))

    def __rtruediv__(self, other):
        return self._new(_ops.POW, self.id, -1, -1.0) * other

    def __pow__(self, p):
        if isinstance(p, ScalarNode):
            return exp(p * log(self))
        if isinstance(p, (int, float)) and not isinstance(p, bool):
            return self._new(_ops.POW, self.id, -1, float(p))
        raise TapeBuildError(f"unsupported exponent type {type(p).__name__}")

    def __rpow__(self, base):
        return exp(self * math.log(float(base)))

    def __abs__(self):
        return self._new(_ops.ABS, self.id)

    def __float__(self):
        raise TapeBuildError(
            "conversion to float would leave the tape; use the cutwan.autodiff "
            "functions (tanh, exp, ...) instead of math.*, or .value to read the number"
        )

    def __bool__(self):
        raise TapeBuildError("branching on a node value is not recordable")

    __index__ = __int__ = __float__


def _unary(op: int, fallback: Callable[[float], float]):
    def f(x):
        if isinstance(x, ScalarNode):
            return x._new(op, x.id)
        return fallback(float(x))

    f.__name__ = _ops.OP_NAMES[op]
    return f


tanh = _unary(_ops.TANH, math.tanh)
relu = _unary(_ops.RELU, lambda v: v if v > 0.0 else 0.0)
exp = _unary(_ops.EXP, math.exp)
sin = _unary(_ops.SIN, math.sin)
cos = _unary(_ops.COS, math.cos)
log = _unary(_ops.LOG, math.log)
sqrt = _unary(_ops.SQRT, math.sqrt)


def power(x, p: float):
    return x ** p


def apply(name: str, *args):
    """Apply a supported op by name; unknown names raise :class:`TapeBuildError`."""
    table = {"add": lambda a, b: a + b, "mul": lambda a, b: a * b, "tanh": tanh,
             "relu": relu, "exp": exp, "sin": sin, "cos": cos, "log": log,
             "sqrt": sqrt, "abs": abs, "power": power}
    try:
        fn = table[name]
    except KeyError:
        raise TapeBuildError(f"unsupported op {name!r}") from None
    return fn(*args)


def record(builder: Callable[[dict], object], leaves: Mapping[str, float]) -> tuple[GraphTape, ScalarNode]:
    """Record ``builder(nodes)`` on a fresh tape; leaves are registered in the given order."""
    if not leaves:
        raise ValueError("record needs at least one leaf")
    tape = GraphTape()
    nodes = {name: tape.leaf(name, v) for name, v in leaves.items()}
    root = builder(nodes)
    if isinstance(root, (int, float)) and not isinstance(root, bool):
        root = tape.const(root)
    if not isinstance(root, ScalarNode) or root.tape is not tape:
        raise TapeBuildError("builder must return a node of the recording tape")
    return tape, root


def _leaf_ids(tape: GraphTape, wrt) -> list[tuple[str, int]]:
    out = []
    for w in wrt:
        if isinstance(w, ScalarNode):
            if w.tape is not tape:
                raise KeyError("node is not on this tape")
            names = [k for k, v in tape.leaves.items() if v == w.id]
            if not names:
                raise KeyError(f"node {w.id} is not a registered leaf")
            out.append((names[0], w.id))
        else:
            if w not in tape.leaves:
                raise KeyError(f"leaf {w!r} not on tape")
            out.append((w, tape.leaves[w]))
    return out


def grad(tape: GraphTape, root: ScalarNode, wrt: Iterable) -> dict[str, ScalarNode]:
    """d(root)/d(leaf) for each requested leaf, as new (differentiable) nodes."""
    if root.tape is not tape:
        raise KeyError("root is not on this tape")
    pairs = _leaf_ids(tape, wrt)
    ids = tape.core.emit_grad(root.id, [i for _, i in pairs])
    return {name: ScalarNode(tape, i) for (name, _), i in zip(pairs, ids)}


def grad_nodes(root: ScalarNode, wrt: Sequence[ScalarNode]) -> list[ScalarNode]:
    """Like :func:`grad` but w.r.t. arbitrary nodes (not only named leaves)."""
    tape = root.tape
    for w in wrt:
        if w.tape is not tape:
            raise KeyError("node is not on this tape")
    ids = tape.core.emit_grad(root.id, [w.id for w in wrt])
    return [ScalarNode(tape, i) for i in ids]


def grad_values(tape: GraphTape, root: ScalarNode, wrt: Iterable) -> dict[str, float]:
    """Numeric first-order gradient without growing the tape."""
    pairs = _leaf_ids(tape, wrt)
    adj = tape.core.backward_values(root.id)
    return {name: (adj[i] if i < len(adj) else 0.0) for name, i in pairs}


def input_gradient(
    forward: Callable[[list, dict], object],
    x: Sequence[float],
    params: Mapping[str, float] | None = None,
) -> tuple[GraphTape, ScalarNode, list[ScalarNode]]:
    """Record ``u = forward(xs, params)`` and return (tape, u, [du/dx_i]).

    Inputs are registered as leaves ``x0, x1, ...``; the gradient nodes stay
    differentiable with respect to the parameter leaves.
    """
    tape = GraphTape()
    xs = [tape.leaf(f"x{i}", v) for i, v in enumerate(x)]
    ps = {k: tape.leaf(k, v) for k, v in (params or {}).items()}
    u = forward(xs, ps)
    if not isinstance(u, ScalarNode):
        u = tape.const(float(u))
    return tape, u, grad_nodes(u, xs)
