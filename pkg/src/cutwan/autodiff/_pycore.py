"""Pure-Python tape core.

Nodes live in parallel lists indexed by node id. The compiled core in
``_ccore.pyx`` implements the same interface over C arrays.
"""
import math

from ._ops import (
    ABS, ADD, BINARY, CONST, COS, EXP, LEAF, LOG, MUL, POW, RELU, SIGN, SIN,
    SQRT, STEP, TANH, UNARY,
)


def _apply(op, a, b, aux):
    if op == ADD:
        return a + b
    if op == MUL:
        return a * b
    if op == TANH:
        return math.tanh(a)
    if op == RELU:
        return a if a > 0.0 else 0.0
    if op == EXP:
        try:
            return math.exp(a)
        except OverflowError:
            return math.inf
    if op == SIN:
        return math.sin(a) if math.isfinite(a) else math.nan
    if op == COS:
        return math.cos(a) if math.isfinite(a) else math.nan
    if op == LOG:
        if a > 0.0:
            return math.log(a)
        return -math.inf if a == 0.0 else math.nan
    if op == SQRT:
        return math.sqrt(a) if a >= 0.0 else math.nan
    if op == ABS:
        return abs(a)
    if op == POW:
        try:
            r = a ** aux
        except ZeroDivisionError:
            return math.inf
        except OverflowError:
            return math.inf
        return r if isinstance(r, float) else math.nan
    if op == STEP:
        return 1.0 if a > 0.0 else 0.0
    if op == SIGN:
        return (a > 0.0) - (a < 0.0) + 0.0
    raise ValueError(f"unknown op code {op}")


class TapeCore:
    """Append-only node store with symbolic reverse sweep."""

    backend = "python"

    def __init__(self):
        self._op = []
        self._a = []
        self._b = []
        self._aux = []
        self._val = []
        self._consts = {}
        self.first_nan = -1

    def __len__(self):
        return len(self._op)

    def _append(self, op, a, b, aux, val):
        i = len(self._op)
        self._op.append(op)
        self._a.append(a)
        self._b.append(b)
        self._aux.append(aux)
        self._val.append(val)
        if self.first_nan < 0 and val != val:
            self.first_nan = i
        return i

    def push_leaf(self, value):
        return self._append(LEAF, -1, -1, 0.0, float(value))

    def push_const(self, value):
        value = float(value)
        key = (value, math.copysign(1.0, value))
        i = self._consts.get(key)
        if i is None or value != value:
            i = self._append(CONST, -1, -1, value, value)
            self._consts[key] = i
        return i

    def push(self, op, a, b=-1, aux=0.0):
        n = len(self._op)
        if op in BINARY:
            if not (0 <= a < n and 0 <= b < n):
                raise IndexError("parent id out of range")
            val = _apply(op, self._val[a], self._val[b], aux)
        elif op in UNARY:
            if not 0 <= a < n:
                raise IndexError("parent id out of range")
            b = -1
            val = _apply(op, self._val[a], 0.0, aux)
        else:
            raise ValueError(f"op code {op} cannot be pushed")
        return self._append(op, a, b, float(aux), val)

    def value(self, i):
        return self._val[i]

    def values(self):
        return list(self._val)

    def op(self, i):
        return self._op[i]

    def parents(self, i):
        a, b = self._a[i], self._b[i]
        if a < 0:
            return ()
        if b < 0:
            return (a,)
        return (a, b)

    def aux(self, i):
        return self._aux[i]

    def replay(self, leaf_values):
        """Recompute every node with new values for the given leaf ids."""
        op, pa, pb, aux, val = self._op, self._a, self._b, self._aux, self._val
        for k, v in leaf_values.items():
            if not 0 <= k < len(op) or op[k] != LEAF:
                raise ValueError(f"node {k} is not a leaf")
            val[k] = float(v)
        self.first_nan = -1
        for i in range(len(op)):
            o = op[i]
            if o != LEAF and o != CONST:
                val[i] = _apply(o, val[pa[i]], val[pb[i]] if pb[i] >= 0 else 0.0, aux[i])
            if self.first_nan < 0 and val[i] != val[i]:
                self.first_nan = i

    def _relevant(self, root, wrt):
        op, pa, pb = self._op, self._a, self._b
        needed = [False] * (root + 1)
        needed[root] = True
        for i in range(root, -1, -1):
            if needed[i]:
                if pa[i] >= 0:
                    needed[pa[i]] = True
                if pb[i] >= 0:
                    needed[pb[i]] = True
        dep = [False] * (root + 1)
        wrt_set = set(wrt)
        for i in range(root + 1):
            if i in wrt_set:
                dep[i] = True
            elif op[i] not in (LEAF, CONST):
                dep[i] = (pa[i] >= 0 and dep[pa[i]]) or (pb[i] >= 0 and dep[pb[i]])
        return [n and d for n, d in zip(needed, dep)]

    def backward_values(self, root):
        """Numeric adjoints d(root)/d(node) for nodes 0..root (first order only)."""
        op, pa, pb, aux, val = self._op, self._a, self._b, self._aux, self._val
        adj = [0.0] * (root + 1)
        adj[root] = 1.0
        for i in range(root, -1, -1):
            g = adj[i]
            if g == 0.0:
                continue
            o = op[i]
            if o == LEAF or o == CONST:
                continue
            a = pa[i]
            x = val[a]
            if o == ADD:
                adj[a] += g
                adj[pb[i]] += g
            elif o == MUL:
                b = pb[i]
                adj[a] += g * val[b]
                adj[b] += g * x
            elif o == TANH:
                adj[a] += g * (1.0 - val[i] * val[i])
            elif o == RELU:
                if x > 0.0:
                    adj[a] += g
            elif o == EXP:
                adj[a] += g * val[i]
            elif o == SIN:
                adj[a] += g * math.cos(x)
            elif o == COS:
                adj[a] -= g * math.sin(x)
            elif o == LOG:
                adj[a] += g * _apply(POW, x, 0.0, -1.0)
            elif o == SQRT:
                adj[a] += g * 0.5 * _apply(POW, val[i], 0.0, -1.0)
            elif o == ABS:
                adj[a] += g * ((x > 0.0) - (x < 0.0))
            elif o == POW:
                p = aux[i]
                adj[a] += g * p * _apply(POW, x, 0.0, p - 1.0)
        return adj

    def emit_grad(self, root, wrt):
        """Append derivative nodes; return node ids of d(root)/d(w) for w in wrt."""
        n0 = len(self._op)
        if not 0 <= root < n0:
            raise IndexError("root id out of range")
        wrt = list(wrt)
        rel = self._relevant(root, wrt)
        op, pa, pb, aux = self._op, self._a, self._b, self._aux
        push, const = self.push, self.push_const
        adj = {root: const(1.0)}

        def acc(p, c):
            prev = adj.get(p)
            adj[p] = c if prev is None else push(ADD, prev, c)

        for i in range(root, -1, -1):
            if not rel[i]:
                continue
            g = adj.get(i)
            if g is None:
                continue
            o = op[i]
            if o == LEAF or o == CONST:
                continue
            a = pa[i]
            if o == ADD:
                b = pb[i]
                if rel[a]:
                    acc(a, g)
                if rel[b]:
                    acc(b, g)
                continue
            if o == MUL:
                b = pb[i]
                if rel[a]:
                    acc(a, push(MUL, g, b))
                if rel[b]:
                    acc(b, push(MUL, g, a))
                continue
            if not rel[a]:
                continue
            if o == TANH:
                sq = push(MUL, i, i)
                d = push(ADD, const(1.0), push(MUL, const(-1.0), sq))
            elif o == RELU:
                d = push(STEP, a)
            elif o == EXP:
                d = i
            elif o == SIN:
                d = push(COS, a)
            elif o == COS:
                d = push(MUL, const(-1.0), push(SIN, a))
            elif o == LOG:
                d = push(POW, a, -1, -1.0)
            elif o == SQRT:
                d = push(MUL, const(0.5), push(POW, i, -1, -1.0))
            elif o == ABS:
                d = push(SIGN, a)
            elif o == POW:
                p = aux[i]
                if p == 1.0:
                    d = const(1.0)
                else:
                    d = push(MUL, const(p), push(POW, a, -1, p - 1.0))
            else:  # STEP, SIGN: zero derivative
                continue
            acc(a, push(MUL, g, d))

        return [adj[w] if w in adj else const(0.0) for w in wrt]
