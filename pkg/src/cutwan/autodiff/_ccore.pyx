# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tape core: same interface as ``_pycore.TapeCore`` over C arrays."""
from libc.math cimport tanh, exp, sin, cos, log, sqrt, fabs, pow, isnan, copysign, INFINITY, NAN
from libc.stdlib cimport malloc, realloc, free

cdef enum:
    LEAF = 0
    CONST = 1
    ADD = 2
    MUL = 3
    TANH = 4
    RELU = 5
    EXP = 6
    SIN = 7
    COS = 8
    LOG = 9
    SQRT = 10
    ABS = 11
    POW = 12
    STEP = 13
    SIGN = 14


cdef inline double _apply(int op, double a, double b, double aux) nogil:
    if op == ADD:
        return a + b
    elif op == MUL:
        return a * b
    elif op == TANH:
        return tanh(a)
    elif op == RELU:
        return a if a > 0.0 else 0.0
    elif op == EXP:
        return exp(a)
    elif op == SIN:
        return sin(a)
    elif op == COS:
        return cos(a)
    elif op == LOG:
        if a > 0.0:
            return log(a)
        return -INFINITY if a == 0.0 else NAN
    elif op == SQRT:
        return sqrt(a) if a >= 0.0 else NAN
    elif op == ABS:
        return fabs(a)
    elif op == POW:
        return pow(a, aux)
    elif op == STEP:
        return 1.0 if a > 0.0 else 0.0
    elif op == SIGN:
        return <double>((a > 0.0) - (a < 0.0))
    return NAN


cdef class TapeCore:
    """Append-only node store with symbolic reverse sweep."""

    cdef int *_op
    cdef Py_ssize_t *_a
    cdef Py_ssize_t *_b
    cdef double *_aux
    cdef double *_val
    cdef Py_ssize_t _n
    cdef Py_ssize_t _cap
    cdef dict _consts
    cdef public Py_ssize_t first_nan

    backend = "cython"

    def __cinit__(self):
        self._cap = 1024
        self._n = 0
        self._op = <int *> malloc(self._cap * sizeof(int))
        self._a = <Py_ssize_t *> malloc(self._cap * sizeof(Py_ssize_t))
        self._b = <Py_ssize_t *> malloc(self._cap * sizeof(Py_ssize_t))
        self._aux = <double *> malloc(self._cap * sizeof(double))
        self._val = <double *> malloc(self._cap * sizeof(double))
        if not (self._op and self._a and self._b and self._aux and self._val):
            raise MemoryError()
        self._consts = {}
        self.first_nan = -1

    def __dealloc__(self):
        free(self._op)
        free(self._a)
        free(self._b)
        free(self._aux)
        free(self._val)

    def __len__(self):
        return self._n

    cdef void _grow(self) except *:
        cdef Py_ssize_t cap = self._cap * 2
        cdef int *op = <int *> realloc(self._op, cap * sizeof(int))
        if not op:
            raise MemoryError()
        self._op = op
        cdef Py_ssize_t *a = <Py_ssize_t *> realloc(self._a, cap * sizeof(Py_ssize_t))
        if not a:
            raise MemoryError()
        self._a = a
        cdef Py_ssize_t *b = <Py_ssize_t *> realloc(self._b, cap * sizeof(Py_ssize_t))
        if not b:
            raise MemoryError()
        self._b = b
        cdef double *aux = <double *> realloc(self._aux, cap * sizeof(double))
        if not aux:
            raise MemoryError()
        self._aux = aux
        cdef double *val = <double *> realloc(self._val, cap * sizeof(double))
        if not val:
            raise MemoryError()
        self._val = val
        self._cap = cap

    cdef Py_ssize_t _append(self, int op, Py_ssize_t a, Py_ssize_t b, double aux, double val) except -1:
        if self._n == self._cap:
            self._grow()
        cdef Py_ssize_t i = self._n
        self._op[i] = op
        self._a[i] = a
        self._b[i] = b
        self._aux[i] = aux
        self._val[i] = val
        self._n += 1
        if self.first_nan < 0 and isnan(val):
            self.first_nan = i
        return i

    cdef Py_ssize_t _push(self, int op, Py_ssize_t a, Py_ssize_t b, double aux) except -1:
        cdef double vb = self._val[b] if b >= 0 else 0.0
        return self._append(op, a, b, aux, _apply(op, self._val[a], vb, aux))

    cdef Py_ssize_t _const(self, double value) except -1:
        key = (value, copysign(1.0, value))
        i = self._consts.get(key)
        if i is None or isnan(value):
            i = self._append(CONST, -1, -1, value, value)
            self._consts[key] = i
        return i

    def push_leaf(self, double value):
        return self._append(LEAF, -1, -1, 0.0, value)

    def push_const(self, double value):
        return self._const(value)

    def push(self, int op, Py_ssize_t a, Py_ssize_t b=-1, double aux=0.0):
        if op == ADD or op == MUL:
            if not (0 <= a < self._n and 0 <= b < self._n):
                raise IndexError("parent id out of range")
        elif TANH <= op <= SIGN:
            if not 0 <= a < self._n:
                raise IndexError("parent id out of range")
            b = -1
        else:
            raise ValueError(f"op code {op} cannot be pushed")
        return self._push(op, a, b, aux)

    def value(self, Py_ssize_t i):
        if not 0 <= i < self._n:
            raise IndexError("node id out of range")
        return self._val[i]

    def values(self):
        return [self._val[i] for i in range(self._n)]

    def op(self, Py_ssize_t i):
        if not 0 <= i < self._n:
            raise IndexError("node id out of range")
        return self._op[i]

    def parents(self, Py_ssize_t i):
        if not 0 <= i < self._n:
            raise IndexError("node id out of range")
        if self._a[i] < 0:
            return ()
        if self._b[i] < 0:
            return (self._a[i],)
        return (self._a[i], self._b[i])

    def aux(self, Py_ssize_t i):
        return self._aux[i]

    def replay(self, leaf_values):
        cdef Py_ssize_t i
        cdef int o
        for k, v in leaf_values.items():
            if not 0 <= k < self._n or self._op[k] != LEAF:
                raise ValueError(f"node {k} is not a leaf")
            self._val[k] = v
        self.first_nan = -1
        for i in range(self._n):
            o = self._op[i]
            if o != LEAF and o != CONST:
                self._val[i] = _apply(o, self._val[self._a[i]],
                                      self._val[self._b[i]] if self._b[i] >= 0 else 0.0,
                                      self._aux[i])
            if self.first_nan < 0 and isnan(self._val[i]):
                self.first_nan = i

    def backward_values(self, Py_ssize_t root):
        if not 0 <= root < self._n:
            raise IndexError("root id out of range")
        cdef double *adj = <double *> malloc((root + 1) * sizeof(double))
        if not adj:
            raise MemoryError()
        cdef Py_ssize_t i, a, b
        cdef double g, x, p
        cdef int o
        try:
            for i in range(root + 1):
                adj[i] = 0.0
            adj[root] = 1.0
            for i in range(root, -1, -1):
                g = adj[i]
                if g == 0.0:
                    continue
                o = self._op[i]
                if o == LEAF or o == CONST:
                    continue
                a = self._a[i]
                x = self._val[a]
                if o == ADD:
                    adj[a] += g
                    adj[self._b[i]] += g
                elif o == MUL:
                    b = self._b[i]
                    adj[a] += g * self._val[b]
                    adj[b] += g * x
                elif o == TANH:
                    adj[a] += g * (1.0 - self._val[i] * self._val[i])
                elif o == RELU:
                    if x > 0.0:
                        adj[a] += g
                elif o == EXP:
                    adj[a] += g * self._val[i]
                elif o == SIN:
                    adj[a] += g * cos(x)
                elif o == COS:
                    adj[a] -= g * sin(x)
                elif o == LOG:
                    adj[a] += g / x
                elif o == SQRT:
                    adj[a] += g * 0.5 / self._val[i]
                elif o == ABS:
                    adj[a] += g * ((x > 0.0) - (x < 0.0))
                elif o == POW:
                    p = self._aux[i]
                    adj[a] += g * p * pow(x, p - 1.0)
            return [adj[i] for i in range(root + 1)]
        finally:
            free(adj)

    def emit_grad(self, Py_ssize_t root, wrt):
        if not 0 <= root < self._n:
            raise IndexError("root id out of range")
        cdef Py_ssize_t m = root + 1
        cdef char *rel = <char *> malloc(m)
        cdef Py_ssize_t *adj = <Py_ssize_t *> malloc(m * sizeof(Py_ssize_t))
        if not rel or not adj:
            free(rel)
            free(adj)
            raise MemoryError()
        cdef char *dep
        cdef Py_ssize_t i, a, b, g, d, c
        cdef int o
        cdef double p
        wrt = list(wrt)
        try:
            # ancestors of root
            for i in range(m):
                rel[i] = 0
                adj[i] = -1
            rel[root] = 1
            for i in range(root, -1, -1):
                if rel[i]:
                    if self._a[i] >= 0:
                        rel[self._a[i]] = 1
                    if self._b[i] >= 0:
                        rel[self._b[i]] = 1
            # intersect with descendants of wrt (dep stored in adj temporarily as 0/1)
            dep = <char *> malloc(m)
            if not dep:
                raise MemoryError()
            try:
                for i in range(m):
                    dep[i] = 0
                for w in wrt:
                    if 0 <= w < m:
                        dep[w] = 1
                for i in range(m):
                    o = self._op[i]
                    if dep[i] or o == LEAF or o == CONST:
                        continue
                    if (self._a[i] >= 0 and dep[self._a[i]]) or (self._b[i] >= 0 and dep[self._b[i]]):
                        dep[i] = 1
                for i in range(m):
                    rel[i] = rel[i] and dep[i]
            finally:
                free(dep)

            adj[root] = self._const(1.0)
            for i in range(root, -1, -1):
                if not rel[i]:
                    continue
                g = adj[i]
                if g < 0:
                    continue
                o = self._op[i]
                if o == LEAF or o == CONST:
                    continue
                a = self._a[i]
                if o == ADD:
                    b = self._b[i]
                    if rel[a]:
                        adj[a] = g if adj[a] < 0 else self._push(ADD, adj[a], g, 0.0)
                    if rel[b]:
                        adj[b] = g if adj[b] < 0 else self._push(ADD, adj[b], g, 0.0)
                    continue
                if o == MUL:
                    b = self._b[i]
                    if rel[a]:
                        c = self._push(MUL, g, b, 0.0)
                        adj[a] = c if adj[a] < 0 else self._push(ADD, adj[a], c, 0.0)
                    if rel[b]:
                        c = self._push(MUL, g, a, 0.0)
                        adj[b] = c if adj[b] < 0 else self._push(ADD, adj[b], c, 0.0)
                    continue
                if not rel[a]:
                    continue
                if o == TANH:
                    d = self._push(MUL, i, i, 0.0)
                    d = self._push(ADD, self._const(1.0), self._push(MUL, self._const(-1.0), d, 0.0), 0.0)
                elif o == RELU:
                    d = self._push(STEP, a, -1, 0.0)
                elif o == EXP:
                    d = i
                elif o == SIN:
                    d = self._push(COS, a, -1, 0.0)
                elif o == COS:
                    d = self._push(MUL, self._const(-1.0), self._push(SIN, a, -1, 0.0), 0.0)
                elif o == LOG:
                    d = self._push(POW, a, -1, -1.0)
                elif o == SQRT:
                    d = self._push(MUL, self._const(0.5), self._push(POW, i, -1, -1.0), 0.0)
                elif o == ABS:
                    d = self._push(SIGN, a, -1, 0.0)
                elif o == POW:
                    p = self._aux[i]
                    if p == 1.0:
                        d = self._const(1.0)
                    else:
                        d = self._push(MUL, self._const(p), self._push(POW, a, -1, p - 1.0), 0.0)
                else:
                    continue
                c = self._push(MUL, g, d, 0.0)
                adj[a] = c if adj[a] < 0 else self._push(ADD, adj[a], c, 0.0)

            out = []
            for w in wrt:
                if 0 <= w < m and adj[w] >= 0:
                    out.append(adj[w])
                else:
                    out.append(self._const(0.0))
            return out
        finally:
            free(rel)
            free(adj)
