"""Operation codes shared by the pure-Python and compiled tape cores."""

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
# Internal ops emitted by derivative rules; both have zero derivative.
STEP = 13
SIGN = 14

OP_NAMES = {
    LEAF: "leaf",
    CONST: "const",
    ADD: "add",
    MUL: "mul",
    TANH: "tanh",
    RELU: "relu",
    EXP: "exp",
    SIN: "sin",
    COS: "cos",
    LOG: "log",
    SQRT: "sqrt",
    ABS: "abs",
    POW: "power",
    STEP: "step",
    SIGN: "sign",
}
OP_CODES = {name: code for code, name in OP_NAMES.items()}

UNARY = frozenset({TANH, RELU, EXP, SIN, COS, LOG, SQRT, ABS, POW, STEP, SIGN})
BINARY = frozenset({ADD, MUL})
