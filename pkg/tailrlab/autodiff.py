"""
Dense double precision tensors with reverse-mode differentiation.

Graphs are built per evaluation and discarded. A Node holds an immutable Tensor value,
its parents and the rule that maps the upstream gradient onto each parent. Gradients are
materialized lazily on backward().
"""
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

Number = Union[int, float]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class AutodiffError(Exception):
    """
    Base error for graph construction and evaluation failures.
    """


class ShapeMismatchError(AutodiffError):
    """
    Error raised when operand shapes are incompatible for an operation.
    """

    def __init__(self, op: str, left_shape: Tuple[int, ...], right_shape: Tuple[int, ...]):
        self.op = op
        self.left_shape = tuple(left_shape)
        self.right_shape = tuple(right_shape)

    def __str__(self):
        return f'Operation {self.op} cannot combine shapes {self.left_shape} and {self.right_shape}.'


class NonFiniteError(AutodiffError):
    """
    Error raised when an operation produces (or receives) non-finite values.
    """

    def __init__(self, op: str, detail: str = 'result contains nan or inf'):
        self.op = op
        self.detail = detail

    def __str__(self):
        return f'Operation {self.op} produced non-finite values: {self.detail}.'


class Tensor:
    """
    Immutable row-major array of float64 values.
    """

    __slots__ = ('_values',)

    def __init__(self, values):
        array = np.array(values, dtype=np.float64)
        array.setflags(write=False)
        self._values = array

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._values.shape

    @property
    def size(self) -> int:
        return self._values.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeMismatchError('item', self.shape, ())
        return float(self._values.reshape(-1)[0])

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> 'Tensor':
        return cls(np.zeros(tuple(shape)))

    def __repr__(self):
        return f'Tensor(shape={self.shape})'


class Node:
    """
    A value in a differentiation graph.

    Leaves created with requires_grad=True are parameters; leaves without it are constants.
    When stop_gradient is set, upstream gradients stop at this node.
    """

    def __init__(self,
                 value,
                 parents: Sequence['Node'] = (),
                 backward: Optional[BackwardRule] = None,
                 requires_grad: Optional[bool] = None,
                 stop_gradient: bool = False,
                 op: str = 'leaf'):
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.parents = tuple(parents)
        self.backward_rule = backward
        self.stop_gradient = stop_gradient
        self.op = op
        if requires_grad is None:
            requires_grad = (not stop_gradient) and any(parent.requires_grad for parent in self.parents)
        self.requires_grad = requires_grad
        self._grad: Optional[np.ndarray] = None

    @property
    def data(self) -> np.ndarray:
        return self.value.values

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def gradient(self) -> Tensor:
        if self._grad is None:
            return Tensor.zeros(self.shape)
        return Tensor(self._grad)

    def zero_grad(self):
        self._grad = None

    def _accumulate(self, grad: np.ndarray):
        if self._grad is None:
            self._grad = np.array(grad, dtype=np.float64).reshape(self.shape)
        else:
            self._grad = self._grad + grad

    def backward(self):
        """
        Back-propagates from this scalar node through the graph. Each node is visited once,
        so shared subgraphs accumulate correctly.
        """
        if self.value.size != 1:
            raise ShapeMismatchError('backward', self.shape, ())

        order = _topological_order(self)
        self._grad = np.ones(self.shape)
        for node in reversed(order):
            if node._grad is None or node.backward_rule is None or node.stop_gradient:
                continue
            parent_grads = node.backward_rule(node._grad)
            for parent, grad in zip(node.parents, parent_grads):
                if grad is not None and parent.requires_grad:
                    parent._accumulate(grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f'Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})'


def parameter(values) -> Node:
    return Node(values, requires_grad=True)


def constant(values) -> Node:
    return Node(values, requires_grad=False)


def _as_node(value: Union[Node, Number, np.ndarray]) -> Node:
    return value if isinstance(value, Node) else constant(value)


def _topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _checked(op: str, values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(op)
    return values


def _is_scalar(shape: Tuple[int, ...]) -> bool:
    return int(np.prod(shape, dtype=np.int64)) == 1


def _broadcast_shapes(op: str, a: Node, b: Node) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if _is_scalar(b.shape):
        return a.shape
    if _is_scalar(a.shape):
        return b.shape
    raise ShapeMismatchError(op, a.shape, b.shape)


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _binary(op: str, a, b, forward, grads) -> Node:
    a, b = _as_node(a), _as_node(b)
    _broadcast_shapes(op, a, b)
    x, y = a.data, b.data
    if _is_scalar(x.shape) and x.shape != y.shape:
        x = x.reshape(())
    if _is_scalar(y.shape) and x.shape != y.shape:
        y = y.reshape(())
    with np.errstate(all='ignore'):
        out = _checked(op, forward(x, y))

    def backward(g):
        ga, gb = grads(g, x, y, out)
        return (_reduce_to(ga, a.shape) if ga is not None else None,
                _reduce_to(gb, b.shape) if gb is not None else None)

    return Node(out, parents=(a, b), backward=backward, op=op)


def add(a, b) -> Node:
    return _binary('add', a, b, np.add, lambda g, x, y, out: (g * np.ones_like(x), g * np.ones_like(y)))


def sub(a, b) -> Node:
    return _binary('sub', a, b, np.subtract, lambda g, x, y, out: (g * np.ones_like(x), -g * np.ones_like(y)))


def mul(a, b) -> Node:
    return _binary('mul', a, b, np.multiply, lambda g, x, y, out: (g * y, g * x))


def div(a, b) -> Node:
    return _binary('div', a, b, np.divide, lambda g, x, y, out: (g / y, -g * x / (y * y)))


def _unary(op: str, a, forward, grad) -> Node:
    a = _as_node(a)
    x = a.data
    with np.errstate(all='ignore'):
        out = _checked(op, forward(x))
    return Node(out, parents=(a,), backward=lambda g: (grad(g, x, out),), op=op)


def neg(a) -> Node:
    return _unary('neg', a, np.negative, lambda g, x, out: -g)


def log(a) -> Node:
    return _unary('log', a, np.log, lambda g, x, out: g / x)


def exp(a) -> Node:
    return _unary('exp', a, np.exp, lambda g, x, out: g * out)


def tanh(a) -> Node:
    return _unary('tanh', a, np.tanh, lambda g, x, out: g * (1.0 - out * out))


def sigmoid(a) -> Node:
    return _unary('sigmoid', a, expit, lambda g, x, out: g * out * (1.0 - out))


def maximum(a, bound: float) -> Node:
    """
    Elementwise max(a, bound) with a constant bound. Gradient passes only where a > bound,
    so ties go to the constant branch.
    """
    return _unary('max', a, lambda x: np.maximum(x, bound), lambda g, x, out: g * (x > bound))


_ELEMENTWISE = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'div': div,
    'log': log,
    'exp': exp,
    'neg': neg,
    'max': maximum,
    'tanh': tanh,
    'sigmoid': sigmoid,
}


def elementwise(op: str, a, b=None) -> Node:
    """
    Applies a registered elementwise operation by tag. Binary tags need b; for 'max'
    b is the constant bound.
    """
    try:
        function = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f'Unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}')
    if op in ('add', 'sub', 'mul', 'div', 'max'):
        if b is None:
            raise ValueError(f'Elementwise op {op!r} needs a second operand')
        return function(a, b)
    return function(a)


def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError('matmul', a.shape, b.shape)
    x, y = a.data, b.data
    out = _checked('matmul', x @ y)
    return Node(out, parents=(a, b), backward=lambda g: (g @ y.T, x.T @ g), op='matmul')


def add_bias(a, bias) -> Node:
    """
    Adds a length-n bias to every row of an m x n matrix.
    """
    a, bias = _as_node(a), _as_node(bias)
    if len(a.shape) != 2 or bias.shape != (a.shape[1],):
        raise ShapeMismatchError('add_bias', a.shape, bias.shape)
    out = _checked('add_bias', a.data + bias.data)
    return Node(out, parents=(a, bias), backward=lambda g: (g, g.sum(axis=0)), op='add_bias')


def take_rows(a, indices: Sequence[int]) -> Node:
    """
    Gathers rows of a matrix (embedding lookup, row permutation). Backward scatter-adds.
    """
    a = _as_node(a)
    index = np.asarray(indices, dtype=np.int64)
    if len(a.shape) != 2:
        raise ShapeMismatchError('take_rows', a.shape, index.shape)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f'Row index out of range for matrix with {a.shape[0]} rows')
    out = a.data[index]

    def backward(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, index, g)
        return (grad,)

    return Node(out, parents=(a,), backward=backward, op='take_rows')


def slice_rows(a, start: int, stop: int) -> Node:
    a = _as_node(a)
    out = a.data[start:stop]

    def backward(g):
        grad = np.zeros(a.shape)
        grad[start:stop] = g
        return (grad,)

    return Node(out, parents=(a,), backward=backward, op='slice_rows')


def concat_rows(nodes: Sequence[Node]) -> Node:
    nodes = [_as_node(node) for node in nodes]
    widths = {node.shape[1:] for node in nodes}
    if len(widths) != 1:
        raise ShapeMismatchError('concat_rows', nodes[0].shape, nodes[-1].shape)
    out = np.concatenate([node.data for node in nodes], axis=0)
    bounds = np.cumsum([0] + [node.shape[0] for node in nodes])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(nodes)))

    return Node(out, parents=nodes, backward=backward, op='concat_rows')


def pick(a, indices: Sequence[int]) -> Node:
    """
    Selects one entry per row: out[i] = a[i, indices[i]].
    """
    a = _as_node(a)
    index = np.asarray(indices, dtype=np.int64)
    if len(a.shape) != 2 or index.shape != (a.shape[0],):
        raise ShapeMismatchError('pick', a.shape, index.shape)
    rows = np.arange(a.shape[0])
    out = a.data[rows, index]

    def backward(g):
        grad = np.zeros(a.shape)
        grad[rows, index] = g
        return (grad,)

    return Node(out, parents=(a,), backward=backward, op='pick')


def reshape(a, shape: Sequence[int]) -> Node:
    a = _as_node(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.value.size:
        raise ShapeMismatchError('reshape', a.shape, shape)
    out = a.data.reshape(shape)
    return Node(out, parents=(a,), backward=lambda g: (g.reshape(a.shape),), op='reshape')


def total(a) -> Node:
    a = _as_node(a)
    out = np.asarray(a.data.sum())
    return Node(out, parents=(a,), backward=lambda g: (np.full(a.shape, float(g)),), op='sum')


def mean(a) -> Node:
    a = _as_node(a)
    return div(total(a), float(a.value.size))


def softmax_log_probs(logits) -> Node:
    """
    Log-softmax over the last axis (a vector, or each row of a matrix), stabilized by
    max-subtraction.
    """
    logits = _as_node(logits)
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NonFiniteError('softmax_log_probs', 'logits must be finite')
    out = x - logsumexp(x, axis=-1, keepdims=True)
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return Node(out, parents=(logits,), backward=backward, op='softmax_log_probs')


def stop_gradient(a) -> Node:
    """
    Identity on values; blocks every gradient contribution towards a.
    """
    a = _as_node(a)
    return Node(a.value, parents=(a,), backward=lambda g: (None,), stop_gradient=True, op='stop_gradient')


def gradients(output: Node, inputs: Iterable[Node]) -> List[np.ndarray]:
    """
    Runs backward from output and returns the gradient arrays of the given leaves.
    """
    inputs = list(inputs)
    for node in inputs:
        node.zero_grad()
    output.backward()
    return [node.gradient.values for node in inputs]


def finite_diff_check(f: Callable[[Node], Node], point, eps: float = 1e-5) -> float:
    """
    Compares the AD gradient of a scalar function against central differences.

    :param f: Function building a scalar node from its input node
    :param point: Where to evaluate
    :param eps: Half-width of the central difference
    :return: max over coordinates of |AD - FD| / (|FD| + 1e-12)
    """
    base = np.array(point, dtype=np.float64)
    x = parameter(base)
    f(x).backward()
    analytic = x.gradient.values.reshape(-1)

    numeric = np.empty(base.size)
    flat = base.reshape(-1)
    for i in range(flat.size):
        shifted = flat.copy()
        shifted[i] = flat[i] + eps
        upper = f(constant(shifted.reshape(base.shape))).value.item()
        shifted[i] = flat[i] - eps
        lower = f(constant(shifted.reshape(base.shape))).value.item()
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteError('finite_diff_check', f'evaluation at coordinate {i}')
        numeric[i] = (upper - lower) / (2.0 * eps)

    errors = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)
    return float(errors.max()) if errors.size else 0.0
