"""Dense float64 tensor with a reverse-mode gradient graph."""

import numpy as np

from ..errors import NumericFailure, ShapeError


class Tensor:
    """N-dimensional float64 array that records how it was produced.

    Leaves are created directly; non-leaf tensors carry the primitive that
    produced them (``op``), their inputs (``parents``) and a backward rule
    mapping the output gradient to one gradient per parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = ()
        self.backward_fn = None
        self.op = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError("item", f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; everything routes through registered primitives
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_lift(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, factor=-1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _lift(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def make_node(op, data, parents, backward_fn):
    """Wrap a primitive's output; attach the backward rule if any input needs it."""
    if not np.all(np.isfinite(data)):
        raise NumericFailure(f"{op}: non-finite output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.parents = ()
        out.backward_fn = None
    return out


def _topological_order(root):
    order, state = [], {}
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise RuntimeError("cycle detected in gradient graph")
        state[key] = 1
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and state.get(id(parent)) != 2:
                if state.get(id(parent)) == 1:
                    raise RuntimeError("cycle detected in gradient graph")
                stack.append((parent, False))
    return order


def backward(loss):
    """Back-propagate from a scalar ``loss``.

    Returns a dict mapping every leaf tensor with ``requires_grad`` to its
    gradient (a Tensor of the leaf's shape). Gradients are also accumulated
    into ``leaf.grad`` as numpy arrays. A tensor used several times receives
    the sum of its contributions.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            leaves[id(node)] = (node, g)
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    result = {}
    for node, g in leaves.values():
        node.grad = g.copy() if node.grad is None else node.grad + g
        result[node] = Tensor(g)
    return result
