"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

Every operator produces a :class:`Node`. While a :class:`Tape` is active,
nodes that depend on a trainable :class:`Parameter` are appended to it in
creation order, which is already a topological order, so backward is a
single reverse sweep.
"""
import threading

import numpy as np

# operator tag -> rule(node, upstream_grad) -> tuple of parent grads (or None)
RULES = {}

_local = threading.local()


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def register(tag):
    def deco(fn):
        RULES[tag] = fn
        return fn
    return deco


def as_array(x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(())
    return arr


class Node:
    """A value in the computation record.

    ``grad`` is filled in by :meth:`Tape.backward`: accumulated for leaves,
    overwritten for intermediate nodes.
    """

    __slots__ = ("value", "grad", "parents", "rule", "ctx", "requires_grad", "name")

    def __init__(self, value, parents=(), rule=None, ctx=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.rule = rule
        self.ctx = ctx
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self.rule is None

    def __repr__(self):
        tag = self.name or self.rule or "const"
        return f"Node({tag}, shape={self.value.shape})"

    # operator sugar; imported lazily to avoid a cycle with ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __truediv__(self, c):
        from . import ops
        return ops.scale(self, 1.0 / float(c))


class Parameter(Node):
    """Trainable leaf. Its gradient slot is zero-initialised and accumulates."""

    __slots__ = ()

    def __init__(self, value, name=None):
        value = np.array(value, dtype=np.float64)
        super().__init__(value, requires_grad=True, name=name)
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad.fill(0.0)


def const(x):
    if isinstance(x, Node):
        return x
    return Node(as_array(x))


class Tape:
    """Explicit recording context.

    >>> with Tape() as tape:
    ...     loss = f(params)
    >>> tape.backward(loss)
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def backward(self, loss):
        if loss.value.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        pending = {loss: np.ones_like(loss.value)}
        loss.grad = pending[loss]
        for node in reversed(self.nodes):
            g = pending.pop(node, None)
            if g is None:
                continue
            node.grad = g
            parent_grads = RULES[node.rule](node, g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent in pending:
                    pending[parent] = pending[parent] + pg
                else:
                    pending[parent] = pg
        # leaves get one summed contribution per sweep, so a repeated
        # backward adds exactly the same array again
        for node, g in pending.items():
            if node.rule is None:
                node.grad += g


def active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def make(value, parents, rule, ctx=None):
    """Create an operator output and record it on the active tape if needed."""
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    if not needs:
        return Node(value)
    node = Node(value, parents, rule, ctx, requires_grad=True)
    tape.nodes.append(node)
    return node
