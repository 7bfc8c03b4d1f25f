"""Array-valued dual numbers for forward-mode directional derivatives."""

import numpy as np


class Dual:
    """value + tangent pair of equally shaped arrays (or scalars)."""

    __slots__ = ("val", "dot")
    __array_priority__ = 100  # keep ndarray.__mul__ from consuming us

    def __init__(self, val, dot=None):
        self.val = np.asarray(val, dtype=float)
        self.dot = np.zeros_like(self.val) if dot is None else np.asarray(dot, dtype=float)
        if self.dot.shape != self.val.shape:
            raise ValueError("value and tangent shapes differ")

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot + np.zeros_like(np.asarray(other, dtype=float)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, self.dot + np.zeros_like(np.asarray(other, dtype=float)))

    def __rsub__(self, other):
        return Dual(other - self.val, np.zeros_like(np.asarray(other, dtype=float)) - self.dot)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val / other.val,
                        (self.dot * other.val - self.val * other.dot) / (other.val ** 2))
        return Dual(self.val / other, self.dot / other)

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.dot[idx])

    def reshape(self, *shape):
        return Dual(self.val.reshape(*shape), self.dot.reshape(*shape))

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self):
        return f"Dual(val={self.val!r}, dot={self.dot!r})"


def lift(x):
    """Wrap a constant as a zero-tangent Dual."""
    return x if isinstance(x, Dual) else Dual(np.asarray(x, dtype=float))


def matmul(a, b):
    a, b = lift(a), lift(b)
    return Dual(a.val @ b.val, a.dot @ b.val + a.val @ b.dot)


def dsum(a, axis=None):
    return Dual(np.sum(a.val, axis=axis), np.sum(a.dot, axis=axis))


def dot(a, b):
    a, b = lift(a), lift(b)
    return Dual(a.val @ b.val, a.dot @ b.val + a.val @ b.dot)


def sin(a):
    a = lift(a)
    return Dual(np.sin(a.val), np.cos(a.val) * a.dot)


def cos(a):
    a = lift(a)
    return Dual(np.cos(a.val), -np.sin(a.val) * a.dot)


def sqrt(a):
    a = lift(a)
    root = np.sqrt(a.val)
    return Dual(root, a.dot / (2.0 * root))


def stack(items, axis=0):
    return Dual(np.stack([d.val for d in items], axis=axis),
                np.stack([d.dot for d in items], axis=axis))


def where(cond, a, b):
    a, b = lift(a), lift(b)
    return Dual(np.where(cond, a.val, b.val), np.where(cond, a.dot, b.dot))
