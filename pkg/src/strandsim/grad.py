"""Reverse-mode automatic differentiation over numpy arrays.

A Tape records an append-only list of array-valued nodes. Leaves are
registered with Tape.leaf; every op below accepts a mix of Value handles
and plain arrays/scalars, returning a Value when at least one input is
tracked and a plain ndarray otherwise (so energy code can run detached
through the exact same functions). backward() seeds a scalar loss with 1
and accumulates vector-Jacobian products in reverse topological order,
which is simply reverse insertion order.

Values are immutable views: never mutate an array after handing it to the
tape. Gradients of leaves that the loss does not depend on are exactly
zero. All arithmetic is float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

NORM_EPS = 1e-12


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple] = []  # tuple of (parent_idx, vjp) pairs
        self._grads: list[np.ndarray | None] | None = None

    def __len__(self) -> int:
        return len(self._values)

    def leaf(self, x) -> "Value":
        return self._record(np.asarray(x, dtype=np.float64), ())

    def _record(self, value: np.ndarray, parents: tuple) -> "Value":
        self._values.append(value)
        self._parents.append(parents)
        return Value(self, len(self._values) - 1)

    def backward(self, loss: "Value") -> None:
        """Accumulate d(loss)/d(node) for every node up to loss.

        loss must be a scalar-shaped Value recorded on this tape.
        """
        if not isinstance(loss, Value) or loss.tape is not self:
            raise NumericError("backward() needs a Value recorded on this tape")
        lval = self._values[loss.idx]
        if lval.size != 1:
            raise NumericError(f"loss must be scalar, got shape {lval.shape}")
        if not np.isfinite(lval):
            raise NumericError("loss is not finite")
        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[loss.idx] = np.ones_like(lval)
        for i in range(loss.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            for pidx, vjp in self._parents[i]:
                contrib = vjp(g)
                if grads[pidx] is None:
                    grads[pidx] = contrib
                else:
                    grads[pidx] = grads[pidx] + contrib
        self._grads = grads

    def grad(self, v: "Value") -> np.ndarray:
        if self._grads is None:
            raise NumericError("call backward() before grad()")
        g = self._grads[v.idx]
        if g is None:
            return np.zeros_like(self._values[v.idx])
        return g


class Value:
    """Handle to one node on a Tape."""

    __slots__ = ("tape", "idx")
    # keep numpy from elementwise-broadcasting over Value operands; binary
    # ops with ndarrays must dispatch to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.idx]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad(self)

    def detach(self) -> np.ndarray:
        """Drop out of the tape: returns the plain forward array."""
        return self.value

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
        return getitem(self, key)

    def __repr__(self):
        return f"Value(shape={self.value.shape}, idx={self.idx})"


def value_of(x) -> np.ndarray:
    """Plain ndarray of x whether tracked or not."""
    if isinstance(x, Value):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Value):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise NumericError("op mixes Values from two different tapes")
    return tape


def _emit(out: np.ndarray, pairs: Sequence[tuple]) -> "Value | np.ndarray":
    """pairs: (input, vjp) with vjp mapping out-grad to input-grad.

    Only Value inputs are recorded; constants contribute no parents.
    """
    tape = _tape_of(*[p[0] for p in pairs])
    if tape is None:
        return out
    parents = tuple((p.idx, vjp) for p, vjp in pairs if isinstance(p, Value))
    return tape._record(out, parents)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to shape (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _emit(av + bv, [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))])


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _emit(av - bv, [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(-g, bv.shape))])


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _emit(av * bv, [(a, lambda g: _unbroadcast(g * bv, av.shape)), (b, lambda g: _unbroadcast(g * av, bv.shape))])


def div(a, b):
    av, bv = value_of(a), value_of(b)
    if np.any(bv == 0.0):
        raise NumericError("div: zero denominator")
    out = av / bv
    return _emit(
        out,
        [
            (a, lambda g: _unbroadcast(g / bv, av.shape)),
            (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)),
        ],
    )


def neg(a):
    av = value_of(a)
    return _emit(-av, [(a, lambda g: -g)])


def sqrt(a):
    av = value_of(a)
    if np.any(av < 0.0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(av)
    return _emit(out, [(a, lambda g: g * (0.5 / np.maximum(out, NORM_EPS)))])


def pow3(a):
    """Elementwise cube; C2 at zero, which keeps penalty terms FD-friendly."""
    av = value_of(a)
    return _emit(av**3, [(a, lambda g: g * 3.0 * av * av)])


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    av, bv = value_of(a), value_of(b)
    take_a = av >= bv
    return _emit(
        np.where(take_a, av, bv),
        [
            (a, lambda g: _unbroadcast(g * take_a, av.shape)),
            (b, lambda g: _unbroadcast(g * ~take_a, bv.shape)),
        ],
    )


def leaky_relu(a, slope: float = 0.01):
    av = value_of(a)
    factor = np.where(av > 0.0, 1.0, slope)
    return _emit(av * factor, [(a, lambda g: g * factor)])


def where(cond: np.ndarray, a, b):
    """cond is a plain boolean array; gradients flow to the taken branch."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    return _emit(
        np.where(cond, av, bv),
        [
            (a, lambda g: _unbroadcast(g * cond, av.shape)),
            (b, lambda g: _unbroadcast(g * ~cond, bv.shape)),
        ],
    )


# ------------------------------------------------------------- reduce/shape


def vsum(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy() if np.ndim(g) == 0 else np.full(av.shape, g)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape).copy()

    return _emit(out, [(a, vjp)])


def reshape(a, shape):
    av = value_of(a)
    return _emit(av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def _key_has_duplicates(key) -> bool:
    """Integer-array indices may repeat elements; slices and masks cannot."""
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if isinstance(p, (list, np.ndarray)) and np.asarray(p).dtype != np.bool_:
            return True
    return False


def getitem(a, key):
    av = value_of(a)
    out = av[key]
    fancy = _key_has_duplicates(key)

    def vjp(g):
        z = np.zeros_like(av)
        if fancy:
            np.add.at(z, key, g)
        else:
            z[key] += g
        return z

    return _emit(out, [(a, vjp)])


def gather(a, index: np.ndarray):
    """Rows a[index] along the first axis; backward scatter-adds."""
    index = np.asarray(index)
    av = value_of(a)

    def vjp(g):
        z = np.zeros_like(av)
        np.add.at(z, index, g)
        return z

    return _emit(av[index], [(a, vjp)])


def scatter_add(a, index: np.ndarray, size: int):
    """out[i] = sum over j with index[j] == i of a[j]; first axis."""
    index = np.asarray(index)
    av = value_of(a)
    out = np.zeros((size,) + av.shape[1:], dtype=np.float64)
    np.add.at(out, index, av)
    return _emit(out, [(a, lambda g: g[index])])


def concat(parts: Sequence, axis: int = -1):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(k):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[k]), int(offsets[k + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return _emit(out, [(p, make_vjp(k)) for k, p in enumerate(parts)])


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise NumericError("matmul supports 2-D operands only")
    return _emit(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


# ------------------------------------------------------------------- vectors


def edge_diff(a):
    """Consecutive differences along axis 1: a[:, 1:] - a[:, :-1]."""
    av = value_of(a)
    out = av[:, 1:] - av[:, :-1]

    def vjp(g):
        z = np.zeros_like(av)
        z[:, 1:] += g
        z[:, :-1] -= g
        return z

    return _emit(out, [(a, vjp)])


def transport_strain(w, v):
    """Im(conj(q_i) * q_{i+1}) for split quaternions w (..., E), v (..., E, 3).

    Fused form of the consecutive-pair relative rotation used by the
    bend-twist measure; one kernel instead of a chain of slices.
    """
    wv, vv = value_of(w), value_of(v)
    wa, wb = wv[:, :-1, None], wv[:, 1:, None]
    va, vb = vv[:, :-1], vv[:, 1:]
    out = wa * vb - wb * va - _cross_np(va, vb)

    def vjp_w(g):
        z = np.zeros_like(wv)
        z[:, :-1] += np.einsum("...i,...i->...", g, vb)
        z[:, 1:] -= np.einsum("...i,...i->...", g, va)
        return z

    def vjp_v(g):
        z = np.zeros_like(vv)
        z[:, :-1] += -wb * g - _cross_np(vb, g)
        z[:, 1:] += wa * g - _cross_np(g, va)
        return z

    return _emit(out, [(w, vjp_w), (v, vjp_v)])


def weighted_sqsum(x, weights: np.ndarray):
    """Scalar sum of weights[..., None] * x**2; weights are constants."""
    xv = value_of(x)
    out = np.einsum("...k,...k->...", xv, xv)
    out = np.sum(weights * out)
    return _emit(out, [(x, lambda g: (2.0 * g) * weights[..., None] * xv)])


def dot(a, b):
    """Inner product along the last axis."""
    av, bv = value_of(a), value_of(b)
    out = np.einsum("...i,...i->...", av, bv)
    return _emit(
        out,
        [
            (a, lambda g: _unbroadcast(g[..., None] * bv, av.shape)),
            (b, lambda g: _unbroadcast(g[..., None] * av, bv.shape)),
        ],
    )


def _cross_np(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def cross(a, b):
    av, bv = value_of(a), value_of(b)
    return _emit(
        _cross_np(av, bv),
        [
            (a, lambda g: _unbroadcast(_cross_np(bv, g), av.shape)),
            (b, lambda g: _unbroadcast(_cross_np(g, av), bv.shape)),
        ],
    )


def norm(a):
    """Euclidean length along the last axis; rejects near-zero vectors."""
    av = value_of(a)
    n = np.sqrt(np.einsum("...i,...i->...", av, av))
    if np.any(n < NORM_EPS):
        raise NumericError("norm: vector shorter than 1e-12")
    return _emit(n, [(a, lambda g: g[..., None] * (av / n[..., None]))])


def normalize(a):
    av = value_of(a)
    n = np.sqrt(np.einsum("...i,...i->...", av, av))
    if np.any(n < NORM_EPS):
        raise NumericError("normalize: vector shorter than 1e-12")
    out = av / n[..., None]

    def vjp(g):
        proj = np.einsum("...i,...i->...", out, g)
        return (g - out * proj[..., None]) / n[..., None]

    return _emit(out, [(a, vjp)])


# --------------------------------------------------------------- quaternions
# Scalar-first (w,x,y,z) Hamilton quaternions, matching rotation.qmul.


def _qmul_np(p, q):
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(np.broadcast_shapes(p.shape, q.shape), dtype=np.float64)
    out[..., 0] = pw * qw - px * qx - py * qy - pz * qz
    out[..., 1] = pw * qx + px * qw + py * qz - pz * qy
    out[..., 2] = pw * qy - px * qz + py * qw + pz * qx
    out[..., 3] = pw * qz + px * qy - py * qx + pz * qw
    return out


def _qconj_np(q):
    out = np.array(q, copy=True)
    out[..., 1:] = -out[..., 1:]
    return out


def quat_mul(p, q):
    """Hamilton product; adjoints are g*conj(q) and conj(p)*g."""
    pv, qv = value_of(p), value_of(q)
    return _emit(
        _qmul_np(pv, qv),
        [
            (p, lambda g: _unbroadcast(_qmul_np(g, _qconj_np(qv)), pv.shape)),
            (q, lambda g: _unbroadcast(_qmul_np(_qconj_np(pv), g), qv.shape)),
        ],
    )


def quat_conj(q):
    qv = value_of(q)
    return _emit(_qconj_np(qv), [(q, lambda g: _qconj_np(g))])


def quat_imag(q):
    qv = value_of(q)

    def vjp(g):
        z = np.zeros(qv.shape, dtype=np.float64)
        z[..., 1:] = g
        return z

    return _emit(np.array(qv[..., 1:]), [(q, vjp)])


def rotate_vec(q, v):
    """Rotate v by unit quaternion q: Im(q * (0,v) * conj(q))."""
    vv = value_of(v)
    zeros = np.zeros(vv.shape[:-1] + (1,), dtype=np.float64)
    vq = concat([zeros, v], axis=-1)
    return quat_imag(quat_mul(quat_mul(q, vq), quat_conj(q)))


# ------------------------------------------------------------------ checking


def check_gradient(f: Callable[["Value"], "Value"], x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    Error per coordinate is |analytic - numeric| / max(1, |numeric|); the
    maximum over coordinates is returned. f maps one Value to a scalar
    Value.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xv = tape.leaf(x)
    loss = f(xv)
    tape.backward(loss)
    analytic = tape.grad(xv)
    if not np.all(np.isfinite(analytic)):
        raise NumericError("check_gradient: analytic gradient is not finite")

    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        tp = Tape()
        fp = value_of(f(tp.leaf(xp.reshape(x.shape))))
        tm = Tape()
        fm = value_of(f(tm.leaf(xm.reshape(x.shape))))
        numeric = (float(fp) - float(fm)) / (2.0 * h)
        if not np.isfinite(numeric):
            raise NumericError(f"check_gradient: non-finite finite difference at coordinate {i}")
        err = abs(float(analytic.reshape(-1)[i]) - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
