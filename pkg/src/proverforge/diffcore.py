"""Minimal reverse-mode autodiff over numpy arrays.

Each loss evaluation records an operation tape; backward walks the tape in
reverse creation order (a valid topological order, since values are built
forward) and sums upstream gradients at fan-out points.  The tape is
discarded after the backward pass -- proof graphs differ per goal structure,
so persistent graphs buy little.

Parameters live in an EmbeddingStore: one dense float64 row per symbol, with
a gradient accumulator of identical shape (zeroed by each optimizer step).
Complex-valued models store two parallel real matrices; no complex dtype
exists anywhere.

Conventions baked into the primitives:

* log inputs in NLL losses are clamped to [1e-8, 1 - 1e-8] (``clamp`` passes
  no gradient outside the interval, which keeps training finite when a proof
  success saturates at 0 or 1);
* the RBF kernel uses the unsquared L2 norm, ``exp(-||a-b|| / (2 mu^2))``,
  and its gradient at a == b is defined as 0;
* min/max pooling routes the upstream gradient to exactly one input, ties
  broken to the lowest index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class Tape:
    """Recorder for one forward computation; owns the node list."""

    def __init__(self):
        self._nodes = []

    def _record(self, value, parents=(), vjp=None):
        node = Node(self, np.asarray(value, dtype=np.float64), parents, vjp)
        self._nodes.append(node)
        return node

    def constant(self, value):
        return self._record(value)

    def backward(self, root):
        """Accumulate gradients of the scalar `root` into parameter stores
        and intermediate nodes.  Fan-out contributions are summed."""
        if root.value.size != 1:
            raise ValueError("backward root must be scalar")
        root.grad = np.ones_like(root.value)
        for node in reversed(self._nodes):
            if node.grad is None or node._vjp is None:
                continue
            contribs = node._vjp(node.grad)
            for parent, g in zip(node._parents, contribs):
                if parent is None or g is None:
                    continue
                # rebinding (never mutating) keeps view-returning vjps safe
                parent.grad = g if parent.grad is None else parent.grad + g


class Node:
    __slots__ = ("tape", "value", "grad", "_parents", "_vjp")

    def __init__(self, tape, value, parents, vjp):
        self.tape = tape
        self.value = value
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    def item(self):
        return float(self.value)

    @property
    def shape(self):
        return self.value.shape


def _tape_of(*args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    raise TypeError("at least one operand must be a Node")


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum a gradient down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, value, da, db):
    tape = _tape_of(a, b)
    parents = (a if isinstance(a, Node) else None, b if isinstance(b, Node) else None)

    def vjp(g):
        ga = _unbroadcast(da(g), parents[0].value.shape) if parents[0] is not None else None
        gb = _unbroadcast(db(g), parents[1].value.shape) if parents[1] is not None else None
        return (ga, gb)

    return tape._record(value, parents, vjp)


def add(a, b):
    return _binary(a, b, _val(a) + _val(b), lambda g: g, lambda g: g)


def sub(a, b):
    return _binary(a, b, _val(a) - _val(b), lambda g: g, lambda g: -g)


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def neg(a):
    return scale(a, -1.0)


def scale(a, c):
    c = float(c)
    return a.tape._record(a.value * c, (a,), lambda g: (g * c,))


def dot(a, b):
    """Dot product of two 1-D vectors: forward sum(a_i b_i); backward routes
    upstream * other-operand to each side."""
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError(f"dot expects equal-length vectors, got {av.shape} and {bv.shape}")
    return _binary(a, b, av @ bv, lambda g: g * bv, lambda g: g * av)


def total(a):
    """Sum of all elements."""
    return a.tape._record(a.value.sum(), (a,), lambda g: (np.full(a.value.shape, float(g)),))


def sigmoid(a):
    v = _val(a)
    out = np.empty_like(v)
    np.exp(-np.abs(v), out=out)
    out = np.where(v >= 0, 1.0 / (1.0 + out), out / (1.0 + out))
    return a.tape._record(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    out = np.exp(a.value)
    return a.tape._record(out, (a,), lambda g: (g * out,))


def log(a):
    v = a.value
    return a.tape._record(np.log(v), (a,), lambda g: (g / v,))


def clamp(a, lo, hi):
    """Clamp values to [lo, hi]; no gradient outside the interval."""
    v = a.value
    inside = (v >= lo) & (v <= hi)
    return a.tape._record(np.clip(v, lo, hi), (a,), lambda g: (g * inside,))


LOG_EPS = 1e-8


def clamped_log(a):
    return log(clamp(a, LOG_EPS, 1.0 - LOG_EPS))


def relu(a):
    v = a.value
    mask = v > 0
    return a.tape._record(v * mask, (a,), lambda g: (g * mask,))


def absolute(a):
    v = a.value
    return a.tape._record(np.abs(v), (a,), lambda g: (g * np.sign(v),))


def l2norm(a):
    v = a.value
    n = float(np.linalg.norm(v))

    def vjp(g):
        if n == 0.0:
            return (np.zeros_like(v),)
        return (g * v / n,)

    return a.tape._record(n, (a,), vjp)


def l1norm(a):
    v = a.value
    return a.tape._record(np.abs(v).sum(), (a,), lambda g: (g * np.sign(v),))


def sq_norm(a):
    v = a.value
    return a.tape._record((v * v).sum(), (a,), lambda g: (2.0 * g * v,))


def minimum(a, b):
    """Elementwise min with broadcasting; on exact ties the gradient goes to
    the first operand."""
    av, bv = _val(a), _val(b)
    take_b = bv < av
    return _binary(a, b, np.where(take_b, bv, av), lambda g: g * ~take_b, lambda g: g * take_b)


def min_pool(nodes):
    return _pool(nodes, np.argmin)


def max_pool(nodes):
    return _pool(nodes, np.argmax)


def _pool(nodes, argext):
    if not nodes:
        raise ValueError("empty pool")
    vals = np.array([float(n.value) for n in nodes])
    idx = int(argext(vals))  # numpy arg-extrema take the lowest index on ties
    tape = nodes[idx].tape

    def vjp(g):
        return tuple(g if i == idx else None for i in range(len(nodes)))

    return tape._record(vals[idx], tuple(nodes), vjp)


def take(a, idx):
    """Select rows (or elements of a 1-D vector) by index array; backward
    scatter-adds."""
    idx = np.asarray(idx)
    v = a.value[idx]

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return a.tape._record(v, (a,), vjp)


def reshape(a, shape):
    old = a.value.shape
    return a.tape._record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(nodes):
    """Concatenate 1-D nodes."""
    sizes = [n.value.size for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits))

    return nodes[0].tape._record(np.concatenate([n.value for n in nodes]), tuple(nodes), vjp)


def segment_max(a, segments, num_segments, default=0.0):
    """Per-segment max of a 1-D node; empty segments get `default` and no
    gradient.  Within a segment, ties route the gradient to the entry with
    the lowest position in `a`."""
    segments = np.asarray(segments)
    v = a.value
    out = np.full(num_segments, default, dtype=np.float64)
    chosen = np.full(num_segments, -1, dtype=np.int64)
    order = np.argsort(segments, kind="stable")
    sorted_seg = segments[order]
    boundaries = np.flatnonzero(np.diff(sorted_seg)) + 1
    for group in np.split(order, boundaries) if order.size else []:
        seg = int(segments[group[0]])
        vals = v[group]
        pos = int(np.argmax(vals))
        out[seg] = vals[pos]
        chosen[seg] = group[pos]

    def vjp(g):
        grad = np.zeros_like(v)
        mask = chosen >= 0
        np.add.at(grad, chosen[mask], g[mask])
        return (grad,)

    return a.tape._record(out, (a,), vjp)


def row_total(a):
    """Sum over the last axis: (N, k) -> (N,)."""
    v = a.value
    return a.tape._record(v.sum(axis=-1), (a,), lambda g: (np.broadcast_to(g[..., None], v.shape).copy(),))


def rowwise_rbf(a, b, mu):
    """Row-aligned kernel exp(-||a_r - b_r|| / (2 mu^2)) between two (R, k)
    nodes; gradient 0 where the rows coincide."""
    A, B = _val(a), _val(b)
    diff = A - B
    dist = np.linalg.norm(diff, axis=-1)
    out = np.exp(-dist / (2.0 * mu * mu))

    def coeff(g):
        safe = np.where(dist > 0.0, dist, 1.0)
        return np.where(dist > 0.0, g * out * (-1.0 / (2.0 * mu * mu)) / safe, 0.0)[..., None]

    return _binary(a, b, out, lambda g: coeff(g) * diff, lambda g: -coeff(g) * diff)


def rbf_values(A, B, mu):
    """Plain-numpy pairwise kernel exp(-||A_n - B_m||_2 / (2 mu^2)), computed
    via the expanded ||a||^2 + ||b||^2 - 2 a.b form with the radicand clamped
    at 0.  Shared by batch_unify, rule decoding, and the evaluation paths."""
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-np.sqrt(sq) / (2.0 * mu * mu))


def rbf(a, b, mu):
    """Scalar RBF kernel between two vector nodes, value in (0, 1]: exactly 1
    iff a == b; with mu = 1/sqrt(2) the kernel is exp(-||a - b||)."""
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise ValueError(f"rbf expects equal shapes, got {av.shape} and {bv.shape}")
    diff = av - bv
    dist = float(np.linalg.norm(diff))
    out = np.exp(-dist / (2.0 * mu * mu))

    def grads(g):
        if dist == 0.0:
            z = np.zeros_like(diff)
            return z, z.copy()
        coeff = g * out * (-1.0 / (2.0 * mu * mu)) / dist
        return coeff * diff, -coeff * diff

    return _binary(a, b, out, lambda g: grads(g)[0], lambda g: grads(g)[1])


def batch_unify(a, b, mu):
    """Pairwise unification successes between an N x k and an M x k block of
    symbol representations; returns an N x M node equal to the scalar rbf of
    every row pair."""
    A, B = _val(a), _val(b)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"batch_unify expects (N,k) and (M,k), got {A.shape} and {B.shape}")
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    dist = np.sqrt(sq)
    out = np.exp(-dist / (2.0 * mu * mu))
    cache = {}

    def common(g):
        # dL/d(dist) * d(dist)/d(sq); zero where dist == 0 (kernel plateau
        # choice).  Cached: da and db see the same upstream gradient.
        key = id(g)
        if cache.get("key") != key:
            safe = np.where(dist > 0.0, dist, 1.0)
            cache["key"] = key
            cache["G"] = np.where(dist > 0.0, g * out * (-1.0 / (2.0 * mu * mu)) / (2.0 * safe), 0.0)
        return cache["G"]

    def da(g):
        G = common(g)
        return 2.0 * (G.sum(axis=1)[:, None] * A - G @ B)

    def db(g):
        G = common(g)
        return 2.0 * (G.sum(axis=0)[:, None] * B - G.T @ A)

    return _binary(a, b, out, da, db)


# --------------------------------------------------------------------------
# Parameter storage
# --------------------------------------------------------------------------

def xavier_init(rows, cols, seed):
    """Uniform in +-sqrt(6 / (rows + cols)), seeded."""
    bound = np.sqrt(6.0 / (rows + cols))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(rows, cols))


class EmbeddingStore:
    """One dense k-vector per symbol name (two parallel real matrices when
    `complex_pairs` is set), plus gradient accumulators of the same shape.

    Row index semantics belong to the caller; every lookup is an explicit
    index, nothing allocates at score time.
    """

    def __init__(self, names, k, complex_pairs=False, init="xavier", seed=0, init_range=0.1):
        self.names = list(names)
        self.k = int(k)
        self.complex_pairs = bool(complex_pairs)
        n = len(self.names)
        rng = np.random.default_rng(seed)
        parts = 2 if complex_pairs else 1

        def make(part_seed):
            if init == "xavier":
                return xavier_init(n, self.k, part_seed)
            if init == "uniform":
                return np.random.default_rng(part_seed).uniform(-init_range, init_range, size=(n, self.k))
            raise ValueError(f"unknown init {init!r}")

        seeds = rng.integers(0, 2**31 - 1, size=parts)
        self.real = make(int(seeds[0]))
        self.imag = make(int(seeds[1])) if complex_pairs else None
        self.g_real = np.zeros_like(self.real)
        self.g_imag = np.zeros_like(self.imag) if complex_pairs else None
        self._adam = {}

    @property
    def n_symbols(self):
        return len(self.names)

    def _matrices(self):
        yield "real", self.real, self.g_real
        if self.complex_pairs:
            yield "imag", self.imag, self.g_imag

    def zero_grad(self):
        self.g_real.fill(0.0)
        if self.complex_pairs:
            self.g_imag.fill(0.0)

    def _lookup(self, tape, matrix, grad, idx):
        idx = np.asarray(idx, dtype=np.int64)
        value = matrix[idx]

        def vjp(g):
            np.add.at(grad, idx, g)
            return ()

        return tape._record(value, (), vjp)

    def lookup(self, tape, idx):
        """Rows of the real part; shape (len(idx), k)."""
        return self._lookup(tape, self.real, self.g_real, idx)

    def lookup_imag(self, tape, idx):
        return self._lookup(tape, self.imag, self.g_imag, idx)

    def lookup_unify(self, tape, idx):
        """Representation used by differentiable unification: the real rows,
        or [real, imag] concatenated to 2k for complex stores (the kernel is
        defined for complex vectors viewed as paired reals)."""
        if not self.complex_pairs:
            return self.lookup(tape, idx)
        idx = np.asarray(idx, dtype=np.int64)
        value = np.concatenate([self.real[idx], self.imag[idx]], axis=-1)
        k = self.k

        def vjp(g):
            np.add.at(self.g_real, idx, g[..., :k])
            np.add.at(self.g_imag, idx, g[..., k:])
            return ()

        return tape._record(value, (), vjp)

    def unify_matrix(self):
        """Numpy view used by gradient-free paths (decoding, fast eval)."""
        if not self.complex_pairs:
            return self.real
        return np.concatenate([self.real, self.imag], axis=1)

    def copy(self):
        out = EmbeddingStore.__new__(EmbeddingStore)
        out.names = list(self.names)
        out.k = self.k
        out.complex_pairs = self.complex_pairs
        out.real = self.real.copy()
        out.imag = self.imag.copy() if self.complex_pairs else None
        out.g_real = np.zeros_like(self.real)
        out.g_imag = np.zeros_like(self.imag) if self.complex_pairs else None
        out._adam = {}
        return out


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the shared training recipe
    (Adam at 1e-3, minibatch 50, l2 0.01, gradients clipped to [-1, 1],
    100 epochs, Xavier init)."""

    learning_rate: float = 0.001
    batch_size: int = 50
    l2_weight: float = 0.01
    clip_range: tuple = (-1.0, 1.0)
    epochs: int = 100
    seed: int = 0
    init: str = "xavier"
    init_range: float = 0.1

    def __post_init__(self):
        lo, hi = self.clip_range
        if not (lo == -hi and hi > 0):
            raise ValueError(f"clip_range must be symmetric [-c, c] with c > 0, got {self.clip_range}")


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(store, config, step_count, grads=None):
    """One Adam update with bias correction over every store matrix.

    l2 regularization enters as an added gradient (l2_weight * 2 * param)
    and the combined gradient is clipped elementwise to clip_range before
    the moment updates.  Gradient accumulators are zeroed afterwards.
    """
    lo, hi = config.clip_range
    t = int(step_count)
    for name, matrix, grad in store._matrices():
        g = grads[name] if grads is not None else grad
        g = g + config.l2_weight * 2.0 * matrix
        np.clip(g, lo, hi, out=g)
        m, v = store._adam.setdefault(name, (np.zeros_like(matrix), np.zeros_like(matrix)))
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        matrix -= config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    store.zero_grad()
    return store


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_params: int
    worst: tuple = ()  # (matrix name, flat index)

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def grad_check(loss_fn, store, step=1e-5, tol=1e-4):
    """Central finite differences per parameter against the analytic
    gradient.  `loss_fn` must rebuild its tape per call and be deterministic;
    it receives no arguments and returns the scalar loss Node."""
    store.zero_grad()
    root = loss_fn()
    root.tape.backward(root)
    analytic = {name: grad.copy() for name, _, grad in store._matrices()}
    store.zero_grad()

    max_err = 0.0
    worst = ()
    n = 0
    for name, matrix, _ in store._matrices():
        flat = matrix.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().value)
            flat[i] = orig - step
            down = float(loss_fn().value)
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            an = analytic[name].reshape(-1)[i]
            err = abs(fd - an) / max(1.0, abs(fd), abs(an))
            n += 1
            if err > max_err:
                max_err = err
                worst = (name, i)
    return GradCheckReport(max_err, tol, n, worst)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

_MAGIC = b"NTPC"
_VERSION = 1
_FLAG_COMPLEX = 1


def save_store(store, path):
    """Flat binary checkpoint: magic 'NTPC', version u32, flags u32 (bit0 =
    complex), k u32, symbol count u32, then per symbol a u32 name length,
    UTF-8 name, and k little-endian f64 vectors (x2 for complex stores)."""
    flags = _FLAG_COMPLEX if store.complex_pairs else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, flags, store.k))
        fh.write(struct.pack("<I", store.n_symbols))
        for i, name in enumerate(store.names):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(store.real[i].astype("<f8").tobytes())
            if store.complex_pairs:
                fh.write(store.imag[i].astype("<f8").tobytes())


def load_store(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        version, flags, k = struct.unpack("<III", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        complex_pairs = bool(flags & _FLAG_COMPLEX)
        names = []
        real = np.empty((count, k))
        imag = np.empty((count, k)) if complex_pairs else None
        for i in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            names.append(fh.read(nlen).decode("utf-8"))
            real[i] = np.frombuffer(fh.read(8 * k), dtype="<f8")
            if complex_pairs:
                imag[i] = np.frombuffer(fh.read(8 * k), dtype="<f8")
    store = EmbeddingStore.__new__(EmbeddingStore)
    store.names = names
    store.k = k
    store.complex_pairs = complex_pairs
    store.real = real
    store.imag = imag
    store.g_real = np.zeros_like(real)
    store.g_imag = np.zeros_like(imag) if complex_pairs else None
    store._adam = {}
    return store


def dump_store_text(store, path):
    """Plain-text debug dump, one symbol per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# k={store.k} complex={int(store.complex_pairs)} symbols={store.n_symbols}\n")
        for i, name in enumerate(store.names):
            vec = " ".join(f"{x:.6g}" for x in store.real[i])
            if store.complex_pairs:
                vec += " | " + " ".join(f"{x:.6g}" for x in store.imag[i])
            fh.write(f"{name}\t{vec}\n")
