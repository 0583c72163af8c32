"""Dense float64 tensors with reverse-mode autodiff on an implicit tape.

Each Tensor built from tracked inputs records its parents and a closure that
scatters the adjoint back; backward() runs one reverse topological sweep.
Enough machinery to train the small set models, nothing more: no GPU, no
mixed precision, circular 1-D convolution only.
"""

from __future__ import annotations

import struct

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            # copy: g may be a view or a buffer the caller reuses
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    # ------------------------------------------------------------- elementwise

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def back(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def back(g):
            self._accum(_unbroadcast(g * other.data, self.shape))
            other._accum(_unbroadcast(g * self.data, other.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def scale(self, c: float) -> "Tensor":
        c = float(c)
        out = Tensor(self.data * c, _parents=(self,))
        out._backward = lambda g: self._accum(g * c)
        return out

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,))
        # subgradient 0 at the kink
        out._backward = lambda g: self._accum(g * (self.data > 0.0))
        return out

    def powc(self, p: float) -> "Tensor":
        """Elementwise power with constant exponent."""
        p = float(p)
        out = Tensor(self.data**p, _parents=(self,))
        out._backward = lambda g: self._accum(g * p * self.data ** (p - 1.0))
        return out

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), _parents=(self,))
        out._backward = lambda g: self._accum(g * out.data)
        return out

    # ----------------------------------------------------------------- shape

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), _parents=(self,))
        out._backward = lambda g: self._accum(g.reshape(self.shape))
        return out

    def transpose(self, axes) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out = Tensor(self.data.transpose(axes), _parents=(self,))
        out._backward = lambda g: self._accum(g.transpose(inv))
        return out

    # ------------------------------------------------------------- reductions

    def reduce(self, op: str, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is not None and not isinstance(axis, tuple):
            axis = (int(axis),)
        if axis is not None:
            for a in axis:
                if not -self.ndim <= a < self.ndim:
                    raise ShapeError(f"axis {a} out of range for shape {self.shape}")
        if op == "sum" or op == "mean":
            val = self.data.sum(axis=axis, keepdims=keepdims)
            count = self.data.size if axis is None else int(
                np.prod([self.shape[a] for a in axis])
            )
            if op == "mean":
                val = val / count
            out = Tensor(val, _parents=(self,))

            def back(g):
                if not keepdims and axis is not None:
                    g = np.expand_dims(g, axis)
                grad = np.broadcast_to(g, self.shape)
                self._accum(grad / count if op == "mean" else grad)

            out._backward = back
            return out
        if op == "max":
            if axis is None or len(axis) != 1:
                raise ShapeError("max reduction needs a single axis")
            ax = axis[0] % self.ndim
            val = self.data.max(axis=ax, keepdims=keepdims)
            # ties: lowest index takes the whole adjoint
            arg = self.data.argmax(axis=ax)
            out = Tensor(val, _parents=(self,))

            def back(g):
                if not keepdims:
                    g = np.expand_dims(g, ax)
                gg = np.zeros_like(self.data)
                np.put_along_axis(gg, np.expand_dims(arg, ax), g, axis=ax)
                self._accum(gg)

            out._backward = back
            return out
        raise ValueError(f"unknown reduction {op!r}")

    def sum(self, axis=None, keepdims=False):
        return self.reduce("sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return self.reduce("mean", axis, keepdims)

    def max(self, axis, keepdims=False):
        return self.reduce("max", axis, keepdims)

    # ---------------------------------------------------------------- linear

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        out = Tensor(a @ b, _parents=(self, other))

        def back(g):
            self._accum(_unbroadcast(g @ np.swapaxes(b, -1, -2), self.shape))
            other._accum(_unbroadcast(np.swapaxes(a, -1, -2) @ g, other.shape))

        out._backward = back
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'yes' if self.requires_grad else 'no'})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ------------------------------------------------------------------ named ops

def ew(op: str, *args) -> Tensor:
    """Elementwise dispatcher: add | mul | relu | scale."""
    if op == "add":
        return args[0] + args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "relu":
        return args[0].relu()
    if op == "scale":
        return args[0].scale(args[1])
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def reduce(op: str, x: Tensor, axis=None, keepdims=False) -> Tensor:
    return x.reduce(op, axis, keepdims)


def circ_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Circular 1-D convolution over the trailing axis.

    x: (..., f, d), kernel: (g, f, k) with k <= d; the window is centered,
    out[..., g, t] = sum_{f,j} kernel[g,f,j] * x[..., f, (t+j-k//2) mod d].
    Commutes with cyclic shifts of the trailing axis.
    """
    x = _as_tensor(x)
    kernel = _as_tensor(kernel)
    if x.ndim < 2 or kernel.ndim != 3:
        raise ShapeError("circ_conv1d wants x (..., f, d) and kernel (g, f, k)")
    *lead, f, d = x.shape
    g, fk, k = kernel.shape
    if fk != f:
        raise ShapeError(f"kernel expects {fk} channels, input has {f}")
    if k > d:
        raise ShapeError(f"kernel width {k} exceeds signal length {d}")
    c = k // 2
    xf = np.ascontiguousarray(x.data.reshape(-1, f, d))
    val = _kernels.circ_conv_fwd(xf, kernel.data, c).reshape(*lead, g, d)
    out = Tensor(val, _parents=(x, kernel))

    def back(gr):
        grf = np.ascontiguousarray(gr.reshape(-1, g, d))
        if kernel.requires_grad:
            kernel._accum(_kernels.circ_conv_grad_kern(grf, xf, k, c))
        if x.requires_grad:
            # input adjoint is a circular conv of the output adjoint with the
            # channel-transposed, index-reversed kernel at mirrored center
            kt = np.ascontiguousarray(kernel.data.transpose(1, 0, 2)[:, :, ::-1])
            dx = _kernels.circ_conv_fwd(grf, kt, k - 1 - c)
            x._accum(dx.reshape(x.shape))

    out._backward = back
    return out


def elem_linear(W: Tensor, x: Tensor) -> Tensor:
    """Per-element linear map mixing channels and positions.

    W: (g, f, t, s), x: (..., f, s) -> (..., g, t).
    """
    W = _as_tensor(W)
    x = _as_tensor(x)
    if W.ndim != 4 or x.ndim < 2 or W.shape[1] != x.shape[-2] or W.shape[3] != x.shape[-1]:
        raise ShapeError(f"elem_linear shapes: W {W.shape}, x {x.shape}")
    val = np.einsum("gfts,...fs->...gt", W.data, x.data, optimize=True)
    out = Tensor(val, _parents=(W, x))

    def back(g):
        if W.requires_grad:
            W._accum(np.einsum("...gt,...fs->gfts", g, x.data, optimize=True))
        if x.requires_grad:
            x._accum(np.einsum("gfts,...gt->...fs", W.data, g, optimize=True))

    out._backward = back
    return out


def basis_expand(w: Tensor, basis: np.ndarray) -> Tensor:
    """w: (g, f, e) weights over e basis matrices (e, t, s) -> W (g, f, t, s)."""
    w = _as_tensor(w)
    val = np.einsum("gfe,ets->gfts", w.data, basis, optimize=True)
    out = Tensor(val, _parents=(w,))
    out._backward = lambda g: w._accum(
        np.einsum("gfts,ets->gfe", g, basis, optimize=True)
    )
    return out


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along an axis; backward splits the adjoint."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    val = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(val, _parents=tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)

    out._backward = back
    return out


def mean_pool2(x: Tensor) -> Tensor:
    """Mean-pool the trailing axis by 2 (stand-in for strided convolution)."""
    if x.shape[-1] % 2 != 0:
        raise ShapeError(f"trailing extent {x.shape[-1]} not divisible by 2")
    return x.reshape(*x.shape[:-1], x.shape[-1] // 2, 2).mean(axis=-1)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple,
                     eps: float = 1e-5):
    """Standardize over `axes` with learnable affine; fused backward.

    Returns (out, batch_mean, batch_var); the caller owns running statistics.
    """
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gamma.data * xhat + beta.data, _parents=(x, gamma, beta))
    count = int(np.prod([x.shape[a] for a in axes]))

    def back(g):
        if beta.requires_grad:
            beta._accum(_unbroadcast(g.sum(axis=axes, keepdims=True), beta.shape))
        if gamma.requires_grad:
            gamma._accum(
                _unbroadcast((g * xhat).sum(axis=axes, keepdims=True), gamma.shape)
            )
        if x.requires_grad:
            dxhat = g * gamma.data
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            x._accum(inv * (dxhat - (s1 + xhat * s2) / count))

    out._backward = back
    return out, mu, var


def softmax_xent(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class; max-stabilized."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError("logits must be (batch, classes)")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} vs batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(b), labels].mean()
    out = Tensor(loss, _parents=(logits,))

    def back(g):
        p = np.exp(logp)
        p[np.arange(b), labels] -= 1.0
        logits._accum(g * p / b)

    out._backward = back
    return out


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------- backward

def backward(root: Tensor) -> None:
    """Reverse topological sweep from a scalar root; fan-out accumulates."""
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ----------------------------------------------------------------- parameters

PARAMSTORE_MAGIC = b"EQPS"
PARAMSTORE_VERSION = 1


class ParamStore:
    """Named trainable tensors plus the RNG seed they were initialized from."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        bound = np.sqrt(1.0 / max(fan_in, 1))
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state_copy(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, t in self.params.items():
            t.data = state[k].copy()

    # flat binary format: magic, version, count, then per entry
    # name-length-prefixed utf8 name, ndim, dims, raw little-endian float64
    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(PARAMSTORE_MAGIC)
            fh.write(struct.pack("<II", PARAMSTORE_VERSION, len(self.params)))
            fh.write(struct.pack("<q", self.seed))
            for name, t in self.params.items():
                nb = name.encode()
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", t.data.ndim))
                fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
                fh.write(t.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path, "rb") as fh:
            if fh.read(4) != PARAMSTORE_MAGIC:
                raise ValueError(f"{path}: not a parameter store file")
            version, count = struct.unpack("<II", fh.read(8))
            if version != PARAMSTORE_VERSION:
                raise ValueError(f"unsupported parameter store version {version}")
            (seed,) = struct.unpack("<q", fh.read(8))
            store = cls(seed)
            for _ in range(count):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode()
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                n = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
                store.add(name, data)
        return store


# --------------------------------------------------------------- grad checker

def grad_check(
    f, store: ParamStore, eps: float = 1e-5, samples: int = 64, seed: int = 0
) -> float:
    """Max relative error of tape gradients against central differences.

    f: () -> scalar Tensor, reading parameters from `store`.  Checks up to
    `samples` coordinates per parameter, randomly sampled.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    store.zero_grad()
    loss = f()
    backward(loss)
    analytic = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in store.items()
    }
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in store.items():
        size = t.data.size
        idxs = np.arange(size)
        if size > samples:
            idxs = rng.choice(size, size=samples, replace=False)
        flat = t.data.reshape(-1)
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + eps
            hi = f().item()
            flat[i] = keep - eps
            lo = f().item()
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, float(err))
    return worst
