"""Dense float64 tensors with a dynamic reverse-mode gradient tape.

Every operation returns a new :class:`Tensor`; the tape is only recorded when
at least one input has ``requires_grad`` set, so inference runs allocate no
graph. Image tensors are channel-last (``H x W x C`` or ``B x H x W x C``).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Tensor",
    "NumericError",
    "tensor",
    "zeros",
    "ones",
    "matmul",
    "softmax",
    "layer_norm",
    "gelu",
    "leaky_relu",
    "conv2d",
    "conv_output_size",
    "pixel_shuffle",
    "pixel_unshuffle",
    "pad2d",
    "concat",
    "l1_loss",
    "grad_check",
]


class NumericError(ArithmeticError):
    """A tensor operation produced NaN or Inf."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out axes that broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """An immutable N-D array of 64-bit floats that can sit on the gradient tape.

    Attributes:
        data: read-only ``float64`` array.
        requires_grad: whether gradients are tracked through this value.
        grad: gradient accumulated by :meth:`backward` (leaves only), or None.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor{' ' + name if name else ''}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @classmethod
    def _result(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
        op: str,
    ) -> "Tensor":
        if not np.isfinite(data).all():
            raise NumericError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64, order="C")
        data.flags.writeable = False
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- backward ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                prev = node.grad.data if node.grad is not None else 0.0
                node.grad = Tensor(prev + g)
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- elementwise arithmetic ---------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._result(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._result(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
            "sub",
        )

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        x, y = self.data, other.data
        return Tensor._result(
            x * y,
            (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _as_tensor(other)
        x, y = self.data, other.data
        return Tensor._result(
            x / y,
            (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
            "div",
        )

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p: float) -> "Tensor":
        if isinstance(p, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        return Tensor._result(x**p, (self,), lambda g: (g * p * x ** (p - 1),), "pow")

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def abs(self) -> "Tensor":
        x = self.data
        return Tensor._result(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):  # overflow surfaces as NumericError below
            y = np.exp(self.data)
        return Tensor._result(y, (self,), lambda g: (g * y,), "exp")

    # -- reductions -------------------------------------------------------
    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), back, "sum")

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation -----------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._result(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape"
        )

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._result(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose"
        )

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            if _needs_add_at(idx):
                np.add.at(full, idx, g)
            else:
                full[idx] = g
            return (full,)

        return Tensor._result(self.data[idx], (self,), back, "getitem")


def _needs_add_at(idx) -> bool:
    # fancy indices may repeat; basic slices never alias
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batching over leading ones."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    x, y = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._result(x @ y, (a, b), back, "matmul")


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; entries where ``mask`` is False get probability 0.

    Every slice along ``axis`` must keep at least one unmasked entry.
    """
    axis = axis % x.ndim if x.ndim else 0
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), back, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each token over the trailing channel axis, then scale and shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"layer_norm channel mismatch: x has {c} channels, gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._result(xhat * gd + beta.data, (x, gamma, beta), back, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the standard normal CDF."""
    xd = x.data
    cdf = ndtr(xd)

    def back(g):
        pdf = np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + xd * pdf),)

    return Tensor._result(xd * cdf, (x,), back, "gelu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope)
    return Tensor._result(xd * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the two spatial axes of a channel-last image tensor."""
    sp = x.ndim - 3
    width = [(0, 0)] * sp + [(top, bottom), (left, right), (0, 0)]
    h, w = x.shape[sp], x.shape[sp + 1]

    def back(g):
        idx = (Ellipsis, slice(top, top + h), slice(left, left + w), slice(None))
        return (g[idx],)

    return Tensor._result(np.pad(x.data, width), (x,), back, "pad2d")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
        "concat",
    )


def l1_loss(pred: Tensor, target) -> Tensor:
    return (pred - _as_tensor(target)).abs().mean()


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Zero-padded 2-D cross-correlation on channel-last input.

    Args:
        x: ``H x W x Cin`` or ``B x H x W x Cin``.
        kernel: ``kh x kw x (Cin / groups) x Cout``; output channel ``o`` belongs
            to group ``o // (Cout / groups)``.
        bias: ``Cout`` or None.
    """
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d expects a 3-D or 4-D input, got shape {x.shape}")
    xd = x.data[None] if squeeze else x.data
    kh, kw, cg, cout = kernel.shape
    b, h, w, cin = xd.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ValueError(f"channels not divisible by groups: Cin={cin}, Cout={cout}, groups={groups}")
    if cg != cin // groups:
        raise ValueError(f"kernel expects {cg} input channels per group, input gives {cin // groups}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match Cout={cout}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    og = cout // groups
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # (b, ho, wo, cin, kh, kw) -> (b, ho, wo, kh, kw, cin)
    patches = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    patches = patches.transpose(0, 1, 2, 4, 5, 3)
    kd = kernel.data
    if groups == 1:
        cols = patches.reshape(b * ho * wo, kh * kw * cin)
        out = (cols @ kd.reshape(kh * kw * cin, cout)).reshape(b, ho, wo, cout)
    else:
        pg = patches.reshape(b, ho, wo, kh, kw, groups, cg)
        kg = kd.reshape(kh, kw, cg, groups, og)
        out = np.einsum("bhwklgc,klcgo->bhwgo", pg, kg, optimize=True).reshape(b, ho, wo, cout)
    if bias is not None:
        out = out + bias.data

    def back(g):
        g4 = g[None] if squeeze else g
        if groups == 1:
            cols = patches.reshape(b * ho * wo, kh * kw * cin)
            gk = (cols.T @ g4.reshape(-1, cout)).reshape(kd.shape)
            gp = (g4.reshape(-1, cout) @ kd.reshape(-1, cout).T).reshape(b, ho, wo, kh, kw, cin)
        else:
            gg = g4.reshape(b, ho, wo, groups, og)
            pg = patches.reshape(b, ho, wo, kh, kw, groups, cg)
            gk = np.einsum("bhwklgc,bhwgo->klcgo", pg, gg, optimize=True).reshape(kd.shape)
            gp = np.einsum("bhwgo,klcgo->bhwklgc", gg, kd.reshape(kh, kw, cg, groups, og), optimize=True)
            gp = gp.reshape(b, ho, wo, kh, kw, cin)
        gx = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gx[:, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += gp[
                    :, :, :, i, j
                ]
        gx = gx[:, padding : padding + h, padding : padding + w]
        if squeeze:
            gx = gx[0]
        gb = g4.sum(axis=(0, 1, 2)) if bias is not None else None
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return Tensor._result(out[0] if squeeze else out, parents, back, "conv2d")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange ``H x W x (r*r*C)`` into ``rH x rW x C``.

    ``out[i, j, c] = in[i // r, j // r, c*r*r + (i % r)*r + (j % r)]``.
    """
    *lead, h, w, ch = x.shape
    if r < 1 or ch % (r * r):
        raise ValueError(f"channel count {ch} not divisible by r^2={r * r}")
    c = ch // (r * r)
    n = len(lead)
    y = x.reshape(*lead, h, w, c, r, r)
    perm = tuple(range(n)) + tuple(n + p for p in (0, 3, 1, 4, 2))
    return y.transpose(perm).reshape(*lead, h * r, w * r, c)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    *lead, hr, wr, c = x.shape
    if hr % r or wr % r:
        raise ValueError(f"spatial size {hr}x{wr} not divisible by r={r}")
    n = len(lead)
    y = x.reshape(*lead, hr // r, r, wr // r, r, c)
    perm = tuple(range(n)) + tuple(n + p for p in (0, 2, 4, 1, 3))
    return y.transpose(perm).reshape(*lead, hr // r, wr // r, c * r * r)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    step: float = 1e-6,
    indices: Iterable[tuple[int, ...]] | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The relative error of each element is ``|g - g_fd| / max(|g|, |g_fd|, 1e-8)``.
    ``indices`` restricts the finite-difference sweep to selected elements.
    """
    if not 1e-6 <= step <= 1e-4:
        raise ValueError(f"step {step} outside the sensible range for float64")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    g = leaf.grad.data if leaf.grad is not None else np.zeros_like(base)
    if indices is None:
        indices = list(np.ndindex(base.shape))
    worst = 0.0
    for idx in indices:
        plus, minus = base.copy(), base.copy()
        plus[idx] += step
        minus[idx] -= step
        fp, fm = f(Tensor(plus)).item(), f(Tensor(minus)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("function returned non-finite value during finite differencing")
        fd = (fp - fm) / (2 * step)
        denom = max(abs(g[idx]), abs(fd), 1e-8)
        worst = max(worst, abs(g[idx] - fd) / denom)
    return worst
