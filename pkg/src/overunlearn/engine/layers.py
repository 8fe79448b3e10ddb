"""Layer primitives: shape inference, parameter init, forward and backward passes.

All arrays are numpy, float64 by default. Image batches are laid out
[N, H, W, C]; dense batches are [N, D]. Every backward pass returns the
gradient w.r.t. the layer input plus a dict of parameter gradients whose
shapes mirror the parameter dict.
"""

import numpy as np
from dataclasses import dataclass

LAYER_KINDS = (
    "dense",
    "conv2d",
    "relu",
    "maxpool2d",
    "flatten",
    "residual_block",
    "softmax_output",
)


class ShapeMismatch(ValueError):
    """Input shape incompatible with a layer or model contract."""

    def __init__(self, expected, actual, context=""):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        where = f" in {context}" if context else ""
        super().__init__(
            f"shape mismatch{where}: expected {self.expected}, got {self.actual}"
        )


@dataclass
class LayerSpec:
    """One layer of a feed-forward stack; unused fields stay at defaults."""

    kind: str
    units: int | None = None       # dense
    filters: int | None = None     # conv2d / residual_block
    kernel_size: int = 3           # conv2d / residual_block
    strides: int = 1               # conv2d
    pool_size: int = 2             # maxpool2d
    downsample: bool = False       # residual_block

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.units is None or self.units < 1):
            raise ValueError("dense layer needs units >= 1")
        if self.kind in ("conv2d", "residual_block"):
            if self.filters is None or self.filters < 1:
                raise ValueError(f"{self.kind} needs filters >= 1")
            if self.kernel_size < 1:
                raise ValueError("kernel_size must be >= 1")
        if self.kind == "conv2d" and self.strides < 1:
            raise ValueError("strides must be >= 1")
        if self.kind == "maxpool2d" and self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "dense":
            d["units"] = self.units
        elif self.kind == "conv2d":
            d.update(filters=self.filters, kernel_size=self.kernel_size,
                     strides=self.strides)
        elif self.kind == "maxpool2d":
            d["pool_size"] = self.pool_size
        elif self.kind == "residual_block":
            d.update(filters=self.filters, kernel_size=self.kernel_size,
                     downsample=self.downsample)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _same_pad(size, k, stride):
    """Output length and (before, after) padding for 'same' convolution."""
    out = -(-size // stride)
    total = max(0, (out - 1) * stride + k - size)
    return out, total // 2, total - total // 2


def infer_output_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    """Static shape propagation; raises if the layer cannot accept in_shape."""
    if spec.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeMismatch(("D",), in_shape, "dense (flatten first)")
        return (spec.units,)
    if spec.kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeMismatch(("H", "W", "C"), in_shape, "conv2d")
        h, w, _ = in_shape
        ho, _, _ = _same_pad(h, spec.kernel_size, spec.strides)
        wo, _, _ = _same_pad(w, spec.kernel_size, spec.strides)
        return (ho, wo, spec.filters)
    if spec.kind == "relu":
        return in_shape
    if spec.kind == "maxpool2d":
        if len(in_shape) != 3:
            raise ShapeMismatch(("H", "W", "C"), in_shape, "maxpool2d")
        h, w, c = in_shape
        p = spec.pool_size
        if h < p or w < p:
            raise ShapeMismatch((p, p, c), in_shape, "maxpool2d window")
        return (h // p, w // p, c)
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind == "residual_block":
        if len(in_shape) != 3:
            raise ShapeMismatch(("H", "W", "C"), in_shape, "residual_block")
        h, w, c = in_shape
        if spec.downsample:
            ho, _, _ = _same_pad(h, spec.kernel_size, 2)
            wo, _, _ = _same_pad(w, spec.kernel_size, 2)
            return (ho, wo, spec.filters)
        if c != spec.filters:
            raise ShapeMismatch((h, w, spec.filters), in_shape,
                                "residual_block identity shortcut")
        return (h, w, spec.filters)
    if spec.kind == "softmax_output":
        if len(in_shape) != 1:
            raise ShapeMismatch(("C",), in_shape, "softmax_output")
        return in_shape
    raise ValueError(spec.kind)


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(spec: LayerSpec, in_shape: tuple, rng, dtype) -> dict:
    """He-uniform weights, zero biases; paramless kinds return {}."""
    if spec.kind == "dense":
        d = in_shape[0]
        return {
            "w": _he_uniform(rng, (d, spec.units), d, dtype),
            "b": np.zeros(spec.units, dtype=dtype),
        }
    if spec.kind == "conv2d":
        c = in_shape[2]
        k = spec.kernel_size
        return {
            "w": _he_uniform(rng, (k, k, c, spec.filters), k * k * c, dtype),
            "b": np.zeros(spec.filters, dtype=dtype),
        }
    if spec.kind == "residual_block":
        c = in_shape[2]
        k = spec.kernel_size
        f = spec.filters
        params = {
            "w1": _he_uniform(rng, (k, k, c, f), k * k * c, dtype),
            "b1": np.zeros(f, dtype=dtype),
            "w2": _he_uniform(rng, (k, k, f, f), k * k * f, dtype),
            "b2": np.zeros(f, dtype=dtype),
        }
        if spec.downsample:
            params["w3"] = _he_uniform(rng, (1, 1, c, f), c, dtype)
            params["b3"] = np.zeros(f, dtype=dtype)
        return params
    return {}


# ---------------------------------------------------------------------------
# forward / backward per kind
# ---------------------------------------------------------------------------

def _conv2d_forward(x, w, b, stride):
    n, h, wd, c = x.shape
    kh, kw, c_in, f = w.shape
    if c != c_in:
        raise ShapeMismatch((h, wd, c_in), x.shape[1:], "conv2d channels")
    ho, ph0, ph1 = _same_pad(h, kh, stride)
    wo, pw0, pw1 = _same_pad(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
    out = np.broadcast_to(b, (n, ho, wo, f)).astype(x.dtype).copy()
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :]
            out += xs @ w[i, j]
    cache = (xp, x.shape, (ph0, pw0), stride)
    return out, cache


def _conv2d_backward(dy, w, cache):
    xp, x_shape, (ph0, pw0), stride = cache
    n, ho, wo, f = dy.shape
    kh, kw, c, _ = w.shape
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    dy_flat = dy.reshape(-1, f)
    for i in range(kh):
        for j in range(kw):
            sl_h = slice(i, i + ho * stride, stride)
            sl_w = slice(j, j + wo * stride, stride)
            xs = xp[:, sl_h, sl_w, :]
            dw[i, j] = xs.reshape(-1, c).T @ dy_flat
            dxp[:, sl_h, sl_w, :] += dy @ w[i, j].T
    db = dy.sum(axis=(0, 1, 2))
    h, wd = x_shape[1], x_shape[2]
    dx = dxp[:, ph0:ph0 + h, pw0:pw0 + wd, :]
    return dx, {"w": dw, "b": db}


def _maxpool_forward(x, p):
    n, h, w, c = x.shape
    ho, wo = h // p, w // p
    xc = x[:, :ho * p, :wo * p, :]
    xw = (xc.reshape(n, ho, p, wo, p, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, ho, wo, c, p * p))
    idx = xw.argmax(axis=-1)
    out = np.take_along_axis(xw, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, p, idx)


def _maxpool_backward(dy, cache):
    x_shape, p, idx = cache
    n, h, w, c = x_shape
    ho, wo = h // p, w // p
    dxw = np.zeros((n, ho, wo, c, p * p), dtype=dy.dtype)
    np.put_along_axis(dxw, idx[..., None], dy[..., None], axis=-1)
    dxc = (dxw.reshape(n, ho, wo, c, p, p)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(n, ho * p, wo * p, c))
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :ho * p, :wo * p, :] = dxc
    return dx


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_forward(spec: LayerSpec, params: dict, x):
    """Returns (output, cache); cache feeds layer_backward."""
    if spec.kind == "dense":
        return x @ params["w"] + params["b"], x
    if spec.kind == "conv2d":
        return _conv2d_forward(x, params["w"], params["b"], spec.strides)
    if spec.kind == "relu":
        mask = x > 0
        return x * mask, mask
    if spec.kind == "maxpool2d":
        return _maxpool_forward(x, spec.pool_size)
    if spec.kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if spec.kind == "residual_block":
        stride = 2 if spec.downsample else 1
        a, c1 = _conv2d_forward(x, params["w1"], params["b1"], stride)
        m1 = a > 0
        z, c2 = _conv2d_forward(a * m1, params["w2"], params["b2"], 1)
        if spec.downsample:
            s, cs = _conv2d_forward(x, params["w3"], params["b3"], 2)
        else:
            s, cs = x, None
        pre = z + s
        m2 = pre > 0
        return pre * m2, (c1, m1, c2, cs, m2)
    if spec.kind == "softmax_output":
        p = softmax(x)
        return p, p
    raise ValueError(spec.kind)


def layer_backward(spec: LayerSpec, params: dict, cache, dy):
    """Returns (grad_input, param_grads)."""
    if spec.kind == "dense":
        x = cache
        return dy @ params["w"].T, {"w": x.T @ dy, "b": dy.sum(axis=0)}
    if spec.kind == "conv2d":
        return _conv2d_backward(dy, params["w"], cache)
    if spec.kind == "relu":
        return dy * cache, {}
    if spec.kind == "maxpool2d":
        return _maxpool_backward(dy, cache), {}
    if spec.kind == "flatten":
        return dy.reshape(cache), {}
    if spec.kind == "residual_block":
        c1, m1, c2, cs, m2 = cache
        dpre = dy * m2
        dr, g2 = _conv2d_backward(dpre, params["w2"], c2)
        da = dr * m1
        dx, g1 = _conv2d_backward(da, params["w1"], c1)
        grads = {"w1": g1["w"], "b1": g1["b"], "w2": g2["w"], "b2": g2["b"]}
        if spec.downsample:
            ds, g3 = _conv2d_backward(dpre, params["w3"], cs)
            grads["w3"] = g3["w"]
            grads["b3"] = g3["b"]
            dx = dx + ds
        else:
            dx = dx + dpre
        return dx, grads
    if spec.kind == "softmax_output":
        p = cache
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True)), {}
    raise ValueError(spec.kind)
