"""Dense float tensors and the small kernel set every model stage composes.

Conventions, used everywhere in the package:
  * row-major layout, channels last: spatial maps are [H, W, C],
    sequences are [L, C];
  * float32 is the working precision, float64 is selectable for
    verification runs;
  * reductions accumulate in float64 even in float32 mode;
  * convolution is cross-correlation (no kernel flip);
  * any non-finite value coming out of a kernel is an immediate error.

Kernels are pure functions over numpy arrays and are safe to call from
multiple threads.
"""

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ShapeError

F32 = np.float32
F64 = np.float64

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_IDS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

RTN_MAGIC = b"RTN1"


def require(cond, msg, exc=ShapeError):
    if not cond:
        raise exc(msg)


def check_finite(arr, what="tensor"):
    """Reject NaN/Inf immediately instead of letting it propagate."""
    if not np.isfinite(arr).all():
        raise ShapeError(f"non-finite values in {what}")
    return arr


def _f64(a):
    return np.asarray(a, dtype=F64)


def _cast_back(out64, like):
    return out64.astype(like.dtype, copy=False)


# ---------------------------------------------------------------------------
# core kernels


def linear(x, weight, bias=None):
    """Matrix product over the last axis: [..., Din] x [Din, Dout] -> [..., Dout]."""
    x = np.asarray(x)
    require(weight.ndim == 2, f"linear weight must be 2-d, got {weight.shape}")
    require(
        x.shape[-1] == weight.shape[0],
        f"linear: input last axis {x.shape[-1]} != weight rows {weight.shape[0]}",
    )
    out = _f64(x) @ _f64(weight)
    if bias is not None:
        require(
            bias.shape == (weight.shape[1],),
            f"linear bias shape {bias.shape} != ({weight.shape[1]},)",
        )
        out += _f64(bias)
    return check_finite(_cast_back(out, x), "linear output")


def conv2d(x, kernel, bias=None, stride=1, padding=0, groups=1):
    """2-d cross-correlation.

    x: [H, W, Cin], kernel: [Kh, Kw, Cin/groups, Cout]. Output spatial size
    is floor((H + 2*padding - Kh) / stride) + 1 (same for W).
    """
    require(x.ndim == 3, f"conv2d input must be [H,W,C], got {x.shape}")
    require(kernel.ndim == 4, f"conv2d kernel must be [Kh,Kw,Cin/g,Cout], got {kernel.shape}")
    require(stride >= 1 and padding >= 0, "conv2d: stride >= 1 and padding >= 0 required")
    h, w, cin = x.shape
    kh, kw, cg, cout = kernel.shape
    require(
        cg * groups == cin,
        f"conv2d: kernel expects {cg * groups} input channels (groups={groups}), input has {cin}",
    )
    require(cout % groups == 0, f"conv2d: Cout {cout} not divisible by groups {groups}")
    if padding:
        x = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    hp, wp = x.shape[0], x.shape[1]
    require(hp >= kh and wp >= kw, f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    # [Ho, Wo, Cin, Kh, Kw] view, then stride over the spatial axes
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::stride, ::stride]
    ho, wo = win.shape[0], win.shape[1]
    win = win.reshape(ho, wo, groups, cg, kh, kw)
    kern = _f64(kernel).reshape(kh, kw, cg, groups, cout // groups)
    out = np.einsum("xygcij,ijcgo->xygo", _f64(win), kern, optimize=True)
    out = out.reshape(ho, wo, cout)
    if bias is not None:
        require(bias.shape == (cout,), f"conv2d bias shape {bias.shape} != ({cout},)")
        out += _f64(bias)
    return check_finite(_cast_back(out, np.asarray(x)), "conv2d output")


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the channel (last) axis, then scale and shift."""
    c = x.shape[-1]
    require(gamma.shape == (c,) and beta.shape == (c,),
            f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} do not match C={c}")
    require(eps > 0, "layer_norm: eps must be > 0")
    x64 = _f64(x)
    mu = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    out = (x64 - mu) / np.sqrt(var + eps) * _f64(gamma) + _f64(beta)
    return check_finite(_cast_back(out, x), "layer_norm output")


def softmax(x):
    """Stable softmax over the last axis (max-subtraction, float64 sum)."""
    check_finite(np.asarray(x), "softmax input")
    x64 = _f64(x)
    e = np.exp(x64 - x64.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return _cast_back(out, np.asarray(x))


def upsample_bilinear(x, factor):
    """Bilinear upsampling with half-pixel sample centers. factor 1 is identity."""
    require(x.ndim == 3, f"upsample input must be [H,W,C], got {x.shape}")
    require(factor >= 1, "upsample factor must be >= 1")
    if factor == 1:
        return x.copy()
    h, w, _ = x.shape

    def axis_coords(n):
        src = (np.arange(n * factor, dtype=F64) + 0.5) / factor - 0.5
        src = np.clip(src, 0.0, n - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n - 1)
        return lo, hi, src - lo

    y0, y1, wy = axis_coords(h)
    x0, x1, wx = axis_coords(w)
    x64 = _f64(x)
    top = x64[y0][:, x0] * (1 - wx)[None, :, None] + x64[y0][:, x1] * wx[None, :, None]
    bot = x64[y1][:, x0] * (1 - wx)[None, :, None] + x64[y1][:, x1] * wx[None, :, None]
    out = top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    return check_finite(_cast_back(out, x), "upsample output")


def maxpool2d(x, kernel=3, stride=2, padding=1):
    """Spatial max pooling over [H, W, C]."""
    require(x.ndim == 3, f"maxpool input must be [H,W,C], got {x.shape}")
    if padding:
        x = np.pad(x, ((padding, padding), (padding, padding), (0, 0)),
                   constant_values=-np.inf)
    win = sliding_window_view(x, (kernel, kernel), axis=(0, 1))[::stride, ::stride]
    return check_finite(win.max(axis=(-2, -1)), "maxpool output")


def batchnorm2d(x, gamma, beta, mean, var, eps=1e-5):
    """Inference-mode batch norm over the channel axis with stored statistics."""
    c = x.shape[-1]
    for name, arr in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        require(arr.shape == (c,), f"batchnorm {name} shape {arr.shape} != ({c},)")
    scale = _f64(gamma) / np.sqrt(_f64(var) + eps)
    out = _f64(x) * scale + (_f64(beta) - _f64(mean) * scale)
    return check_finite(_cast_back(out, x), "batchnorm output")


def relu(x):
    return np.maximum(x, np.zeros((), dtype=x.dtype))


def sigmoid(x):
    x64 = _f64(x)
    out = np.empty_like(x64)
    pos = x64 >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x64[pos]))
    ex = np.exp(x64[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _cast_back(out, np.asarray(x))


def silu(x):
    return (x * sigmoid(x)).astype(np.asarray(x).dtype, copy=False)


def softplus(x):
    x64 = _f64(x)
    out = np.maximum(x64, 0.0) + np.log1p(np.exp(-np.abs(x64)))
    return _cast_back(out, np.asarray(x))


def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) resampled until every draw falls inside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


# ---------------------------------------------------------------------------
# raw tensor file (.rtn)


def save_rtn(path, arr):
    """Write one tensor: magic "RTN1", u8 dtype, u8 ndim, ndim x u32 dims, raw LE values."""
    arr = np.asarray(arr)
    dt = np.dtype(arr.dtype)
    require(dt in _DTYPE_IDS, f"rtn supports float32/float64, got {dt}", FormatError)
    require(arr.ndim >= 1 and arr.ndim <= 255, f"rtn: bad ndim {arr.ndim}", FormatError)
    with open(path, "wb") as f:
        f.write(RTN_MAGIC)
        f.write(struct.pack("<BB", _DTYPE_IDS[dt], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr).astype(dt.newbyteorder("<")).tobytes())


def load_rtn(path):
    """Read a ".rtn" tensor; malformed headers and truncation raise FormatError."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != RTN_MAGIC:
        raise FormatError(f"{path}: bad rtn magic {raw[:4]!r}")
    if len(raw) < 6:
        raise FormatError(f"{path}: truncated rtn header")
    code, ndim = struct.unpack_from("<BB", raw, 4)
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown rtn dtype code {code}")
    off = 6
    if len(raw) < off + 4 * ndim:
        raise FormatError(f"{path}: truncated rtn dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: non-positive rtn dim in {dims}")
    dt = _DTYPE_CODES[code]
    n = int(np.prod(dims))
    if len(raw) != off + n * dt.itemsize:
        raise FormatError(
            f"{path}: rtn payload is {len(raw) - off} bytes, expected {n * dt.itemsize}")
    data = np.frombuffer(raw, dtype=dt, count=n, offset=off)
    return data.reshape(dims).astype(dt.newbyteorder("="), copy=True)
