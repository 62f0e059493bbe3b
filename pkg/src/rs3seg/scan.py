"""Selective-scan state space recurrence over 1-d sequences.

Per step t the input token produces its own step size, input and output
couplings (delta_t, B_t, C_t); the state then evolves as

    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t
    y_t = C_t . h_t + d_skip * x_t

with A = -exp(a_log) strictly negative. Two equivalent evaluation paths
are provided: a time-sequential reference and a chunked associative
prefix scan (the performance path), plus an analytic backward for the
sequential form used by the gradient checks.

The recurrence kernels come from the compiled extension when it is
importable and from the numpy fallback otherwise; `backend=` overrides
the choice.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _scan_py
from .errors import ConfigError, ShapeError
from .tensor import F32, check_finite, require, sigmoid, softplus, trunc_normal

try:
    from . import _scan_ext
except ImportError:  # extension not built: numpy fallback
    _scan_ext = None

HAVE_COMPILED = _scan_ext is not None
ACTIVE_BACKEND = "compiled" if HAVE_COMPILED else "python"

BACKENDS = ("auto", "compiled", "python")


def _impl(backend):
    if backend in ("auto", None):
        return _scan_ext if HAVE_COMPILED else _scan_py
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise ConfigError("compiled scan backend requested but the extension is not built")
        return _scan_ext
    if backend == "python":
        return _scan_py
    raise ConfigError(f"unknown scan backend {backend!r}; expected one of {BACKENDS}")


# ---------------------------------------------------------------------------
# parameters


@dataclass
class S6Params:
    """Per-layer selective-scan parameters for one scan direction."""

    a_log: np.ndarray   # [D, N], state matrix stored as log(-A)
    d_skip: np.ndarray  # [D], direct feedthrough
    x_proj: np.ndarray  # [D, dt_rank + 2N], token -> (delta seed, B_t, C_t)
    dt_proj: np.ndarray  # [dt_rank, D]
    dt_bias: np.ndarray  # [D]

    @property
    def d_inner(self):
        return self.a_log.shape[0]

    @property
    def n_state(self):
        return self.a_log.shape[1]

    @property
    def dt_rank(self):
        return self.dt_proj.shape[0]

    def validate(self):
        d, n = self.a_log.shape
        r = self.dt_proj.shape[0]
        require(n >= 1 and r >= 1, f"s6 params need n_state >= 1 and dt_rank >= 1, got {n}, {r}")
        require(self.d_skip.shape == (d,), f"d_skip shape {self.d_skip.shape} != ({d},)")
        require(self.x_proj.shape == (d, r + 2 * n),
                f"x_proj shape {self.x_proj.shape} != ({d}, {r + 2 * n})")
        require(self.dt_proj.shape == (r, d), f"dt_proj shape {self.dt_proj.shape} != ({r}, {d})")
        require(self.dt_bias.shape == (d,), f"dt_bias shape {self.dt_bias.shape} != ({d},)")
        return self

    def astype(self, dtype):
        return S6Params(*(getattr(self, f).astype(dtype) for f in
                          ("a_log", "d_skip", "x_proj", "dt_proj", "dt_bias")))


@dataclass
class S6Gradients:
    a_log: np.ndarray
    d_skip: np.ndarray
    x_proj: np.ndarray
    dt_proj: np.ndarray
    dt_bias: np.ndarray


def default_dt_rank(d_inner):
    return max(1, math.ceil(d_inner / 16))


def init_s6_params(d_inner, n_state=16, dt_rank=None, rng=None, dtype=F32,
                   dt_min=1e-3, dt_max=1e-1):
    """Seeded initialization keeping the decay away from the 0/1 extremes."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    r = default_dt_rank(d_inner) if dt_rank is None else dt_rank
    a_log = np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (d_inner, 1)))
    x_proj = trunc_normal(rng, (d_inner, r + 2 * n_state), std=0.02)
    bound = r ** -0.5
    dt_proj = rng.uniform(-bound, bound, size=(r, d_inner))
    # dt_bias = softplus^-1(dt) with dt log-uniform in [dt_min, dt_max]
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
    dt_bias = dt + np.log(-np.expm1(-dt))
    return S6Params(
        a_log=a_log.astype(dtype),
        d_skip=np.ones(d_inner, dtype=dtype),
        x_proj=x_proj.astype(dtype),
        dt_proj=dt_proj.astype(dtype),
        dt_bias=dt_bias.astype(dtype),
    ).validate()


# ---------------------------------------------------------------------------
# scan elements (the associative reformulation used by the chunked path)


def combine(e1, e2):
    """Compose two (a, b) recurrence elements, e1 first: h -> a2*(a1*h + b1) + b2."""
    a1, b1 = e1
    a2, b2 = e2
    return a2 * a1, a2 * b1 + b2


# ---------------------------------------------------------------------------
# forward


def discretize(delta, a_log, b_t):
    """Zero-order hold on A, first-order on B.

    delta [L, D] (strictly positive), a_log [D, N], b_t [L, N]
    -> abar = exp(delta*A) [L, D, N], bbar = delta*B [L, D, N].
    """
    require(delta.ndim == 2 and a_log.ndim == 2 and b_t.ndim == 2,
            "discretize expects delta [L,D], a_log [D,N], b_t [L,N]")
    require(delta.shape[0] == b_t.shape[0],
            f"delta length {delta.shape[0]} != b length {b_t.shape[0]}")
    require(delta.shape[1] == a_log.shape[0],
            f"delta channels {delta.shape[1]} != a_log channels {a_log.shape[0]}")
    if not (np.asarray(delta) > 0).all():
        raise ShapeError("discretize: delta must be strictly positive")
    a = -np.exp(a_log)
    abar = np.exp(delta[:, :, None] * a[None])
    bbar = delta[:, :, None] * b_t[:, None, :]
    check_finite(abar, "abar")
    check_finite(bbar, "bbar")
    return abar, bbar


def project_inputs(x, params):
    """Token-dependent (delta, B, C) from the input sequence. x: [L, D]."""
    params.validate()
    require(x.ndim == 2 and x.shape[1] == params.d_inner,
            f"s6 input {x.shape} does not match d_inner {params.d_inner}")
    require(x.shape[0] >= 1, "s6 input must have length >= 1")
    r, n = params.dt_rank, params.n_state
    dbl = np.asarray(x, np.float64) @ np.asarray(params.x_proj, np.float64)
    dt_seed, b_t, c_t = dbl[:, :r], dbl[:, r:r + n], dbl[:, r + n:]
    delta = softplus(dt_seed @ np.asarray(params.dt_proj, np.float64)
                     + np.asarray(params.dt_bias, np.float64))
    dt = np.asarray(x).dtype
    return delta.astype(dt), b_t.astype(dt), c_t.astype(dt)


def _readout(hs, c_t, d_skip, x):
    y = np.einsum("ldn,ln->ld", np.asarray(hs, np.float64), np.asarray(c_t, np.float64))
    y += np.asarray(d_skip, np.float64) * np.asarray(x, np.float64)
    return check_finite(y.astype(np.asarray(x).dtype), "s6 output")


def s6_apply(x, delta, b_t, c_t, a_log, d_skip, chunk=None, backend="auto"):
    """Run the recurrence with explicitly given delta/B/C (frozen-parameter mode).

    chunk=None selects the time-sequential kernel, chunk>=1 the associative
    prefix scan.
    """
    impl = _impl(backend)
    abar, bbar = discretize(delta, a_log, b_t)
    bx = np.ascontiguousarray(bbar * np.asarray(x)[:, :, None])
    abar = np.ascontiguousarray(abar)
    if chunk is None:
        hs = impl.seq_states(abar, bx)
    else:
        require(chunk >= 1, f"chunk must be >= 1, got {chunk}")
        hs = impl.chunk_states(abar, bx, int(chunk))
    return _readout(hs, c_t, d_skip, x)


def s6_forward_sequential(x, params, backend="auto"):
    """Reference path: strict left-to-right recurrence."""
    delta, b_t, c_t = project_inputs(x, params)
    return s6_apply(x, delta, b_t, c_t, params.a_log, params.d_skip,
                    chunk=None, backend=backend)


def s6_forward_scan(x, params, chunk=64, backend="auto"):
    """Performance path: chunked associative prefix scan, same math."""
    delta, b_t, c_t = project_inputs(x, params)
    return s6_apply(x, delta, b_t, c_t, params.a_log, params.d_skip,
                    chunk=chunk, backend=backend)


# ---------------------------------------------------------------------------
# backward (sequential form only; the scan form is validated by equivalence)


def s6_backward(x, params, dy):
    """Reverse-mode gradients of s6_forward_sequential.

    Recomputes the forward intermediates, then walks the recurrence
    backwards. Returns (dx, S6Gradients). Computed in float64 internally,
    returned in the input dtype.
    """
    params.validate()
    require(dy.shape == x.shape, f"dy shape {dy.shape} != x shape {x.shape}")
    in_dt = np.asarray(x).dtype
    x = np.asarray(x, np.float64)
    dy = np.asarray(dy, np.float64)
    wx = np.asarray(params.x_proj, np.float64)
    wdt = np.asarray(params.dt_proj, np.float64)
    bdt = np.asarray(params.dt_bias, np.float64)
    a_log = np.asarray(params.a_log, np.float64)
    d_skip = np.asarray(params.d_skip, np.float64)
    r, n = params.dt_rank, params.n_state
    length = x.shape[0]

    # forward recompute
    dbl = x @ wx
    dt_seed, b_t, c_t = dbl[:, :r], dbl[:, r:r + n], dbl[:, r + n:]
    dt_in = dt_seed @ wdt + bdt
    delta = softplus(dt_in)
    a = -np.exp(a_log)
    abar = np.exp(delta[:, :, None] * a[None])
    bx = delta[:, :, None] * b_t[:, None, :] * x[:, :, None]
    hs = _scan_py.seq_states(abar, bx)

    # y = sum_n C h + d_skip x
    d_dskip = (dy * x).sum(axis=0)
    dx = dy * d_skip
    dc = np.einsum("ld,ldn->ln", dy, hs)
    gy = dy[:, :, None] * c_t[:, None, :]  # dL/dh from the readout

    # reverse the recurrence: g_t = gy_t + abar_{t+1} * g_{t+1}
    g = np.empty_like(gy)
    g[length - 1] = gy[length - 1]
    for t in range(length - 2, -1, -1):
        g[t] = gy[t] + abar[t + 1] * g[t + 1]

    h_prev = np.zeros_like(hs)
    h_prev[1:] = hs[:-1]
    dabar = g * h_prev
    # abar = exp(delta * A)
    dexp = dabar * abar
    d_delta = np.einsum("ldn,dn->ld", dexp, a)
    da = np.einsum("ldn,ld->dn", dexp, delta)
    da_log = da * a  # dA/da_log = -exp(a_log) = A
    # bx = delta * B * x
    d_delta += np.einsum("ldn,ln,ld->ld", g, b_t, x)
    db = np.einsum("ldn,ld,ld->ln", g, delta, x)
    dx += np.einsum("ldn,ld,ln->ld", g, delta, b_t)
    # delta = softplus(dt_seed @ wdt + bdt)
    d_dt_in = d_delta * sigmoid(dt_in)
    d_dt_bias = d_dt_in.sum(axis=0)
    d_wdt = dt_seed.T @ d_dt_in
    d_seed = d_dt_in @ wdt.T
    # dbl = x @ wx
    d_dbl = np.concatenate([d_seed, db, dc], axis=1)
    d_wx = x.T @ d_dbl
    dx += d_dbl @ wx.T

    grads = S6Gradients(
        a_log=da_log.astype(in_dt), d_skip=d_dskip.astype(in_dt),
        x_proj=d_wx.astype(in_dt), dt_proj=d_wdt.astype(in_dt),
        dt_bias=d_dt_bias.astype(in_dt))
    return dx.astype(in_dt), grads


# ---------------------------------------------------------------------------
# analytic work counts


def flops_s6(length, d_inner, n_state, dt_rank):
    """FLOPs (2 per multiply-accumulate) of one directional S6 pass.

    Counts the token projections and the multiply-accumulate structure of
    the recurrence (state update, output readout, skip); elementwise
    discretization and activations are excluded, matching the convention
    that bias adds and nonlinearities are not counted for conv/linear.
    """
    proj = 2 * length * d_inner * (dt_rank + 2 * n_state)  # x_proj
    proj += 2 * length * dt_rank * d_inner                 # dt_proj
    rec = 4 * length * d_inner * n_state                   # h update + C readout
    skip = 2 * length * d_inner
    return proj + rec + skip
