"""Edge-gated (anisotropic) graph network predicting the noise on every edge of a complete TSP graph.

Parameters are a plain ``dict[str, np.ndarray]``. ``forward``/``backward`` are
batched over instances with the same vertex count; the single-instance
signatures in the public API wrap them.

Inputs are lifted with fixed sin/cos features: coordinates per vertex, and
(noisy edge value, edge length) per edge. Layer l, with node features h (n, d),
edge features e (N, d), time vector tau:

    z     = (e + tau W_t + b_t) A + (h_i + h_j) B + b_e
    g     = sigmoid(z)
    agg_i = sum_{j} g_ij * (h_j V) / (sum_j g_ij + EPS)
    h'    = h + silu(h U + agg + b_h)
    e'    = e + silu(z)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .tsp_core import TspInstance

EPS = 1e-6
TIME_SCALE = 1000.0

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class DenoiserConfig:
    layers: int = 4
    width: int = 64
    time_embed_dim: int = 64
    input_freqs: int = 6

    def __post_init__(self):
        if self.input_freqs < 0:
            raise ValueError("input_freqs must be >= 0")
        if min(self.layers, self.width, self.time_embed_dim) < 1:
            raise ValueError(f"all denoiser sizes must be positive: {self}")
        if self.width % 2 or self.time_embed_dim % 2:
            raise ValueError("width and time_embed_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(x):
    s = _sigmoid(x)
    return x * s, s


def _dsilu(x, s):
    return s * (1.0 + x * (1.0 - s))


def param_shapes(config: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    d, te = config.width, config.time_embed_dim
    f = 2 * (1 + 2 * config.input_freqs)
    shapes = {
        "node_in.W": (f, d),
        "node_in.b": (d,),
        "edge_in.W": (f, d),
        "edge_in.b": (d,),
        "time.W": (te, d),
        "time.b": (d,),
    }
    for l in range(config.layers):
        shapes.update({
            f"layer{l}.Wt": (d, d),
            f"layer{l}.bt": (d,),
            f"layer{l}.A": (d, d),
            f"layer{l}.B": (d, d),
            f"layer{l}.be": (d,),
            f"layer{l}.U": (d, d),
            f"layer{l}.V": (d, d),
            f"layer{l}.bh": (d,),
        })
    shapes.update({"head.W1": (d, d), "head.b1": (d,), "head.W2": (d, 1), "head.b2": (1,)})
    return shapes


def num_params(config: DenoiserConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


def init_params(config: DenoiserConfig, seed=0) -> Params:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("head.W2") or name.startswith("head.b2"):
            params[name] = np.zeros(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return params


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def cast_params(params: Params, dtype) -> Params:
    """Copy of ``params`` in ``dtype``; forward/backward compute in the parameters' dtype."""
    return {k: np.array(v, dtype=dtype) for k, v in params.items()}


def config_from_params(params: Params) -> DenoiserConfig:
    layers = sum(1 for k in params if k.endswith(".Wt"))
    te, d = params["time.W"].shape
    freqs = (params["node_in.W"].shape[0] // 2 - 1) // 2
    return DenoiserConfig(layers=layers, width=d, time_embed_dim=te, input_freqs=freqs)


def time_embedding(t_frac, dim: int) -> np.ndarray:
    """Sinusoidal features of the continuous time, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t_frac, dtype=np.float64)) * TIME_SCALE
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def fourier_features(v, num_freqs: int) -> np.ndarray:
    """Raw values followed by sin/cos at frequencies 1, 2, 4, ...; last axis holds the input scalars."""
    if num_freqs == 0:
        return v
    arg = v[..., :, None] * (2.0 ** np.arange(num_freqs)).astype(v.dtype)
    feats = np.concatenate([v[..., :, None], np.sin(arg), np.cos(arg)], axis=-1)
    return feats.reshape(v.shape[:-1] + (-1,))


class _Graph:
    """Edge endpoint indices and incidence matrices shared by a batch."""

    _cache: dict[tuple, "_Graph"] = {}

    def __init__(self, n: int, dtype=np.float64):
        i, j = np.triu_indices(n, k=1)
        self.n = n
        self.I, self.J = i, j
        N = len(i)
        self.PI = np.zeros((n, N), dtype=dtype)
        self.PJ = np.zeros((n, N), dtype=dtype)
        self.PI[i, np.arange(N)] = 1.0
        self.PJ[j, np.arange(N)] = 1.0
        self.P = self.PI + self.PJ

    @classmethod
    def of(cls, n: int, dtype=np.float64) -> "_Graph":
        key = (n, np.dtype(dtype).str)
        if key not in cls._cache:
            cls._cache[key] = cls(n, dtype)
        return cls._cache[key]


def _mm(x, W):
    # (..., a) @ (a, b) through a 2-D matmul
    return (x.reshape(-1, x.shape[-1]) @ W).reshape(x.shape[:-1] + (W.shape[1],))


def _scatter(P, m):
    # (n, N) incidence times (N, B, d) edge values -> (n, B, d)
    return (P @ m.reshape(m.shape[0], -1)).reshape((P.shape[0],) + m.shape[1:])


def _wgrad(x, dy):
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _validate(coords, x, t_frac, dtype):
    coords = np.asarray(coords, dtype=dtype)
    x = np.asarray(x, dtype=dtype)
    if coords.ndim != 3 or coords.shape[2] != 2:
        raise ValueError(f"coords must be (B, n, 2), got {coords.shape}")
    B, n, _ = coords.shape
    N = n * (n - 1) // 2
    if x.shape != (B, N):
        raise ValueError(f"edge input shape {x.shape} does not match (B={B}, N={N})")
    if not np.all(np.isfinite(x)):
        raise ValueError("edge input contains non-finite values")
    t = np.broadcast_to(np.asarray(t_frac, dtype=np.float64), (B,))
    if not np.all(np.isfinite(t)):
        raise ValueError("t_frac must be finite")
    return coords, x, t


def forward_batch(params: Params, coords, x, t_frac, *, keep: bool = False):
    """Predicted noise of shape (B, N). With ``keep`` also return the activation cache."""
    dtype = params["time.W"].dtype
    coords, x, t = _validate(coords, x, t_frac, dtype)
    n = coords.shape[1]
    g = _Graph.of(n, dtype)
    L = sum(1 for k in params if k.endswith(".Wt"))
    te = params["time.W"].shape[0]
    I, J = g.I, g.J
    # internal layout is vertex/edge-major: (n, B, d) and (N, B, d)
    cT = coords.transpose(1, 0, 2)
    diff = cT[I] - cT[J]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))

    nf = (params["node_in.W"].shape[0] // 2 - 1) // 2
    s = time_embedding(t, te).astype(dtype)
    tpre = s @ params["time.W"] + params["time.b"]
    th, tsig = _silu(tpre)
    nfeat = fourier_features(cT, nf)
    h = _mm(nfeat, params["node_in.W"]) + params["node_in.b"]
    efeat = fourier_features(np.stack([x.T, dist], axis=-1), nf)
    e = _mm(efeat, params["edge_in.W"]) + params["edge_in.b"]

    cache = {"s": s, "tpre": tpre, "tsig": tsig, "th": th, "coords": cT, "nfeat": nfeat, "efeat": efeat, "layers": []}
    for l in range(L):
        p = lambda k: params[f"layer{l}.{k}"]
        tl = th @ p("Wt") + p("bt")
        ein = e + tl
        hB = _mm(h, p("B"))
        z = _mm(ein, p("A")) + hB[I] + hB[J] + p("be")
        gate = _sigmoid(z)
        Vh = _mm(h, p("V"))
        num = _scatter(g.PI, gate * Vh[J]) + _scatter(g.PJ, gate * Vh[I])
        den = _scatter(g.P, gate) + EPS
        agg = num / den
        u = _mm(h, p("U")) + agg + p("bh")
        su, usig = _silu(u)
        sz, zsig = _silu(z)
        if keep:
            cache["layers"].append(dict(h=h, ein=ein, z=z, gate=gate, Vh=Vh, num=num, den=den,
                                        u=u, usig=usig, zsig=zsig))
        h = h + su
        e = e + sz
    a = _mm(e, params["head.W1"]) + params["head.b1"]
    r, asig = _silu(a)
    out = (_mm(r, params["head.W2"])[..., 0] + params["head.b2"][0]).T
    if keep:
        cache.update(e_last=e, a=a, asig=asig, r=r)
        return out, cache
    return out


def backward_batch(params: Params, cache, dout) -> Params:
    """Parameter gradients of ``sum(dout * forward)`` (summed over the batch)."""
    dtype = params["time.W"].dtype
    dout = np.asarray(dout, dtype=dtype).T
    n = cache["coords"].shape[0]
    g = _Graph.of(n, dtype)
    I, J = g.I, g.J
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    grads["head.W2"] = _wgrad(cache["r"], dout[..., None])
    grads["head.b2"] = np.array([dout.sum()], dtype=dtype)
    dr = dout[..., None] * params["head.W2"][:, 0]
    da = dr * _dsilu(cache["a"], cache["asig"])
    grads["head.W1"] = _wgrad(cache["e_last"], da)
    grads["head.b1"] = da.reshape(-1, da.shape[-1]).sum(0)
    de = _mm(da, params["head.W1"].T)
    dh = np.zeros_like(cache["layers"][0]["h"]) if cache["layers"] else None
    dth = np.zeros_like(cache["th"])

    for l in reversed(range(len(cache["layers"]))):
        c = cache["layers"][l]
        p = lambda k: params[f"layer{l}.{k}"]
        pre = f"layer{l}."
        gate = c["gate"]
        # node update
        du = dh * _dsilu(c["u"], c["usig"])
        grads[pre + "U"] = _wgrad(c["h"], du)
        grads[pre + "bh"] = du.reshape(-1, du.shape[-1]).sum(0)
        dh_new = dh + _mm(du, p("U").T)
        dnum = du / c["den"]
        dden = -du * c["num"] / (c["den"] * c["den"])
        dmI = dnum[I]
        dmJ = dnum[J]
        dgate = dmI * c["Vh"][J] + dmJ * c["Vh"][I] + dden[I] + dden[J]
        dVh = _scatter(g.PJ, dmI * gate) + _scatter(g.PI, dmJ * gate)
        grads[pre + "V"] = _wgrad(c["h"], dVh)
        dh_new += _mm(dVh, p("V").T)
        # edge update
        dz = de * _dsilu(c["z"], c["zsig"]) + dgate * gate * (1.0 - gate)
        grads[pre + "A"] = _wgrad(c["ein"], dz)
        grads[pre + "be"] = dz.reshape(-1, dz.shape[-1]).sum(0)
        dein = _mm(dz, p("A").T)
        # (h_i + h_j) B only touches node features: push dz onto the endpoints first
        dz_nodes = _scatter(g.P, dz)
        grads[pre + "B"] = _wgrad(c["h"], dz_nodes)
        dh_new += _mm(dz_nodes, p("B").T)
        dtl = dein.sum(axis=0)
        grads[pre + "Wt"] = cache["th"].T @ dtl
        grads[pre + "bt"] = dtl.sum(0)
        dth += dtl @ p("Wt").T
        de = de + dein
        dh = dh_new

    grads["edge_in.W"] = _wgrad(cache["efeat"], de)
    grads["edge_in.b"] = de.reshape(-1, de.shape[-1]).sum(0)
    if dh is not None:
        grads["node_in.W"] = _wgrad(cache["nfeat"], dh)
        grads["node_in.b"] = dh.reshape(-1, dh.shape[-1]).sum(0)
    dtpre = dth * _dsilu(cache["tpre"], cache["tsig"])
    grads["time.W"] = cache["s"].T @ dtpre
    grads["time.b"] = dtpre.sum(0)
    return grads


def forward(params: Params, instance: TspInstance, x_t, t_frac) -> np.ndarray:
    """Noise prediction for one instance; returns a vector over its edges."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (instance.num_edges,):
        raise ValueError(f"x_t length {x_t.shape} does not match {instance.num_edges} edges")
    return forward_batch(params, instance.coords[None], x_t[None], t_frac)[0]


def backward(params: Params, instance: TspInstance, x_t, t_frac, loss_grad) -> Params:
    """Exact gradients of <loss_grad, forward(params, instance, x_t, t_frac)> w.r.t. params."""
    x_t = np.asarray(x_t, dtype=np.float64)
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if x_t.shape != (instance.num_edges,) or loss_grad.shape != x_t.shape:
        raise ValueError("x_t and loss_grad must both have one entry per edge")
    _, cache = forward_batch(params, instance.coords[None], x_t[None], t_frac, keep=True)
    return backward_batch(params, cache, loss_grad[None])


def apply_update(params: Params, grads: Params, lr: float) -> Params:
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if params.keys() != grads.keys():
        raise ValueError("gradient names do not match parameter names")
    out = {}
    for k, v in params.items():
        if grads[k].shape != v.shape:
            raise ValueError(f"shape mismatch for {k}: {grads[k].shape} vs {v.shape}")
        out[k] = v - lr * grads[k]
    return out


class Adam:
    """Adam moments for a parameter dict; optional alternative to plain gradient descent."""

    def __init__(self, params: Params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> Params:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = {}
        for k, p in params.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            out[k] = p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out


class SGD:
    def __init__(self, params: Params, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: Params) -> Params:
        return apply_update(params, grads, self.lr)


def make_optimizer(name: str, params: Params, lr: float):
    if name == "sgd":
        return SGD(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r} (expected 'sgd' or 'adam')")
