"""Minimal neural-network engine backing the ETA, demand and Q models.

Layers are dense and 2-D convolution (valid or same padding) with relu
or linear activations, plus a two-branch concatenation for networks
that merge a spatial main input with an auxiliary input.  Everything
runs in float64 numpy; convolutions go through batched im2col GEMMs.

Conventions: plane stacks are stored row-major as ``(h, w, planes)``,
or batched ``(batch, h, w, planes)``; vectors are ``(n,)`` or
``(batch, n)``.  Convolution weights are ``(filters, kh, kw, planes)``.
Networks are fully convolutional: any spatial input size at least as
large as the kernels is accepted.  Forward passes are pure functions of
(spec, params, input) and repeated calls give bit-identical outputs.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    activation: str = "relu"


@dataclass(frozen=True)
class Conv2D:
    in_planes: int
    filters: int
    kh: int
    kw: int
    activation: str = "relu"
    padding: str = "valid"  # "valid" shrinks by kernel-1, "same" preserves dims


@dataclass(frozen=True)
class Concat:
    """Concatenate the output of ``branch`` (run on the aux input) onto the main path."""

    branch: tuple


LayerSpec = Dense | Conv2D | Concat


def _check_activation(layer) -> None:
    if getattr(layer, "activation", "linear") not in ACTIVATIONS:
        raise ValueError(f"unknown activation in {layer}")


def walk_param_layers(spec) -> list:
    """Parameterized layers in deterministic order (branch layers precede the merge)."""
    out = []
    for layer in spec:
        if isinstance(layer, Concat):
            out.extend(walk_param_layers(layer.branch))
        else:
            out.append(layer)
    return out


def init_params(spec, rng: np.random.Generator) -> list[np.ndarray]:
    """Scaled-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    params: list[np.ndarray] = []
    for layer in walk_param_layers(spec):
        _check_activation(layer)
        if isinstance(layer, Dense):
            fan_in, fan_out = layer.n_in, layer.n_out
            shape = (layer.n_out, layer.n_in)
            bias = np.zeros(layer.n_out)
        elif isinstance(layer, Conv2D):
            fan_in = layer.in_planes * layer.kh * layer.kw
            fan_out = layer.filters * layer.kh * layer.kw
            shape = (layer.filters, layer.kh, layer.kw, layer.in_planes)
            bias = np.zeros(layer.filters)
        else:
            raise TypeError(f"unsupported layer {layer}")
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=shape))
        params.append(bias)
    return params


def _same_pad(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    top = (kh - 1) // 2
    left = (kw - 1) // 2
    return np.pad(x, ((0, 0), (top, kh - 1 - top), (left, kw - 1 - left), (0, 0)))


def _im2col(x: np.ndarray, kh: int, kw: int):
    """(batch*oh*ow, kh*kw*planes) patch matrix; a free view for 1x1 kernels."""
    b, h, w, c = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    if kh == 1 and kw == 1:
        return x.reshape(b * h * w, c), oh, ow
    flat = x.reshape(b, h, w * c)
    win = sliding_window_view(flat, kw * c, axis=2)[:, :, ::c, :]
    cols = np.empty((b, oh, ow, kh, kw * c))
    for ki in range(kh):
        cols[:, :, :, ki, :] = win[:, ki:ki + oh, :, :]
    return cols.reshape(b * oh * ow, kh * kw * c), oh, ow


def _conv_forward(layer: Conv2D, w, bias, x, want_cache: bool):
    if x.shape[-1] != layer.in_planes:
        raise ValueError(f"conv expected {layer.in_planes} planes, got {x.shape[-1]}")
    xp = _same_pad(x, layer.kh, layer.kw) if layer.padding == "same" else x
    if xp.shape[1] < layer.kh or xp.shape[2] < layer.kw:
        raise ValueError(f"input {x.shape} smaller than {layer.kh}x{layer.kw} kernel")
    xp = np.ascontiguousarray(xp)
    cols, oh, ow = _im2col(xp, layer.kh, layer.kw)
    w2d = w.reshape(layer.filters, -1)
    out2d = cols @ w2d.T
    out2d += bias
    out = out2d.reshape(x.shape[0], oh, ow, layer.filters)
    if layer.activation == "relu":
        np.maximum(out, 0.0, out=out)
    cache = {"cols": cols, "out": out, "in_shape": xp.shape} if want_cache else None
    return out, cache


def _conv_backward(layer: Conv2D, w, cache, d_out, need_dx: bool):
    out = cache["out"]
    if layer.activation == "relu":
        d_out = np.where(out > 0.0, d_out, 0.0)
    b, oh, ow, _ = d_out.shape
    dz2d = d_out.reshape(b * oh * ow, layer.filters)
    cols = cache["cols"]
    dw = (dz2d.T @ cols).reshape(w.shape)
    db = dz2d.sum(axis=0)
    dx = None
    if need_dx:
        w2d = w.reshape(layer.filters, -1)
        dcols = dz2d @ w2d
        _, hp, wp, c = cache["in_shape"]
        if layer.kh == 1 and layer.kw == 1:
            dxp = dcols.reshape(b, hp, wp, c)
        else:
            dcols = dcols.reshape(b, oh, ow, layer.kh, layer.kw, c)
            dxp = np.zeros((b, hp, wp, c))
            for ki in range(layer.kh):
                for kj in range(layer.kw):
                    dxp[:, ki:ki + oh, kj:kj + ow, :] += dcols[:, :, :, ki, kj, :]
        if layer.padding == "same":
            top = (layer.kh - 1) // 2
            left = (layer.kw - 1) // 2
            dx = dxp[:, top:top + hp - (layer.kh - 1),
                     left:left + wp - (layer.kw - 1), :]
        else:
            dx = dxp
    return dw, db, dx


def _dense_forward(layer: Dense, w, bias, x, want_cache: bool):
    if x.shape[1] != layer.n_in:
        raise ValueError(f"dense expected {layer.n_in} inputs, got {x.shape[1]}")
    out = x @ w.T + bias
    if layer.activation == "relu":
        np.maximum(out, 0.0, out=out)
    cache = {"x": x, "out": out} if want_cache else None
    return out, cache


def _dense_backward(layer: Dense, w, cache, d_out, need_dx: bool):
    if layer.activation == "relu":
        d_out = np.where(cache["out"] > 0.0, d_out, 0.0)
    dw = d_out.T @ cache["x"]
    db = d_out.sum(axis=0)
    dx = d_out @ w if need_dx else None
    return dw, db, dx


def _forward(spec, params, x, aux, want_cache: bool):
    caches = []
    value = x
    idx = 0
    for layer in spec:
        if isinstance(layer, Concat):
            if aux is None:
                raise ValueError("network has a Concat layer but no aux input given")
            n_branch = 2 * len(walk_param_layers(layer.branch))
            branch_out, branch_caches, _ = _forward(
                layer.branch, params[idx:idx + n_branch], aux, None, want_cache
            )
            idx += n_branch
            caches.append({"branch": branch_caches, "main_planes": value.shape[-1]})
            value = np.concatenate([value, branch_out], axis=-1)
        else:
            w, bias = params[idx], params[idx + 1]
            idx += 2
            fwd = _conv_forward if isinstance(layer, Conv2D) else _dense_forward
            value, cache = fwd(layer, w, bias, value, want_cache)
            caches.append(cache)
    return value, caches, idx


def _normalize_input(x, spatial: bool):
    x = np.asarray(x, dtype=np.float64)
    want = 4 if spatial else 2
    if x.ndim == want - 1:
        return x[None], True
    if x.ndim != want:
        raise ValueError(f"bad input rank {x.ndim}")
    return x, False


def forward(spec, params, x, aux=None) -> np.ndarray:
    """Evaluate the network; accepts single or batched inputs."""
    spatial = isinstance(spec[0], Conv2D)
    xb, squeeze = _normalize_input(x, spatial)
    auxb = None
    if aux is not None:
        auxb = np.asarray(aux, dtype=np.float64)
        if squeeze:
            auxb = auxb[None]
    out, _, _ = _forward(spec, params, xb, auxb, want_cache=False)
    return out[0] if squeeze else out


def forward_cached(spec, params, x, aux=None):
    """Like :func:`forward` but batched only; returns (output, cache) for backward."""
    out, caches, _ = _forward(spec, params, x, aux, want_cache=True)
    return out, caches


def backward_from_grad(spec, params, caches, d_out) -> list[np.ndarray]:
    """Gradients of a scalar loss given d(loss)/d(output), matching param order."""
    grads: list[np.ndarray | None] = [None] * len(params)

    def run(spec_, caches_, d, base: int, need_dx_level: bool):
        idx = base + 2 * len(walk_param_layers(spec_))
        for pos in range(len(spec_) - 1, -1, -1):
            layer = spec_[pos]
            cache = caches_[pos]
            if isinstance(layer, Concat):
                n_branch = 2 * len(walk_param_layers(layer.branch))
                idx -= n_branch
                main_planes = cache["main_planes"]
                run(layer.branch, cache["branch"], d[..., main_planes:], idx, False)
                d = d[..., :main_planes]
            else:
                idx -= 2
                w = params[idx]
                need_dx = pos > 0 or need_dx_level
                bwd = _conv_backward if isinstance(layer, Conv2D) else _dense_backward
                dw, db, dx = bwd(layer, w, cache, d, need_dx)
                grads[idx] = dw
                grads[idx + 1] = db
                d = dx
        return d

    run(spec, caches, d_out, 0, False)
    return grads


def backward(spec, params, x, target, aux=None) -> list[np.ndarray]:
    """Gradients of the summed squared error ``sum((y - target)**2)``."""
    spatial = isinstance(spec[0], Conv2D)
    xb, squeeze = _normalize_input(x, spatial)
    auxb = None
    if aux is not None:
        auxb = np.asarray(aux, dtype=np.float64)
        if squeeze:
            auxb = auxb[None]
    out, caches = forward_cached(spec, params, xb, auxb)
    tgt = np.asarray(target, dtype=np.float64).reshape(out.shape)
    return backward_from_grad(spec, params, caches, 2.0 * (out - tgt))


class Network:
    """A (spec, params) pair with convenience methods."""

    def __init__(self, spec, params):
        self.spec = tuple(spec)
        self.params = params

    @classmethod
    def create(cls, spec, rng: np.random.Generator) -> "Network":
        return cls(spec, init_params(spec, rng))

    def forward(self, x, aux=None):
        return forward(self.spec, self.params, x, aux)

    def copy(self) -> "Network":
        return Network(self.spec, [p.copy() for p in self.params])

    def load_params_from(self, other: "Network") -> None:
        for mine, theirs in zip(self.params, other.params):
            np.copyto(mine, theirs)


def rmsprop_step(param, grad, state, lr=1e-4, rho=0.95, eps=1e-8):
    """One RMSProp update: s <- rho*s + (1-rho)*g^2; p <- p - lr*g/sqrt(s+eps)."""
    state = rho * state + (1.0 - rho) * grad * grad
    param = param - lr * grad / np.sqrt(state + eps)
    return param, state


class RmsProp:
    """Stateful RMSProp over a parameter list; updates in place."""

    def __init__(self, lr=1e-4, rho=0.95, eps=1e-8):
        if lr <= 0 or not (0 < rho < 1) or eps <= 0:
            raise ValueError("rmsprop hyperparameters must be positive")
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.state: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.state is None:
            self.state = [np.zeros_like(p) for p in params]
        for p, g, s in zip(params, grads, self.state):
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p -= self.lr * g / np.sqrt(s + self.eps)


def avg_pool(plane: np.ndarray, k: int) -> np.ndarray:
    """Same-size k x k mean pooling with stride 1 and zero padding at edges.

    Operates on the trailing two axes.  Every output is the window sum
    divided by k*k, so windows hanging off the plane average in zeros.
    The window for index i covers rows ``[i - (k-1)//2, i + k//2]``,
    which is centered for odd k.
    """
    x = np.asarray(plane, dtype=np.float64)
    h, w = x.shape[-2], x.shape[-1]
    if h < k or w < k:
        raise ValueError(f"plane {h}x{w} smaller than {k}x{k} pooling kernel")
    integ = np.zeros(x.shape[:-2] + (h + 1, w + 1))
    integ[..., 1:, 1:] = x.cumsum(axis=-2).cumsum(axis=-1)
    lo = -((k - 1) // 2)
    hi = k // 2 + 1
    r0 = np.clip(np.arange(h) + lo, 0, h)
    r1 = np.clip(np.arange(h) + hi, 0, h)
    c0 = np.clip(np.arange(w) + lo, 0, w)
    c1 = np.clip(np.arange(w) + hi, 0, w)
    rows = integ[..., r1, :] - integ[..., r0, :]
    sums = rows[..., :, c1] - rows[..., :, c0]
    return sums / float(k * k)


def crop_pad_center(plane: np.ndarray, center: tuple[int, int], out_h: int, out_w: int) -> np.ndarray:
    """Crop an ``out_h x out_w`` window centered at ``center``, zero-padding outside.

    Operates on the trailing two axes.  Output dims must be odd so the
    center is well defined; the output's middle element equals
    ``plane[center]``.
    """
    if out_h % 2 == 0 or out_w % 2 == 0:
        raise ValueError(f"output dims must be odd, got {out_h}x{out_w}")
    x = np.asarray(plane, dtype=np.float64)
    h, w = x.shape[-2], x.shape[-1]
    cr, cc = center
    mr, mc = out_h // 2, out_w // 2
    out = np.zeros(x.shape[:-2] + (out_h, out_w))
    sr0, sr1 = max(0, cr - mr), min(h, cr + mr + 1)
    sc0, sc1 = max(0, cc - mc), min(w, cc + mc + 1)
    if sr0 < sr1 and sc0 < sc1:
        dr0 = sr0 - (cr - mr)
        dc0 = sc0 - (cc - mc)
        out[..., dr0:dr0 + (sr1 - sr0), dc0:dc0 + (sc1 - sc0)] = x[..., sr0:sr1, sc0:sc1]
    return out


# --- checkpoint container -------------------------------------------------

def _layer_to_dict(layer) -> dict:
    if isinstance(layer, Dense):
        return {"kind": "dense", "n_in": layer.n_in, "n_out": layer.n_out,
                "activation": layer.activation}
    if isinstance(layer, Conv2D):
        return {"kind": "conv2d", "in_planes": layer.in_planes, "filters": layer.filters,
                "kh": layer.kh, "kw": layer.kw, "activation": layer.activation,
                "padding": layer.padding}
    if isinstance(layer, Concat):
        return {"kind": "concat", "branch": [_layer_to_dict(l) for l in layer.branch]}
    raise TypeError(f"cannot serialize layer {layer}")


def _layer_from_dict(d: dict):
    kind = d["kind"]
    if kind == "dense":
        return Dense(d["n_in"], d["n_out"], d["activation"])
    if kind == "conv2d":
        return Conv2D(d["in_planes"], d["filters"], d["kh"], d["kw"],
                      d["activation"], d["padding"])
    if kind == "concat":
        return Concat(tuple(_layer_from_dict(b) for b in d["branch"]))
    raise ValueError(f"unknown layer kind {kind}")


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


CHECKPOINT_FORMAT = "fleetsim-net-v1"


def save_model(path, spec, params, optimizer: RmsProp | None = None, extra: dict | None = None) -> None:
    """Write a versioned JSON checkpoint; load(save(m)) round-trips bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "layers": [_layer_to_dict(l) for l in spec],
        "params": [_encode_array(p) for p in params],
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "lr": optimizer.lr, "rho": optimizer.rho, "eps": optimizer.eps,
            "state": [_encode_array(s) for s in optimizer.state] if optimizer.state else None,
        }
    if extra is not None:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path):
    """Read a checkpoint back as (spec, params, optimizer or None, extra dict)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    spec = tuple(_layer_from_dict(d) for d in doc["layers"])
    params = [_decode_array(d) for d in doc["params"]]
    optimizer = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        optimizer = RmsProp(lr=o["lr"], rho=o["rho"], eps=o["eps"])
        if o.get("state") is not None:
            optimizer.state = [_decode_array(s) for s in o["state"]]
    return spec, params, optimizer, doc.get("extra")
