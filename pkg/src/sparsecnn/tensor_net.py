"""Small sequential CNN engine on numpy.

Weights follow the filter layout used for block sparsity:

* conv2d weight ``[n, m, kh, kw]`` (output maps, input maps, kernel)
* fully-connected weight ``[n, in_features]``

Viewed as ``[n, m, block_size]`` (fc layers have ``m = 1``) every
``[j, i]`` slice is one sparsity block.  Biases never belong to a block.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import re
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadMagicError,
    HeaderMismatchError,
    InvalidBlockError,
    NonFiniteError,
    ShapeError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .mask import BlockId, Mask

DTYPE = np.float32

CONV = "conv2d"
FC = "fc"
RELU = "relu"
MAXPOOL = "maxpool"
HEAD = "head"
LAYER_KINDS = (CONV, FC, RELU, MAXPOOL, HEAD)
PARAM_KINDS = (CONV, FC)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential network.

    ``in_size``/``out_size`` are input/output maps for conv2d and
    input/output features for fc.  ``head`` marks the softmax
    cross-entropy output and is the identity in ``forward``.
    """

    kind: str
    in_size: int = 0
    out_size: int = 0
    kernel: tuple = (1, 1)
    stride: int = 1
    padding: str = "same"
    pool: int = 2

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.kind in PARAM_KINDS and (self.in_size <= 0 or self.out_size <= 0):
            raise ShapeError(f"{self.kind} layer needs positive in/out sizes, got {self.in_size}/{self.out_size}")
        if self.kind == CONV:
            if self.padding not in ("same", "valid"):
                raise ShapeError(f"unknown padding {self.padding!r}")
            if self.stride < 1 or min(self.kernel) < 1:
                raise ShapeError("conv2d stride and kernel must be >= 1")
        if self.kind == MAXPOOL and self.pool < 1:
            raise ShapeError("maxpool size must be >= 1")

    @classmethod
    def conv(cls, in_maps, out_maps, kernel=(3, 3), stride=1, padding="same"):
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        return cls(CONV, in_maps, out_maps, tuple(kernel), stride, padding)

    @classmethod
    def fc(cls, in_features, out_features):
        return cls(FC, in_features, out_features)

    @classmethod
    def relu(cls):
        return cls(RELU)

    @classmethod
    def maxpool(cls, size=2):
        return cls(MAXPOOL, pool=size)

    @classmethod
    def head(cls):
        return cls(HEAD)

    @property
    def has_params(self) -> bool:
        return self.kind in PARAM_KINDS

    @property
    def block_grid(self) -> tuple:
        """``(n, m)``: output maps by input maps (``m = 1`` for fc)."""
        if self.kind == CONV:
            return self.out_size, self.in_size
        if self.kind == FC:
            return self.out_size, 1
        return 0, 0

    @property
    def weight_shape(self) -> tuple:
        if self.kind == CONV:
            return (self.out_size, self.in_size) + self.kernel
        if self.kind == FC:
            return (self.out_size, self.in_size)
        return ()

    def pads(self) -> tuple:
        if self.padding == "valid":
            return (0, 0), (0, 0)
        kh, kw = self.kernel
        return ((kh - 1) // 2, kh - 1 - (kh - 1) // 2), ((kw - 1) // 2, kw - 1 - (kw - 1) // 2)

    def output_shape(self, in_shape: tuple) -> tuple:
        """Per-sample output shape; raises ShapeError on incompatibility."""
        if self.kind == CONV:
            if len(in_shape) != 3 or in_shape[0] != self.in_size:
                raise ShapeError(f"expects input ({self.in_size}, h, w), got {in_shape}")
            (pt, pb), (pl, pr) = self.pads()
            h = (in_shape[1] + pt + pb - self.kernel[0]) // self.stride + 1
            w = (in_shape[2] + pl + pr - self.kernel[1]) // self.stride + 1
            if h < 1 or w < 1:
                raise ShapeError(f"kernel {self.kernel} larger than input {in_shape[1:]}")
            return (self.out_size, h, w)
        if self.kind == FC:
            size = int(np.prod(in_shape))
            if size != self.in_size:
                raise ShapeError(f"expects {self.in_size} input features, got {size} from shape {in_shape}")
            return (self.out_size,)
        if self.kind == MAXPOOL:
            if len(in_shape) != 3:
                raise ShapeError(f"expects a (maps, h, w) input, got {in_shape}")
            h, w = in_shape[1] // self.pool, in_shape[2] // self.pool
            if h < 1 or w < 1:
                raise ShapeError(f"pool {self.pool} larger than input {in_shape[1:]}")
            return (in_shape[0], h, w)
        return tuple(in_shape)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kernel"] = list(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        d["kernel"] = tuple(d.get("kernel", (1, 1)))
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        for idx, layer in enumerate(self.layers):
            if layer.kind == HEAD and idx != len(self.layers) - 1:
                raise ShapeError(f"layer {idx} (head): head must be the last layer")
        self.shapes()

    def __len__(self):
        return len(self.layers)

    def shapes(self) -> list:
        """Per-sample activation shapes: entry 0 is the input, entry l+1 the output of layer l."""
        shapes = [self.input_shape]
        for idx, layer in enumerate(self.layers):
            try:
                shapes.append(layer.output_shape(shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {idx} ({layer.kind}): {exc}") from None
        return shapes

    @property
    def num_classes(self) -> int:
        out = self.shapes()[-1]
        if len(out) != 1:
            raise ShapeError(f"network output must be a class vector, got shape {out}")
        return out[0]

    def param_layers(self) -> list:
        return [idx for idx, layer in enumerate(self.layers) if layer.has_params]

    def with_input(self, input_shape) -> "NetworkSpec":
        return NetworkSpec(tuple(input_shape), self.layers)

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec.from_dict(l) for l in d["layers"]))


_CONV_RE = re.compile(r"^conv(\d+)x(\d+):(\d+)((?:/\w+)*)$")


def parse_arch(text: str, input_shape) -> NetworkSpec:
    """Build a spec from a compact layer string.

    Tokens are comma separated: ``conv3x3:8`` (optionally ``/s2`` for
    stride and ``/valid`` for no padding), ``fc:10``, ``relu``,
    ``pool2`` and ``head``.  Input sizes are inferred.

    >>> parse_arch("conv3x3:4,relu,pool2,fc:2", (1, 8, 8)).param_layers()
    [0, 3]
    """
    shape = tuple(int(s) for s in input_shape)
    layers = []
    for raw in text.split(","):
        tok = raw.strip()
        if not tok:
            continue
        m = _CONV_RE.match(tok)
        if m:
            stride, padding = 1, "same"
            for opt in filter(None, m.group(4).split("/")):
                if opt == "valid":
                    padding = "valid"
                elif opt.startswith("s") and opt[1:].isdigit():
                    stride = int(opt[1:])
                else:
                    raise ShapeError(f"unknown conv option {opt!r} in {tok!r}")
            layer = LayerSpec.conv(shape[0], int(m.group(3)), (int(m.group(1)), int(m.group(2))), stride, padding)
        elif tok.startswith("fc:") and tok[3:].isdigit():
            layer = LayerSpec.fc(int(np.prod(shape)), int(tok[3:]))
        elif tok == "relu":
            layer = LayerSpec.relu()
        elif tok.startswith("pool") and tok[4:].isdigit():
            layer = LayerSpec.maxpool(int(tok[4:]))
        elif tok == "head":
            layer = LayerSpec.head()
        else:
            raise ShapeError(f"cannot parse layer token {tok!r}")
        try:
            shape = layer.output_shape(shape)
        except ShapeError as exc:
            raise ShapeError(f"layer {len(layers)} ({tok}): {exc}") from None
        layers.append(layer)
    return NetworkSpec(tuple(input_shape), tuple(layers))


@dataclass
class Network:
    """Architecture plus live parameters.

    ``params`` maps each parameterized layer index to ``{"weight", "bias"}``.
    ``frozen`` holds blocks pinned at zero; their gradients are always zero.
    """

    spec: NetworkSpec
    params: dict
    frozen: Mask = field(default_factory=Mask)

    def __post_init__(self):
        expected = set(self.spec.param_layers())
        if set(self.params) != expected:
            raise ShapeError(f"params given for layers {sorted(self.params)}, spec has parameterized layers {sorted(expected)}")
        for idx in expected:
            layer = self.spec.layers[idx]
            p = self.params[idx]
            if tuple(p["weight"].shape) != layer.weight_shape:
                raise ShapeError(f"layer {idx} ({layer.kind}): weight shape {p['weight'].shape} != {layer.weight_shape}")
            if tuple(p["bias"].shape) != (layer.out_size,):
                raise ShapeError(f"layer {idx} ({layer.kind}): bias shape {p['bias'].shape} != ({layer.out_size},)")

    @property
    def dtype(self):
        idx = self.spec.param_layers()[0]
        return self.params[idx]["weight"].dtype

    def copy(self) -> "Network":
        return Network(self.spec, copy.deepcopy(self.params), self.frozen)

    def astype(self, dtype) -> "Network":
        params = {i: {k: v.astype(dtype) for k, v in p.items()} for i, p in self.params.items()}
        return Network(self.spec, params, self.frozen)

    def weights(self) -> dict:
        return {i: p["weight"] for i, p in self.params.items()}

    def num_weights(self, layers: Optional[Sequence[int]] = None) -> int:
        layers = self.spec.param_layers() if layers is None else layers
        return int(sum(self.params[i]["weight"].size for i in layers))


def block_view(weight: np.ndarray) -> np.ndarray:
    """Reshape a weight tensor to ``[n, m, block_size]`` (fc: ``m = 1``)."""
    if weight.ndim == 4:
        return weight.reshape(weight.shape[0], weight.shape[1], -1)
    if weight.ndim == 2:
        return weight.reshape(weight.shape[0], 1, weight.shape[1])
    raise ShapeError(f"not a weight tensor: shape {weight.shape}")


def init_network(spec: NetworkSpec, seed: int = 0, dtype=DTYPE) -> Network:
    """He-style uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for idx in spec.param_layers():
        layer = spec.layers[idx]
        shape = layer.weight_shape
        fan_in = int(np.prod(shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        params[idx] = {
            "weight": rng.uniform(-limit, limit, size=shape).astype(dtype),
            "bias": np.zeros(layer.out_size, dtype=dtype),
        }
    return Network(spec, params)


# -- layer kernels -----------------------------------------------------------


def _conv_cols(x, layer):
    (pt, pb), (pl, pr) = layer.pads()
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else x
    kh, kw = layer.kernel
    s = layer.stride
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, xp.shape, (ho, wo)


def _conv_forward(x, w, bias, layer):
    cols, xp_shape, (ho, wo) = _conv_cols(x, layer)
    n = w.shape[0]
    out = cols @ w.reshape(n, -1).T + bias
    out = out.reshape(x.shape[0], ho, wo, n).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, xp_shape, (ho, wo))


def _conv_backward(dout, x, w, layer, cache):
    cols, xp_shape, (ho, wo) = cache
    n, m, kh, kw = w.shape
    s = layer.stride
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, n)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(n, -1)).reshape(x.shape[0], ho, wo, m, kh, kw)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    (pt, _), (pl, _) = layer.pads()
    dx = dxp[:, :, pt:pt + x.shape[2], pl:pl + x.shape[3]]
    return np.ascontiguousarray(dx), dw, db


def _pool_forward(x, k):
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    win = x[:, :, :ho * k, :wo * k].reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, x_shape, k, arg):
    b, c, h, w = x_shape
    ho, wo = dout.shape[2], dout.shape[3]
    onehot = np.zeros((b, c, ho, wo, k * k), dtype=dout.dtype)
    np.put_along_axis(onehot, arg[..., None], dout[..., None], axis=-1)
    grid = onehot.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, :ho * k, :wo * k] = grid
    return dx


def _check_batch(net, batch):
    expected = net.spec.input_shape
    if batch.ndim != len(expected) + 1 or tuple(batch.shape[1:]) != expected:
        raise ShapeError(f"layer 0 ({net.spec.layers[0].kind}): batch shape {batch.shape} does not match input shape (batch,) + {expected}")
    if batch.shape[0] == 0:
        raise ShapeError("empty batch")


def _forward(net, batch, keep):
    _check_batch(net, batch)
    x = np.asarray(batch, dtype=net.dtype)
    caches = []
    for idx, layer in enumerate(net.spec.layers):
        cache = None
        if layer.kind == CONV:
            p = net.params[idx]
            y, cache = _conv_forward(x, p["weight"], p["bias"], layer)
        elif layer.kind == FC:
            p = net.params[idx]
            y = x.reshape(x.shape[0], -1) @ p["weight"].T + p["bias"]
        elif layer.kind == RELU:
            y = np.maximum(x, 0)
        elif layer.kind == MAXPOOL:
            y, cache = _pool_forward(x, layer.pool)
        else:
            y = x
        if keep:
            caches.append((x, cache))
        x = y
    return x, caches


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Pre-softmax logits ``[batch, classes]``."""
    logits, _ = _forward(net, batch, keep=False)
    if logits.ndim != 2:
        raise ShapeError(f"network output has shape {logits.shape}; last layer must produce class scores")
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, batch_size, classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch_size,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for a batch of {batch_size}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


def frozen_keep(net: Network, layer: int) -> Optional[np.ndarray]:
    """``[n, m, 1]`` 0/1 array of unfrozen blocks, or None if nothing in ``layer`` is frozen."""
    blocks = net.frozen.for_layer(layer)
    if not blocks:
        return None
    n, m = net.spec.layers[layer].block_grid
    keep = np.ones((n, m, 1), dtype=net.dtype)
    for b in blocks:
        keep[b.output_map, b.input_map, 0] = 0
    return keep


def loss_and_grad(net: Network, batch: np.ndarray, labels) -> tuple:
    """Mean softmax cross-entropy and its gradient for every parameter.

    Returns ``(loss, grads)`` with ``grads[layer] = {"weight", "bias"}``.
    Gradients of frozen blocks are exactly zero.
    """
    logits, caches = _forward(net, batch, keep=True)
    n = logits.shape[0]
    labels = _check_labels(labels, n, logits.shape[1])
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite logits")
    probs = softmax(logits)
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), labels]))

    dprobs = probs.copy()
    dprobs[np.arange(n), labels] -= 1.0
    g = (dprobs / n).astype(net.dtype)

    grads = {}
    for idx in range(len(net.spec.layers) - 1, -1, -1):
        layer = net.spec.layers[idx]
        x, cache = caches[idx]
        if layer.kind == CONV:
            g, dw, db = _conv_backward(g, x, net.params[idx]["weight"], layer, cache)
            grads[idx] = {"weight": dw, "bias": db}
        elif layer.kind == FC:
            w = net.params[idx]["weight"]
            xf = x.reshape(x.shape[0], -1)
            grads[idx] = {"weight": g.T @ xf, "bias": g.sum(axis=0)}
            g = (g @ w).reshape(x.shape)
        elif layer.kind == RELU:
            g = g * (x > 0)
        elif layer.kind == MAXPOOL:
            g = _pool_backward(g, x.shape, layer.pool, cache)
    for idx in grads:
        keep = frozen_keep(net, idx)
        if keep is not None:
            dw = grads[idx]["weight"]
            grads[idx]["weight"] = (block_view(dw) * keep).reshape(dw.shape)
    return loss, grads


def sgd_prox_step(net: Network, grads: dict, U: Optional[dict] = None, rho: float = 0.0,
                  lr: float = 1e-3, momentum: float = 0.0, velocity: Optional[dict] = None) -> Network:
    """One step of ``w <- w - lr * (dL/dw + rho * (w - u))``.

    ``U`` maps layer index to a target tensor shaped like that layer's
    weight; layers missing from ``U`` get a plain SGD step.  Biases are
    always updated by plain SGD.  With ``momentum > 0`` a ``velocity``
    dict (updated in place) must be supplied.
    """
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    U = U or {}
    for idx, g in grads.items():
        for name, arr in g.items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"non-finite gradient in layer {idx} {name}")
    dtype = net.dtype
    lr_ = dtype.type(lr)
    out = {}
    for idx, p in net.params.items():
        w, b = p["weight"], p["bias"]
        gw, gb = grads[idx]["weight"], grads[idx]["bias"]
        u = U.get(idx)
        if u is not None and tuple(u.shape) != w.shape:
            raise ShapeError(f"layer {idx}: target shape {u.shape} != weight shape {w.shape}")
        if momentum > 0:
            if velocity is None:
                raise ValueError("momentum > 0 requires a velocity dict")
            dw = gw + dtype.type(rho) * (w - u) if (u is not None and rho) else gw
            vw = velocity.setdefault((idx, "weight"), np.zeros_like(w))
            vb = velocity.setdefault((idx, "bias"), np.zeros_like(b))
            vw *= dtype.type(momentum)
            vw += dw
            vb *= dtype.type(momentum)
            vb += gb
            new_w = w - lr_ * vw
            new_b = b - lr_ * vb
        else:
            if u is not None and rho:
                # Affine form: lands exactly on u when lr * rho == 1 and the gradient is 0.
                pull = dtype.type(lr * rho)
                new_w = (dtype.type(1) - pull) * w + pull * u - lr_ * gw
            else:
                new_w = w - lr_ * gw
            new_b = b - lr_ * gb
        keep = frozen_keep(net, idx)
        if keep is not None:
            new_w = (block_view(new_w) * keep).reshape(w.shape)
        out[idx] = {"weight": new_w.astype(dtype, copy=False), "bias": new_b.astype(dtype, copy=False)}
    return Network(net.spec, out, net.frozen)


def validate_mask(spec: NetworkSpec, mask: Mask) -> None:
    for b in mask.pruned:
        if not 0 <= b.layer < len(spec.layers) or not spec.layers[b.layer].has_params:
            raise InvalidBlockError(f"block {b}: layer {b.layer} is not a parameterized layer")
        n, m = spec.layers[b.layer].block_grid
        if not (0 <= b.input_map < m and 0 <= b.output_map < n):
            raise InvalidBlockError(f"block {b}: outside layer {b.layer} grid of {m} input x {n} output maps")


def apply_mask(net: Network, mask: Mask) -> Network:
    """Zero every pruned block and freeze it against further updates."""
    validate_mask(net.spec, mask)
    params = {}
    for idx, p in net.params.items():
        w = p["weight"]
        blocks = mask.for_layer(idx)
        if blocks:
            w = w.copy()
            view = block_view(w)
            for b in blocks:
                view[b.output_map, b.input_map, :] = 0
        params[idx] = {"weight": w, "bias": p["bias"]}
    return Network(net.spec, params, mask)


def mac_counts(spec: NetworkSpec, input_shape=None, mask: Optional[Mask] = None) -> tuple:
    """Dense and block-sparse multiply-accumulate counts for one sample.

    A pruned conv block skips ``ho * wo * kh * kw`` MACs, a pruned fc
    block skips ``in_features`` MACs.
    """
    if input_shape is not None and tuple(input_shape) != spec.input_shape:
        spec = spec.with_input(input_shape)
    mask = mask or Mask()
    validate_mask(spec, mask)
    shapes = spec.shapes()
    dense = sparse = 0
    for idx in spec.param_layers():
        layer = spec.layers[idx]
        n, m = layer.block_grid
        if layer.kind == CONV:
            _, ho, wo = shapes[idx + 1]
            per_block = ho * wo * layer.kernel[0] * layer.kernel[1]
        else:
            per_block = layer.in_size
        pruned = len(mask.for_layer(idx))
        dense += per_block * n * m
        sparse += per_block * (n * m - pruned)
    return int(dense), int(sparse)


# -- checkpoints -------------------------------------------------------------

MAGIC = b"ADMMCNN1"
_MAGIC_STEM = MAGIC[:-1]


def save_checkpoint(net: Network, path) -> None:
    """Write ``MAGIC | u32 header length | JSON header | little-endian f32 payload``."""
    tensors = []
    chunks = []
    for idx in net.spec.param_layers():
        for name in ("weight", "bias"):
            arr = net.params[idx][name]
            tensors.append({"layer": idx, "name": name, "shape": list(arr.shape)})
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = {
        "spec": net.spec.to_dict(),
        "tensors": tensors,
        "float_count": int(sum(int(np.prod(t["shape"])) for t in tensors)),
        "frozen": [list(b) for b in sorted(net.frozen.pruned)],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) or blob[:len(_MAGIC_STEM)] != _MAGIC_STEM:
        raise BadMagicError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    if blob[:len(MAGIC)] != MAGIC:
        raise VersionMismatchError(f"{path}: unsupported checkpoint version {blob[len(MAGIC) - 1:len(MAGIC)]!r}")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise TruncatedPayloadError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + hlen:
        raise TruncatedPayloadError(f"{path}: truncated header ({len(blob) - pos} of {hlen} bytes)")
    try:
        header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
        tensors = header["tensors"]
        float_count = int(header["float_count"])
    except (ValueError, KeyError, TypeError, ShapeError) as exc:
        raise HeaderMismatchError(f"{path}: unreadable header: {exc}") from None
    pos += hlen
    payload = blob[pos:]
    if len(payload) < 4 * float_count:
        raise TruncatedPayloadError(f"{path}: truncated payload, header declares {float_count} floats, found {len(payload) // 4}")
    if len(payload) > 4 * float_count:
        raise HeaderMismatchError(f"{path}: {len(payload) - 4 * float_count} trailing bytes after declared payload")
    declared = sum(int(np.prod(t["shape"])) for t in tensors)
    if declared != float_count:
        raise HeaderMismatchError(f"{path}: tensor shapes sum to {declared} floats, header declares {float_count}")
    expected = [(idx, name) for idx in spec.param_layers() for name in ("weight", "bias")]
    if [(t["layer"], t["name"]) for t in tensors] != expected:
        raise HeaderMismatchError(f"{path}: tensor list does not match the layer spec")
    flat = np.frombuffer(payload, dtype="<f4").astype(DTYPE)
    params: dict = {}
    off = 0
    for t in tensors:
        size = int(np.prod(t["shape"]))
        params.setdefault(t["layer"], {})[t["name"]] = flat[off:off + size].reshape(t["shape"]).copy()
        off += size
    frozen = Mask.of(BlockId(*b) for b in header.get("frozen", []))
    try:
        validate_mask(spec, frozen)
        return Network(spec, params, frozen)
    except (ShapeError, InvalidBlockError) as exc:
        raise HeaderMismatchError(f"{path}: {exc}") from None
