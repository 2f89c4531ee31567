"""Block partitioning, group penalties and their proximal operators.

Auxiliary tensors (``F``, ``Gamma``, ``W``) are dicts mapping a layer
index to an array shaped like that layer's weight.  A block is the
``[j, i]`` slice of :func:`sparsecnn.tensor_net.block_view`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ShapeError
from .mask import BlockId, Mask
from .tensor_net import NetworkSpec, block_view


class PenaltyKind(enum.Enum):
    GROUP_L1 = "l1"
    GROUP_L0 = "l0"

    @classmethod
    def parse(cls, value) -> "PenaltyKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("group-", "").replace("group_", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown penalty kind {value!r}; expected 'l1' or 'l0'")

    def threshold(self, mu: float, rho: float) -> float:
        """``mu / rho`` for group-l1, ``sqrt(2 mu / rho)`` for group-l0."""
        if rho <= 0:
            raise ValueError(f"rho must be > 0, got {rho}")
        if mu < 0:
            raise ValueError(f"mu must be >= 0, got {mu}")
        if self is PenaltyKind.GROUP_L1:
            return mu / rho
        return math.sqrt(2.0 * mu / rho)


@dataclass(frozen=True)
class BlockView:
    block: BlockId
    values: np.ndarray
    frobenius_norm: float

    @classmethod
    def of(cls, block, values) -> "BlockView":
        values = np.asarray(values)
        return cls(BlockId(*block), values, float(_lastaxis_norm(values.reshape(1, -1))[0]))


@dataclass(frozen=True)
class LayerGuardPolicy:
    """Over-pruning guard.

    When more than ``max_fraction`` of a layer's blocks would be zeroed,
    that layer is re-decided against the mean block norm of ``V``.
    """

    enabled: bool = True
    max_fraction: float = 0.5


NO_GUARD = LayerGuardPolicy(enabled=False)


def partition_blocks(spec: NetworkSpec, include: Optional[Iterable[int]] = None) -> list:
    """All sparsity blocks of the included parameterized layers, in layer-major order."""
    layers = resolve_include(spec, include)
    blocks = []
    for idx in layers:
        n, m = spec.layers[idx].block_grid
        blocks.extend(BlockId(idx, i, j) for i in range(m) for j in range(n))
    return blocks


def resolve_include(spec: NetworkSpec, include: Optional[Iterable[int]] = None) -> list:
    if include is None:
        return spec.param_layers()
    layers = sorted(set(int(i) for i in include))
    for idx in layers:
        if not 0 <= idx < len(spec.layers) or not spec.layers[idx].has_params:
            kind = spec.layers[idx].kind if 0 <= idx < len(spec.layers) else "missing"
            raise ShapeError(f"include names layer {idx} ({kind}), which has no weights")
    return layers


def block_views(tensors: dict, blocks: Iterable[BlockId]) -> list:
    return [BlockView.of(b, block_view(tensors[b.layer])[b.output_map, b.input_map]) for b in blocks]


def block_norms(tensor: np.ndarray) -> np.ndarray:
    """``[n, m]`` float64 Frobenius norms of every block of one layer."""
    return _lastaxis_norm(block_view(tensor))


def _lastaxis_norm(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    return np.sqrt(np.einsum("...s,...s->...", a, a))


def penalty_value(blocks: Iterable[BlockView], kind) -> float:
    """Sum of block norms (group-l1) or number of nonzero blocks (group-l0)."""
    kind = PenaltyKind.parse(kind)
    norms = [b.frobenius_norm for b in blocks]
    if kind is PenaltyKind.GROUP_L1:
        return float(math.fsum(norms))
    return float(sum(1 for n in norms if n > 0))


def _values(v):
    return v.values if isinstance(v, BlockView) else np.asarray(v)


def prox_l1_block(V_b, a: float) -> np.ndarray:
    """Group soft threshold: ``(1 - a/||V||) V`` if ``||V|| > a``, else 0."""
    if a < 0:
        raise ValueError(f"threshold must be >= 0, got {a}")
    v = _values(V_b)
    norm = float(_lastaxis_norm(v.reshape(1, -1))[0])
    if norm > a:
        return (v.astype(np.float64) * (1.0 - a / norm)).astype(v.dtype, copy=False)
    return np.zeros_like(v)


def prox_l0_block(V_b, b: float) -> np.ndarray:
    """Group hard threshold: ``V`` if ``||V|| > b``, else 0."""
    if b < 0:
        raise ValueError(f"threshold must be >= 0, got {b}")
    v = _values(V_b)
    norm = float(_lastaxis_norm(v.reshape(1, -1))[0])
    return v.copy() if norm > b else np.zeros_like(v)


def _threshold_layer(v3, norms, keep, shrink, kind):
    # v3: [n, m, s]; keep: [n, m] bool; shrink: soft-threshold amount (l1 only).
    if kind is PenaltyKind.GROUP_L0:
        return np.where(keep[..., None], v3, 0).astype(v3.dtype, copy=False)
    safe = np.where(keep, norms, 1.0)
    scale = np.where(keep, 1.0 - shrink / safe, 0.0)
    return (v3.astype(np.float64) * scale[..., None]).astype(v3.dtype, copy=False)


def prox_layer(V: np.ndarray, mu: float, rho: float, kind, guard: LayerGuardPolicy = NO_GUARD) -> tuple:
    """Apply the block prox to one layer's ``V``; returns ``(F, guarded)``.

    For group-l1 the guard keeps blocks above the mean norm and shrinks
    them by ``min(a, mean)`` so the scale stays non-negative.
    """
    kind = PenaltyKind.parse(kind)
    thr = kind.threshold(mu, rho)
    v3 = block_view(V)
    norms = block_norms(V)
    keep = norms > thr
    guarded = False
    if guard.enabled and norms.size and (~keep).sum() > guard.max_fraction * norms.size:
        mean = float(norms.mean())
        keep = norms > mean
        shrink = min(thr, mean)
        guarded = True
    else:
        shrink = thr
    F = _threshold_layer(v3, norms, keep, shrink, kind)
    return F.reshape(V.shape), guarded


def sparsity_step(W: dict, Gamma: dict, rho: float, mu: float, kind,
                  guard: LayerGuardPolicy = LayerGuardPolicy()) -> dict:
    """Solve the F sub-problem blockwise with ``V = W + Gamma / rho``."""
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    F = {}
    for idx, w in W.items():
        g = Gamma[idx]
        if g.shape != w.shape:
            raise ShapeError(f"layer {idx}: Gamma shape {g.shape} != W shape {w.shape}")
        V = w + g / w.dtype.type(rho)
        F[idx], _ = prox_layer(V, mu, rho, kind, guard)
    return F


def mask_from_aux(F: dict) -> Mask:
    """Blocks whose ``F`` norm is exactly zero."""
    pruned = []
    for idx, f in F.items():
        zero = np.argwhere(block_norms(f) == 0)
        pruned.extend(BlockId(idx, int(i), int(j)) for j, i in zero)
    return Mask.of(pruned)


def sparsity_stats(mask: Mask, spec: NetworkSpec, include: Optional[Iterable[int]] = None) -> tuple:
    """Per-layer pruned block counts and overall pruned-weight percentage."""
    layers = resolve_include(spec, include)
    counts = []
    pruned_w = total_w = 0
    for idx in layers:
        layer = spec.layers[idx]
        n, m = layer.block_grid
        block_size = int(np.prod(layer.weight_shape)) // (n * m)
        c = len(mask.for_layer(idx))
        counts.append(c)
        pruned_w += c * block_size
        total_w += n * m * block_size
    pct = 100.0 * pruned_w / total_w if total_w else 0.0
    return counts, pct
