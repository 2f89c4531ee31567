"""ADMM filter sparsification: inner iterations, fine-tuning, regularization path."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, batch_iter
from .errors import DivergenceError, NonFiniteError
from .mask import Mask
from .report import ReportRow
from .sparsity import (
    LayerGuardPolicy,
    PenaltyKind,
    block_norms,
    mask_from_aux,
    resolve_include,
    sparsity_stats,
    sparsity_step,
)
from .tensor_net import Network, apply_mask, forward, loss_and_grad, mac_counts, sgd_prox_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathSchedule:
    """Regularization path and training hyperparameters.

    ``epsilon=None`` means ``1e-3 * sqrt(number of included weights)``.
    """

    mus: tuple
    delta: int = 1
    nu: int = 15
    xi: int = 10
    epsilon: Optional[float] = None
    lr: float = 1e-3
    batch_size: int = 128
    momentum: float = 0.0

    def __post_init__(self):
        mus = tuple(float(m) for m in self.mus)
        object.__setattr__(self, "mus", mus)
        if not mus:
            raise ValueError("mus must not be empty")
        if mus[0] < 0 or any(b <= a for a, b in zip(mus, mus[1:])):
            raise ValueError(f"mus must be non-negative and strictly increasing, got {mus}")
        if self.delta < 1 or self.nu < 1 or self.xi < 1:
            raise ValueError("delta, nu and xi must all be >= 1")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("lr must be > 0 and batch_size >= 1")


@dataclass
class AdmmState:
    """``(W, F, Gamma)`` for the included layers plus bookkeeping.

    ``epochs_run`` counts every training epoch so far and seeds the batch
    order of the next one.
    """

    net: Network
    F: dict
    Gamma: dict
    rho: float
    mu: float = 0.0
    k: int = 0
    primal_residual: float = 0.0
    aux_change: float = 0.0
    epochs_run: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        for idx, f in self.F.items():
            w = self.net.params[idx]["weight"]
            if f.shape != w.shape or self.Gamma[idx].shape != w.shape:
                raise ValueError(f"layer {idx}: F/Gamma shapes do not match the weight shape {w.shape}")
        if set(self.F) != set(self.Gamma):
            raise ValueError("F and Gamma must cover the same layers")

    @classmethod
    def start(cls, net: Network, rho: float, mu: float = 0.0, include=None, epochs_run: int = 0) -> "AdmmState":
        """Initial state ``F = W``, ``Gamma = 0``."""
        layers = resolve_include(net.spec, include)
        F = {i: net.params[i]["weight"].copy() for i in layers}
        G = {i: np.zeros_like(net.params[i]["weight"]) for i in layers}
        return cls(net, F, G, rho, mu, epochs_run=epochs_run)

    @property
    def layers(self) -> list:
        return sorted(self.F)

    def W(self) -> dict:
        return {i: self.net.params[i]["weight"] for i in self.layers}

    def U(self) -> dict:
        """Targets of the W sub-problem, ``F - Gamma / rho``."""
        return {i: self.F[i] - self.Gamma[i] / self.F[i].dtype.type(self.rho) for i in self.layers}

    def V(self) -> dict:
        """Inputs of the F sub-problem, ``W + Gamma / rho``."""
        W = self.W()
        return {i: W[i] + self.Gamma[i] / W[i].dtype.type(self.rho) for i in self.layers}

    def snapshot(self) -> "AdmmState":
        return dataclasses.replace(
            self,
            net=self.net.copy(),
            F={i: f.copy() for i, f in self.F.items()},
            Gamma={i: g.copy() for i, g in self.Gamma.items()},
            history=list(self.history),
        )


def frobenius_distance(A: dict, B: dict) -> float:
    total = 0.0
    for i in A:
        d = A[i].astype(np.float64) - B[i].astype(np.float64)
        total += float(np.dot(d.ravel(), d.ravel()))
    return math.sqrt(total)


def default_epsilon(state_or_net, include=None) -> float:
    net = state_or_net.net if isinstance(state_or_net, AdmmState) else state_or_net
    layers = state_or_net.layers if isinstance(state_or_net, AdmmState) else resolve_include(net.spec, include)
    return 1e-3 * math.sqrt(net.num_weights(layers))


def epoch_schedule(i: int, delta: int = 1, nu: int = 15) -> int:
    """Epochs for the ``i``-th (1-based) mu: ``min(1 + delta (i - 1), delta nu)``."""
    if i < 1:
        raise ValueError("mu index is 1-based")
    return min(1 + delta * (i - 1), delta * nu)


def default_mu_grid(net: Network, rho: float = 1.0, include=None, count: int = 8) -> tuple:
    """``count`` log-spaced values over ``[1e-3, 1] * rho * median block norm``."""
    layers = resolve_include(net.spec, include)
    norms = np.concatenate([block_norms(net.params[i]["weight"]).ravel() for i in layers])
    scale = rho * float(np.median(norms))
    return tuple(float(v) for v in np.geomspace(1e-3 * scale, scale, count))


def accuracy(net: Network, ds: Dataset, batch_size: int = 500) -> float:
    """Top-1 accuracy in percent."""
    correct = 0
    for start in range(0, len(ds), batch_size):
        logits = forward(net, ds.images[start:start + batch_size])
        correct += int((logits.argmax(axis=1) == ds.labels[start:start + batch_size]).sum())
    return 100.0 * correct / len(ds)


def full_loss(net: Network, ds: Dataset) -> float:
    loss, _ = loss_and_grad(net, ds.images, ds.labels)
    return loss


def _train_epochs(net, data, epochs, lr, batch_size, seed, epoch_offset, U=None, rho=0.0, momentum=0.0):
    """Mini-batch (proximal) SGD; returns ``(last finite net, error or None)``."""
    velocity = {} if momentum > 0 else None
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_loop(net, data, epochs, lr, batch_size, seed, epoch_offset, U, rho, momentum, velocity)


def _train_loop(net, data, epochs, lr, batch_size, seed, epoch_offset, U, rho, momentum, velocity):
    for e in range(epochs):
        for images, labels in batch_iter(data, batch_size, seed, epoch_offset + e):
            try:
                loss, grads = loss_and_grad(net, images, labels)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"loss became {loss}")
                new = sgd_prox_step(net, grads, U, rho, lr, momentum, velocity)
                for p in new.params.values():
                    if not (np.all(np.isfinite(p["weight"])) and np.all(np.isfinite(p["bias"]))):
                        raise NonFiniteError("weights became non-finite")
            except NonFiniteError as exc:
                return net, exc
            net = new
    return net, None


def train(net: Network, data: Dataset, epochs: int, lr: float, batch_size: int = 128,
          seed: int = 0, momentum: float = 0.0, epoch_offset: int = 0) -> Network:
    """Plain SGD on the recognition loss (baseline training and fine-tuning)."""
    out, err = _train_epochs(net, data, epochs, lr, batch_size, seed, epoch_offset, momentum=momentum)
    if err is not None:
        raise DivergenceError(f"training diverged: {err}", state=out)
    return out


def performance_step(state: AdmmState, data: Dataset, epochs: int, lr: float = 1e-3,
                     batch_size: int = 128, seed: int = 0, momentum: float = 0.0) -> AdmmState:
    """Approximately minimize ``L(W) + rho/2 ||W - U||^2`` with U held fixed."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    net, err = _train_epochs(state.net, data, epochs, lr, batch_size, seed, state.epochs_run,
                             U=state.U(), rho=state.rho, momentum=momentum)
    if err is not None:
        raise DivergenceError(f"performance step diverged at mu={state.mu}: {err}",
                              state=dataclasses.replace(state, net=net))
    return dataclasses.replace(state, net=net, epochs_run=state.epochs_run + epochs)


def dual_update(state: AdmmState) -> AdmmState:
    """``Gamma <- Gamma + rho (W - F)``."""
    W = state.W()
    rho = {i: W[i].dtype.type(state.rho) for i in state.layers}
    G = {i: state.Gamma[i] + rho[i] * (W[i] - state.F[i]) for i in state.layers}
    return dataclasses.replace(state, Gamma=G)


def inner_admm(state: AdmmState, data: Dataset, epochs: int, schedule: PathSchedule,
               kind=PenaltyKind.GROUP_L0, guard: LayerGuardPolicy = LayerGuardPolicy(),
               seed: int = 0, on_iteration: Optional[Callable] = None) -> tuple:
    """Alternate W step, F step and dual update until both residuals <= eps or ``xi`` iterations.

    ``on_iteration(k, pre_dual, post_dual)`` is called after every dual
    update; ``pre_dual`` holds the new W and F with the old Gamma.
    Returns ``(state, converged, iterations)``.
    """
    kind = PenaltyKind.parse(kind)
    eps = schedule.epsilon if schedule.epsilon is not None else default_epsilon(state)
    converged = False
    k = 0
    for k in range(1, schedule.xi + 1):
        state = performance_step(state, data, epochs, schedule.lr, schedule.batch_size, seed, schedule.momentum)
        F_old = state.F
        F_new = sparsity_step(state.W(), state.Gamma, state.rho, state.mu, kind, guard)
        pre = dataclasses.replace(state, F=F_new)
        post = dual_update(pre)
        primal = frobenius_distance(post.W(), F_new)
        change = frobenius_distance(F_new, F_old)
        post = dataclasses.replace(post, k=state.k + 1, primal_residual=primal, aux_change=change,
                                   history=state.history + [(primal, change)])
        if on_iteration is not None:
            on_iteration(k, pre, post)
        state = post
        log.debug("mu=%g k=%d primal=%.4g aux=%.4g", state.mu, k, primal, change)
        if primal <= eps and change <= eps:
            converged = True
            break
    return state, converged, k


def fine_tune(net: Network, mask: Mask, data: Dataset, epochs: int, lr: float = 1e-3,
              batch_size: int = 128, seed: int = 0, epoch_offset: int = 0, momentum: float = 0.0) -> Network:
    """Zero and freeze ``mask``, then train the remaining weights with plain SGD."""
    net = apply_mask(net, mask)
    if epochs <= 0:
        return net
    return train(net, data, epochs, lr, batch_size, seed, momentum, epoch_offset)


# -- bookkeeping audit ---------------------------------------------------------


def _sq(A: dict) -> float:
    return sum(float(np.dot(a.astype(np.float64).ravel(), a.astype(np.float64).ravel())) for a in A.values())


def _penalty(F: dict, kind) -> float:
    total = 0.0
    for f in F.values():
        norms = block_norms(f)
        total += float(norms.sum()) if kind is PenaltyKind.GROUP_L1 else float((norms > 0).sum())
    return total


def augmented_lagrangian(state: AdmmState, kind, images, labels) -> float:
    """``L(W) + mu f(F) + <Gamma, W - F> + rho/2 ||W - F||^2``."""
    loss, _ = loss_and_grad(state.net, images, labels)
    W = state.W()
    D = {i: W[i].astype(np.float64) - state.F[i].astype(np.float64) for i in state.layers}
    inner = sum(float(np.dot(state.Gamma[i].astype(np.float64).ravel(), D[i].ravel())) for i in state.layers)
    return loss + state.mu * _penalty(state.F, PenaltyKind.parse(kind)) + inner + 0.5 * state.rho * _sq(D)


def performance_objective(state: AdmmState, images, labels) -> float:
    """``L(W) + rho/2 ||W - U||^2``."""
    loss, _ = loss_and_grad(state.net, images, labels)
    W = state.W()
    U = {i: state.F[i].astype(np.float64) - state.Gamma[i].astype(np.float64) / state.rho for i in state.layers}
    return loss + 0.5 * state.rho * _sq({i: W[i].astype(np.float64) - U[i] for i in state.layers})


def sparsity_objective(state: AdmmState, kind) -> float:
    """``mu f(F) + rho/2 ||F - V||^2``."""
    W = state.W()
    V = {i: W[i].astype(np.float64) + state.Gamma[i].astype(np.float64) / state.rho for i in state.layers}
    return state.mu * _penalty(state.F, PenaltyKind.parse(kind)) + 0.5 * state.rho * _sq(
        {i: state.F[i].astype(np.float64) - V[i] for i in state.layers})


def dual_constant(state: AdmmState) -> float:
    """``||Gamma||^2 / (2 rho)``, the term both completions of squares drop."""
    return _sq(state.Gamma) / (2.0 * state.rho)


# -- regularization path --------------------------------------------------------


@dataclass
class PathPoint:
    mu: float
    net: Network
    mask: Mask
    row: ReportRow
    iterations: int = 0
    converged: bool = False
    state: Optional[AdmmState] = None


def make_row(mu: float, net: Network, mask: Mask, test: Dataset, include, epochs: int) -> ReportRow:
    counts, pct = sparsity_stats(mask, net.spec, include)
    dense, sparse = mac_counts(net.spec, None, mask)
    return ReportRow(
        mu=mu,
        accuracy_pct=accuracy(net, test),
        pruned_per_layer=counts,
        sparsity_pct=pct,
        training_epochs=epochs,
        speedup=dense / sparse if sparse else float("inf"),
    )


def run_path(baseline: Network, train_data: Dataset, test_data: Dataset, schedule: PathSchedule,
             kind=PenaltyKind.GROUP_L0, rho: float = 1.0, include: Optional[Sequence[int]] = None,
             guard: LayerGuardPolicy = LayerGuardPolicy(), seed: int = 0,
             on_point: Optional[Callable] = None) -> list:
    """Sweep ``schedule.mus`` in order, warm-starting each mu from the last.

    Emits a baseline point first, then one :class:`PathPoint` per mu.  If
    a mu diverges the completed points are returned and the error is
    logged; ``on_point`` is called as each point completes.
    """
    kind = PenaltyKind.parse(kind)
    layers = resolve_include(baseline.spec, include)
    base = Network(baseline.spec, baseline.params, Mask())
    points = [PathPoint(0.0, base, Mask(), make_row(0.0, base, Mask(), test_data, layers, 0))]
    if on_point is not None:
        on_point(points[0])
    net = base
    epochs_run = 0
    for i, mu in enumerate(schedule.mus, 1):
        epochs = epoch_schedule(i, schedule.delta, schedule.nu)
        state = AdmmState.start(Network(net.spec, net.params, Mask()), rho, mu, layers, epochs_run)
        try:
            state, converged, iters = inner_admm(state, train_data, epochs, schedule, kind, guard, seed)
            mask = mask_from_aux(state.F)
            tuned = fine_tune(state.net, mask, train_data, epochs, schedule.lr, schedule.batch_size,
                              seed, state.epochs_run, schedule.momentum)
        except DivergenceError as exc:
            log.error("path aborted at mu=%g: %s", mu, exc)
            break
        epochs_run = state.epochs_run + epochs
        row = make_row(mu, tuned, mask, test_data, layers, epochs * iters + epochs)
        point = PathPoint(mu, tuned, mask, row, iters, converged, state)
        log.info("mu=%g iterations=%d converged=%s accuracy=%.2f sparsity=%.2f",
                 mu, iters, converged, row.accuracy_pct, row.sparsity_pct)
        points.append(point)
        if on_point is not None:
            on_point(point)
        net = tuned
    return points
