"""Fanin-constrained pruning: cap the number of surviving inputs per neuron
so its truth table stays enumerable.

Two routes produce the same kind of mask:
  * gradual - magnitude pruning on a cubic sparsity schedule during training;
  * admm    - alternating SGD on an augmented loss with projection onto the
              per-row top-F feasible set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .qnn import QuantNetwork, round_half_away
from .training import Hyper, train

GRADUAL = "gradual"
ADMM = "admm"


@dataclass
class FcpConfig:
    fanin: int
    method: str = GRADUAL
    # gradual schedule (optimizer steps)
    start_step: int = 0
    duration: int = 1
    prune_every: int = 1
    # admm
    rho: float = 0.5
    admm_steps: int = 8
    epochs_per_round: int = 2
    fine_tune_epochs: int = 0

    def __post_init__(self):
        if self.fanin < 1:
            raise ValueError("fanin budget must be >= 1")
        if self.method not in (GRADUAL, ADMM):
            raise ValueError(f"unknown FCP method {self.method!r}")
        if self.method == GRADUAL and (self.duration < 1 or self.prune_every < 1):
            raise ValueError("gradual schedule needs duration >= 1 and prune_every >= 1")
        if self.method == ADMM and (self.rho <= 0 or self.admm_steps < 1):
            raise ValueError("admm needs rho > 0 and admm_steps >= 1")


def check_feasible(net: QuantNetwork, fanin: int, max_table_inputs: int) -> None:
    """Reject budgets whose truth tables could not be enumerated."""
    for i, layer in enumerate(net.layers):
        bits = net.input_quant.bits if i == 0 else net.layers[i - 1].activation.bits
        n = fanin * bits
        if n > max_table_inputs:
            raise ValueError(
                f"layer {i}: fanin {fanin} x {bits} input bits = {n} table inputs "
                f"exceeds the limit of {max_table_inputs}")


def topk_mask(weight_row: np.ndarray, keep: int) -> np.ndarray:
    """1.0 at the ``keep`` largest-magnitude positions, ties to lower index."""
    row = np.abs(np.asarray(weight_row, dtype=np.float64))
    n = row.shape[0]
    mask = np.zeros(n)
    if keep <= 0:
        return mask
    if keep >= n:
        return np.ones(n)
    # stable sort on (-|w|, index): equal magnitudes keep the earlier index
    order = np.argsort(-row, kind="stable")
    mask[order[:keep]] = 1.0
    return mask


def gradual_keep_count(t: int, n_in: int, fanin: int, t0: int, duration: int) -> int:
    """Cubic sparsity ramp: keep = n_in before t0, fanin after t0 + duration."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if fanin >= n_in:
        return n_in
    progress = min(max((t - t0) / duration, 0.0), 1.0)
    s_final = 1.0 - fanin / n_in
    s_t = s_final * (1.0 - (1.0 - progress) ** 3)
    keep = int(round_half_away(n_in * (1.0 - s_t)))
    return max(fanin, keep)


def apply_masks(net: QuantNetwork, keep_per_layer: list[int]) -> None:
    """Recompute every layer's masks via per-row top-k and zero pruned weights."""
    for layer, keep in zip(net.layers, keep_per_layer):
        for j in range(layer.out_features):
            layer.mask[j] = topk_mask(layer.weights[j], keep)
        layer.weights *= layer.mask


def masks_feasible(net: QuantNetwork, fanin: int) -> bool:
    return all(int(layer.mask.sum(axis=1).max()) <= fanin for layer in net.layers)


def apply_gradual_fcp(net: QuantNetwork, train_data: Dataset, valid_data: Dataset,
                      cfg: FcpConfig, hyper: Hyper,
                      max_table_inputs: int = 12) -> tuple[QuantNetwork, list]:
    """Train while tightening per-neuron masks on the cubic schedule, then
    fine-tune with the masks frozen. Returns (network, epoch metrics)."""
    if cfg.method != GRADUAL:
        raise ValueError("config method is not gradual")
    check_feasible(net, cfg.fanin, max_table_inputs)

    def hook(step: int, current: QuantNetwork) -> None:
        if step < cfg.start_step or (step - cfg.start_step) % cfg.prune_every != 0:
            return
        if step > cfg.start_step + cfg.duration + cfg.prune_every:
            return  # schedule over; masks frozen
        keeps = [gradual_keep_count(step, layer.in_features, min(cfg.fanin, layer.in_features),
                                    cfg.start_step, cfg.duration)
                 for layer in current.layers]
        apply_masks(current, keeps)

    pruned, metrics = train(net, train_data, valid_data, hyper, step_hook=hook,
                            snapshot_filter=lambda m: masks_feasible(m, cfg.fanin))
    # force the end-of-schedule budget even if training stopped early
    apply_masks(pruned, [min(cfg.fanin, l.in_features) for l in pruned.layers])
    if cfg.fine_tune_epochs > 0:
        ft = Hyper(lr=hyper.lr, epochs=cfg.fine_tune_epochs, batch_size=hyper.batch_size,
                   weight_decay=hyper.weight_decay, momentum=hyper.momentum,
                   seed=hyper.seed + 1)
        pruned, ft_metrics = train(pruned, train_data, valid_data, ft)
        metrics = metrics + ft_metrics
    return pruned, metrics


@dataclass
class AdmmInfo:
    residuals: list[float] = field(default_factory=list)  # ||W - Z||_F per round
    support_agreement: float = 0.0  # rows where topk(W) == support(Z) at harden time


def project_rows(w: np.ndarray, fanin: int) -> np.ndarray:
    """Euclidean projection onto the row-wise top-``fanin`` support set."""
    out = np.zeros_like(w)
    for j in range(w.shape[0]):
        m = topk_mask(w[j], fanin)
        out[j] = w[j] * m
    return out


def admm_fcp(net: QuantNetwork, train_data: Dataset, valid_data: Dataset,
             cfg: FcpConfig, hyper: Hyper,
             max_table_inputs: int = 12) -> tuple[QuantNetwork, list, AdmmInfo]:
    """ADMM with the indicator of the fanin-feasible set.

    Each round: SGD on loss + (rho/2)||W - Z + U||^2, then Z <- project(W + U)
    row-wise to top-F, then U <- U + W - Z. Z's support becomes the hard mask
    before fine-tuning.
    """
    if cfg.method != ADMM:
        raise ValueError("config method is not admm")
    check_feasible(net, cfg.fanin, max_table_inputs)
    current = net.copy()
    z = [project_rows(l.weights, min(cfg.fanin, l.in_features)) for l in current.layers]
    u = [np.zeros_like(l.weights) for l in current.layers]
    info = AdmmInfo()
    metrics = []
    round_hyper = Hyper(lr=hyper.lr, epochs=cfg.epochs_per_round, batch_size=hyper.batch_size,
                        weight_decay=hyper.weight_decay, momentum=hyper.momentum,
                        seed=hyper.seed)
    for r in range(cfg.admm_steps):
        round_hyper.seed = hyper.seed + r

        def penalty(layer_idx: int, w: np.ndarray) -> np.ndarray:
            return cfg.rho * (w - z[layer_idx] + u[layer_idx])

        current, m = train(current, train_data, valid_data, round_hyper,
                           weight_grad_hook=penalty, select_best=False)
        metrics.extend(m)
        for li, layer in enumerate(current.layers):
            z[li] = project_rows(layer.weights + u[li], min(cfg.fanin, layer.in_features))
            u[li] = u[li] + (layer.weights - z[li])  # exact no-op at zero residual
        info.residuals.append(float(np.sqrt(sum(
            np.sum((layer.weights - z[li]) ** 2) for li, layer in enumerate(current.layers)))))
    # harden: Z's support becomes the mask
    agree = total = 0
    for li, layer in enumerate(current.layers):
        keep = min(cfg.fanin, layer.in_features)
        for j in range(layer.out_features):
            w_support = topk_mask(layer.weights[j], keep)
            z_support = (z[li][j] != 0.0).astype(np.float64)
            if np.array_equal(w_support, z_support):
                agree += 1
            total += 1
            layer.mask[j] = z_support
        layer.weights *= layer.mask
    info.support_agreement = agree / total if total else 1.0
    if cfg.fine_tune_epochs > 0:
        ft = Hyper(lr=hyper.lr, epochs=cfg.fine_tune_epochs, batch_size=hyper.batch_size,
                   weight_decay=hyper.weight_decay, momentum=hyper.momentum,
                   seed=hyper.seed + cfg.admm_steps)
        current, ft_metrics = train(current, train_data, valid_data, ft)
        metrics.extend(ft_metrics)
    return current, metrics, info
