"""Quantization-aware training: softmax cross-entropy, straight-through
estimators for the quantizers, plain SGD with momentum.

Backward rules (the derivative of each quantizer's clip surrogate):
  * bipolar: pass-through on |x| <= 1, zero outside.
  * pact:    d/dx = 1 on 0 <= x <= alpha; d/dalpha = 1 on x >= alpha.
  * signed:  d/dx = 1 on |x| <= alpha; d/dalpha = sign(x) outside the range.

Everything is single-threaded and deterministic given the seed: the same
Generator drives the batch shuffle, nothing else draws randomness.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset
from .qnn import ALPHA_MIN, BatchNorm, QuantNetwork, evaluate, layer_preact


@dataclass
class Hyper:
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    weight_decay: float = 0.0
    momentum: float = 0.9
    seed: int = 0


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    valid_acc: float


@dataclass
class _Cache:
    """Per-layer values kept from the forward pass for backprop."""
    x_in: np.ndarray
    z: np.ndarray  # pre-batchnorm
    a: np.ndarray  # post-batchnorm, pre-quantizer
    bn_xhat: np.ndarray | None = None
    bn_ivar: np.ndarray | None = None


def _bn_forward_train(bn: BatchNorm, z: np.ndarray, update_running: bool):
    mu = z.mean(axis=0)
    var = z.var(axis=0)
    ivar = 1.0 / np.sqrt(var + bn.eps)
    xhat = (z - mu) * ivar
    if update_running:
        bn.running_mean = (1 - bn.momentum) * bn.running_mean + bn.momentum * mu
        bn.running_var = (1 - bn.momentum) * bn.running_var + bn.momentum * var
    return bn.gamma * xhat + bn.beta, xhat, ivar


def _bn_backward(bn: BatchNorm, d_out: np.ndarray, xhat: np.ndarray, ivar: np.ndarray):
    m = d_out.shape[0]
    dgamma = np.sum(d_out * xhat, axis=0)
    dbeta = np.sum(d_out, axis=0)
    dxhat = d_out * bn.gamma
    dz = (ivar / m) * (m * dxhat - np.sum(dxhat, axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dz, dgamma, dbeta


def training_forward(net: QuantNetwork, x: np.ndarray, surrogate: bool = False,
                     update_running: bool = True):
    """Forward pass used for optimization.

    With ``surrogate=True`` the quantizers are replaced by their clip
    surrogates, making the whole network differentiable; the analytic
    gradients below are then exact (this is what the finite-difference
    check exercises). Returns (logits, caches, input_cache).
    """
    iq = net.input_quant
    x_in = x
    if surrogate:
        xhat = iq.surrogate(x)
    else:
        xhat = iq.dequantize(iq.quantize(x))
    caches: list[_Cache] = []
    for layer in net.layers:
        z = layer_preact(xhat, layer.effective_weights(), layer.bias)
        if layer.bn is not None:
            a, bn_xhat, bn_ivar = _bn_forward_train(layer.bn, z, update_running)
        else:
            a, bn_xhat, bn_ivar = z, None, None
        caches.append(_Cache(x_in=xhat, z=z, a=a, bn_xhat=bn_xhat, bn_ivar=bn_ivar))
        if layer.activation is None:
            xhat = a
        elif surrogate:
            xhat = layer.activation.surrogate(a)
        else:
            xhat = layer.activation.dequantize(layer.activation.quantize(a))
    return xhat, caches, x_in


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    m = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(probs[np.arange(m), labels] + 1e-300)))
    grad = probs.copy()
    grad[np.arange(m), labels] -= 1.0
    return loss, grad / m


@dataclass
class Gradients:
    d_weights: list[np.ndarray]
    d_bias: list[np.ndarray]
    d_gamma: list[np.ndarray | None]
    d_beta: list[np.ndarray | None]
    d_alpha: list[float]  # per layer (0.0 where not applicable)
    d_input_alpha: float


def backward(net: QuantNetwork, caches: list[_Cache], x_raw: np.ndarray,
             d_logits: np.ndarray) -> Gradients:
    """Backprop with the straight-through rules; exact for the surrogate net."""
    n_layers = len(net.layers)
    g = Gradients(d_weights=[None] * n_layers, d_bias=[None] * n_layers,
                  d_gamma=[None] * n_layers, d_beta=[None] * n_layers,
                  d_alpha=[0.0] * n_layers, d_input_alpha=0.0)
    d_out = d_logits
    for idx in range(n_layers - 1, -1, -1):
        layer = net.layers[idx]
        cache = caches[idx]
        if layer.activation is None:
            d_a = d_out
        else:
            spec = layer.activation
            d_a = d_out * spec.ste_input_mask(cache.a)
            if spec.kind != "bipolar":
                g.d_alpha[idx] = float(np.sum(d_out * spec.ste_alpha_grad(cache.a)))
        if layer.bn is not None:
            d_z, dgamma, dbeta = _bn_backward(layer.bn, d_a, cache.bn_xhat, cache.bn_ivar)
            g.d_gamma[idx], g.d_beta[idx] = dgamma, dbeta
        else:
            d_z = d_a
        g.d_weights[idx] = (d_z.T @ cache.x_in) * layer.mask
        g.d_bias[idx] = d_z.sum(axis=0)
        d_out = d_z @ layer.effective_weights()
    iq = net.input_quant
    if iq.kind != "bipolar":
        g.d_input_alpha = float(np.sum(d_out * iq.ste_alpha_grad(x_raw)))
    return g


class _SgdState:
    """Momentum buffers, one per trainable tensor."""

    def __init__(self, net: QuantNetwork):
        self.v_w = [np.zeros_like(l.weights) for l in net.layers]
        self.v_b = [np.zeros_like(l.bias) for l in net.layers]
        self.v_gamma = [np.zeros_like(l.bn.gamma) if l.bn is not None else None
                        for l in net.layers]
        self.v_beta = [np.zeros_like(l.bn.beta) if l.bn is not None else None
                       for l in net.layers]
        self.v_alpha = [0.0] * len(net.layers)
        self.v_input_alpha = 0.0


def sgd_step(net: QuantNetwork, grads: Gradients, state: _SgdState, hyper: Hyper) -> None:
    mu, lr = hyper.momentum, hyper.lr
    for i, layer in enumerate(net.layers):
        dw = grads.d_weights[i] + hyper.weight_decay * layer.weights
        state.v_w[i] = mu * state.v_w[i] + dw
        layer.weights -= lr * state.v_w[i]
        state.v_b[i] = mu * state.v_b[i] + grads.d_bias[i]
        layer.bias -= lr * state.v_b[i]
        if layer.bn is not None:
            state.v_gamma[i] = mu * state.v_gamma[i] + grads.d_gamma[i]
            layer.bn.gamma -= lr * state.v_gamma[i]
            state.v_beta[i] = mu * state.v_beta[i] + grads.d_beta[i]
            layer.bn.beta -= lr * state.v_beta[i]
        if layer.activation is not None and layer.activation.kind != "bipolar":
            state.v_alpha[i] = mu * state.v_alpha[i] + grads.d_alpha[i]
            layer.activation.alpha = max(layer.activation.alpha - lr * state.v_alpha[i],
                                         ALPHA_MIN)
        layer.weights *= layer.mask  # pruned weights never receive updates
    if net.input_quant.kind != "bipolar":
        state.v_input_alpha = mu * state.v_input_alpha + grads.d_input_alpha
        net.input_quant.alpha = max(net.input_quant.alpha - lr * state.v_input_alpha,
                                    ALPHA_MIN)


def train(net: QuantNetwork, train_data: Dataset, valid_data: Dataset, hyper: Hyper,
          step_hook: Callable[[int, QuantNetwork], None] | None = None,
          weight_grad_hook: Callable[[int, np.ndarray], np.ndarray] | None = None,
          select_best: bool = True,
          snapshot_filter: Callable[[QuantNetwork], bool] | None = None,
          ) -> tuple[QuantNetwork, list[EpochMetrics]]:
    """Mini-batch SGD training; returns the best-validation parameters.

    ``step_hook(step, net)`` fires after each optimizer step (pruning
    schedules recompute masks there). ``weight_grad_hook(layer, W)`` may
    return an extra weight-gradient term (the ADMM penalty uses it).
    ``snapshot_filter`` restricts which epoch-end states may be selected as
    best; with ``select_best=False`` the final parameters are returned.
    Raises RuntimeError if the loss goes non-finite.
    """
    net = net.copy()
    if hyper.epochs == 0:
        return net, []
    if train_data.num_features != net.input_dim:
        raise ValueError("training data width does not match network input width")
    rng = np.random.default_rng(hyper.seed)
    state = _SgdState(net)
    best_net, best_acc = None, -1.0
    metrics: list[EpochMetrics] = []
    step = 0
    n = train_data.num_samples
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            xb = train_data.features[idx]
            yb = train_data.labels[idx]
            logits, caches, x_raw = training_forward(net, xb)
            loss, d_logits = cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss {loss} at epoch {epoch}, step {step}")
            grads = backward(net, caches, x_raw, d_logits)
            if weight_grad_hook is not None:
                for li in range(len(net.layers)):
                    grads.d_weights[li] = grads.d_weights[li] + weight_grad_hook(li, net.layers[li].weights)
            sgd_step(net, grads, state, hyper)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            step += 1
            if step_hook is not None:
                step_hook(step, net)
        valid_acc = evaluate(net, valid_data)
        metrics.append(EpochMetrics(epoch=epoch, train_loss=loss_sum / n,
                                    train_acc=correct / n, valid_acc=valid_acc))
        if select_best and valid_acc > best_acc and \
                (snapshot_filter is None or snapshot_filter(net)):
            best_acc = valid_acc
            best_net = net.copy()
    if select_best and best_net is not None:
        return best_net, metrics
    return net, metrics
