"""Quantized fully-connected networks.

Every hidden neuron's activation is quantized to a small set of integer
levels, so once fanin is bounded the neuron is a finite Boolean function of
its inputs' level bits. Weights and biases stay full-precision; only
activations carry quantizers.

Level conventions:
  * ``bipolar``  - sign activation, 1 bit, levels {-1, +1}.
  * ``pact``     - clip to [0, alpha] then quantize; levels 0 .. 2^bits - 1,
                   value = level * alpha / (2^bits - 1).
  * ``signed``   - symmetric clip to [-alpha, alpha]; codes 0 .. 2^bits - 1,
                   value = -alpha + code * 2 * alpha / (2^bits - 1).

Rounding is half-away-from-zero everywhere. Classifier scores get their own
signed fixed-point quantizer (``OutputQuant``) once its range has been
calibrated; until then the final layer is left unquantized.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, FeatureStats

BIPOLAR = "bipolar"
PACT = "pact"
SIGNED = "signed"
ACTIVATION_KINDS = (BIPOLAR, PACT, SIGNED)

ALPHA_MIN = 1e-3


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.floor(np.abs(x) + 0.5) * np.sign(x)


def sign_activation(x):
    """+1 for x >= 0, -1 otherwise (the tie at exactly 0 maps to +1)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0.0, 1, -1).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def pact_quantize(x, alpha: float, bits: int):
    """Clip to [0, alpha], then quantize to 2^bits uniform levels.

    Returns the integer level; the dequantized value is
    ``level * alpha / (2^bits - 1)``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    k = (1 << bits) - 1
    y = np.clip(np.asarray(x, dtype=np.float64), 0.0, alpha)
    level = np.clip(round_half_away(y * k / alpha), 0, k).astype(np.int64)
    return int(level) if level.ndim == 0 else level


def signed_quantize(x, alpha: float, bits: int):
    """Symmetric variant: clip to [-alpha, alpha], 2^bits uniform levels."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    k = (1 << bits) - 1
    y = np.clip(np.asarray(x, dtype=np.float64), -alpha, alpha)
    code = np.clip(round_half_away((y + alpha) * k / (2.0 * alpha)), 0, k).astype(np.int64)
    return int(code) if code.ndim == 0 else code


@dataclass
class ActivationSpec:
    """Which quantizer a layer's outputs pass through."""

    kind: str
    bits: int = 1
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == BIPOLAR and self.bits != 1:
            raise ValueError("bipolar activation is 1-bit by definition")
        if self.kind == SIGNED and self.bits < 2:
            raise ValueError("signed quantizer needs bits >= 2 (use bipolar for 1 bit)")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if self.kind in (PACT, SIGNED) and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def num_levels(self) -> int:
        return 2 if self.kind == BIPOLAR else (1 << self.bits)

    def quantize(self, x):
        if self.kind == BIPOLAR:
            return sign_activation(x)
        if self.kind == PACT:
            return pact_quantize(x, self.alpha, self.bits)
        return signed_quantize(x, self.alpha, self.bits)

    def dequantize(self, levels):
        levels = np.asarray(levels, dtype=np.float64)
        if self.kind == BIPOLAR:
            return levels
        k = (1 << self.bits) - 1
        if self.kind == PACT:
            return levels * (self.alpha / k)
        return -self.alpha + levels * (2.0 * self.alpha / k)

    def surrogate(self, x):
        """Continuous stand-in whose derivative is the straight-through rule."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == BIPOLAR:
            return np.clip(x, -1.0, 1.0)
        if self.kind == PACT:
            return np.clip(x, 0.0, self.alpha)
        return np.clip(x, -self.alpha, self.alpha)

    def ste_input_mask(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == BIPOLAR:
            return (np.abs(x) <= 1.0).astype(np.float64)
        if self.kind == PACT:
            return ((x >= 0.0) & (x <= self.alpha)).astype(np.float64)
        return (np.abs(x) <= self.alpha).astype(np.float64)

    def ste_alpha_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == BIPOLAR:
            return np.zeros_like(x)
        if self.kind == PACT:
            return (x >= self.alpha).astype(np.float64)
        return np.where(x >= self.alpha, 1.0, 0.0) + np.where(x <= -self.alpha, -1.0, 0.0)


@dataclass
class OutputQuant:
    """Signed fixed-point quantizer for classifier scores.

    Scores are clipped to [-scale, scale] and mapped onto the symmetric level
    range [-(2^(bits-1)-1), +(2^(bits-1)-1)]; the most negative two's
    complement code is unused so negation stays symmetric.
    """

    bits: int
    scale: float

    def __post_init__(self):
        if self.bits < 2:
            raise ValueError("output quantizer needs bits >= 2")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def max_level(self) -> int:
        return (1 << (self.bits - 1)) - 1

    def quantize(self, x):
        m = self.max_level
        lev = np.clip(round_half_away(np.asarray(x, dtype=np.float64) * (m / self.scale)),
                      -m, m).astype(np.int64)
        return int(lev) if lev.ndim == 0 else lev


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(cls, width: int) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))

    def apply_running(self, z: np.ndarray) -> np.ndarray:
        return self.gamma * (z - self.running_mean) / np.sqrt(self.running_var + self.eps) + self.beta


@dataclass
class QuantLayer:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    mask: np.ndarray  # [out, in] of {0.0, 1.0}
    activation: ActivationSpec | None  # None = raw scores (classifier head)
    bn: BatchNorm | None = None

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    def effective_weights(self) -> np.ndarray:
        return self.weights * self.mask


@dataclass
class QuantNetwork:
    input_quant: ActivationSpec
    layers: list[QuantLayer]
    num_classes: int
    output_quant: OutputQuant | None = None
    seed: int | None = None

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_features

    def copy(self) -> "QuantNetwork":
        return copy.deepcopy(self)


def init_network(input_dim: int, widths: list[int], input_quant: ActivationSpec,
                 hidden_specs: list[ActivationSpec], num_classes: int,
                 batchnorm: bool, seed: int) -> QuantNetwork:
    """Fresh network: He-scaled weights, zero biases, all-ones masks.

    ``widths`` lists every layer's output width; the last entry is the
    classifier head (no activation). ``hidden_specs`` has one spec per
    non-final layer.
    """
    if widths[-1] != num_classes:
        raise ValueError("final layer width must equal num_classes")
    if len(hidden_specs) != len(widths) - 1:
        raise ValueError("need one activation spec per hidden layer")
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = input_dim
    for i, width in enumerate(widths):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(width, fan_in))
        spec = hidden_specs[i] if i < len(widths) - 1 else None
        bn = BatchNorm.identity(width) if (batchnorm and spec is not None) else None
        layers.append(QuantLayer(weights=w, bias=np.zeros(width),
                                 mask=np.ones((width, fan_in)), activation=spec, bn=bn))
        fan_in = width
    return QuantNetwork(input_quant=copy.deepcopy(input_quant), layers=layers,
                        num_classes=num_classes, seed=seed)


def layer_preact(xhat: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Pre-activations with a fixed summation order.

    Uses broadcast-multiply + pairwise reduction instead of BLAS matmul so
    the accumulation tree depends only on the layer width; truth-table
    enumeration and batched inference then produce bit-identical floats.
    """
    prod = xhat[:, None, :] * weights[None, :, :]
    return np.add.reduce(prod, axis=2) + bias


def _forward_levels(net: QuantNetwork, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Shared batched forward; returns raw scores and per-layer levels."""
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"input width {x.shape[-1] if x.ndim else '?'} does not match "
                         f"network input width {net.input_dim}")
    levels_per_layer = []
    lev = net.input_quant.quantize(x)
    levels_per_layer.append(lev)
    xhat = net.input_quant.dequantize(lev)
    scores = None
    for layer in net.layers:
        z = layer_preact(xhat, layer.effective_weights(), layer.bias)
        if layer.bn is not None:
            z = layer.bn.apply_running(z)
        if layer.activation is None:
            scores = z
            if net.output_quant is not None:
                levels_per_layer.append(net.output_quant.quantize(z))
            else:
                levels_per_layer.append(z)
        else:
            lev = layer.activation.quantize(z)
            levels_per_layer.append(lev)
            xhat = layer.activation.dequantize(lev)
    if scores is None:  # every layer quantized; no classifier head
        scores = xhat
    return scores, levels_per_layer


def forward_batch(net: QuantNetwork, x: np.ndarray, chunk: int = 2048) \
        -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward. Returns (classes, per-layer levels).

    Classes are argmax over quantized output levels when the output quantizer
    is calibrated, else over raw scores; ties go to the lowest class index.
    """
    x = np.asarray(x, dtype=np.float64)
    parts_cls, parts_lev = [], []
    for lo in range(0, x.shape[0], chunk):
        scores, levels = _forward_levels(net, x[lo:lo + chunk])
        decision = levels[-1] if net.output_quant is not None else scores
        parts_cls.append(np.argmax(decision, axis=1))
        parts_lev.append(levels)
    classes = np.concatenate(parts_cls) if parts_cls else np.zeros(0, dtype=np.int64)
    merged = []
    if parts_lev:
        for i in range(len(parts_lev[0])):
            merged.append(np.concatenate([p[i] for p in parts_lev], axis=0))
    return classes, merged


def forward(net: QuantNetwork, x) -> tuple[int, list[np.ndarray]]:
    """Single-sample forward: (class index, per-layer integer levels)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a single sample vector")
    classes, levels = forward_batch(net, x[None, :])
    return int(classes[0]), [lev[0] for lev in levels]


def evaluate(net: QuantNetwork, data: Dataset) -> float:
    """Fraction of samples whose predicted class equals the label."""
    if data.num_samples == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    classes, _ = forward_batch(net, data.features)
    return float(np.mean(classes == data.labels))


def fold_batchnorm(layer: QuantLayer) -> QuantLayer:
    """Absorb batch-norm into the affine weights/bias; forward outputs match.

    Per neuron j with s = gamma_j / sqrt(var_j + eps):
    weights row -> s * row, bias -> s * (bias - mean) + beta.
    """
    if layer.bn is None:
        raise ValueError("layer has no batch-norm parameters to fold")
    bn = layer.bn
    for name, arr in (("gamma", bn.gamma), ("beta", bn.beta),
                      ("running_mean", bn.running_mean), ("running_var", bn.running_var)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite batch-norm parameter {name}")
    if np.any(bn.running_var < 0):
        raise ValueError("negative batch-norm running variance")
    s = bn.gamma / np.sqrt(bn.running_var + bn.eps)
    return QuantLayer(weights=layer.weights * s[:, None],
                      bias=s * (layer.bias - bn.running_mean) + bn.beta,
                      mask=layer.mask.copy(),
                      activation=copy.deepcopy(layer.activation),
                      bn=None)


def fold_network(net: QuantNetwork) -> QuantNetwork:
    """Fold every layer that still carries batch-norm."""
    out = net.copy()
    out.layers = [fold_batchnorm(l) if l.bn is not None else l for l in out.layers]
    return out


def calibrate_output_quant(net: QuantNetwork, features: np.ndarray, bits: int) -> QuantNetwork:
    """Set the classifier score quantizer's range from observed |score| max."""
    if net.layers[-1].activation is not None:
        raise ValueError("final layer is quantized; no score calibration needed")
    out = net.copy()
    out.output_quant = None
    scores, _ = _forward_levels(out, np.asarray(features, dtype=np.float64))
    scale = float(np.max(np.abs(scores)))
    if scale == 0.0 or not math.isfinite(scale):
        scale = 1.0
    out.output_quant = OutputQuant(bits=bits, scale=scale)
    return out


# --- checkpoint serialization -------------------------------------------------

CHECKPOINT_FORMAT = "nn2lut-checkpoint-v1"


def _spec_to_dict(spec: ActivationSpec | None):
    if spec is None:
        return None
    d = {"kind": spec.kind, "bits": spec.bits}
    if spec.kind in (PACT, SIGNED):
        d["alpha"] = float(spec.alpha)
    return d


def _spec_from_dict(d) -> ActivationSpec | None:
    if d is None:
        return None
    return ActivationSpec(kind=d["kind"], bits=int(d["bits"]), alpha=float(d.get("alpha", 1.0)))


def network_to_dict(net: QuantNetwork) -> dict:
    layers = []
    for layer in net.layers:
        entry = {
            "weights": [[float(v) for v in row] for row in layer.weights],
            "bias": [float(v) for v in layer.bias],
            "mask": [[int(v) for v in row] for row in layer.mask],
            "activation": _spec_to_dict(layer.activation),
            "bn": None,
        }
        if layer.bn is not None:
            bn = layer.bn
            entry["bn"] = {
                "gamma": [float(v) for v in bn.gamma],
                "beta": [float(v) for v in bn.beta],
                "running_mean": [float(v) for v in bn.running_mean],
                "running_var": [float(v) for v in bn.running_var],
                "eps": float(bn.eps),
                "momentum": float(bn.momentum),
            }
        layers.append(entry)
    return {
        "format": CHECKPOINT_FORMAT,
        "seed": net.seed,
        "num_classes": net.num_classes,
        "input_quant": _spec_to_dict(net.input_quant),
        "output_quant": None if net.output_quant is None else
            {"bits": net.output_quant.bits, "scale": float(net.output_quant.scale)},
        "layers": layers,
    }


def network_from_dict(d: dict) -> QuantNetwork:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    layers = []
    for entry in d["layers"]:
        bn = None
        if entry.get("bn") is not None:
            b = entry["bn"]
            bn = BatchNorm(gamma=np.array(b["gamma"], dtype=np.float64),
                           beta=np.array(b["beta"], dtype=np.float64),
                           running_mean=np.array(b["running_mean"], dtype=np.float64),
                           running_var=np.array(b["running_var"], dtype=np.float64),
                           eps=float(b["eps"]), momentum=float(b["momentum"]))
        layers.append(QuantLayer(
            weights=np.array(entry["weights"], dtype=np.float64),
            bias=np.array(entry["bias"], dtype=np.float64),
            mask=np.array(entry["mask"], dtype=np.float64),
            activation=_spec_from_dict(entry["activation"]),
            bn=bn))
    oq = d.get("output_quant")
    return QuantNetwork(
        input_quant=_spec_from_dict(d["input_quant"]),
        layers=layers,
        num_classes=int(d["num_classes"]),
        output_quant=None if oq is None else OutputQuant(bits=int(oq["bits"]),
                                                         scale=float(oq["scale"])),
        seed=d.get("seed"))


def fingerprint(net: QuantNetwork) -> str:
    payload = json.dumps(network_to_dict(net), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_checkpoint(net: QuantNetwork, path: str, stats: FeatureStats | None = None) -> None:
    doc = network_to_dict(net)
    doc["feature_stats"] = None if stats is None else {
        "mean": [float(v) for v in stats.mean],
        "std": [float(v) for v in stats.std],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[QuantNetwork, FeatureStats | None]:
    with open(path) as fh:
        doc = json.load(fh)
    net = network_from_dict(doc)
    stats = None
    if doc.get("feature_stats") is not None:
        fs = doc["feature_stats"]
        stats = FeatureStats(mean=np.array(fs["mean"], dtype=np.float64),
                             std=np.array(fs["std"], dtype=np.float64))
    return net, stats
