"""Equivalence certification: the compiled logic must reproduce the
quantized network bit for bit.

Three granularities: per-neuron cover checks (exhaustive up to 12 table
inputs, seeded random sampling beyond), randomized end-to-end netlist
versus network comparison, and task accuracy measured on the netlist.
A PASS requires zero mismatches everywhere; failures carry witnesses in
both minterm and per-input-level form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .netlist import Netlist, simulate_batch
from .qnn import ActivationSpec, QuantNetwork, forward_batch
from .truthtable import (BitEncoding, eval_neuron_minterms, output_encoding,
                         surviving_inputs, _layer_input_spec)
from .twolevel import Cover

EXHAUSTIVE_LIMIT = 12
DEFAULT_SAMPLES = 10_000


@dataclass
class NeuronBitCheck:
    layer: int
    neuron: int
    bit: int
    minterms_checked: int
    mismatches: int
    witness: dict | None = None

    @property
    def passed(self) -> bool:
        return self.mismatches == 0


@dataclass
class EndToEndResult:
    samples: int
    mismatches: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches


@dataclass
class EquivalenceReport:
    neuron_checks: list[NeuronBitCheck] = field(default_factory=list)
    end_to_end: EndToEndResult | None = None
    logic_accuracy: float | None = None
    network_accuracy: float | None = None

    @property
    def passed(self) -> bool:
        if any(not c.passed for c in self.neuron_checks):
            return False
        if self.end_to_end is not None and not self.end_to_end.passed:
            return False
        if self.logic_accuracy is not None and self.network_accuracy is not None \
                and self.logic_accuracy != self.network_accuracy:
            return False
        return True


def check_neuron(net: QuantNetwork, layer: int, neuron: int,
                 covers_per_bit: list[Cover], samples: int = DEFAULT_SAMPLES,
                 seed: int = 0) -> list[NeuronBitCheck]:
    """Compare each output bit's cover against direct neuron evaluation.

    Exhaustive when the table has at most 12 inputs, otherwise ``samples``
    seeded random minterms. The first mismatch per bit is reported both as
    a minterm and as the surviving inputs' decoded levels.
    """
    in_spec = _layer_input_spec(net, layer)
    survivors = surviving_inputs(net, layer, neuron)
    n = len(survivors) * in_spec.bits
    if n <= EXHAUSTIVE_LIMIT:
        minterms = np.arange(1 << n, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        minterms = rng.integers(0, 1 << n, size=samples, dtype=np.int64)
    levels = eval_neuron_minterms(net, layer, neuron, minterms)
    enc_out = output_encoding(net, layer)
    codes = enc_out.encode(levels)
    enc_in = BitEncoding.for_activation(in_spec)
    results = []
    for b, cover in enumerate(covers_per_bit):
        if cover.width != n:
            raise ValueError(f"layer {layer} neuron {neuron} bit {b}: cover width "
                             f"{cover.width}, table has {n} inputs")
        expected = ((codes >> b) & 1).astype(bool)
        got = np.zeros(len(minterms), dtype=bool)
        for cube in cover.cubes:
            got |= cube.covers_array(minterms)
        diff = expected != got
        mismatches = int(diff.sum())
        witness = None
        if mismatches:
            m = int(minterms[np.argmax(diff)])
            lv = {}
            for j, src in enumerate(survivors):
                code = (m >> (j * in_spec.bits)) & ((1 << in_spec.bits) - 1)
                lv[str(src)] = int(enc_in.decode(code))
            witness = {"minterm": m, "input_levels": lv,
                       "expected_bit": int(expected[np.argmax(diff)]),
                       "cover_bit": int(got[np.argmax(diff)])}
        results.append(NeuronBitCheck(layer=layer, neuron=neuron, bit=b,
                                      minterms_checked=len(minterms),
                                      mismatches=mismatches, witness=witness))
    return results


def encode_inputs(input_quant: ActivationSpec, x: np.ndarray) -> np.ndarray:
    """Standardized features -> primary input bit matrix (feature-major,
    LSB-first within each feature), matching the netlist input ordering."""
    x = np.asarray(x, dtype=np.float64)
    levels = input_quant.quantize(x)
    codes = BitEncoding.for_activation(input_quant).encode(levels)
    bits = np.zeros((x.shape[0], x.shape[1] * input_quant.bits), dtype=np.uint8)
    for i in range(x.shape[1]):
        for p in range(input_quant.bits):
            bits[:, i * input_quant.bits + p] = (codes[:, i] >> p) & 1
    return bits


def _expected_output_bits(net: QuantNetwork, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(classes, output bit matrix) the netlist must reproduce for inputs x."""
    classes, levels = forward_batch(net, x)
    if net.output_quant is not None:
        idx_width = max(1, int(np.ceil(np.log2(net.num_classes)))) if net.num_classes > 1 else 1
        bits = np.zeros((x.shape[0], idx_width), dtype=np.uint8)
        for p in range(idx_width):
            bits[:, p] = (classes >> p) & 1
        return classes, bits
    enc = output_encoding(net, len(net.layers) - 1)
    codes = enc.encode(levels[-1])
    width = net.layers[-1].out_features
    bits = np.zeros((x.shape[0], width * enc.bits), dtype=np.uint8)
    for j in range(width):
        for b in range(enc.bits):
            bits[:, j * enc.bits + b] = (codes[:, j] >> b) & 1
    return classes, bits


def check_end_to_end(net: QuantNetwork, nl: Netlist, samples: int,
                     seed: int = 0) -> EndToEndResult:
    """Draw standard-normal inputs, run network and netlist, compare.

    For a classifier the predicted classes must agree on every sample;
    otherwise the final layer's level bits are compared directly.
    """
    result = EndToEndResult(samples=samples)
    if samples == 0:
        result.warnings.append("0 samples requested: vacuous PASS")
        return result
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples, net.input_dim))
    classes, expected_bits = _expected_output_bits(net, x)
    in_bits = encode_inputs(net.input_quant, x)
    got_bits = simulate_batch(nl, in_bits)
    if got_bits.shape[1] != expected_bits.shape[1]:
        raise ValueError(f"netlist has {got_bits.shape[1]} output bits, "
                         f"network implies {expected_bits.shape[1]}")
    diff = np.any(got_bits != expected_bits, axis=1)
    for i in np.flatnonzero(diff)[:16]:
        entry = {"sample": int(i),
                 "expected_bits": [int(v) for v in expected_bits[i]],
                 "netlist_bits": [int(v) for v in got_bits[i]]}
        if net.output_quant is not None:
            got_class = sum(int(got_bits[i, p]) << p for p in range(got_bits.shape[1]))
            entry["expected_class"] = int(classes[i])
            entry["netlist_class"] = got_class
        result.mismatches.append(entry)
    if diff.any() and len(result.mismatches) < int(diff.sum()):
        result.warnings.append(f"{int(diff.sum())} mismatching samples; first 16 recorded")
    return result


def logic_accuracy(nl: Netlist, data: Dataset, input_quant: ActivationSpec) -> float:
    """Task accuracy of the compiled classifier on a standardized dataset."""
    if data.num_samples == 0:
        raise ValueError("cannot measure accuracy on an empty dataset")
    bits = encode_inputs(input_quant, data.features)
    out = simulate_batch(nl, bits)
    classes = np.zeros(data.num_samples, dtype=np.int64)
    for p in range(out.shape[1]):
        classes |= out[:, p].astype(np.int64) << p
    return float(np.mean(classes == data.labels))
