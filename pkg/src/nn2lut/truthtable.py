"""Neuron-to-truth-table conversion by exhaustive input enumeration.

A neuron with F surviving inputs whose sources carry ``bits``-bit levels is
a Boolean function of n = F * bits variables. Bit position p of surviving
input i (ascending source order) sits at table variable index i * bits + p,
LSB first; minterm index bit v is table variable v. In PLA text the leftmost
column is the highest variable index.

Output levels are encoded per source kind: bipolar maps -1 to 0 and +1 to 1;
unsigned levels are plain binary; classifier scores use two's complement.
One completely specified single-output table is produced per output bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qnn import QuantNetwork, ActivationSpec, OutputQuant, layer_preact
from .twolevel import Cover, Cube

HARD_INPUT_CAP = 20  # 2^20 evaluations per table at most
DEFAULT_MAX_TABLE_INPUTS = 12


@dataclass
class TruthTable:
    num_inputs: int
    on_set: set[int]
    name: str = ""
    input_labels: list[tuple[int, int]] = field(default_factory=list)  # (source, bit)

    def __post_init__(self):
        self.on_set = set(int(m) for m in self.on_set)
        limit = 1 << self.num_inputs
        for m in self.on_set:
            if not 0 <= m < limit:
                raise ValueError(f"minterm {m} out of range for {self.num_inputs} inputs")


@dataclass(frozen=True)
class BitEncoding:
    """Invertible mapping between integer levels and bit codes."""

    bits: int
    scheme: str  # "bipolar" | "unsigned" | "twos_complement"

    @classmethod
    def for_activation(cls, spec: ActivationSpec) -> "BitEncoding":
        if spec.kind == "bipolar":
            return cls(bits=1, scheme="bipolar")
        return cls(bits=spec.bits, scheme="unsigned")

    @classmethod
    def for_output(cls, oq: OutputQuant) -> "BitEncoding":
        return cls(bits=oq.bits, scheme="twos_complement")

    def encode(self, levels):
        levels = np.asarray(levels, dtype=np.int64)
        if self.scheme == "bipolar":
            if not np.all(np.isin(levels, (-1, 1))):
                raise ValueError("bipolar levels must be -1 or +1")
            codes = (levels + 1) // 2
        elif self.scheme == "unsigned":
            if np.any(levels < 0) or np.any(levels >= (1 << self.bits)):
                raise ValueError("level outside unsigned range")
            codes = levels.copy()
        else:
            half = 1 << (self.bits - 1)
            if np.any(levels < -half) or np.any(levels >= half):
                raise ValueError("level outside two's complement range")
            codes = levels & ((1 << self.bits) - 1)
        return int(codes) if codes.ndim == 0 else codes

    def decode(self, codes):
        codes = np.asarray(codes, dtype=np.int64)
        if np.any(codes < 0) or np.any(codes >= (1 << self.bits)):
            raise ValueError("code outside encoding range")
        if self.scheme == "bipolar":
            levels = 2 * codes - 1
        elif self.scheme == "unsigned":
            levels = codes.copy()
        else:
            half = 1 << (self.bits - 1)
            levels = np.where(codes >= half, codes - (1 << self.bits), codes)
        return int(levels) if levels.ndim == 0 else levels


def _layer_input_spec(net: QuantNetwork, layer_idx: int) -> ActivationSpec:
    if layer_idx == 0:
        return net.input_quant
    spec = net.layers[layer_idx - 1].activation
    if spec is None:
        raise ValueError(f"layer {layer_idx - 1} has no activation; cannot feed layer {layer_idx}")
    return spec


def surviving_inputs(net: QuantNetwork, layer_idx: int, neuron_idx: int) -> list[int]:
    row = net.layers[layer_idx].mask[neuron_idx]
    return [int(i) for i in np.flatnonzero(row)]


def table_width(net: QuantNetwork, layer_idx: int, neuron_idx: int) -> int:
    return len(surviving_inputs(net, layer_idx, neuron_idx)) * _layer_input_spec(net, layer_idx).bits


def eval_neuron_minterms(net: QuantNetwork, layer_idx: int, neuron_idx: int,
                         minterms: np.ndarray) -> np.ndarray:
    """Output level of one neuron at each minterm over its surviving inputs.

    Decodes each minterm into the surviving inputs' levels, dequantizes,
    and runs the same pre-activation arithmetic as the network forward pass,
    so levels here agree bit-for-bit with inference.
    """
    layer = net.layers[layer_idx]
    if layer.bn is not None:
        raise ValueError(f"layer {layer_idx} still has batch-norm; fold it before extraction")
    in_spec = _layer_input_spec(net, layer_idx)
    survivors = surviving_inputs(net, layer_idx, neuron_idx)
    bits = in_spec.bits
    enc = BitEncoding.for_activation(in_spec)
    minterms = np.asarray(minterms, dtype=np.int64)

    out_spec = layer.activation
    if out_spec is None:
        if net.output_quant is None:
            raise ValueError("classifier output quantizer not calibrated")
        quantize = net.output_quant.quantize
    else:
        quantize = out_spec.quantize

    levels_out = np.empty(len(minterms), dtype=np.int64)
    chunk = max(1, 1 << 14)
    weights = layer.effective_weights()
    for lo in range(0, len(minterms), chunk):
        ms = minterms[lo:lo + chunk]
        xhat = np.zeros((len(ms), layer.in_features), dtype=np.float64)
        for j, src in enumerate(survivors):
            codes = (ms >> (j * bits)) & ((1 << bits) - 1)
            xhat[:, src] = in_spec.dequantize(enc.decode(codes))
        z = layer_preact(xhat, weights, layer.bias)
        levels_out[lo:lo + chunk] = quantize(z[:, neuron_idx])
    return levels_out


def output_encoding(net: QuantNetwork, layer_idx: int) -> BitEncoding:
    spec = net.layers[layer_idx].activation
    if spec is not None:
        return BitEncoding.for_activation(spec)
    if net.output_quant is None:
        raise ValueError("classifier output quantizer not calibrated")
    return BitEncoding.for_output(net.output_quant)


def extract_neuron(net: QuantNetwork, layer_idx: int, neuron_idx: int,
                   max_table_inputs: int = DEFAULT_MAX_TABLE_INPUTS) -> list[TruthTable]:
    """Enumerate one neuron exhaustively; one table per output bit.

    All returned tables share the same input ordering (ascending source
    index, LSB-first bit positions), recorded in ``input_labels``.
    """
    in_spec = _layer_input_spec(net, layer_idx)
    survivors = surviving_inputs(net, layer_idx, neuron_idx)
    n = len(survivors) * in_spec.bits
    cap = min(max_table_inputs, HARD_INPUT_CAP)
    if n > cap:
        raise ValueError(
            f"layer {layer_idx} neuron {neuron_idx}: {len(survivors)} surviving inputs x "
            f"{in_spec.bits} bits = {n} table inputs exceeds the limit of {cap}")
    minterms = np.arange(1 << n, dtype=np.int64)
    levels = eval_neuron_minterms(net, layer_idx, neuron_idx, minterms)
    enc = output_encoding(net, layer_idx)
    codes = enc.encode(levels)
    labels = [(src, p) for src in survivors for p in range(in_spec.bits)]
    tables = []
    for b in range(enc.bits):
        on = minterms[((codes >> b) & 1) == 1]
        tables.append(TruthTable(num_inputs=n, on_set=set(int(m) for m in on),
                                 name=f"L{layer_idx}_n{neuron_idx}_b{b}",
                                 input_labels=list(labels)))
    return tables


def extract_network(net: QuantNetwork,
                    max_table_inputs: int = DEFAULT_MAX_TABLE_INPUTS) \
        -> list[list[list[TruthTable]]]:
    """Tables for every neuron of every layer: result[layer][neuron][bit]."""
    out = []
    for li, layer in enumerate(net.layers):
        per_layer = []
        for j in range(layer.out_features):
            try:
                per_layer.append(extract_neuron(net, li, j, max_table_inputs))
            except ValueError as exc:
                raise ValueError(f"extraction failed at layer {li}, neuron {j}: {exc}") from exc
        out.append(per_layer)
    return out


# --- PLA interchange ----------------------------------------------------------

def write_pla(table: TruthTable) -> str:
    """Single-output PLA text, one minterm per cube line, ascending."""
    n = table.num_inputs
    lines = [f".i {n}", ".o 1", f".p {len(table.on_set)}"]
    for m in sorted(table.on_set):
        bits = "".join("1" if (m >> v) & 1 else "0" for v in range(n - 1, -1, -1))
        lines.append(f"{bits} 1")
    lines.append(".e")
    return "\n".join(lines) + "\n"


def write_cover_pla(cover: Cover) -> str:
    """PLA text for an arbitrary cube cover (used for minimized tables)."""
    lines = [f".i {cover.width}", ".o 1", f".p {len(cover.cubes)}"]
    for cube in cover.cubes:
        lines.append(f"{cube.to_string()} 1")
    lines.append(".e")
    return "\n".join(lines) + "\n"


def read_pla(text: str) -> tuple[int, Cover]:
    """Parse single-output PLA text into (num_inputs, ON-set cover)."""
    num_inputs = None
    num_outputs = None
    declared_cubes = None
    cubes: list[Cube] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("."):
            parts = line.split()
            directive = parts[0]
            if directive == ".i":
                num_inputs = int(parts[1])
            elif directive == ".o":
                num_outputs = int(parts[1])
                if num_outputs != 1:
                    raise ValueError(f"line {lineno}: only single-output PLA supported, got .o {num_outputs}")
            elif directive == ".p":
                declared_cubes = int(parts[1])
            elif directive == ".e":
                break
            else:
                raise ValueError(f"line {lineno}: unsupported directive {directive}")
            continue
        if num_inputs is None:
            raise ValueError(f"line {lineno}: cube line before .i header")
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected '<inputs> <output>'")
        in_part, out_part = parts
        if len(in_part) != num_inputs:
            raise ValueError(f"line {lineno}: cube width {len(in_part)} does not match .i {num_inputs}")
        if out_part != "1":
            raise ValueError(f"line {lineno}: output field must be '1', got {out_part!r}")
        try:
            cubes.append(Cube.from_string(in_part))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if num_inputs is None or num_outputs is None:
        raise ValueError("malformed PLA header: missing .i or .o")
    if declared_cubes is not None and declared_cubes != len(cubes):
        raise ValueError(f".p declares {declared_cubes} cubes but {len(cubes)} found")
    return num_inputs, Cover(num_inputs, cubes)
