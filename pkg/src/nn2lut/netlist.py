"""K-input LUT netlists: technology mapping of covers, layer-boundary
pipeline registers, the argmax comparator tree, structural Verilog, and
pre-synthesis cost reports.

Mapping strategy: a cover whose support fits one LUT becomes that single
LUT. Otherwise cubes wider than K are pre-reduced by chains of AND LUTs
(inverted literals folded into the masks), the resulting product terms are
first-fit packed into shared sum-of-products LUTs, and any remaining
partial sums feed an OR tree. All orders are fixed, so emission is
byte-reproducible.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .qnn import QuantNetwork, fingerprint as network_fingerprint
from .truthtable import output_encoding, surviving_inputs
from .twolevel import Cover, Cube, cover_function


@dataclass
class LutNode:
    name: str
    inputs: list[str]
    mask: int
    layer: str = ""


@dataclass
class Netlist:
    k: int
    inputs: list[str]
    luts: list[LutNode] = field(default_factory=list)
    register_stages: list[list[tuple[str, str]]] = field(default_factory=list)  # (q, d)
    outputs: list[tuple[str, str]] = field(default_factory=list)  # (port, net)
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def lut_count(self) -> int:
        return len(self.luts)

    @property
    def ff_count(self) -> int:
        return sum(len(stage) for stage in self.register_stages)


@dataclass
class LayerCost:
    name: str
    luts: int
    ffs: int
    depth: int


@dataclass
class CostReport:
    lut_count: int
    ff_count: int
    depth: int
    latency_cycles: int
    per_layer: list[LayerCost] = field(default_factory=list)


# --- cover -> LUT mapping ------------------------------------------------------

Literal = tuple[str, int]  # (net name, required value)


def _sop_mask(inputs: list[str], terms: list[list[Literal]]) -> int:
    """Bitmask of the OR-of-ANDs over the given inputs (index = LSB-first)."""
    index = {net: i for i, net in enumerate(inputs)}
    mask = 0
    for a in range(1 << len(inputs)):
        for term in terms:
            if all(((a >> index[net]) & 1) == val for net, val in term):
                mask |= 1 << a
                break
    return mask


def _cube_literals(cube: Cube, input_nets: list[str]) -> list[Literal]:
    lits = []
    for v in range(cube.width):
        bit = 1 << v
        if cube.pos & bit:
            lits.append((input_nets[v], 1))
        elif cube.neg & bit:
            lits.append((input_nets[v], 0))
    return lits


def map_cover(cover: Cover, k: int, input_nets: list[str] | None = None,
              prefix: str = "f", layer: str = "") -> tuple[list[LutNode], str]:
    """Map one single-output cover onto a sub-DAG of <=k-input LUTs.

    Returns the new LUT nodes (in topological order) and the output net,
    which is always named ``prefix``. The sub-DAG computes exactly the
    cover's function.
    """
    if not 2 <= k <= 6:
        raise ValueError(f"LUT size must be between 2 and 6, got {k}")
    if cover.width < 1:
        raise ValueError("cover width must be at least 1")
    if input_nets is None:
        input_nets = [f"x{v}" for v in range(cover.width)]
    if len(input_nets) != cover.width:
        raise ValueError("need one input net per cover variable")

    luts: list[LutNode] = []
    temp_count = 0

    def fresh() -> str:
        nonlocal temp_count
        name = f"{prefix}_t{temp_count}"
        temp_count += 1
        return name

    if not cover.cubes:
        return [LutNode(prefix, [input_nets[0]], 0, layer)], prefix
    if any(c.literal_count == 0 for c in cover.cubes):  # tautology cube
        return [LutNode(prefix, [input_nets[0]], 0b11, layer)], prefix

    support = sorted({v for c in cover.cubes for v in range(cover.width)
                      if ((c.pos | c.neg) >> v) & 1})
    if len(support) <= k:
        if cover.width <= k:
            nets = list(input_nets)
            mask = 0
            for m in sorted(cover_function(cover)):
                mask |= 1 << m
            return [LutNode(prefix, nets, mask, layer)], prefix
        nets = [input_nets[v] for v in support]
        var_pos = {v: i for i, v in enumerate(support)}
        terms = []
        for c in cover.cubes:
            terms.append([(nets[var_pos[v]], 1 if (c.pos >> v) & 1 else 0)
                          for v in support if ((c.pos | c.neg) >> v) & 1])
        return [LutNode(prefix, nets, _sop_mask(nets, terms), layer)], prefix

    # pre-reduce wide cubes with AND chains, keeping the tail for packing
    terms: list[list[Literal]] = []
    for cube in cover.cubes:
        items = _cube_literals(cube, input_nets)
        while len(items) > k:
            take, items = items[:k], items[k:]
            node = LutNode(fresh(), [net for net, _ in take],
                           _sop_mask([net for net, _ in take], [take]), layer)
            luts.append(node)
            items.append((node.name, 1))
        terms.append(items)

    # first-fit-decreasing packing of whole product terms into shared LUTs
    terms.sort(key=lambda t: (-len(t), [(net, val) for net, val in t]))
    bins: list[tuple[list[str], list[list[Literal]]]] = []
    for term in terms:
        term_nets = []
        for net, _ in term:
            if net not in term_nets:
                term_nets.append(net)
        placed = False
        for nets, members in bins:
            extra = [n for n in term_nets if n not in nets]
            if len(nets) + len(extra) <= k:
                nets.extend(extra)
                members.append(term)
                placed = True
                break
        if not placed:
            bins.append((list(term_nets), [term]))

    if len(bins) == 1:
        nets, members = bins[0]
        return luts + [LutNode(prefix, nets, _sop_mask(nets, members), layer)], prefix

    pending: list[str] = []
    for nets, members in bins:
        node = LutNode(fresh(), nets, _sop_mask(nets, members), layer)
        luts.append(node)
        pending.append(node.name)
    while len(pending) > k:
        take, pending = pending[:k], pending[k:]
        node = LutNode(fresh(), take,
                       _sop_mask(take, [[(n, 1)] for n in take]), layer)
        luts.append(node)
        pending.append(node.name)
    luts.append(LutNode(prefix, pending,
                        _sop_mask(pending, [[(n, 1)] for n in pending]), layer))
    return luts, prefix


# --- argmax comparator tree ----------------------------------------------------

BitValue = object  # int constant 0/1 or a net name string


def _map_small(cover: Cover, k: int, inputs: list[str], name: str, layer: str) -> LutNode:
    nodes, _ = map_cover(cover, k, inputs, prefix=name, layer=layer)
    assert len(nodes) == 1
    return nodes[0]


def _signed_ge(a_nets: list[str], b_nets: list[str], k: int, prefix: str,
               layer: str) -> tuple[list[LutNode], str]:
    """a >= b over two's complement bit vectors (LSB first), as LUTs.

    LSB-to-MSB chain; the sign stage swaps the greater-than sense.
    """
    width = len(a_nets)
    luts: list[LutNode] = []
    prev = None
    for i in range(width):
        last = i == width - 1
        name = prefix if last else f"{prefix}_s{i}"
        if i == 0 and last:  # single signed bit: a >= b unless a=1, b=0
            cover = Cover(2, [Cube.from_string("-0"), Cube.from_string("1-")])
            node = _map_small(cover, k, [a_nets[0], b_nets[0]], name, layer)
        elif i == 0:
            # unsigned bit: a | ~b
            cover = Cover(2, [Cube.from_string("-1"), Cube.from_string("0-")])
            node = _map_small(cover, k, [a_nets[0], b_nets[0]], name, layer)
        else:
            gt = "-10" if last else "-01"  # sign bit: a < b means a=1; else a=1,b=0
            cover = Cover(3, [Cube.from_string(gt), Cube.from_string("111"),
                              Cube.from_string("100")])
            node = _map_small(cover, k, [a_nets[i], b_nets[i], prev], name, layer)
        luts.append(node)
        prev = node.name
    return luts, prev


def _mux(sel: str, hi: BitValue, lo: BitValue, k: int, name: str, layer: str) \
        -> tuple[list[LutNode], BitValue]:
    """out = hi when sel else lo; constant inputs fold into the mask."""
    if isinstance(hi, int) and isinstance(lo, int):
        if hi == lo:
            return [], hi
        if hi == 1:  # out = sel
            return [], sel
        node = _map_small(Cover(1, [Cube.from_string("0")]), k, [sel], name, layer)
        return [node], node.name
    if isinstance(hi, int):
        if hi == 1:  # sel | lo
            cover = Cover(2, [Cube.from_string("-1"), Cube.from_string("1-")])
        else:  # ~sel & lo
            cover = Cover(2, [Cube.from_string("10")])
        node = _map_small(cover, k, [sel, lo], name, layer)
        return [node], node.name
    if isinstance(lo, int):
        if lo == 1:  # hi | ~sel
            cover = Cover(2, [Cube.from_string("1-"), Cube.from_string("-0")])
        else:  # sel & hi
            cover = Cover(2, [Cube.from_string("11")])
        node = _map_small(cover, k, [sel, hi], name, layer)
        return [node], node.name
    cover = Cover(3, [Cube.from_string("-11"), Cube.from_string("1-0")])
    node = _map_small(cover, k, [sel, hi, lo], name, layer)
    return [node], node.name


def _argmax_tree(class_scores: list[list[str]], k: int, idx_width: int,
                 const_anchor: str, layer: str = "argmax") \
        -> tuple[list[LutNode], list[str]]:
    """Tournament of pairwise signed comparisons; ties pick the lower index.

    Entries stay in ascending class order, so the left (lower) side wins on
    equality at every level. Returns the winner index bit nets.
    """
    luts: list[LutNode] = []
    entries: list[tuple[list[str] | None, list[BitValue]]] = []
    for c, nets in enumerate(class_scores):
        entries.append((nets, [(c >> p) & 1 for p in range(idx_width)]))
    rnd = 0
    while len(entries) > 1:
        nxt = []
        survivors_after = (len(entries) + 1) // 2
        for p in range(0, len(entries) - 1, 2):
            a_scores, a_idx = entries[p]
            b_scores, b_idx = entries[p + 1]
            prefix = f"amx_r{rnd}_p{p // 2}"
            ge_luts, ge = _signed_ge(a_scores, b_scores, k, f"{prefix}_ge", layer)
            luts.extend(ge_luts)
            if survivors_after > 1:
                w_scores = []
                for i in range(len(a_scores)):
                    m_luts, out = _mux(ge, a_scores[i], b_scores[i], k,
                                       f"{prefix}_s{i}", layer)
                    luts.extend(m_luts)
                    w_scores.append(out)
            else:
                w_scores = None
            w_idx = []
            for i in range(idx_width):
                m_luts, out = _mux(ge, a_idx[i], b_idx[i], k, f"{prefix}_i{i}", layer)
                luts.extend(m_luts)
                w_idx.append(out)
            nxt.append((w_scores, w_idx))
        if len(entries) % 2:
            nxt.append(entries[-1])
        entries = nxt
        rnd += 1
    _, idx = entries[0]
    out_nets = []
    for p, bit in enumerate(idx):
        if isinstance(bit, int):
            node = LutNode(f"amx_const_i{p}", [const_anchor],
                           0b11 if bit else 0, layer)
            luts.append(node)
            out_nets.append(node.name)
        else:
            out_nets.append(bit)
    return luts, out_nets


# --- whole-network assembly ----------------------------------------------------

def build_netlist(net: QuantNetwork, covers: list[list[list[Cover]]], k: int,
                  pipeline: bool) -> Netlist:
    """Wire per-neuron-bit covers into one netlist.

    Layer outputs feed the next layer per the recorded fanin masks; when
    ``pipeline`` is set every layer boundary gets a register stage. For a
    classifier (calibrated output quantizer) the argmax comparator tree is
    appended and the primary outputs are the winning class index bits;
    otherwise the final layer's level bits come out directly.
    """
    if len(covers) != len(net.layers):
        raise ValueError(f"have covers for {len(covers)} layers, network has {len(net.layers)}")
    iq = net.input_quant
    inputs = [f"in{i}_b{p}" for i in range(net.input_dim) for p in range(iq.bits)]
    nl = Netlist(k=k, inputs=list(inputs), fingerprint=network_fingerprint(net))
    source_nets = list(inputs)
    stage_layers: list[str] = []
    layer_order: list[str] = []
    for li, layer in enumerate(net.layers):
        in_bits = iq.bits if li == 0 else net.layers[li - 1].activation.bits
        enc = output_encoding(net, li)
        if len(covers[li]) != layer.out_features:
            raise ValueError(f"layer {li}: covers for {len(covers[li])} neurons, "
                             f"expected {layer.out_features}")
        layer_name = f"L{li}"
        layer_order.append(layer_name)
        layer_nets: list[str] = []
        for j in range(layer.out_features):
            survivors = surviving_inputs(net, li, j)
            width = len(survivors) * in_bits
            per_bit = covers[li][j]
            if len(per_bit) != enc.bits:
                raise ValueError(f"layer {li} neuron {j}: {len(per_bit)} covers, "
                                 f"expected {enc.bits} output bits")
            table_nets = [source_nets[src * in_bits + p]
                          for src in survivors for p in range(in_bits)]
            for b, cover in enumerate(per_bit):
                if cover.width != width:
                    raise ValueError(f"layer {li} neuron {j} bit {b}: cover width "
                                     f"{cover.width} does not match {width} table inputs")
                lut_nodes, out = map_cover(cover, k, table_nets,
                                           prefix=f"L{li}_n{j}_b{b}", layer=layer_name)
                nl.luts.extend(lut_nodes)
                layer_nets.append(out)
        if pipeline:
            stage = [(f"{net_name}_q", net_name) for net_name in layer_nets]
            nl.register_stages.append(stage)
            stage_layers.append(layer_name)
            source_nets = [q for q, _ in stage]
        else:
            source_nets = layer_nets

    last_enc = output_encoding(net, len(net.layers) - 1)
    if net.output_quant is None:
        for j in range(net.layers[-1].out_features):
            for b in range(last_enc.bits):
                nl.outputs.append((f"out{j}_b{b}", source_nets[j * last_enc.bits + b]))
    else:
        classes = net.layers[-1].out_features
        score_nets = [source_nets[c * last_enc.bits:(c + 1) * last_enc.bits]
                      for c in range(classes)]
        idx_width = max(1, math.ceil(math.log2(classes))) if classes > 1 else 1
        amx_luts, idx_nets = _argmax_tree(score_nets, k, idx_width,
                                          const_anchor=source_nets[0])
        nl.luts.extend(amx_luts)
        layer_order.append("argmax")
        for p, net_name in enumerate(idx_nets):
            nl.outputs.append((f"class_b{p}", net_name))
    nl.meta = {"layer_order": layer_order, "stage_layers": stage_layers}
    return nl


def validate(nl: Netlist) -> None:
    """Structural checks: acyclic (defined-before-use), LUT arity, mask range."""
    defined = set(nl.inputs)
    alias = {}
    for stage in nl.register_stages:
        for q, _ in stage:
            alias[q] = None
    next_stage = 0
    reg_d_done: set[str] = set()
    for lut in nl.luts:
        # register stages become visible once all their D nets exist
        while next_stage < len(nl.register_stages) and \
                all(d in defined for _, d in nl.register_stages[next_stage]):
            for q, _ in nl.register_stages[next_stage]:
                defined.add(q)
            next_stage += 1
        if not 1 <= len(lut.inputs) <= nl.k:
            raise ValueError(f"LUT {lut.name} has {len(lut.inputs)} inputs, k={nl.k}")
        if not 0 <= lut.mask < (1 << (1 << len(lut.inputs))):
            raise ValueError(f"LUT {lut.name} mask out of range")
        for inp in lut.inputs:
            if inp not in defined:
                raise ValueError(f"LUT {lut.name} reads undefined net {inp}")
        if lut.name in defined:
            raise ValueError(f"net {lut.name} defined twice")
        defined.add(lut.name)
    while next_stage < len(nl.register_stages):
        for q, d in nl.register_stages[next_stage]:
            if d not in defined:
                raise ValueError(f"register {q} captures undefined net {d}")
            defined.add(q)
        next_stage += 1
    for port, net_name in nl.outputs:
        if net_name not in defined:
            raise ValueError(f"output {port} reads undefined net {net_name}")


def simulate_batch(nl: Netlist, x_bits: np.ndarray) -> np.ndarray:
    """Functional (registers-transparent) evaluation of many input vectors."""
    x_bits = np.asarray(x_bits, dtype=np.uint8)
    if x_bits.ndim != 2 or x_bits.shape[1] != len(nl.inputs):
        raise ValueError(f"input width {x_bits.shape} does not match "
                         f"{len(nl.inputs)} primary inputs")
    values: dict[str, np.ndarray] = {}
    for i, name in enumerate(nl.inputs):
        values[name] = x_bits[:, i]
    alias = {q: d for stage in nl.register_stages for q, d in stage}

    def resolve(name: str) -> np.ndarray:
        seen = set()
        while name not in values:
            if name in seen or name not in alias:
                raise ValueError(f"undefined net {name}")
            seen.add(name)
            name = alias[name]
        return values[name]

    for lut in nl.luts:
        idx = np.zeros(x_bits.shape[0], dtype=np.uint64)
        for j, inp in enumerate(lut.inputs):
            idx |= resolve(inp).astype(np.uint64) << np.uint64(j)
        values[lut.name] = ((np.uint64(lut.mask) >> idx) & np.uint64(1)).astype(np.uint8)
    cols = [resolve(net_name) for _, net_name in nl.outputs]
    return np.stack(cols, axis=1) if cols else np.zeros((x_bits.shape[0], 0), dtype=np.uint8)


def simulate(nl: Netlist, input_bits) -> list[int]:
    out = simulate_batch(nl, np.asarray(input_bits, dtype=np.uint8)[None, :])
    return [int(v) for v in out[0]]


def report(nl: Netlist) -> CostReport:
    """LUT/FF counts and logic depth (longest LUT path between registers)."""
    level: dict[str, int] = {name: 0 for name in nl.inputs}
    for stage in nl.register_stages:
        for q, _ in stage:
            level[q] = 0
    depth = 0
    layer_luts: dict[str, int] = {}
    layer_depth: dict[str, int] = {}
    for lut in nl.luts:
        lv = 1 + max((level.get(inp, 0) for inp in lut.inputs), default=0)
        level[lut.name] = lv
        depth = max(depth, lv)
        tag = lut.layer or "logic"
        layer_luts[tag] = layer_luts.get(tag, 0) + 1
        layer_depth[tag] = max(layer_depth.get(tag, 0), lv)
    stage_layers = nl.meta.get("stage_layers", [])
    layer_ffs: dict[str, int] = {}
    for i, stage in enumerate(nl.register_stages):
        tag = stage_layers[i] if i < len(stage_layers) else f"stage{i}"
        layer_ffs[tag] = layer_ffs.get(tag, 0) + len(stage)
    order = nl.meta.get("layer_order") or sorted(set(layer_luts) | set(layer_ffs))
    per_layer = [LayerCost(name=tag, luts=layer_luts.get(tag, 0),
                           ffs=layer_ffs.get(tag, 0), depth=layer_depth.get(tag, 0))
                 for tag in order]
    return CostReport(lut_count=nl.lut_count, ff_count=nl.ff_count, depth=depth,
                      latency_cycles=len(nl.register_stages), per_layer=per_layer)


# --- structural Verilog ---------------------------------------------------------

def _sop_expression(lut: LutNode) -> str:
    n = len(lut.inputs)
    if lut.mask == 0:
        return "1'b0"
    if lut.mask == (1 << (1 << n)) - 1:
        return "1'b1"
    terms = []
    for a in range(1 << n):
        if (lut.mask >> a) & 1:
            lits = [(name if (a >> j) & 1 else f"~{name}")
                    for j, name in enumerate(lut.inputs)]
            terms.append("(" + " & ".join(lits) + ")")
    return " | ".join(terms)


def emit_verilog(nl: Netlist, module_name: str = "top") -> str:
    """One self-contained structural module; byte-deterministic."""
    lines: list[str] = []
    ports = []
    if nl.register_stages:
        ports.append("    input  wire clk")
    ports += [f"    input  wire {name}" for name in nl.inputs]
    ports += [f"    output wire {port}" for port, _ in nl.outputs]
    lines.append(f"module {module_name} (")
    lines.append(",\n".join(ports))
    lines.append(");")
    lines.append("")
    for lut in nl.luts:
        lines.append(f"  wire {lut.name};")
    lines.append("")
    for lut in nl.luts:
        lines.append(f"  assign {lut.name} = {_sop_expression(lut)};")
    for i, stage in enumerate(nl.register_stages):
        lines.append("")
        lines.append(f"  // register stage {i}")
        for q, _ in stage:
            lines.append(f"  reg {q};")
        lines.append("  always @(posedge clk) begin")
        for q, d in stage:
            lines.append(f"    {q} <= {d};")
        lines.append("  end")
    lines.append("")
    for port, net_name in nl.outputs:
        lines.append(f"  assign {port} = {net_name};")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


# --- serialization ---------------------------------------------------------------

NETLIST_FORMAT = "nn2lut-netlist-v1"


def netlist_to_dict(nl: Netlist) -> dict:
    return {
        "format": NETLIST_FORMAT,
        "k": nl.k,
        "fingerprint": nl.fingerprint,
        "inputs": list(nl.inputs),
        "luts": [{"name": l.name, "inputs": list(l.inputs), "mask": hex(l.mask),
                  "layer": l.layer} for l in nl.luts],
        "register_stages": [[[q, d] for q, d in stage] for stage in nl.register_stages],
        "outputs": [[port, net_name] for port, net_name in nl.outputs],
        "meta": nl.meta,
    }


def netlist_from_dict(doc: dict) -> Netlist:
    if doc.get("format") != NETLIST_FORMAT:
        raise ValueError(f"unsupported netlist format {doc.get('format')!r}")
    return Netlist(
        k=int(doc["k"]),
        inputs=list(doc["inputs"]),
        luts=[LutNode(name=e["name"], inputs=list(e["inputs"]), mask=int(e["mask"], 16),
                      layer=e.get("layer", "")) for e in doc["luts"]],
        register_stages=[[(q, d) for q, d in stage] for stage in doc["register_stages"]],
        outputs=[(port, net_name) for port, net_name in doc["outputs"]],
        fingerprint=doc.get("fingerprint", ""),
        meta=doc.get("meta", {}),
    )


def save_netlist(nl: Netlist, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(netlist_to_dict(nl), fh, indent=2)
        fh.write("\n")


def load_netlist(path: str) -> Netlist:
    with open(path) as fh:
        return netlist_from_dict(json.load(fh))
