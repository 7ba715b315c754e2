"""Pipeline driver.

Subcommands:
  train         fit + prune a quantized network, write checkpoint/metrics
  compile       checkpoint -> PLA tables -> minimized PLAs -> LUT netlist
                -> Verilog + cost report
  verify        prove checkpoint and netlist equivalent (exit 0 on PASS)
  minimize-pla  two-level minimization of a standalone PLA file
  report        cost table + figure for an existing netlist

Every stage re-reads its inputs from disk, so stages can be re-run
independently; artifact pairs are tied together by a parameter fingerprint.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

from . import __version__
from .config import (SEED_DATA, SEED_SPLIT, SEED_INIT, SEED_VERIFY, ConfigError,
                     PipelineConfig, load_config)
from .dataset import Dataset, FeatureStats, load_csv, make_blobs, split, standardize
from .netlist import (build_netlist, emit_verilog, load_netlist, report,
                      save_netlist, validate)
from .pruning import ADMM, GRADUAL, admm_fcp, apply_gradual_fcp, check_feasible
from .qnn import (calibrate_output_quant, evaluate, fingerprint, fold_network,
                  init_network, load_checkpoint, save_checkpoint)
from .training import Hyper, train
from .truthtable import extract_network, read_pla, write_cover_pla, write_pla
from .twolevel import Cover, Cube, complement_minterms, espresso_minimize, minterm_cover
from .verify import (EquivalenceReport, check_end_to_end, check_neuron,
                     logic_accuracy)


def _build_raw_dataset(cfg: PipelineConfig) -> Dataset:
    ds = cfg.dataset
    if ds.csv is not None:
        return load_csv(ds.csv, ds.label_column)
    syn = ds.synthetic
    return make_blobs(samples=int(syn["samples"]), features=int(syn["features"]),
                      classes=int(syn["classes"]), spread=float(syn.get("spread", 1.0)),
                      center_scale=float(syn.get("center_scale", 2.5)),
                      seed=cfg.seed + SEED_DATA)


def _prepare_raw_splits(cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    raw = _build_raw_dataset(cfg)
    return split(raw, cfg.dataset.train_fraction, seed=cfg.seed + SEED_SPLIT)


def _write_metrics_csv(metrics, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "valid_acc"])
        for i, m in enumerate(metrics):
            writer.writerow([i, f"{m.train_loss:.6f}", f"{m.train_acc:.6f}",
                             f"{m.valid_acc:.6f}"])


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out,
                      label_column=args.label_column)
    os.makedirs(cfg.output_dir, exist_ok=True)
    train_raw, test_raw = _prepare_raw_splits(cfg)
    (std_train, std_test), stats = standardize(train_raw, [test_raw])
    num_classes = train_raw.num_classes
    widths = list(cfg.model.hidden_widths) + [num_classes]
    net = init_network(input_dim=std_train.num_features, widths=widths,
                       input_quant=cfg.model.input_quant,
                       hidden_specs=cfg.model.hidden_quants,
                       num_classes=num_classes, batchnorm=cfg.model.batchnorm,
                       seed=cfg.seed + SEED_INIT)
    check_feasible(net, cfg.fcp.fanin, cfg.compile.max_table_inputs)

    net, metrics = train(net, std_train, std_test, cfg.training)
    steps_per_epoch = max(1, math.ceil(std_train.num_samples / cfg.training.batch_size))
    if cfg.fcp.method == GRADUAL:
        prune_epochs = max(1, math.ceil(
            (cfg.fcp.start_step + cfg.fcp.duration + cfg.fcp.prune_every) / steps_per_epoch))
        fcp_hyper = dataclasses.replace(cfg.training, epochs=prune_epochs,
                                        seed=cfg.training.seed + 100)
        net, fcp_metrics = apply_gradual_fcp(net, std_train, std_test, cfg.fcp,
                                             fcp_hyper, cfg.compile.max_table_inputs)
    else:
        fcp_hyper = dataclasses.replace(cfg.training, seed=cfg.training.seed + 100)
        net, fcp_metrics, info = admm_fcp(net, std_train, std_test, cfg.fcp,
                                          fcp_hyper, cfg.compile.max_table_inputs)
        residuals = ", ".join(f"{r:.4f}" for r in info.residuals)
        print(f"admm primal residuals per round: {residuals}")
    metrics = metrics + fcp_metrics

    net = calibrate_output_quant(net, std_train.features, cfg.model.output_bits)
    net.seed = cfg.seed
    ckpt_path = os.path.join(cfg.output_dir, "checkpoint.json")
    save_checkpoint(net, ckpt_path, stats)
    _write_metrics_csv(metrics, os.path.join(cfg.output_dir, "metrics.csv"))
    from .plots import save_training_curves
    save_training_curves(metrics, os.path.join(cfg.output_dir, "training_curves.png"))

    fanins = [int(l.mask.sum(axis=1).max()) for l in net.layers]
    print(f"checkpoint: {ckpt_path}")
    print(f"train accuracy: {evaluate(net, std_train):.4f}")
    print(f"test accuracy:  {evaluate(net, std_test):.4f}")
    print(f"max fanin per layer: {fanins} (budget {cfg.fcp.fanin})")
    return 0


def _minimize_payload(payload):
    width, on = payload
    onset = minterm_cover(width, on)
    offset = minterm_cover(width, complement_minterms(width, on))
    cover = espresso_minimize(onset, offset)
    return [(c.pos, c.neg) for c in cover.cubes]


def cmd_compile(args) -> int:
    cfg = load_config(args.config, output_dir=args.out)
    out = cfg.output_dir
    ckpt_path = args.checkpoint or os.path.join(out, "checkpoint.json")
    net, _stats = load_checkpoint(ckpt_path)
    k = args.lut_size if args.lut_size is not None else cfg.compile.lut_size
    pipeline = cfg.compile.pipeline if args.pipeline is None else args.pipeline
    folded = fold_network(net) if any(l.bn is not None for l in net.layers) else net

    tables = extract_network(folded, cfg.compile.max_table_inputs)
    pla_dir = os.path.join(out, "pla")
    min_dir = os.path.join(out, "pla_min")
    os.makedirs(pla_dir, exist_ok=True)
    os.makedirs(min_dir, exist_ok=True)

    flat = []
    for per_layer in tables:
        for per_neuron in per_layer:
            for table in per_neuron:
                with open(os.path.join(pla_dir, f"{table.name}.pla"), "w") as fh:
                    fh.write(write_pla(table))
                flat.append(table)
    payloads = [(t.num_inputs, sorted(t.on_set)) for t in flat]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            raw_covers = list(pool.map(_minimize_payload, payloads, chunksize=4))
    else:
        raw_covers = [_minimize_payload(p) for p in payloads]
    covers_flat = [Cover(t.num_inputs, [Cube(t.num_inputs, pos, neg) for pos, neg in raw])
                   for t, raw in zip(flat, raw_covers)]
    for table, cover in zip(flat, covers_flat):
        with open(os.path.join(min_dir, f"{table.name}.pla"), "w") as fh:
            fh.write(write_cover_pla(cover))

    covers = []
    it = iter(covers_flat)
    for per_layer in tables:
        covers.append([[next(it) for _ in per_neuron] for per_neuron in per_layer])

    nl = build_netlist(folded, covers, k, pipeline)
    validate(nl)
    save_netlist(nl, os.path.join(out, "netlist.json"))
    with open(os.path.join(out, "top.v"), "w") as fh:
        fh.write(emit_verilog(nl, module_name="top"))

    rep = report(nl)
    _emit_cost_report(rep, out)
    total_minterms = sum(len(t.on_set) for t in flat)
    total_cubes = sum(len(c.cubes) for c in covers_flat)
    print(f"tables: {len(flat)} ({total_minterms} minterms -> {total_cubes} cubes)")
    print(f"netlist: {os.path.join(out, 'netlist.json')} | hdl: {os.path.join(out, 'top.v')}")
    return 0


def _emit_cost_report(rep, out_dir: str) -> None:
    csv_path = os.path.join(out_dir, "cost_report.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "luts", "ffs", "depth"])
        for lc in rep.per_layer:
            writer.writerow([lc.name, lc.luts, lc.ffs, lc.depth])
        writer.writerow(["total", rep.lut_count, rep.ff_count, rep.depth])
    lines = [f"{'layer':<10}{'LUTs':>8}{'FFs':>8}{'depth':>8}"]
    for lc in rep.per_layer:
        lines.append(f"{lc.name:<10}{lc.luts:>8}{lc.ffs:>8}{lc.depth:>8}")
    lines.append(f"{'total':<10}{rep.lut_count:>8}{rep.ff_count:>8}{rep.depth:>8}")
    lines.append(f"latency: {rep.latency_cycles} cycle(s); pre-synthesis estimates")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "cost_report.txt"), "w") as fh:
        fh.write(text)
    from .plots import save_cost_figure
    save_cost_figure(rep, os.path.join(out_dir, "cost_report.png"))
    print(text, end="")


def _load_neuron_covers(pla_dir: str, name: str) -> Cover:
    path = os.path.join(pla_dir, f"{name}.pla")
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing minimized PLA {path}")
    with open(path) as fh:
        _, cover = read_pla(fh.read())
    return cover


def cmd_verify(args) -> int:
    cfg = load_config(args.config, output_dir=args.out)
    out = cfg.output_dir
    ckpt_path = args.checkpoint or os.path.join(out, "checkpoint.json")
    nl_path = args.netlist or os.path.join(out, "netlist.json")
    pla_dir = args.pla_dir or os.path.join(os.path.dirname(nl_path) or ".", "pla_min")
    net, stats = load_checkpoint(ckpt_path)
    folded = fold_network(net) if any(l.bn is not None for l in net.layers) else net
    nl = load_netlist(nl_path)
    if nl.fingerprint != fingerprint(folded):
        print(f"FAIL: netlist fingerprint {nl.fingerprint} does not match "
              f"checkpoint {fingerprint(folded)} (artifacts from different runs?)",
              file=sys.stderr)
        return 2

    rep = EquivalenceReport()
    jobs = max(1, args.jobs)
    work = [(li, j) for li, layer in enumerate(folded.layers)
            for j in range(layer.out_features)]
    from .truthtable import output_encoding

    def run_one(item):
        li, j = item
        enc = output_encoding(folded, li)
        covers = [_load_neuron_covers(pla_dir, f"L{li}_n{j}_b{b}")
                  for b in range(enc.bits)]
        return check_neuron(folded, li, j, covers, seed=cfg.seed + SEED_VERIFY)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            all_checks = list(pool.map(run_one, work))
    else:
        all_checks = [run_one(item) for item in work]
    for checks in all_checks:
        rep.neuron_checks.extend(checks)

    samples = cfg.verify_samples if args.samples is None else args.samples
    rep.end_to_end = check_end_to_end(folded, nl, samples, seed=cfg.seed + SEED_VERIFY)

    if folded.output_quant is not None:
        train_raw, test_raw = _prepare_raw_splits(cfg)
        use_stats = stats if stats is not None else standardize(train_raw, [])[1]
        std_test = Dataset(use_stats.apply(test_raw.features), test_raw.labels,
                           test_raw.num_classes, list(test_raw.feature_names))
        rep.logic_accuracy = logic_accuracy(nl, std_test, folded.input_quant)
        rep.network_accuracy = evaluate(folded, std_test)

    _emit_equivalence_report(rep, out)
    return 0 if rep.passed else 1


def _emit_equivalence_report(rep: EquivalenceReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "passed": rep.passed,
        "neuron_checks": [dataclasses.asdict(c) for c in rep.neuron_checks],
        "end_to_end": None if rep.end_to_end is None else dataclasses.asdict(rep.end_to_end),
        "logic_accuracy": rep.logic_accuracy,
        "network_accuracy": rep.network_accuracy,
    }
    with open(os.path.join(out_dir, "equivalence_report.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    lines = []
    failed = [c for c in rep.neuron_checks if not c.passed]
    total_minterms = sum(c.minterms_checked for c in rep.neuron_checks)
    lines.append(f"neuron checks: {len(rep.neuron_checks)} tables, "
                 f"{total_minterms} minterms, {len(failed)} failing")
    for c in failed[:8]:
        lines.append(f"  FAIL L{c.layer}_n{c.neuron}_b{c.bit}: {c.mismatches} mismatches, "
                     f"witness {c.witness}")
    if rep.end_to_end is not None:
        e = rep.end_to_end
        status = "PASS" if e.passed else f"FAIL ({len(e.mismatches)} mismatches)"
        lines.append(f"end-to-end: {e.samples} samples -> {status}")
        for w in e.warnings:
            lines.append(f"  warning: {w}")
        for mm in e.mismatches[:4]:
            lines.append(f"  mismatch {mm}")
    if rep.logic_accuracy is not None:
        match = "==" if rep.logic_accuracy == rep.network_accuracy else "!="
        lines.append(f"logic accuracy {rep.logic_accuracy:.6f} {match} "
                     f"network accuracy {rep.network_accuracy:.6f}")
    lines.append("RESULT: " + ("PASS" if rep.passed else "FAIL"))
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "equivalence_report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")


def cmd_minimize_pla(args) -> int:
    with open(args.input) as fh:
        width, cover = read_pla(fh.read())
    if width > 20:
        print(f"refusing to minimize {width}-input PLA (limit 20)", file=sys.stderr)
        return 2
    from .twolevel import cover_function
    on = sorted(cover_function(cover))
    onset = minterm_cover(width, on)
    offset = minterm_cover(width, complement_minterms(width, on))
    minimized = espresso_minimize(onset, offset)
    text = write_cover_pla(minimized)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    print(f"{len(cover.cubes)} cubes -> {len(minimized.cubes)} cubes", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    nl = load_netlist(args.netlist)
    out = args.out or (os.path.dirname(args.netlist) or ".")
    os.makedirs(out, exist_ok=True)
    _emit_cost_report(report(nl), out)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nn2lut",
                                     description="compile quantized MLPs to LUT logic")
    parser.add_argument("--version", action="version", version=f"nn2lut {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train + prune, write checkpoint")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None, help="override config output_dir")
    p_train.add_argument("--seed", type=int, default=None, help="override config seed")
    p_train.add_argument("--label-column", default=None)
    p_train.set_defaults(func=cmd_train)

    p_comp = sub.add_parser("compile", help="checkpoint -> PLA/netlist/Verilog/report")
    p_comp.add_argument("--config", required=True)
    p_comp.add_argument("--checkpoint", default=None)
    p_comp.add_argument("--out", default=None)
    p_comp.add_argument("--lut-size", type=int, default=None, metavar="K")
    p_comp.add_argument("--pipeline", action=argparse.BooleanOptionalAction, default=None)
    p_comp.add_argument("--jobs", type=int, default=1)
    p_comp.set_defaults(func=cmd_compile)

    p_ver = sub.add_parser("verify", help="prove checkpoint == netlist; exit 0 on PASS")
    p_ver.add_argument("--config", required=True)
    p_ver.add_argument("--checkpoint", default=None)
    p_ver.add_argument("--netlist", default=None)
    p_ver.add_argument("--pla-dir", default=None)
    p_ver.add_argument("--out", default=None)
    p_ver.add_argument("--samples", type=int, default=None, metavar="N")
    p_ver.add_argument("--jobs", type=int, default=1)
    p_ver.set_defaults(func=cmd_verify)

    p_min = sub.add_parser("minimize-pla", help="minimize a standalone PLA file")
    p_min.add_argument("input")
    p_min.add_argument("output", help="output path, or - for stdout")
    p_min.set_defaults(func=cmd_minimize_pla)

    p_rep = sub.add_parser("report", help="cost table + figure for a netlist")
    p_rep.add_argument("--netlist", required=True)
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
