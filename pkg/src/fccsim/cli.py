"""Command-line entry point: transform, map, simulate, validate, report.

Exit codes: 0 success, 1 validation failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ddct
from .fcc import FccError, FloatFilterBank, fcc_transform
from .mapper import CONFIGS, LADDER, MappingError, map_layer, placeholder_weights
from .netspec import BUILTIN, NetSpecError, builtin_path, load_netspec
from .oracle import LayerError
from .pipeline import (BufferOverflow, WeightsMissing, load_bank, load_layer_weights, simulate_network,
                       transform_layer, uses_fcc, validate_layer)
from .timing import ConfigMismatch, CycleConstants, network_report, plan_network

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (OSError, ValueError, KeyError, ddct.DdctError, NetSpecError, FccError, LayerError,
                MappingError, ConfigMismatch, BufferOverflow, WeightsMissing)


class InputError(Exception):
    pass


def _netspec(args):
    if getattr(args, "network", None):
        return load_netspec(builtin_path(args.network))
    if not args.netspec:
        raise InputError("need --netspec or --network")
    return load_netspec(args.netspec)


def _config_name(args, net) -> str:
    if args.config:
        return args.config
    if net.config is not None:
        for name, cfg in CONFIGS.items():
            if cfg == net.config:
                return name
        raise InputError(f"netspec config {net.config} is not one of {', '.join(LADDER)}")
    return "full"


def _bits(v: int) -> str:
    return format(int(v) & 0xFF, "08b")


def _trace(res, out, max_positions: int = 16) -> None:
    """Print every stage for the twin-weights of the first pair."""
    q = res.quantized
    lines = [f"layer {q.layer_id}: pair 0, scale {q.scale:g}"]
    if res.float_means is not None:
        lines.append(f"float pair mean        M0 = {float(res.float_means.means[0])!r}")
    lines.append(f"integer pair mean      M = {int(res.int_means.means[0])}")
    m = int(res.int_means.means[0])
    shape = q.weights.shape[1:]
    for flat in range(min(max_positions, int(np.prod(shape)))):
        pos = np.unravel_index(flat, shape)
        i0, i1 = (0,) + pos, (1,) + pos

        def pair(arr, fmt="{:g}"):
            return "(" + ", ".join(fmt.format(v) for v in (arr[i0], arr[i1])) + ")"

        lines.append(f"position {tuple(int(p) for p in pos)}")
        if res.symmetric_float is not None:
            lines.append(f"  source               {pair(res.source.weights)}")
            lines.append(f"  symmetric            {pair(res.symmetric_float.weights)}")
        lines.append(f"  quantized            {pair(q.weights.astype(int), '{:d}')}")
        lines.append(f"  quantized-symmetric  {pair(res.symmetric_int.weights.astype(int), '{:d}')} M={m}")
        lines.append(f"  biased-comp          {pair(res.biased_comp.weights.astype(int), '{:d}')}")
        s = int(res.store.stored[(0,) + pos])
        lines.append(f"  comp                 0x{s & 0xFF:02X} ({_bits(s)}) / implicit "
                     f"0x{~s & 0xFF:02X} ({_bits(~s)})")
    print("\n".join(lines), file=out)


def cmd_transform(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {}
    if args.weights:
        lid = args.layer_id or Path(args.weights).name.split(".")[0]
        bank = load_bank(args.weights, lid, True)
        jobs = [(lid, bank, True)]
    else:
        if not args.weights_dir:
            raise InputError("--netspec needs --weights-dir")
        net = _netspec(args)
        jobs = []
        for spec in net.layers:
            p = Path(args.weights_dir) / f"{spec.layer_id}.ddct"
            if not p.exists():
                raise WeightsMissing(f"{spec.layer_id}: missing {p}")
            bank = load_bank(p, spec.layer_id, uses_fcc(spec))
            if bank.weights.shape != spec.bank_shape:
                raise InputError(f"{spec.layer_id}: weights {bank.weights.shape} != {spec.bank_shape}")
            jobs.append((spec.layer_id, bank, uses_fcc(spec)))
    for lid, bank, fcc in jobs:
        if args.trace and fcc:
            _trace(fcc_transform(bank), sys.stdout)
        report[lid] = transform_layer(lid, bank, fcc, out_dir)
        report[lid]["source_dtype"] = "float32" if isinstance(bank, FloatFilterBank) else "int8"
    (out_dir / "transform_report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    flagged = sum(len(r.get("flagged_pairs", [])) for r in report.values())
    print(f"transformed {len(report)} layer(s) into {out_dir}; {flagged} flagged pair(s)")
    return EXIT_OK


def cmd_map(args) -> int:
    net = _netspec(args)
    specs = [net.layer(args.layer)] if args.layer else net.layers
    cfg = CONFIGS[_config_name(args, net)]
    chunks = []
    for spec in specs:
        w = load_layer_weights(spec, args.weights_dir) if args.weights_dir else placeholder_weights(spec)
        s = map_layer(spec, w, cfg)
        x, y, b = s.parallelism
        chunks.append(f"# {spec.layer_id} {spec.kind} parallelism {x}x{y}x{b}\n{s.to_text()}")
    text = "\n".join(chunks)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _constants(args) -> CycleConstants:
    return CycleConstants(args.cycles_per_plane, args.write_latency, args.overlap)


def cmd_simulate(args) -> int:
    net = _netspec(args)
    name = _config_name(args, net)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights = None
    if not args.cycles_only:
        if not args.weights_dir or not args.input:
            raise InputError("functional simulation needs --weights-dir and --input")
        weights = {s.layer_id: load_layer_weights(s, args.weights_dir) for s in net.layers}
        x = ddct.read(args.input)
        if x.dtype != np.int8:
            raise InputError(f"input must be int8, got {x.dtype}")
        run = simulate_network(net.layers, weights, x, name)
        ddct.write(out_dir / "output.ddct", run.output, np.int8)
    configs = ("baseline", name) if name != "baseline" else ("baseline",)
    rep = network_report(plan_network(net.layers, configs, weights), configs, _constants(args))
    (out_dir / "cycles.csv").write_text(rep.to_csv([name]))
    print(f"{net.name}: config {name}, total {rep.total(name):g} cycles, "
          f"speedup {rep.speedup(name):.3f}x over baseline")
    return EXIT_OK


def cmd_validate(args) -> int:
    net = _netspec(args)
    if not args.weights_dir:
        raise InputError("validate needs --weights-dir")
    if args.trials < 0:
        raise InputError("--trials must be >= 0")
    if args.trials == 0:
        print("warning: trials=0, vacuous pass", file=sys.stderr)
    rng = np.random.default_rng(args.seed)
    name = _config_name(args, net)
    failed = []
    for spec in net.layers:
        chk = validate_layer(spec, args.weights_dir, args.trials, rng, name)
        status = "ok" if chk.passed else "FAIL"
        print(f"{spec.layer_id:24s} {spec.kind:3s} trials={chk.trials} {status}")
        for f in chk.complementarity:
            print(f"  complementarity: pair {f[0]} position {f[1:4]} ({f[4]})")
        if chk.mismatch is not None:
            m = chk.mismatch
            print(f"  trial {m.trial}: output (ch {m.channel}, y {m.y}, x {m.x}) "
                  f"expected {m.expected} got {m.got}")
        if not chk.passed:
            failed.append(chk)
    if failed:
        out_dir = Path(args.out_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        case = [{"layer_id": c.layer_id,
                 "complementarity": [list(f) for f in c.complementarity],
                 "case": c.case} for c in failed]
        (out_dir / "failing_case.json").write_text(json.dumps(case, indent=1) + "\n")
        print(f"{len(failed)} layer(s) failed; minimized case in {out_dir / 'failing_case.json'}")
        return EXIT_FAIL
    print(f"all {len(net.layers)} layer(s) passed")
    return EXIT_OK


def cmd_report(args) -> int:
    net = _netspec(args)
    rep = network_report(plan_network(net.layers), LADDER, _constants(args))
    print(f"{net.name}")
    print(f"{'config':10s} {'cycles':>12s} {'speedup':>8s}")
    for c in LADDER:
        print(f"{c:10s} {rep.total(c):12.0f} {rep.speedup(c):8.3f}")
    print(f"baseline dw share {rep.kind_share('dw'):.3f}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(rep.to_csv(LADDER))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fccsim", description="FCC weight transform and PIM macro simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def net_args(sp, required=True):
        g = sp.add_mutually_exclusive_group(required=required)
        g.add_argument("--netspec", help="network spec JSON")
        g.add_argument("--network", choices=sorted(BUILTIN), help="shipped network spec")

    def cycle_args(sp):
        sp.add_argument("--cycles-per-plane", type=float, default=1.0)
        sp.add_argument("--write-latency", type=float, default=1.0)
        sp.add_argument("--overlap", type=float, default=1.0)

    t = sub.add_parser("transform", help="FCC-transform weights")
    g = t.add_mutually_exclusive_group(required=True)
    g.add_argument("--weights", help="single [N][C][K][K] DDCT weights file")
    g.add_argument("--netspec", help="network spec; weights read as <id>.ddct from --weights-dir")
    g.add_argument("--network", choices=sorted(BUILTIN))
    t.add_argument("--weights-dir")
    t.add_argument("--layer-id")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--trace", action="store_true", help="print every stage of the first pair")
    t.set_defaults(func=cmd_transform)

    m = sub.add_parser("map", help="print schedules")
    net_args(m)
    m.add_argument("--layer")
    m.add_argument("--weights-dir")
    m.add_argument("--config", choices=LADDER)
    m.add_argument("--out")
    m.set_defaults(func=cmd_map)

    s = sub.add_parser("simulate", help="run a network through the macro model")
    net_args(s)
    s.add_argument("--weights-dir")
    s.add_argument("--input")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config", choices=LADDER)
    s.add_argument("--cycles-only", action="store_true")
    cycle_args(s)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="differential check against the reference convolution")
    net_args(v)
    v.add_argument("--weights-dir")
    v.add_argument("--trials", type=int, default=10)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--config", choices=LADDER)
    v.add_argument("--out-dir")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("report", help="speedup ablation ladder")
    net_args(r)
    r.add_argument("--out-dir")
    cycle_args(r)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
