"""Command-line surface.

Subcommands: gen-data, train, predict, explain, metrics, sweep, calculus.
Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .calculus import area, error_curve, filter_function, identity
from .config import default_config, load_config
from .data import gen_synthetic, load_dataset, save_dataset
from .errors import RelvoxError
from .filters import PASS, FilterSpec, apply_filtered_channels, parse_filter
from .kernels import forward
from .lrp import FINAL, SeedSpec, run_lrp
from .metrics import (alpha_sweep, inclusivity_report, write_inclusivity_csv,
                      write_sweep_csv)
from .training import dice, train
from .unet import UNetConfig, build, init_kaiming, load_weights, save_weights
from .volio import export_slice, write_volume


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _shape(text):
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"shape must be C,D,H,W, got '{text}'")
    return parts


def build_parser():
    p = _Parser(prog="relvox", description=__doc__)
    p.add_argument("--version", action="version", version=f"relvox {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic multi-modal dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cases", type=int, default=12)
    g.add_argument("--shape", type=_shape, default=(6, 19, 48, 48))

    t = sub.add_parser("train", help="train a U-Net on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="weights file to write")
    t.add_argument("--log", help="training log CSV")
    t.add_argument("--config", help="run config JSON")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--base-filters", type=int)

    pr = sub.add_parser("predict", help="write predicted masks for a dataset")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--case", help="restrict to one case id")

    e = sub.add_parser("explain", help="run LRP and write relevance volumes and slices")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--case", help="restrict to one case id")
    e.add_argument("--filter", action="append", default=[],
                   help="pass:LO:HI or clamp:HI, optional @layer=<id|final>")
    e.add_argument("--seed-mode", choices=["predicted_positive", "full_output"])
    e.add_argument("--slice", type=int, default=-1,
                   help="depth index for image export (default: middle)")
    e.add_argument("--config", help="run config JSON")

    m = sub.add_parser("metrics", help="inclusivity report for a filter")
    m.add_argument("--model", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True, help="report CSV")
    m.add_argument("--filter", action="append", default=[])
    m.add_argument("--theta-x", type=float)
    m.add_argument("--theta-lrp", type=float)
    m.add_argument("--config", help="run config JSON")

    s = sub.add_parser("sweep", help="alpha-sweep CSV over a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alphas", help="comma-separated upper amplitudes")
    s.add_argument("--family", choices=["pass", "clamp"])
    s.add_argument("--config", help="run config JSON")

    c = sub.add_parser("calculus", help="filter-calculus area/error CSV")
    c.add_argument("--out", required=True)
    c.add_argument("--alphas", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    c.add_argument("--n-points", type=int, default=100000)
    c.add_argument("--grid-n", type=int, default=1001)
    c.add_argument("--true-fn", default="pass:0.1:0.5",
                   help="filter applied to identity as the recovery target")
    return p


def _load_cfg(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    return cfg


def _override(cfg_section, args, pairs):
    for cfg_key, arg_name in pairs:
        val = getattr(args, arg_name, None)
        if val is not None:
            cfg_section[cfg_key] = val


def _select_cases(dataset, case_id):
    if case_id is None:
        return dataset
    chosen = [c for c in dataset if c.case_id == case_id]
    if not chosen:
        raise RelvoxError(f"case '{case_id}' not found in dataset")
    return chosen


def cmd_gen_data(args):
    dataset = gen_synthetic(args.seed, args.cases, args.shape)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} cases to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_cfg(args)
    _override(cfg["train"], args, [("epochs", "epochs"), ("lr", "lr"),
                                   ("momentum", "momentum"), ("seed", "seed")])
    _override(cfg["model"], args, [("depth", "depth"), ("base_filters", "base_filters")])
    dataset = load_dataset(args.data)
    shape = dataset[0].image.shape
    config = UNetConfig(in_channels=shape[0], out_channels=cfg["model"]["out_channels"],
                        depth=cfg["model"]["depth"], base_filters=cfg["model"]["base_filters"],
                        input_shape=shape)
    net = init_kaiming(build(config), cfg["train"]["seed"])
    net, log = train(net, dataset, epochs=cfg["train"]["epochs"], lr=cfg["train"]["lr"],
                     momentum=cfg["train"]["momentum"], seed=cfg["train"]["seed"])
    save_weights(net, args.out)
    if args.log:
        log.to_csv(args.log)
    final = log.records[-1] if log.records else None
    if final is not None:
        print(f"trained {cfg['train']['epochs']} epochs: "
              f"loss {final.loss:.4f}, mean dice {final.mean_dice:.4f}")
    print(f"wrote weights to {args.out}")
    return 0


def cmd_predict(args):
    net = load_weights(args.model)
    dataset = _select_cases(load_dataset(args.data), args.case)
    os.makedirs(args.out, exist_ok=True)
    scores = []
    for case in dataset:
        out, _ = forward(net, case.image)
        mask = (out[0] > 0.5).astype(np.uint8)
        write_volume(mask, os.path.join(args.out, f"{case.case_id}_pred.vol"))
        scores.append(dice(mask, case.mask))
        print(f"{case.case_id}: dice {scores[-1]:.4f}")
    print(f"mean dice {float(np.mean(scores)):.4f}")
    return 0


def _filter_plan(filter_args):
    plan = {}
    for text in filter_args:
        spec, insertion = parse_filter(text)
        if insertion in plan:
            raise UsageError(f"duplicate filter insertion point '{insertion}'")
        plan[insertion] = spec
    return plan


def cmd_explain(args):
    cfg = _load_cfg(args)
    net = load_weights(args.model)
    dataset = _select_cases(load_dataset(args.data), args.case)
    plan = _filter_plan(args.filter or cfg["filters"])
    seed_mode = args.seed_mode or cfg["lrp"]["seed_mode"]
    os.makedirs(args.out, exist_ok=True)
    for case in dataset:
        _, cache = forward(net, case.image)
        rmap = run_lrp(net, cache, seed=SeedSpec(mode=seed_mode), plan=plan,
                       eps_stab=cfg["lrp"]["eps_stab"])
        r0 = rmap.input_relevance
        depth_index = args.slice if args.slice >= 0 else r0.shape[1] // 2
        for c in range(r0.shape[0]):
            stem = os.path.join(args.out, f"{case.case_id}_rel_c{c}")
            write_volume(r0[c], stem + ".vol")
            export_slice(r0[c], depth_index, stem + ".ppm")
            export_slice(r0[c], depth_index, stem + "_overlay.ppm", base=case.image[c])
        if rmap.seed_warning:
            print(f"{case.case_id}: warning: no voxel above the seed threshold, "
                  "relevance map is all zero")
        print(f"{case.case_id}: wrote {r0.shape[0]} relevance channels "
              f"(absorbed events: {rmap.absorbed})")
    return 0


def cmd_metrics(args):
    cfg = _load_cfg(args)
    net = load_weights(args.model)
    dataset = load_dataset(args.data)
    theta_x = args.theta_x if args.theta_x is not None else cfg["metrics"]["theta_x"]
    theta_lrp = args.theta_lrp if args.theta_lrp is not None else cfg["metrics"]["theta_lrp"]
    specs = [parse_filter(t)[0] for t in (args.filter or cfg["filters"])] or [None]
    rows = []
    for case in dataset:
        _, cache = forward(net, case.image)
        r0 = run_lrp(net, cache, seed=SeedSpec(mode=cfg["lrp"]["seed_mode"])).input_relevance
        for spec in specs:
            rows.extend(inclusivity_report(r0, case.image, case.mask, spec,
                                           case_id=case.case_id, theta_x=theta_x,
                                           theta_lrp=theta_lrp))
    write_inclusivity_csv(rows, args.out)
    print(f"wrote {len(rows)} report rows to {args.out}")
    return 0


def cmd_sweep(args):
    cfg = _load_cfg(args)
    net = load_weights(args.model)
    dataset = load_dataset(args.data)
    family = args.family or cfg["metrics"]["family"]
    alphas = ([float(a) for a in args.alphas.split(",")] if args.alphas
              else cfg["metrics"]["alphas"])
    rows = alpha_sweep(net, dataset, family, alphas,
                       seed_spec=SeedSpec(mode=cfg["lrp"]["seed_mode"]),
                       theta_x=cfg["metrics"]["theta_x"],
                       theta_lrp=cfg["metrics"]["theta_lrp"])
    write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return 0


def cmd_calculus(args):
    alphas = [float(a) for a in args.alphas.split(",")]
    true_spec, _ = parse_filter(args.true_fn)
    true_fn = lambda x: true_spec(identity(x))

    def probe(alpha):
        return [(FilterSpec(PASS, 0.0, alpha), true_fn)]

    curve = error_curve(true_fn, probe, alphas, args.grid_n)
    with open(args.out, "w", newline="") as f:
        f.write("alpha,area,error\n")
        for alpha, err in curve:
            a = area([(FilterSpec(PASS, 0.0, alpha), identity),
                      (FilterSpec(PASS, 0.0, alpha), identity)], args.n_points)
            f.write(f"{alpha:g},{a:.9g},{err:.9g}\n")
    print(f"wrote {len(curve)} calculus rows to {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "metrics": cmd_metrics,
    "sweep": cmd_sweep,
    "calculus": cmd_calculus,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (RelvoxError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
