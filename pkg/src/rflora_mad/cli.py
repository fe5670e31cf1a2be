"""Command-line entry point: train, eval, sweep, bench, ablate, gen-data."""
import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import harness, synth
from .model import Detector, format_large_scale_report, large_scale_report


def _config(args):
    cfg = config_mod.desk_config() if args.preset == "desk" else config_mod.RunConfig()
    if args.config:
        cfg = config_mod.load(args.config, cfg)
    for item in args.set or ():
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config_mod.set_value(cfg, key, value)
    return cfg.validate()


def _add_common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--preset", choices=("desk", "default"), default="desk",
                   help="base values before --config/--set (default: desk)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def cmd_train(args):
    cfg = _config(args)
    det, rep = harness.train(cfg, out_dir=args.out, log=print)
    c = rep.census
    print(f"trainable {c['trainable']:,} of {c['total']:,} ({100 * c['fraction']:.2f}%), "
          f"{rep.steps} steps in {rep.seconds:.1f}s")
    config_mod.save(os.path.join(args.out, "config.txt"), cfg)
    if not args.no_eval:
        test = harness.load_split(cfg, "test")
        _, summary = harness.evaluate(det, test, cfg.optim.eval_ema, out_dir=args.out)
        print(harness.format_summary(summary))
    return 0


def cmd_eval(args):
    det = harness.load(args.checkpoint)
    cfg = det.cfg
    if args.manifest:
        cfg.data.test_manifest = args.manifest
    test = harness.load_split(cfg, "test")
    _, summary = harness.evaluate(det, test, not args.raw, out_dir=args.out)
    print(harness.format_summary(summary))
    return 0


def cmd_sweep(args):
    det = harness.load(args.checkpoint)
    test = harness.load_split(det.cfg, "test")
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    rows = harness.robustness_sweep(det, test, _floats(args.blur), _floats(args.snr),
                                    tuple(int(q) for q in _floats(args.jpeg)), not args.raw, out_path=args.out)
    for r in rows:
        print(f"{r['condition']:<18} EER {100 * r['eer_mean']:6.2f} [{100 * r['ci_low']:6.2f}, {100 * r['ci_high']:6.2f}]")
    return 0


def cmd_bench(args):
    if args.checkpoint:
        det = harness.load(args.checkpoint)
    else:
        det = Detector(_config(args))
    out = harness.bench_latency(det, args.warmup, args.runs)
    for part in ("residual", "model", "total"):
        print(f"{part:<9} median {out[part]['median_ms']:.3f} ms  mean {out[part]['mean_ms']:.3f} ms")
    print(f"residual share {100 * out['residual_share']:.1f}%")
    if args.census:
        print(format_large_scale_report(large_scale_report()))
    return 0


def cmd_ablate(args):
    cfg = _config(args)
    sets = [tuple(s.split("+")) for s in args.toggles.split(",")]
    seeds = tuple(int(s) for s in args.seeds.split(","))
    train_set = harness.load_split(cfg, "train")
    test_set = harness.load_split(cfg, "test")
    rows = harness.ablate(cfg, sets, seeds, train_set, test_set, log=print)
    if args.out:
        harness.write_rows(args.out, rows)
    return 0


def cmd_gen_data(args):
    cfg = _config(args)
    ds = synth.make_split(cfg.synth, args.split, args.n, args.n)
    path = synth.export(ds, args.out)
    print(f"wrote {len(ds)} images and {path}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="rflora-mad", description="Residual-gated LoRA morphing attack detector")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on synthetic data or a manifest")
    _add_common(p)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--no-eval", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a test set with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--manifest", help="tab-separated manifest to evaluate instead of synthetic data")
    p.add_argument("--raw", action="store_true", help="use raw weights instead of the EMA shadow")
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="robustness sweep over blur, noise and JPEG grids")
    p.add_argument("checkpoint")
    p.add_argument("--blur", default="0,1,2,3")
    p.add_argument("--snr", default="30,20,10,5")
    p.add_argument("--jpeg", default="90,70,50,30")
    p.add_argument("--raw", action="store_true")
    p.add_argument("--out", default="runs/sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="per-image latency split into residual and model time")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--warmup", type=int, default=30)
    p.add_argument("--runs", type=int, default=300)
    p.add_argument("--census", action="store_true", help="also print the ViT-L scale parameter census")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train/evaluate a grid of component toggles")
    _add_common(p)
    p.add_argument("--toggles", default="full,no_residual,q_only,v_only,rca_off",
                   help="comma-separated sets; combine toggles within a set with '+'; "
                        f"choices: {', '.join(harness.ABLATION_TOGGLES)}")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="export a synthetic split as PPM files plus a manifest")
    _add_common(p)
    p.add_argument("--split", default="train", choices=sorted(synth.SPLIT_OFFSETS))
    p.add_argument("--n", type=int, default=100, help="images per class")
    p.add_argument("--out", default="runs/data")
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
