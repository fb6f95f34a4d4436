"""Command-line interface.

Exit codes: 0 success, 1 validation/runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from tanet import tensor as T
from tanet._backend import KERNEL_BACKEND
from tanet.fileio import TsrError, export_pgm, tsr_read
from tanet.losses import LossConfig

GRAD_TOLERANCE = 1e-4


def _add_levels_flags(p):
    p.add_argument("--l1", type=int, default=150,
                   help="threshold levels of the shallow-feature block (default 150)")
    p.add_argument("--l2", type=int, default=200,
                   help="threshold levels of the pyramid block (default 200)")


def _add_loss_flags(p):
    p.add_argument("--lambda", dest="aux_weight", type=float, default=0.5,
                   help="auxiliary loss weight (default 0.5)")
    p.add_argument("--theta", type=float, default=0.65,
                   help="mining probability threshold (default 0.65)")
    p.add_argument("--ohem-min", type=int, default=10000,
                   help="minimum pixels kept by mining (default 10000)")


def _parser():
    parser = argparse.ArgumentParser(
        prog="tanet",
        description="Threshold attention kernels, blocks, toy trainer, and benchmarks",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth-gen", help="generate a synthetic Voronoi dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--size", type=int, default=64, help="image height and width")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--sites", type=int, default=12)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--val-count", type=int, default=50)
    p.set_defaults(func=_cmd_synth_gen)

    p = sub.add_parser("train-toy", help="train the toy net on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--ablate", action="store_true",
                   help="replace the attention blocks with 1x1 convolutions")
    _add_levels_flags(p)
    _add_loss_flags(p)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("oracle-check",
                       help="agreement of the optimized and naive threshold attention")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--cases", type=int, default=200)
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("bench-scaling", help="runtime scaling over pixel counts")
    p.add_argument("--mechanism", choices=("tam", "dense_sa", "both"), default="both")
    p.add_argument("--n", default="1024,2048,4096,8192,16384,32768,65536",
                   help="comma-separated pixel counts (sorted ascending)")
    p.add_argument("--c", type=int, default=64)
    p.add_argument("--l", type=int, default=64,
                   help="threshold levels for the linear mechanism")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.add_argument("--fit", action="store_true", help="print log-log slopes")
    p.set_defaults(func=_cmd_bench_scaling)

    p = sub.add_parser("bench-flops", help="closed-form flop comparison")
    p.add_argument("--c", type=int, default=2048)
    p.add_argument("--n", type=int, default=16384)
    p.add_argument("--l", type=int, default=200)
    p.set_defaults(func=_cmd_bench_flops)

    p = sub.add_parser("bench-backends",
                       help="compare compiled and NumPy kernel backends")
    p.add_argument("--n", default="4096,16384,65536")
    p.add_argument("--c", type=int, default=64)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=_cmd_bench_backends)

    p = sub.add_parser("export-features",
                       help="dump block input/output feature maps as PGM images")
    p.add_argument("--data", help="dataset root (with --id)")
    p.add_argument("--id", type=int, default=0, help="sample id inside --data")
    p.add_argument("--image", help="standalone [3,H,W] TSR image instead of --data")
    p.add_argument("--checkpoint", help="trained net (random-init otherwise)")
    p.add_argument("--classes", type=int, default=4,
                   help="class count for the random-init net")
    p.add_argument("--channel", default="mean",
                   help="channel index to export, or 'mean'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    _add_levels_flags(p)
    p.set_defaults(func=_cmd_export_features)

    return parser


def _cmd_synth_gen(args):
    from tanet.synth import SynthConfig, gen_dataset

    cfg = SynthConfig(
        seed=args.seed, height=args.size, width=args.size, classes=args.classes,
        sites=args.sites, noise_sigma=args.sigma,
        train_count=args.train_count, val_count=args.val_count,
    )
    root = gen_dataset(cfg, args.out)
    total = cfg.train_count + cfg.val_count
    print(f"wrote {total} samples ({cfg.train_count} train / {cfg.val_count} val) "
          f"to {root}")
    return 0


def _loss_config(args):
    return LossConfig(aux_weight=args.aux_weight, theta=args.theta,
                      min_kept=args.ohem_min)


def _cmd_train_toy(args):
    from tanet.blocks import ToyNetConfig
    from tanet.synth import load_manifest
    from tanet.train import TrainConfig, train_toy

    classes = load_manifest(args.data)["config"]["classes"]
    net_cfg = ToyNetConfig.standard(classes, afem_levels=args.l1, tapp_levels=args.l2)
    train_cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, base_lr=args.lr,
        seed=args.seed, loss=_loss_config(args),
    )
    ckpt, history = train_toy(args.data, net_cfg, train_cfg, args.out,
                              ablated=args.ablate)
    last = history[-1]
    best = max(h["val_miou"] for h in history)
    print(f"checkpoint: {ckpt}")
    print(f"final epoch {last['epoch']}: train loss {last['train_loss']:.4f}, "
          f"val mIoU {last['val_miou']:.4f} (best {best:.4f})")
    return 0


def _cmd_eval(args):
    from tanet.train import evaluate_model

    report = evaluate_model(args.checkpoint, args.data, args.split)
    text = json.dumps(report.to_json(), indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _cmd_gradcheck(args):
    from tanet.oracles import standard_grad_checks

    errors = standard_grad_checks(seed=args.seed)
    failed = 0
    for name, err in errors.items():
        ok = err < GRAD_TOLERANCE
        failed += not ok
        print(f"{name}: max relative error {err:.3e} "
              f"[{'pass' if ok else 'FAIL'} @ {GRAD_TOLERANCE:.0e}]")
    return 0 if failed == 0 else 1


def _cmd_oracle_check(args):
    from tanet.oracles import oracle_agreement

    passed, total, worst = oracle_agreement(seed=args.seed, cases=args.cases)
    print(f"oracle agreement: {passed}/{total} cases within 1e-5 "
          f"(worst |diff| {worst:.3e}) [backend: {KERNEL_BACKEND}]")
    return 0 if passed == total else 1


def _grid(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _cmd_bench_scaling(args):
    from tanet.bench import bench_scaling, fit_slope, records_to_csv

    mechanisms = ("tam", "dense_sa") if args.mechanism == "both" else (args.mechanism,)
    records = []
    for mech in mechanisms:
        records.extend(
            bench_scaling(mech, _grid(args.n), c=args.c, levels=args.l,
                          reps=args.reps, seed=args.seed)
        )
    csv = records_to_csv(records)
    if args.out:
        Path(args.out).write_text(csv)
        print(f"wrote {len(records)} records to {args.out}")
    else:
        print(csv, end="")
    if args.fit:
        for mech in mechanisms:
            mine = [r for r in records if r.mechanism == mech]
            print(f"{mech}: log-log slope {fit_slope(mine):.3f}")
    return 0


def _cmd_bench_flops(args):
    from tanet.oracles import sa_flop_report, tam_flop_report

    tam_report = tam_flop_report(args.c, args.n, args.l)
    sa_report = sa_flop_report(args.c, args.n)
    out = {
        "tam": tam_report.to_json(),
        "dense_sa": sa_report.to_json(),
        "ratio": sa_report.total / tam_report.total,
    }
    print(json.dumps(out, indent=2))
    return 0


def _cmd_bench_backends(args):
    from tanet.bench import bench_backends

    _, csv = bench_backends(n_grid=_grid(args.n), c=args.c, reps=args.reps)
    if args.out:
        Path(args.out).write_text(csv)
        print(f"wrote backend comparison to {args.out}")
    else:
        print(csv, end="")
    return 0


def _cmd_export_features(args):
    from tanet.blocks import ToyNet, ToyNetConfig
    from tanet.synth import load_sample
    from tanet.train import load_checkpoint

    if args.image:
        image = tsr_read(args.image)
    elif args.data:
        image, _ = load_sample(args.data, args.id)
    else:
        raise ValueError("export-features needs --image or --data")
    if image.ndim != 3:
        raise ValueError(f"expected a [C,H,W] image, got shape {image.shape}")
    if args.checkpoint:
        net = load_checkpoint(args.checkpoint)
    else:
        cfg = ToyNetConfig.standard(args.classes, afem_levels=args.l1,
                                    tapp_levels=args.l2)
        net = ToyNet(cfg, np.random.default_rng(args.seed)).eval()
    channel = None if args.channel == "mean" else int(args.channel)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with T.no_grad():
        _, _, features = net(T.Tensor(image[None]), return_features=True)
    for name, tensor in features.items():
        export_pgm(tensor.data[0], out_dir / f"{name}.pgm", channel=channel)
    print(f"wrote {len(features)} feature maps to {out_dir}")
    return 0


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        _parser().print_usage(sys.stderr)
        return 2
    try:
        code = args.func(args)
    except (ValueError, TsrError, FileNotFoundError, NotADirectoryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except RuntimeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0 if code is None else int(code)


if __name__ == "__main__":
    sys.exit(main())
