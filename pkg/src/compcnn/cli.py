"""Command line: synth, train, eval, predict, gradcheck."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .comparators import ComparatorBank, train_comparator_bank
from .config import DECODERS, ConfigError, RunConfig, load_config, parse_config
from .data import ManifestError, load_manifest, read_pgm, synth_from_config, write_dataset
from .gradcheck import gradient_suite
from .metrics import make_report


class GradCheckFailed(RuntimeError):
    pass


def _base_config(args, stored=None):
    """Config file if given, else the text stored in a checkpoint, else defaults."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif stored:
        cfg = parse_config(stored)
    else:
        cfg = RunConfig()
    return cfg.with_overrides(seed=getattr(args, "seed", None),
                              multitask=True if getattr(args, "multitask", False) else None)


def cmd_synth(args):
    cfg = _base_config(args)
    ds = synth_from_config(cfg)
    manifest = write_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {manifest}")


def cmd_train(args):
    cfg = _base_config(args)
    ds = load_manifest(args.dataset, cfg)
    tr = ds.subset("train")
    bank = ComparatorBank.build(cfg, input_shape=tr.inputs.shape[1:])
    history = train_comparator_bank(bank, tr.inputs, tr.age_class, cfg,
                                    gender=tr.gender if cfg.multitask else None)
    checkpoint_save(bank, args.checkpoint)
    hist_path = Path(args.history or f"{args.checkpoint}.history.csv")
    with open(hist_path, "w") as fh:
        fh.write("epoch," + ",".join(f"group{g}" for g in range(len(history))) + "\n")
        for e in range(history.shape[1]):
            fh.write(f"{e + 1}," + ",".join(repr(float(v)) for v in history[:, e]) + "\n")
    print(f"trained {bank.K} comparators on {len(tr)} samples; final mean loss "
          f"{history[:, -1].mean():.4f}; checkpoint {args.checkpoint}")


def _load_bank(args):
    bank = checkpoint_load(args.checkpoint)
    if not isinstance(bank, ComparatorBank):
        raise CheckpointError(f"{args.checkpoint} holds a bare backbone, not a comparator bank")
    cfg = _base_config(args, bank.run_config)
    if cfg.K != bank.K:
        raise CheckpointError(f"checkpoint holds K={bank.K} comparators but the config says K={cfg.K}")
    return bank, cfg


def cmd_eval(args):
    bank, cfg = _load_bank(args)
    ds = load_manifest(args.dataset, cfg).subset(args.split)
    if len(ds) == 0:
        raise ValueError(f"split {args.split!r} of {args.dataset} is empty")
    decoder = args.decoder or cfg.decoder
    t = cfg.tolerance if args.tolerance is None else args.tolerance
    est = bank.predict(ds.inputs, decoder)
    g_est = bank.predict_gender(ds.inputs) if bank.multitask else None
    report = make_report(est, ds.ages, g_est, ds.gender if bank.multitask else None, t,
                         dataset=Path(args.dataset).parent.name or "dataset")
    if args.report:
        Path(args.report).write_text(report.to_csv())
        print(report.to_text(), end="")
    else:
        print(report.to_csv(), end="")


def cmd_predict(args):
    bank, cfg = _load_bank(args)
    if args.dataset:
        ds = load_manifest(args.dataset, cfg)
        names, inputs = ds.ids, ds.inputs
    elif args.inputs:
        names = args.inputs
        inputs = np.stack([read_pgm(p)[None] for p in args.inputs])
    else:
        raise ValueError("predict needs PGM paths or --dataset")
    est = np.atleast_1d(bank.predict(inputs, args.decoder or cfg.decoder))
    genders = np.atleast_1d(bank.predict_gender(inputs)) if bank.multitask else None
    for i, name in enumerate(names):
        line = f"{name}\t{est[i]:g}"
        if genders is not None:
            line += f"\t{genders[i]}"
        print(line)


def cmd_gradcheck(args):
    failed = 0
    worst = {}
    for seed in range(args.seed, args.seed + args.n_seeds):
        for name, report in gradient_suite(seed, args.step, args.tol):
            worst[name] = max(worst.get(name, 0.0), report.max_rel_error)
            if not report.passed:
                failed += 1
                print(f"seed {seed} {name} FAILED\n{report}", file=sys.stderr)
    for name, err in worst.items():
        print(f"{name:<22} max rel err {err:.3e}  {'ok' if err < args.tol else 'FAIL'}")
    if failed:
        raise GradCheckFailed(f"{failed} gradient checks failed")


def build_parser():
    p = argparse.ArgumentParser(prog="compcnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key=value run configuration file")
        if seed:
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="write a synthetic PGM dataset and manifest")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a comparator bank on the train split")
    common(sp)
    sp.add_argument("--dataset", required=True, help="manifest CSV")
    sp.add_argument("--checkpoint", required=True, help="output checkpoint path")
    sp.add_argument("--history", help="loss history CSV (default: <checkpoint>.history.csv)")
    sp.add_argument("--multitask", action="store_true", help="joint age + gender training")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(sp, seed=False)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--decoder", choices=DECODERS)
    sp.add_argument("--tolerance", type=int)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    sp.add_argument("--report", help="write the CSV report here (prints a table instead)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="print an age (and gender) per input")
    common(sp, seed=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--decoder", choices=DECODERS)
    sp.add_argument("--dataset", help="manifest CSV instead of PGM paths")
    sp.add_argument("inputs", nargs="*", help="PGM images")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-seeds", type=int, default=20)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ConfigError, ManifestError, CheckpointError, GradCheckFailed, ValueError,
            RuntimeError, OSError, FloatingPointError) as exc:
        print(f"compcnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
