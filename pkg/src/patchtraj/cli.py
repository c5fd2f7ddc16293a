"""Command-line entry point: ``patchtraj {train,eval,predict,gradcheck}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import dump_config, load_config
from .errors import PatchTrajError
from .objectives import CSV_HEADER

log = logging.getLogger("patchtraj")


def cmd_train(args) -> int:
    from .plotting import plot_training_curve
    from .training import train

    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(config))

    def progress(epoch, loss, report):
        log.info("epoch %d loss %.4f minADE %.4f minFDE %.4f", epoch, loss[0], report.min_ade, report.min_fde)

    trainer = train(config, out, resume=args.resume, progress=progress)
    if not args.no_plots:
        plot_training_curve(trainer.history.losses, trainer.history.metrics, out / "training_curve.png")
    print(trainer.history.metrics[-1] if trainer.history.metrics else "")
    return 0


def cmd_eval(args) -> int:
    import torch

    from .training import (dtype_for, evaluate_batch, load_model, load_windows, make_batch, predict_world,
                           read_checkpoint, split_windows)

    model = load_model(args.checkpoint)
    config = model.config
    epoch = int(read_checkpoint(args.checkpoint)["epoch"]) - 1
    if args.data == "synthetic":
        windows = split_windows(config, load_windows(config, ""))[args.split]
        label = args.split
    else:
        windows = load_windows(config, args.data)
        label = Path(args.data).stem
    if not windows:
        raise PatchTrajError(f"no {config.t_obs}+{config.t_pred} frame windows in {args.data}")
    batch = make_batch(windows, dtype_for(config))
    report = evaluate_batch(model, batch, args.k)
    text = f"{CSV_HEADER}\n{report.csv_row(label, epoch)}\n"
    sys.stdout.write(text)
    if args.out:
        from .plotting import plot_forecasts

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(text)
        pred = predict_world(model, batch)[:, :args.k].double().numpy()
        truth = (batch.future + batch.offsets[:, None, :]).double().numpy()
        obs = (batch.features[..., :2] + batch.offsets[:, None, :]).double().numpy()
        plot_forecasts(list(obs), list(pred), out / "forecasts.png", truth=list(truth))
    return 0


def cmd_predict(args) -> int:
    from .training import predict_file

    results = predict_file(args.checkpoint, args.input, args.out)
    if args.plot and results:
        from .plotting import plot_forecasts

        agents = list(results)
        plot_forecasts([results[a][0] for a in agents], [results[a][1] for a in agents], args.plot,
                       titles=[f"agent {a}" for a in agents])
    log.info("wrote forecasts for %d agents to %s", len(results), args.out)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_gradients

    config = load_config(args.config)
    results = check_gradients(config, h=args.step, tol=args.tol, seed=args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.group:16s} n={r.size:5d} |grad|={r.analytic_norm:.3e} rel_err={r.rel_error:.3e}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchtraj", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="trajectory file or directory, or 'synthetic' for the checkpoint's own corpus")
    p.add_argument("--split", choices=("train", "val", "all"), default="all",
                   help="split of the synthetic corpus (only with --data synthetic)")
    p.add_argument("--k", type=int, help="use only the first k hypotheses")
    p.add_argument("--out", help="directory for metrics.csv and forecasts.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="forecast every agent of a trajectory file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="also render the forecasts to this image file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    p.add_argument("--config", required=True)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .training import configure_threads

    try:
        configure_threads()
        return args.func(args)
    except (PatchTrajError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
