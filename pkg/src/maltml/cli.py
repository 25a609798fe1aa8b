"""Command line entry point: ``maltml {train,eval,gradcheck,plotdata}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(non-finite values, or a gradient check above tolerance). Log verbosity is
read from ``MALTML_LOG_LEVEL`` (default INFO).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import autodiff as ad
from .experiment import (ALGORITHMS, META_MODES, PRESETS, Checkpoint, ConfigError, TrainConfig,
                         default_variants,
                         emit_plotdata, load_config, run_eval, run_gradcheck, run_training)
from .tasks import ShotConfig

log = logging.getLogger("maltml")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _hidden(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated sizes, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maltml", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train one algorithm")
    train.add_argument("--config", help="flat key = value config file")
    train.add_argument("--preset", choices=sorted(PRESETS), help="outer-step preset (desk=20000, paper=70000)")
    train.add_argument("--algorithm", choices=ALGORITHMS)
    train.add_argument("--seed", type=int)
    train.add_argument("--out", dest="output_dir")
    train.add_argument("--alpha", type=float)
    train.add_argument("--beta", type=float)
    train.add_argument("--gamma", type=float)
    train.add_argument("--eta", type=float)
    train.add_argument("--r", type=int)
    train.add_argument("--m", type=int)
    train.add_argument("--m-fo", dest="m_fo", type=int)
    train.add_argument("--outer-steps", dest="outer_steps", type=int)
    train.add_argument("--family-batch", dest="family_batch", type=int)
    train.add_argument("--L", type=int)
    train.add_argument("--K", type=int)
    train.add_argument("--Q", type=int)
    train.add_argument("--validation-tasks", dest="validation_tasks", type=int)
    train.add_argument("--r-eval", dest="r_eval", type=int)
    train.add_argument("--eval-every", dest="eval_every", type=int)
    train.add_argument("--hidden", type=_hidden)
    train.add_argument("--init")

    ev = sub.add_parser("eval", help="few-task few-shot evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--workers", type=int, default=1)
    ev.add_argument("--L", type=int)
    ev.add_argument("--K", type=int)
    ev.add_argument("--Q", type=int)
    ev.add_argument("--r-eval", dest="r_eval", type=int)
    ev.add_argument("--meta-finetune", choices=META_MODES,
                    help="evaluate a single variant with this meta-finetune mode")

    gc = sub.add_parser("gradcheck", help="finite-difference check of outer gradients")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--hidden", type=_hidden, default=(4, 4))
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--corrupt-for-testing", action="store_true", help=argparse.SUPPRESS)

    pd = sub.add_parser("plotdata", help="combine evaluation reports into one long CSV")
    pd.add_argument("reports", nargs="+", help="eval_<label>.csv episode reports")
    pd.add_argument("--out", required=True)
    return parser


_TRAIN_KEYS = ("algorithm", "seed", "output_dir", "alpha", "beta", "gamma", "eta", "r", "m", "m_fo",
               "outer_steps", "family_batch", "L", "K", "Q", "validation_tasks", "r_eval",
               "eval_every", "hidden", "init")


def _train(args) -> int:
    values = load_config(args.config) if args.config else {}
    if args.preset:
        values["outer_steps"] = PRESETS[args.preset]
    values.update({k: getattr(args, k) for k in _TRAIN_KEYS if getattr(args, k) is not None})
    cfg = TrainConfig.from_dict(values)
    ckpt, curve = run_training(cfg, progress=True)
    print(f"checkpoint: {ckpt}")
    print(f"training curve: {curve}")
    return EXIT_OK


def _eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    base = ckpt.config.shots
    shots = ShotConfig(args.L or base.L, args.K or base.K, args.Q or base.Q, base.validation_tasks)
    variants = None
    if args.meta_finetune:
        alg = ckpt.config.algorithm
        known = {mode: label for label, mode in default_variants(alg)}
        variants = [(known.get(args.meta_finetune, f"{alg}_{args.meta_finetune}"), args.meta_finetune)]
    reports = run_eval(ckpt, args.episodes, shots, args.r_eval, args.seed, args.out,
                       args.workers, variants)
    for rep in reports:
        curve = rep.mean_curve()
        print(f"{rep.algorithm}: before meta-finetune {curve[0]:.4f}, "
              f"step 0 {curve[1]:.4f}, step {rep.r_eval} {curve[-1]:.4f}")
    return EXIT_OK


def _gradcheck(args) -> int:
    results = run_gradcheck(args.seed, args.hidden, args.eps, args.tolerance,
                            corrupt=args.corrupt_for_testing)
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        print(f"{status} {res.name}: max relative error {res.error:.3e} (tolerance {res.tolerance:.0e})")
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERICAL


def _plotdata(args) -> int:
    path = emit_plotdata(args.reports, args.out)
    print(f"plot data: {path}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MALTML_LOG_LEVEL", "INFO").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handler = {"train": _train, "eval": _eval, "gradcheck": _gradcheck, "plotdata": _plotdata}
    try:
        return handler[args.command](args)
    except ConfigError as exc:
        print(f"maltml: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NonFiniteError as exc:
        print(f"maltml: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"maltml: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
