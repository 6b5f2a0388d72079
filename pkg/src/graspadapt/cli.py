"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 integrity error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import datastore, harness, trainer
from .datastore import IntegrityError, LabelAccessError
from .harness import Experiment, HarnessConfig, ValidationError
from .trainer import Regime

_HARNESS_FIELDS = ("n_train_objects", "n_eval_objects", "objects_per_scene",
                   "n_sim_episodes", "n_real_episodes", "eval_episodes",
                   "compare_eval_episodes", "val_fraction", "train_steps",
                   "gan_steps", "object_seed")


def _add_cfg_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with config overrides")
    for name in _HARNESS_FIELDS:
        default = getattr(HarnessConfig, name)
        p.add_argument(f"--{name.replace('_', '-')}", type=type(default),
                       dest=name, default=None)


def _build_cfg(args: argparse.Namespace) -> HarnessConfig:
    values: dict = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        unknown = set(doc) - set(_HARNESS_FIELDS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for name in _HARNESS_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return dataclasses.replace(HarnessConfig(), **values)


def _regime(name: str) -> Regime:
    try:
        return Regime(name)
    except ValueError:
        raise ValidationError(
            f"unknown regime {name!r}; choose from "
            f"{[r.value for r in Regime]}") from None


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="graspadapt")
    parser.add_argument("--workdir", type=Path, required=True)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("gen-objects", "train-gan", "refine"):
        p = sub.add_parser(name)
        _add_cfg_flags(p)
        if name in ("train-gan", "refine"):
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("collect")
    _add_cfg_flags(p)
    p.add_argument("--dataset", required=True,
                   choices=sorted(harness._DATA_SPECS))
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=17)

    p = sub.add_parser("train")
    _add_cfg_flags(p)
    p.add_argument("--regime", required=True)
    p.add_argument("--real-fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval")
    _add_cfg_flags(p)
    p.add_argument("--regime", required=True)
    p.add_argument("--real-fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domain", choices=("sim", "pseudoreal"),
                   default="pseudoreal")
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("compare")
    _add_cfg_flags(p)
    p.add_argument("--regimes", nargs="+", required=True)
    p.add_argument("--fractions", nargs="+", type=float, default=[1.0])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--domain", choices=("sim", "pseudoreal"),
                   default="pseudoreal")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("report")
    p.add_argument("--results", type=Path, required=True,
                   help="CSV written by `compare`")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out", type=Path, default=None)

    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (ValidationError, ValueError, LabelAccessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 3


def _run(args: argparse.Namespace) -> int:
    wd = args.workdir
    if args.command == "report":
        results = harness.results_from_csv(args.results.read_text())
        _emit(harness.report(results, fmt=args.format), args.out)
        return 0

    cfg = _build_cfg(args)
    if args.command == "gen-objects":
        train, ev = harness.ensure_objects(wd, cfg)
        print(f"objects: {len(train)} train, {len(ev)} eval under {wd}/objects")
        return 0
    if args.command == "collect":
        n = args.episodes
        if n is None:
            n = (cfg.n_real_episodes if args.dataset == "pseudoreal"
                 else cfg.n_sim_episodes)
        train, _ = harness.ensure_objects(wd, cfg)
        ds = harness.collect_dataset(wd, args.dataset, n, train,
                                     seed=args.seed, cfg=cfg)
        print(f"{args.dataset}: {ds.n_episodes} episodes, {len(ds)} samples")
        return 0

    exp = Experiment(wd, cfg)
    if args.command == "train-gan":
        gck = exp.generator(args.seed)
        print(f"generator trained: seed {args.seed}, {gck.step} steps, "
              f"collapse_warning={gck.collapse_warning}")
        return 0
    if args.command == "refine":
        ds = exp.refined(args.seed)
        print(f"refined dataset: {ds.n_episodes} episodes at {ds.root}")
        return 0
    if args.command == "train":
        ck = exp.train_cell(_regime(args.regime), args.real_fraction, args.seed)
        print(f"trained {ck.regime} f={args.real_fraction} seed={args.seed}; "
              f"val history {ck.val_history}")
        return 0
    if args.command == "eval":
        res = exp.eval_cell(_regime(args.regime), args.real_fraction, args.seed,
                            domain=args.domain, n_episodes=args.episodes)
        print(json.dumps(res.to_json_obj()))
        return 0
    if args.command == "compare":
        matrix = [(_regime(r), f) for r in args.regimes for f in args.fractions]
        results = harness.run_comparison(matrix, wd, seeds=tuple(args.seeds),
                                         cfg=cfg, domain=args.domain,
                                         n_episodes=args.episodes)
        _emit(harness.results_to_csv(results), args.out)
        if args.out is not None:
            print(harness.report(results), end="")
        return 0
    raise ValidationError(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
