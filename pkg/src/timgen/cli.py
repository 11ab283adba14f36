"""Command-line entry point: ``timgen {gen-data,train,eval,gradcheck,generate}``.

Exit codes: 0 ok, 1 check failure, 2 validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, format_config, load_config
from .dataio import DatasetError, read_dataset, read_interactions, read_truth
from .encoding import Interaction
from .model import CandidateItem, TIMGen
from .numerics import NumericalError, Rng, derive_seed
from .providers import MODALITIES, EmbeddingParseError, file_provider
from .synthetic import ScenarioError, ScenarioSpec, generate_dataset
from .training import (
    evaluate,
    featurize_users,
    fit,
    generate_for_history,
    split_users,
)

EXIT_OK, EXIT_CHECK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("timgen")


class UsageError(Exception):
    """Invalid input detected by a command; maps to exit code 2."""


VALIDATION_ERRORS = (UsageError, ConfigError, DatasetError, ScenarioError, CheckpointError,
                     EmbeddingParseError, ValueError, OSError)


def _seed(flag: Optional[int]) -> Optional[int]:
    if flag is not None:
        return flag
    env = os.environ.get("TIMGEN_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"TIMGEN_SEED must be an integer, got {env!r}") from None


def _print_defaults(cls) -> None:
    print(f"# {cls.__name__} defaults", file=sys.stderr)
    sys.stderr.write(format_config(cls()))


def _train_config(args) -> TrainConfig:
    _print_defaults(TrainConfig)
    cfg = load_config(args.config, TrainConfig) if args.config else TrainConfig()
    changes = {}
    seed = _seed(args.seed)
    if seed is not None:
        changes["seed"] = seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "baseline", None) == "static":
        changes["variant"] = "static"
    return cfg.replace(**changes) if changes else cfg


def _select_users(users, cfg: TrainConfig, split: str) -> list[str]:
    if split == "all":
        return list(users)
    train, val, test = split_users(list(users), cfg)
    chosen = {"train": train, "val": val, "test": test}[split]
    if not chosen:
        raise UsageError(f"the {split} split is empty for {len(users)} users")
    return chosen


def cmd_gen_data(args) -> int:
    _print_defaults(ScenarioSpec)
    spec = load_config(args.spec, ScenarioSpec) if args.spec else ScenarioSpec()
    seed = _seed(args.seed)
    if seed is not None:
        spec = ScenarioSpec(**{**spec.__dict__, "seed": seed})
    data = generate_dataset(spec, args.out)
    s = data.summary()
    print(f"users\t{s['users']}")
    print(f"interactions\t{s['interactions']}")
    print(f"items\t{s['items']}")
    print(f"changepoints\t{s['changepoints']}")
    if s["changepoint_welch_t"] is not None:
        print(f"changepoint_welch_t\t{s['changepoint_welch_t']!r}")
    for c, n in s["class_histogram"].items():
        print(f"class\t{c}\t{n}")
    return EXIT_OK


def _static_self_test(model: TIMGen, features) -> bool:
    """Permuting a history must leave the static interest state unchanged bit for bit."""
    f = features[0]
    batch = model.collate([f])
    x = model.encoder(batch)[:, :len(f)]
    perm = torch.from_numpy(Rng(derive_seed(model.cfg.seed, "self-test")).permutation(len(f)))
    with torch.no_grad():
        a = model.interest(x)[:, -1]
        b = model.interest(x[:, perm])[:, -1]
    return torch.equal(a, b)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    users = read_dataset(args.data)
    ids = _select_users(users, cfg, args.split)
    features = featurize_users(users, cfg, ids)
    model = TIMGen(cfg)
    if cfg.variant == "static":
        ok = _static_self_test(model, features)
        print(f"self_test\tstatic_order_invariance\t{'pass' if ok else 'fail'}")
        if not ok:
            return EXIT_CHECK
    start = time.perf_counter()
    history = fit(model, features, on_epoch=lambda e: print(e.line(), flush=True))
    log.info("trained %d epochs on %d users in %.1fs", cfg.epochs, len(ids), time.perf_counter() - start)
    save_checkpoint(model, args.out)
    if args.report:
        from .plotting import plot_loss_curves

        out = Path(args.report)
        out.mkdir(parents=True, exist_ok=True)
        (out / "loss.tsv").write_text("".join(e.line() + "\n" for e in history), encoding="utf-8")
        plot_loss_curves(history, out / "loss.png")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, cfg = load_checkpoint(args.ckpt)
    except (OSError, CheckpointError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from None
    users = read_dataset(args.data)
    ids = _select_users(users, cfg, args.split)
    truth = read_truth(args.truth) if args.truth else None
    report = evaluate(model, featurize_users(users, cfg, ids), truth)
    text = report.format()
    sys.stdout.write(text)
    if args.report:
        from .plotting import plot_alpha

        out = Path(args.report)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.tsv").write_text(text, encoding="utf-8")
        with (out / "steps.tsv").open("w", encoding="utf-8") as fh:
            fh.write("user\tcutoff\ttarget\tpredicted_class\tlabel\tpredicted_score\tscore\t"
                     + "\t".join(f"alpha_{m}" for m in MODALITIES) + "\n")
            for r in report.records:
                fh.write(f"{r.user_id}\t{r.cutoff}\t{r.target}\t{r.predicted_class}\t{r.label}\t"
                         f"{r.predicted_score!r}\t{r.score!r}\t" + "\t".join(repr(a) for a in r.alpha) + "\n")
        plot_alpha(report.metrics, out / "alpha.png")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    seed = _seed(args.seed)
    result = run_gradcheck(seed=0 if seed is None else seed, tolerance=args.tolerance, h=args.h)
    for group, err in result.per_group.items():
        print(f"{group}\t{err!r}")
    print(f"max\t{result.max_error!r}")
    if not result.passed:
        print(f"gradcheck failed: max relative error {result.max_error:.3e} >= {args.tolerance:g}", file=sys.stderr)
        for name, err in result.worst():
            print(f"  {name}\t{err:.3e}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _candidate_table(args, history: Sequence[Interaction], dims) -> dict[str, np.ndarray]:
    """item id -> zero-filled concatenated modality block."""
    vectors: dict[str, dict[str, np.ndarray]] = {}
    if args.items:
        provider = file_provider(args.items, dims)
        for item in provider.items():
            vectors[item] = {m: provider.get(item, m) for m in MODALITIES}
    else:
        pool = list(history) + (read_interactions(args.data) if args.data else [])
        for x in pool:
            vectors.setdefault(x.item_id, {m: (None if v is None else np.asarray(v, dtype=np.float64))
                                           for m, v in x.modalities.items()})
    table = {}
    for item, emb in vectors.items():
        parts = []
        for m in MODALITIES:
            v = emb.get(m)
            if v is not None and v.size != dims[m]:
                raise UsageError(f"item {item}: {m} has dimension {v.size}, checkpoint expects {dims[m]}")
            parts.append(np.zeros(dims[m]) if v is None else v)
        table[item] = np.concatenate(parts)
    return table


def cmd_generate(args) -> int:
    try:
        model, cfg = load_checkpoint(args.ckpt)
    except (OSError, CheckpointError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from None
    history = read_interactions(args.history)
    if not history:
        raise UsageError("history file is empty")
    if len({x.user_id for x in history}) != 1:
        raise UsageError("history must contain exactly one user")
    history.sort(key=lambda x: x.timestamp)
    dims = cfg.encoder_config().modality_dims
    table = _candidate_table(args, history, dims)
    if args.candidate not in table:
        raise UsageError(f"unknown candidate item {args.candidate!r}")
    rng = None
    if args.sample:
        seed = _seed(args.seed)
        rng = Rng(derive_seed(cfg.seed if seed is None else seed, "generate"))
    out, alpha, _ = generate_for_history(model, history, CandidateItem(args.candidate, table[args.candidate]), rng)
    content = out.content.numpy()
    ids = sorted(table)
    dist = [float(np.sum((table[i] - content) ** 2)) for i in ids]
    nearest = ids[int(np.argmin(dist))]
    print(f"score\t{float(out.score)!r}")
    for c, p in enumerate(out.class_probs.tolist()):
        print(f"class_prob\t{c}\t{p!r}")
    print(f"predicted_class\t{int(out.class_probs.argmax())}")
    print(f"nearest_item\t{nearest}\t{min(dist)!r}")
    for m, a in zip(MODALITIES, alpha.tolist()):
        print(f"alpha\t{m}\t{a!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timgen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic drift dataset")
    p.add_argument("--spec", help="scenario file (key = value)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--baseline", choices=["static"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--split", choices=["train", "all"], default="train")
    p.add_argument("--report", help="directory for loss.tsv and loss.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--truth")
    p.add_argument("--split", choices=["test", "val", "train", "all"], default="test")
    p.add_argument("--report", help="directory for metrics.tsv, steps.tsv and alpha.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare autograd against finite differences")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("generate", help="decode one history against a candidate item")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--items", help="embedding table with candidate items")
    p.add_argument("--data", help="dataset whose items serve as candidates")
    p.add_argument("--sample", action="store_true", help="draw eps instead of using eps = 0")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
