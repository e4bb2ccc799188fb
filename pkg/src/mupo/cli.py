"""Command-line entry point: ``mupo simulate|metrics|partition|advantages|serve-mock``.

Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or configuration.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .config import ConfigError, GroupPartition, MupoConfig, config_from_mapping, load_config_file, validate_config
from .grouping import constrained_kmeans
from .metrics import SampleSet, acc_at_k, example_diversity
from .objective import mupo_advantages
from .rewards import THINK_CLOSE, THINK_OPEN, diversity_rewards, lambda_schedule, total_reward
from .rollouts import (
    ENDPOINT_ENV,
    EmbeddingServiceError,
    RolloutFormatError,
    example_embeddings,
    fill_missing_embeddings,
    ingest_rollouts,
)
from .simulator import batch_embeddings, load_landscape, train

log = logging.getLogger("mupo")

METRIC_COLUMNS = (
    "step", "mean_r_acc", "mean_r_div", "lambda", "objective",
    "validation_diversity", "expected_reward_exact",
)

# flag -> MupoConfig field
CONFIG_FLAGS = {
    "n": "N",
    "k": "K",
    "gmin": "G_min",
    "beta": "beta",
    "lambda_max": "lambda_max",
    "lambda_min": "lambda_min",
    "t_max": "t_max",
    "clip_eps": "clip_eps",
    "std_floor": "std_floor",
    "advantage_scope": "advantage_scope",
    "sample_std": "sample_std",
    "seed": "seed",
}


class UsageError(Exception):
    pass


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if np.isnan(x) else repr(x)
    return str(x)


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _add_config_flags(p):
    p.add_argument("--config", help="flat key: value file with MupoConfig fields")
    p.add_argument("--n", type=int, help="responses per example")
    p.add_argument("--k", type=int, help="number of groups")
    p.add_argument("--gmin", type=int, help="minimum group size")
    p.add_argument("--beta", type=float, help="load-balance exponent")
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--t-max", type=int, help="schedule horizon in steps")
    p.add_argument("--clip-eps", type=float)
    p.add_argument("--std-floor", type=float)
    p.add_argument("--advantage-scope", choices=("group_local", "global"))
    p.add_argument("--sample-std", action="store_true", default=None,
                   help="normalize advantages with the sample (n-1) std")
    p.add_argument("--seed", type=int)


def _add_input_flags(p):
    p.add_argument("--in", dest="input", required=True, help="JSON-lines rollout file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--embed-endpoint", help=f"embedding service URL (fallback: ${ENDPOINT_ENV})")
    p.add_argument("--open-tag", default=THINK_OPEN)
    p.add_argument("--close-tag", default=THINK_CLOSE)


def resolve_config(args) -> MupoConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = MupoConfig()
    if getattr(args, "config", None):
        cfg = config_from_mapping(load_config_file(args.config), cfg)
    flags = {field: getattr(args, flag) for flag, field in CONFIG_FLAGS.items()
             if getattr(args, flag, None) is not None}
    return config_from_mapping(flags, cfg)


def build_parser():
    parser = argparse.ArgumentParser(prog="mupo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="train GRPO or MUPO on a synthetic landscape")
    p.add_argument("--algo", choices=("grpo", "mupo"), required=True)
    p.add_argument("--landscape", required=True,
                   help="easy | collapse-demo | deceptive-modes | path to a JSON landscape")
    p.add_argument("--steps", type=int, help="number of updates (default: landscape's)")
    p.add_argument("--learning-rate", type=float, help="default: landscape's")
    p.add_argument("--no-exact", action="store_true", help="skip the enumeration oracle")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="acc@k and per-example pairwise diversity")
    _add_input_flags(p)
    p.add_argument("--k", default="1,2,4", help="comma-separated k values")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("partition", help="constrained clustering of each example's rollouts")
    _add_input_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("advantages", help="rewards and advantages for recorded rollouts")
    _add_input_flags(p)
    _add_config_flags(p)
    p.add_argument("--t-cur", type=int, default=0, help="training step for the diversity weight")
    p.set_defaults(func=cmd_advantages)

    p = sub.add_parser("serve-mock", help="run the deterministic mock embedding service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--dim", type=int, default=16)
    p.set_defaults(func=cmd_serve_mock)
    return parser


def cmd_simulate(args):
    cfg = resolve_config(args)
    try:
        land = load_landscape(args.landscape)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    # the schedule horizon is the run length, so an explicit t_max doubles as --steps
    t_max = args.t_max
    if t_max is None and args.config:
        t_max = load_config_file(args.config).get("t_max")
    if args.steps is not None and t_max is not None and int(t_max) != args.steps:
        raise UsageError(f"--steps {args.steps} conflicts with t_max {t_max}")
    steps = args.steps if args.steps is not None else int(t_max or land.steps)
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    lr = args.learning_rate if args.learning_rate is not None else land.learning_rate
    cfg = validate_config(dataclasses.replace(cfg, t_max=steps))

    result = train(args.algo, cfg, land, steps=steps, learning_rate=lr, seed=cfg.seed,
                   exact=not args.no_exact)

    out = Path(args.out)
    rows = [[r[c] for c in METRIC_COLUMNS] for r in result.records]
    atomic_write(out / "metrics.csv", _csv_text(METRIC_COLUMNS, rows))
    resolved = {
        "algo": args.algo,
        "steps": steps,
        "learning_rate": lr,
        "config": cfg.to_dict(),
        "landscape": land.to_dict(),
        "lambda_start": lambda_schedule(0, steps, cfg.lambda_max, cfg.lambda_min),
        "lambda_end": lambda_schedule(steps, steps, cfg.lambda_max, cfg.lambda_min),
    }
    atomic_write(out / "run_config.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    E = batch_embeddings(result.final_validation, land)
    header = ["index", "trajectory"] + [f"e{j}" for j in range(E.shape[1])]
    emb_rows = [[i, "-".join(map(str, tr))] + list(E[i])
                for i, tr in enumerate(result.final_validation)]
    atomic_write(out / "embeddings_final.csv", _csv_text(header, emb_rows))
    log.info("wrote %d metric rows to %s", len(rows), out)
    return 0


def _endpoint(args):
    return args.embed_endpoint or os.environ.get(ENDPOINT_ENV)


def _load(args):
    # reasoning falls back to the response text, so any line can be embedded remotely
    examples = ingest_rollouts(args.input, open_tag=args.open_tag, close_tag=args.close_tag)
    endpoint = _endpoint(args)
    if endpoint:
        fill_missing_embeddings(examples, endpoint)
    return examples


def cmd_metrics(args):
    try:
        ks = sorted({int(x) for x in args.k.split(",") if x.strip()})
    except ValueError:
        raise UsageError(f"--k must be a comma-separated list of integers, got {args.k!r}") from None
    if not ks or ks[0] < 1:
        raise UsageError("--k values must be >= 1")
    examples = _load(args)
    samples = SampleSet(
        verdicts={ex.example_id: [r.correct for r in ex.records] for ex in examples},
        embeddings={ex.example_id: E for ex in examples
                    if (E := example_embeddings(ex)) is not None},
    )
    out = Path(args.out)
    atomic_write(out / "acc_at_k.csv",
                 _csv_text(("k", "acc"), [(k, acc_at_k(samples, k)) for k in ks]))
    div = example_diversity(samples)
    rows = [(ex.example_id, len(ex.records), sum(r.correct for r in ex.records),
             div[ex.example_id] if div[ex.example_id] is not None else float("nan"))
            for ex in examples]
    atomic_write(out / "diversity.csv",
                 _csv_text(("example_id", "n_responses", "n_correct", "pairwise_diversity"), rows))
    return 0


def _example_config(cfg, n):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ex_cfg = validate_config(dataclasses.replace(cfg, N=n))
    for w in caught:
        log.warning("%s", w.message)
    return ex_cfg


def _partition_example(ex, cfg):
    n = len(ex.records)
    ex_cfg = _example_config(cfg, n)
    E = example_embeddings(ex)
    if ex_cfg.K == 1:
        return GroupPartition.single(n), E, ex_cfg
    if E is None:
        line = next(ln for r, ln in zip(ex.records, ex.lines) if r.embedding is None)
        raise UsageError(
            f"line {line}: no embedding for example {ex.example_id!r}; "
            f"pass --embed-endpoint or set ${ENDPOINT_ENV}"
        )
    return constrained_kmeans(E, ex_cfg), E, ex_cfg


def cmd_partition(args):
    cfg = validate_config(resolve_config(args))
    examples = _load(args)
    rows = []
    for ex in examples:
        partition, _, _ = _partition_example(ex, cfg)
        for r, line, g in zip(ex.records, ex.lines, partition.labels):
            rows.append((ex.example_id, r.rollout_id, line, g))
    atomic_write(Path(args.out) / "partition.csv",
                 _csv_text(("example_id", "rollout_id", "line", "group"), rows))
    return 0


def cmd_advantages(args):
    cfg = validate_config(resolve_config(args))
    if not 0 <= args.t_cur <= cfg.t_max:
        raise UsageError(f"--t-cur must be in [0, t_max={cfg.t_max}]")
    lam = lambda_schedule(args.t_cur, cfg.t_max, cfg.lambda_max, cfg.lambda_min)
    examples = _load(args)
    rows = []
    ddof = 1 if cfg.sample_std else 0
    for ex in examples:
        if len(ex.records) < 2:
            raise ValueError(f"example {ex.example_id!r}: advantages need at least 2 rollouts")
        partition, E, ex_cfg = _partition_example(ex, cfg)
        r_div = diversity_rewards(partition, E) if E is not None else np.zeros(partition.N)
        rewards = [total_reward(r.correct, r.well_formed, d, lam) for r, d in zip(ex.records, r_div)]
        adv = mupo_advantages([b.total for b in rewards], partition, ex_cfg.advantage_scope,
                              ex_cfg.std_floor, ddof)
        for r, line, g, b, a in zip(ex.records, ex.lines, partition.labels, rewards, adv.values):
            rows.append((ex.example_id, r.rollout_id, line, g, b.r_acc, b.r_fmt, b.r_div,
                         b.total, a))
    header = ("example_id", "rollout_id", "line", "group", "r_acc", "r_fmt", "r_div",
              "reward", "advantage")
    atomic_write(Path(args.out) / "advantages.csv", _csv_text(header, rows))
    return 0


def cmd_serve_mock(args):
    from .mock_service import MockEmbeddingServer
    server = MockEmbeddingServer(args.host, args.port, dim=args.dim)
    print(f"mock embedding service on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mupo {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RolloutFormatError, EmbeddingServiceError, ValueError, OSError) as exc:
        print(f"mupo {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
