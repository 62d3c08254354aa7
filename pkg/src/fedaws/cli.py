"""``fedaws`` command line: run, verify, gen-data, report.

Exit codes: 0 ok, 1 configuration error, 2 data or IO error, 3 numerical
failure during training, 4 a theory check found a violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import theory
from .data import LabeledDataset, SyntheticSpec, dump, gen_synthetic, parse_sparse_dataset, shard_by_label
from .errors import FedAwSError, MarginOutOfTheoryRange, NumericalFailure, ParseError, ZeroNorm
from .federation import Mode, RoundPlan, init_state, run_training
from .losses import DEFAULT_HINGE_MARGIN, DEFAULT_NU
from .metrics import MetricsRecord, read_csv, write_csv

log = logging.getLogger("fedaws")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_THEORY = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for data errors here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    mode: str = "fedaws"
    data: str | None = None
    synthetic: str | None = None
    rounds: int = 200
    seed: int = 0
    lr: float = 0.1
    token_lr: float | None = None
    optimizer: str = "sgd"
    local_steps: int = 1
    spreadout_mult: float = 10.0
    k: int = 10
    nu: float = DEFAULT_NU
    margin: float = DEFAULT_HINGE_MARGIN
    regularizer: str = "top"
    mined_distance: str = "euclidean"
    clients_per_round: int | None = None
    temperature: float = 0.1
    embed_dim: int = 32
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    out_dim: int = 32
    jobs: int = 1
    out: str = "fedaws_out"

    def validate(self) -> RoundPlan:
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of --data or --synthetic")
        if self.rounds < 1:
            raise ConfigError("--rounds must be >= 1")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if min(self.embed_dim, self.out_dim, *self.hidden, 1) < 1:
            raise ConfigError("model widths must be positive")
        if self.synthetic is not None:
            try:
                SyntheticSpec.parse(self.synthetic, self.seed)
            except ValueError as e:
                raise ConfigError(f"bad --synthetic spec: {e}") from e
        try:
            return RoundPlan(
                mode=self.mode,
                lr=self.lr,
                token_lr=self.token_lr,
                optimizer=self.optimizer,
                local_steps=self.local_steps,
                spreadout_mult=self.spreadout_mult,
                k=self.k,
                nu=self.nu,
                margin=self.margin,
                regularizer=self.regularizer,
                mined_distance=self.mined_distance,
                clients_per_round=self.clients_per_round,
                temperature=self.temperature,
                jobs=self.jobs,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e


RUN_KEYS = {f for f in RunConfig.__dataclass_fields__}


def _hidden(text: str) -> list[int]:
    text = text.strip()
    return [int(t) for t in text.split(",")] if text else []


def _add_run_args(p: argparse.ArgumentParser) -> None:
    d = RunConfig()
    p.add_argument("--mode", choices=[m.value for m in Mode], default=d.mode)
    p.add_argument("--data", help="sparse text dataset: 'label idx:val ...' per line")
    p.add_argument("--synthetic", help="synthetic spec, e.g. C=10,d=32,n=50,sigma=0.05")
    p.add_argument("--rounds", type=int, default=d.rounds)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--lr", type=float, default=d.lr, help="client learning rate")
    p.add_argument("--token-lr", dest="token_lr", type=float, help="token table learning rate (default: --lr)")
    p.add_argument("--optimizer", choices=("sgd", "adagrad"), default=d.optimizer)
    p.add_argument("--local-steps", dest="local_steps", type=int, default=d.local_steps)
    p.add_argument("--lambda", dest="spreadout_mult", type=float, default=d.spreadout_mult,
                   help="server spreadout multiplier")
    p.add_argument("--k", type=int, default=d.k, help="neighbors mined per class")
    p.add_argument("--nu", type=float, default=d.nu, help="spreadout margin")
    p.add_argument("--margin", type=float, default=d.margin, help="positive hinge margin")
    p.add_argument("--regularizer", choices=("top", "full"), default=d.regularizer)
    p.add_argument("--mined-distance", dest="mined_distance", choices=("euclidean", "cosine"),
                   default=d.mined_distance)
    p.add_argument("--clients-per-round", dest="clients_per_round", type=int)
    p.add_argument("--temperature", type=float, default=d.temperature, help="softmax oracle temperature")
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=d.embed_dim)
    p.add_argument("--hidden", type=_hidden, default=d.hidden, help="comma separated hidden widths")
    p.add_argument("--out-dim", dest="out_dim", type=int, default=d.out_dim)
    p.add_argument("--jobs", type=int, default=d.jobs, help="client worker threads")
    p.add_argument("--out", default=d.out, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedaws", description="Federated averaging with spreadout: simulation and checks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train and write per-round metrics")
    run.add_argument("--config", help="key=value file; command-line flags win")
    _add_run_args(run)

    ver = sub.add_parser("verify", help="numerically check the theory bounds")
    ver.add_argument("--config", help="key=value file; command-line flags win")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--trials", type=int, help="trials for the lemma2, thm4 and claim5 sweeps")
    ver.add_argument("--nu", type=float, help="fix the margin instead of sampling it in (1, 2)")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset")
    gen.add_argument("--config", help="key=value file; command-line flags win")
    # required, but may come from --config, so checked in cmd_gen_data
    gen.add_argument("--synthetic", help="e.g. C=10,d=32,n=50,sigma=0.05")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", help="output file")

    rep = sub.add_parser("report", help="summarize an existing metrics CSV")
    rep.add_argument("csv")
    rep.add_argument("--json", action="store_true", help="print JSON instead of text")
    return parser


def _config_tokens(path: str, sub: argparse.ArgumentParser) -> list[str]:
    """Turn a key=value file into flag tokens for ``sub``."""
    known = {a.dest: a for a in sub._actions if a.option_strings and a.dest not in ("help", "config")}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    tokens = []
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "spreadout_mult"
        if not sep or key not in known:
            raise ConfigError(f"{path}:{n}: unknown config key {key!r}")
        tokens += [known[key].option_strings[-1], value.strip()]
    return tokens


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        argv = list(argv)
        at = argv.index(args.command) + 1
        # Config values come first so any repeated flag on the command line wins.
        args = parser.parse_args(argv[:at] + _config_tokens(args.config, sub) + argv[at:])
    return args


def load_dataset(cfg: RunConfig) -> LabeledDataset:
    if cfg.synthetic is not None:
        return gen_synthetic(SyntheticSpec.parse(cfg.synthetic, cfg.seed))
    try:
        with open(cfg.data) as f:
            return parse_sparse_dataset(f, seed=cfg.seed)
    except OSError as e:
        raise DataError(f"cannot read {cfg.data}: {e}") from e
    except (ParseError, ValueError) as e:
        raise DataError(f"{cfg.data}: {e}") from e


def check_dataset(data: LabeledDataset) -> None:
    if len(data) == 0:
        raise DataError("dataset is empty")
    for i, x in enumerate(data.instances):
        if not np.any(x.weights):
            raise DataError(f"instance {i} has all-zero feature weights")


def _summary(records: Sequence[MetricsRecord]) -> dict:
    last = records[-1]
    return {
        "rounds": last.round,
        "final": last.as_dict(),
        "best_p1": max(r.p1 for r in records),
        "min_rho": min(r.rho for r in records),
        "prop1_failures": sum(not r.prop1_pass for r in records),
    }


def _summary_text(s: dict) -> str:
    f = s["final"]
    return (
        f"round {s['rounds']}: p@1={f['p1']:.4f} p@3={f['p3']:.4f} p@5={f['p5']:.4f} "
        f"eps={f['epsilon']:.4f} rho={f['rho']:.4f} rpos={f['rpos']:.4g} reg={f['reg']:.4g}\n"
        f"best p@1={s['best_p1']:.4f} min rho={s['min_rho']:.4f} "
        f"rounds failing the error bound={s['prop1_failures']}"
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = RunConfig(**{k: v for k, v in vars(args).items() if k in RUN_KEYS})
    plan = cfg.validate()
    data = load_dataset(cfg)
    check_dataset(data)
    shards = shard_by_label(data)
    state = init_state(cfg.seed, data.vocab_size, data.num_classes, cfg.embed_dim, tuple(cfg.hidden), cfg.out_dim)
    t0 = time.perf_counter()
    try:
        # overflow is reported through NumericalFailure, not warnings
        with np.errstate(over="ignore", invalid="ignore"):
            state, records = run_training(plan, shards, cfg.rounds, state, seed=cfg.seed, eval_data=data)
    except (NumericalFailure, ZeroNorm) as e:
        raise NumericalFailure(str(e)) from e
    elapsed = time.perf_counter() - t0

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as f:
        write_csv(records, f)
    summary = _summary(records)
    summary["seed"] = cfg.seed
    summary["config"] = asdict(cfg)
    summary["seconds"] = round(elapsed, 3)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    arrays = {f"param_{i}": a for i, a in enumerate(state.params.arrays())}
    np.savez(out / "state.npz", W=state.W, round=np.int64(state.round), **arrays)
    print(_summary_text(summary))
    print(f"wrote {out / 'metrics.csv'} ({len(records)} rounds, {elapsed:.1f}s)")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    if args.nu is not None and not 1.0 < args.nu < 2.0:
        raise ConfigError(f"--nu {args.nu} is outside the range (1, 2) the bounds are proven for")
    if args.trials is not None and args.trials < 4:
        raise ConfigError("--trials must be >= 4")
    t0 = time.perf_counter()
    results = theory.run_all(seed=args.seed, trials=args.trials, nu=args.nu)
    for r in results:
        print(r.summary())
    failed = [r.name for r in results if not r.passed]
    print(f"total time {time.perf_counter() - t0:.2f}s")
    if failed:
        print(f"violations in: {', '.join(failed)}", file=sys.stderr)
        return EXIT_THEORY
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    if not args.synthetic or not args.out:
        raise ConfigError("gen-data needs --synthetic and --out")
    try:
        spec = SyntheticSpec.parse(args.synthetic, args.seed)
    except ValueError as e:
        raise ConfigError(f"bad --synthetic spec: {e}") from e
    data = gen_synthetic(spec)
    try:
        with open(args.out, "w") as f:
            dump(data, f)
    except OSError as e:
        raise DataError(f"cannot write {args.out}: {e}") from e
    P = data.prototypes
    sep = 1.0 - P @ P.T
    np.fill_diagonal(sep, np.inf)
    print(
        f"wrote {len(data)} instances, {data.num_classes} classes, dim {data.vocab_size} to {args.out}\n"
        f"prototype separation: min cosine distance {sep.min():.4f}, "
        f"mean {sep[np.isfinite(sep)].mean():.4f}"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        with open(args.csv) as f:
            records = read_csv(f)
    except OSError as e:
        raise DataError(f"cannot read {args.csv}: {e}") from e
    except (ValueError, KeyError) as e:
        raise DataError(f"{args.csv}: not a metrics file ({e})") from e
    if not records:
        raise DataError(f"{args.csv} has no rows")
    s = _summary(records)
    print(json.dumps(s, indent=2, sort_keys=True) if args.json else _summary_text(s))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "gen-data": cmd_gen_data, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except ConfigError as e:
        print(f"fedaws: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MarginOutOfTheoryRange) as e:
        print(f"fedaws: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"fedaws: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FedAwSError) as e:
        print(f"fedaws: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
