"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from . import edge, harness
from .config import ExperimentConfig, from_mapping, load_config, to_mapping
from .neural import WeightFormatError, load_weights
from .sim import ConfigError, invariant_sweep


class UsageError(Exception):
    """Bad flag value; reported like an argparse error (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _assignment(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mergerl", description="DQN merge-decision experiments and edge service.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", type=_assignment, default=[],
                       metavar="KEY=VALUE", help="override one config key (repeatable)")

    p = sub.add_parser("train", help="train one agent")
    p.add_argument("--policy", choices=("eps_greedy", "boltzmann"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, help="output directory")
    with_config(p)

    p = sub.add_parser("eval", help="greedy evaluation of saved weights")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--csv", type=Path, help="also write per-step metrics here")
    with_config(p)

    p = sub.add_parser("compare", help="train and evaluate both policies over several seeds")
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int, default=1)
    with_config(p)

    p = sub.add_parser("serve", help="run the decision service")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--bind", default="127.0.0.1:7070", help="HOST:PORT")
    p.add_argument("--seed", type=int, default=0, help="default sampler seed for boltzmann requests")
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--duration", type=float, help="stop after this many seconds")

    p = sub.add_parser("decide", help="send one decision request")
    p.add_argument("--addr", required=True, help="HOST:PORT")
    p.add_argument("--obs", type=_float_list, required=True)
    p.add_argument("--mode", choices=("greedy", "boltzmann"), default="greedy")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--id", type=int, default=1)
    p.add_argument("--timeout", type=float, default=1.0)

    p = sub.add_parser("simcheck", help="simulator invariant and determinism sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rollouts", type=int, default=1000)
    return parser


def resolve_config(args: argparse.Namespace, **flags) -> ExperimentConfig:
    """Config file, then ``--set`` overrides, then dedicated flags; validated."""
    data = to_mapping(load_config(args.config)) if args.config else to_mapping(ExperimentConfig())
    for key, value in args.overrides:
        data[key] = value
    data.update({k: v for k, v in flags.items() if v is not None})
    return from_mapping(data).validate()


def _train(args) -> int:
    cfg = resolve_config(args, policy=args.policy, out_dir=str(args.out) if args.out else None)
    weights, metrics = harness.train_run(cfg, cfg.policy, args.seed)
    print(f"weights: {weights}")
    print(f"metrics: {metrics}")
    return 0


def _eval(args) -> int:
    cfg = resolve_config(args, eval_episodes=args.episodes)
    rows = harness.eval_run(args.weights, cfg.eval_episodes, args.seed, cfg)
    if args.csv:
        harness.write_metrics(args.csv, rows)
    per_episode = harness.episode_rewards(rows)
    for i, r in enumerate(per_episode):
        print(f"episode {i}: reward {r:.3f}")
    if per_episode:
        print(f"mean episode reward: {sum(per_episode) / len(per_episode):.3f}")
    return 0


def _compare(args) -> int:
    if args.seeds is not None and not args.seeds:
        raise ConfigError("seeds: at least one seed is required")
    cfg = resolve_config(args, seeds=args.seeds, out_dir=str(args.out) if args.out else None)
    report = harness.compare_policies(cfg, cfg.seeds, workers=args.workers)
    for s in report.summaries:
        print(f"{s.label:>12}: eval {s.eval_mean:8.3f}  train tail {s.tail_mean:8.3f} +/- {s.tail_std:.3f}"
              f"  ({s.runtime_s:.1f} s)")
    print(f"verdict: {report.verdict}")
    return 0


def _serve(args) -> int:
    weights = load_weights(args.weights)
    server = edge.DecisionServer(args.bind, weights, seed=args.seed,
                                 delay_ms=args.delay_ms, jitter_ms=args.jitter_ms)
    host, port = server.address
    print(f"serving on {host}:{port}", flush=True)
    if args.duration is not None:
        timer = threading.Timer(args.duration, server.shutdown)
        timer.daemon = True
        timer.start()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    print(f"served {server.served} requests ({server.errors} errors)")
    return 0


def _decide(args) -> int:
    req = edge.DecisionRequest(args.id, args.obs, args.mode, args.tau)
    resp, rtt_us = edge.request_decision(args.addr, req, timeout=args.timeout)
    print(f"action {resp.action}")
    print("q " + ",".join(repr(q) for q in resp.q))
    print(f"server {resp.t_us} us, round trip {rtt_us} us")
    return 0


def _simcheck(args) -> int:
    if args.rollouts < 1:
        raise ConfigError("rollouts must be >= 1")
    report = invariant_sweep(args.rollouts, args.seed)
    for line in report.violations[:20]:
        print(line)
    print(f"{report.rollouts} rollouts, {report.ticks} ticks, {len(report.violations)} invariant violations, "
          f"{len(report.nondeterministic)} non-reproducible rollouts")
    return 0 if report.ok else 1


COMMANDS = {
    "train": _train,
    "eval": _eval,
    "compare": _compare,
    "serve": _serve,
    "decide": _decide,
    "simcheck": _simcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mergerl: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ConfigError, WeightFormatError, ValueError) as exc:
        print(f"mergerl: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"mergerl: error: {exc}", file=sys.stderr)
        return 2
    except edge.DecisionError as exc:
        print(f"mergerl: server error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"mergerl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
