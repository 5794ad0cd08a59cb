"""Command-line front end.  Every subcommand is a thin wrapper over library calls."""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter

from . import goldens
from .errors import GenerationError, ParameterError
from .numtheory import DhParams, RandomSource, is_prime, is_primitive_root
from .roles import EventLog
from .scenarios import PRESETS, load_config, run_scenario, ScenarioConfig
from .simnet import AdversaryKind
from .textbook_rsa import rsa_keygen

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _env_seed() -> int | None:
    raw = os.environ.get("OTFDH_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw, 0)
    except ValueError:
        raise ParameterError(f"OTFDH_SEED must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = _env_seed()
    return 0 if env is None else env


def cmd_run(args, parser) -> int:
    overrides = dict(
        seed=args.seed, dh_bits=args.dh_bits, rsa_bits=args.rsa_bits, packets=args.packets,
        adversary=args.adversary, loss_rate=args.loss_rate, sign_u2hg=args.sign_u2hg,
        preinstall_hg_pub=args.preinstall_hg_pub, trace=args.trace,
    )
    try:
        if args.seed is None:
            overrides["seed"] = _env_seed()
        if args.config:
            cfg = load_config(args.config, scenario=args.scenario, **overrides)
        else:
            cfg = ScenarioConfig.resolve(args.scenario or "honest", **overrides)
    except (ParameterError, OSError) as exc:
        parser.error(str(exc))
    result = run_scenario(cfg)
    s = result.summary
    if args.json:
        print(json.dumps(s, indent=1))
    else:
        print(f"scenario   {cfg.scenario} (seed {cfg.seed}, dh {cfg.dh_bits} bits, rsa {cfg.rsa_bits} bits)")
        print(f"packets    queued {s['packets_queued']}  sent {s['data_sent']}  delivered {s['delivered']}")
        print(f"rejected   {', '.join(f'{k}={v}' for k, v in s['rejections'].items()) or 'none'}")
        print(f"phases     SD {s['sd_phase']}  HG {s['hg_phase']}  reinits {s['reinits']}")
        print(f"verdict    {result.verdict} (expected {result.expected or 'any'})")
        if cfg.trace:
            print(f"trace      {cfg.trace}")
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_keygen(args, parser) -> int:
    try:
        kp = rsa_keygen(args.bits, RandomSource(_seed(args)))
    except ParameterError as exc:
        parser.error(str(exc))
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    ok = kp.self_test(RandomSource(_seed(args)).fork("self-test"))
    print(f"n = {kp.public.n:#x}")
    print(f"e = {kp.public.e:#x}")
    print(f"d = {kp.d:#x}")
    print(f"self-test {'passed' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_params(args, parser) -> int:
    try:
        params = DhParams.generate(args.bits, RandomSource(_seed(args)), prefer_prime_g=not args.any_g)
    except ParameterError as exc:
        parser.error(str(exc))
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    ok = is_prime(params.p) and is_primitive_root(params.g, params.p)
    print(f"g = {params.g:#x}")
    print(f"p = {params.p:#x}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_goldens(args, parser) -> int:
    path = args.path or goldens.default_path()
    if args.write:
        goldens.write_vectors(path)
        print(f"wrote {path}")
        return EXIT_OK
    try:
        bad = goldens.verify_vectors(path)
    except (ParameterError, OSError) as exc:
        parser.error(str(exc))
    if bad:
        for name in bad:
            print(f"MISMATCH {name}")
        return EXIT_FAIL
    print(f"all golden vectors in {path} round-trip")
    return EXIT_OK


def cmd_summary(args, parser) -> int:
    try:
        records = EventLog.read(args.trace)
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(str(exc))
    by_role = Counter((r["role"], r["outcome"]) for r in records)
    for (role, outcome), n in sorted(by_role.items()):
        print(f"{role:5s} {outcome:32s} {n}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otfdh", description="On-the-fly DH protocol simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named scenario")
    run.add_argument("--scenario", choices=sorted(PRESETS))
    run.add_argument("--config", help="key = value scenario file")
    run.add_argument("--seed", type=int)
    run.add_argument("--dh-bits", type=int)
    run.add_argument("--rsa-bits", type=int)
    run.add_argument("--packets", type=int)
    run.add_argument("--adversary", choices=[k.value for k in AdversaryKind])
    run.add_argument("--loss-rate", type=float)
    run.add_argument("--sign-u2hg", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument("--preinstall-hg-pub", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument("--trace", help="write the JSON-lines event log here")
    run.add_argument("--json", action="store_true", help="print the summary as JSON")
    run.set_defaults(func=cmd_run)

    keygen = sub.add_parser("keygen", help="generate a textbook RSA key pair")
    keygen.add_argument("--bits", type=int, default=512)
    keygen.add_argument("--seed", type=int)
    keygen.set_defaults(func=cmd_keygen)

    params = sub.add_parser("params", help="generate DH parameters (g, p)")
    params.add_argument("--bits", type=int, default=256)
    params.add_argument("--seed", type=int)
    params.add_argument("--any-g", action="store_true", help="do not insist that g is prime")
    params.set_defaults(func=cmd_params)

    gold = sub.add_parser("goldens", help="verify (or rewrite) golden wire vectors")
    gold.add_argument("path", nargs="?")
    gold.add_argument("--write", action="store_true")
    gold.set_defaults(func=cmd_goldens)

    summary = sub.add_parser("summary", help="count outcomes in a trace file")
    summary.add_argument("trace")
    summary.set_defaults(func=cmd_summary)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except ParameterError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
