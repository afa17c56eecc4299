"""Command-line entry point.

Exit codes: 0 accept or success, 1 reject, 2 usage or validation error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction

from .closeness import DEFAULT_CLOSENESS_ALPHA, ClosenessParams, test_closeness_l1
from .core import DistributionSequence, NiidError, RngSeed, SampleBatch, ValidationError, l1_distance, learn_average, uniform
from .harness import ExperimentSpec, run_trials
from .identity import build_reduction, test_identity
from .instances import BlockParams, gen_c1_pair, gen_paired_bias, gen_pooled_lb_pair
from .io import read_batch, read_reference, read_sequence, write_sequence
from .pooled import fingerprint, pool_poissonized, test_identity_poissonized
from .uniformity import DEFAULT_ALPHA, UniformityParams, Verdict, test_uniformity

EXIT_ACCEPT, EXIT_REJECT, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("NIID_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"NIID_SEED must be an integer, got {env!r}") from None


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _emit_verdict(v: Verdict, args) -> int:
    if args.json:
        print(_dump(v.to_dict()))
    else:
        flag = " (under-sampled)" if v.under_sampled else ""
        print(f"decision: {v.decision.value}{flag}")
        print(f"statistic: {v.statistic:.10g}  threshold: {v.threshold:.10g}")
        print(f"T={v.T} k={v.k} c={v.c} epsilon={v.epsilon:g}")
        for key in sorted(v.extras):
            print(f"{key}: {v.extras[key]}")
    return EXIT_REJECT if v.rejected else EXIT_ACCEPT


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def cmd_test_uniformity(args) -> int:
    batch = read_batch(args.samples, k=args.k)
    params = UniformityParams(args.k, args.epsilon, args.alpha)
    return _emit_verdict(test_uniformity(batch, params, seed=None), args)


def cmd_test_identity(args) -> int:
    q = read_reference(args.reference, exact=args.exact_rational)
    batch = read_batch(args.samples, k=q.k)
    seed = _seed(args)
    rmap = build_reduction(q, exact=args.exact_rational or None)
    v = test_identity(batch, rmap, args.epsilon, RngSeed(seed), args.alpha, seed=seed)
    return _emit_verdict(v, args)


def cmd_test_identity_poisson(args) -> int:
    seq = read_sequence(args.sequence)
    q = read_reference(args.reference)
    seed = _seed(args)
    root = RngSeed(seed)
    pooled = pool_poissonized(seq, args.c_mean, root.child(0))
    v = test_identity_poissonized(pooled, q, args.epsilon, root.child(1), args.alpha, seed=seed)
    return _emit_verdict(v, args)


def cmd_test_closeness(args) -> int:
    batch_p = read_batch(args.samples_p)
    batch_q = read_batch(args.samples_q)
    k = args.k or max(batch_p.k, batch_q.k)
    batch_p, batch_q = SampleBatch(batch_p.draws, k), SampleBatch(batch_q.draws, k)
    seed = _seed(args)
    params = ClosenessParams(k, args.epsilon, args.alpha)
    return _emit_verdict(test_closeness_l1(batch_p, batch_q, params, RngSeed(seed), seed=seed), args)


def cmd_learn(args) -> int:
    batch = read_batch(args.samples, k=args.k)
    first = SampleBatch(batch.draws[:, :1], batch.k)
    p_hat = learn_average(first)
    if args.json:
        print(_dump({"k": p_hat.k, "T": first.T, "estimate": [str(v) for v in p_hat.exact]}))
    else:
        u = uniform(p_hat.k)
        l1 = l1_distance(p_hat, u)
        print(f"T={first.T} k={p_hat.k}")
        print("estimate: " + " ".join(str(v) for v in p_hat.exact))
        print(f"distance to uniform: l1={l1:.6g} tv={l1 / 2:.6g}")
    if args.out:
        write_sequence(_single(p_hat), args.out)
    return EXIT_ACCEPT


def _single(p):
    return DistributionSequence([p])


def cmd_fingerprint(args) -> int:
    batch = read_batch(args.samples)
    fp = fingerprint(batch.pooled())
    print(fp.to_json())
    return EXIT_ACCEPT


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_json(args.spec)
    report = run_trials(spec, workers=args.workers, timing=not args.no_timing)
    text = report.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_ACCEPT


def cmd_gen_instance(args) -> int:
    seed = _seed(args)
    if args.kind == "paired-bias":
        if args.k is None or args.epsilon is None:
            raise ValidationError("paired-bias needs --k and --epsilon")
        eps = Fraction(str(args.epsilon)) if args.exact_rational else args.epsilon
        seq = _single(gen_paired_bias(args.k, eps))
    elif args.kind == "pooled-lb":
        params = BlockParams(args.m or 64, args.n_blocks or 64)
        a, b = gen_pooled_lb_pair(params)
        seq = a if args.member == "a" else b
    else:
        if args.k is None or args.T is None:
            raise ValidationError("c1-pair needs --k and --T")
        d1, d2 = gen_c1_pair(args.k, args.T)
        inst = d1 if args.member == "a" else d2
        seq = inst.draw_sequence(RngSeed(seed))
    write_sequence(seq, args.out)
    if args.json:
        print(_dump({"out": args.out, "k": seq.k, "T": seq.T, "kind": args.kind, "member": args.member}))
    return EXIT_ACCEPT


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="niid", description="Property testing of the average of non-identical distributions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("--seed", type=int, default=None, help="random seed (default: $NIID_SEED or 0)")
        return p

    p = add("test-uniformity", cmd_test_uniformity, "uniformity test from a c=2 batch")
    p.add_argument("--samples", required=True)
    p.add_argument("--k", type=_positive(int), required=True)
    p.add_argument("--epsilon", type=_positive(float), required=True)
    p.add_argument("--alpha", type=_positive(float), default=DEFAULT_ALPHA)

    p = add("test-identity", cmd_test_identity, "identity test against a reference distribution")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--epsilon", type=_positive(float), required=True)
    p.add_argument("--alpha", type=_positive(float), default=DEFAULT_ALPHA)
    p.add_argument("--exact-rational", action="store_true", help="parse the reference as exact decimals")

    p = add("test-identity-poisson", cmd_test_identity_poisson, "Poissonized pooled identity test")
    p.add_argument("--sequence", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--c-mean", type=_positive(float), required=True)
    p.add_argument("--epsilon", type=_positive(float), required=True)
    p.add_argument("--alpha", type=_positive(float), default=DEFAULT_ALPHA)

    p = add("test-closeness", cmd_test_closeness, "closeness test from two c=3 batches")
    p.add_argument("--samples-p", required=True)
    p.add_argument("--samples-q", required=True)
    p.add_argument("--epsilon", type=_positive(float), required=True)
    p.add_argument("--k", type=_positive(int), default=None, help="support size (default: largest value seen)")
    p.add_argument("--alpha", type=_positive(float), default=DEFAULT_CLOSENESS_ALPHA)

    p = add("learn", cmd_learn, "empirical estimate of the average from first draws")
    p.add_argument("--samples", required=True)
    p.add_argument("--k", type=_positive(int), default=None)
    p.add_argument("--out", default=None, help="also write the estimate as a one-row sequence file")

    p = add("fingerprint", cmd_fingerprint, "fingerprint of the pooled samples")
    p.add_argument("--samples", required=True)

    p = add("experiment", cmd_experiment, "Monte Carlo error rates from an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=_positive(int), default=1)
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")

    p = add("gen-instance", cmd_gen_instance, "write a generated instance as a sequence file")
    p.add_argument("--kind", choices=["c1-pair", "pooled-lb", "paired-bias"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--member", choices=["a", "b"], default="a",
                   help="which member of a pair to write (c1-pair: a=D1, b=D2)")
    p.add_argument("--m", type=_positive(int), default=None)
    p.add_argument("--n-blocks", type=_positive(int), default=None)
    p.add_argument("--k", type=_positive(int), default=None)
    p.add_argument("--T", type=_positive(int), default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--exact-rational", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"niid: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NiidError, ValueError) as exc:
        print(f"niid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
