"""Measured CI-test counts of the sparse and full TRACE variants against L."""

import argparse

from seq2cause.density import ExactOracle
from seq2cause.scmgen import generate_scm, sample_sequence
from seq2cause.trace import TraceConfig, enumerate_pairs, pair_count, pair_probabilities


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lengths", type=int, nargs="+", default=[64, 128, 256, 512])
    ap.add_argument("--window", type=int, default=6)
    ap.add_argument("--context", type=int, default=20)
    args = ap.parse_args(argv)
    spec = generate_scm(20, args.window, 0.05, 2.0, seed=0)
    est = ExactOracle(spec)
    print("L,variant,measured,closed_form,buffer_bytes")
    for L in args.lengths:
        seq = sample_sequence(spec, L, 0)
        for variant, m in (("sparse", args.window), ("full", None)):
            cfg = TraceConfig(context=args.context, memory=args.window, variant=variant, n_particles=2)
            pp = pair_probabilities(seq, enumerate_pairs(L, args.context, variant, m), est, cfg)
            print(L, variant, pp.n_tests, pair_count(L, args.context, variant, m), pp.buffer_bytes, sep=",")


if __name__ == "__main__":
    main()
