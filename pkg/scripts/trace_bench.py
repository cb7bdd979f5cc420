"""Event-to-event benchmark: TRACE vs Granger vs naive baselines over seeds."""

import argparse
import sys

from seq2cause.bench import TraceBench, rows_to_csv, run_trace_bench


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--vocab", type=int, default=100)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--sequences", type=int, default=4)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    bench = TraceBench(vocab_size=args.vocab, n_sequences=args.sequences, seeds=tuple(range(args.runs)))
    sys.stdout.write(rows_to_csv(run_trace_bench(bench, args.workers)))


if __name__ == "__main__":
    main()
