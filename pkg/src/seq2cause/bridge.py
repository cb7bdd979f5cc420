"""Line-delimited JSON bridge for estimators that live in another process.

Requests and responses, one JSON object per line::

    {"op": "next_dist", "prefix": [ids]}   ->  {"probs": [...]}
    {"op": "label_post", "prefix": [ids]}  ->  {"probs": [...]}
    {"op": "info"}                         ->  {"n_events": n, "cls_id": c, "n_labels": J}

Run ``python -m seq2cause.bridge --spec spec.json [--plan plan.json]`` to
serve an SCM oracle, which is handy for testing clients.
"""

from __future__ import annotations

import argparse
import json
import shlex
import subprocess
import sys
from typing import Sequence

import numpy as np

from .density import EventDensityEstimator, LabelPosteriorEstimator


class BridgeError(RuntimeError):
    pass


class _Connection:
    def __init__(self, cmd):
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1)

    def request(self, msg: dict) -> dict:
        if self.proc.poll() is not None:
            raise BridgeError(f"bridge process exited with code {self.proc.returncode}")
        self.proc.stdin.write(json.dumps(msg) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise BridgeError("bridge process closed its output")
        resp = json.loads(line)
        if "error" in resp:
            raise BridgeError(resp["error"])
        return resp

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=10)


class BridgeEstimator(EventDensityEstimator, LabelPosteriorEstimator):
    """Client side: an estimator whose answers come from a subprocess."""

    def __init__(self, cmd, memory: int | None = None):
        self.cmd = cmd
        self._conn = _Connection(cmd)
        info = self._conn.request({"op": "info"})
        self.n_events = int(info["n_events"])
        self.cls_id = int(info["cls_id"])
        self.n_labels = int(info.get("n_labels") or 0)
        self.memory = memory
        self._cache: dict[tuple, np.ndarray] = {}

    def __getstate__(self):
        # worker processes open their own connection on first use
        state = self.__dict__.copy()
        state["_conn"] = None
        state["_cache"] = {}
        return state

    def _query(self, op: str, prefix: Sequence[int]) -> np.ndarray:
        key = (op, tuple(int(t) for t in prefix))
        if key not in self._cache:
            if self._conn is None:
                self._conn = _Connection(self.cmd)
            resp = self._conn.request({"op": op, "prefix": list(key[1])})
            self._cache[key] = np.asarray(resp["probs"], dtype=np.float64)
        return self._cache[key]

    def next_event_dist_batch(self, prefixes):
        prefixes = np.asarray(prefixes, dtype=np.int64)
        return np.stack([self._query("next_dist", row) for row in prefixes])

    def label_posterior(self, prefix):
        return np.clip(self._query("label_post", prefix), self.eps_c, 1 - self.eps_c)

    def close(self):
        if self._conn is not None:
            self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(event_est: EventDensityEstimator, label_est: LabelPosteriorEstimator | None = None,
          stdin=None, stdout=None) -> None:
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req.get("op")
            if op == "info":
                resp = {"n_events": event_est.n_events, "cls_id": event_est.cls_id,
                        "n_labels": getattr(label_est, "n_labels", 0)}
            elif op == "next_dist":
                resp = {"probs": event_est.next_event_dist(req["prefix"]).tolist()}
            elif op == "label_post":
                if label_est is None:
                    raise ValueError("no label estimator configured")
                resp = {"probs": label_est.label_posterior(req["prefix"]).tolist()}
            else:
                raise ValueError(f"unknown op {op!r}")
        except Exception as exc:  # report and keep serving
            resp = {"error": str(exc)}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    from .density import ExactOracle, RolloutLabelPosterior
    from .scmgen import LabelPlan, ScmSpec

    ap = argparse.ArgumentParser(description="serve an SCM oracle over the line-JSON bridge")
    ap.add_argument("--spec", required=True)
    ap.add_argument("--plan")
    ap.add_argument("--horizon", type=int, default=32)
    ap.add_argument("--rollouts", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    oracle = ExactOracle(ScmSpec.load(args.spec))
    label = None
    if args.plan:
        with open(args.plan) as fh:
            plan = LabelPlan.from_dict(json.load(fh))
        label = RolloutLabelPosterior(oracle, plan, args.horizon, args.rollouts, args.seed)
    serve(oracle, label)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
