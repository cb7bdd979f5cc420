"""Command-line driver: generate, sample, label, discover, fuse, evaluate, bench.

Every command resolves one ``ExperimentConfig`` from an optional TOML file plus
flag overrides, writes ``config-<hash>.json`` into the output directory and
names all other outputs ``<kind>-<hash>.<ext>``. The hash covers the resolved
config, the command and the bytes of every input file, but not the worker
count, so outputs are identical for any ``--workers``.

Exit codes: 0 success, 1 runtime error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import shlex
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .bench import (TRACE_COLUMNS, OscarBench, TraceBench, config_hash, rows_to_csv, run_oscar_bench,
                    run_trace_bench, to_jsonable)
from .core import (EventSequence, MarkovBoundaryGraph, as_sequence, graph_from_dict, project_summary,
                   read_jsonl, serialize_graph, write_jsonl)
from .density import CalibrationError, ExactOracle, RolloutLabelPosterior, perturbed_oracle, train_lagged_softmax
from .evalharness import adjacency_from_edges, mb_metrics, set_prf, shd
from .fusion import FusionConfig, edge_frequency, fuse_stats, fusion_report
from .infokernel import ConfigError
from .oscar import OscarConfig, batch_discover as oscar_batch
from .rng import TaskError, default_workers
from .scmgen import (DegenerateSpecError, LabelPlan, ScmSpec, generate_scm, instance_ground_truth, plant_labels,
                     random_label_plan, sample_dataset)
from .trace import TraceConfig, batch_discover as trace_batch, enumerate_pairs

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
DENSITY_KINDS = ("exact", "perturbed", "learned", "bridge")
BENCH_KINDS = ("trace", "oscar")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ScmSection:
    vocab_size: int = 100
    memory: int = 6
    density: float = 0.004
    weight_scale: float = 2.1
    weight_min: float = 1.8
    decay: float = 1.0
    bias_scale: float = 0.0


@dataclass(frozen=True)
class SampleSection:
    length: int = 64
    count: int = 4

    def __post_init__(self):
        if self.length < 1 or self.count < 0:
            raise ConfigError("need length >= 1 and count >= 0")


@dataclass(frozen=True)
class LabelsSection:
    n_labels: int = 20
    min_vars: int = 1
    max_vars: int = 4
    allow_not: bool = False

    def __post_init__(self):
        if not 1 <= self.min_vars <= self.max_vars:
            raise ConfigError("need 1 <= min_vars <= max_vars")
        if self.n_labels < 0:
            raise ConfigError("n_labels must be nonnegative")


@dataclass(frozen=True)
class DensitySection:
    kind: str = "exact"
    eps: float = 0.0  # perturbed only
    cmd: str = ""  # bridge only
    memory: int | None = None  # learned and bridge; None -> scm.memory
    epochs: int = 200
    lr: float = 0.05
    rollouts: int = 128  # label posterior
    horizon: int | None = None  # None -> longest sequence

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ConfigError(f"density kind must be one of {DENSITY_KINDS}, got {self.kind!r}")
        if self.kind == "bridge" and not self.cmd:
            raise ConfigError("bridge density needs cmd")
        if self.eps < 0:
            raise ConfigError("eps must be nonnegative")


@dataclass(frozen=True)
class EvalSection:
    n_counterfactuals: int = 10
    kl_threshold: float = 0.05
    random_rho: float = 0.01
    frequency_top_k: int = 5


@dataclass(frozen=True)
class BenchSection:
    kind: str = "trace"
    runs: int = 10

    def __post_init__(self):
        if self.kind not in BENCH_KINDS:
            raise ConfigError(f"bench kind must be one of {BENCH_KINDS}, got {self.kind!r}")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")


@dataclass(frozen=True)
class IoSection:
    out_dir: str = "."


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scm: ScmSection = ScmSection()
    sample: SampleSection = SampleSection()
    labels: LabelsSection = LabelsSection()
    density: DensitySection = DensitySection()
    oscar: OscarConfig = OscarConfig()
    fusion: FusionConfig = FusionConfig()
    trace: TraceConfig = TraceConfig()
    eval: EvalSection = EvalSection()
    bench: BenchSection = BenchSection()
    io: IoSection = IoSection()


SECTION_TYPES = {
    "scm": ScmSection, "sample": SampleSection, "labels": LabelsSection, "density": DensitySection,
    "oscar": OscarConfig, "fusion": FusionConfig, "trace": TraceConfig, "eval": EvalSection,
    "bench": BenchSection, "io": IoSection,
}


def _build_section(name: str, values: dict):
    cls = SECTION_TYPES[name]
    known = {f.name for f in fields(cls)} - {"seed"}
    for key in values:
        if key == "seed":
            raise ConfigError(f"[{name}] seed: set seed at the top level")
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a nested dict (TOML layout) into an ``ExperimentConfig``."""
    raw = dict(raw)
    seed = raw.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    parts = {}
    for name, values in raw.items():
        if name not in SECTION_TYPES:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        parts[name] = _build_section(name, values)
    cfg = ExperimentConfig(seed=seed, **parts)
    # one seed drives every stage
    return replace(cfg, oscar=replace(cfg.oscar, seed=seed), trace=replace(cfg.trace, seed=seed))


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def merge(base: dict, overrides: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, val in overrides.items():
        if "." in key:
            sec, name = key.split(".", 1)
            out.setdefault(sec, {})[name] = val
        else:
            out[key] = val
    return out


# flag dest -> dotted config key
FLAG_KEYS = {
    "seed": "seed",
    "vocab": "scm.vocab_size", "memory": "scm.memory", "density": "scm.density",
    "weight_scale": "scm.weight_scale", "weight_min": "scm.weight_min", "decay": "scm.decay",
    "bias_scale": "scm.bias_scale",
    "len": "sample.length", "count": "sample.count",
    "n_labels": "labels.n_labels", "min_vars": "labels.min_vars", "max_vars": "labels.max_vars",
    "estimator": "density.kind", "eps": "density.eps", "bridge_cmd": "density.cmd",
    "rollouts": "density.rollouts", "horizon": "density.horizon", "epochs": "density.epochs",
    "context": "oscar.context", "particles": "oscar.n_particles", "k": "oscar.k",
    "strategy": "fusion.strategy", "fusion_tau": "fusion.tau", "tau_max": "fusion.tau_max",
    "tau_min": "fusion.tau_min", "slope": "fusion.k",
    "tau": "trace.tau", "trace_context": "trace.context", "trace_particles": "trace.n_particles",
    "variant": "trace.variant", "trace_memory": "trace.memory", "score": "trace.score",
    "kind": "bench.kind", "runs": "bench.runs",
    "out": "io.out_dir",
}


def config_from_args(args) -> ExperimentConfig:
    base = load_toml(args.config) if getattr(args, "config", None) else {}
    overrides = {FLAG_KEYS[k]: v for k, v in vars(args).items() if k in FLAG_KEYS and v is not None}
    return build_config(merge(base, overrides))


# ---------------------------------------------------------------------------
# artifacts


def _file_digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read input {path}: {exc}") from exc


class Run:
    """Output naming and the config echo for one command invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig, inputs: dict[str, str | None]):
        self.cfg = cfg
        self.out = Path(cfg.io.out_dir)
        digests = {k: _file_digest(v) for k, v in sorted(inputs.items()) if v}
        conf = to_jsonable(replace(cfg, io=IoSection()))
        self.echo = {"command": command, "config": conf, "inputs": digests}
        self.hash = config_hash(self.echo)

    def path(self, kind: str, ext: str) -> Path:
        return self.out / f"{kind}-{self.hash}.{ext}"

    def write_echo(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.path("config", "json")
        p.write_text(json.dumps(self.echo, sort_keys=True, indent=2) + "\n")
        return p

    def write_text(self, kind: str, ext: str, text: str) -> Path:
        p = self.path(kind, ext)
        p.write_text(text)
        return p


def _lines(graphs) -> str:
    return "".join(serialize_graph(g) + "\n" for g in graphs)


def read_graphs(path) -> list:
    text = Path(path).read_text()
    if str(path).endswith(".jsonl"):
        return [graph_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
    return [graph_from_dict(json.loads(text))]


def read_plan(path) -> LabelPlan:
    with open(path) as fh:
        return LabelPlan.from_dict(json.load(fh))


def _report(paths) -> None:
    for p in paths:
        print(p)


# ---------------------------------------------------------------------------
# estimators


def _events_of(data) -> int:
    if not data:
        raise ValueError("dataset is empty")
    return int(as_sequence(data[0]).tokens[0])  # the start marker id equals |X|


def event_estimator(cfg: ExperimentConfig, spec: ScmSpec | None, data):
    d = cfg.density
    if d.kind == "bridge":
        from .bridge import BridgeEstimator

        return BridgeEstimator(shlex.split(d.cmd), d.memory)
    if d.kind == "learned":
        corpus = [as_sequence(s).tokens for s in data]
        return train_lagged_softmax(corpus, d.memory or cfg.scm.memory, d.epochs, d.lr, cfg.seed,
                                    n_events=_events_of(data))
    if spec is None:
        raise ConfigError(f"density kind {d.kind!r} needs --spec")
    if d.kind == "perturbed" and d.eps > 0:
        return perturbed_oracle(spec, d.eps, seed=cfg.seed)
    return ExactOracle(spec)


def label_estimator(cfg: ExperimentConfig, event_est, plan: LabelPlan | None, data):
    if cfg.density.kind == "bridge":
        return event_est
    if plan is None:
        raise ConfigError("label posteriors need --plan")
    horizon = cfg.density.horizon or max(as_sequence(s).length for s in data)
    return RolloutLabelPosterior(event_est, plan, horizon, cfg.density.rollouts, cfg.seed)


# ---------------------------------------------------------------------------
# commands


def _scm(cfg: ExperimentConfig) -> ScmSpec:
    s = cfg.scm
    return generate_scm(s.vocab_size, s.memory, s.density, s.weight_scale, s.decay, cfg.seed, s.bias_scale,
                        s.weight_min)


def cmd_gen_scm(args, cfg):
    run = Run("gen-scm", cfg, {})
    spec = _scm(cfg)
    _report([run.write_echo(), run.write_text("scm", "json", spec.dumps() + "\n")])


def cmd_sample(args, cfg):
    run = Run("sample", cfg, {"spec": args.spec})
    paths = [run.write_echo()]
    if args.spec:
        spec = ScmSpec.load(args.spec)
    else:
        spec = _scm(cfg)
        paths.append(run.write_text("scm", "json", spec.dumps() + "\n"))
    data = sample_dataset(spec, cfg.sample.length, cfg.sample.count, cfg.seed) if cfg.sample.count else []
    p = run.path("data", "jsonl")
    write_jsonl(p, data)
    _report(paths + [p])


def cmd_plant_labels(args, cfg):
    run = Run("plant-labels", cfg, {"data": args.data, "plan": args.plan})
    data = read_jsonl(args.data)
    if args.plan:
        plan = read_plan(args.plan)
    else:
        n = _events_of(data) if data else cfg.scm.vocab_size
        lab = cfg.labels
        plan = random_label_plan(n, lab.n_labels, lab.min_vars, lab.max_vars, cfg.seed, lab.allow_not)
    if data:
        plan.check(_events_of(data))
    labeled = plant_labels(plan, data)
    paths = [run.write_echo(), run.write_text("plan", "json", json.dumps(plan.to_dict(), sort_keys=True) + "\n")]
    p = run.path("labeled", "jsonl")
    write_jsonl(p, labeled)
    _report(paths + [p])


def cmd_discover_oscar(args, cfg):
    run = Run("discover-oscar", cfg, {"data": args.data, "spec": args.spec, "plan": args.plan})
    data = read_jsonl(args.data)
    spec = ScmSpec.load(args.spec) if args.spec else None
    plan = read_plan(args.plan) if args.plan else None
    est = event_estimator(cfg, spec, data)
    lab = label_estimator(cfg, est, plan, data)
    graphs = oscar_batch(data, est, lab, cfg.oscar, args.workers) if data else []
    _report([run.write_echo(), run.write_text("oscar", "jsonl", _lines(graphs))])


def cmd_fuse(args, cfg):
    run = Run("fuse", cfg, {"graphs": args.graphs})
    graphs = read_graphs(args.graphs)
    if not all(isinstance(g, MarkovBoundaryGraph) for g in graphs):
        raise ConfigError("fuse takes Markov boundary graphs")
    stats = edge_frequency(graphs)
    fused = fuse_stats(stats, cfg.fusion)
    _report([run.write_echo(), run.write_text("fused", "json", serialize_graph(fused) + "\n"),
             run.write_text("fusion", "csv", fusion_report(stats, cfg.fusion))])


def cmd_discover_trace(args, cfg):
    run = Run("discover-trace", cfg, {"data": args.data, "spec": args.spec})
    data = [as_sequence(s) for s in read_jsonl(args.data)]
    spec = ScmSpec.load(args.spec) if args.spec else None
    est = event_estimator(cfg, spec, data)
    results = trace_batch(data, est, cfg.trace, args.workers) if data else []
    inst = [r.graph for r in results]
    summ = [project_summary(r.graph, s) for r, s in zip(results, data)]
    _report([run.write_echo(), run.write_text("trace", "jsonl", _lines(inst)),
             run.write_text("summary", "jsonl", _lines(summ))])


EVAL_COLUMNS = ("index", "kind", "n_truth", "n_pred", "precision", "recall", "f1", "shd")


def _eval_rows(preds, truths, n_events: int | None) -> list[dict]:
    rows = []
    for i, (g, t) in enumerate(zip(preds, truths)):
        if isinstance(g, MarkovBoundaryGraph):
            tb = t.boundaries() if isinstance(t, MarkovBoundaryGraph) else t
            tb = {j: tb.get(j, frozenset()) for j in sorted(set(g.labels()) | set(tb))}
            m = mb_metrics(g, tb).weighted
            rows.append({"index": i, "kind": "mb", "n_truth": sum(len(v) for v in tb.values()),
                         "n_pred": len(g.edges), "precision": m.precision, "recall": m.recall, "f1": m.f1,
                         "shd": ""})
            continue
        pe, te = g.edge_set(), (t.edge_set() if hasattr(t, "edge_set") else frozenset(t))
        m = set_prf(pe, te)
        n = n_events
        if n is None and pe | te:
            n = 1 + max(max(e) for e in pe | te)
        d = shd(adjacency_from_edges(pe, n), adjacency_from_edges(te, n)) if n else 0
        kind = "summary" if not hasattr(g, "tokens") else "instance"
        rows.append({"index": i, "kind": kind, "n_truth": len(te), "n_pred": len(pe), "precision": m.precision,
                     "recall": m.recall, "f1": m.f1, "shd": d})
    return rows


def _eval_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    fmt = lambda v: f"{v:.6g}" if isinstance(v, float) else v  # noqa: E731
    for r in rows:
        w.writerow([fmt(r[c]) for c in EVAL_COLUMNS])
    if rows:
        mean = ["mean", ""] + [fmt(float(np.mean([r[c] for r in rows]))) if all(r[c] != "" for r in rows) else ""
                               for c in EVAL_COLUMNS[2:]]
        w.writerow(mean)
    return buf.getvalue()


def cmd_eval(args, cfg):
    sources = [x for x in (args.truth, args.plan, args.spec) if x]
    if len(sources) != 1:
        raise ConfigError("eval needs exactly one of --truth, --plan, --spec")
    run = Run("eval", cfg, {"pred": args.pred, "truth": args.truth, "plan": args.plan, "spec": args.spec})
    preds = read_graphs(args.pred)
    n_events = None
    if args.truth:
        truths = read_graphs(args.truth)
        if len(truths) == 1 and len(preds) > 1:
            truths = truths * len(preds)
        if len(truths) != len(preds):
            raise ValueError(f"{len(preds)} predicted graphs but {len(truths)} truth graphs")
    elif args.plan:
        bounds = read_plan(args.plan).boundaries()
        truths = [{j: bounds.get(j, frozenset()) for j in g.labels()} for g in preds]
    else:
        spec = ScmSpec.load(args.spec)
        n_events = spec.n_events
        truths = []
        for i, g in enumerate(preds):
            if not hasattr(g, "tokens"):
                raise ConfigError("--spec truth needs instance graphs from discover-trace")
            seq = EventSequence(g.tokens)
            c = cfg.trace.context_for(seq.length)
            pairs = enumerate_pairs(seq.length, c, cfg.trace.variant,
                                    cfg.trace.memory if cfg.trace.variant == "sparse" else None)
            truth = instance_ground_truth(spec, seq, pairs, cfg.eval.n_counterfactuals, cfg.eval.kl_threshold,
                                          seed=(cfg.seed, i))
            truths.append(project_summary(truth).edge_set())
        preds = [project_summary(g) for g in preds]
    text = _eval_csv(_eval_rows(preds, truths, n_events))
    sys.stdout.write(text)
    _report([run.write_echo(), run.write_text("eval", "csv", text)])


OSCAR_COLUMNS = ("config_hash", "seed", "sample_precision", "sample_recall", "sample_f1", "global_precision",
                 "global_recall", "global_f1", "union_precision", "union_f1", "static_precision", "static_f1",
                 "adaptive_precision", "adaptive_recall", "adaptive_f1", "wall_s")


def trace_bench_from(cfg: ExperimentConfig) -> TraceBench:
    if cfg.density.kind not in ("exact", "perturbed"):
        raise ConfigError("the trace bench supports exact and perturbed densities")
    s, e = cfg.scm, cfg.eval
    return TraceBench(s.vocab_size, s.memory, s.density, s.weight_scale, s.weight_min, s.decay, s.bias_scale,
                      cfg.sample.length, cfg.sample.count, tuple(range(cfg.seed, cfg.seed + cfg.bench.runs)),
                      cfg.density.kind, cfg.density.eps, cfg.trace, e.n_counterfactuals, e.kl_threshold,
                      e.random_rho, e.frequency_top_k)


def oscar_bench_from(cfg: ExperimentConfig, seed: int) -> OscarBench:
    if cfg.density.kind != "exact":
        raise ConfigError("the oscar bench supports the exact density only")
    s, lab = cfg.scm, cfg.labels
    return OscarBench(s.vocab_size, s.memory, s.density, s.weight_scale, s.weight_min, s.decay, s.bias_scale,
                      lab.n_labels, lab.min_vars, lab.max_vars, cfg.sample.length, cfg.sample.count,
                      cfg.density.rollouts, seed, cfg.oscar, cfg.fusion)


def oscar_row(bench: OscarBench, workers: int) -> dict:
    res = run_oscar_bench(bench, workers)
    row = {"config_hash": res.config_hash, "seed": bench.seed}
    for pre, d in (("sample", res.sample_observable), ("global", res.sample_global)):
        row.update({f"{pre}_{k}": v for k, v in d.items()})
    for strat, d in res.fused.items():
        row.update({f"{strat}_{k}": v for k, v in d.items()})
    row["wall_s"] = res.wall_s
    return {c: row[c] for c in OSCAR_COLUMNS}


def parse_grid(items) -> list[tuple[str, list]]:
    """``section.field=v1,v2`` strings into (key, values); values parse as TOML scalars."""
    grid = []
    for item in items or ():
        key, sep, vals = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"grid entries look like section.field=v1,v2, got {item!r}")
        parsed = []
        for v in vals.split(","):
            try:
                parsed.append(tomllib.loads(f"x = {v.strip()}")["x"])
            except tomllib.TOMLDecodeError:
                parsed.append(v.strip())
        grid.append((key.strip(), parsed))
    return grid


def grid_configs(args) -> list[ExperimentConfig]:
    base = load_toml(args.config) if args.config else {}
    overrides = {FLAG_KEYS[k]: v for k, v in vars(args).items() if k in FLAG_KEYS and v is not None}
    grid = parse_grid(args.grid)
    keys = [k for k, _ in grid]
    out = []
    for combo in itertools.product(*[v for _, v in grid]) if grid else [()]:
        out.append(build_config(merge(merge(base, overrides), dict(zip(keys, combo)))))
    return out


def cmd_bench(args, cfg):
    configs = grid_configs(args)
    run = Run("bench", cfg, {})
    if len(configs) > 1:
        run.echo["grid"] = [to_jsonable(replace(c, io=IoSection())) for c in configs]
        run.hash = config_hash(run.echo)
    blocks = []
    for c in configs:
        if c.bench.kind == "trace":
            rows = run_trace_bench(trace_bench_from(c), args.workers)
            text = rows_to_csv(rows, TRACE_COLUMNS)
        else:
            rows = [oscar_row(oscar_bench_from(c, s), args.workers) for s in range(c.seed, c.seed + c.bench.runs)]
            text = rows_to_csv(rows, OSCAR_COLUMNS)
        blocks.append(text if not blocks else text.split("\n", 1)[1])
        sys.stdout.write(blocks[-1])
        sys.stdout.flush()
    _report([run.write_echo(), run.write_text("bench", "csv", "".join(blocks))])


# ---------------------------------------------------------------------------
# argument parsing


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _common(p: argparse.ArgumentParser, workers: bool = False) -> None:
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: io.out_dir, else the working directory)")
    if workers:
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes; default SEQ2CAUSE_THREADS or 1. Never changes outputs")


def _scm_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scm")
    g.add_argument("--vocab", type=int, help="number of event types |X|")
    g.add_argument("--memory", type=int, help="Markov order m")
    g.add_argument("--density", type=_float, help="fraction of nonzero weights per lag")
    g.add_argument("--weight-scale", type=_float)
    g.add_argument("--weight-min", type=_float)
    g.add_argument("--decay", type=_float, help="lag decay gamma in (0, 1]")
    g.add_argument("--bias-scale", type=_float)


def _density_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("density")
    g.add_argument("--estimator", choices=DENSITY_KINDS)
    g.add_argument("--eps", type=_float, help="target KL of the perturbed oracle")
    g.add_argument("--bridge-cmd", help="command line of a bridge server")
    g.add_argument("--epochs", type=int, help="training epochs of the learned estimator")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seq2cause", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scm", help="write a random SCM spec")
    _common(p)
    _scm_flags(p)
    p.set_defaults(func=cmd_gen_scm)

    p = sub.add_parser("sample", help="sample sequences from an SCM")
    _common(p)
    _scm_flags(p)
    p.add_argument("--spec", help="SCM JSON; generated from the scm flags when omitted")
    p.add_argument("--len", type=int, help="events per sequence")
    p.add_argument("--count", type=int, help="number of sequences")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("plant-labels", help="attach rule-defined labels to a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--plan", help="label plan JSON; random when omitted")
    p.add_argument("--n-labels", type=int)
    p.add_argument("--min-vars", type=int)
    p.add_argument("--max-vars", type=int)
    p.set_defaults(func=cmd_plant_labels)

    p = sub.add_parser("discover-oscar", help="per-sequence event-to-label Markov boundaries")
    _common(p, workers=True)
    _density_flags(p)
    p.add_argument("--data", required=True, help="labeled JSONL")
    p.add_argument("--spec")
    p.add_argument("--plan")
    p.add_argument("--context", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--k", type=_float, help="dynamic threshold multiplier")
    p.add_argument("--rollouts", type=int)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_discover_oscar)

    p = sub.add_parser("fuse", help="consensus graph from per-sequence boundaries")
    _common(p)
    p.add_argument("--graphs", required=True, help="JSONL of Markov boundary graphs")
    p.add_argument("--strategy", choices=("union", "static", "adaptive"))
    p.add_argument("--tau", dest="fusion_tau", type=_float, help="static threshold")
    p.add_argument("--tau-max", type=_float)
    p.add_argument("--tau-min", type=_float)
    p.add_argument("--slope", type=_float, help="adaptive slope k; default from support quartiles")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("discover-trace", help="instance-time event-to-event graphs")
    _common(p, workers=True)
    _density_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--spec")
    p.add_argument("--tau", type=_float, help="edge threshold; default C/|X|; 'inf' keeps nothing")
    p.add_argument("--context", dest="trace_context", type=int)
    p.add_argument("--particles", dest="trace_particles", type=int)
    p.add_argument("--variant", choices=("full", "sparse"))
    p.add_argument("--window", dest="trace_memory", type=int, help="sparse lag window")
    p.add_argument("--score", choices=("lagged_ig", "granger"))
    p.set_defaults(func=cmd_discover_trace)

    p = sub.add_parser("eval", help="score graphs against ground truth")
    _common(p)
    p.add_argument("--pred", required=True, help="graph JSON or JSONL")
    p.add_argument("--truth", help="graph JSON or JSONL, one per prediction or one for all")
    p.add_argument("--plan", help="label plan: truth is each rule's variables")
    p.add_argument("--spec", help="SCM: truth from interventions on each instance graph's sequence")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="generate, discover and evaluate over seeds and a config grid")
    _common(p, workers=True)
    _scm_flags(p)
    _density_flags(p)
    p.add_argument("--kind", choices=BENCH_KINDS)
    p.add_argument("--runs", type=int, help="seeds seed .. seed+runs-1")
    p.add_argument("--len", type=int)
    p.add_argument("--count", type=int, help="sequences per run")
    p.add_argument("--tau", type=_float)
    p.add_argument("--grid", action="append", metavar="SECTION.FIELD=V1,V2",
                   help="sweep a config field; repeat for a product grid")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = config_from_args(args)
        if getattr(args, "workers", None) is None and hasattr(args, "workers"):
            args.workers = default_workers()
        if hasattr(args, "workers") and args.workers < 1:
            raise ConfigError("--workers must be at least 1")
    except (ConfigError, DegenerateSpecError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    config_errors = (ConfigError, DegenerateSpecError, CalibrationError)
    try:
        args.func(args, cfg)
    except config_errors as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TaskError as exc:
        print(f"{'config error' if isinstance(exc.cause, config_errors) else 'error'}: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc.cause, config_errors) else EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
