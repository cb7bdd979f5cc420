"""Shared domain types: vocabularies, event sequences, Boolean rules and causal graphs.

Token layout used throughout the package: event types are the integers
``0 .. n_events - 1`` and the start-of-sequence marker (``cls_id``) is
``n_events`` by default. Position 0 of every sequence holds ``cls_id``; it is
never a candidate cause.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np


class InvalidRuleError(ValueError):
    pass


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# vocabulary and sequences


@dataclass(frozen=True)
class Vocabulary:
    n_events: int
    cls_id: int | None = None
    unk_id: int | None = None

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError("vocabulary needs at least one event type")
        if self.cls_id is None:
            object.__setattr__(self, "cls_id", self.n_events)
        if not 0 <= self.cls_id <= self.n_events:
            raise ValueError(f"cls_id {self.cls_id} out of range")

    @property
    def n_tokens(self) -> int:
        return max(self.n_events, self.cls_id + 1)

    def is_event(self, token: int) -> bool:
        return 0 <= token < self.n_events and token != self.cls_id

    def check(self, seq: "EventSequence") -> None:
        if seq.tokens[0] != self.cls_id:
            raise ValueError("sequence must start with cls_id")
        for t in seq.tokens[1:]:
            if not self.is_event(t):
                raise ValueError(f"token {t} is not an event id of this vocabulary")


@dataclass(frozen=True)
class EventSequence:
    """A realization ``tokens[0..L]`` with ``tokens[0]`` the start marker."""

    tokens: tuple[int, ...]
    timestamps: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if len(self.tokens) < 2:
            raise ValueError("an event sequence needs at least one event after the start marker")
        if self.timestamps is not None:
            ts = tuple(float(t) for t in self.timestamps)
            if len(ts) != len(self.tokens):
                raise ValueError("timestamps must align with tokens")
            if ts[0] != 0.0 or any(b < a for a, b in zip(ts, ts[1:])):
                raise ValueError("timestamps must start at 0 and be nondecreasing")
            object.__setattr__(self, "timestamps", ts)

    @classmethod
    def from_events(cls, events: Iterable[int], cls_id: int) -> "EventSequence":
        return cls((cls_id, *events))

    @property
    def length(self) -> int:
        """L, the number of events after the start marker."""
        return len(self.tokens) - 1

    @property
    def events(self) -> tuple[int, ...]:
        return self.tokens[1:]

    def present(self) -> frozenset[int]:
        return frozenset(self.tokens[1:])

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabeledSequence:
    sequence: EventSequence
    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(b) for b in self.labels)
        if any(b not in (0, 1) for b in labels):
            raise ValueError("labels must be bits")
        object.__setattr__(self, "labels", labels)

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.sequence.tokens

    def positive_labels(self) -> tuple[int, ...]:
        return tuple(j for j, b in enumerate(self.labels) if b)

    def to_record(self) -> dict:
        return {"tokens": list(self.sequence.tokens), "labels": list(self.labels)}


def as_sequence(item: EventSequence | LabeledSequence) -> EventSequence:
    return item.sequence if isinstance(item, LabeledSequence) else item


def read_jsonl(path) -> list[EventSequence | LabeledSequence]:
    out: list[EventSequence | LabeledSequence] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            seq = EventSequence(rec["tokens"], rec.get("timestamps"))
            if "labels" in rec and rec["labels"] is not None:
                out.append(LabeledSequence(seq, rec["labels"]))
            else:
                out.append(seq)
    return out


def write_jsonl(path, items: Iterable[EventSequence | LabeledSequence]) -> None:
    with open(path, "w") as fh:
        for item in items:
            if isinstance(item, LabeledSequence):
                rec = item.to_record()
            else:
                rec = {"tokens": list(item.tokens)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Boolean rules over event presence


@dataclass(frozen=True)
class Atom:
    event: int

    def evaluate(self, present) -> bool:
        return self.event in present

    def atoms(self) -> Iterator[int]:
        yield self.event

    def to_text(self) -> str:
        return f"x{self.event}"


@dataclass(frozen=True)
class Not:
    child: "Rule"

    def evaluate(self, present) -> bool:
        return not self.child.evaluate(present)

    def atoms(self) -> Iterator[int]:
        yield from self.child.atoms()

    def to_text(self) -> str:
        inner = self.child.to_text()
        return f"!{inner}" if isinstance(self.child, (Atom, Not)) else f"!({inner})"


@dataclass(frozen=True)
class And:
    children: tuple["Rule", ...]

    def evaluate(self, present) -> bool:
        return all(c.evaluate(present) for c in self.children)

    def atoms(self) -> Iterator[int]:
        for c in self.children:
            yield from c.atoms()

    def to_text(self) -> str:
        return " & ".join(c.to_text() if not isinstance(c, Or) else f"({c.to_text()})" for c in self.children)


@dataclass(frozen=True)
class Or:
    children: tuple["Rule", ...]

    def evaluate(self, present) -> bool:
        return any(c.evaluate(present) for c in self.children)

    def atoms(self) -> Iterator[int]:
        for c in self.children:
            yield from c.atoms()

    def to_text(self) -> str:
        return " | ".join(c.to_text() for c in self.children)


Rule = Union[Atom, Not, And, Or]


def variables(rule: Rule) -> tuple[int, ...]:
    """Sorted, deduplicated event ids referenced by ``rule``."""
    return tuple(sorted(set(rule.atoms())))


def is_not_free(rule: Rule) -> bool:
    if isinstance(rule, Atom):
        return True
    if isinstance(rule, Not):
        return False
    return all(is_not_free(c) for c in rule.children)


def check_rule(rule: Rule, n_events: int) -> None:
    for e in rule.atoms():
        if not 0 <= e < n_events:
            raise InvalidRuleError(f"atom {e} is outside the vocabulary of {n_events} events")


_TOKEN_RE = re.compile(r"\s*(?:(\()|(\))|(&&?|\band\b)|(\|\|?|\bor\b)|(!|~|\bnot\b)|([A-Za-z_][A-Za-z_0-9]*|\d+))")


def _atom_id(name: str, names: Mapping[str, int] | None) -> int:
    if names is not None and name in names:
        return int(names[name])
    m = re.search(r"(\d+)$", name)
    if m is None:
        raise InvalidRuleError(f"cannot map atom {name!r} to an event id")
    return int(m.group(1))


def parse_rule(text: str, names: Mapping[str, int] | None = None) -> Rule:
    """Parse ``"x1 & x5 & !x8 | x3"``-style text. Precedence: ``!`` > ``&`` > ``|``.

    Atoms resolve through ``names`` first, then through their trailing digits
    (``dtc12`` -> 12, ``7`` -> 7).
    """
    toks: list[tuple[str, str]] = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise InvalidRuleError(f"unexpected character at {pos} in {text!r}")
        pos = m.end()
        kinds = ("(", ")", "&", "|", "!", "atom")
        for kind, grp in zip(kinds, m.groups()):
            if grp is not None:
                toks.append((kind, grp))
                break
    toks.append(("end", ""))
    i = 0

    def peek() -> str:
        return toks[i][0]

    def take(kind: str) -> str:
        nonlocal i
        if toks[i][0] != kind:
            raise InvalidRuleError(f"expected {kind!r}, found {toks[i][1]!r} in {text!r}")
        i += 1
        return toks[i - 1][1]

    def parse_or() -> Rule:
        parts = [parse_and()]
        while peek() == "|":
            take("|")
            parts.append(parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and() -> Rule:
        parts = [parse_unary()]
        while peek() == "&":
            take("&")
            parts.append(parse_unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_unary() -> Rule:
        if peek() == "!":
            take("!")
            return Not(parse_unary())
        if peek() == "(":
            take("(")
            r = parse_or()
            take(")")
            return r
        return Atom(_atom_id(take("atom"), names))

    rule = parse_or()
    take("end")
    return rule


def rule_eval(rule: Rule, seq: EventSequence | LabeledSequence, n_events: int | None = None) -> bool:
    """Truth value of ``rule`` where an atom holds iff its event occurs in ``tokens[1:]``."""
    if n_events is not None:
        check_rule(rule, n_events)
    return rule.evaluate(as_sequence(seq).present())


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True, order=True)
class MbEdge:
    label: int
    event: int
    cmi: float
    ace_mean: float = 0.0
    ace_std: float = 0.0
    frequency: float | None = None

    def __post_init__(self):
        if not self.cmi >= 0:
            raise ValueError(f"cmi must be nonnegative, got {self.cmi}")
        if not -1.0 <= self.ace_mean <= 1.0:
            raise ValueError(f"ace_mean must lie in [-1, 1], got {self.ace_mean}")
        if not self.ace_std >= 0:
            raise ValueError("ace_std must be nonnegative")
        if self.frequency is not None and not 0.0 <= self.frequency <= 1.0:
            raise ValueError("frequency must lie in [0, 1]")


@dataclass(frozen=True)
class MarkovBoundaryGraph:
    """Per-label Markov boundaries; sources are always events, sinks always labels.

    ``present_labels`` lists the labels the graph speaks for (the set bits of
    the analysed sequence, or every label for unlabeled input); fusion uses it
    as the per-label support.
    """

    edges: tuple[MbEdge, ...] = ()
    present_labels: tuple[int, ...] = ()
    suppressed: tuple[int, ...] = ()

    def __post_init__(self):
        edges = tuple(sorted(self.edges, key=lambda e: (e.label, e.event)))
        keys = [(e.label, e.event) for e in edges]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (label, event) edge")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "present_labels", tuple(sorted(set(self.present_labels))))
        object.__setattr__(self, "suppressed", tuple(sorted(set(self.suppressed))))

    def labels(self) -> tuple[int, ...]:
        return tuple(sorted({e.label for e in self.edges} | set(self.present_labels)))

    def boundary(self, label: int) -> frozenset[int]:
        return frozenset(e.event for e in self.edges if e.label == label)

    def boundaries(self) -> dict[int, frozenset[int]]:
        return {j: self.boundary(j) for j in self.labels()}

    def edge(self, label: int, event: int) -> MbEdge | None:
        for e in self.edges:
            if e.label == label and e.event == event:
                return e
        return None

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((e.event, e.label) for e in self.edges)


@dataclass(frozen=True, order=True)
class TimeEdge:
    src: int
    dst: int
    cmi: float


@dataclass(frozen=True)
class InstanceTimeGraph:
    """DAG over the time steps ``0..L`` of one sequence."""

    tokens: tuple[int, ...]
    edges: tuple[TimeEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        n = len(self.tokens)
        for e in self.edges:
            if not 0 <= e.src < e.dst < n:
                raise ValueError(f"time edge {e.src}->{e.dst} is not strictly forward within {n} steps")
            if not e.cmi >= 0:
                raise ValueError("edge cmi must be nonnegative")
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))

    @property
    def n_nodes(self) -> int:
        return len(self.tokens)

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((e.src, e.dst) for e in self.edges)


@dataclass(frozen=True, order=True)
class TypeEdge:
    src: int
    dst: int
    strength: float


@dataclass(frozen=True)
class SummaryGraph:
    """Event-type graph; cycles and self-loops are allowed."""

    nodes: tuple[int, ...]
    edges: tuple[TypeEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(set(int(n) for n in self.nodes))))
        edges = tuple(sorted(self.edges))
        if len({(e.src, e.dst) for e in edges}) != len(edges):
            raise ValueError("duplicate summary edge")
        object.__setattr__(self, "edges", edges)

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((e.src, e.dst) for e in self.edges)

    def adjacency(self, n_events: int) -> np.ndarray:
        a = np.zeros((n_events, n_events), dtype=np.int8)
        for e in self.edges:
            a[e.src, e.dst] = 1
        return a


Graph = Union[MarkovBoundaryGraph, InstanceTimeGraph, SummaryGraph]


def project_summary(g: InstanceTimeGraph, seq: EventSequence | Sequence[int] | None = None,
                    aggregate: str = "max") -> SummaryGraph:
    """Project time edges onto event types; duplicate type pairs combine by ``aggregate``."""
    if aggregate not in ("max", "mean"):
        raise ValueError("aggregate must be 'max' or 'mean'")
    if seq is None:
        tokens = g.tokens
    else:
        tokens = tuple(as_sequence(seq).tokens) if isinstance(seq, (EventSequence, LabeledSequence)) else tuple(seq)
        if len(tokens) != g.n_nodes:
            raise ShapeError(f"instance graph has {g.n_nodes} nodes but the sequence has {len(tokens)} tokens")
    groups: dict[tuple[int, int], list[float]] = {}
    for e in g.edges:
        groups.setdefault((tokens[e.src], tokens[e.dst]), []).append(e.cmi)
    edges = []
    for (u, v), vals in groups.items():
        s = max(vals) if aggregate == "max" else sum(vals) / len(vals)
        edges.append(TypeEdge(u, v, s))
    return SummaryGraph(nodes=tuple(tokens[1:]), edges=tuple(edges))


# ---------------------------------------------------------------------------
# serialization


def _edge_record(src, dst, cmi, ace_mean=None, ace_std=None, freq=None) -> dict:
    return {"src": src, "dst": dst, "cmi": cmi, "ace_mean": ace_mean, "ace_std": ace_std, "freq": freq}


def graph_to_dict(g: Graph) -> dict:
    if isinstance(g, MarkovBoundaryGraph):
        return {
            "kind": "mb",
            "nodes": sorted({e.event for e in g.edges}),
            "labels": list(g.present_labels),
            "suppressed": list(g.suppressed),
            "edges": [_edge_record(e.event, e.label, e.cmi, e.ace_mean, e.ace_std, e.frequency) for e in g.edges],
        }
    if isinstance(g, InstanceTimeGraph):
        return {
            "kind": "instance",
            "nodes": list(range(g.n_nodes)),
            "tokens": list(g.tokens),
            "edges": [_edge_record(e.src, e.dst, e.cmi) for e in g.edges],
        }
    if isinstance(g, SummaryGraph):
        return {
            "kind": "summary",
            "nodes": list(g.nodes),
            "edges": [_edge_record(e.src, e.dst, e.strength) for e in g.edges],
        }
    raise TypeError(f"not a graph: {type(g).__name__}")


def graph_from_dict(d: dict) -> Graph:
    kind = d["kind"]
    if kind == "mb":
        edges = tuple(
            MbEdge(label=e["dst"], event=e["src"], cmi=e["cmi"],
                   ace_mean=e["ace_mean"] if e["ace_mean"] is not None else 0.0,
                   ace_std=e["ace_std"] if e["ace_std"] is not None else 0.0,
                   frequency=e["freq"])
            for e in d["edges"]
        )
        return MarkovBoundaryGraph(edges, tuple(d.get("labels", ())), tuple(d.get("suppressed", ())))
    if kind == "instance":
        return InstanceTimeGraph(tuple(d["tokens"]), tuple(TimeEdge(e["src"], e["dst"], e["cmi"]) for e in d["edges"]))
    if kind == "summary":
        return SummaryGraph(tuple(d["nodes"]), tuple(TypeEdge(e["src"], e["dst"], e["cmi"]) for e in d["edges"]))
    raise ValueError(f"unknown graph kind {kind!r}")


def serialize_graph(g: Graph) -> str:
    """Canonical JSON: sorted keys, no insignificant whitespace, shortest round-trip floats."""
    return json.dumps(graph_to_dict(g), sort_keys=True, separators=(",", ":"))


def deserialize_graph(text: str) -> Graph:
    return graph_from_dict(json.loads(text))


def to_dot(g: Graph, name: str = "G") -> str:
    lines = [f"digraph {name} {{"]
    if isinstance(g, MarkovBoundaryGraph):
        nodes = [f'"x{e}"' for e in sorted({e.event for e in g.edges})]
        nodes += [f'"y{j}" [shape=box]' for j in g.labels()]
        edges = [(f'"x{e.event}"', f'"y{e.label}"', e.cmi) for e in g.edges]
    elif isinstance(g, InstanceTimeGraph):
        nodes = [f'"t{t}" [label="{t}:{tok}"]' for t, tok in enumerate(g.tokens)]
        edges = [(f'"t{e.src}"', f'"t{e.dst}"', e.cmi) for e in g.edges]
    else:
        nodes = [f'"x{n}"' for n in g.nodes]
        edges = [(f'"x{e.src}"', f'"x{e.dst}"', e.strength) for e in g.edges]
    lines += [f"  {n};" for n in nodes]
    lines += [f'  {a} -> {b} [label="{round(w, 4):.4f}"];' for a, b, w in edges]
    lines.append("}")
    return "\n".join(lines) + "\n"
