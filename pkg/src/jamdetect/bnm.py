"""Discrete Bayesian network for throughput-degradation root-cause analysis.

Networks are immutable once built. Inference is exact enumeration over the
hidden variables, which is all the shipped five-node network needs.

JSON layout::

    {"root": "Jamming", "sentinel": "ThroughputDecrease",
     "nodes": [{"name": ..., "states": [...], "parents": [...],
                "cpt": {"<parent states joined by ','>": [p, ...]}}]}

A root node's single CPT row uses the empty key ``""``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from jamdetect.errors import DataError, NetworkError, ZeroProbabilityError

ROW_TOL = 1e-9
DEFAULT_NETWORK_FILE = "default_network.json"


def _row_key(states) -> str:
    return ",".join(states)


@dataclass(frozen=True)
class NodeSpec:
    name: str
    states: tuple[str, ...]
    parents: tuple[str, ...] = ()
    cpt: Mapping[tuple[str, ...], tuple[float, ...]] = MappingProxyType({})

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "parents", tuple(self.parents))
        rows = {tuple(k): tuple(float(p) for p in v) for k, v in dict(self.cpt).items()}
        object.__setattr__(self, "cpt", MappingProxyType(rows))
        if not self.name:
            raise NetworkError("node name must be non-empty")
        if len(self.states) < 2 or len(set(self.states)) != len(self.states):
            raise NetworkError(f"node {self.name}: needs at least 2 distinct states")
        if len(set(self.parents)) != len(self.parents) or self.name in self.parents:
            raise NetworkError(f"node {self.name}: duplicate or self parent")
        for key, row in rows.items():
            if len(row) != len(self.states):
                raise NetworkError(f"node {self.name}: CPT row {key} has {len(row)} entries, "
                                   f"expected {len(self.states)}")
            if any(p < 0 or not math.isfinite(p) for p in row):
                raise NetworkError(f"node {self.name}: CPT row {key} has an invalid probability")
            if abs(sum(row) - 1.0) > ROW_TOL:
                raise NetworkError(f"node {self.name}: CPT row {key} sums to {sum(row)!r}")

    def prob(self, state: str, parent_states: tuple[str, ...]) -> float:
        return self.cpt[parent_states][self.states.index(state)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "states": list(self.states),
            "parents": list(self.parents),
            "cpt": {_row_key(k): list(v) for k, v in self.cpt.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> NodeSpec:
        try:
            parents = tuple(d.get("parents", ()))
            cpt = {}
            for key, row in d["cpt"].items():
                states = tuple(key.split(",")) if key else ()
                if len(states) != len(parents):
                    raise NetworkError(f"node {d['name']}: CPT key {key!r} does not match parents {list(parents)}")
                cpt[states] = row
            return cls(d["name"], tuple(d["states"]), parents, cpt)
        except (KeyError, TypeError, AttributeError) as exc:
            raise NetworkError(f"malformed node definition: {exc}") from None


@dataclass(frozen=True)
class Bnm:
    """A validated network; ``nodes`` is in topological order."""

    nodes: tuple[NodeSpec, ...]
    root: str
    sentinel: str

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise DataError(f"unknown node {name!r}")

    def children(self, name: str) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes if name in n.parents)

    @property
    def causes(self) -> tuple[str, ...]:
        """Intermediate nodes: neither the root cause nor the sentinel."""
        return tuple(n for n in self.names if n not in (self.root, self.sentinel))

    def to_dict(self) -> dict:
        return {"root": self.root, "sentinel": self.sentinel, "nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_dict(cls, d: dict) -> Bnm:
        if not isinstance(d, dict) or "nodes" not in d:
            raise NetworkError("network definition needs a 'nodes' list")
        specs = [NodeSpec.from_dict(n) for n in d["nodes"]]
        return build_bnm(specs, root=d.get("root", "Jamming"), sentinel=d.get("sentinel", "ThroughputDecrease"))


def _find_cycle(specs: dict[str, NodeSpec]) -> list[str] | None:
    color = dict.fromkeys(specs, 0)
    stack: list[str] = []

    def visit(u):
        color[u] = 1
        stack.append(u)
        for p in specs[u].parents:
            if color[p] == 1:
                return stack[stack.index(p):] + [p]
            if color[p] == 0:
                found = visit(p)
                if found:
                    return found
        stack.pop()
        color[u] = 2
        return None

    for name in specs:
        if color[name] == 0:
            found = visit(name)
            if found:
                return found
    return None


def build_bnm(specs, root: str = "Jamming", sentinel: str = "ThroughputDecrease") -> Bnm:
    """Validate node specs and order them topologically (stable w.r.t. input order)."""
    specs = list(specs)
    by_name: dict[str, NodeSpec] = {}
    for s in specs:
        if s.name in by_name:
            raise NetworkError(f"duplicate node {s.name!r}")
        by_name[s.name] = s
    for s in specs:
        for p in s.parents:
            if p not in by_name:
                raise NetworkError(f"node {s.name}: unknown parent {p!r}")
    cycle = _find_cycle(by_name)
    if cycle:
        # the search walks parent links, so reverse to print edges in causal direction
        raise NetworkError("cycle: " + " -> ".join(reversed(cycle)))
    for s in specs:
        for combo in itertools.product(*(by_name[p].states for p in s.parents)):
            if combo not in s.cpt:
                raise NetworkError(f"node {s.name}: CPT has no row for parents {dict(zip(s.parents, combo))}")
        extra = set(s.cpt) - set(itertools.product(*(by_name[p].states for p in s.parents)))
        if extra:
            raise NetworkError(f"node {s.name}: CPT rows for unknown parent states {sorted(extra)}")
    order: list[NodeSpec] = []
    placed: set[str] = set()
    while len(order) < len(specs):
        for s in specs:
            if s.name not in placed and all(p in placed for p in s.parents):
                order.append(s)
                placed.add(s.name)
                break
    for name in (root, sentinel):
        if name not in by_name:
            raise NetworkError(f"designated node {name!r} is not in the network")
    return Bnm(tuple(order), root, sentinel)


def _check_assignment(net: Bnm, assignment: Mapping[str, str]) -> None:
    for name, state in assignment.items():
        if state not in net.node(name).states:
            raise DataError(f"{name}: unknown state {state!r}")


def joint(net: Bnm, assignment: Mapping[str, str]) -> float:
    """Chain-rule probability of a full assignment."""
    missing = [n for n in net.names if n not in assignment]
    if missing:
        raise DataError(f"assignment is missing nodes {missing}")
    _check_assignment(net, assignment)
    p = 1.0
    for n in net.nodes:
        p *= n.prob(assignment[n.name], tuple(assignment[q] for q in n.parents))
    return p


def _enumerate(net: Bnm, fixed: Mapping[str, str]) -> float:
    hidden = [n for n in net.nodes if n.name not in fixed]
    total = 0.0
    for combo in itertools.product(*(n.states for n in hidden)):
        full = dict(fixed)
        full.update(zip((n.name for n in hidden), combo))
        total += joint(net, full)
    return total


def _parse_target(target) -> tuple[str, str]:
    if isinstance(target, str):
        if "=" not in target:
            raise DataError(f"target must look like Node=state, got {target!r}")
        name, state = target.split("=", 1)
        return name.strip(), state.strip()
    name, state = target
    return name, state


def query(net: Bnm, target, evidence: Mapping[str, str] | None = None) -> float:
    """``P(target | evidence)`` by enumeration; ``target`` is ``"Node=state"`` or a pair."""
    name, state = _parse_target(target)
    evidence = dict(evidence or {})
    if name in evidence:
        raise DataError(f"target {name} is also in the evidence")
    _check_assignment(net, {**evidence, name: state})
    denom = _enumerate(net, evidence)
    if denom <= 0.0:
        raise ZeroProbabilityError(f"evidence {evidence} has probability zero")
    return _enumerate(net, {**evidence, name: state}) / denom


def posterior_root(net: Bnm, effect_evidence: Mapping[str, str] | None = None) -> dict[str, float]:
    """Distribution over root-cause states given the evidence."""
    evidence = dict(effect_evidence or {})
    if net.root in evidence:
        raise DataError("evidence must not fix the root cause")
    _check_assignment(net, evidence)
    weights = {s: _enumerate(net, {**evidence, net.root: s}) for s in net.node(net.root).states}
    total = sum(weights.values())
    if total <= 0.0:
        raise ZeroProbabilityError(f"evidence {evidence} has probability zero")
    return {s: w / total for s, w in weights.items()}


def jam_probability(dist: Mapping[str, float], net: Bnm) -> float:
    """Probability that the root is in any state other than its first (the no-jamming state)."""
    null = net.node(net.root).states[0]
    return 1.0 - dist[null]


def fuse(detector_score: float, net: Bnm, side_evidence: Mapping[str, str] | None = None) -> float:
    """Reweight a detector's jamming probability by BNM side evidence.

    The detector score is read as a posterior under the network's root prior.
    Its odds are multiplied by (evidence posterior odds / prior odds) of
    jamming, where jamming means any root state but the first.
    """
    if not 0.0 <= detector_score <= 1.0 or math.isnan(detector_score):
        raise DataError(f"detector score must be in [0, 1], got {detector_score}")
    prior = jam_probability(posterior_root(net, {}), net)
    if prior <= 0.0 or prior >= 1.0:
        raise DataError(f"degenerate jamming prior {prior}")
    post = jam_probability(posterior_root(net, side_evidence), net)
    if post >= 1.0:
        return 1.0 if detector_score > 0.0 else 0.0
    ratio = (post / (1.0 - post)) / (prior / (1.0 - prior))
    if detector_score >= 1.0:
        return 1.0 if ratio > 0.0 else 0.0
    odds = detector_score / (1.0 - detector_score) * ratio
    return float(min(1.0, max(0.0, odds / (1.0 + odds))))


def absorb_root(net: Bnm, name: str) -> Bnm:
    """Sum a parentless, single-child node out of the network.

    The child's CPT becomes ``sum_u P(child | parents, u) P(u)``, so every query
    that does not mention ``name`` is unchanged.
    """
    node = net.node(name)
    if node.parents:
        raise DataError(f"{name} has parents; only root nodes can be absorbed")
    kids = net.children(name)
    if len(kids) != 1:
        raise DataError(f"{name} must have exactly one child, has {len(kids)}")
    if name in (net.root, net.sentinel):
        raise DataError("cannot absorb the root cause or the sentinel")
    child = net.node(kids[0])
    pos = child.parents.index(name)
    parents = child.parents[:pos] + child.parents[pos + 1:]
    prior = node.cpt[()]
    cpt = {}
    for combo in itertools.product(*(net.node(p).states for p in parents)):
        row = [0.0] * len(child.states)
        for u, pu in zip(node.states, prior):
            full = combo[:pos] + (u,) + combo[pos:]
            for i, p in enumerate(child.cpt[full]):
                row[i] += pu * p
        cpt[combo] = tuple(row)
    new_child = NodeSpec(child.name, child.states, parents, cpt)
    specs = [new_child if n.name == child.name else n for n in net.nodes if n.name != name]
    return build_bnm(specs, root=net.root, sentinel=net.sentinel)


def load_network(path) -> Bnm:
    try:
        return Bnm.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: invalid JSON ({exc.msg})") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None


def save_network(net: Bnm, path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=2) + "\n")


def default_network() -> Bnm:
    """The bundled five-node throughput-degradation network."""
    text = resources.files("jamdetect.data").joinpath(DEFAULT_NETWORK_FILE).read_text()
    return Bnm.from_dict(json.loads(text))


def parse_evidence(items) -> dict[str, str]:
    """Turn ``["A=x", "B=y"]`` (or a single comma-separated string) into a dict."""
    if isinstance(items, str):
        items = [s for s in items.split(",") if s.strip()]
    out = {}
    for item in items or ():
        name, state = _parse_target(item)
        if name in out:
            raise DataError(f"evidence names {name} twice")
        out[name] = state
    return out


def sample(net: Bnm, rng, fixed: Mapping[str, str] | None = None) -> dict[str, str]:
    """One forward (ancestral) sample; nodes in ``fixed`` are clamped, not drawn."""
    fixed = dict(fixed or {})
    _check_assignment(net, fixed)
    out: dict[str, str] = {}
    for n in net.nodes:
        if n.name in fixed:
            out[n.name] = fixed[n.name]
            continue
        row = n.cpt[tuple(out[p] for p in n.parents)]
        out[n.name] = n.states[int(rng.choice(len(n.states), p=row))]
    return out


def root_state_for(label) -> str:
    """Root-cause state matching a dataset label: ``None`` for clean, else the jammed channel."""
    return label.channel if label.is_jam else "None"


def side_evidence(net: Bnm, labels, node: str = "McsVarianceIncrease", seed: int = 0) -> list[str]:
    """Per-record observations of ``node`` drawn from the network given each true root state.

    Stands in for scheduler-level reports that the aggregated KPIs do not carry.
    """
    rng = np.random.default_rng(seed)
    net.node(node)
    return [sample(net, rng, {net.root: root_state_for(lab)})[node] for lab in labels]
