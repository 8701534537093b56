"""The growing kernel graph.

Nodes are tensor shapes, edges are primitive applications.  Node 0 is the
input tensor ``[C; H, W]``; every other node has exactly one producing edge.
Graphs are immutable: :func:`grow` returns a new value, so samplers can
share and discard them freely.

A finished kernel has exactly one leaf, shaped ``[C; H, W]`` again; it is
then wrapped as a :class:`KernelTemplate` together with its unresolved
dynamic variables.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from hashlib import blake2b

from .primitives import (
    Broadcast,
    ElementWise,
    Fold,
    FullyConnected,
    Group,
    NotApplicable,
    PrimitiveInstance,
    PrimitiveKind,
    Softmax,
    mnemonic,
    output_shape,
)
from .shape_algebra import CHW, IllegalSubstitution, ONE, Shape, substitute, substitute_shape
from .shape_solver import BroadcastMatch, match_broadcast


class ShapeMismatch(ValueError):
    """Edge input shapes disagree with the nodes they are attached to."""


@dataclass(frozen=True, slots=True)
class Edge:
    inst: PrimitiveInstance
    inputs: tuple[int, ...]
    out: int


@dataclass(frozen=True, slots=True)
class MicroDag:
    nodes: tuple[Shape, ...]
    edges: tuple[Edge, ...]

    @staticmethod
    def initial() -> "MicroDag":
        return MicroDag((CHW,), ())

    def producer(self, node: int) -> Edge | None:
        for e in self.edges:
            if e.out == node:
                return e
        return None

    def leaves(self) -> tuple[int, ...]:
        used = {i for e in self.edges for i in e.inputs}
        return tuple(i for i in range(len(self.nodes)) if i not in used)


def width(g: MicroDag) -> int:
    """Number of leaf nodes (tensors not yet consumed by any primitive)."""
    return len(g.leaves())


def grow(g: MicroDag, inst: PrimitiveInstance, inputs: tuple[int, ...]) -> MicroDag:
    """Append one node produced by ``inst`` applied to existing nodes."""
    if len(inputs) != len(inst.inputs):
        raise ShapeMismatch(f"{len(inputs)} inputs for {mnemonic(inst.kind)}")
    for node_id, want in zip(inputs, inst.inputs):
        if not 0 <= node_id < len(g.nodes):
            raise ShapeMismatch(f"node {node_id} does not exist")
        if g.nodes[node_id] != want:
            raise ShapeMismatch(f"node {node_id} is {g.nodes[node_id]}, edge expects {want}")
    out = len(g.nodes)
    return MicroDag(g.nodes + (inst.output,), g.edges + (Edge(inst, tuple(inputs), out),))


def grow_kind(g: MicroDag, kind: PrimitiveKind, inputs: tuple[int, ...]) -> MicroDag:
    shapes = tuple(g.nodes[i] for i in inputs)
    inst = PrimitiveInstance(kind, shapes, output_shape(kind, shapes))
    return grow(g, inst, inputs)


# -- redundancy pruning ---------------------------------------------------------

DEFAULT_PRUNE_RULES = frozenset(
    {
        "consecutive-identical-elementwise",
        "self-subtraction",
        "self-min-max",  # min/max of a tensor with itself is the identity
        "group-undone-by-fold",
        "fold-of-unit-dim",  # averaging a single element is the identity
        "consecutive-softmax",
    }
)


def check_candidate(
    g: MicroDag,
    kind: PrimitiveKind,
    inputs: tuple[int, ...],
    rules: frozenset[str] = DEFAULT_PRUNE_RULES,
) -> str | None:
    """Reason the candidate edge is obviously redundant, or None."""
    if isinstance(kind, Broadcast) and len(inputs) == 2 and inputs[0] == inputs[1]:
        if kind.op == "sub" and "self-subtraction" in rules:
            return "self-subtraction"
        if kind.op in ("min", "max") and "self-min-max" in rules:
            return "self-min-max"
    prev = g.producer(inputs[0]) if inputs else None
    if isinstance(kind, ElementWise) and "consecutive-identical-elementwise" in rules:
        if prev is not None and isinstance(prev.inst.kind, ElementWise) and prev.inst.kind.fn == kind.fn:
            return "consecutive-identical-elementwise"
    if isinstance(kind, Softmax) and "consecutive-softmax" in rules:
        if (
            prev is not None
            and isinstance(prev.inst.kind, Softmax)
            and (prev.inst.kind.start, prev.inst.kind.end) == (kind.start, kind.end)
        ):
            return "consecutive-softmax"
    if isinstance(kind, Fold):
        removed = g.nodes[inputs[0]].dims()[kind.dim]
        if removed == ONE:
            if "fold-of-unit-dim" in rules:
                return "fold-of-unit-dim"
            if (
                "group-undone-by-fold" in rules
                and prev is not None
                and isinstance(prev.inst.kind, Group)
                and prev.inst.kind.factor == "each"
                and kind.dim == prev.inst.kind.dim + 1
            ):
                return "group-undone-by-fold"
    return None


def prune_check(g: MicroDag, rules: frozenset[str] = DEFAULT_PRUNE_RULES) -> str | None:
    """Scan a whole graph with the candidate rules; reason or None (= ok)."""
    for e in g.edges:
        # Rebuild the pre-edge view lazily: candidate checks only consult
        # producers of the edge inputs, which exist in the full graph too.
        reason = check_candidate(g, e.inst.kind, e.inputs, rules)
        if reason is not None:
            return reason
    return None


# -- isomorphism hashing --------------------------------------------------------

_VAR_RE = re.compile(r"x\d+")


def _h64(text: str) -> str:
    return blake2b(text.encode(), digest_size=8).hexdigest()


def _anon(label: str) -> str:
    return _VAR_RE.sub("x", label)


def _diameter(n: int, adj: list[list[int]]) -> int:
    best = 0
    for src in range(n):
        dist = [-1] * n
        dist[src] = 0
        q = deque([src])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    q.append(v)
        best = max(best, max(d for d in dist if d >= 0))
    return best


def iso_hash(g: MicroDag) -> int:
    """64-bit digest equal across node relabelings and variable renumberings.

    Weisfeiler-Lehman style refinement: node labels start from the
    variable-anonymized shape rendering, then absorb (role, primitive,
    neighbor label) multisets from both directions for as many rounds as the
    undirected graph diameter.  Anchors: the empty graph hashes to
    0xad456e04847045a5 and the bare input tensor to 0x0589099a6d6e8763.
    """
    n = len(g.nodes)
    if n == 0:
        return int(_h64("empty-dag"), 16)
    labels = [_anon(s.render()) for s in g.nodes]
    in_adj: list[list[tuple[int, str, int]]] = [[] for _ in range(n)]
    out_adj: list[list[tuple[int, str, int]]] = [[] for _ in range(n)]
    undirected: list[list[int]] = [[] for _ in range(n)]
    for e in g.edges:
        el = _anon(mnemonic(e.inst.kind))
        for role, u in enumerate(e.inputs):
            in_adj[e.out].append((role, el, u))
            out_adj[u].append((role, el, e.out))
            undirected[u].append(e.out)
            undirected[e.out].append(u)
    for _ in range(_diameter(n, undirected)):
        labels = [
            _h64(
                labels[v]
                + "|I:" + ",".join(sorted(f"{r}:{el}:{labels[u]}" for r, el, u in in_adj[v]))
                + "|O:" + ",".join(sorted(f"{r}:{el}:{labels[u]}" for r, el, u in out_adj[v]))
            )
            for v in range(n)
        ]
    total = sum(int(_h64(lb), 16) for lb in labels)
    return (total + 0x9E3779B97F4A7C15 * n) % (1 << 64)


# -- finished kernels -----------------------------------------------------------


@dataclass(frozen=True, slots=True)
class KernelTemplate:
    """A finalized single-input/single-output kernel with free variables."""

    dag: MicroDag
    output_node: int
    free_vars: tuple[int, ...]


def collect_vars(g: MicroDag) -> tuple[int, ...]:
    seen: set[int] = set()
    for s in g.nodes:
        seen.update(s.dyn_vars())
    for e in g.edges:
        if isinstance(e.inst.kind, FullyConnected):
            v = e.inst.kind.out.dyn_var()
            if v is not None:
                seen.add(v)
    return tuple(sorted(seen))


def finalize(g: MicroDag) -> KernelTemplate:
    leaves = g.leaves()
    if len(leaves) != 1:
        raise ShapeMismatch(f"kernel must have exactly one output, found {len(leaves)} leaves")
    out = leaves[0]
    if g.nodes[out] != CHW:
        raise ShapeMismatch(f"kernel output must be {CHW}, found {g.nodes[out]}")
    return KernelTemplate(g, out, collect_vars(g))


def pending_substitutions(t: KernelTemplate) -> list[tuple[int, BroadcastMatch]]:
    """Broadcast edges whose left-hand variable is still unsubstituted."""
    out = []
    for i, e in enumerate(t.dag.edges):
        if isinstance(e.inst.kind, Broadcast):
            m = match_broadcast(e.inst.inputs[0], e.inst.inputs[1])
            if m is None:
                raise ShapeMismatch(f"broadcast edge {i} has no legal matching")
            if m.needs_substitution:
                out.append((i, m))
    return out


def substitute_dag(g: MicroDag, var_id: int, expr) -> MicroDag:
    """Rewrite ``x<var_id> := expr`` in every node shape and edge parameter."""
    try:
        nodes = tuple(substitute_shape(s, var_id, expr) for s in g.nodes)
        edges = []
        for e in g.edges:
            kind = e.inst.kind
            if isinstance(kind, FullyConnected):
                kind = FullyConnected(substitute(kind.out, var_id, expr))
            inst = PrimitiveInstance(
                kind,
                tuple(substitute_shape(s, var_id, expr) for s in e.inst.inputs),
                nodes[e.out],
            )
            edges.append(Edge(inst, e.inputs, e.out))
    except (NotApplicable, IllegalSubstitution) as err:
        raise IllegalSubstitution(f"x{var_id}:={expr}: {err}") from err
    return MicroDag(nodes, tuple(edges))


def apply_substitution(t: KernelTemplate, var_id: int, expr) -> KernelTemplate:
    """Propagate ``x<var_id> := expr`` through every node and edge parameter."""
    if var_id not in t.free_vars:
        return t
    dag = substitute_dag(t.dag, var_id, expr)
    return KernelTemplate(dag, t.output_node, collect_vars(dag))
