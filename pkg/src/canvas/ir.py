"""Line-based textual kernel IR.

Format (deterministic; ordering fixed by node id)::

    canvas-ir v1
    n0: shape=[C; H, W]
    n1: shape=[x1; H, W]
    e: fc(x1) (0) -> 1
    vars: x1
    solve: G=4
    target conv1: Cin=16 Cout=16 H=8 W=8 KH=3 KW=3 x1=12

``#`` lines are comments; broadcast matchings are recorded as comments for
auditability.  The ``solve`` trailer is optional and carries one line per
replacement target so a kernel file (or wire payload) is self-contained.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .micro_dag import Edge, KernelTemplate, MicroDag, collect_vars, finalize
from .primitives import Broadcast, PrimitiveInstance, mnemonic, output_shape, parse_mnemonic
from .shape_algebra import Assignment, Shape
from .shape_solver import match_broadcast

HEADER = "canvas-ir v1"


class IrError(ValueError):
    pass


@dataclass(frozen=True)
class TargetSolution:
    """Concrete constants and variable values for one replacement target."""

    name: str
    c_in: int
    c_out: int
    h: int
    w: int
    kh: int
    kw: int
    x: dict[int, int] = field(default_factory=dict)

    def assignment(self, g: int) -> Assignment:
        c = min(self.c_in, self.c_out)
        return Assignment(
            {"C": c, "G": g, "H": self.h, "W": self.w, "KH": self.kh, "KW": self.kw},
            dict(self.x),
        )


@dataclass(frozen=True)
class SolveRecord:
    g: int
    targets: tuple[TargetSolution, ...]


@dataclass(frozen=True)
class ParsedIr:
    template: KernelTemplate
    solve: SolveRecord | None


def emit(t: KernelTemplate, solve: SolveRecord | None = None) -> str:
    lines = [HEADER]
    for i, s in enumerate(t.dag.nodes):
        lines.append(f"n{i}: shape={s.render()}")
    for e in sorted(t.dag.edges, key=lambda e: e.out):
        ins = ",".join(str(i) for i in e.inputs)
        lines.append(f"e: {mnemonic(e.inst.kind)} ({ins}) -> {e.out}")
        if isinstance(e.inst.kind, Broadcast):
            m = match_broadcast(e.inst.inputs[0], e.inst.inputs[1])
            if m is not None:
                lines.append(f"# bcast@{e.out}: {m.audit()}")
    if t.free_vars:
        lines.append("vars: " + ", ".join(f"x{v}" for v in t.free_vars))
    if solve is not None:
        lines.append(f"solve: G={solve.g}")
        for tg in solve.targets:
            xs = " ".join(f"x{k}={v}" for k, v in sorted(tg.x.items()))
            lines.append(
                f"target {tg.name}: Cin={tg.c_in} Cout={tg.c_out} H={tg.h} W={tg.w} "
                f"KH={tg.kh} KW={tg.kw}" + (" " + xs if xs else "")
            )
    return "\n".join(lines) + "\n"


_NODE_RE = re.compile(r"^n(\d+):\s*shape=(.*)$")
_EDGE_RE = re.compile(r"^e:\s*(.+?)\s*\(([\d,\s]*)\)\s*->\s*(\d+)$")
_TARGET_RE = re.compile(r"^target\s+(\S+):\s*(.*)$")


def parse(text: str) -> ParsedIr:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != HEADER:
        raise IrError(f"missing header {HEADER!r}")

    shapes: dict[int, Shape] = {}
    edges: list[tuple[object, tuple[int, ...], int]] = []
    declared_vars: list[int] | None = None
    solve_g: int | None = None
    targets: list[TargetSolution] = []

    for ln in lines[1:]:
        if m := _NODE_RE.match(ln):
            shapes[int(m.group(1))] = Shape.parse(m.group(2))
        elif m := _EDGE_RE.match(ln):
            kind = parse_mnemonic(m.group(1))
            ins = tuple(int(t) for t in m.group(2).split(",") if t.strip())
            edges.append((kind, ins, int(m.group(3))))
        elif ln.startswith("vars:"):
            declared_vars = [int(t.strip()[1:]) for t in ln[5:].split(",") if t.strip()]
        elif ln.startswith("solve:"):
            kv = dict(p.split("=") for p in ln[6:].split())
            solve_g = int(kv["G"])
        elif m := _TARGET_RE.match(ln):
            kv = dict(p.split("=") for p in m.group(2).split())
            xs = {int(k[1:]): int(v) for k, v in kv.items() if k.startswith("x")}
            targets.append(
                TargetSolution(
                    m.group(1),
                    c_in=int(kv["Cin"]), c_out=int(kv["Cout"]),
                    h=int(kv["H"]), w=int(kv["W"]),
                    kh=int(kv["KH"]), kw=int(kv["KW"]),
                    x=xs,
                )
            )
        else:
            raise IrError(f"unrecognized line {ln!r}")

    if sorted(shapes) != list(range(len(shapes))):
        raise IrError("node ids must be contiguous from 0")
    nodes = tuple(shapes[i] for i in range(len(shapes)))
    produced = set()
    built: list[Edge] = []
    for kind, ins, out in edges:
        if out in produced:
            raise IrError(f"node {out} has two producing edges")
        if out == 0:
            raise IrError("node 0 is the input tensor and cannot be produced")
        produced.add(out)
        if any(i >= out for i in ins):
            raise IrError(f"edge into {out} references a later node; graphs must be topological")
        in_shapes = tuple(nodes[i] for i in ins)
        try:
            inst = PrimitiveInstance(kind, in_shapes, output_shape(kind, in_shapes))  # type: ignore[arg-type]
        except ValueError as e:
            raise IrError(f"edge into {out}: {e}") from e
        if inst.output != nodes[out]:
            raise IrError(f"node {out}: declared {nodes[out]}, primitive yields {inst.output}")
        built.append(Edge(inst, ins, out))
    if produced != set(range(1, len(nodes))):
        raise IrError("every node except the input needs exactly one producing edge")

    template = finalize(MicroDag(nodes, tuple(built)))
    if declared_vars is not None and tuple(declared_vars) != template.free_vars:
        raise IrError(f"vars line {declared_vars} disagrees with graph vars {list(template.free_vars)}")

    solve = None
    if solve_g is not None:
        solve = SolveRecord(solve_g, tuple(targets))
    elif targets:
        raise IrError("target lines require a solve line")
    return ParsedIr(template, solve)
