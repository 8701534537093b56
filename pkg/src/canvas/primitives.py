"""The fine-grained primitive library.

Three classes of primitives act on shapes: rearrangements (group, shift,
unfold) that only re-index data, arithmetic ops (fully-connected,
element-wise, fold, softmax) that change values, and the two-input
broadcast blend.  Each kind knows where it applies, how it transforms a
shape, and what it costs; numeric semantics live in the interpreter.

Fully-connected is the only primitive with learned weights and the only one
that may introduce a dynamic variable.  Group and unfold cost nothing: they
rearrange through shallow indexing and never copy.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .shape_algebra import (
    Assignment,
    intern_shape,
    D_C,
    D_H,
    D_KH,
    D_KW,
    D_W,
    Dimension,
    ONE,
    Shape,
    atom_is_var,
    const_atom,
    divide,
    evaluate,
    make_dim,
    multiply,
    shape_numel,
    var_dim,
)
from .shape_solver import BroadcastMatch, match_broadcast

EW_FNS = ("relu", "abs", "sin", "exp", "neg")
BCAST_OPS = ("add", "sub", "mul", "min", "max")
TYPE_NAMES = ("group", "shift", "unfold", "fc", "ew", "fold", "softmax", "bcast")

_SPATIAL_K = {"H": D_KH, "W": D_KW}
_G_ATOM = const_atom("G")
_C_ATOM = const_atom("C")


class NotApplicable(ValueError):
    """Primitive kind cannot act on the given input shape(s)."""


@dataclass(frozen=True, slots=True)
class Group:
    dim: int  # channel index
    factor: str  # "G" | "each"
    type_name = "group"


@dataclass(frozen=True, slots=True)
class Shift:
    axis: str  # spatial constant, "h" | "w"
    offset: int  # +1 | -1
    type_name = "shift"


@dataclass(frozen=True, slots=True)
class Unfold:
    axis: str  # spatial constant, "h" | "w"
    insert: int | None = None  # channel position; None appends
    type_name = "unfold"


@dataclass(frozen=True, slots=True)
class FullyConnected:
    out: Dimension  # a fresh variable, or C for the pinned final remap
    type_name = "fc"


@dataclass(frozen=True, slots=True)
class ElementWise:
    fn: str
    type_name = "ew"


@dataclass(frozen=True, slots=True)
class Fold:
    dim: int  # global index over channels ++ spatials
    mode: str  # "avg" | "max"
    type_name = "fold"


@dataclass(frozen=True, slots=True)
class Softmax:
    start: int  # inclusive channel index range
    end: int
    type_name = "softmax"


@dataclass(frozen=True, slots=True)
class Broadcast:
    op: str
    type_name = "bcast"


PrimitiveKind = Group | Shift | Unfold | FullyConnected | ElementWise | Fold | Softmax | Broadcast


def _spatial_index(s: Shape, axis: str) -> int:
    want = D_H if axis == "h" else D_W
    for i, d in enumerate(s.spatials):
        if d == want:
            return i
    raise NotApplicable(f"no spatial dimension {axis!r} in {s}")


def _groupable_by_g(d: Dimension) -> bool:
    # G divides d when d carries C (and no prior /G that would demand G^2 | C),
    # carries G itself, or carries a variable whose value the analytical
    # solver will later pin to a multiple of the denominator.
    if any(atom_is_var(a) for a in d.num):
        return True
    if _G_ATOM in d.num:
        return True
    return _C_ATOM in d.num and _G_ATOM not in d.den


def output_shape(kind: PrimitiveKind, inputs: tuple[Shape, ...] | list[Shape]) -> Shape:
    """Shape transform for ``kind``; raises :class:`NotApplicable`."""
    if isinstance(kind, Broadcast):
        if len(inputs) != 2:
            raise NotApplicable("broadcast takes two inputs")
        if match_broadcast(inputs[0], inputs[1]) is None:
            raise NotApplicable(f"no legal matching for {inputs[0]} -> {inputs[1]}")
        return inputs[1]
    if len(inputs) != 1:
        raise NotApplicable(f"{kind} takes one input")
    s = inputs[0]

    if isinstance(kind, Group):
        if not 0 <= kind.dim < len(s.channels):
            raise NotApplicable(f"no channel dim {kind.dim} in {s}")
        x = s.channels[kind.dim]
        if kind.factor == "each":
            if x == ONE:
                raise NotApplicable("refusing to split a unit dim")
            parts = (x, ONE)
        else:
            if not _groupable_by_g(x):
                raise NotApplicable(f"{x} is not known to be divisible by G")
            parts = (make_dim([_G_ATOM]), divide(x, make_dim([_G_ATOM])))
        chans = s.channels[: kind.dim] + parts + s.channels[kind.dim + 1 :]
        return intern_shape(Shape(chans, s.spatials))

    if isinstance(kind, Shift):
        _spatial_index(s, kind.axis)
        return s

    if isinstance(kind, Unfold):
        _spatial_index(s, kind.axis)
        k = _SPATIAL_K["H" if kind.axis == "h" else "W"]
        at = len(s.channels) if kind.insert is None else kind.insert
        if not 0 <= at <= len(s.channels):
            raise NotApplicable(f"insert position {at} out of range in {s}")
        return intern_shape(Shape(s.channels[:at] + (k,) + s.channels[at:], s.spatials))

    if isinstance(kind, FullyConnected):
        return intern_shape(Shape((kind.out,), s.spatials))

    if isinstance(kind, ElementWise):
        if kind.fn not in EW_FNS:
            raise NotApplicable(f"unknown element-wise fn {kind.fn!r}")
        return s

    if isinstance(kind, Fold):
        dims = s.dims()
        if not 0 <= kind.dim < len(dims):
            raise NotApplicable(f"no dim {kind.dim} in {s}")
        nch = len(s.channels)
        if kind.dim < nch:
            return intern_shape(Shape(s.channels[: kind.dim] + s.channels[kind.dim + 1 :], s.spatials))
        i = kind.dim - nch
        return intern_shape(Shape(s.channels, s.spatials[:i] + s.spatials[i + 1 :]))

    if isinstance(kind, Softmax):
        if not (0 <= kind.start <= kind.end < len(s.channels)):
            raise NotApplicable(f"softmax range {kind.start}..{kind.end} not inside channels of {s}")
        return s

    raise NotApplicable(f"unknown primitive kind {kind!r}")


def applicable_unary(s: Shape, fresh_var: int = 0) -> list[PrimitiveKind]:
    """All single-input kinds legal on ``s``, in a fixed enumeration order.

    ``fresh_var`` is the id the fully-connected candidate would introduce.
    """
    out: list[PrimitiveKind] = []
    for i, d in enumerate(s.channels):
        if _groupable_by_g(d):
            out.append(Group(i, "G"))
        if d != ONE:
            out.append(Group(i, "each"))
    for axis in ("h", "w"):
        try:
            _spatial_index(s, axis)
        except NotApplicable:
            continue
        out.append(Shift(axis, +1))
        out.append(Shift(axis, -1))
        # None is the canonical spelling of the append position, so that two
        # ways of saying "insert at the end" cannot coexist in one dag.
        out.extend(Unfold(axis, at) for at in range(len(s.channels)))
        out.append(Unfold(axis, None))
    out.append(FullyConnected(var_dim(fresh_var)))
    out.extend(ElementWise(fn) for fn in EW_FNS)
    out.extend(Fold(i, mode) for i in range(len(s.dims())) for mode in ("avg", "max"))
    out.extend(
        Softmax(i, j)
        for i in range(len(s.channels))
        for j in range(i, len(s.channels))
    )
    return out


def applicable_blends(lhs: Shape, rhs: Shape) -> list[tuple[str, BroadcastMatch]]:
    """Broadcast ops legal from ``lhs`` onto ``rhs`` with their matchings."""
    m = match_broadcast(lhs, rhs)
    if m is None:
        return []
    return [(op, m) for op in BCAST_OPS]


# -- cost ----------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class PrimitiveInstance:
    """One micro-DAG edge: a kind applied to concrete input/output shapes."""

    kind: PrimitiveKind
    inputs: tuple[Shape, ...]
    output: Shape

    def __post_init__(self) -> None:
        got = output_shape(self.kind, self.inputs)
        if got != self.output:
            raise NotApplicable(f"{mnemonic(self.kind)}: stored output {self.output}, computed {got}")


def cost(inst: PrimitiveInstance, a: Assignment) -> tuple[int, int]:
    """(flops, params) under the fixed convention: one multiply-accumulate is
    one FLOP; element-wise/fold/broadcast cost one FLOP per output element,
    softmax three; pure rearrangements are free."""
    kind = inst.kind
    if isinstance(kind, (Group, Shift, Unfold)):
        return (0, 0)
    if isinstance(kind, FullyConnected):
        ch_in = evaluate(inst.inputs[0].channel_size(), a)
        out = evaluate(kind.out, a)
        params = out * ch_in
        return (params * evaluate(inst.inputs[0].spatial_size(), a), params)
    n = shape_numel(inst.output, a)
    if isinstance(kind, Softmax):
        return (3 * n, 0)
    return (n, 0)  # element-wise, fold, broadcast


# -- canonical mnemonics ---------------------------------------------------------

_MNEMONIC_RE = re.compile(r"^(\w+)\((.*)\)$")


def mnemonic(kind: PrimitiveKind) -> str:
    if isinstance(kind, Group):
        return f"group({kind.factor})" if kind.dim == 0 else f"group(dim={kind.dim},{kind.factor})"
    if isinstance(kind, Shift):
        return f"shift({kind.axis},{kind.offset:+d})"
    if isinstance(kind, Unfold):
        return f"unfold({kind.axis})" if kind.insert is None else f"unfold({kind.axis},at={kind.insert})"
    if isinstance(kind, FullyConnected):
        return f"fc({kind.out.render()})"
    if isinstance(kind, ElementWise):
        return f"ew({kind.fn})"
    if isinstance(kind, Fold):
        return f"fold(dim={kind.dim},{kind.mode})"
    if isinstance(kind, Softmax):
        return f"softmax({kind.start}..{kind.end})"
    if isinstance(kind, Broadcast):
        return f"bcast({kind.op})"
    raise NotApplicable(f"unknown primitive kind {kind!r}")


def parse_mnemonic(text: str) -> PrimitiveKind:
    m = _MNEMONIC_RE.match(text.strip())
    if not m:
        raise NotApplicable(f"malformed primitive {text!r}")
    name, args = m.group(1), [t.strip() for t in m.group(2).split(",") if t.strip()]
    try:
        if name == "group":
            if args[0].startswith("dim="):
                return Group(int(args[0][4:]), args[1])
            return Group(0, args[0])
        if name == "shift":
            return Shift(args[0], int(args[1]))
        if name == "unfold":
            at = int(args[1][3:]) if len(args) > 1 else None
            return Unfold(args[0], at)
        if name == "fc":
            return FullyConnected(Dimension.parse(args[0]))
        if name == "ew":
            return ElementWise(args[0])
        if name == "fold":
            return Fold(int(args[0][4:]), args[1])
        if name == "softmax":
            lo, hi = args[0].split("..")
            return Softmax(int(lo), int(hi))
        if name == "bcast":
            return Broadcast(args[0])
    except (IndexError, ValueError) as e:
        raise NotApplicable(f"malformed primitive {text!r}: {e}") from e
    raise NotApplicable(f"unknown primitive {name!r}")
