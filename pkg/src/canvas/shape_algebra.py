"""Symbolic algebra of tensor dimensions.

A dimension is a fully reduced fraction whose numerator and denominator are
multisets of atoms: named size constants (C, G, H, W, KH, KW), positive
integer literals, and dynamic variables ``x<k>`` introduced by
fully-connected primitives.  Shapes keep channel and spatial dimensions in
separate ordered regions.

Every value constructed here obeys the structural rules that make dynamic
variables solvable later:

* no dynamic variable ever appears in a denominator,
* a numerator carries at most one dynamic variable,
* spatial dimensions are variable-free,
* a whole shape carries at most one dynamic variable.

Symbolic constants are treated as mutually coprime primes.  The only extra
divisibility facts admitted are "G divides C" and "G divides any
group-divided variable dimension"; both surface as explicit ``.../G`` atoms
rather than as side conditions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache, reduce as _reduce
from itertools import product as _cartesian

CONSTANT_NAMES = ("C", "G", "H", "W", "KH", "KW")

# Atom encoding: (tag, key).  Tags sort dynamic variables before integer
# literals before named constants, which fixes the canonical rendering order
# (e.g. "x2*KW", "4*C").
_TAG_VAR = 0
_TAG_LIT = 1
_TAG_CONST = 2

Atom = tuple[int, object]


class DimensionError(ValueError):
    """A dimension operation would violate the structural rules."""


class DynVarInDenominator(DimensionError):
    """Reduction would leave a dynamic variable in a denominator."""


class IllegalSubstitution(DimensionError):
    """A substitution result would violate the structural rules."""


class NonIntegral(DimensionError):
    """A dimension does not evaluate to an integer under an assignment."""


def var_atom(var_id: int) -> Atom:
    return (_TAG_VAR, var_id)


def lit_atom(value: int) -> Atom:
    if value < 1:
        raise DimensionError(f"integer atoms must be >= 1, got {value}")
    return (_TAG_LIT, value)


def const_atom(name: str) -> Atom:
    if name not in CONSTANT_NAMES:
        raise DimensionError(f"unknown size constant {name!r}")
    return (_TAG_CONST, name)


def atom_is_var(a: Atom) -> bool:
    return a[0] == _TAG_VAR


def render_atom(a: Atom) -> str:
    tag, key = a
    if tag == _TAG_VAR:
        return f"x{key}"
    return str(key)


def _parse_atom(tok: str) -> Atom:
    tok = tok.strip()
    if tok.startswith("x") and tok[1:].isdigit():
        return var_atom(int(tok[1:]))
    if tok.isdigit():
        return lit_atom(int(tok))
    return const_atom(tok)


def _normalize(num: list[Atom], den: list[Atom]) -> tuple[tuple[Atom, ...], tuple[Atom, ...]]:
    """Cancel shared atoms, merge and reduce integer literals, sort."""
    num_lit = math.prod(k for t, k in num if t == _TAG_LIT)
    den_lit = math.prod(k for t, k in den if t == _TAG_LIT)
    g = math.gcd(num_lit, den_lit)
    num_lit //= g
    den_lit //= g

    num_sym = sorted(a for a in num if a[0] != _TAG_LIT)
    den_sym = sorted(a for a in den if a[0] != _TAG_LIT)
    # Multiset cancellation of symbolic atoms.
    out_num: list[Atom] = []
    out_den: list[Atom] = []
    i = j = 0
    while i < len(num_sym) and j < len(den_sym):
        if num_sym[i] == den_sym[j]:
            i += 1
            j += 1
        elif num_sym[i] < den_sym[j]:
            out_num.append(num_sym[i])
            i += 1
        else:
            out_den.append(den_sym[j])
            j += 1
    out_num.extend(num_sym[i:])
    out_den.extend(den_sym[j:])

    if num_lit != 1:
        out_num.append(lit_atom(num_lit))
    if den_lit != 1:
        out_den.append(lit_atom(den_lit))
    return tuple(sorted(out_num)), tuple(sorted(out_den))


@dataclass(frozen=True, slots=True)
class Dimension:
    """A reduced fraction of atoms; construct via :func:`make_dim` or `parse`."""

    num: tuple[Atom, ...]
    den: tuple[Atom, ...]
    _hash: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self) -> None:
        if any(atom_is_var(a) for a in self.den):
            raise DynVarInDenominator(f"dynamic variable in denominator: {self}")
        if sum(1 for a in self.num if atom_is_var(a)) > 1:
            raise DimensionError(f"more than one dynamic variable in numerator: {self}")
        object.__setattr__(self, "_hash", hash((self.num, self.den)))

    # -- queries ------------------------------------------------------------

    def dyn_var(self) -> int | None:
        """Id of the dynamic variable in this dimension, if any."""
        for tag, key in self.num:
            if tag == _TAG_VAR:
                return key  # type: ignore[return-value]
        return None

    def is_one(self) -> bool:
        return not self.num and not self.den

    def atoms(self) -> tuple[Atom, ...]:
        return self.num + self.den

    # -- rendering ----------------------------------------------------------

    def render(self) -> str:
        out = "*".join(render_atom(a) for a in self.num) if self.num else "1"
        for a in self.den:
            out += "/" + render_atom(a)
        return out

    def __str__(self) -> str:
        return self.render()

    def __repr__(self) -> str:
        return f"Dimension({self.render()!r})"

    @staticmethod
    def parse(text: str) -> "Dimension":
        parts = text.strip().split("/")
        num_part = parts[0].strip()
        num = [] if num_part == "1" else [_parse_atom(t) for t in num_part.split("*")]
        den = [_parse_atom(t) for t in parts[1:]]
        return make_dim(num, den)


def make_dim(num: list[Atom] | tuple[Atom, ...] = (), den: list[Atom] | tuple[Atom, ...] = ()) -> Dimension:
    n, d = _normalize(list(num), list(den))
    return Dimension(n, d)


ONE = make_dim()
D_C = make_dim([const_atom("C")])
D_G = make_dim([const_atom("G")])
D_H = make_dim([const_atom("H")])
D_W = make_dim([const_atom("W")])
D_KH = make_dim([const_atom("KH")])
D_KW = make_dim([const_atom("KW")])


def var_dim(var_id: int) -> Dimension:
    return make_dim([var_atom(var_id)])


def multiply(a: Dimension, b: Dimension) -> Dimension:
    return make_dim(a.num + b.num, a.den + b.den)


def divide(a: Dimension, b: Dimension) -> Dimension:
    """a / b; raises :class:`DynVarInDenominator` when the result is illegal."""
    return make_dim(a.num + b.den, a.den + b.num)


def substitute(d: Dimension, var_id: int, expr: Dimension) -> Dimension:
    """Replace ``x<var_id>`` with ``expr`` everywhere in ``d`` and re-reduce."""
    a = var_atom(var_id)
    if a not in d.num:
        return d
    remaining = list(d.num)
    remaining.remove(a)
    try:
        return make_dim(remaining + list(expr.num), list(d.den) + list(expr.den))
    except DimensionError as e:
        raise IllegalSubstitution(str(e)) from e


def evaluate(d: Dimension, a: "Assignment") -> int:
    """Exact integer value of ``d``; raises :class:`NonIntegral` otherwise."""
    num = 1
    for tag, key in d.num:
        num *= a.atom_value(tag, key)
    den = 1
    for tag, key in d.den:
        den *= a.atom_value(tag, key)
    q, r = divmod(num, den)
    if r != 0 or q < 1:
        raise NonIntegral(f"{d} = {num}/{den} under {a}")
    return q


def _divisors(n: int) -> list[int]:
    out = [d for d in range(1, int(math.isqrt(n)) + 1) if n % d == 0]
    out += [n // d for d in reversed(out) if d * d != n]
    return out


@lru_cache(maxsize=1 << 14)
def _factors_cached(d: Dimension) -> tuple[Dimension, ...]:
    choices: list[list[Dimension]] = []
    for a in d.num:
        tag, key = a
        if tag == _TAG_LIT:
            choices.append([make_dim([lit_atom(v)]) for v in _divisors(key)])  # type: ignore[arg-type]
        elif tag == _TAG_CONST and key == "C":
            choices.append([ONE, D_G, divide(D_C, D_G), D_C])
        else:
            choices.append([ONE, make_dim([a])])
    out: set[Dimension] = set()
    for combo in _cartesian(*choices) if choices else [()]:
        out.add(_reduce(multiply, combo, ONE))
    return tuple(sorted(out, key=Dimension.render))


def enumerate_factors(d: Dimension) -> set[Dimension]:
    """All symbolic divisors of a denominator-free dimension.

    Constants are treated as primes, except C, which also admits G and C/G
    as factors (the global group count divides every original channel
    count).  Integer literals are factored numerically.
    """
    if d.den:
        raise DimensionError(f"enumerate_factors requires an integral product, got {d}")
    return set(_factors_cached(d))


# -- shapes -------------------------------------------------------------------


_VAR_RE = re.compile(r"x\d+")


@dataclass(frozen=True, slots=True)
class Shape:
    """Ordered channel dimensions plus ordered spatial dimensions."""

    channels: tuple[Dimension, ...]
    spatials: tuple[Dimension, ...]
    _hash: int = field(init=False, repr=False, compare=False, default=0)
    _sig: str | None = field(init=False, repr=False, compare=False, default=None)
    _var: int = field(init=False, repr=False, compare=False, default=-2)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_hash", hash((self.channels, self.spatials)))

    def sig(self) -> str:
        """Rendering with anonymized variables; canonical up to renaming."""
        s = self._sig
        if s is None:
            s = _VAR_RE.sub("x", self.render())
            object.__setattr__(self, "_sig", s)
        return s

    def var1(self) -> int | None:
        """Id of the single variable of the shape, None when variable-free."""
        v = self._var
        if v == -2:
            vs = self.dyn_vars()
            v = vs[0] if vs else -1
            object.__setattr__(self, "_var", v)
        return None if v == -1 else v

    def dims(self) -> tuple[Dimension, ...]:
        return self.channels + self.spatials

    def dyn_vars(self) -> tuple[int, ...]:
        return tuple(v for d in self.dims() if (v := d.dyn_var()) is not None)

    def channel_size(self) -> Dimension:
        return _reduce(multiply, self.channels, ONE)

    def spatial_size(self) -> Dimension:
        return _reduce(multiply, self.spatials, ONE)

    def render(self) -> str:
        ch = ", ".join(d.render() for d in self.channels)
        sp = ", ".join(d.render() for d in self.spatials)
        return f"[{ch}; {sp}]" if ch and sp else f"[{ch};{(' ' + sp) if sp else ''}]"

    def __str__(self) -> str:
        return self.render()

    @staticmethod
    def parse(text: str) -> "Shape":
        text = text.strip()
        if not (text.startswith("[") and text.endswith("]")):
            raise DimensionError(f"malformed shape {text!r}")
        ch_part, _, sp_part = text[1:-1].partition(";")
        chans = tuple(Dimension.parse(t) for t in ch_part.split(",") if t.strip())
        spats = tuple(Dimension.parse(t) for t in sp_part.split(",") if t.strip())
        return intern_shape(Shape(chans, spats))


_SHAPE_INTERN: dict["Shape", "Shape"] = {}


def intern_shape(s: Shape) -> Shape:
    """Canonical instance per shape value; identity fast-paths dict probes."""
    return _SHAPE_INTERN.setdefault(s, s)


CHW = intern_shape(Shape((D_C,), (D_H, D_W)))


def validate_theorem(s: Shape) -> list[str]:
    """Empty list when legal; otherwise one entry per violated rule."""
    violations = []
    if any(d.dyn_var() is not None for d in s.spatials):
        violations.append("dynvar in spatial")
    # Denominator and per-numerator rules are enforced by Dimension itself,
    # but re-check here so hand-built values cannot bypass them.
    for d in s.dims():
        if any(atom_is_var(a) for a in d.den):
            violations.append("dynvar in denominator")
        if sum(1 for a in d.num if atom_is_var(a)) > 1:
            violations.append("multiple dynvars in one numerator")
    if len(s.dyn_vars()) > 1:
        violations.append("multiple dynvars")
    return violations


def substitute_shape(s: Shape, var_id: int, expr: Dimension) -> Shape:
    out = intern_shape(
        Shape(
            tuple(substitute(d, var_id, expr) for d in s.channels),
            tuple(substitute(d, var_id, expr) for d in s.spatials),
        )
    )
    if validate_theorem(out):
        raise IllegalSubstitution(f"substituting x{var_id}:={expr} breaks {s}")
    return out


# -- concrete values ----------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    """Concrete positive-integer values for constants and dynamic variables."""

    constants: dict[str, int] = field(default_factory=dict)
    dynvars: dict[int, int] = field(default_factory=dict)

    def atom_value(self, tag: int, key: object) -> int:
        if tag == _TAG_LIT:
            return key  # type: ignore[return-value]
        if tag == _TAG_CONST:
            try:
                return self.constants[key]  # type: ignore[index]
            except KeyError:
                raise NonIntegral(f"constant {key} unbound") from None
        try:
            return self.dynvars[key]  # type: ignore[index]
        except KeyError:
            raise NonIntegral(f"variable x{key} unbound") from None

    def __str__(self) -> str:
        cs = ", ".join(f"{k}={v}" for k, v in sorted(self.constants.items()))
        xs = ", ".join(f"x{k}={v}" for k, v in sorted(self.dynvars.items()))
        return "{" + cs + ("; " + xs if xs else "") + "}"


def shape_numel(s: Shape, a: Assignment) -> int:
    return math.prod(evaluate(d, a) for d in s.dims())


# Cached hashes: these values are compared and used as dict keys in the
# sampler's hot path far more often than they are created.
Dimension.__hash__ = lambda self: self._hash  # type: ignore[method-assign]
Shape.__hash__ = lambda self: self._hash  # type: ignore[method-assign]
