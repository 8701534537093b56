"""Dynamic-variable solving at blend points by shape matching.

When two branches merge through a broadcast, the left tensor's total core
size must divide the right tensor's.  We strip the maximal structurally
equal prefix and suffix (never across the channel/spatial boundary), reduce
the size ratio of the remaining cores, and either accept it outright, defer
an ``x must be a multiple of q`` constraint to the analytical solver, or
enumerate the factor substitutions that make the ratio integral.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .shape_algebra import (
    Atom,
    Dimension,
    Shape,
    _normalize,
    atom_is_var,
    const_atom,
    enumerate_factors,
)

_G = const_atom("G")
_C = const_atom("C")

# Region boundary sentinel used during prefix/suffix stripping; it must match
# like a dimension so cores never span the channel/spatial border.
_BOUNDARY = object()


@dataclass(frozen=True)
class BroadcastMatch:
    """Decomposition of a legal (or substitutable) broadcast pair."""

    common_prefix: tuple[Dimension, ...]
    common_suffix: tuple[Dimension, ...]
    lhs_core: tuple[Dimension, ...]
    rhs_core: tuple[Dimension, ...]
    region: str  # "channel" | "spatial" | "empty"
    lhs_span: tuple[int, int]  # core index range within that region, per side
    rhs_span: tuple[int, int]
    ratio: Dimension | None  # size(rhs core) / size(lhs core), when expressible
    substitutions: tuple[tuple[int, Dimension], ...]

    @property
    def needs_substitution(self) -> bool:
        return self.ratio is None

    def audit(self) -> str:
        pre = ", ".join(d.render() for d in self.common_prefix)
        suf = ", ".join(d.render() for d in self.common_suffix)
        m = self.ratio.render() if self.ratio is not None else "?"
        subs = "{" + ", ".join(f"x{v}:={e.render()}" for v, e in self.substitutions) + "}"
        return f"prefix=[{pre}] suffix=[{suf}] M={m} subs={subs}"


def _ratio_admissible(num: tuple[Atom, ...], den: tuple[Atom, ...]) -> bool:
    """Whether num/den is an integer under the admitted divisibility facts."""
    if not den:
        return True
    if any(atom_is_var(a) for a in num):
        # The variable absorbs the residue: it is later pinned to a multiple
        # of the denominator by the analytical solver.
        return True
    if all(a == _G for a in den):
        return sum(1 for a in num if a == _C) >= len(den)
    return False


@lru_cache(maxsize=1 << 16)
def match_broadcast(lhs: Shape, rhs: Shape) -> BroadcastMatch | None:
    """Match ``lhs`` broadcasting onto ``rhs``; None when no legal matching exists."""
    a: list[object] = [*lhs.channels, _BOUNDARY, *lhs.spatials]
    b: list[object] = [*rhs.channels, _BOUNDARY, *rhs.spatials]
    p = 0
    while p < min(len(a), len(b)) and a[p] == b[p]:
        p += 1
    s = 0
    while s < min(len(a), len(b)) - p and a[len(a) - 1 - s] == b[len(b) - 1 - s]:
        s += 1
    lhs_core = a[p : len(a) - s]
    rhs_core = b[p : len(b) - s]
    if _BOUNDARY in lhs_core or _BOUNDARY in rhs_core:
        return None  # cores would straddle the channel/spatial border

    if lhs_core or rhs_core:
        nch = len(lhs.channels) if lhs_core else len(rhs.channels)
        region = "channel" if p < nch else "spatial"
    else:
        region = "empty"

    def span(core: list[object], shape: Shape) -> tuple[int, int]:
        start = p if region == "channel" else p - len(shape.channels) - 1
        return (start, start + len(core))

    prefix = tuple(d for d in a[:p] if d is not _BOUNDARY)
    suffix = tuple(d for d in a[len(a) - s :] if d is not _BOUNDARY)

    # Raw size ratio size(rhs_core)/size(lhs_core); a variable may sit on
    # either side here, so reduce plain atom multisets before interpreting.
    num_atoms: list[Atom] = []
    den_atoms: list[Atom] = []
    for d in rhs_core:  # type: ignore[assignment]
        num_atoms += d.num
        den_atoms += d.den
    for d in lhs_core:  # type: ignore[assignment]
        num_atoms += d.den
        den_atoms += d.num
    num, den = _normalize(num_atoms, den_atoms)

    lhs_var = next((x for x in den if atom_is_var(x)), None)
    if lhs_var is None:
        if not _ratio_admissible(num, den):
            return None
        return BroadcastMatch(
            prefix, suffix, tuple(lhs_core), tuple(rhs_core), region,
            span(lhs_core, lhs), span(rhs_core, rhs),
            ratio=Dimension(num, den), substitutions=(),
        )

    # The LHS variable must be substituted now: it ranges over the factors of
    # the (possibly variable-carrying) numerator that leave the ratio integral.
    residual = [x for x in den if x != lhs_var]
    subs: list[tuple[int, Dimension]] = []
    from .shape_algebra import _factors_cached

    for f in _factors_cached(Dimension(num, ())):
        m_num, m_den = _normalize(list(num) + list(f.den), residual + list(f.num))
        if any(atom_is_var(x) for x in m_den):
            continue
        if _ratio_admissible(m_num, m_den):
            subs.append((lhs_var[1], f))  # type: ignore[arg-type]
    if not subs:
        return None
    subs.sort(key=lambda t: t[1].render())
    return BroadcastMatch(
        prefix, suffix, tuple(lhs_core), tuple(rhs_core), region,
        span(lhs_core, lhs), span(rhs_core, rhs),
        ratio=None, substitutions=tuple(subs),
    )
