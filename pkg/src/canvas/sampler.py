"""Stochastic micro-DAG growth.

Each step enumerates every legal primitive application on the current graph
and draws one.  Probability mass is balanced per primitive *type*: a type
with ten concrete candidates and a type with a single one receive the same
total mass, so unary families are not drowned out by the O(n^2) blend pairs.

Topology is kept finishable by construction.  A candidate that changes the
leaf count by ``delta`` is admitted only while ``width + delta <= remaining``
(each later step can merge at most one branch) and while the leaf count
stays under the configured width cap; when merging is forced, only leaf-pair
blends survive, and the very last step is restricted to candidates that
produce the kernel's output contract ``[C; H, W]`` exactly.  Near the end,
candidates whose successor state provably has no legal continuation are
zeroed as well -- the same dead-end screening, looking moves ahead.  The
screen is evaluated lazily: presence of a viable candidate per type is
established by an early-exit scan, and the draw within the chosen type
rejects non-viable picks, which reproduces the screened distribution exactly
while checking only a handful of candidates per step.  Remaining infeasible
states abort the attempt and a fresh one starts; aborts are never
backtracked.
"""

from __future__ import annotations

import random
import re
import threading
from dataclasses import dataclass, field

from .micro_dag import (
    DEFAULT_PRUNE_RULES,
    KernelTemplate,
    MicroDag,
    check_candidate,
    finalize,
    grow_kind,
    iso_hash,
    substitute_dag,
)
from .primitives import (
    BCAST_OPS,
    Broadcast,
    FullyConnected,
    PrimitiveKind,
    TYPE_NAMES,
    applicable_unary,
    output_shape,
)
from .shape_algebra import (
    CHW,
    D_C,
    DimensionError,
    IllegalSubstitution,
    ONE,
    Shape,
    intern_shape,
    substitute,
    var_dim,
)
from .shape_solver import match_broadcast

_VAR_RE = re.compile(r"x\d+")


class Exhausted(RuntimeError):
    """No legal, novel kernel found within the configured attempt budget."""


@dataclass(frozen=True)
class SamplerConfig:
    nodes: int = 10
    seed: int | None = None
    type_weights: dict[str, float] = field(default_factory=dict)  # missing -> 1.0
    max_attempts: int = 20_000
    max_width: int = 3  # leaf-count cap, the topology heuristic restricting W(g)
    prune_rules: frozenset[str] = DEFAULT_PRUNE_RULES

    def __post_init__(self) -> None:
        if self.nodes < 2:
            raise ValueError("node budget must be at least 2")
        if self.max_width < 2:
            raise ValueError("max_width must allow at least one blend pair")
        weights = {t: self.type_weights.get(t, 1.0) for t in TYPE_NAMES}
        if any(w < 0 for w in weights.values()):
            raise ValueError("type weights must be nonnegative")
        if not any(w > 0 for w in weights.values()):
            raise ValueError("type weights must not all be zero")
        object.__setattr__(self, "type_weights", weights)


class DedupStore:
    """Concurrent set of kernel hashes with atomic insert-if-absent."""

    def __init__(self) -> None:
        self._seen: set[int] = set()
        self._lock = threading.Lock()

    def add(self, h: int) -> bool:
        with self._lock:
            if h in self._seen:
                return False
            self._seen.add(h)
            return True

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, h: int) -> bool:
        return h in self._seen


@dataclass
class SampleCounts:
    sampled: int = 0
    pruned: int = 0
    deduped: int = 0
    discarded: int = 0
    accepted: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "sampled": self.sampled,
            "pruned": self.pruned,
            "deduped": self.deduped,
            "discarded": self.discarded,
            "accepted": self.accepted,
        }


_FRESH = 0  # placeholder variable id inside shape-keyed candidate caches


@dataclass
class _Step:
    """Per-step context shared by candidate assembly and screening."""

    g: MicroDag
    remaining: int
    leaf_ids: tuple[int, ...]
    leaves: set[int]
    w: int
    has_interior_chw: bool
    interior_shapes: tuple[Shape, ...]
    final: bool
    crit: dict[int, bool]  # delta -> successor state needs screening


class Sampler:
    def __init__(self, cfg: SamplerConfig, store: DedupStore | None = None, worker_id: int = 0):
        self.cfg = cfg
        self.store = store if store is not None else DedupStore()
        seed = cfg.seed if cfg.seed is not None else random.SystemRandom().randrange(1 << 48)
        self.seed = seed
        self.rng = random.Random(f"canvas:{seed}:{worker_id}")
        self.counts = SampleCounts()
        self.step_observer = None  # callable(type_name, unconstrained: bool)
        # Caches are keyed by variable-renaming-canonical signatures where a
        # result cannot depend on concrete variable ids, so hits survive
        # across attempts that number their variables differently.
        self._unary_cache: dict[str, list[PrimitiveKind]] = {}
        self._final_cache: dict[str, list[PrimitiveKind]] = {}
        self._pair_cache: dict[tuple[str, str, bool], bool] = {}
        self._succ_cache: dict[tuple[Shape, PrimitiveKind], Shape] = {}
        self._merge_cache: dict[tuple, bool] = {}
        self._match_cache: dict[tuple, object] = {}
        self._menu_cache: dict[tuple, dict[str, tuple]] = {}
        self._succset_cache: dict[str, tuple[Shape, ...]] = {}
        self._subst_cache: dict[tuple, Shape | None] = {}

    # -- shape-level caches ---------------------------------------------------

    @staticmethod
    def _sig(s: Shape) -> str:
        return s.sig()

    @staticmethod
    def _var_of(s: Shape) -> int | None:
        return s.var1()

    def _unary(self, s: Shape) -> list[PrimitiveKind]:
        key = s.sig()
        got = self._unary_cache.get(key)
        if got is None:
            got = applicable_unary(s, fresh_var=_FRESH)
            self._unary_cache[key] = got
        return got

    @staticmethod
    def _prev_key(prev: PrimitiveKind | None):
        # Only these producers influence the redundancy screen of the next
        # unary primitive, so menus can be shared across all other contexts.
        if prev is None:
            return None
        t = prev.type_name
        if t == "ew":
            return ("ew", prev.fn)
        if t == "softmax":
            return ("softmax", prev.start, prev.end)
        return None

    def _menu(self, s: Shape, prev: PrimitiveKind | None) -> dict[str, tuple[PrimitiveKind, ...]]:
        """Prune-screened unary candidates on ``s``, bucketed per type."""
        pk = self._prev_key(prev)
        key = (s.sig(), pk)
        got = self._menu_cache.get(key)
        if got is None:
            buckets: dict[str, list[PrimitiveKind]] = {}
            dims = s.dims()
            for kind in self._unary(s):
                t = kind.type_name
                if pk is not None:
                    if t == "ew" and pk == ("ew", kind.fn):
                        continue
                    if t == "softmax" and pk == ("softmax", kind.start, kind.end):
                        continue
                if t == "fold" and dims[kind.dim] == ONE:
                    continue
                buckets.setdefault(t, []).append(kind)
            got = {t: tuple(ks) for t, ks in buckets.items()}
            self._menu_cache[key] = got
        return got

    def _final_unary(self, s: Shape) -> list[PrimitiveKind]:
        """Kinds mapping ``s`` to the output contract [C; H, W] exactly."""
        key = s.sig()
        got = self._final_cache.get(key)
        if got is None:
            got = [k for k in self._unary(s) if not isinstance(k, FullyConnected) and output_shape(k, (s,)) == CHW]
            if s.spatials == CHW.spatials:
                got.append(FullyConnected(D_C))
            self._final_cache[key] = got
        return got

    def _successor(self, shape: Shape, kind: PrimitiveKind) -> Shape:
        key = (shape, kind)
        got = self._succ_cache.get(key)
        if got is None:
            got = output_shape(kind, (shape,))
            self._succ_cache[key] = got
        return got

    def _pair_legal(self, a: Shape, b: Shape) -> bool:
        va, vb = a.var1(), b.var1()
        key = (a.sig(), b.sig(), va is not None and va == vb)
        got = self._pair_cache.get(key)
        if got is None:
            got = match_broadcast(a, b) is not None
            self._pair_cache[key] = got
        return got

    @staticmethod
    def _remap_var(d, old: int, new: int):
        from .shape_algebra import Dimension

        num = tuple(sorted((0, new) if a == (0, old) else a for a in d.num))
        return Dimension(num, d.den)

    _RHS_VAR = -2  # placeholder id for the right side's variable in templates

    def _subs_of(self, a: Shape, b: Shape):
        """Substitution set for ``a`` broadcasting onto ``b``, canonically
        cached up to variable renaming.

        Returns None (no match), () (legal without substitution), or a list
        of (var_id_of_a, expression) pairs rebased to the actual variables.
        """
        va, vb = a.var1(), b.var1()
        key = (a.sig(), b.sig(), va is not None and va == vb)
        got = self._match_cache.get(key)
        if got is None:
            m = match_broadcast(a, b)
            if m is None:
                got = "none"
            elif not m.needs_substitution:
                got = "plain"
            else:
                tpl = []
                for _, expr in m.substitutions:
                    ev = expr.dyn_var()
                    tpl.append(expr if ev is None else self._remap_var(expr, ev, self._RHS_VAR))
                got = tuple(tpl)
            self._match_cache[key] = got
        if got == "none":
            return None
        if got == "plain":
            return ()
        out = []
        for expr in got:
            if expr.dyn_var() == self._RHS_VAR:
                expr = self._remap_var(expr, self._RHS_VAR, vb)  # type: ignore[arg-type]
            out.append((va, expr))
        return out

    def _subst(self, s: Shape, var: int, expr) -> Shape | None:
        """Cached, validation-light substitution for viability screening.
        Screening shapes are legal by construction; structural violations
        still surface as construction errors -> None."""
        if s.var1() != var:
            return s
        key = (s, var, expr)
        got = self._subst_cache.get(key, -1)
        if got == -1:
            try:
                got = intern_shape(Shape(tuple(substitute(d, var, expr) for d in s.channels), s.spatials))
            except DimensionError:
                got = None
            self._subst_cache[key] = got
        return got

    def _subst_state(self, shapes: tuple[Shape, ...], var: int, expr) -> tuple[Shape, ...] | None:
        out = []
        for s in shapes:
            s2 = self._subst(s, var, expr)
            if s2 is None:
                return None
            out.append(s2)
        return tuple(out)

    # -- viability screening ---------------------------------------------------

    def _merge_key(self, shapes: tuple[Shape, ...]) -> tuple:
        # Key collisions can only identify states that differ by a
        # signature-preserving variable bijection, which merge identically.
        pairs = []
        for s in shapes:
            v = s.var1()
            pairs.append((s.sig(), -1 if v is None else v))
        pairs.sort()
        groups: dict[int, int] = {}
        return tuple(
            (sig, -1 if v < 0 else groups.setdefault(v, len(groups))) for sig, v in pairs
        )

    def _succ_finishable(self, leaf_shapes: tuple[Shape, ...], has_interior_chw: bool) -> bool:
        """Whether a state entering the last step can still finish."""
        if len(leaf_shapes) == 1:
            s = leaf_shapes[0]
            if self._final_unary(s):
                return True
            return has_interior_chw and self._pair_legal(s, CHW)
        if len(leaf_shapes) == 2:
            a, b = leaf_shapes
            return (b == CHW and self._pair_legal(a, b)) or (a == CHW and self._pair_legal(b, a))
        return False

    def _mergeable(self, leaf_shapes: tuple[Shape, ...]) -> bool:
        """Whether a forced-merge state (one blend per remaining step) can
        reach the output contract.

        A substitution produced by a blend never rewrites that blend's own
        right-hand shape (the variable lives in the unmatched left core), so
        the two-leaf case is exact; deeper states recurse through each
        substituted view of the remaining leaves.
        """
        key = self._merge_key(leaf_shapes)
        got = self._merge_cache.get(key)
        if got is not None:
            return got
        shapes = leaf_shapes
        if len(shapes) <= 1:
            ok = not shapes or shapes[0] == CHW
        elif len(shapes) == 2:
            a, b = shapes
            ok = (b == CHW and self._pair_legal(a, b)) or (a == CHW and self._pair_legal(b, a))
        else:
            ok = False
            deferred = []
            for li in range(len(shapes)):
                if ok:
                    break
                for ri in range(len(shapes)):
                    if li == ri:
                        continue
                    subs = self._subs_of(shapes[li], shapes[ri])
                    if subs is None:
                        continue
                    rest = shapes[:li] + shapes[li + 1 :]
                    if subs == ():
                        if self._mergeable(rest):
                            ok = True
                            break
                    else:
                        deferred.append((rest, subs))  # substitution branches last
            if not ok:
                for rest, subs in deferred:
                    for var, expr in subs:
                        rewritten = self._subst_state(rest, var, expr)
                        if rewritten is not None and self._mergeable(rewritten):
                            ok = True
                            break
                    if ok:
                        break
        self._merge_cache[key] = ok
        return ok

    def _distinct_successors(self, s: Shape) -> tuple[Shape, ...]:
        key = s.sig()
        got = self._succset_cache.get(key)
        if got is None:
            outs = {self._successor(s, k) for ks in self._menu(s, None).values() for k in ks}
            got = tuple(outs)
            self._succset_cache[key] = got
        return got

    def _pair_finishable(self, a: Shape, b: Shape) -> bool:
        return (b == CHW and self._pair_legal(a, b)) or (a == CHW and self._pair_legal(b, a))

    def _viable2(self, a: Shape, b: Shape, has_interior_chw: bool, interiors: tuple[Shape, ...]) -> bool:
        """Exact two-moves-left check for a two-leaf state.

        Tries, in increasing cost: finishing blends after a stall move, a
        unary on either leaf followed by the final blend, blending the two
        leaves and finishing on the survivor, and blending a leaf into an
        interior tensor first.
        """
        hic2 = has_interior_chw or a == CHW or b == CHW
        for l, r in ((a, b), (b, a)):
            if self._subs_of(l, r) is not None and self._succ_finishable((r,), hic2):
                return True
        for s, other in ((a, b), (b, a)):
            for out in self._distinct_successors(s):
                if self._pair_finishable(out, other):
                    return True
        if self._pair_finishable(a, b):
            # A stall move keeps both leaf shapes: blending an interior
            # tensor onto a leaf replaces it with an equal-shaped node.
            for x in interiors:
                if self._pair_legal(x, a) or self._pair_legal(x, b):
                    return True
        for x in interiors:
            for s, other in ((a, b), (b, a)):
                if self._pair_legal(s, x) and self._pair_finishable(x, other):
                    return True
        return False

    def _viable3(self, shapes: tuple[Shape, ...], has_interior_chw: bool, interiors: tuple[Shape, ...]) -> bool:
        """Exact three-moves-left check for a three-leaf state, composed from
        the forced-merge and two-leaf screens."""
        a, b, c = shapes
        # First move merges two leaves (directly or into an interior copy),
        # leaving a two-leaf state with two moves.
        for li in range(3):
            for ri in range(3):
                if li == ri:
                    continue
                subs = self._subs_of(shapes[li], shapes[ri])
                if subs is None:
                    continue
                rest = tuple(shapes[k] for k in range(3) if k != li)
                hic2 = has_interior_chw or shapes[li] == CHW or shapes[ri] == CHW
                ints2 = interiors + (shapes[li], shapes[ri])
                if not subs:
                    if self._viable2(rest[0], rest[1], hic2, ints2):
                        return True
                    continue
                for var, expr in subs:
                    r2 = self._subst_state(rest, var, expr)
                    i2 = self._subst_state(ints2, var, expr)
                    if r2 is not None and i2 is not None and self._viable2(r2[0], r2[1], hic2, i2):
                        return True
        # First move is a unary on one leaf: the result enters forced
        # merging.  Distinct successor shapes only: whole families
        # (element-wise, shift, softmax) map a shape to itself.
        for idx in range(3):
            s = shapes[idx]
            others = tuple(shapes[k] for k in range(3) if k != idx)
            for out in self._distinct_successors(s):
                if self._mergeable(others + (out,)):
                    return True
        # First move blends a leaf into an interior tensor (width unchanged).
        for idx in range(3):
            s = shapes[idx]
            others = tuple(shapes[k] for k in range(3) if k != idx)
            for x in interiors:
                if self._pair_legal(s, x) and self._mergeable(others + (x,)):
                    return True
        return False

    def _state_viable(
        self,
        leaf_shapes: tuple[Shape, ...],
        remaining: int,
        has_interior_chw: bool,
        interiors: tuple[Shape, ...] = (),
    ) -> bool:
        """Dead-end screen for the state a candidate would create."""
        w = len(leaf_shapes)
        if remaining == 1:
            return self._succ_finishable(leaf_shapes, has_interior_chw)
        if w - 1 == remaining and w <= 5:
            return self._mergeable(leaf_shapes)
        if remaining == 2 and w == 2:
            return self._viable2(leaf_shapes[0], leaf_shapes[1], has_interior_chw, interiors)
        if remaining == 3 and w == 3:
            return self._viable3(leaf_shapes, has_interior_chw, interiors)
        return True

    def _viable_substitutions(self, subs, leaf_shapes, rem1: int, has_interior_chw: bool, interiors=()) -> list:
        keep = []
        for var, expr in subs:
            nxt = self._subst_state(leaf_shapes, var, expr)
            if nxt is None:
                continue
            ints = self._subst_state(interiors, var, expr) if interiors else ()
            if ints is None:
                continue
            if self._state_viable(nxt, rem1, has_interior_chw, ints):
                keep.append((var, expr))
        return keep

    # -- candidate assembly -----------------------------------------------------

    def _step_ctx(self, g: MicroDag, remaining: int) -> _Step | None:
        leaf_ids = g.leaves()
        w = len(leaf_ids)
        if w - 1 > remaining:
            return None
        leaves = set(leaf_ids)
        rem1 = remaining - 1
        # Screen successor states on the last three steps, on entry into the
        # forced-merge regime, and on entry into three-leaf/three-step states.
        crit = {
            d: rem1 <= 2 or w + d - 1 == rem1 or (rem1 == 3 and w + d == 3)
            for d in (-1, 0, 1)
        }
        interior = tuple(g.nodes[i] for i in range(len(g.nodes)) if i not in leaves)
        has_interior_chw = CHW in interior
        return _Step(g, remaining, leaf_ids, leaves, w, has_interior_chw, interior, remaining == 1, crit)

    def _assemble_raw(self, ctx: _Step) -> tuple[dict[str, list], dict[str, int]]:
        """Per-type candidates after feasibility and redundancy screens;
        viability (dead-end) screening is applied lazily at selection.

        Unary types hold (node, kinds) segments so cached menus are shared
        without per-kind loops; "bcast" holds plain (i, j) pairs.
        """
        g, remaining, w = ctx.g, ctx.remaining, ctx.w
        nodes = g.nodes
        n = len(nodes)
        cands: dict[str, list] = {t: [] for t in TYPE_NAMES}
        counts: dict[str, int] = {t: 0 for t in TYPE_NAMES}

        producers: list[PrimitiveKind | None] = [None] * n
        for e in g.edges:
            producers[e.out] = e.inst.kind
        fast_rules = self.cfg.prune_rules == DEFAULT_PRUNE_RULES
        max_w = self.cfg.max_width

        for node in range(n):
            is_leaf = node in ctx.leaves
            delta = 0 if is_leaf else 1
            if w + delta > remaining or w + delta > max_w:
                continue
            shape = nodes[node]
            if not ctx.final and fast_rules:
                for t, kinds in self._menu(shape, producers[node]).items():
                    cands[t].append((node, kinds))
                    counts[t] += len(kinds)
                continue
            pool = self._final_unary(shape) if ctx.final else self._unary(shape)
            for kind in pool:
                if check_candidate(g, kind, (node,), self.cfg.prune_rules) is not None:
                    continue
                t = kind.type_name
                cands[t].append((node, (kind,)))
                counts[t] += 1

        bcast = cands["bcast"]
        for i in range(n):
            si = nodes[i]
            leaf_i = i in ctx.leaves
            for j in range(i + 1, n):
                delta = (0 if leaf_i else 1) + (0 if j in ctx.leaves else 1) - 1
                if w + delta > remaining or w + delta > max_w:
                    continue
                sj = nodes[j]
                if ctx.final:
                    if (sj == CHW and self._pair_legal(si, sj)) or (si == CHW and self._pair_legal(sj, si)):
                        bcast.append((i, j))
                elif self._pair_legal(si, sj) or self._pair_legal(sj, si):
                    bcast.append((i, j))
        counts["bcast"] = len(bcast)
        return cands, counts

    def _unary_viable(self, ctx: _Step, node: int, kind: PrimitiveKind) -> bool:
        if ctx.final:
            return True  # final candidates are exact by construction
        is_leaf = node in ctx.leaves
        if not ctx.crit[0 if is_leaf else 1]:
            return True
        nodes = ctx.g.nodes
        out = self._successor(nodes[node], kind)
        if is_leaf:
            nxt = tuple(nodes[l] for l in ctx.leaf_ids if l != node) + (out,)
            chw = ctx.has_interior_chw or nodes[node] == CHW
            ints = ctx.interior_shapes + (nodes[node],)
        else:
            nxt = tuple(nodes[l] for l in ctx.leaf_ids) + (out,)
            chw = ctx.has_interior_chw
            ints = ctx.interior_shapes
        return self._state_viable(nxt, ctx.remaining - 1, chw, ints)

    def _blend_orientations(self, ctx: _Step, i: int, j: int) -> list[tuple[int, int]]:
        """Legal (lhs, rhs) orientations for a pair, honoring the screen."""
        nodes = ctx.g.nodes
        rem1 = ctx.remaining - 1
        out = []
        for lhs, rhs in ((i, j), (j, i)):
            if ctx.final and nodes[rhs] != CHW:
                continue
            if not self._pair_legal(nodes[lhs], nodes[rhs]):
                continue
            delta = (0 if lhs in ctx.leaves else 1) + (0 if rhs in ctx.leaves else 1) - 1
            if not ctx.final and ctx.crit[delta]:
                subs = self._subs_of(nodes[lhs], nodes[rhs])
                if subs is None:
                    continue
                nxt = tuple(nodes[l] for l in ctx.leaf_ids if l != lhs and l != rhs) + (nodes[rhs],)
                chw = ctx.has_interior_chw or any(
                    nodes[k] == CHW for k in (lhs, rhs) if k in ctx.leaves
                )
                ints = ctx.interior_shapes + tuple(nodes[k] for k in (lhs, rhs) if k in ctx.leaves)
                if subs:
                    if not self._viable_substitutions(subs, nxt, rem1, chw, ints):
                        continue
                elif not self._state_viable(nxt, rem1, chw, ints):
                    continue
            out.append((lhs, rhs))
        return out

    def _candidate_viable(self, ctx: _Step, t: str, cand) -> bool:
        if t == "bcast":
            return bool(self._blend_orientations(ctx, cand[0], cand[1]))
        return self._unary_viable(ctx, cand[0], cand[1])

    @staticmethod
    def _iter_type(cands: dict[str, list], t: str):
        if t == "bcast":
            yield from cands["bcast"]
        else:
            for node, kinds in cands[t]:
                for k in kinds:
                    yield (node, k)

    @staticmethod
    def _nth(cands: dict[str, list], t: str, idx: int):
        if t == "bcast":
            return cands["bcast"][idx]
        for node, kinds in cands[t]:
            if idx < len(kinds):
                return (node, kinds[idx])
            idx -= len(kinds)
        raise IndexError(idx)

    def candidate_probabilities(self, g: MicroDag, remaining: int) -> dict[tuple, float]:
        """Per-candidate selection probability at this step; empty = dead end."""
        ctx = self._step_ctx(g, remaining)
        if ctx is None:
            return {}
        cands, _counts = self._assemble_raw(ctx)
        viable = {
            t: [c for c in self._iter_type(cands, t) if self._candidate_viable(ctx, t, c)]
            for t in TYPE_NAMES
        }
        weights = self.cfg.type_weights
        present = [(t, weights[t]) for t in TYPE_NAMES if viable[t] and weights[t] > 0]
        total = sum(w for _, w in present)
        out: dict[tuple, float] = {}
        for t, wt in present:
            share = wt / total / len(viable[t])
            for c in viable[t]:
                if t == "bcast":
                    out[("bcast", c[0], c[1])] = share
                else:
                    out[("unary", c[0], c[1])] = share
        return out

    # -- growth --------------------------------------------------------------

    def _grow_step(self, g: MicroDag, remaining: int, next_var: int) -> tuple[MicroDag, int] | None:
        ctx = self._step_ctx(g, remaining)
        if ctx is None:
            return None
        cands, counts = self._assemble_raw(ctx)
        weights = self.cfg.type_weights

        # Establish, per type, whether a viable candidate exists (early-exit
        # scan).  The scan order does not bias the draw: presence is boolean.
        screening = ctx.final or any(ctx.crit.values())
        present: list[tuple[str, float]] = []
        for t in TYPE_NAMES:
            if not counts[t] or weights[t] <= 0:
                continue
            if not screening or any(
                self._candidate_viable(ctx, t, c) for c in self._iter_type(cands, t)
            ):
                present.append((t, weights[t]))
        if not present:
            return None

        if self.step_observer is not None:
            unconstrained = not screening and all(counts[t] for t in TYPE_NAMES)
        total = sum(w for _, w in present)
        r = self.rng.random() * total
        acc = 0.0
        chosen = present[-1][0]
        for t, wt in present:
            acc += wt
            if r < acc:
                chosen = t
                break
        if self.step_observer is not None:
            self.step_observer(chosen, unconstrained)

        # Uniform draw over the type's viable candidates via rejection: the
        # presence scan guarantees termination.
        while True:
            cand = self._nth(cands, chosen, self.rng.randrange(counts[chosen]))
            if not screening or self._candidate_viable(ctx, chosen, cand):
                break

        if chosen != "bcast":
            node, kind = cand
            if isinstance(kind, FullyConnected) and kind.out == var_dim(_FRESH):
                kind = FullyConnected(var_dim(next_var))
                next_var += 1
            return grow_kind(g, kind, (node,)), next_var

        i, j = cand
        orientations = self._blend_orientations(ctx, i, j)
        ops: list[tuple[int, int, str]] = []
        for lhs, rhs in orientations:
            for op in BCAST_OPS:
                if check_candidate(g, Broadcast(op), (lhs, rhs), self.cfg.prune_rules) is None:
                    ops.append((lhs, rhs, op))
        if not ops:
            return None
        lhs, rhs, op = ops[self.rng.randrange(len(ops))]
        m = match_broadcast(g.nodes[lhs], g.nodes[rhs])
        if m is None:
            return None
        if not m.needs_substitution:
            return grow_kind(g, Broadcast(op), (lhs, rhs)), next_var

        subs = list(m.substitutions)
        delta = (0 if lhs in ctx.leaves else 1) + (0 if rhs in ctx.leaves else 1) - 1
        rem1 = remaining - 1
        if rem1 >= 1 and ctx.crit[delta]:
            nxt = tuple(g.nodes[l] for l in ctx.leaf_ids if l != lhs and l != rhs) + (g.nodes[rhs],)
            chw = ctx.has_interior_chw or any(
                g.nodes[k] == CHW for k in (lhs, rhs) if k in ctx.leaves
            )
            ints = ctx.interior_shapes + tuple(g.nodes[k] for k in (lhs, rhs) if k in ctx.leaves)
            subs = self._viable_substitutions(subs, nxt, rem1, chw, ints)
        while subs:
            var, expr = subs.pop(self.rng.randrange(len(subs)))
            try:
                g2 = substitute_dag(g, var, expr)
            except IllegalSubstitution:
                continue
            return grow_kind(g2, Broadcast(op), (lhs, rhs)), next_var
        return None

    def _attempt(self) -> KernelTemplate | None:
        g = MicroDag.initial()
        next_var = 1
        while len(g.nodes) < self.cfg.nodes:
            step = self._grow_step(g, self.cfg.nodes - len(g.nodes), next_var)
            if step is None:
                return None
            g, next_var = step
        try:
            return finalize(g)
        except Exception:
            return None

    def sample_kernel(self) -> KernelTemplate:
        """One fresh, legal, deduplicated kernel of exactly ``cfg.nodes`` nodes."""
        for _ in range(self.cfg.max_attempts):
            self.counts.sampled += 1
            t = self._attempt()
            if t is None:
                self.counts.pruned += 1
                continue
            if not self.store.add(iso_hash(t.dag)):
                self.counts.deduped += 1
                continue
            self.counts.accepted += 1
            return t
        raise Exhausted(f"no legal kernel in {self.cfg.max_attempts} attempts")

    def sample_many(self, count: int) -> list[KernelTemplate]:
        return [self.sample_kernel() for _ in range(count)]


def sample_kernel(cfg: SamplerConfig, store: DedupStore | None = None) -> KernelTemplate:
    return Sampler(cfg, store).sample_kernel()
