import math
from itertools import product

from canvas.shape_algebra import (
    Assignment,
    CHW,
    D_C,
    D_G,
    D_H,
    D_KH,
    D_KW,
    D_W,
    ONE,
    Shape,
    divide,
    evaluate,
    multiply,
    var_dim,
)
from canvas.shape_solver import match_broadcast


def test_paper_example_suffix_strip_and_substitutions():
    lhs = Shape((var_dim(1), D_KH), (D_H, D_W))
    rhs = Shape((D_G, divide(var_dim(2), D_G), D_KH, D_KW), (D_H, D_W))
    m = match_broadcast(lhs, rhs)
    assert m is not None
    assert m.common_prefix == ()
    assert m.common_suffix == (D_H, D_W)
    assert {e for _, e in m.substitutions} == {ONE, var_dim(2), D_KW, multiply(var_dim(2), D_KW)}
    assert all(v == 1 for v, _ in m.substitutions)


def test_paper_example_factor_set_with_group_expansion():
    m = match_broadcast(Shape((var_dim(1),), (D_H, D_W)), Shape((D_C, D_KH), (D_H, D_W)))
    assert m is not None
    values = {e.render() for _, e in m.substitutions}
    assert {"C", "KH", "G", "C/G", "C*KH", "G*KH", "C*KH/G"} <= values
    assert "1" in values  # all-factors rule includes the trivial factor


def test_identical_shapes():
    m = match_broadcast(CHW, CHW)
    assert m is not None
    assert m.lhs_core == m.rhs_core == ()
    assert m.ratio == ONE
    assert m.substitutions == ()


def test_spatial_suffix_mismatch_is_no_match():
    assert match_broadcast(Shape((D_C,), (D_H, D_W)), Shape((D_C,), (D_H,))) is None


def test_rhs_variable_is_deferred_not_substituted():
    # x1 must end up a multiple of G*KH; the match records the ratio.
    lhs = Shape((D_G, D_KH), (D_H, D_W))
    rhs = Shape((var_dim(1),), (D_H, D_W))
    m = match_broadcast(lhs, rhs)
    assert m is not None and m.substitutions == ()
    assert m.ratio is not None and m.ratio.render() == "x1/G/KH"


def test_vector_to_full_map_broadcast():
    # A channel vector with all spatial dims folded away can still blend
    # with the full map; the core is the whole spatial region.
    lhs = Shape((D_C,), ())
    rhs = CHW
    m = match_broadcast(lhs, rhs)
    assert m is not None
    assert m.region == "spatial"
    assert m.ratio == multiply(D_H, D_W)


def test_region_boundary_is_respected():
    # Cores may not straddle the channel/spatial border.
    lhs = Shape((D_C, D_KH), (D_W,))
    rhs = Shape((D_C,), (D_H, D_W))
    assert match_broadcast(lhs, rhs) is None


def test_strip_maximality():
    lhs = Shape((var_dim(1), D_KH), (D_H, D_W))
    rhs = Shape((D_G, divide(var_dim(2), D_G), D_KH, D_KW), (D_H, D_W))
    m = match_broadcast(lhs, rhs)
    assert m.lhs_core[0] != m.rhs_core[0]
    assert m.lhs_core[-1] != m.rhs_core[-1]


def test_substitutions_match_brute_force_oracle():
    """Concrete-value oracle: cores of <=4 dims over small constants; the
    symbolic substitution set must coincide with the assignments a brute
    force over candidate factors accepts for every concrete binding."""
    lhs = Shape((var_dim(1), D_KH), (D_H, D_W))
    rhs = Shape((D_G, divide(var_dim(2), D_G), D_KH, D_KW), (D_H, D_W))
    m = match_broadcast(lhs, rhs)
    subs = {e for _, e in m.substitutions}

    bindings = []
    for c, g, kh, kw, x2 in product((4, 8, 12), (2, 4), (1, 3), (1, 3, 5), (6, 12, 30)):
        if c % g == 0 and x2 % g == 0:
            bindings.append(Assignment({"C": c, "G": g, "KH": kh, "KW": kw, "H": 2, "W": 2}, {2: x2}))

    for e in subs:
        for a in bindings:
            lhs_size = evaluate(e, a) * a.constants["KH"]
            rhs_size = a.dynvars[2] * a.constants["KH"] * a.constants["KW"]
            assert rhs_size % lhs_size == 0, (e, a)

    # Completeness within the symbolic candidate universe: any product of
    # sub-multisets of {x2, KW} that always divides must be in the set.
    candidates = [ONE, var_dim(2), D_KW, multiply(var_dim(2), D_KW), D_KH, multiply(var_dim(2), D_KH)]
    for cand in candidates:
        ok = True
        for a in bindings:
            lhs_size = evaluate(cand, a) * a.constants["KH"]
            rhs_size = a.dynvars[2] * a.constants["KH"] * a.constants["KW"]
            if rhs_size % lhs_size != 0:
                ok = False
                break
        if ok and cand in (ONE, var_dim(2), D_KW, multiply(var_dim(2), D_KW)):
            assert cand in subs
