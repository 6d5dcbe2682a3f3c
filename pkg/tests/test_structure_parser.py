import pytest

from src.errors import StructureError, StructureSyntaxError
from src.models.schemas import ComponentFamily
from src.services.structure_parser import (
    StructureBuilder,
    elaborate,
    expand_heads,
    parse,
    parse_structure,
    print_expr,
    tokenize,
    tree_paths,
)


def test_tokenizer_tracks_lines_and_skips_comments():
    """Comments vanish and tokens carry 1-based positions."""
    tokens = tokenize("# shape\nhead = (lin)\n")
    assert [t.text for t in tokens[:3]] == ["head", "=", "("]
    assert (tokens[0].line, tokens[0].column) == (2, 1)
    assert tokens[-1].kind == "eof"


def test_single_head_layout():
    """Components are numbered left to right with contiguous slices."""
    structure = parse_structure("head = (lin & quad) | (sin)", input_dim=2)
    families = [c.family for c in structure.components]
    assert families == [ComponentFamily.LINEAR, ComponentFamily.QUADRATIC, ComponentFamily.SINUSOIDAL]
    assert [c.param_start for c in structure.components] == [0, 3, 8]
    assert structure.polytopes == [[0, 1], [2]]
    assert structure.heads == [[0, 1]]
    assert structure.num_component_params == 8 + 5


def test_uniform_term_expands():
    """uniform(f, u, i) is u polytopes of i components."""
    structure = parse_structure("head = uniform(sig, 3, 4)", input_dim=1)
    assert len(structure.polytopes) == 3
    assert all(len(p) == 4 for p in structure.polytopes)


def test_named_polytope_is_shared_between_heads():
    """A definition used twice is one polytope listed by both heads."""
    text = "edge := (lin & !sig)\nhead a = edge | (lin)\nhead b = edge\n"
    structure = parse_structure(text, input_dim=2)
    assert structure.shared_polytopes() == [0]
    assert structure.head_names == ["a", "b"]
    assert structure.components[1].complemented


def test_repeated_literal_is_independent():
    """Writing the same literal twice creates two polytopes."""
    structure = parse_structure("head a = (lin)\nhead b = (lin)", input_dim=1)
    assert structure.shared_polytopes() == []
    assert len(structure.polytopes) == 2


def test_syntax_error_has_position():
    """Grammar errors report line:column and what was expected."""
    with pytest.raises(StructureSyntaxError) as info:
        parse("head = (lin &\n  )")
    assert info.value.line == 2
    assert info.value.column == 3
    assert str(info.value).startswith("2:3: expected a family")


def test_unknown_family_is_a_syntax_error():
    """Only lin, quad, sin and sig are families."""
    with pytest.raises(StructureSyntaxError, match="1:9"):
        parse("head = (cos)")


def test_use_before_definition():
    """Names must be defined above their first use."""
    with pytest.raises(StructureError, match="used before it is defined"):
        parse("head = edge\nedge := (lin)")


def test_duplicate_definition():
    """A name can be defined only once."""
    with pytest.raises(StructureError, match="defined twice"):
        parse("p := (lin)\np := (quad)\nhead = p")


def test_complement_only_on_sigmoid():
    """'!' on a non-sigmoid family is refused."""
    with pytest.raises(StructureError, match="only allowed on sig"):
        parse("head = (!lin)")


def test_zero_counts_are_refused():
    """uniform counts start at 1."""
    with pytest.raises(StructureError, match="at least 1"):
        parse("head = uniform(lin, 0, 2)")


def test_unused_definition_is_an_error():
    """Every defined polytope must reach a head."""
    with pytest.raises(StructureError, match="never used"):
        parse_structure("p := (lin)\nhead = (quad)", input_dim=1)


def test_unused_definition_points_at_its_name():
    """The error names the line and column where the unused polytope was defined."""
    with pytest.raises(StructureError, match=r"^2:1: polytopes defined but never used: q$"):
        parse("p := (lin)\nq := (sig)\nhead = p")


def test_duplicate_head_names():
    """Head names are unique."""
    with pytest.raises(StructureError, match="defined twice"):
        parse("head a = (lin)\nhead a = (quad)")


def test_duplicate_head_points_at_second_head():
    """The repeated head is reported where it starts."""
    with pytest.raises(StructureError, match=r"^3:1: head a is defined twice"):
        parse("head a = (lin)\nhead b = (sin)\nhead a = (quad)")


def test_print_then_parse_gives_same_layout():
    """The printer emits text that elaborates to an identical structure."""
    text = "p := (lin & !sig)\nhead a = p | uniform(quad, 2, 2)\nhead b = p | (sin)"
    expr = parse(text)
    again = parse(print_expr(expr))
    assert again == expr
    assert elaborate(again, 3) == elaborate(expr, 3)


def test_tree_paths_and_aliases():
    """A leaf per path; the first child follows sigma, the second its complement."""
    expr = parse("tree = A(B(c1, c2), C(c1, c2))")
    assert expr.is_tree
    paths = tree_paths(expr.tree)
    assert paths[0] == ("c1", [("A", False), ("B", False)])
    assert paths[3] == ("c2", [("A", True), ("C", True)])

    structure = elaborate(expr, input_dim=2)
    assert structure.head_names == ["c1", "c2"]
    assert len(structure.polytopes) == 4
    assert len({c.param_start for c in structure.components}) == 3


def test_tree_brace_syntax():
    """tree { ... } is the same as tree = ..."""
    assert parse("tree { A(x, y) }") == parse("tree = A(x, y)")


def test_tree_node_repeated_on_a_path():
    """A node cannot decide twice on one path."""
    with pytest.raises(StructureError, match="repeats"):
        parse("tree = A(A(x, y), y)")


def test_tree_errors_carry_positions():
    """Topology errors name where the offending node or tree starts."""
    with pytest.raises(StructureError, match=r"^1:10: node A repeats"):
        parse("tree = A(A(x, y), y)")
    with pytest.raises(StructureError, match=r"^1:8: a tree needs at least one decision node"):
        parse("tree = leaf")
    with pytest.raises(StructureError, match=r"^1:1: .*at least two classes"):
        parse("tree = A(x, x)")


def test_expand_heads_replicates_single_head():
    """One unnamed head becomes one head per class."""
    expr = expand_heads(parse("head = (lin & lin)"), ["cat", "dog", "owl"])
    assert [h.name for h in expr.heads] == ["cat", "dog", "owl"]


def test_expand_heads_reorders_named_heads():
    """Named heads follow the class order."""
    expr = expand_heads(parse("head dog = (lin)\nhead cat = (quad)"), ["cat", "dog"])
    assert [h.name for h in expr.heads] == ["cat", "dog"]


def test_expand_heads_rejects_mismatched_names():
    """Named heads must cover the classes exactly."""
    with pytest.raises(StructureError, match="do not match"):
        expand_heads(parse("head a = (lin)\nhead b = (lin)"), ["a", "c"])


def test_builder_rejects_bad_input_dim():
    """Components need at least one input."""
    with pytest.raises(StructureError):
        StructureBuilder(0)
