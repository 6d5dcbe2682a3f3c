"""
Text grammar for model structures.

    structure := tree | { def } head { head }
    def       := NAME ":=" polytope
    head      := "head" [NAME] "=" term { "|" term }
    term      := polytope | "uniform" "(" family "," INT "," INT ")"
    polytope  := NAME | "(" atom { "&" atom } ")"
    atom      := ["!"] family
    family    := "lin" | "quad" | "sin" | "sig"
    tree      := "tree" ( "=" node | "{" node "}" )
    node      := NAME "(" node "," node ")" | NAME | INT

A named polytope used in several heads is one shared polytope; repeating a
literal creates independent parameters. Tree nodes with the same name share
one sigmoid parameter slice wherever they appear.
"""
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import structlog
from pydantic import BaseModel, ConfigDict, ValidationError

from src.errors import StructureError, StructureSyntaxError
from src.models.schemas import (
    ComponentFamily,
    ComponentFunction,
    SetStructure,
    TreeLeaf,
    TreeNode,
    TreeSpec,
    family_arity,
)

logger = structlog.get_logger(__name__)

FAMILIES = {family.value: family for family in ComponentFamily}
KEYWORDS = {"head", "uniform", "tree", *FAMILIES}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
    |(?P<newline>\n)
    |(?P<comment>\#[^\n]*)
    |(?P<name>[A-Za-z_][A-Za-z0-9_]*)
    |(?P<int>[0-9]+)
    |(?P<op>:=|[=|&!(),{}])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # name, int, op, eof
    text: str
    line: int
    column: int

    def describe(self) -> str:
        return "end of input" if self.kind == "eof" else repr(self.text)


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        column = pos - line_start + 1
        if match is None:
            raise StructureSyntaxError(line, column, f"a token, found {text[pos]!r}")
        kind = match.lastgroup
        if kind == "newline":
            line += 1
            line_start = match.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, match.group(), line, column))
        pos = match.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# AST


class _Node(BaseModel):
    model_config = ConfigDict(frozen=True)


class Atom(_Node):
    family: ComponentFamily
    complemented: bool = False


class PolytopeLiteral(_Node):
    atoms: tuple[Atom, ...]


class PolytopeRef(_Node):
    name: str


class UniformTerm(_Node):
    family: ComponentFamily
    unions: int
    intersections: int


Polytope = Union[PolytopeLiteral, PolytopeRef]
Term = Union[PolytopeLiteral, PolytopeRef, UniformTerm]


class Definition(_Node):
    name: str
    polytope: Polytope


class HeadExpr(_Node):
    name: Optional[str] = None
    terms: tuple[Term, ...]


class StructureExpr(_Node):
    definitions: tuple[Definition, ...] = ()
    heads: tuple[HeadExpr, ...] = ()
    tree: Optional[TreeSpec] = None

    @property
    def is_tree(self) -> bool:
        return self.tree is not None


class Parser:
    """Recursive descent over the token list; one instance per text."""

    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.defined: set[str] = set()
        self.definition_tokens: dict[str, Token] = {}
        self.referenced: set[str] = set()

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        if token.kind != "eof":
            self.pos += 1
        return token

    def at(self, text: str) -> bool:
        token = self.peek()
        return token.kind in ("op", "name") and token.text == text

    def fail(self, expected: str) -> StructureSyntaxError:
        token = self.peek()
        return StructureSyntaxError(token.line, token.column, f"{expected}, found {token.describe()}")

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.fail(repr(text))
        return self.advance()

    def expect_name(self, what: str) -> Token:
        token = self.peek()
        if token.kind != "name" or token.text in KEYWORDS:
            raise self.fail(what)
        return self.advance()

    def expect_int(self, what: str) -> int:
        token = self.peek()
        if token.kind != "int":
            raise self.fail(what)
        self.advance()
        value = int(token.text)
        if value < 1:
            raise StructureError(f"{token.line}:{token.column}: {what} must be at least 1")
        return value

    def parse(self) -> StructureExpr:
        if self.at("tree"):
            tree = self.parse_tree()
            if self.peek().kind != "eof":
                raise self.fail("end of input")
            return StructureExpr(tree=tree)

        definitions = []
        while self.peek().kind == "name" and self.peek().text not in KEYWORDS:
            definitions.append(self.parse_definition())
        if not self.at("head"):
            raise self.fail("'head'" if definitions else "'head', 'tree' or a definition")

        heads = []
        names: set[str] = set()
        while self.at("head"):
            start = self.peek()
            head = self.parse_head()
            if head.name is not None:
                if head.name in names:
                    raise StructureError(f"{start.line}:{start.column}: head {head.name} is defined twice")
                names.add(head.name)
            heads.append(head)
        if self.peek().kind != "eof":
            raise self.fail("'head' or end of input")
        unused = [name for name in self.definition_tokens if name not in self.referenced]
        if unused:
            first = self.definition_tokens[unused[0]]
            raise StructureError(
                f"{first.line}:{first.column}: polytopes defined but never used: {', '.join(unused)}"
            )
        return StructureExpr(definitions=tuple(definitions), heads=tuple(heads))

    def parse_definition(self) -> Definition:
        token = self.expect_name("a polytope name")
        if token.text in self.defined:
            raise StructureError(f"{token.line}:{token.column}: polytope {token.text} is defined twice")
        self.expect(":=")
        polytope = self.parse_polytope()
        self.defined.add(token.text)
        self.definition_tokens[token.text] = token
        return Definition(name=token.text, polytope=polytope)

    def parse_head(self) -> HeadExpr:
        self.expect("head")
        name = None
        if not self.at("="):
            name = self.expect_name("a head name or '='").text
        self.expect("=")
        terms = [self.parse_term()]
        while self.at("|"):
            self.advance()
            terms.append(self.parse_term())
        return HeadExpr(name=name, terms=tuple(terms))

    def parse_term(self) -> Term:
        if not self.at("uniform"):
            return self.parse_polytope()
        self.advance()
        self.expect("(")
        family = self.parse_family()
        self.expect(",")
        unions = self.expect_int("a union count")
        self.expect(",")
        intersections = self.expect_int("an intersection count")
        self.expect(")")
        return UniformTerm(family=family, unions=unions, intersections=intersections)

    def parse_polytope(self) -> Polytope:
        token = self.peek()
        if token.kind == "name" and token.text not in KEYWORDS:
            self.advance()
            if token.text not in self.defined:
                raise StructureError(
                    f"{token.line}:{token.column}: polytope {token.text} is used before it is defined"
                )
            self.referenced.add(token.text)
            return PolytopeRef(name=token.text)
        if not self.at("("):
            raise self.fail("a polytope name or '('")
        self.advance()
        atoms = [self.parse_atom()]
        while self.at("&"):
            self.advance()
            atoms.append(self.parse_atom())
        self.expect(")")
        return PolytopeLiteral(atoms=tuple(atoms))

    def parse_atom(self) -> Atom:
        negated = self.peek() if self.at("!") else None
        if negated is not None:
            self.advance()
        family = self.parse_family()
        if negated is not None and family is not ComponentFamily.SIGMOID:
            raise StructureError(
                f"{negated.line}:{negated.column}: '!' is only allowed on sig, not {family.value}"
            )
        return Atom(family=family, complemented=negated is not None)

    def parse_family(self) -> ComponentFamily:
        token = self.peek()
        if token.kind != "name" or token.text not in FAMILIES:
            raise self.fail("a family (lin, quad, sin, sig)")
        self.advance()
        return FAMILIES[token.text]

    def parse_tree(self) -> TreeSpec:
        start = self.expect("tree")
        closing = None
        if self.at("{"):
            self.advance()
            closing = "}"
        else:
            self.expect("=")
        root_token = self.peek()
        root = self.parse_tree_node(())
        if closing is not None:
            self.expect(closing)
        if isinstance(root, TreeLeaf):
            raise StructureError(f"{root_token.line}:{root_token.column}: a tree needs at least one decision node")
        try:
            return TreeSpec(root=root)
        except ValidationError as exc:
            raise StructureError(f"{start.line}:{start.column}: {exc.errors()[0]['msg']}") from exc

    def parse_tree_node(self, path: tuple[str, ...]) -> Union[TreeNode, TreeLeaf]:
        token = self.peek()
        if token.kind == "int":
            self.advance()
            return TreeLeaf(label=token.text)
        token = self.expect_name("a node or class name")
        if not self.at("("):
            return TreeLeaf(label=token.text)
        if token.text in path:
            raise StructureError(f"{token.line}:{token.column}: node {token.text} repeats on a root-to-leaf path")
        self.advance()
        path = (*path, token.text)
        if_true = self.parse_tree_node(path)
        self.expect(",")
        if_false = self.parse_tree_node(path)
        self.expect(")")
        return TreeNode(name=token.text, if_true=if_true, if_false=if_false)


def parse(text: str) -> StructureExpr:
    """Parse structure text; errors carry line:column positions."""
    return Parser(text).parse()


def _print_polytope(polytope: Term) -> str:
    if isinstance(polytope, PolytopeRef):
        return polytope.name
    if isinstance(polytope, UniformTerm):
        return f"uniform({polytope.family.value}, {polytope.unions}, {polytope.intersections})"
    atoms = " & ".join(("!" if a.complemented else "") + a.family.value for a in polytope.atoms)
    return f"({atoms})"


def _print_tree(node: Union[TreeNode, TreeLeaf]) -> str:
    if isinstance(node, TreeLeaf):
        return node.label
    return f"{node.name}({_print_tree(node.if_true)}, {_print_tree(node.if_false)})"


def print_expr(expr: StructureExpr) -> str:
    if expr.tree is not None:
        return f"tree = {_print_tree(expr.tree.root)}\n"
    lines = [f"{d.name} := {_print_polytope(d.polytope)}" for d in expr.definitions]
    for head in expr.heads:
        label = f"head {head.name}" if head.name else "head"
        lines.append(f"{label} = " + " | ".join(_print_polytope(t) for t in head.terms))
    return "\n".join(lines) + "\n"


class StructureBuilder:
    """
    Assembles a SetStructure while handing out contiguous parameter slices.

    ``alias`` keys let several components reuse one slice (tree nodes).
    """

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise StructureError(f"input_dim must be at least 1, got {input_dim}")
        self.input_dim = input_dim
        self.components: list[ComponentFunction] = []
        self.polytopes: list[list[int]] = []
        self.heads: list[list[int]] = []
        self.head_names: list[Optional[str]] = []
        self._cursor = 0
        self._aliases: dict[str, int] = {}

    def _allocate(self, family: ComponentFamily) -> int:
        start = self._cursor
        self._cursor += family_arity(family, self.input_dim)
        return start

    def add_component(
        self,
        family: ComponentFamily,
        complemented: bool = False,
        alias: Optional[str] = None,
    ) -> int:
        if alias is None:
            start = self._allocate(family)
        else:
            if alias not in self._aliases:
                self._aliases[alias] = self._allocate(family)
            start = self._aliases[alias]
        self.components.append(
            ComponentFunction(family=family, param_start=start, complemented=complemented)
        )
        return len(self.components) - 1

    def add_polytope(self, atoms: Iterable[tuple[ComponentFamily, bool]]) -> int:
        members = [self.add_component(family, complemented) for family, complemented in atoms]
        self.polytopes.append(members)
        return len(self.polytopes) - 1

    def add_aliased_polytope(self, nodes: Iterable[tuple[str, bool]]) -> int:
        """Polytope of sigmoid components, each reusing the slice of its node name."""
        members = [
            self.add_component(ComponentFamily.SIGMOID, complemented, alias=name)
            for name, complemented in nodes
        ]
        self.polytopes.append(members)
        return len(self.polytopes) - 1

    def add_head(self, polytopes: list[int], name: Optional[str] = None) -> int:
        self.heads.append(list(polytopes))
        self.head_names.append(name)
        return len(self.heads) - 1

    def build(self) -> SetStructure:
        names = None
        if any(name is not None for name in self.head_names):
            names = [name or f"head{h}" for h, name in enumerate(self.head_names)]
        try:
            return SetStructure(
                input_dim=self.input_dim,
                components=self.components,
                polytopes=self.polytopes,
                heads=self.heads,
                head_names=names,
            )
        except ValidationError as exc:
            raise StructureError(exc.errors()[0]["msg"]) from exc


def tree_paths(tree: TreeSpec) -> list[tuple[str, list[tuple[str, bool]]]]:
    """Root-to-leaf paths as (class label, [(node, complemented), ...]) in true-first order."""
    paths = []

    def walk(node: Union[TreeNode, TreeLeaf], path: list[tuple[str, bool]]) -> None:
        if isinstance(node, TreeLeaf):
            paths.append((node.label, path))
            return
        walk(node.if_true, path + [(node.name, False)])
        walk(node.if_false, path + [(node.name, True)])

    walk(tree.root, [])
    return paths


def tree_structure(tree: TreeSpec, input_dim: int) -> SetStructure:
    """One polytope per leaf path and one head per class, in ``tree.classes()`` order."""
    builder = StructureBuilder(input_dim)
    by_class: dict[str, list[int]] = {label: [] for label in tree.classes()}
    for label, path in tree_paths(tree):
        by_class[label].append(builder.add_aliased_polytope(path))
    for label, polytopes in by_class.items():
        builder.add_head(polytopes, name=label)
    return builder.build()


def elaborate(expr: StructureExpr, input_dim: int) -> SetStructure:
    """
    Lay out components and parameters for ``expr``.

    Components are numbered in definition order, then head by head left to
    right, so identical text always yields an identical layout.
    """
    if expr.tree is not None:
        return tree_structure(expr.tree, input_dim)

    builder = StructureBuilder(input_dim)
    named: dict[str, int] = {}
    used: set[str] = set()

    def literal(polytope: PolytopeLiteral) -> int:
        return builder.add_polytope((a.family, a.complemented) for a in polytope.atoms)

    for definition in expr.definitions:
        if isinstance(definition.polytope, PolytopeRef):
            named[definition.name] = named[definition.polytope.name]
            used.add(definition.polytope.name)
        else:
            named[definition.name] = literal(definition.polytope)

    for head in expr.heads:
        members = []
        for term in head.terms:
            if isinstance(term, PolytopeRef):
                used.add(term.name)
                members.append(named[term.name])
            elif isinstance(term, UniformTerm):
                for _ in range(term.unions):
                    members.append(
                        builder.add_polytope([(term.family, False)] * term.intersections)
                    )
            else:
                members.append(literal(term))
        builder.add_head(members, name=head.name)

    unused = [d.name for d in expr.definitions if d.name not in used]
    if unused:
        raise StructureError(f"polytopes defined but never used: {', '.join(unused)}")
    structure = builder.build()
    logger.debug(
        "structure_elaborated",
        components=len(structure.components),
        polytopes=len(structure.polytopes),
        heads=len(structure.heads),
        params=structure.num_component_params,
    )
    return structure


def expand_heads(expr: StructureExpr, class_names: list[str]) -> StructureExpr:
    """
    Fit a head list to ``class_names``.

    A single unnamed head is repeated once per class; named heads are
    reordered to class order and must cover every class exactly.
    """
    if expr.tree is not None:
        return expr
    heads = expr.heads
    if len(heads) == 1 and heads[0].name is None:
        heads = tuple(HeadExpr(name=name, terms=heads[0].terms) for name in class_names)
    elif all(h.name is not None for h in heads):
        by_name = {h.name: h for h in heads}
        if set(by_name) != set(class_names):
            raise StructureError(
                f"heads {sorted(by_name)} do not match classes {sorted(class_names)}"
            )
        heads = tuple(by_name[name] for name in class_names)
    elif len(heads) == len(class_names):
        heads = tuple(HeadExpr(name=name, terms=h.terms) for name, h in zip(class_names, heads))
    else:
        raise StructureError(f"{len(heads)} heads cannot serve {len(class_names)} classes")
    return expr.model_copy(update={"heads": heads})


def parse_structure(text: str, input_dim: int) -> SetStructure:
    return elaborate(parse(text), input_dim)
