"""Boolean access-policy trees over certificate attributes.

A policy is a tree of attribute checks (``Equals``, ``Includes``) combined
with ``And``, ``Or`` and ``Not``. Trees are immutable; evaluation is pure and
never raises on a tree that passed construction.

The on-disk form is canonical JSON::

    {"name":"ReadPolicy","version":1,"expr":{"op":"equals","attr":"role","value":"reader"}}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Mapping, Union

MAX_DEPTH = 32
MAX_NODES = 4096

_NAME_RE = re.compile(r"[A-Za-z0-9_.-]{1,128}")

AttributeMap = Mapping[str, str]


class PolicyError(ValueError):
    """Base class for invalid policies and policy documents."""


class PolicySyntaxError(PolicyError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class PolicyArityError(PolicyError):
    pass


class UnknownOperatorError(PolicyError):
    pass


class PolicyLimitError(PolicyError):
    pass


def _check_text(what: str, s: Any, allow_empty: bool = True) -> None:
    if not isinstance(s, str):
        raise PolicyError(f"{what} must be a string, got {type(s).__name__}")
    if not allow_empty and not s:
        raise PolicyError(f"{what} must be non-empty")
    if "\x00" in s:
        raise PolicyError(f"{what} contains a NUL character")


def check_attributes(attrs: Mapping[str, str]) -> dict[str, str]:
    """Validate an attribute map and return it as a plain dict."""
    if not isinstance(attrs, Mapping):
        raise PolicyError("attributes must be a mapping")
    out = {}
    for k, v in attrs.items():
        _check_text("attribute name", k, allow_empty=False)
        _check_text(f"value of attribute {k!r}", v)
        out[k] = v
    return out


@dataclass(frozen=True, slots=True)
class Equals:
    attr: str
    value: str

    def __post_init__(self):
        _check_text("attr", self.attr, allow_empty=False)
        _check_text("value", self.value)


@dataclass(frozen=True, slots=True)
class Includes:
    attr: str
    value: str

    def __post_init__(self):
        _check_text("attr", self.attr, allow_empty=False)
        _check_text("value", self.value)


@dataclass(frozen=True, slots=True)
class And:
    children: tuple[PolicyExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise PolicyArityError(f"and needs at least 2 children, got {len(self.children)}")


@dataclass(frozen=True, slots=True)
class Or:
    children: tuple[PolicyExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise PolicyArityError(f"or needs at least 2 children, got {len(self.children)}")


@dataclass(frozen=True, slots=True)
class Not:
    child: PolicyExpr


PolicyExpr = Union[Equals, Includes, And, Or, Not]
LEAF_TYPES = (Equals, Includes)


def tree_size(expr: PolicyExpr) -> tuple[int, int]:
    """Return ``(depth, node_count)``; a lone leaf has depth 1."""
    if isinstance(expr, LEAF_TYPES):
        return 1, 1
    kids = (expr.child,) if isinstance(expr, Not) else expr.children
    depth, nodes = 0, 1
    for k in kids:
        d, n = tree_size(k)
        depth = max(depth, d)
        nodes += n
    return depth + 1, nodes


def check_limits(expr: PolicyExpr, max_depth: int = MAX_DEPTH, max_nodes: int = MAX_NODES) -> None:
    # iterative so a hostile tree cannot blow the interpreter stack first
    stack = [(expr, 1)]
    nodes = 0
    while stack:
        node, depth = stack.pop()
        nodes += 1
        if depth > max_depth:
            raise PolicyLimitError(f"policy deeper than {max_depth} levels")
        if nodes > max_nodes:
            raise PolicyLimitError(f"policy has more than {max_nodes} nodes")
        if isinstance(node, Not):
            stack.append((node.child, depth + 1))
        elif isinstance(node, (And, Or)):
            stack.extend((c, depth + 1) for c in node.children)
        elif not isinstance(node, LEAF_TYPES):
            raise UnknownOperatorError(f"not a policy node: {node!r}")


@dataclass(frozen=True, slots=True)
class PolicyDocument:
    name: str
    expr: PolicyExpr
    version: int = 1

    def __post_init__(self):
        if not isinstance(self.name, str) or not _NAME_RE.fullmatch(self.name):
            raise PolicyError(f"invalid policy name {self.name!r}")
        if isinstance(self.version, bool) or not isinstance(self.version, int) or self.version < 1:
            raise PolicyError(f"policy version must be an integer >= 1, got {self.version!r}")
        check_limits(self.expr)


def evaluate(expr: PolicyExpr, attrs: AttributeMap) -> bool:
    if isinstance(expr, Equals):
        v = attrs.get(expr.attr)
        return v is not None and v == expr.value
    if isinstance(expr, Includes):
        v = attrs.get(expr.attr)
        return v is not None and expr.value in v.split(",")
    if isinstance(expr, And):
        return all(evaluate(c, attrs) for c in expr.children)
    if isinstance(expr, Or):
        return any(evaluate(c, attrs) for c in expr.children)
    if isinstance(expr, Not):
        return not evaluate(expr.child, attrs)
    raise UnknownOperatorError(f"not a policy node: {expr!r}")


def count_attribute_checks(expr: PolicyExpr) -> int:
    if isinstance(expr, LEAF_TYPES):
        return 1
    if isinstance(expr, Not):
        return count_attribute_checks(expr.child)
    return sum(count_attribute_checks(c) for c in expr.children)


def expr_to_obj(expr: PolicyExpr) -> dict[str, Any]:
    if isinstance(expr, Equals):
        return {"op": "equals", "attr": expr.attr, "value": expr.value}
    if isinstance(expr, Includes):
        return {"op": "includes", "attr": expr.attr, "value": expr.value}
    if isinstance(expr, And):
        return {"op": "and", "children": [expr_to_obj(c) for c in expr.children]}
    if isinstance(expr, Or):
        return {"op": "or", "children": [expr_to_obj(c) for c in expr.children]}
    if isinstance(expr, Not):
        return {"op": "not", "child": expr_to_obj(expr.child)}
    raise UnknownOperatorError(f"not a policy node: {expr!r}")


def document_to_obj(doc: PolicyDocument) -> dict[str, Any]:
    return {"name": doc.name, "version": doc.version, "expr": expr_to_obj(doc.expr)}


_OP_KEYS = {
    "equals": {"op", "attr", "value"},
    "includes": {"op", "attr", "value"},
    "and": {"op", "children"},
    "or": {"op", "children"},
    "not": {"op", "child"},
}


def expr_from_obj(obj: Any, path: str = "expr", depth: int = 1) -> PolicyExpr:
    if depth > MAX_DEPTH:
        raise PolicyLimitError(f"policy deeper than {MAX_DEPTH} levels at {path}")
    if not isinstance(obj, dict):
        raise PolicyError(f"{path}: expected an object")
    op = obj.get("op")
    if op not in _OP_KEYS:
        raise UnknownOperatorError(f"{path}: unknown operator {op!r}")
    extra = set(obj) - _OP_KEYS[op]
    missing = _OP_KEYS[op] - set(obj)
    if extra:
        raise PolicyError(f"{path}: unexpected keys {sorted(extra)} for {op!r}")
    if missing:
        raise PolicyError(f"{path}: missing keys {sorted(missing)} for {op!r}")
    try:
        if op == "equals":
            return Equals(obj["attr"], obj["value"])
        if op == "includes":
            return Includes(obj["attr"], obj["value"])
        if op == "not":
            return Not(expr_from_obj(obj["child"], f"{path}.child", depth + 1))
        kids = obj["children"]
        if not isinstance(kids, list):
            raise PolicyError(f"{path}.children: expected a list")
        parsed = [expr_from_obj(k, f"{path}.children[{i}]", depth + 1) for i, k in enumerate(kids)]
        return And(parsed) if op == "and" else Or(parsed)
    except PolicyArityError as e:
        raise PolicyArityError(f"{path}: {e}") from None
    except PolicyError as e:
        if str(e).startswith(path):
            raise
        raise type(e)(f"{path}: {e}") from None


def document_from_obj(obj: Any) -> PolicyDocument:
    if not isinstance(obj, dict):
        raise PolicyError("policy document must be a JSON object")
    extra = set(obj) - {"name", "version", "expr"}
    if extra:
        raise PolicyError(f"unexpected keys {sorted(extra)} in policy document")
    for key in ("name", "version", "expr"):
        if key not in obj:
            raise PolicyError(f"policy document is missing {key!r}")
    expr = expr_from_obj(obj["expr"])
    return PolicyDocument(name=obj["name"], expr=expr, version=obj["version"])


def parse_policy(text: bytes | str) -> PolicyDocument:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise PolicySyntaxError(f"policy is not UTF-8: {e.reason}", e.start) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise PolicySyntaxError(e.msg, e.pos) from None
    except RecursionError:
        raise PolicyLimitError("policy nesting too deep to parse") from None
    return document_from_obj(obj)


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def serialize_policy(doc: PolicyDocument) -> bytes:
    return canonical_json(document_to_obj(doc))
