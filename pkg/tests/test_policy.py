import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import truth_table
from fabacl.policy import (
    MAX_DEPTH,
    And,
    Equals,
    Includes,
    Not,
    Or,
    PolicyArityError,
    PolicyDocument,
    PolicyError,
    PolicyLimitError,
    PolicySyntaxError,
    UnknownOperatorError,
    count_attribute_checks,
    evaluate,
    parse_policy,
    serialize_policy,
)

READ_POLICY = b'{"name":"ReadPolicy","version":1,"expr":{"op":"equals","attr":"role","value":"reader"}}'


def test_equals():
    assert evaluate(Equals("role", "admin"), {"role": "admin"})
    assert not evaluate(Equals("role", "admin"), {"role": "Admin"})
    assert not evaluate(Equals("role", "admin"), {"role": "admin "})


def test_includes_is_list_membership_not_substring():
    attrs = {"groups": "iot,lab"}
    assert evaluate(Includes("groups", "iot"), attrs)
    assert evaluate(Includes("groups", "lab"), attrs)
    assert not evaluate(Includes("groups", "io"), attrs)
    assert not evaluate(Includes("groups", "iot,lab"), attrs)


def test_includes_does_not_trim():
    assert not evaluate(Includes("groups", "lab"), {"groups": "iot, lab"})
    assert evaluate(Includes("groups", " lab"), {"groups": "iot, lab"})


def test_not():
    assert evaluate(Not(Equals("role", "admin")), {"role": "user"})


@pytest.mark.parametrize("leaf", [Equals("role", "admin"), Includes("role", "admin")])
def test_absent_attribute_is_false(leaf):
    assert evaluate(leaf, {}) is False
    assert evaluate(Not(leaf), {}) is True


@pytest.mark.parametrize("cls", [And, Or])
@pytest.mark.parametrize("n", [0, 1])
def test_and_or_need_two_children(cls, n):
    with pytest.raises(PolicyArityError):
        cls([Equals("a", "b")] * n)


def test_count_attribute_checks():
    assert count_attribute_checks(Equals("a", "b")) == 1
    tree = And([Equals("a", "1"), Or([Equals("b", "2"), Includes("c", "3")])])
    assert count_attribute_checks(tree) == 3
    assert count_attribute_checks(Not(tree)) == 3


def test_truth_table_depth_two():
    # the full depth-3 sweep lives in the acceptance suite
    shapes = [s for s in truth_table.shapes() if truth_table._depth(s) <= 2]
    cases = list(truth_table.assignments())
    for shape in shapes:
        expr = truth_table.to_expr(shape)
        for outcome, attrs in cases:
            assert evaluate(expr, attrs) == truth_table.oracle(shape, outcome), shape


# -- generators

names = st.sampled_from(["role", "org", "groups", "dept", "hfa.x"])
values = st.sampled_from(["a", "b", "c", "a,b", "b,c", "", "A"])
leaves = st.builds(Equals, names, values) | st.builds(Includes, names, values)


def _exprs(max_leaves=30):
    return st.recursive(
        leaves,
        lambda kids: (
            st.builds(Not, kids)
            | st.lists(kids, min_size=2, max_size=4).map(And)
            | st.lists(kids, min_size=2, max_size=4).map(Or)
        ),
        max_leaves=max_leaves,
    )


exprs = _exprs()
attr_maps = st.dictionaries(names, values, max_size=5)
docs = st.builds(
    PolicyDocument,
    name=st.from_regex(r"[A-Za-z0-9_.-]{1,20}", fullmatch=True),
    expr=exprs,
    version=st.integers(1, 10**6),
)


@given(exprs, attr_maps)
def test_evaluation_is_pure(expr, attrs):
    before = dict(attrs)
    assert evaluate(expr, attrs) == evaluate(expr, attrs)
    assert attrs == before


@given(exprs, exprs, attr_maps)
def test_de_morgan(a, b, attrs):
    assert evaluate(Not(And([a, b])), attrs) == evaluate(Or([Not(a), Not(b)]), attrs)
    assert evaluate(Not(Or([a, b])), attrs) == evaluate(And([Not(a), Not(b)]), attrs)


@given(exprs, attr_maps, st.text(min_size=1).filter(lambda s: "\x00" not in s), st.text())
def test_unrelated_attribute_does_not_matter(expr, attrs, extra_name, extra_value):
    if extra_name in {"role", "org", "groups", "dept", "hfa.x"}:
        return
    assert evaluate(expr, attrs) == evaluate(expr, {**attrs, extra_name: extra_value})


@settings(max_examples=200)
@given(docs)
def test_round_trip(doc):
    data = serialize_policy(doc)
    back = parse_policy(data)
    assert back == doc
    assert serialize_policy(back) == data


def test_canonical_bytes():
    doc = PolicyDocument("ReadPolicy", Equals("role", "reader"), 1)
    assert serialize_policy(doc) == READ_POLICY
    assert serialize_policy(doc) == serialize_policy(doc)
    assert parse_policy(READ_POLICY) == doc


def test_canonical_key_order_for_compound_nodes():
    doc = PolicyDocument("P", Not(Or([Equals("a", "1"), Includes("b", "2")])), 3)
    assert serialize_policy(doc) == (
        b'{"name":"P","version":3,"expr":{"op":"not","child":{"op":"or","children":'
        b'[{"op":"equals","attr":"a","value":"1"},{"op":"includes","attr":"b","value":"2"}]}}}'
    )


def test_non_canonical_input_reserialises_canonically():
    pretty = json.dumps(json.loads(READ_POLICY), indent=2, sort_keys=True).encode()
    assert serialize_policy(parse_policy(pretty)) == READ_POLICY


def test_unicode_is_kept_as_utf8():
    doc = PolicyDocument("P", Equals("city", "Zürich"), 1)
    data = serialize_policy(doc)
    assert "Zürich".encode() in data
    assert parse_policy(data) == doc


def _doc(expr) -> bytes:
    return json.dumps({"name": "P", "version": 1, "expr": expr}).encode()


def test_parse_arity_error():
    with pytest.raises(PolicyArityError, match="at least 2"):
        parse_policy(_doc({"op": "and", "children": [{"op": "equals", "attr": "a", "value": "b"}]}))


def test_parse_unknown_operator():
    with pytest.raises(UnknownOperatorError):
        parse_policy(_doc({"op": "xor", "children": []}))


def test_parse_syntax_error_has_position():
    with pytest.raises(PolicySyntaxError) as exc:
        parse_policy(b'{"name": "P", "version": 1,, }')
    assert exc.value.position == 27


def test_parse_rejects_non_utf8():
    with pytest.raises(PolicySyntaxError):
        parse_policy(b'{"name":"\xff"}')


@pytest.mark.parametrize(
    "obj",
    [
        {"name": "bad name", "version": 1, "expr": {"op": "equals", "attr": "a", "value": "b"}},
        {"name": "P", "version": 0, "expr": {"op": "equals", "attr": "a", "value": "b"}},
        {"name": "P", "version": True, "expr": {"op": "equals", "attr": "a", "value": "b"}},
        {"name": "P", "version": 1, "expr": {"op": "equals", "attr": "", "value": "b"}},
        {"name": "P", "version": 1, "expr": {"op": "equals", "attr": "a", "value": 3}},
        {"name": "P", "version": 1, "expr": {"op": "equals", "attr": "a\u0000", "value": "b"}},
        {"name": "P", "version": 1, "expr": {"op": "equals", "attr": "a", "value": "b", "children": []}},
        {"name": "P", "version": 1, "expr": {"op": "not"}},
        {"name": "P", "version": 1},
        {"name": "x" * 129, "version": 1, "expr": {"op": "equals", "attr": "a", "value": "b"}},
    ],
)
def test_parse_rejects_invalid_documents(obj):
    with pytest.raises(PolicyError):
        parse_policy(json.dumps(obj).encode())


def test_depth_limit():
    expr = Equals("a", "b")
    for _ in range(MAX_DEPTH - 1):
        expr = Not(expr)
    PolicyDocument("Deep", expr, 1)
    with pytest.raises(PolicyLimitError):
        PolicyDocument("Deeper", Not(expr), 1)
    nested = {"op": "equals", "attr": "a", "value": "b"}
    for _ in range(MAX_DEPTH):
        nested = {"op": "not", "child": nested}
    with pytest.raises(PolicyLimitError):
        parse_policy(_doc(nested))


def test_node_limit():
    leaves = [Equals("a", str(i)) for i in range(4095)]
    PolicyDocument("Wide", Or(leaves), 1)
    with pytest.raises(PolicyLimitError):
        PolicyDocument("Wider", Or(leaves + [Equals("a", "x")]), 1)


def test_pathological_nesting_is_a_policy_error():
    text = b'{"name":"P","version":1,"expr":' + b"[" * 100000 + b"]" * 100000 + b"}"
    with pytest.raises(PolicyError):
        parse_policy(text)
