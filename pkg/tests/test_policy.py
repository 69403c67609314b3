"""Policy grammar, matcher, and certificate tests."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efrb.crypto import ds_kgen
from efrb.policy import (
    And,
    AttributeCertificate,
    AttributeSet,
    Leaf,
    Or,
    Policy,
    PolicyError,
    issue_certificate,
    match,
    parse_policy,
    verify_certificate,
)


# -- parsing ------------------------------------------------------------------

def test_parse_quoted_or():
    p = parse_policy('"Teacher" OR "Student"')
    assert p.root == Or((Leaf("Teacher"), Leaf("Student")))


def test_parse_precedence():
    p = parse_policy("A AND (B OR C)")
    assert p.root == And((Leaf("A"), Or((Leaf("B"), Leaf("C")))))
    # without parens, AND binds tighter
    q = parse_policy("A OR B AND C")
    assert q.root == Or((Leaf("A"), And((Leaf("B"), Leaf("C")))))


def test_parse_leading_operator_is_error():
    with pytest.raises(PolicyError):
        parse_policy("OR A")


def test_parse_empty_input_is_error():
    with pytest.raises(PolicyError):
        parse_policy("")
    with pytest.raises(PolicyError):
        parse_policy("   ")


def test_parse_reports_position():
    with pytest.raises(PolicyError) as err:
        parse_policy("A AND ")
    assert "end of input" in str(err.value)
    with pytest.raises(PolicyError) as err:
        parse_policy("A ! B")
    assert err.value.position == 1


def test_parse_unbalanced_parens():
    with pytest.raises(PolicyError):
        parse_policy("(A OR B")
    with pytest.raises(PolicyError):
        parse_policy("A OR B)")


def test_depth_limit():
    text = "(" * 33 + "A OR B" + ")" * 33
    parse_policy("(" * 30 + "A OR B" + ")" * 30)  # parens alone add no depth
    deep = Leaf("x")
    for i in range(40):
        deep = And((deep, Leaf(f"y{i}"))) if i % 2 else Or((deep, Leaf(f"y{i}")))
    with pytest.raises(PolicyError):
        Policy(deep)


def test_attribute_length_limit():
    parse_policy('"' + "a" * 256 + '"')
    with pytest.raises(PolicyError):
        parse_policy('"' + "a" * 257 + '"')


def test_canonical_round_trip_fixed_cases():
    for text in (
        '"Teacher" OR "Student"',
        "A AND (B OR C)",
        "A OR B AND C OR (D AND (E OR F))",
        'pk:deadbeef AND "role with spaces"',
    ):
        p = parse_policy(text)
        assert parse_policy(p.canonical_text) == p


_attr = st.text(
    alphabet="ABCdef123_:.-", min_size=1, max_size=8
)


def _formula(depth):
    if depth == 0:
        return _attr.map(Leaf)
    sub = _formula(depth - 1)
    return st.one_of(
        _attr.map(Leaf),
        st.lists(sub, min_size=2, max_size=3).map(lambda cs: And(tuple(cs))),
        st.lists(sub, min_size=2, max_size=3).map(lambda cs: Or(tuple(cs))),
    )


@settings(max_examples=200, deadline=None)
@given(_formula(3))
def test_canonical_round_trip_property(root):
    p = Policy(root)
    assert parse_policy(p.canonical_text) == p


# -- matching -----------------------------------------------------------------

def test_match_examples():
    p = parse_policy('"Teacher" OR "Student"')
    assert match(p, AttributeSet({"Student"}))
    assert not match(p, AttributeSet({"Salesman"}))
    assert not match(parse_policy("A"), AttributeSet(set()))


def test_match_and_requires_all():
    p = parse_policy("A AND B")
    assert not match(p, AttributeSet({"A"}))
    assert match(p, AttributeSet({"A", "B"}))


def _truth_table_oracle(policy, attrs):
    """Independent route: evaluate the canonical text with python's and/or."""
    text = policy.canonical_text
    expr = ""
    i = 0
    while i < len(text):
        if text[i] == '"':
            j = text.index('"', i + 1)
            expr += repr(text[i + 1:j] in attrs.attributes)
            i = j + 1
        elif text.startswith("AND", i):
            expr += " and "
            i += 3
        elif text.startswith("OR", i):
            expr += " or "
            i += 2
        else:
            expr += text[i]
            i += 1
    return eval(expr)


@settings(max_examples=200, deadline=None)
@given(_formula(3), st.sets(_attr, max_size=6))
def test_match_equals_truth_table_oracle(root, subset):
    p = Policy(root)
    attrs = AttributeSet(subset)
    assert match(p, attrs) == _truth_table_oracle(p, attrs)


@settings(max_examples=200, deadline=None)
@given(_formula(3), st.sets(_attr, max_size=5), st.sets(_attr, max_size=5))
def test_match_monotone_under_supersets(root, base, extra):
    p = Policy(root)
    if match(p, AttributeSet(base)):
        assert match(p, AttributeSet(base | extra))


# -- certificates -------------------------------------------------------------

@pytest.fixture(scope="module")
def ca():
    return ds_kgen(random.Random(2024))


def test_issue_and_verify(ca):
    subject = ds_kgen(random.Random(1))
    cert = issue_certificate(ca.sk, subject.pk, AttributeSet({"Student"}))
    assert verify_certificate(ca.pk, cert)


def test_tampered_attribute_rejected(ca):
    rng = random.Random(3)
    subject = ds_kgen(rng)
    cert = issue_certificate(
        ca.sk, subject.pk, AttributeSet({"Student", "Staff", "Union"})
    )
    for _ in range(20):
        attrs = cert.attributes.sorted
        k = rng.randrange(len(attrs))
        attrs[k] = attrs[k] + "x"
        forged = AttributeCertificate(
            cert.subject_pk, AttributeSet(attrs), cert.ca_signature
        )
        assert not verify_certificate(ca.pk, forged)


def test_empty_attribute_set_rejected(ca):
    subject = ds_kgen(random.Random(4))
    with pytest.raises(PolicyError):
        issue_certificate(ca.sk, subject.pk, AttributeSet(set()))


def test_wrong_ca_rejected(ca):
    subject = ds_kgen(random.Random(5))
    other = ds_kgen(random.Random(6))
    cert = issue_certificate(ca.sk, subject.pk, AttributeSet({"Student"}))
    assert not verify_certificate(other.pk, cert)


def test_certificate_json_round_trip(ca):
    subject = ds_kgen(random.Random(7))
    cert = issue_certificate(ca.sk, subject.pk, AttributeSet({"A", "B"}))
    assert AttributeCertificate.from_json(cert.to_json()) == cert
