"""Attribute policies, the matching function, and CA attribute certificates.

A policy is a monotone boolean formula over attribute strings:

    expr   := term (OR term)*
    term   := factor (AND factor)*
    factor := ATTR | '(' expr ')'

AND binds tighter than OR, attributes are quoted strings or bare identifiers,
and negation does not exist: a certificate can prove an attribute is held,
never that one is absent. Certificates bind a subject public key to an
attribute set under the CA's signature.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Union

from .crypto import ds_sign, ds_verify
from .encoding import enc_bytes, enc_seq, enc_str

MAX_ATTRIBUTE_BYTES = 256
MAX_DEPTH = 32

_BARE_ATTR = re.compile(r"[A-Za-z0-9_.:\-]+")


class PolicyError(ValueError):
    """Grammar violation or malformed policy structure."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


def _check_attribute(name: str) -> str:
    if not name:
        raise PolicyError("empty attribute name")
    if len(name.encode("utf-8")) > MAX_ATTRIBUTE_BYTES:
        raise PolicyError(f"attribute longer than {MAX_ATTRIBUTE_BYTES} bytes")
    return name


@dataclass(frozen=True)
class Leaf:
    attribute: str

    def __post_init__(self):
        _check_attribute(self.attribute)


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", _flatten(And, self.children))


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", _flatten(Or, self.children))


Node = Union[Leaf, And, Or]


def _flatten(kind, children) -> tuple:
    if len(children) < 2:
        raise PolicyError(f"{kind.__name__} needs at least two children")
    out = []
    for child in children:
        if isinstance(child, kind):
            out.extend(child.children)
        else:
            out.append(child)
    return tuple(out)


def _depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + max(_depth(c) for c in node.children)


@dataclass(frozen=True)
class Policy:
    root: Node

    def __post_init__(self):
        if _depth(self.root) > MAX_DEPTH:
            raise PolicyError(f"formula deeper than {MAX_DEPTH}")

    @property
    def canonical_text(self) -> str:
        return _render(self.root, parent=None)

    def encode(self) -> bytes:
        return enc_str(self.canonical_text)

    def to_json(self) -> str:
        return self.canonical_text


def _render(node: Node, parent) -> str:
    if isinstance(node, Leaf):
        return f'"{node.attribute}"'
    op = " AND " if isinstance(node, And) else " OR "
    text = op.join(_render(c, parent=type(node)) for c in node.children)
    # Or inside And needs parens; everything else is unambiguous
    if isinstance(node, Or) and parent is And:
        return f"({text})"
    return text


# -- parser -------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<lparen>\()|(?P<rparen>\))|(?P<quoted>\"[^\"]*\")"
    r"|(?P<word>[A-Za-z0-9_.:\-]+))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise PolicyError(f"unexpected character {stripped[0]!r}", position=pos)
        pos = m.end()
        if m.lastgroup == "lparen":
            tokens.append(("(", m.start()))
        elif m.lastgroup == "rparen":
            tokens.append((")", m.start()))
        elif m.lastgroup == "quoted":
            tokens.append(("attr", m.group("quoted")[1:-1], m.start()))
        else:
            word = m.group("word")
            if word in ("AND", "OR"):
                tokens.append((word, m.start()))
            else:
                tokens.append(("attr", word, m.start()))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise PolicyError("unexpected end of input")
        self.i += 1
        return tok

    def expr(self) -> Node:
        parts = [self.term()]
        while self.peek() and self.peek()[0] == "OR":
            self.next()
            parts.append(self.term())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def term(self) -> Node:
        parts = [self.factor()]
        while self.peek() and self.peek()[0] == "AND":
            self.next()
            parts.append(self.factor())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def factor(self) -> Node:
        tok = self.next()
        if tok[0] == "attr":
            return Leaf(_check_attribute(tok[1]))
        if tok[0] == "(":
            inner = self.expr()
            closing = self.next()
            if closing[0] != ")":
                raise PolicyError("expected ')'", position=closing[-1])
            return inner
        raise PolicyError(f"unexpected token {tok[0]!r}", position=tok[-1])


def parse_policy(text: str) -> Policy:
    tokens = _tokenize(text)
    if not tokens:
        raise PolicyError("empty policy")
    parser = _Parser(tokens)
    root = parser.expr()
    trailing = parser.peek()
    if trailing is not None:
        raise PolicyError(f"trailing token {trailing[0]!r}", position=trailing[-1])
    return Policy(root)


# -- matching -----------------------------------------------------------------

@dataclass(frozen=True)
class AttributeSet:
    attributes: frozenset

    def __init__(self, attributes: Iterable[str]):
        attrs = frozenset(_check_attribute(a) for a in attributes)
        object.__setattr__(self, "attributes", attrs)

    def __contains__(self, name: str) -> bool:
        return name in self.attributes

    def __len__(self) -> int:
        return len(self.attributes)

    @property
    def sorted(self) -> list:
        return sorted(self.attributes)

    def encode(self) -> bytes:
        return enc_seq(enc_str(a) for a in self.sorted)

    def to_json(self) -> list:
        return self.sorted


def match(policy: Policy, attrs: AttributeSet) -> bool:
    """M(P, S): whether the attribute set satisfies the policy."""
    return _eval(policy.root, attrs)


def _eval(node: Node, attrs: AttributeSet) -> bool:
    if isinstance(node, Leaf):
        return node.attribute in attrs
    if isinstance(node, And):
        return all(_eval(c, attrs) for c in node.children)
    return any(_eval(c, attrs) for c in node.children)


# -- attribute certificates ----------------------------------------------------

@dataclass(frozen=True)
class AttributeCertificate:
    subject_pk: bytes
    attributes: AttributeSet
    ca_signature: bytes

    def encode(self) -> bytes:
        return (
            enc_bytes(self.subject_pk)
            + self.attributes.encode()
            + enc_bytes(self.ca_signature)
        )

    def to_json(self) -> dict:
        return {
            "subject_pk": self.subject_pk.hex(),
            "attributes": self.attributes.to_json(),
            "ca_signature": self.ca_signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttributeCertificate":
        return cls(
            subject_pk=bytes.fromhex(obj["subject_pk"]),
            attributes=AttributeSet(obj["attributes"]),
            ca_signature=bytes.fromhex(obj["ca_signature"]),
        )


def certificate_message(subject_pk: bytes, attributes: AttributeSet) -> bytes:
    return enc_bytes(subject_pk) + attributes.encode()


def issue_certificate(ca_sk: int, subject_pk: bytes, attributes: AttributeSet) -> AttributeCertificate:
    if len(attributes) == 0:
        raise PolicyError("refusing to certify an empty attribute set")
    sig = ds_sign(certificate_message(subject_pk, attributes), ca_sk)
    return AttributeCertificate(subject_pk, attributes, sig)


def verify_certificate(ca_pk: bytes, cert: AttributeCertificate) -> bool:
    return ds_verify(
        cert.ca_signature, certificate_message(cert.subject_pk, cert.attributes), ca_pk
    )
