"""Blocks, transactions, Merkle tree, PoW sealing, and chain validation.

A redactable transaction contributes only its chameleon hash value to the
Merkle leaf, so rewriting its content (with a fresh collision randomness)
leaves every block header byte-identical. The collision randomness, attribute
certificates, and signatures are deliberately outside both the leaf digest
and the chameleon-hashed message; the hashed message covers (content, policy)
so that policy updates travel through the same collision-plus-approval path
as content edits.

Witness-group election results are chain-resident records packaged into block
bodies next to ordinary transactions, which is how every node learns the
current group.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

from .crypto import ChameleonDigest, GroupParams, ch_hash, ch_kgen, ch_pgen, ch_verify, digest, digest_int, ds_sign, ds_verify
from .encoding import enc_bytes, enc_scalar, enc_seq, enc_u64
from .policy import AttributeCertificate, AttributeSet, Policy, match, parse_policy, verify_certificate

DEFAULT_MAX_BLOCK_TXS = 512
GENESIS_PREV_HASH = b"\x00" * 32


class LedgerError(ValueError):
    """Structural violation while building or updating chain state."""


@dataclass(frozen=True)
class Verdict:
    """accept / reject(reason) result used by every validation predicate."""

    ok: bool
    reason: Optional[str] = None
    detail: Optional[dict] = None

    def __bool__(self) -> bool:
        return self.ok


ACCEPT = Verdict(True)


def reject(reason: str, **detail) -> Verdict:
    return Verdict(False, reason, detail or None)


# -- transactions ---------------------------------------------------------------

@dataclass(frozen=True)
class ImmutableTransaction:
    content: bytes

    def to_json(self) -> dict:
        return {"type": "immutable", "content": self.content.hex()}


@dataclass(frozen=True)
class AggregatedApproval:
    """Witness votes aggregated by the collector once weight clears threshold."""

    epoch: int
    entries: tuple  # ((witness_pk, signature), ...) deduplicated by pk
    claimed_weight: int

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "entries": [[pk.hex(), sig.hex()] for pk, sig in self.entries],
            "claimed_weight": self.claimed_weight,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AggregatedApproval":
        return cls(
            epoch=obj["epoch"],
            entries=tuple(
                (bytes.fromhex(pk), bytes.fromhex(sig)) for pk, sig in obj["entries"]
            ),
            claimed_weight=obj["claimed_weight"],
        )


@dataclass(frozen=True)
class RedactionMeta:
    certificate: AttributeCertificate
    redactor_sig: bytes
    approval: Optional[AggregatedApproval]

    def to_json(self) -> dict:
        return {
            "certificate": self.certificate.to_json(),
            "redactor_sig": self.redactor_sig.hex(),
            "approval": self.approval.to_json() if self.approval else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RedactionMeta":
        return cls(
            certificate=AttributeCertificate.from_json(obj["certificate"]),
            redactor_sig=bytes.fromhex(obj["redactor_sig"]),
            approval=AggregatedApproval.from_json(obj["approval"]) if obj["approval"] else None,
        )


@dataclass(frozen=True)
class RedactableTransaction:
    content: bytes
    policy: Policy
    ch_pk: int
    ch_sk: int  # public trapdoor, stored in the transaction by design
    ch_digest: ChameleonDigest
    owner_pk: bytes
    owner_sig: bytes
    redaction_meta: Optional[RedactionMeta] = None

    def to_json(self) -> dict:
        return {
            "type": "redactable",
            "content": self.content.hex(),
            "policy": self.policy.to_json(),
            "ch_pk": enc_scalar(self.ch_pk).hex(),
            "ch_sk": enc_scalar(self.ch_sk).hex(),
            "h": enc_scalar(self.ch_digest.h).hex(),
            "r": enc_scalar(self.ch_digest.r).hex(),
            "owner_pk": self.owner_pk.hex(),
            "owner_sig": self.owner_sig.hex(),
            "redaction_meta": self.redaction_meta.to_json() if self.redaction_meta else None,
        }


@dataclass(frozen=True)
class WitnessGroupRecord:
    """Election result embedded in the epoch block body."""

    epoch: int
    members: tuple  # ((pk, weight), ...) in ranking order
    collector: bytes
    ts_abs: int

    def __post_init__(self):
        if not self.members:
            raise LedgerError("witness group record without members")
        if self.collector not in self.weight_map:
            raise LedgerError("collector is not a group member")

    @property
    def weight_map(self) -> dict:
        return {pk: w for pk, w in self.members}

    @property
    def total_weight(self) -> int:
        return sum(w for _, w in self.members)

    def encode(self) -> bytes:
        return (
            enc_u64(self.epoch)
            + enc_seq(enc_bytes(pk) + enc_u64(w) for pk, w in self.members)
            + enc_bytes(self.collector)
            + enc_u64(self.ts_abs)
        )

    def to_json(self) -> dict:
        return {
            "type": "witness-group",
            "epoch": self.epoch,
            "members": [[pk.hex(), w] for pk, w in self.members],
            "collector": self.collector.hex(),
            "ts_abs": self.ts_abs,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WitnessGroupRecord":
        return cls(
            epoch=obj["epoch"],
            members=tuple((bytes.fromhex(pk), w) for pk, w in obj["members"]),
            collector=bytes.fromhex(obj["collector"]),
            ts_abs=obj["ts_abs"],
        )


Transaction = Union[ImmutableTransaction, RedactableTransaction, WitnessGroupRecord]


def tx_from_json(obj: dict) -> Transaction:
    kind = obj["type"]
    if kind == "immutable":
        return ImmutableTransaction(bytes.fromhex(obj["content"]))
    if kind == "witness-group":
        return WitnessGroupRecord.from_json(obj)
    if kind == "redactable":
        return RedactableTransaction(
            content=bytes.fromhex(obj["content"]),
            policy=parse_policy(obj["policy"]),
            ch_pk=int.from_bytes(bytes.fromhex(obj["ch_pk"]), "big"),
            ch_sk=int.from_bytes(bytes.fromhex(obj["ch_sk"]), "big"),
            ch_digest=ChameleonDigest(
                h=int.from_bytes(bytes.fromhex(obj["h"]), "big"),
                r=int.from_bytes(bytes.fromhex(obj["r"]), "big"),
            ),
            owner_pk=bytes.fromhex(obj["owner_pk"]),
            owner_sig=bytes.fromhex(obj["owner_sig"]),
            redaction_meta=RedactionMeta.from_json(obj["redaction_meta"])
            if obj.get("redaction_meta")
            else None,
        )
    raise LedgerError(f"unknown transaction type {kind!r}")


# -- canonical message domains ---------------------------------------------------

def chameleon_message(content: bytes, policy: Policy) -> bytes:
    """Message the chameleon hash (and owner signature) covers: (cn, P)."""
    return enc_bytes(content) + policy.encode()


def redactor_message(content: bytes, policy: Policy, cert: AttributeCertificate) -> bytes:
    """Message the redactor signs: new (cn, P) plus their certificate."""
    return chameleon_message(content, policy) + cert.encode()


@dataclass(frozen=True)
class TxIndex:
    block_slot: int
    position: int

    def encode(self) -> bytes:
        return enc_u64(self.block_slot) + enc_u64(self.position)

    def to_json(self) -> dict:
        return {"slot": self.block_slot, "pos": self.position}

    @classmethod
    def from_json(cls, obj: dict) -> "TxIndex":
        return cls(block_slot=obj["slot"], position=obj["pos"])


def vote_message(tx: RedactableTransaction, ind: TxIndex) -> bytes:
    """What witnesses sign: the redacted payload, its collision, and its slot.

    Binding ind and r prevents replaying an approval against another location
    or another collision of the same transaction.
    """
    if tx.redaction_meta is None:
        raise LedgerError("vote message requires redaction metadata")
    return (
        chameleon_message(tx.content, tx.policy)
        + enc_scalar(tx.ch_digest.h)
        + enc_scalar(tx.ch_digest.r)
        + tx.redaction_meta.certificate.encode()
        + enc_bytes(tx.redaction_meta.redactor_sig)
        + ind.encode()
    )


# -- transaction construction ------------------------------------------------------

def build_redactable_tx(
    owner_keys,
    content: bytes,
    policy: Policy,
    pp: GroupParams,
    rng,
) -> RedactableTransaction:
    """Owner-side constructor: fresh trapdoor pair, chameleon digest, signature."""
    if not content:
        raise LedgerError("empty transaction content")
    keys = ch_kgen(pp, rng)
    msg = chameleon_message(content, policy)
    ch_digest = ch_hash(pp, keys.pk, msg, rng)
    return RedactableTransaction(
        content=content,
        policy=policy,
        ch_pk=keys.pk,
        ch_sk=keys.sk,
        ch_digest=ch_digest,
        owner_pk=owner_keys.pk,
        owner_sig=ds_sign(msg, owner_keys.sk),
    )


# -- merkle tree --------------------------------------------------------------------

def leaf_digest(tx: Transaction) -> bytes:
    """Merkle leaf. Redactable leaves cover only the chameleon hash value, so a
    valid redaction can never move the leaf; randomness, certificates, and
    signatures are likewise excluded."""
    if isinstance(tx, ImmutableTransaction):
        return digest(tx.content)
    if isinstance(tx, RedactableTransaction):
        return digest(enc_scalar(tx.ch_digest.h))
    if isinstance(tx, WitnessGroupRecord):
        return digest(tx.encode())
    raise LedgerError(f"cannot hash {type(tx).__name__}")


def merkle_root(transactions, max_txs: int = DEFAULT_MAX_BLOCK_TXS) -> bytes:
    if not transactions:
        raise LedgerError("merkle tree over empty transaction list")
    if len(transactions) > max_txs:
        raise LedgerError(f"block overfull: {len(transactions)} > {max_txs}")
    level = [leaf_digest(tx) for tx in transactions]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])  # bitcoin-style odd-node duplication
        level = [digest(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


# -- blocks and proof of work ---------------------------------------------------------

@dataclass(frozen=True)
class Block:
    slot: int
    prev_hash: bytes
    merkle_root: bytes
    nonce: int
    transactions: tuple

    def header_bytes(self) -> bytes:
        return (
            enc_u64(self.slot)
            + self.prev_hash
            + self.merkle_root
            + enc_u64(self.nonce)
        )

    def header_hash(self) -> bytes:
        return digest(self.header_bytes())

    def to_json(self) -> dict:
        return {
            "slot": self.slot,
            "prev_hash": self.prev_hash.hex(),
            "merkle_root": self.merkle_root.hex(),
            "nonce": self.nonce,
            "transactions": [tx.to_json() for tx in self.transactions],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Block":
        return cls(
            slot=obj["slot"],
            prev_hash=bytes.fromhex(obj["prev_hash"]),
            merkle_root=bytes.fromhex(obj["merkle_root"]),
            nonce=obj["nonce"],
            transactions=tuple(tx_from_json(t) for t in obj["transactions"]),
        )


def pow_seal(
    slot: int,
    prev_hash: bytes,
    root: bytes,
    target: int,
    start_nonce: int = 0,
    max_trials: int = 1 << 32,
) -> int:
    """Sequential nonce search; deterministic for a given start_nonce."""
    if target <= 0:
        raise LedgerError("proof-of-work target must be positive")
    for nonce in range(start_nonce, start_nonce + max_trials):
        header = enc_u64(slot) + prev_hash + root + enc_u64(nonce)
        if digest_int(header) < target:
            return nonce
    raise LedgerError("nonce space exhausted")


def seal_block(slot: int, prev_hash: bytes, transactions, target: int) -> Block:
    root = merkle_root(transactions)
    nonce = pow_seal(slot, prev_hash, root, target)
    return Block(slot, prev_hash, root, nonce, tuple(transactions))


# -- chain ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Chain:
    pow_target: int
    ca_pk: bytes
    blocks: tuple
    ch_level: str = "standard"

    @property
    def pp(self) -> GroupParams:
        return ch_pgen(self.ch_level)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def head_at(self, slot: int) -> Block:
        """Chain head as of the given slot (last block with slot <= it)."""
        best = None
        for block in self.blocks:
            if block.slot <= slot:
                best = block
            else:
                break
        if best is None:
            raise LedgerError(f"no block at or before slot {slot}")
        return best

    def block_at_slot(self, slot: int) -> Optional[Block]:
        for block in self.blocks:
            if block.slot == slot:
                return block
        return None

    def tx_at(self, ind: TxIndex) -> Transaction:
        block = self.block_at_slot(ind.block_slot)
        if block is None or not 0 <= ind.position < len(block.transactions):
            raise LedgerError(f"no transaction at {ind}")
        return block.transactions[ind.position]

    def current_group(self) -> Optional[WitnessGroupRecord]:
        for block in reversed(self.blocks):
            for tx in reversed(block.transactions):
                if isinstance(tx, WitnessGroupRecord):
                    return tx
        return None

    def group_records(self) -> dict:
        records = {}
        for block in self.blocks:
            for tx in block.transactions:
                if isinstance(tx, WitnessGroupRecord):
                    records[tx.epoch] = tx
        return records

    def with_block(self, block: Block) -> "Chain":
        return replace(self, blocks=self.blocks + (block,))


def new_chain(pow_target: int, ca_pk: bytes, ch_level: str = "standard") -> Chain:
    genesis = seal_block(0, GENESIS_PREV_HASH, (ImmutableTransaction(b"genesis"),), pow_target)
    return Chain(pow_target=pow_target, ca_pk=ca_pk, blocks=(genesis,), ch_level=ch_level)


# -- validation -----------------------------------------------------------------------

def validate_redaction_meta(
    tx: RedactableTransaction,
    ind: TxIndex,
    group: Optional[WitnessGroupRecord],
    ca_pk: bytes,
) -> Verdict:
    """Structural redaction checks a syncing node can run from chain data alone:
    redactor signature, certificate, and the weighted group approval."""
    meta = tx.redaction_meta
    if meta is None:
        return reject("missing-meta")
    if not verify_certificate(ca_pk, meta.certificate):
        return reject("bad-cert")
    if not ds_verify(
        meta.redactor_sig,
        redactor_message(tx.content, tx.policy, meta.certificate),
        meta.certificate.subject_pk,
    ):
        return reject("bad-redactor-sig")
    if meta.approval is None:
        return reject("missing-approval")
    if group is None or meta.approval.epoch != group.epoch:
        return reject("stale-group")
    weights = group.weight_map
    message = vote_message(tx, ind)
    seen = set()
    total = 0
    for pk, sig in meta.approval.entries:
        if pk in seen:
            continue
        seen.add(pk)
        if pk not in weights:
            return reject("bad-witness-sig", witness=pk.hex())
        if not ds_verify(sig, message, pk):
            return reject("bad-witness-sig", witness=pk.hex())
        total += weights[pk]
    if total <= group.ts_abs:
        return reject("weight-not-exceeded", weight=total, threshold=group.ts_abs)
    return ACCEPT


def _validate_tx(
    tx: Transaction,
    ind: TxIndex,
    pp: GroupParams,
    ca_pk: bytes,
    groups: dict,
) -> Verdict:
    if isinstance(tx, (ImmutableTransaction, WitnessGroupRecord)):
        return ACCEPT
    if pow(pp.g, tx.ch_sk, pp.p) != tx.ch_pk:
        return reject("trapdoor-mismatch")
    msg = chameleon_message(tx.content, tx.policy)
    if not ch_verify(pp, tx.ch_pk, tx.ch_digest.h, tx.ch_digest.r, msg):
        return reject("ch-verify")
    if tx.redaction_meta is None:
        if not ds_verify(tx.owner_sig, msg, tx.owner_pk):
            return reject("owner-sig")
        return ACCEPT
    epoch = tx.redaction_meta.approval.epoch if tx.redaction_meta.approval else None
    return validate_redaction_meta(tx, ind, groups.get(epoch), ca_pk)


def validate_block(
    block: Block,
    prev_header: Optional[Block],
    target: int,
    pp: Optional[GroupParams] = None,
    ca_pk: bytes = b"",
    groups: Optional[dict] = None,
) -> Verdict:
    if prev_header is not None and block.prev_hash != prev_header.header_hash():
        return reject("bad-link")
    if digest_int(block.header_bytes()) >= target:
        return reject("bad-pow")
    if block.merkle_root != merkle_root(block.transactions):
        return reject("bad-merkle")
    pp = pp or ch_pgen("standard")
    groups = dict(groups or {})
    for pos, tx in enumerate(block.transactions):
        ind = TxIndex(block.slot, pos)
        verdict = _validate_tx(tx, ind, pp, ca_pk, groups)
        if not verdict:
            return reject("bad-tx", index=pos, cause=verdict.reason)
        if isinstance(tx, WitnessGroupRecord):
            groups[tx.epoch] = tx
    return ACCEPT


def validate_chain(chain: Chain) -> Verdict:
    if not chain.blocks:
        return reject("empty-chain", height=0)
    groups: dict = {}
    prev = None
    for height, block in enumerate(chain.blocks):
        if height == 0 and block.prev_hash != GENESIS_PREV_HASH:
            return reject("bad-link", height=0)
        if prev is not None and block.slot <= prev.slot:
            return reject("bad-slot-order", height=height)
        verdict = validate_block(
            block, prev, chain.pow_target, chain.pp, chain.ca_pk, groups
        )
        if not verdict:
            detail = dict(verdict.detail or {})
            detail["height"] = height
            return Verdict(False, verdict.reason, detail)
        for tx in block.transactions:
            if isinstance(tx, WitnessGroupRecord):
                groups[tx.epoch] = tx
        prev = block
    return ACCEPT


# -- redaction application ---------------------------------------------------------

def apply_redaction(
    chain: Chain,
    ind: TxIndex,
    new_tx: RedactableTransaction,
    validator: Callable[[RedactableTransaction, TxIndex, Chain], Verdict],
) -> Chain:
    """Replace the transaction at ind, leaving every block header untouched.

    The validator is the full redaction predicate; on rejection the chain is
    returned unchanged inside the raised error.
    """
    verdict = validator(new_tx, ind, chain)
    if not verdict:
        raise LedgerError(f"redaction rejected: {verdict.reason}")
    block = chain.block_at_slot(ind.block_slot)
    if block is None or not 0 <= ind.position < len(block.transactions):
        raise LedgerError(f"no transaction at {ind}")
    txs = list(block.transactions)
    txs[ind.position] = new_tx
    new_block = replace(block, transactions=tuple(txs))
    if new_block.merkle_root != merkle_root(new_block.transactions):
        raise LedgerError("redaction would move the merkle root")
    blocks = tuple(
        new_block if b.slot == ind.block_slot else b for b in chain.blocks
    )
    return replace(chain, blocks=blocks)
