"""The redaction protocol: requests, witness consensus, validation, accountability.

A redacted transaction is accepted only when every conjunct of the validation
predicate holds: the witness approval carries current-group signatures whose
summed weight strictly exceeds the threshold, the redactor's signature and
CA-issued certificate verify, the certificate's attributes match the policy
of the transaction being replaced, the chameleon collision verifies, and the
hash value (hence the Merkle leaf) is unchanged. Dropping any one conjunct
must flip the verdict, and each failure carries its own reason code.

The module also keeps the CA's account book: witness deposits, escrowed
processing fees, reporter rewards, and slashing. All amounts are abstract
integers; every flow conserves the total supply exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

from .crypto import ch_adapt, ch_verify, digest, ds_sign, ds_verify
from .ledger import (
    ACCEPT,
    AggregatedApproval,
    Chain,
    ImmutableTransaction,
    LedgerError,
    RedactableTransaction,
    RedactionMeta,
    TxIndex,
    Verdict,
    WitnessGroupRecord,
    chameleon_message,
    redactor_message,
    reject,
    vote_message,
)
from .policy import AttributeCertificate, Policy, match, verify_certificate


class RedactionError(ValueError):
    """Request construction failed; the reason is the first token of str()."""


# -- request construction ------------------------------------------------------

@dataclass(frozen=True)
class RedactionRequest:
    new_tx: RedactableTransaction
    ind: TxIndex
    fee: int

    @property
    def request_id(self) -> str:
        return digest(vote_message(self.new_tx, self.ind)).hex()[:16]

    def to_json(self) -> dict:
        return {
            "new_tx": self.new_tx.to_json(),
            "ind": self.ind.to_json(),
            "fee": self.fee,
        }


def make_request(
    chain: Chain,
    ind: TxIndex,
    new_content: bytes,
    new_policy: Optional[Policy],
    redactor_sk: int,
    cert: AttributeCertificate,
    fee: int,
) -> RedactionRequest:
    """Redactor-side: check authorization locally, compute the collision, sign."""
    if fee <= 0:
        raise RedactionError(f"bad-fee: processing fee must be positive, got {fee}")
    old_tx = chain.tx_at(ind)
    if not isinstance(old_tx, RedactableTransaction):
        raise RedactionError("wrong-tx-type: target transaction is not redactable")
    if not match(old_tx.policy, cert.attributes):
        raise RedactionError("not-authorized: attributes do not match the policy")
    policy = new_policy if new_policy is not None else old_tx.policy
    r_new = ch_adapt(
        chain.pp,
        old_tx.ch_sk,
        old_tx.ch_digest.h,
        old_tx.ch_digest.r,
        chameleon_message(old_tx.content, old_tx.policy),
        chameleon_message(new_content, policy),
    )
    sig = ds_sign(redactor_message(new_content, policy, cert), redactor_sk)
    new_tx = replace(
        old_tx,
        content=new_content,
        policy=policy,
        ch_digest=replace(old_tx.ch_digest, r=r_new),
        redaction_meta=RedactionMeta(certificate=cert, redactor_sig=sig, approval=None),
    )
    return RedactionRequest(new_tx=new_tx, ind=ind, fee=fee)


# -- witness review -------------------------------------------------------------

def review_request(req: RedactionRequest, chain: Chain, ca_pk: bytes) -> Verdict:
    """Witness-side checks, in order; the first failure is the verdict."""
    try:
        old_tx = chain.tx_at(req.ind)
    except LedgerError:
        return reject("no-such-tx")
    if not isinstance(old_tx, RedactableTransaction):
        return reject("immutable-target")
    new_tx = req.new_tx
    meta = new_tx.redaction_meta
    if meta is None:
        return reject("bad-redactor-sig")
    if not verify_certificate(ca_pk, meta.certificate):
        return reject("bad-cert")
    if not match(old_tx.policy, meta.certificate.attributes):
        return reject("policy-mismatch")
    if not ds_verify(
        meta.redactor_sig,
        redactor_message(new_tx.content, new_tx.policy, meta.certificate),
        meta.certificate.subject_pk,
    ):
        return reject("bad-redactor-sig")
    if new_tx.ch_digest.h != old_tx.ch_digest.h or new_tx.ch_pk != old_tx.ch_pk:
        return reject("h-mismatch")
    if not ch_verify(
        chain.pp,
        new_tx.ch_pk,
        new_tx.ch_digest.h,
        new_tx.ch_digest.r,
        chameleon_message(new_tx.content, new_tx.policy),
    ):
        return reject("bad-collision")
    return ACCEPT


# -- voting and collection ---------------------------------------------------------

@dataclass(frozen=True)
class Vote:
    witness_pk: bytes
    sig: bytes

    def to_json(self) -> dict:
        return {"witness_pk": self.witness_pk.hex(), "sig": self.sig.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "Vote":
        return cls(bytes.fromhex(obj["witness_pk"]), bytes.fromhex(obj["sig"]))


def cast_vote(witness_keys, req: RedactionRequest) -> Vote:
    sig = ds_sign(vote_message(req.new_tx, req.ind), witness_keys.sk)
    return Vote(witness_pk=witness_keys.pk, sig=sig)


class Collector:
    """Vote aggregation state for one request, run by the collector witness.

    Emits an approval the moment the deduplicated weight strictly exceeds the
    group threshold; reports failure once the deadline slot passes without it.
    """

    def __init__(self, req: RedactionRequest, group: WitnessGroupRecord, deadline_slot: int):
        self.req = req
        self.group = group
        self.deadline_slot = deadline_slot
        self.message = vote_message(req.new_tx, req.ind)
        self.votes: dict = {}
        self.audit: list = []

    @property
    def weight(self) -> int:
        weights = self.group.weight_map
        return sum(weights[pk] for pk in self.votes)

    def add_vote(self, vote: Vote) -> str:
        weights = self.group.weight_map
        if vote.witness_pk not in weights:
            self.audit.append(("unknown-witness", vote.witness_pk.hex()))
        elif not ds_verify(vote.sig, self.message, vote.witness_pk):
            self.audit.append(("bad-vote-signature", vote.witness_pk.hex()))
        elif vote.witness_pk in self.votes:
            pass  # duplicate: counted once, not an error
        else:
            self.votes[vote.witness_pk] = vote.sig
        return self.status()

    def status(self, now_slot: Optional[int] = None) -> str:
        if self.weight > self.group.ts_abs:
            return "approved"
        if now_slot is not None and now_slot > self.deadline_slot:
            return "failed"
        return "pending"

    def approval(self) -> AggregatedApproval:
        if self.status() != "approved":
            raise RedactionError("threshold not exceeded; no approval to emit")
        order = {pk: i for i, (pk, _) in enumerate(self.group.members)}
        entries = tuple(
            (pk, self.votes[pk]) for pk in sorted(self.votes, key=order.__getitem__)
        )
        return AggregatedApproval(
            epoch=self.group.epoch, entries=entries, claimed_weight=self.weight
        )


def collect(
    votes: Iterable[Vote], group: WitnessGroupRecord, req: RedactionRequest
) -> tuple:
    """One-shot collection: ("approved", approval) or ("pending", None)."""
    state = Collector(req, group, deadline_slot=0)
    for vote in votes:
        if state.add_vote(vote) == "approved":
            return "approved", state.approval()
    return "pending", None


def approved_tx(req: RedactionRequest, approval: AggregatedApproval) -> RedactableTransaction:
    return replace(
        req.new_tx, redaction_meta=replace(req.new_tx.redaction_meta, approval=approval)
    )


# -- the full validation predicate ----------------------------------------------------

def validate_redacted_tx(
    new_tx: RedactableTransaction,
    ind: TxIndex,
    chain: Chain,
    group: Optional[WitnessGroupRecord],
    ca_pk: bytes,
) -> Verdict:
    """Every full node runs this before replacing a transaction in place."""
    try:
        old_tx = chain.tx_at(ind)
    except LedgerError:
        return reject("no-such-tx")
    if not isinstance(old_tx, RedactableTransaction):
        return reject("immutable-target")
    meta = new_tx.redaction_meta
    if meta is None:
        return reject("bad-redactor-sig")
    if (
        new_tx.ch_digest.h != old_tx.ch_digest.h
        or new_tx.ch_pk != old_tx.ch_pk
        or new_tx.ch_sk != old_tx.ch_sk
        or new_tx.owner_pk != old_tx.owner_pk
    ):
        return reject("h-mismatch")
    if not verify_certificate(ca_pk, meta.certificate):
        return reject("bad-cert")
    if not match(old_tx.policy, meta.certificate.attributes):
        return reject("policy-mismatch")
    if not ds_verify(
        meta.redactor_sig,
        redactor_message(new_tx.content, new_tx.policy, meta.certificate),
        meta.certificate.subject_pk,
    ):
        return reject("bad-redactor-sig")
    if not ch_verify(
        chain.pp,
        new_tx.ch_pk,
        new_tx.ch_digest.h,
        new_tx.ch_digest.r,
        chameleon_message(new_tx.content, new_tx.policy),
    ):
        return reject("bad-collision")
    if meta.approval is None:
        return reject("weight-not-exceeded", weight=0)
    if group is None or meta.approval.epoch != group.epoch:
        return reject("stale-group")
    weights = group.weight_map
    message = vote_message(new_tx, ind)
    seen = set()
    total = 0
    for pk, sig in meta.approval.entries:
        if pk in seen:
            continue
        seen.add(pk)
        if pk not in weights or not ds_verify(sig, message, pk):
            return reject("bad-witness-sig", witness=pk.hex())
        total += weights[pk]
    if total <= group.ts_abs:
        return reject("weight-not-exceeded", weight=total, threshold=group.ts_abs)
    return ACCEPT


def chain_validator(group: Optional[WitnessGroupRecord], ca_pk: bytes):
    """Adapter handed to ledger.apply_redaction."""

    def predicate(tx, ind, chain):
        return validate_redacted_tx(tx, ind, chain, group, ca_pk)

    return predicate


# -- accountability economy -------------------------------------------------------------

@dataclass
class EpochAccount:
    record: WitnessGroupRecord
    start_slot: int
    end_slot: Optional[int] = None  # set when the next group takes office
    slashed: bool = False
    settled: bool = False


@dataclass
class CaLedger:
    """CA-held integer accounting: balances, deposits, fee escrow, burn pile."""

    deposit_amount: int = 100
    unlock_delay: int = 40  # slots after epoch end until deposits release
    reporter_share_num: int = 1
    reporter_share_den: int = 2
    balances: dict = field(default_factory=dict)
    deposits: dict = field(default_factory=dict)  # (pk, epoch) -> amount
    escrow: dict = field(default_factory=dict)  # request_id -> (fee, payer, epoch)
    burned: int = 0
    epochs: dict = field(default_factory=dict)  # epoch -> EpochAccount
    processed_evidence: set = field(default_factory=set)

    # -- supply bookkeeping --

    def fund(self, pk: bytes, amount: int) -> None:
        self.balances[pk] = self.balances.get(pk, 0) + amount

    def balance(self, pk: bytes) -> int:
        return self.balances.get(pk, 0)

    def total_supply(self) -> int:
        return (
            sum(self.balances.values())
            + sum(self.deposits.values())
            + sum(fee for fee, _, _ in self.escrow.values())
            + self.burned
        )

    # -- deposits --

    def post_deposit(self, pk: bytes, epoch: int) -> bool:
        if self.balance(pk) < self.deposit_amount:
            return False
        if (pk, epoch) in self.deposits:
            return True
        self.balances[pk] -= self.deposit_amount
        self.deposits[(pk, epoch)] = self.deposit_amount
        return True

    def deposits_for_epoch(self, epoch: int) -> dict:
        return {pk: amt for (pk, e), amt in self.deposits.items() if e == epoch}

    def register_group(self, record: WitnessGroupRecord, start_slot: int) -> None:
        self.epochs[record.epoch] = EpochAccount(record=record, start_slot=start_slot)
        previous = self.epochs.get(record.epoch - 1)
        if previous is not None and previous.end_slot is None:
            previous.end_slot = start_slot
        # deposits posted by losing candidates come straight back
        members = set(record.weight_map)
        for (pk, e), amt in list(self.deposits.items()):
            if e == record.epoch and pk not in members:
                del self.deposits[(pk, e)]
                self.fund(pk, amt)

    # -- fees --

    def escrow_fee(self, request_id: str, payer: bytes, fee: int, epoch: int) -> None:
        if self.balance(payer) < fee:
            raise RedactionError("insufficient-balance: cannot escrow fee")
        if request_id in self.escrow:
            raise RedactionError("duplicate-request-id")
        self.balances[payer] -= fee
        self.escrow[request_id] = (fee, payer, epoch)

    def refund_fee(self, request_id: str) -> int:
        fee, payer, _ = self.escrow.pop(request_id)
        self.fund(payer, fee)
        return fee

    def _escrow_for_epoch(self, epoch: int) -> list:
        return [rid for rid, (_, _, e) in self.escrow.items() if e == epoch]


@dataclass(frozen=True)
class Report:
    reporter_pk: bytes
    tx: RedactableTransaction
    ind: TxIndex
    claim: str

    @property
    def evidence_id(self) -> str:
        return digest(vote_message(self.tx, self.ind)).hex()

    def to_json(self) -> dict:
        return {
            "reporter_pk": self.reporter_pk.hex(),
            "tx": self.tx.to_json(),
            "ind": self.ind.to_json(),
            "claim": self.claim,
        }


@dataclass(frozen=True)
class Punishment:
    epoch: int
    slashed_total: int
    reporter_reward: int
    burned: int
    refunded_fees: int


def file_report(reporter_pk: bytes, tx: RedactableTransaction, ind: TxIndex, claim: str) -> Report:
    meta = tx.redaction_meta
    if meta is None or meta.approval is None:
        raise RedactionError("evidence must carry redactor signature and approval")
    return Report(reporter_pk=reporter_pk, tx=tx, ind=ind, claim=claim)


def process_report(
    ca: CaLedger,
    report: Report,
    malicious_oracle: Callable[[Report], bool],
) -> tuple:
    """CA judgement: ("slashed", Punishment) or ("dismissed"/"dismissed-duplicate", None).

    The oracle stands in for the CA's out-of-band investigation; the protocol
    itself never defines a detection algorithm.
    """
    if report.evidence_id in ca.processed_evidence:
        return "dismissed-duplicate", None
    ca.processed_evidence.add(report.evidence_id)
    if not malicious_oracle(report):
        return "dismissed", None
    epoch = report.tx.redaction_meta.approval.epoch
    account = ca.epochs.get(epoch)
    if account is None or account.slashed:
        return "dismissed", None
    account.slashed = True
    held = ca.deposits_for_epoch(epoch)
    total = sum(held.values())
    for pk in held:
        del ca.deposits[(pk, epoch)]
    reward = total * ca.reporter_share_num // ca.reporter_share_den
    ca.fund(report.reporter_pk, reward)
    ca.burned += total - reward
    refunded = 0
    for rid in ca._escrow_for_epoch(epoch):
        refunded += ca.refund_fee(rid)
    return "slashed", Punishment(
        epoch=epoch,
        slashed_total=total,
        reporter_reward=reward,
        burned=total - reward,
        refunded_fees=refunded,
    )


def settle_epoch(ca: CaLedger, epoch: int, now_slot: int) -> dict:
    """Return deposits and split the epoch's fees pro-rata by weight.

    The integer remainder of the split goes to the collector. Only callable
    once the unlock delay after the epoch's end has elapsed.
    """
    account = ca.epochs.get(epoch)
    if account is None:
        raise RedactionError(f"unknown epoch {epoch}")
    if account.slashed:
        raise RedactionError("already-slashed: nothing to settle")
    if account.settled:
        raise RedactionError("already-settled")
    if account.end_slot is None or now_slot < account.end_slot + ca.unlock_delay:
        raise RedactionError("too-early: deposits are still locked")
    record = account.record
    payouts: dict = {}
    for pk, amount in ca.deposits_for_epoch(epoch).items():
        del ca.deposits[(pk, epoch)]
        ca.fund(pk, amount)
        payouts[pk] = payouts.get(pk, 0) + amount
    fees = 0
    for rid in ca._escrow_for_epoch(epoch):
        fee, _, _ = ca.escrow.pop(rid)
        fees += fee
    total_weight = record.total_weight
    distributed = 0
    for pk, weight in record.members:
        share = fees * weight // total_weight
        ca.fund(pk, share)
        payouts[pk] = payouts.get(pk, 0) + share
        distributed += share
    remainder = fees - distributed
    if remainder:
        ca.fund(record.collector, remainder)
        payouts[record.collector] = payouts.get(record.collector, 0) + remainder
    account.settled = True
    return payouts
