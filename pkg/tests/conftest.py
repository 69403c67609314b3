"""Shared protocol fixtures: a small chain with one group and one redactable tx."""

import random
from dataclasses import dataclass, replace

import pytest

from efrb.crypto import ch_pgen, ds_kgen
from efrb.ledger import (
    Chain,
    ImmutableTransaction,
    TxIndex,
    WitnessGroupRecord,
    build_redactable_tx,
    new_chain,
    seal_block,
)
from efrb.policy import AttributeSet, issue_certificate, parse_policy
from efrb.redaction import Collector, approved_tx, cast_vote, make_request

EASY_TARGET = 1 << 252
PP = ch_pgen("standard")


@dataclass
class ProtocolBed:
    """One owner, one authorized redactor, a 3-member group with weights 5/3/2."""

    ca: object
    owner: object
    redactor: object
    cert: object
    witnesses: list  # [(keypair, weight)]
    record: WitnessGroupRecord
    chain: Chain
    ind: TxIndex
    tx: object

    def request(self, new_content=b"[removed]", new_policy=None, fee=10, cert=None):
        return make_request(
            self.chain,
            self.ind,
            new_content,
            new_policy,
            self.redactor.sk,
            cert or self.cert,
            fee,
        )

    def approve(self, req, voters=None):
        state = Collector(req, self.record, deadline_slot=10)
        chosen = self.witnesses if voters is None else [self.witnesses[i] for i in voters]
        for kp, _ in chosen:
            state.add_vote(cast_vote(kp, req))
        return approved_tx(req, state.approval())


def build_bed(seed=0, policy_text='"Doctor"', redactor_attrs=("Doctor",)):
    rng = random.Random(9000 + seed)
    ca = ds_kgen(rng)
    owner = ds_kgen(rng)
    redactor = ds_kgen(rng)
    cert = issue_certificate(ca.sk, redactor.pk, AttributeSet(redactor_attrs))

    witness_keys = [ds_kgen(rng) for _ in range(3)]
    weights = [5, 3, 2]
    members = sorted(zip((k.pk for k in witness_keys), weights), key=lambda m: (-m[1], m[0]))
    record = WitnessGroupRecord(
        epoch=0, members=tuple(members), collector=members[0][0], ts_abs=7
    )

    tx = build_redactable_tx(owner, b"private detail", parse_policy(policy_text), PP, rng)
    chain = new_chain(EASY_TARGET, ca.pk)
    block = seal_block(1, chain.head.header_hash(), (record, tx), EASY_TARGET)
    chain = chain.with_block(block)
    return ProtocolBed(
        ca=ca,
        owner=owner,
        redactor=redactor,
        cert=cert,
        witnesses=list(zip(witness_keys, weights)),
        record=record,
        chain=chain,
        ind=TxIndex(block_slot=1, position=1),
        tx=tx,
    )


@pytest.fixture()
def bed():
    return build_bed()
