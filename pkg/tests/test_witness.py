"""Lottery round trips, forgery resistance, proportionality, group formation."""

import random
import statistics
from dataclasses import replace

import pytest

from efrb.crypto import ds_kgen
from efrb.ledger import ImmutableTransaction, new_chain, seal_block
from efrb.witness import (
    SelConfig,
    SlotInterval,
    WitnessCandidate,
    WitnessError,
    WitnessProofEntry,
    active_collector,
    form_group,
    replace_collector,
    sel,
    select_collector,
    vsel,
)

EASY_TARGET = 1 << 252
TV = 1 << 248  # puzzle success probability 2^-8
MAX_TV = 1 << 256


def grown_chain(slots, seed=0):
    """One block per slot so every slot has a distinct head."""
    chain = new_chain(EASY_TARGET, b"")
    for s in range(1, slots + 1):
        tx = ImmutableTransaction(f"s{seed}:{s}".encode())
        chain = chain.with_block(seal_block(s, chain.head.header_hash(), (tx,), EASY_TARGET))
    return chain


@pytest.fixture(scope="module")
def chain():
    return grown_chain(12)


def pk_for(i):
    return ds_kgen(random.Random(1000 + i)).pk


# -- sel ------------------------------------------------------------------------

def test_sel_empty_window_yields_zero(chain):
    cand = sel(chain, TV, SlotInterval(5, 4), pk_for(0), 100, random.Random(0))
    assert cand.weight == 0 and cand.proof == ()


def test_sel_max_target_wins_every_trial(chain):
    cand = sel(chain, MAX_TV, SlotInterval(1, 4), pk_for(0), 40, random.Random(0))
    assert cand.weight == 40
    assert len(set(cand.proof)) == 40


def test_sel_expected_weight_binomial(chain):
    sp = SlotInterval(1, 10)
    weights = []
    for seed in range(50):
        cand = sel(chain, TV, sp, pk_for(seed), 10_000, random.Random(seed))
        weights.append(cand.weight)
    mean = statistics.mean(weights)
    assert 27.3 <= mean <= 50.8  # 10000 * 2^-8 = 39.06, +-30%


def test_sel_weight_proportional_to_budget(chain):
    sp = SlotInterval(1, 10)
    budgets = [2500, 5000, 10000]
    means = []
    for budget in budgets:
        ws = [
            sel(chain, TV, sp, pk_for(s), budget, random.Random(500 + s)).weight
            for s in range(50)
        ]
        means.append(statistics.mean(ws))
    # least-squares slope vs the exact per-trial probability
    n = len(budgets)
    bx = statistics.mean(budgets)
    by = statistics.mean(means)
    slope = sum((b - bx) * (m - by) for b, m in zip(budgets, means)) / sum(
        (b - bx) ** 2 for b in budgets
    )
    expected = 2**-8
    assert abs(slope - expected) / expected < 0.15


# -- vsel -----------------------------------------------------------------------

def test_vsel_accepts_honest_output(chain):
    sp = SlotInterval(1, 10)
    for seed in range(30):
        cand = sel(chain, TV, sp, pk_for(seed), 4000, random.Random(seed))
        assert vsel(cand, sp, TV, chain)


def test_vsel_rejects_inflated_weight(chain):
    sp = SlotInterval(1, 10)
    cand = sel(chain, MAX_TV, sp, pk_for(1), 50, random.Random(1))
    assert not vsel(replace(cand, weight=cand.weight + 1), sp, TV, chain)


def test_vsel_rejects_duplicated_entry(chain):
    sp = SlotInterval(1, 10)
    cand = sel(chain, MAX_TV, sp, pk_for(1), 50, random.Random(1))
    padded = replace(cand, proof=cand.proof + (cand.proof[0],), weight=cand.weight + 1)
    assert not vsel(padded, sp, MAX_TV, chain)


def test_vsel_rejects_foreign_head_hash(chain):
    sp = SlotInterval(1, 10)
    cand = sel(chain, MAX_TV, sp, pk_for(2), 50, random.Random(2))
    wrong_ph = chain.head_at(cand.proof[0].tm - 1).header_hash()
    forged = replace(cand.proof[0], ph=wrong_ph)
    assert not vsel(replace(cand, proof=(forged,) + cand.proof[1:]), sp, MAX_TV, chain)


def forge_field(entry, field, tv):
    """Smallest single-field change that is not itself a winning ticket.

    Re-rolling mt/ne/pk re-enters the lottery, so a blind +1 bump can land on
    another legitimate solution; a forgery is a value whose puzzle fails.
    """
    from efrb.crypto import digest_int

    for delta in range(1, 10_000):
        if field == "mt":
            mutant = replace(entry, mt=(int.from_bytes(entry.mt, "big") ^ delta).to_bytes(32, "big"))
        elif field == "ne":
            mutant = replace(entry, ne=entry.ne ^ delta)
        else:
            mutant = replace(entry, pk=bytes([entry.pk[0]]) + (int.from_bytes(entry.pk[1:], "big") ^ delta).to_bytes(32, "big"))
        if digest_int(mutant.puzzle_bytes()) >= tv:
            return mutant
    raise AssertionError("no failing mutant found")


def test_vsel_single_field_mutations_all_fail(chain):
    sp = SlotInterval(1, 10)
    for seed in range(10):
        cand = sel(chain, TV, sp, pk_for(seed), 4000, random.Random(300 + seed))
        assert cand.weight > 0
        for k, entry in enumerate(cand.proof):
            mutants = [
                # chain-bound fields: any change breaks the head binding
                replace(entry, tm=entry.tm + 1),
                replace(entry, tm=sp.end + 1),
                replace(entry, ph=bytes([entry.ph[0] ^ 1]) + entry.ph[1:]),
                # lottery-bound fields: forge a losing ticket per field
                forge_field(entry, "mt", TV),
                forge_field(entry, "ne", TV),
                forge_field(entry, "pk", TV),
            ]
            for mutant in mutants:
                proof = cand.proof[:k] + (mutant,) + cand.proof[k + 1:]
                assert not vsel(replace(cand, proof=proof), sp, TV, chain)


def test_sel_vsel_round_trip_many_configs():
    rng = random.Random(11)
    for trial in range(20):
        slots = rng.randrange(4, 10)
        chain = grown_chain(slots, seed=trial)
        sp = SlotInterval(1, slots)
        tv = 1 << rng.randrange(248, 256)
        cand = sel(chain, tv, sp, pk_for(trial), rng.randrange(100, 2000), random.Random(trial))
        assert vsel(cand, sp, tv, chain)


# -- group formation ---------------------------------------------------------------

def make_candidate(i, weight):
    pk = pk_for(i)
    proof = tuple(
        WitnessProofEntry(tm=1, ph=b"\x00" * 32, mt=b"\x00" * 32, ne=j, pk=pk)
        for j in range(weight)
    )
    return WitnessCandidate(pk=pk, weight=weight, proof=proof)


CONFIG = SelConfig(tv=TV, epoch_length=20, sp_length=4, group_size=3)


def test_form_group_keeps_top_weights():
    cands = [make_candidate(i, w) for i, w in enumerate([5, 9, 2, 7, 4])]
    deposits = {c.pk: 100 for c in cands}
    record = form_group(cands, 3, deposits, CONFIG, epoch=0)
    assert [w for _, w in record.members] == [9, 7, 5]
    assert record.collector == cands[1].pk
    assert record.ts_abs == CONFIG.ts_abs(21) == 14


def test_form_group_tie_breaks_on_pk():
    cands = [make_candidate(i, 5) for i in range(4)]
    deposits = {c.pk: 100 for c in cands}
    record = form_group(cands, 2, deposits, CONFIG, epoch=0)
    expected = sorted(c.pk for c in cands)[:2]
    assert [pk for pk, _ in record.members] == expected


def test_form_group_excludes_missing_deposit():
    cands = [make_candidate(i, w) for i, w in enumerate([5, 9, 2])]
    deposits = {cands[0].pk: 100, cands[2].pk: 100}
    record = form_group(cands, 3, deposits, CONFIG, epoch=0)
    assert cands[1].pk not in record.weight_map


def test_form_group_empty_is_error():
    with pytest.raises(WitnessError):
        form_group([], 3, {}, CONFIG, epoch=0)
    cand = make_candidate(0, 5)
    with pytest.raises(WitnessError):
        form_group([cand], 3, {}, CONFIG, epoch=0)  # no deposit posted


def test_form_group_deterministic():
    cands = [make_candidate(i, w) for i, w in enumerate([5, 9, 2, 7])]
    deposits = {c.pk: 100 for c in cands}
    a = form_group(list(cands), 3, deposits, CONFIG, epoch=1)
    b = form_group(list(reversed(cands)), 3, deposits, CONFIG, epoch=1)
    assert a == b


# -- collectors ---------------------------------------------------------------------

def test_select_collector_max_weight_then_pk():
    a, b = pk_for(1), pk_for(2)
    lo, hi = min(a, b), max(a, b)
    assert select_collector([(a, 5), (b, 3)]) == a
    assert select_collector([(lo, 5), (hi, 5)]) == lo
    assert select_collector([(a, 7)]) == a


def test_replace_collector_walks_ranking():
    members = [(pk_for(i), w) for i, w in enumerate([5, 3, 2])]
    members.sort(key=lambda m: (-m[1], m[0]))
    from efrb.ledger import WitnessGroupRecord

    record = WitnessGroupRecord(
        epoch=0, members=tuple(members), collector=members[0][0], ts_abs=7
    )
    flagged = frozenset()
    nxt, flagged = replace_collector(record, flagged, members[0][0])
    assert nxt == members[1][0]
    nxt, flagged = replace_collector(record, flagged, members[1][0])
    assert nxt == members[2][0]
    with pytest.raises(WitnessError, match="dissolved"):
        replace_collector(record, flagged, members[2][0])
    assert active_collector(record, flagged | {members[2][0]}) is None


def test_replace_collector_requires_current():
    members = [(pk_for(i), w) for i, w in enumerate([5, 3])]
    members.sort(key=lambda m: (-m[1], m[0]))
    from efrb.ledger import WitnessGroupRecord

    record = WitnessGroupRecord(
        epoch=0, members=tuple(members), collector=members[0][0], ts_abs=6
    )
    with pytest.raises(WitnessError):
        replace_collector(record, frozenset(), members[1][0])


# -- config -------------------------------------------------------------------------

def test_selconfig_validation():
    with pytest.raises(WitnessError):
        SelConfig(tv=TV, epoch_length=10, sp_length=11, group_size=3)
    with pytest.raises(WitnessError):
        SelConfig(tv=TV, epoch_length=10, sp_length=2, group_size=3, ts_num=1, ts_den=3)
    with pytest.raises(WitnessError):
        SelConfig(tv=TV, epoch_length=10, sp_length=2, group_size=3, ts_num=3, ts_den=3)
    with pytest.raises(WitnessError):
        SelConfig(tv=0, epoch_length=10, sp_length=2, group_size=3)
    cfg = SelConfig(tv=TV, epoch_length=10, sp_length=2, group_size=3)
    with pytest.raises(WitnessError):
        cfg.check_against_pow(TV)  # equal difficulty: not easier
    with pytest.raises(WitnessError):
        cfg.check_against_pow(EASY_TARGET)  # block puzzle easier than witness
    cfg.check_against_pow(1 << 240)
    assert cfg.window(2) == SlotInterval(20, 21)


def test_ts_abs_matches_worked_example():
    cfg = SelConfig(tv=TV, epoch_length=10, sp_length=2, group_size=3)
    assert cfg.ts_abs(10) == 7  # ceil(20/3)


def test_candidate_json_round_trip(chain):
    cand = sel(chain, MAX_TV, SlotInterval(1, 3), pk_for(5), 9, random.Random(5))
    assert WitnessCandidate.from_json(cand.to_json()) == cand
