"""Witness-group lottery: reduced-difficulty puzzles, verification, formation.

Candidates earn one unit of voting weight per puzzle solved during the
election window; the puzzle is the block-producer puzzle at a moderate target
tv (strictly easier than the chain's PoW target), so hash power maps linearly
onto expected weight. A proof entry references the chain head as of its slot:
entry.ph must equal the hash of that head's header, which is what the
verifier recomputes. Entries behave as a set, so replaying one solution twice
cannot inflate weight.

The unbounded search loop is replaced by an explicit trial budget standing in
for a node's hash power; the simulator needs a deterministic power knob.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .encoding import enc_u64
from .ledger import Chain, LedgerError, WitnessGroupRecord
from .crypto import digest_int


class WitnessError(ValueError):
    """Election misuse or an epoch without any eligible witness."""


@dataclass(frozen=True)
class SlotInterval:
    """Inclusive slot range [start, end]."""

    start: int
    end: int

    def __contains__(self, slot: int) -> bool:
        return self.start <= slot <= self.end

    def __len__(self) -> int:
        return max(0, self.end - self.start + 1)

    def slots(self) -> range:
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class SelConfig:
    tv: int
    epoch_length: int  # slots between elections
    sp_length: int  # election window, in slots
    group_size: int  # member cap per group
    ts_num: int = 2
    ts_den: int = 3

    def __post_init__(self):
        if not 0 < self.sp_length <= self.epoch_length:
            raise WitnessError("window must fit inside the epoch")
        if not (2 * self.ts_num >= self.ts_den and self.ts_num < self.ts_den):
            raise WitnessError("threshold fraction must satisfy 1/2 <= ts < 1")
        if self.tv <= 0:
            raise WitnessError("puzzle target must be positive")

    def check_against_pow(self, pow_target: int) -> None:
        if self.tv <= pow_target:
            raise WitnessError("witness puzzles must be easier than block PoW")

    def window(self, epoch: int) -> SlotInterval:
        start = self.epoch_length * epoch
        return SlotInterval(start, start + self.sp_length - 1)

    def ts_abs(self, total_weight: int) -> int:
        return -(-self.ts_num * total_weight // self.ts_den)


@dataclass(frozen=True)
class WitnessProofEntry:
    tm: int
    ph: bytes
    mt: bytes
    ne: int
    pk: bytes

    def puzzle_bytes(self) -> bytes:
        return enc_u64(self.tm) + self.ph + self.mt + enc_u64(self.ne) + self.pk

    def to_json(self) -> dict:
        return {
            "tm": self.tm,
            "ph": self.ph.hex(),
            "mt": self.mt.hex(),
            "ne": self.ne,
            "pk": self.pk.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WitnessProofEntry":
        return cls(
            tm=obj["tm"],
            ph=bytes.fromhex(obj["ph"]),
            mt=bytes.fromhex(obj["mt"]),
            ne=obj["ne"],
            pk=bytes.fromhex(obj["pk"]),
        )


@dataclass(frozen=True)
class WitnessCandidate:
    pk: bytes
    weight: int
    proof: tuple

    def to_json(self) -> dict:
        return {
            "pk": self.pk.hex(),
            "weight": self.weight,
            "proof": [e.to_json() for e in self.proof],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WitnessCandidate":
        return cls(
            pk=bytes.fromhex(obj["pk"]),
            weight=obj["weight"],
            proof=tuple(WitnessProofEntry.from_json(e) for e in obj["proof"]),
        )


def sel(
    chain: Chain,
    tv: int,
    sp: SlotInterval,
    pk: bytes,
    trial_budget: int,
    rng,
) -> WitnessCandidate:
    """Run the lottery: spread trials round-robin over the window's slots."""
    entries: list = []
    seen = set()
    heads: dict = {}
    width = len(sp)
    if width == 0 or trial_budget <= 0:
        return WitnessCandidate(pk=pk, weight=0, proof=())
    for i in range(trial_budget):
        tm = sp.start + i % width
        if tm not in heads:
            try:
                head = chain.head_at(tm)
            except LedgerError:
                heads[tm] = None
            else:
                heads[tm] = (head.header_hash(), head.merkle_root)
        cached = heads[tm]
        if cached is None:
            continue
        ph, mt = cached
        ne = rng.randrange(1 << 64)
        entry = WitnessProofEntry(tm=tm, ph=ph, mt=mt, ne=ne, pk=pk)
        if digest_int(entry.puzzle_bytes()) < tv and entry not in seen:
            seen.add(entry)
            entries.append(entry)
    return WitnessCandidate(pk=pk, weight=len(entries), proof=tuple(entries))


def vsel(candidate: WitnessCandidate, sp: SlotInterval, tv: int, chain: Chain) -> bool:
    """Verify a lottery result: 1 iff exactly `weight` distinct valid entries."""
    valid = 0
    for entry in set(candidate.proof):
        if entry.tm not in sp:
            continue
        if digest_int(entry.puzzle_bytes()) >= tv:
            continue
        try:
            head = chain.head_at(entry.tm)
        except LedgerError:
            continue
        if entry.ph != head.header_hash():
            continue
        valid += 1
    return valid == candidate.weight


def form_group(
    candidates: Iterable[WitnessCandidate],
    group_size: int,
    deposits: dict,
    config: SelConfig,
    epoch: int,
) -> WitnessGroupRecord:
    """Rank deposit-backed candidates by weight (ties: smaller pk encoding)."""
    eligible = [
        c for c in candidates if c.weight > 0 and deposits.get(c.pk, 0) > 0
    ]
    if not eligible:
        raise WitnessError("no eligible witness candidates this epoch")
    eligible.sort(key=lambda c: (-c.weight, c.pk))
    chosen = eligible[:group_size]
    members = tuple((c.pk, c.weight) for c in chosen)
    record = WitnessGroupRecord(
        epoch=epoch,
        members=members,
        collector=select_collector(members),
        ts_abs=config.ts_abs(sum(w for _, w in members)),
    )
    return record


def select_collector(members) -> bytes:
    """Highest weight wins; ties go to the smaller pk encoding."""
    return min(members, key=lambda m: (-m[1], m[0]))[0]


def replace_collector(
    record: WitnessGroupRecord,
    flagged: frozenset,
    misbehaving: bytes,
) -> tuple:
    """Rotate out a misbehaving collector. Returns (new_collector, new_flagged);
    raises once every member has been flagged (the group dissolves)."""
    current = select_collector(
        [(pk, w) for pk, w in record.members if pk not in flagged]
    ) if len(flagged) < len(record.members) else None
    if current != misbehaving:
        raise WitnessError("only the current collector can be replaced")
    new_flagged = flagged | {misbehaving}
    remaining = [(pk, w) for pk, w in record.members if pk not in new_flagged]
    if not remaining:
        raise WitnessError("witness group dissolved: every member flagged")
    return select_collector(remaining), new_flagged


def active_collector(record: WitnessGroupRecord, flagged: frozenset) -> Optional[bytes]:
    remaining = [(pk, w) for pk, w in record.members if pk not in flagged]
    if not remaining:
        return None
    return select_collector(remaining)
