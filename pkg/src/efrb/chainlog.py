"""Append-plus-patch chain log: sealed blocks followed by redaction patches.

The log is newline-delimited JSON so redaction history stays auditable
offline: blocks are appended as sealed, every accepted redaction adds a patch
record referencing its transaction index, and every validation verdict adds
an audit record. Replaying the log re-validates each block and re-runs the
full redaction predicate for each patch against the witness group recorded
for its epoch.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

from .ledger import (
    ACCEPT,
    Block,
    Chain,
    LedgerError,
    RedactableTransaction,
    TxIndex,
    apply_redaction,
    tx_from_json,
    validate_block,
)


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class ChainLogWriter:
    """Streams log records; one JSON object per line."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")

    def close(self) -> None:
        self._fh.close()

    def _write(self, record: dict) -> None:
        self._fh.write(_dump(record) + "\n")
        self._fh.flush()

    def params(self, pow_target: int, ca_pk: bytes, ch_level: str) -> None:
        self._write(
            {
                "type": "params",
                "pow_target": hex(pow_target),
                "ca_pk": ca_pk.hex(),
                "ch_level": ch_level,
            }
        )

    def block(self, block: Block) -> None:
        self._write({"type": "block", "block": block.to_json()})

    def patch(self, ind: TxIndex, tx: RedactableTransaction, epoch: int, slot: int) -> None:
        self._write(
            {
                "type": "patch",
                "ind": ind.to_json(),
                "tx": tx.to_json(),
                "epoch": epoch,
                "slot": slot,
            }
        )

    def audit(self, slot: int, node: str, request_id: str, ok: bool, reason: Optional[str]) -> None:
        self._write(
            {
                "type": "audit",
                "slot": slot,
                "node": node,
                "request": request_id,
                "ok": ok,
                "reason": reason,
            }
        )


def read_records(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_chain(path, revalidate: bool = True) -> Chain:
    """Rebuild the chain from a log, re-running validation on the way.

    Patches are validated against the witness group recorded for the epoch
    stored in the patch record, which is how a late-syncing node audits
    historical redactions.
    """
    from .redaction import validate_redacted_tx  # local import: layering, not cycle

    records = read_records(path)
    if not records or records[0].get("type") != "params":
        raise LedgerError("chain log must start with a params record")
    head = records[0]
    chain = Chain(
        pow_target=int(head["pow_target"], 16),
        ca_pk=bytes.fromhex(head["ca_pk"]),
        blocks=(),
        ch_level=head["ch_level"],
    )
    groups: dict = {}
    for record in records[1:]:
        kind = record["type"]
        if kind == "block":
            block = Block.from_json(record["block"])
            if revalidate:
                prev = chain.blocks[-1] if chain.blocks else None
                verdict = validate_block(
                    block, prev, chain.pow_target, chain.pp, chain.ca_pk, groups
                )
                if not verdict:
                    raise LedgerError(f"invalid block in log: {verdict.reason}")
            chain = chain.with_block(block)
            groups = chain.group_records()
        elif kind == "patch":
            ind = TxIndex.from_json(record["ind"])
            tx = tx_from_json(record["tx"])
            group = groups.get(record["epoch"])
            if revalidate:
                chain = apply_redaction(
                    chain,
                    ind,
                    tx,
                    lambda t, i, c, g=group: validate_redacted_tx(t, i, c, g, c.ca_pk),
                )
            else:
                chain = apply_redaction(chain, ind, tx, lambda t, i, c: ACCEPT)
        elif kind == "audit":
            continue
        else:
            raise LedgerError(f"unknown log record type {kind!r}")
    if not chain.blocks:
        raise LedgerError("chain log holds no blocks")
    return chain


def redaction_history(path) -> dict:
    """Per-transaction history: ind -> [original, patch, patch, ...]."""
    history: dict = {}
    for record in read_records(path):
        if record["type"] == "block":
            slot = record["block"]["slot"]
            for pos, tx in enumerate(record["block"]["transactions"]):
                history[(slot, pos)] = [("sealed", tx)]
        elif record["type"] == "patch":
            key = (record["ind"]["slot"], record["ind"]["pos"])
            history.setdefault(key, []).append(("patched", record["tx"]))
    return history
