"""Deterministic multi-node simulation of the redactable-chain protocol.

One logical event loop drives slot 0..end. Within a slot: scheduled witness
elections run first, then scripted scenario actions, then the message queue
drains (handlers may enqueue same-slot messages, which keeps the honest
redaction round inside one slot), then the producer seals a block, and
finally the CA fires timers (vote deadlines, fee refunds, deposit
settlements). Every message, verdict, election, and balance movement lands in
the transcript as one JSON line; identical (seed, scenario) pairs produce
byte-identical transcripts.

Modeling notes: delivery is synchronous and loss-free (the protocol's phases
have no timing assumptions beyond periods, and determinism beats realism for
a correctness artifact); the deposit registry the producer consults when
ranking candidates is the CA's, which the paper makes public knowledge, so no
extra message round is spent on it. Honest witnesses vote for a request only
if their review accepts it and the scenario's oracle has not flagged the
content malicious; that flag stands in for a witness recognizing illegal
content, which no algorithm in the protocol decides.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .crypto import digest, ds_kgen
from .chainlog import ChainLogWriter
from .ledger import (
    Chain,
    ImmutableTransaction,
    LedgerError,
    RedactableTransaction,
    RedactionMeta,
    TxIndex,
    apply_redaction,
    build_redactable_tx,
    chameleon_message,
    new_chain,
    redactor_message,
    seal_block,
    validate_chain,
)
from .crypto import ch_adapt, ds_sign
from .policy import AttributeSet, issue_certificate, parse_policy
from .redaction import (
    CaLedger,
    Collector,
    RedactionError,
    RedactionRequest,
    approved_tx,
    cast_vote,
    make_request,
    process_report,
    review_request,
    file_report,
    settle_epoch,
    validate_redacted_tx,
)
from .witness import (
    SelConfig,
    SlotInterval,
    WitnessError,
    active_collector,
    form_group,
    sel,
    vsel,
)

ADVERSARY_KINDS = frozenset(
    {
        "unauthorized-redactor",
        "cert-forger",
        "collision-skipper",
        "silent-collector",
        "stale-approval-replayer",
        "malicious-quorum",
        "double-voter",
    }
)

ROLES = frozenset({"ca", "owner", "redactor", "witness", "producer", "ordinary"})


class ScenarioError(ValueError):
    """Scenario file fails validation before the run starts."""


# -- scenario ---------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    pow_bits: int = 10
    tv_bits: int = 8
    epoch_length: int = 16
    sp_length: int = 4
    group_size: int = 5
    ts_num: int = 2
    ts_den: int = 3
    vote_deadline: int = 2
    deposit: int = 100
    unlock_epochs: int = 1
    reporter_share_num: int = 1
    reporter_share_den: int = 2
    default_balance: int = 500
    default_fee: int = 9

    def __post_init__(self):
        if self.tv_bits >= self.pow_bits:
            raise ScenarioError("witness puzzles must be easier than block PoW")

    @property
    def pow_target(self) -> int:
        return 1 << (256 - self.pow_bits)

    @property
    def tv(self) -> int:
        return 1 << (256 - self.tv_bits)

    @property
    def unlock_delay(self) -> int:
        return self.unlock_epochs * self.epoch_length

    def sel_config(self) -> SelConfig:
        return SelConfig(
            tv=self.tv,
            epoch_length=self.epoch_length,
            sp_length=self.sp_length,
            group_size=self.group_size,
            ts_num=self.ts_num,
            ts_den=self.ts_den,
        )

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        return cls(**obj)


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    roles: frozenset
    trial_budget: int = 0
    behavior: str = "honest"
    attributes: tuple = ()
    balance: Optional[int] = None

    @classmethod
    def from_json(cls, obj: dict) -> "NodeSpec":
        roles = frozenset(obj["roles"])
        unknown = roles - ROLES
        if unknown:
            raise ScenarioError(f"unknown roles {sorted(unknown)}")
        behavior = obj.get("behavior", "honest")
        if behavior != "honest" and behavior not in ADVERSARY_KINDS:
            raise ScenarioError(f"unknown adversary kind {behavior!r}")
        return cls(
            node_id=obj["id"],
            roles=roles,
            trial_budget=obj.get("trial_budget", 0),
            behavior=behavior,
            attributes=tuple(obj.get("attributes", ())),
            balance=obj.get("balance"),
        )


@dataclass(frozen=True)
class Action:
    slot: int
    node: str
    kind: str  # submit-immutable | submit-redactable | redact | report | replay
    action_id: str
    params: dict = field(default_factory=dict)
    malicious: bool = False

    @classmethod
    def from_json(cls, obj: dict) -> "Action":
        known = {"submit-immutable", "submit-redactable", "redact", "report", "replay"}
        if obj["kind"] not in known:
            raise ScenarioError(f"unknown action kind {obj['kind']!r}")
        return cls(
            slot=obj["slot"],
            node=obj["node"],
            kind=obj["kind"],
            action_id=obj["id"],
            params=obj.get("params", {}),
            malicious=obj.get("malicious", False),
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    slots: int
    config: SimConfig
    nodes: tuple
    actions: tuple
    expectations: tuple = ()

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate node ids")
        if sum(1 for n in self.nodes if "ca" in n.roles) != 1:
            raise ScenarioError("exactly one CA required")
        if sum(1 for n in self.nodes if "producer" in n.roles) != 1:
            raise ScenarioError("exactly one block producer required")
        for action in self.actions:
            if action.node not in ids:
                raise ScenarioError(f"action {action.action_id} names unknown node")

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        return cls(
            name=obj["name"],
            seed=obj["seed"],
            slots=obj["slots"],
            config=SimConfig.from_json(obj.get("config", {})),
            nodes=tuple(NodeSpec.from_json(n) for n in obj["nodes"]),
            actions=tuple(Action.from_json(a) for a in obj.get("actions", ())),
            expectations=tuple(obj.get("expectations", ())),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# -- transcript ----------------------------------------------------------------------

class Transcript:
    def __init__(self):
        self.records: list = []

    def add(self, record: dict) -> None:
        record["i"] = len(self.records)
        self.records.append(record)

    def to_ndjson(self) -> str:
        return "".join(
            json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
            for r in self.records
        )

    def write(self, path) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")

    def of_type(self, kind: str) -> list:
        return [r for r in self.records if r["t"] == kind]


# -- per-node state --------------------------------------------------------------------

@dataclass
class RequestState:
    req: RedactionRequest
    action_id: str
    malicious: bool
    received_slot: int
    deadline: int
    flagged: frozenset = frozenset()
    voted: bool = False
    applied: bool = False
    failed: bool = False


class SimNode:
    def __init__(self, spec: NodeSpec, keys, rng: random.Random, chain: Chain):
        self.spec = spec
        self.id = spec.node_id
        self.keys = keys
        self.rng = rng
        self.chain = chain
        self.cert = None
        self.pool: list = []  # producer: (action_id | None, tx)
        self.requests: dict = {}  # request_id -> RequestState
        self.collectors: dict = {}  # request_id -> Collector
        self.emitted: set = set()  # request ids whose approval this node broadcast
        self.saved_approvals: dict = {}  # action_id -> (request_id, ind, tx)
        self.dissolved_epochs: set = set()

    @property
    def behavior(self) -> str:
        return self.spec.behavior

    def honest(self) -> bool:
        return self.behavior == "honest"

    def group(self):
        record = self.chain.current_group()
        if record is None or record.epoch in self.dissolved_epochs:
            return None
        return record


# -- the simulation ---------------------------------------------------------------------

@dataclass(frozen=True)
class _Message:
    slot: int
    seq: int
    frm: str
    to: str  # node id or "*"
    kind: str
    summary: dict
    obj: object = None

    def __lt__(self, other):
        return (self.slot, self.seq) < (other.slot, other.seq)


class Simulation:
    def __init__(self, scenario: Scenario, chain_log: Optional[str] = None):
        self.scenario = scenario
        self.config = scenario.config
        self.transcript = Transcript()
        self.queue: list = []
        self.seq = 0
        self.epochs_formed = 0
        self.windows: list = []  # (SlotInterval, candidacy_slot)
        self.tx_registry: dict = {}  # action id -> TxIndex
        self.action_by_request: dict = {}  # request_id -> action id
        self.economy_dirty = False
        self.chain_log_path = chain_log
        self.log_writer: Optional[ChainLogWriter] = None
        self._setup()

    # -- setup --

    def _node_rng(self, node_id: str) -> random.Random:
        seed_bytes = digest(f"{self.scenario.seed}:{node_id}".encode())
        return random.Random(int.from_bytes(seed_bytes[:8], "big"))

    def _setup(self) -> None:
        cfg = self.config
        cfg.sel_config().check_against_pow(cfg.pow_target)
        self.transcript.add(
            {"t": "scenario", "slot": -1, "name": self.scenario.name, "seed": self.scenario.seed}
        )
        specs = list(self.scenario.nodes)
        self.ca_spec = next(s for s in specs if "ca" in s.roles)
        ca_keys = ds_kgen(self._node_rng(self.ca_spec.node_id))
        genesis_chain = new_chain(cfg.pow_target, ca_keys.pk)

        self.nodes: dict = {}
        for spec in specs:
            rng = self._node_rng(spec.node_id)
            keys = ca_keys if spec is self.ca_spec else ds_kgen(rng)
            self.nodes[spec.node_id] = SimNode(spec, keys, rng, genesis_chain)
        self.order = [s.node_id for s in specs]
        self.ca = self.nodes[self.ca_spec.node_id]
        self.producer = next(
            self.nodes[s.node_id] for s in specs if "producer" in s.roles
        )
        self.pk_to_id = {n.keys.pk: n.id for n in self.nodes.values()}

        self.ca_ledger = CaLedger(
            deposit_amount=cfg.deposit,
            unlock_delay=cfg.unlock_delay,
            reporter_share_num=cfg.reporter_share_num,
            reporter_share_den=cfg.reporter_share_den,
        )
        for spec in specs:
            node = self.nodes[spec.node_id]
            balance = spec.balance if spec.balance is not None else cfg.default_balance
            self.ca_ledger.fund(node.keys.pk, balance)
            if spec.attributes:
                node.cert = issue_certificate(
                    ca_keys.sk, node.keys.pk, AttributeSet(spec.attributes)
                )
            self.transcript.add(
                {
                    "t": "node",
                    "slot": -1,
                    "node": spec.node_id,
                    "pk": node.keys.pk.hex(),
                    "roles": sorted(spec.roles),
                    "behavior": spec.behavior,
                    "balance": balance,
                    "attributes": sorted(spec.attributes),
                }
            )
        self.initial_supply = self.ca_ledger.total_supply()

        k = 0
        while True:
            window = cfg.sel_config().window(k)
            if window.start > self.scenario.slots:
                break
            self.windows.append((SlotInterval(window.start, window.end), window.end + 1))
            k += 1

        if self.chain_log_path:
            self.log_writer = ChainLogWriter(self.chain_log_path)
            self.log_writer.params(cfg.pow_target, ca_keys.pk, "standard")
            self.log_writer.block(genesis_chain.blocks[0])

    # -- plumbing --

    def send(self, slot: int, frm: str, to: str, kind: str, summary: dict, obj=None) -> None:
        msg = _Message(slot=slot, seq=self.seq, frm=frm, to=to, kind=kind, summary=summary, obj=obj)
        self.seq += 1
        heapq.heappush(self.queue, msg)

    def event(self, slot: int, kind: str, **fields) -> None:
        record = {"t": kind, "slot": slot}
        record.update(fields)
        self.transcript.add(record)

    def snapshot(self, slot: int) -> None:
        balances = {nid: self.ca_ledger.balance(self.nodes[nid].keys.pk) for nid in self.order}
        self.event(
            slot,
            "balances",
            balances=balances,
            deposits=sum(self.ca_ledger.deposits.values()),
            escrow=sum(f for f, _, _ in self.ca_ledger.escrow.values()),
            burned=self.ca_ledger.burned,
            supply=self.ca_ledger.total_supply(),
        )
        self.economy_dirty = False

    # -- main loop --

    def run(self) -> Transcript:
        try:
            for slot in range(self.scenario.slots + 1):
                self._run_elections(slot)
                self._run_actions(slot)
                self._drain(slot)
                self._produce_block(slot)
                self._drain(slot)
                self._ca_timers(slot)
                self._drain(slot)
                if self.economy_dirty:
                    self.snapshot(slot)
            self._finalize()
        finally:
            if self.log_writer is not None:
                self.log_writer.close()
        return self.transcript

    def _drain(self, slot: int) -> None:
        while self.queue and self.queue[0].slot <= slot:
            msg = heapq.heappop(self.queue)
            targets = self.order if msg.to == "*" else [msg.to]
            self.transcript.add(
                {
                    "t": "message",
                    "slot": slot,
                    "from": msg.frm,
                    "to": msg.to,
                    "kind": msg.kind,
                    **msg.summary,
                }
            )
            for nid in targets:
                self._handle(self.nodes[nid], slot, msg)

    # -- elections --

    def _run_elections(self, slot: int) -> None:
        due = [w for w in self.windows if w[1] == slot]
        if not due:
            return
        window, _ = due[0]
        cfg = self.config
        epoch = self.epochs_formed
        candidates = []
        for nid in self.order:
            node = self.nodes[nid]
            if "witness" not in node.spec.roles or node.spec.trial_budget <= 0:
                continue
            cand = sel(node.chain, cfg.tv, window, node.keys.pk, node.spec.trial_budget, node.rng)
            if cand.weight == 0:
                continue
            if not vsel(cand, window, cfg.tv, self.producer.chain):
                continue
            deposited = self.ca_ledger.post_deposit(node.keys.pk, epoch)
            self.economy_dirty = True
            self.event(
                slot,
                "candidacy",
                node=nid,
                epoch=epoch,
                weight=cand.weight,
                deposited=deposited,
            )
            candidates.append(cand)
        try:
            record = form_group(
                candidates,
                cfg.group_size,
                self.ca_ledger.deposits_for_epoch(epoch),
                cfg.sel_config(),
                epoch,
            )
        except WitnessError:
            self.event(slot, "election-failed", epoch=epoch)
            return
        self.epochs_formed += 1
        self.ca_ledger.register_group(record, start_slot=slot)
        self.producer.pool.append((None, record))
        self.event(
            slot,
            "election",
            epoch=epoch,
            members=[[self.pk_to_id.get(pk, pk.hex()), w] for pk, w in record.members],
            collector=self.pk_to_id.get(record.collector, record.collector.hex()),
            ts_abs=record.ts_abs,
        )

    def _schedule_extraordinary_election(self, slot: int) -> None:
        window = SlotInterval(slot + 1, slot + self.config.sp_length)
        self.windows.append((window, window.end + 1))
        self.event(slot, "election-scheduled", start=window.start, end=window.end)

    # -- scripted actions --

    def _run_actions(self, slot: int) -> None:
        for action in self.scenario.actions:
            if action.slot != slot:
                continue
            node = self.nodes[action.node]
            handler = getattr(self, "_action_" + action.kind.replace("-", "_"))
            handler(slot, node, action)

    def _action_submit_immutable(self, slot: int, node: SimNode, action: Action) -> None:
        content = action.params["content"].encode()
        tx = ImmutableTransaction(content)
        self.send(
            slot, node.id, self.producer.id, "tx-submit",
            {"id": action.action_id, "tx_kind": "immutable"},
            obj=(action.action_id, tx),
        )

    def _action_submit_redactable(self, slot: int, node: SimNode, action: Action) -> None:
        content = action.params["content"].encode()
        policy = parse_policy(action.params["policy"])
        tx = build_redactable_tx(node.keys, content, policy, node.chain.pp, node.rng)
        self.send(
            slot, node.id, self.producer.id, "tx-submit",
            {"id": action.action_id, "tx_kind": "redactable"},
            obj=(action.action_id, tx),
        )

    def _action_redact(self, slot: int, node: SimNode, action: Action) -> None:
        target = action.params["target"]
        if target not in self.tx_registry:
            self.event(slot, "action-error", action=action.action_id, error="unknown-target")
            return
        ind = self.tx_registry[target]
        content = action.params["content"].encode()
        policy = parse_policy(action.params["policy"]) if "policy" in action.params else None
        fee = action.params.get("fee", self.config.default_fee)
        cert = node.cert
        try:
            if node.behavior == "unauthorized-redactor" or action.params.get("force"):
                # submit without the local authorization check; witnesses decide
                req = self._craft_request(node, ind, content, policy, cert, fee, adapt=True)
            elif node.behavior == "cert-forger":
                forged = issue_certificate(
                    node.keys.sk, node.keys.pk, AttributeSet(action.params.get("claim_attrs", ["Doctor"]))
                )
                req = self._craft_request(node, ind, content, policy, forged, fee, adapt=True)
            elif node.behavior == "collision-skipper":
                req = self._craft_request(node, ind, content, policy, cert, fee, adapt=False)
            else:
                if cert is None:
                    raise RedactionError("not-authorized: node holds no certificate")
                req = make_request(node.chain, ind, content, policy, node.keys.sk, cert, fee)
        except (RedactionError, LedgerError) as exc:
            self.event(slot, "request-error", action=action.action_id, error=str(exc).split(":")[0])
            return
        self.action_by_request[req.request_id] = action.action_id
        self.send(
            slot, node.id, "*", "request",
            {
                "action": action.action_id,
                "request": req.request_id,
                "ind": ind.to_json(),
                "fee": fee,
                "malicious": action.malicious,
            },
            obj=(action, req),
        )

    def _craft_request(self, node, ind, content, policy, cert, fee, adapt):
        """Adversarial construction: skip the local authorization check."""
        old_tx = node.chain.tx_at(ind)
        if not isinstance(old_tx, RedactableTransaction):
            raise RedactionError("wrong-tx-type")
        new_policy = policy if policy is not None else old_tx.policy
        if adapt:
            r_new = ch_adapt(
                node.chain.pp,
                old_tx.ch_sk,
                old_tx.ch_digest.h,
                old_tx.ch_digest.r,
                chameleon_message(old_tx.content, old_tx.policy),
                chameleon_message(content, new_policy),
            )
        else:
            r_new = old_tx.ch_digest.r  # reuse: the collision check must catch it
        sig = ds_sign(redactor_message(content, new_policy, cert), node.keys.sk)
        new_tx = replace(
            old_tx,
            content=content,
            policy=new_policy,
            ch_digest=replace(old_tx.ch_digest, r=r_new),
            redaction_meta=RedactionMeta(certificate=cert, redactor_sig=sig, approval=None),
        )
        return RedactionRequest(new_tx=new_tx, ind=ind, fee=fee)

    def _action_report(self, slot: int, node: SimNode, action: Action) -> None:
        target = action.params["evidence"]
        state = None
        for rid, st in node.requests.items():
            if st.action_id == target:
                state = st
                break
        if state is None or not state.applied:
            self.event(slot, "action-error", action=action.action_id, error="no-evidence")
            return
        tx = node.chain.tx_at(state.req.ind)
        report = file_report(node.keys.pk, tx, state.req.ind, claim="malicious-content")
        self.send(
            slot, node.id, self.ca.id, "report",
            {"action": action.action_id, "evidence": target, "reporter": node.id},
            obj=(action, report, state),
        )

    def _action_replay(self, slot: int, node: SimNode, action: Action) -> None:
        target = action.params["request"]
        saved = node.saved_approvals.get(target)
        if saved is None:
            self.event(slot, "action-error", action=action.action_id, error="nothing-saved")
            return
        rid, ind, tx = saved
        self.send(
            slot, node.id, "*", "approval",
            {"request": self.action_by_request.get(rid, rid), "replayed": True},
            obj=(rid, ind, tx),
        )

    # -- block production --

    def _produce_block(self, slot: int) -> None:
        if slot == 0:
            return  # genesis occupies slot 0
        node = self.producer
        heartbeat = ImmutableTransaction(f"slot-{slot}".encode())
        entries = [(None, heartbeat)] + node.pool
        node.pool = []
        txs = tuple(tx for _, tx in entries)
        block = seal_block(slot, node.chain.head.header_hash(), txs, self.config.pow_target)
        for pos, (action_id, _) in enumerate(entries):
            if action_id is not None:
                self.tx_registry[action_id] = TxIndex(block.slot, pos)
                self.event(slot, "included", action=action_id, ind=self.tx_registry[action_id].to_json())
        self.send(
            slot, node.id, "*", "block",
            {"block_slot": block.slot, "hash": block.header_hash().hex(), "txs": len(txs)},
            obj=block,
        )
        if self.log_writer is not None:
            self.log_writer.block(block)

    # -- CA timers --

    def _ca_timers(self, slot: int) -> None:
        # vote deadlines: witnesses rotate the collector; the CA refunds lost causes
        for nid in self.order:
            node = self.nodes[nid]
            group = node.group()
            if group is None:
                continue
            if "witness" not in node.spec.roles or group.weight_map.get(node.keys.pk) is None:
                continue
            for rid, state in node.requests.items():
                if state.applied or state.failed or not state.voted:
                    continue
                if slot <= state.deadline:
                    continue
                self._rotate_collector(slot, node, rid, state, group)
        # final refunds
        final_wait = self.config.vote_deadline * (self.config.group_size + 2)
        ca_state = self.ca.requests
        for rid, state in list(ca_state.items()):
            if state.applied or state.failed:
                continue
            if slot > state.received_slot + final_wait:
                state.failed = True
                if rid in self.ca_ledger.escrow:
                    fee = self.ca_ledger.refund_fee(rid)
                    self.economy_dirty = True
                    self.event(
                        slot, "fee-refunded",
                        request=self.action_by_request.get(rid, rid), amount=fee,
                    )
                self.event(
                    slot, "request-failed",
                    request=self.action_by_request.get(rid, rid), reason="timeout",
                )
        # settlements
        for epoch in sorted(self.ca_ledger.epochs):
            account = self.ca_ledger.epochs[epoch]
            if account.slashed or account.settled or account.end_slot is None:
                continue
            if slot >= account.end_slot + self.ca_ledger.unlock_delay:
                payouts = settle_epoch(self.ca_ledger, epoch, slot)
                self.economy_dirty = True
                self.event(
                    slot, "settle",
                    epoch=epoch,
                    payouts={self.pk_to_id.get(pk, pk.hex()): amt for pk, amt in sorted(payouts.items())},
                )

    def _rotate_collector(self, slot: int, node: SimNode, rid: str, state: RequestState, group) -> None:
        current = active_collector(group, state.flagged)
        if current is None:
            state.failed = True
            return
        new_flagged = state.flagged | {current}
        replacement = active_collector(group, new_flagged)
        state.flagged = new_flagged
        if replacement is None:
            state.failed = True
            self.event(
                slot, "request-failed",
                request=self.action_by_request.get(rid, rid), reason="group-dissolved",
            )
            return
        self.event(
            slot, "collector-replaced",
            request=self.action_by_request.get(rid, rid),
            old=self.pk_to_id.get(current, current.hex()),
            new=self.pk_to_id.get(replacement, replacement.hex()),
            by=node.id,
        )
        state.deadline = slot + self.config.vote_deadline
        vote = cast_vote(node.keys, state.req)
        self.send(
            slot, node.id, self.pk_to_id[replacement], "vote",
            {"request": self.action_by_request.get(rid, rid), "witness": node.id, "revote": True},
            obj=(rid, state.req, vote, state.malicious, state.flagged),
        )

    # -- message handlers --

    def _handle(self, node: SimNode, slot: int, msg: _Message) -> None:
        handler = getattr(self, "_on_" + msg.kind.replace("-", "_"))
        handler(node, slot, msg)

    def _on_tx_submit(self, node: SimNode, slot: int, msg: _Message) -> None:
        if node is self.producer:
            node.pool.append(msg.obj)

    def _on_block(self, node: SimNode, slot: int, msg: _Message) -> None:
        block = msg.obj
        if node.chain.head.header_hash() == block.prev_hash:
            node.chain = node.chain.with_block(block)

    def _on_request(self, node: SimNode, slot: int, msg: _Message) -> None:
        action, req = msg.obj
        rid = req.request_id
        group = node.group()
        state = RequestState(
            req=req,
            action_id=action.action_id,
            malicious=action.malicious,
            received_slot=slot,
            deadline=slot + self.config.vote_deadline,
        )
        node.requests[rid] = state
        if node is self.ca:
            epoch = group.epoch if group is not None else None
            try:
                payer = req.new_tx.redaction_meta.certificate.subject_pk
                self.ca_ledger.escrow_fee(rid, payer, req.fee, epoch)
                self.economy_dirty = True
            except RedactionError as exc:
                self.event(slot, "fee-rejected", request=action.action_id, error=str(exc).split(":")[0])
        if group is None:
            return
        my_weight = group.weight_map.get(node.keys.pk)
        if "witness" not in node.spec.roles or my_weight is None:
            return
        verdict = review_request(req, node.chain, node.chain.ca_pk)
        self.event(
            slot, "review",
            node=node.id, request=action.action_id,
            ok=verdict.ok, reason=verdict.reason,
        )
        if node.behavior == "malicious-quorum":
            approve = verdict.ok
        else:
            approve = verdict.ok and not action.malicious
        if not approve:
            return
        state.voted = True
        collector_pk = active_collector(group, state.flagged)
        vote = cast_vote(node.keys, req)
        times = 2 if node.behavior == "double-voter" else 1
        for _ in range(times):
            self.send(
                slot, node.id, self.pk_to_id[collector_pk], "vote",
                {"request": action.action_id, "witness": node.id},
                obj=(rid, req, vote, action.malicious, state.flagged),
            )

    def _on_vote(self, node: SimNode, slot: int, msg: _Message) -> None:
        rid, req, vote, malicious, flagged = msg.obj
        group = node.group()
        if group is None:
            return
        if node.behavior == "silent-collector":
            return  # drops every vote on the floor
        if active_collector(group, flagged) != node.keys.pk:
            return
        state = node.collectors.get(rid)
        if state is None:
            state = Collector(req, group, deadline_slot=slot + self.config.vote_deadline)
            node.collectors[rid] = state
        if vote.witness_pk in state.votes:
            self.event(
                slot, "duplicate-vote",
                request=self.action_by_request.get(rid, rid),
                witness=self.pk_to_id.get(vote.witness_pk, vote.witness_pk.hex()),
            )
        audit_before = len(state.audit)
        status = state.add_vote(vote)
        for kind, _ in state.audit[audit_before:]:
            self.event(slot, "vote-audit", request=self.action_by_request.get(rid, rid), entry=kind)
        if status == "approved" and rid not in node.emitted:
            node.emitted.add(rid)
            approval = state.approval()
            tx = approved_tx(req, approval)
            self.send(
                slot, node.id, "*", "approval",
                {
                    "request": self.action_by_request.get(rid, rid),
                    "weight": approval.claimed_weight,
                    "epoch": approval.epoch,
                },
                obj=(rid, req.ind, tx),
            )

    def _on_approval(self, node: SimNode, slot: int, msg: _Message) -> None:
        rid, ind, tx = msg.obj
        group = node.group()
        verdict = validate_redacted_tx(tx, ind, node.chain, group, node.chain.ca_pk)
        action_id = self.action_by_request.get(rid, rid)
        self.event(
            slot, "validate",
            node=node.id, request=action_id, ok=verdict.ok, reason=verdict.reason,
        )
        if self.log_writer is not None and node is self.producer:
            self.log_writer.audit(slot, node.id, action_id, verdict.ok, verdict.reason)
        if not verdict.ok:
            return
        headers_before = [b.header_hash() for b in node.chain.blocks]
        roots_before = [b.merkle_root for b in node.chain.blocks]
        node.chain = apply_redaction(node.chain, ind, tx, lambda t, i, c: verdict)
        if rid in node.requests:
            node.requests[rid].applied = True
        if node.behavior == "stale-approval-replayer":
            node.saved_approvals[action_id] = (rid, ind, tx)
        if node is self.producer:
            headers_after = [b.header_hash() for b in node.chain.blocks]
            roots_after = [b.merkle_root for b in node.chain.blocks]
            self.event(
                slot, "applied",
                request=action_id,
                ind=ind.to_json(),
                headers_changed=headers_before != headers_after,
                roots_changed=roots_before != roots_after,
            )
            if self.log_writer is not None:
                epoch = tx.redaction_meta.approval.epoch
                self.log_writer.patch(ind, tx, epoch, slot)

    def _on_report(self, node: SimNode, slot: int, msg: _Message) -> None:
        if node is not self.ca:
            return
        action, report, state = msg.obj
        flagged_malicious = state.malicious
        status, punishment = process_report(
            self.ca_ledger, report, lambda r: flagged_malicious
        )
        self.economy_dirty = True
        record = {"node": msg.frm, "evidence": msg.summary["evidence"], "status": status}
        if punishment is not None:
            record.update(
                epoch=punishment.epoch,
                slashed_total=punishment.slashed_total,
                reporter_reward=punishment.reporter_reward,
                burned=punishment.burned,
                refunded_fees=punishment.refunded_fees,
            )
            account = self.ca_ledger.epochs[punishment.epoch]
            if account.end_slot is None:
                account.end_slot = slot
            self.send(
                slot, node.id, "*", "punishment",
                {"epoch": punishment.epoch},
                obj=punishment.epoch,
            )
            self._schedule_extraordinary_election(slot)
        self.event(slot, "report", **record)

    def _on_punishment(self, node: SimNode, slot: int, msg: _Message) -> None:
        node.dissolved_epochs.add(msg.obj)

    # -- finalization --

    def _finalize(self) -> None:
        slot = self.scenario.slots
        chains_valid = {}
        roots = {}
        for nid in self.order:
            node = self.nodes[nid]
            verdict = validate_chain(node.chain)
            chains_valid[nid] = bool(verdict)
            roots[nid] = digest(
                b"".join(b.merkle_root for b in node.chain.blocks)
            ).hex()
        group = self.producer.group()
        self.snapshot(slot)
        self.event(
            slot,
            "final",
            chains_valid=chains_valid,
            roots=roots,
            group_epoch=group.epoch if group else None,
            group_members=sorted(
                self.pk_to_id.get(pk, pk.hex()) for pk, _ in (group.members if group else ())
            ),
            supply=self.ca_ledger.total_supply(),
            initial_supply=self.initial_supply,
        )


def run(scenario: Scenario, chain_log: Optional[str] = None) -> Transcript:
    return Simulation(scenario, chain_log=chain_log).run()


# -- expectations ------------------------------------------------------------------------

def transcript_assert(transcript: Transcript, expectations) -> tuple:
    """Evaluate scenario expectations; returns (passed, [failure descriptions])."""
    failures = []
    records = transcript.records
    final = records[-1]
    assert final["t"] == "final"

    def witnesses_for(request):
        return {r["node"] for r in records if r["t"] == "review" and r["request"] == request}

    for exp in expectations:
        check = exp["check"]
        ok = True
        note = ""
        if check == "applied":
            applied = any(r["t"] == "applied" and r["request"] == exp["request"] for r in records)
            ok = applied == exp.get("value", True)
            note = f"applied({exp['request']})={applied}"
        elif check == "review-reason":
            hits = [
                r for r in records
                if r["t"] == "review" and r["request"] == exp["request"]
                and r["slot"] >= exp.get("after", -1)
            ]
            ok = bool(hits) and all(r["reason"] == exp["reason"] for r in hits)
            note = f"review reasons {[r['reason'] for r in hits]}"
        elif check == "validate-reason":
            hits = [
                r for r in records
                if r["t"] == "validate" and r["request"] == exp["request"]
                and r["slot"] >= exp.get("after", -1)
            ]
            ok = bool(hits) and all(r["reason"] == exp["reason"] for r in hits)
            note = f"validate reasons {sorted({str(r['reason']) for r in hits})}"
        elif check == "chain-valid":
            ok = all(final["chains_valid"].values())
            note = str(final["chains_valid"])
        elif check == "roots-agree":
            ok = len(set(final["roots"].values())) == 1
            note = f"{len(set(final['roots'].values()))} distinct root digests"
        elif check == "headers-stable":
            hits = [r for r in records if r["t"] == "applied" and r["request"] == exp["request"]]
            ok = bool(hits) and all(not r["headers_changed"] and not r["roots_changed"] for r in hits)
            note = "no applied event" if not hits else "headers or roots moved"
        elif check == "conservation":
            ok = final["supply"] == final["initial_supply"]
            note = f"supply {final['supply']} vs {final['initial_supply']}"
        elif check == "balance":
            snap = [r for r in records if r["t"] == "balances"][-1]
            actual = snap["balances"].get(exp["node"])
            ok = actual == exp["value"]
            note = f"balance({exp['node']})={actual}"
        elif check == "slashed":
            hits = [r for r in records if r["t"] == "report" and r.get("status") == "slashed"]
            ok = any(r.get("epoch") == exp["epoch"] for r in hits)
            note = f"slash events {[r.get('epoch') for r in hits]}"
        elif check == "slash-split":
            hits = [r for r in records if r["t"] == "report" and r.get("status") == "slashed"]
            ok = bool(hits)
            for r in hits:
                total = r["slashed_total"]
                expected_reward = total * exp.get("num", 1) // exp.get("den", 2)
                if r["reporter_reward"] != expected_reward or r["burned"] != total - expected_reward:
                    ok = False
            note = f"{len(hits)} slash events"
        elif check == "fee-refunded":
            ok = any(r["t"] == "fee-refunded" and r["request"] == exp["request"] for r in records)
            note = "no refund event" if not ok else ""
        elif check == "group-epoch":
            ok = final["group_epoch"] == exp["value"]
            note = f"final epoch {final['group_epoch']}"
        elif check == "group-excludes":
            ok = all(nid not in final["group_members"] for nid in exp["nodes"])
            note = f"members {final['group_members']}"
        elif check == "group-includes":
            ok = all(nid in final["group_members"] for nid in exp["nodes"])
            note = f"members {final['group_members']}"
        elif check == "event":
            count = sum(
                1
                for r in records
                if r["t"] == exp["type"]
                and all(r.get(k) == v for k, v in exp.get("fields", {}).items())
            )
            ok = count >= exp.get("min", 1) and count <= exp.get("max", 10**9)
            note = f"count {count}"
        elif check == "no-event":
            count = sum(
                1
                for r in records
                if r["t"] == exp["type"]
                and all(r.get(k) == v for k, v in exp.get("fields", {}).items())
            )
            ok = count == 0
            note = f"count {count}"
        else:
            ok = False
            note = f"unknown check {check!r}"
        if not ok:
            failures.append(f"{check}: {json.dumps(exp, sort_keys=True)} -> {note}")
    return (not failures, failures)
