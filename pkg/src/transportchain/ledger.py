"""Simulated permissioned ledger: channels, world state, and the
execute -> order -> validate -> commit transaction pipeline.

One base network ledger registers channels; each channel is its own
ledger with a versioned key-value world state, a FIFO pending queue,
MVCC validation at commit, hash-chained blocks, and event delivery for
valid transactions only. Contract execution (endorsement) happens at
submit time against committed state; conflicts are detected at commit.

Everything is driven by an injected logical clock so that runs are
reproducible and block logs replay to identical state hashes.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

GENESIS_HASH = "0" * 64

# principal kinds
ORGANISATION = "organisation"
DEPARTMENT = "department"
EMPLOYEE = "employee"
TRANSPORT_COMPANY = "transport-company"
NETWORK_ADMIN = "network-admin"

PRINCIPAL_KINDS = {ORGANISATION, DEPARTMENT, EMPLOYEE, TRANSPORT_COMPANY, NETWORK_ADMIN}

VALID = "valid"
MVCC_CONFLICT = "mvcc-conflict"
ENDORSEMENT_ERROR = "endorsement-error"


class LedgerError(Exception):
    """Raised for submit-time and structural errors; `code` is a stable label."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


class ContractError(Exception):
    """Raised inside contract execution; recorded as an endorsement-error
    transaction rather than propagated to the submitter."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def encode_value(obj: Any) -> bytes:
    """Canonical byte encoding for contract state values."""
    return canonical_json(obj).encode("utf-8")


def decode_value(raw: bytes) -> Any:
    return json.loads(raw.decode("utf-8"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class Principal:
    id: str
    kind: str
    org: str | None = None
    role: str = ""

    def __post_init__(self):
        if self.kind not in PRINCIPAL_KINDS:
            raise LedgerError("wrong-principal-kind", f"unknown kind {self.kind!r}")
        if self.kind in (EMPLOYEE, DEPARTMENT) and not self.org:
            raise LedgerError(
                "wrong-principal-kind", f"{self.kind} {self.id!r} must carry an org"
            )


@dataclass(frozen=True)
class VersionedValue:
    value: bytes
    version: tuple[int, int]  # (block height, tx index)


class WorldState:
    """Versioned key-value state; keys are namespaced "contract/key" strings."""

    def __init__(self):
        self._entries: dict[str, VersionedValue] = {}

    def get(self, key: str) -> VersionedValue | None:
        return self._entries.get(key)

    def apply_write(self, key: str, value: bytes | None, version: tuple[int, int]) -> None:
        if value is None:
            self._entries.pop(key, None)
        else:
            self._entries[key] = VersionedValue(value, version)

    def keys(self) -> Iterable[str]:
        return self._entries.keys()

    def items(self) -> Iterable[tuple[str, VersionedValue]]:
        return self._entries.items()

    def value_map(self) -> dict[str, bytes]:
        return {k: v.value for k, v in self._entries.items()}

    def hash(self) -> str:
        """Deterministic digest over the sorted entry set (order-independent)."""
        rows = [
            [k, v.value.hex(), list(v.version)]
            for k, v in sorted(self._entries.items())
        ]
        return sha256_hex(canonical_json(rows).encode("utf-8"))


@dataclass
class Event:
    name: str
    channel: str
    payload: dict
    emitting_tx: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "channel": self.channel,
            "payload": self.payload,
            "emitting_tx": self.emitting_tx,
        }


@dataclass
class ReadWriteSet:
    reads: list[tuple[str, tuple[int, int] | None]] = field(default_factory=list)
    writes: list[tuple[str, bytes | None]] = field(default_factory=list)
    events: list[tuple[str, dict]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "reads": [[k, list(v) if v is not None else None] for k, v in self.reads],
            "writes": [[k, v.hex() if v is not None else None] for k, v in self.writes],
            "events": [[n, p] for n, p in self.events],
        }

    @staticmethod
    def from_dict(d: dict) -> "ReadWriteSet":
        return ReadWriteSet(
            reads=[(k, tuple(v) if v is not None else None) for k, v in d["reads"]],
            writes=[(k, bytes.fromhex(v) if v is not None else None) for k, v in d["writes"]],
            events=[(n, p) for n, p in d["events"]],
        )


@dataclass
class TransactionRecord:
    tx_id: str
    channel: str
    submitter: str
    invocation: tuple[str, str, dict]  # (contract, operation, args)
    rwset: ReadWriteSet
    submit_time: int
    commit_time: int | None = None
    validity: str | None = None  # assigned exactly once, at commit
    response: Any = None
    error: str | None = None  # endorsement failure code, if any

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "channel": self.channel,
            "submitter": self.submitter,
            "invocation": [self.invocation[0], self.invocation[1], self.invocation[2]],
            "rwset": self.rwset.to_dict(),
            "submit_time": self.submit_time,
            "commit_time": self.commit_time,
            "validity": self.validity,
            "response": self.response,
            "error": self.error,
        }

    @staticmethod
    def from_dict(d: dict) -> "TransactionRecord":
        inv = d["invocation"]
        return TransactionRecord(
            tx_id=d["tx_id"],
            channel=d["channel"],
            submitter=d["submitter"],
            invocation=(inv[0], inv[1], inv[2]),
            rwset=ReadWriteSet.from_dict(d["rwset"]),
            submit_time=d["submit_time"],
            commit_time=d["commit_time"],
            validity=d["validity"],
            response=d["response"],
            error=d["error"],
        )


@dataclass
class Block:
    height: int
    channel: str
    transactions: list[TransactionRecord]
    prev_hash: str
    hash: str = ""

    def body_dict(self) -> dict:
        return {
            "height": self.height,
            "channel": self.channel,
            "prev_hash": self.prev_hash,
            "transactions": [t.to_dict() for t in self.transactions],
        }

    def compute_hash(self) -> str:
        return sha256_hex(canonical_json(self.body_dict()).encode("utf-8"))

    def to_dict(self) -> dict:
        d = self.body_dict()
        d["hash"] = self.hash
        return d

    @staticmethod
    def from_dict(d: dict) -> "Block":
        return Block(
            height=d["height"],
            channel=d["channel"],
            transactions=[TransactionRecord.from_dict(t) for t in d["transactions"]],
            prev_hash=d["prev_hash"],
            hash=d["hash"],
        )


class SimClock:
    """Logical milliseconds; advanced only by the driver, never by the ledger."""

    def __init__(self, now: int = 0):
        self.now = int(now)

    def advance(self, ms: int) -> int:
        if ms < 0:
            raise ValueError("clock cannot go backwards")
        self.now += int(ms)
        return self.now

    def set(self, now: int) -> int:
        if now < self.now:
            raise ValueError("clock cannot go backwards")
        self.now = int(now)
        return self.now


class TxContext:
    """Endorsement context handed to contracts.

    Records reads with observed versions, stages writes (read-your-writes
    within the transaction), and collects events. Contracts address keys
    relative to their own namespace; cross-contract invocation switches
    the namespace for the duration of the call, keeping one shared rwset
    so composite operations commit atomically.
    """

    def __init__(self, channel: "Channel", submitter: Principal, now: int):
        self.channel = channel
        self.submitter = submitter
        self.now = now
        self._reads: dict[str, tuple[int, int] | None] = {}
        self._writes: dict[str, bytes | None] = {}
        self._events: list[tuple[str, dict]] = []
        self._ns_stack: list[str] = []

    @property
    def namespace(self) -> str:
        return self._ns_stack[-1]

    @property
    def calling_contract(self) -> str | None:
        """Name of the contract that invoked the current one, if any."""
        return self._ns_stack[-2] if len(self._ns_stack) >= 2 else None

    def _full(self, key: str) -> str:
        return f"{self.namespace}/{key}"

    def get(self, key: str) -> Any | None:
        """Read a JSON value from the current namespace (None if absent)."""
        raw = self.get_raw(key)
        return None if raw is None else decode_value(raw)

    def get_raw(self, key: str) -> bytes | None:
        full = self._full(key)
        if full in self._writes:
            return self._writes[full]
        vv = self.channel.state.get(full)
        if full not in self._reads:
            self._reads[full] = vv.version if vv is not None else None
        return vv.value if vv is not None else None

    def put(self, key: str, value: Any) -> None:
        self._writes[self._full(key)] = encode_value(value)

    def delete(self, key: str) -> None:
        self._writes[self._full(key)] = None

    def emit(self, name: str, payload: dict) -> None:
        self._events.append((name, payload))

    def invoke(self, contract_name: str, op: str, args: dict) -> Any:
        """Call another contract on the same channel inside this transaction."""
        contract = self.channel.contract(contract_name)
        if contract is None:
            raise ContractError("unknown-contract", contract_name)
        self._ns_stack.append(contract_name)
        try:
            return contract.execute(self, op, args)
        finally:
            self._ns_stack.pop()

    def discard_effects(self) -> None:
        """Drop all staged reads/writes/events; used by contracts whose
        negative outcomes must leave state bit-identical (e.g. denials)."""
        self._reads.clear()
        self._writes.clear()
        self._events.clear()

    def build_rwset(self) -> ReadWriteSet:
        return ReadWriteSet(
            reads=sorted(self._reads.items()),
            writes=sorted(self._writes.items()),
            events=list(self._events),
        )


class Contract:
    """Base class: a contract is a pure function from (state snapshot,
    invocation) to a read-write set; all dynamic state lives in world state."""

    name: str
    ctype: str = ""

    def execute(self, ctx: TxContext, op: str, args: dict) -> Any:
        raise NotImplementedError

    def config_dict(self) -> dict:
        """JSON-able construction parameters, stored under _lifecycle."""
        raise NotImplementedError


class LifecycleContract(Contract):
    """Built-in contract recording deployments in world state so the
    contract registry is reconstructible from the block log alone."""

    name = "_lifecycle"

    def config_dict(self) -> dict:
        return {}

    def execute(self, ctx: TxContext, op: str, args: dict) -> Any:
        if op == "deploy":
            cname = args["name"]
            if ctx.get(f"contract/{cname}") is not None:
                raise ContractError("already-deployed", cname)
            ctx.put(f"contract/{cname}", {"type": args["type"], "config": args["config"]})
            return {"deployed": cname}
        if op == "register-channel":
            if ctx.get(f"channel/{args['name']}") is not None:
                raise ContractError("duplicate-channel-name", args["name"])
            ctx.put(f"channel/{args['name']}", {
                "organisation": args["organisation"],
                "companies": args["companies"],
            })
            return {"registered": args["name"]}
        raise ContractError("unknown-operation", op)


class BankContract(Contract):
    """Per-channel settlement accounts for the purchase payment leg."""

    name = "bank"

    def config_dict(self) -> dict:
        return {}

    def execute(self, ctx: TxContext, op: str, args: dict) -> Any:
        if op == "mint":
            # funding accounts is setup plumbing, restricted to the network admin
            if ctx.submitter.kind != NETWORK_ADMIN:
                raise ContractError("not-authorized", "only network-admin mints")
            owner, amount = args["owner"], int(args["amount"])
            if amount < 0:
                raise ContractError("invalid-amount")
            bal = ctx.get(f"account/{owner}") or 0
            ctx.put(f"account/{owner}", bal + amount)
            return {"owner": owner, "balance": bal + amount}
        if op == "debit":
            owner, amount = args["owner"], int(args["amount"])
            if ctx.submitter.id != owner:
                raise ContractError("not-authorized", "only the owner can be debited")
            bal = ctx.get(f"account/{owner}") or 0
            if bal < amount:
                raise ContractError("insufficient-funds", f"balance {bal} < {amount}")
            ctx.put(f"account/{owner}", bal - amount)
            return {"owner": owner, "balance": bal - amount}
        if op == "credit":
            owner, amount = args["owner"], int(args["amount"])
            bal = ctx.get(f"account/{owner}") or 0
            ctx.put(f"account/{owner}", bal + amount)
            return {"owner": owner, "balance": bal + amount}
        if op == "balance":
            return {"owner": args["owner"], "balance": ctx.get(f"account/{args['owner']}") or 0}
        raise ContractError("unknown-operation", op)


class Channel:
    """One organisation's private ledger plus the companies it trades with."""

    def __init__(self, name: str, organisation: Principal, companies: list[Principal],
                 network: "Network", block_size: int = 50, record_snapshots: bool = False):
        self.name = name
        self.organisation = organisation
        self.companies = list(companies)
        self.network = network
        self.block_size = block_size
        self.record_snapshots = record_snapshots
        self.state = WorldState()
        self.blocks: list[Block] = []
        self.pending: deque[TransactionRecord] = deque()
        self.events: list[Event] = []
        self.event_listeners: list[Callable[[Event], None]] = []
        self.snapshot_hashes: list[str] = []
        self._txs: dict[str, TransactionRecord] = {}
        self._tx_seq = 0
        self._lock = threading.RLock()
        self._contracts: dict[str, Contract] = {
            "_lifecycle": LifecycleContract(),
            "bank": BankContract(),
        }
        genesis = Block(height=0, channel=name, transactions=[], prev_hash=GENESIS_HASH)
        genesis.hash = genesis.compute_hash()
        self.blocks.append(genesis)
        if record_snapshots:
            self.snapshot_hashes.append(self.state.hash())

    # -- membership -------------------------------------------------------

    @property
    def members(self) -> set[str]:
        return {self.organisation.id} | {c.id for c in self.companies}

    def is_authorized_submitter(self, p: Principal) -> bool:
        if p.id in self.members or p.kind == NETWORK_ADMIN:
            return True
        return p.kind in (EMPLOYEE, DEPARTMENT) and p.org == self.organisation.id

    # -- contracts ---------------------------------------------------------

    def contract(self, name: str) -> Contract | None:
        return self._contracts.get(name)

    def _instantiate(self, name: str, record: dict) -> Contract:
        contract = self.network.contract_factory(name, record["type"], record["config"])
        contract.name = name
        contract.ctype = record["type"]
        return contract

    def deploy(self, deployer: Principal, name: str, ctype: str, config: dict) -> str:
        """Deploy a contract via a lifecycle transaction; effective immediately
        after the synchronous commit performed here."""
        tx_id = self.submit(deployer, "_lifecycle", "deploy",
                            {"name": name, "type": ctype, "config": config})
        self.commit_block()
        tx = self._txs[tx_id]
        if tx.validity != VALID:
            raise LedgerError(tx.error or "deploy-failed", f"deploy of {name!r} failed")
        return name

    def _refresh_contracts_from_state(self) -> None:
        for key, vv in list(self.state.items()):
            if not key.startswith("_lifecycle/contract/"):
                continue
            cname = key.split("/", 2)[2]
            if cname not in self._contracts:
                self._contracts[cname] = self._instantiate(cname, decode_value(vv.value))

    # -- pipeline ----------------------------------------------------------

    def submit(self, submitter: Principal, contract_name: str, op: str, args: dict) -> str:
        """Endorse against committed state and enqueue; returns the tx id.

        Contract failures are captured and committed later with validity
        endorsement-error, mirroring a failed endorsement response.
        """
        with self._lock:
            if not self.is_authorized_submitter(submitter):
                raise LedgerError("non-member-submitter",
                                  f"{submitter.id} may not submit on {self.name}")
            if contract_name not in self._contracts:
                raise LedgerError("unknown-contract", contract_name)
            self._tx_seq += 1
            tx_id = f"{self.name}-tx{self._tx_seq:06d}"
            ctx = TxContext(self, submitter, self.network.clock.now)
            ctx._ns_stack.append(contract_name)
            error = None
            response = None
            try:
                response = self._contracts[contract_name].execute(ctx, op, args)
                rwset = ctx.build_rwset()
            except ContractError as exc:
                error = exc.code
                response = {"status": "error", "code": exc.code, "message": str(exc)}
                rwset = ReadWriteSet()
            tx = TransactionRecord(
                tx_id=tx_id, channel=self.name, submitter=submitter.id,
                invocation=(contract_name, op, args), rwset=rwset,
                submit_time=self.network.clock.now, response=response, error=error,
            )
            self._txs[tx_id] = tx
            self.pending.append(tx)
            return tx_id

    def commit_block(self, max_txs: int | None = None) -> Block | None:
        """Order pending FIFO, MVCC-validate cumulatively, apply, emit.

        Empty pending queue commits nothing. Validation failures are
        recorded (mvcc-conflict), never raised.
        """
        with self._lock:
            if not self.pending:
                return None
            limit = self.block_size if max_txs is None else min(max_txs, self.block_size)
            batch: list[TransactionRecord] = []
            while self.pending and len(batch) < limit:
                batch.append(self.pending.popleft())
            height = len(self.blocks)
            now = self.network.clock.now
            for idx, tx in enumerate(batch):
                tx.commit_time = now
                tx.validity = self._validate_and_apply(tx, (height, idx))
            block = Block(height=height, channel=self.name,
                          transactions=batch, prev_hash=self.blocks[-1].hash)
            block.hash = block.compute_hash()
            self.blocks.append(block)
            if self.record_snapshots:
                self.snapshot_hashes.append(self.state.hash())
            self._refresh_contracts_from_state()
            for tx in batch:
                if tx.validity == VALID:
                    for name, payload in tx.rwset.events:
                        ev = Event(name=name, channel=self.name,
                                   payload=payload, emitting_tx=tx.tx_id)
                        self.events.append(ev)
                        for listener in self.event_listeners:
                            listener(ev)
            return block

    def _validate_and_apply(self, tx: TransactionRecord, version: tuple[int, int]) -> str:
        if tx.error is not None:
            return ENDORSEMENT_ERROR
        # defensive channel-isolation check: every rwset key must live in a
        # namespace belonging to a contract deployed on this channel
        touched = [k for k, _ in tx.rwset.reads] + [k for k, _ in tx.rwset.writes]
        for key in touched:
            if key.split("/", 1)[0] not in self._contracts:
                return ENDORSEMENT_ERROR
        for key, observed in tx.rwset.reads:
            vv = self.state.get(key)
            current = vv.version if vv is not None else None
            if current != observed:
                return MVCC_CONFLICT
        for key, value in tx.rwset.writes:
            self.state.apply_write(key, value, version)
        return VALID

    # -- reads -------------------------------------------------------------

    def query(self, key: str) -> bytes:
        """Committed value only; pending writes are never visible."""
        vv = self.state.get(key)
        if vv is None:
            raise LedgerError("unknown-key", key)
        return vv.value

    def evaluate(self, submitter: Principal, contract_name: str, op: str, args: dict) -> Any:
        """Read-only contract execution against committed state; nothing is
        ordered or committed, so no transaction appears in the log."""
        with self._lock:
            if not self.is_authorized_submitter(submitter):
                raise LedgerError("non-member-submitter", submitter.id)
            if contract_name not in self._contracts:
                raise LedgerError("unknown-contract", contract_name)
            ctx = TxContext(self, submitter, self.network.clock.now)
            ctx._ns_stack.append(contract_name)
            return self._contracts[contract_name].execute(ctx, op, args)

    def get_tx(self, tx_id: str) -> TransactionRecord:
        return self._txs[tx_id]

    def state_hash(self) -> str:
        return self.state.hash()

    # -- export / verify / replay -------------------------------------------

    def restore_from_log(self, blocks: list[Block]) -> None:
        """Rebuild committed state, contract registry and event history from
        an exported block log. The channel must be freshly created (genesis
        only) and the log's genesis must match ours."""
        verify_block_log(blocks)
        with self._lock:
            if len(self.blocks) != 1:
                raise LedgerError("restore-on-nonempty-channel", self.name)
            if not blocks or blocks[0].hash != self.blocks[0].hash:
                raise LedgerError("broken-hash-chain", "genesis mismatch")
            for block in blocks[1:]:
                for idx, tx in enumerate(block.transactions):
                    recomputed = self._validate_and_apply(tx, (block.height, idx))
                    if recomputed != tx.validity:
                        raise LedgerError("broken-hash-chain",
                                          f"validity mismatch in {tx.tx_id}")
                    self._txs[tx.tx_id] = tx
                self.blocks.append(block)
                self._refresh_contracts_from_state()
                for tx in block.transactions:
                    if tx.validity == VALID:
                        for name, payload in tx.rwset.events:
                            self.events.append(Event(name=name, channel=self.name,
                                                     payload=payload,
                                                     emitting_tx=tx.tx_id))
            # tx ids are "<channel>-tx<n>"; continue numbering past the log
            seqs = [int(tx.tx_id.rsplit("tx", 1)[1])
                    for b in blocks for tx in b.transactions]
            self._tx_seq = max(seqs, default=0)

    def export_blocks(self) -> list[str]:
        """One JSON object per line, canonical field order, hex hashes."""
        return [canonical_json(b.to_dict()) for b in self.blocks]

    def write_block_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            for line in self.export_blocks():
                fp.write(line + "\n")


def verify_block_log(blocks: list[Block]) -> None:
    """Check the hash chain; raises broken-hash-chain on any tampering."""
    prev = GENESIS_HASH
    for i, block in enumerate(blocks):
        if block.height != i:
            raise LedgerError("broken-hash-chain", f"height gap at {i}")
        if block.prev_hash != prev:
            raise LedgerError("broken-hash-chain", f"prev link broken at height {i}")
        if block.compute_hash() != block.hash:
            raise LedgerError("broken-hash-chain", f"hash mismatch at height {i}")
        prev = block.hash


def replay(blocks: list[Block]) -> WorldState:
    """Re-run validation+apply over a verified block log.

    Validity is recomputed from the recorded read-write sets, so the
    resulting state (and its hash) is a pure function of the log.
    """
    verify_block_log(blocks)
    state = WorldState()
    for block in blocks:
        for idx, tx in enumerate(block.transactions):
            if tx.error is not None:
                continue
            ok = True
            for key, observed in tx.rwset.reads:
                vv = state.get(key)
                current = vv.version if vv is not None else None
                if current != observed:
                    ok = False
                    break
            if ok:
                for key, value in tx.rwset.writes:
                    state.apply_write(key, value, (block.height, idx))
    return state


def load_block_log(lines: Iterable[str]) -> list[Block]:
    blocks = []
    for raw in lines:
        raw = raw.strip()
        if not raw:
            continue
        try:
            blocks.append(Block.from_dict(json.loads(raw)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise LedgerError("broken-hash-chain", f"unparseable block line: {exc}")
    return blocks


class Network:
    """The base transport-chain ledger plus its channels.

    Channel creation is itself recorded as a transaction on the network
    ledger, so the topology is part of the auditable history.
    """

    def __init__(self, clock: SimClock | None = None, block_size: int = 50,
                 record_snapshots: bool = False):
        self.clock = clock or SimClock()
        self.block_size = block_size
        self.record_snapshots = record_snapshots
        self.principals: dict[str, Principal] = {}
        self.channels: dict[str, Channel] = {}
        self._factories: dict[str, Callable[[str, dict], Contract]] = {}
        self.admin = Principal(id="network-admin", kind=NETWORK_ADMIN)
        self.register_principal(self.admin)
        self._lock = threading.RLock()
        # the base ledger is a channel owned by the network admin
        self.base = Channel("_network", self.admin, [], self, block_size)

    # -- principals ---------------------------------------------------------

    def register_principal(self, principal: Principal) -> Principal:
        existing = self.principals.get(principal.id)
        if existing is not None:
            if existing != principal:
                raise LedgerError("duplicate-principal", principal.id)
            return existing
        if principal.org is not None and principal.org not in self.principals:
            raise LedgerError("unknown-principal", f"org {principal.org!r} not registered")
        self.principals[principal.id] = principal
        return principal

    def principal(self, pid: str) -> Principal:
        try:
            return self.principals[pid]
        except KeyError:
            raise LedgerError("unknown-principal", pid) from None

    # -- channels -----------------------------------------------------------

    def create_channel(self, name: str, organisation: Principal,
                       companies: list[Principal]) -> Channel:
        with self._lock:
            if name in self.channels or name == "_network":
                raise LedgerError("duplicate-channel-name", name)
            if organisation.kind != ORGANISATION:
                raise LedgerError("wrong-principal-kind",
                                  f"{organisation.id} is not an organisation")
            if not companies:
                raise LedgerError("wrong-principal-kind", "channel needs >=1 company")
            for c in companies:
                if c.kind != TRANSPORT_COMPANY:
                    raise LedgerError("wrong-principal-kind",
                                      f"{c.id} is not a transport company")
            channel = Channel(name, organisation, companies, self,
                              self.block_size, self.record_snapshots)
            self.channels[name] = channel
            self.base.submit(self.admin, "_lifecycle", "register-channel",
                             {"name": name, "organisation": organisation.id,
                              "companies": [c.id for c in companies]})
            self.base.commit_block()
            return channel

    def channel(self, name: str) -> Channel:
        try:
            return self.channels[name]
        except KeyError:
            raise LedgerError("unknown-channel", name) from None

    # -- contract factory -----------------------------------------------------

    def register_contract_type(self, ctype: str,
                               factory: Callable[[str, dict], Contract]) -> None:
        self._factories[ctype] = factory

    def contract_factory(self, name: str, ctype: str, config: dict) -> Contract:
        if ctype not in self._factories:
            raise LedgerError("unknown-contract", f"no factory for type {ctype!r}")
        return self._factories[ctype](name, config)
