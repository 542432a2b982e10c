"""Access control smart contract: the organisation's delegation tree,
rule evaluation, trip approval and trip settlement.

Delegation is monotone by construction: a child node carries the
conjunction of every condition added along its root path, so anything a
child approves its parent would approve too. Sub-limits and per-period
budgets are charged pessimistically (the trip's maximum cost) when a
trip is approved and the unused remainder is refunded at settlement,
which keeps per-node budget soundness independent of settlement order.

Two spending modes are supported per deployment:

* ``reserve`` (default): approval places a hold for the trip's maximum
  cost on the token contract pool inside the same transaction, so the
  balance check and the rule check commit atomically and the pool can
  never be overspent.
* ``postpaid``: approval validates rules and reads the pool balance but
  reserves nothing; settlement records the per-trip spend on the trip
  object only. This matches deployments where trips are invoiced after
  the fact and is what the benchmark workload exercises, since it keeps
  every approval free of shared-key writes.

Denials are returned values, never ledger errors: a denied request
commits as a valid transaction with an empty read-write set, so it is
auditable while leaving state bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import conditions as cond
from .conditions import (
    All,
    Condition,
    TripContext,
    budgets_in,
    condition_from_json,
    condition_to_json,
    evaluate,
    period_key,
)
from .ledger import (
    Channel,
    Contract,
    ContractError,
    EMPLOYEE,
    DEPARTMENT,
    LedgerError,
    Principal,
    TRANSPORT_COMPANY,
    TxContext,
)

ROOT_NODE_ID = "root"

MODE_RESERVE = "reserve"
MODE_POSTPAID = "postpaid"

# denial reasons (returned, not raised)
DENY_NO_DELEGATION = "no-delegation"
DENY_REVOKED = "revoked"
DENY_BUDGET = "budget-exceeded"
DENY_POOL = "insufficient-pool"
DENY_DUPLICATE = "duplicate-trip"


def deny_condition(label: str) -> str:
    return f"condition-failed:{label}"


@dataclass(frozen=True)
class TripRequest:
    trip_id: str
    employee: str
    transport_type: str
    origin: tuple[float, float]
    destination: tuple[float, float]
    requested_at: int
    max_cost: int

    def __post_init__(self):
        if self.max_cost <= 0:
            raise ValueError("max_cost must be positive")

    def to_json(self) -> dict:
        return {
            "trip_id": self.trip_id,
            "employee": self.employee,
            "transport_type": self.transport_type,
            "origin": [self.origin[0], self.origin[1]],
            "destination": [self.destination[0], self.destination[1]],
            "requested_at": self.requested_at,
            "max_cost": self.max_cost,
        }

    @staticmethod
    def from_json(d: dict) -> "TripRequest":
        return TripRequest(
            trip_id=d["trip_id"],
            employee=d["employee"],
            transport_type=d["transport_type"],
            origin=(float(d["origin"][0]), float(d["origin"][1])),
            destination=(float(d["destination"][0]), float(d["destination"][1])),
            requested_at=int(d["requested_at"]),
            max_cost=int(d["max_cost"]),
        )


@dataclass(frozen=True)
class NodeView:
    """Pure view of one delegation node, used by the rule engine."""

    node_id: str
    added_conditions: Condition
    sub_limit: tuple[int, str] | None  # (credits, period)
    revoked: bool


def decide_by_rules(path: list[NodeView], ctx: TripContext,
                    counter_lookup) -> str | None:
    """Judge a trip against one root-to-leaf path, ignoring pool balance.

    ``counter_lookup(node_id, period) -> already-spent credits`` supplies
    per-node period counters. Returns None on approval, else the denial
    reason. Each node's own conditions see that node's counters, so a
    budget leaf always bounds the spend charged through its own node.
    """
    for node in path:
        if node.revoked:
            return DENY_REVOKED
    for node in path:
        periods = {b.period for b in budgets_in(node.added_conditions)}
        if node.sub_limit is not None:
            periods.add(node.sub_limit[1])
        spent = {p: counter_lookup(node.node_id, p) for p in periods}
        node_ctx = TripContext(
            time_ms=ctx.time_ms, origin=ctx.origin, destination=ctx.destination,
            transport_type=ctx.transport_type, role=ctx.role, amount=ctx.amount,
            period_spent=spent,
        )
        label = evaluate(node.added_conditions, node_ctx)
        if label is not None:
            if label == cond.BudgetPerPeriod.kind:
                return DENY_BUDGET
            return deny_condition(label)
        if node.sub_limit is not None:
            credits, period = node.sub_limit
            if spent[period] + ctx.amount > credits:
                return DENY_BUDGET
    return None


class AccessControlContract(Contract):
    """One per channel, controlled by the channel's organisation."""

    ctype = "access"

    def __init__(self, name: str, config: dict):
        self.name = name
        self.organisation = config["organisation"]
        self.token_contracts = list(config.get("token_contracts", []))
        self.spending_mode = config.get("spending_mode", MODE_RESERVE)
        if self.spending_mode not in (MODE_RESERVE, MODE_POSTPAID):
            raise LedgerError("invalid-config", f"bad spending mode {self.spending_mode!r}")

    def config_dict(self) -> dict:
        return {
            "organisation": self.organisation,
            "token_contracts": self.token_contracts,
            "spending_mode": self.spending_mode,
        }

    def execute(self, ctx: TxContext, op: str, args: dict):
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            raise ContractError("unknown-operation", op)
        return handler(ctx, args)

    # -- tree management -------------------------------------------------------

    def _op_init(self, ctx: TxContext, args: dict):
        if ctx.submitter.id != self.organisation:
            raise ContractError("wrong-caller", "only the organisation deploys rules")
        if ctx.get(f"node/{ROOT_NODE_ID}") is not None:
            raise ContractError("already-deployed")
        root_conditions = condition_from_json(args.get("root_conditions", {"kind": "all", "items": []}))
        ctx.put(f"node/{ROOT_NODE_ID}", {
            "grantor": self.organisation,
            "grantee": self.organisation,
            "parent": None,
            "conditions": condition_to_json(root_conditions),
            "sub_limit": None,
            "revoked": False,
            "children": [],
        })
        ctx.put("node-seq", 0)
        return {"node_id": ROOT_NODE_ID}

    def _op_delegate(self, ctx: TxContext, args: dict):
        parent_id = args["parent"]
        grantee_id = args["grantee"]
        parent = ctx.get(f"node/{parent_id}")
        if parent is None:
            raise ContractError("unknown-node", parent_id)
        if ctx.submitter.id != parent["grantee"]:
            raise ContractError("not-grantee",
                                f"{ctx.submitter.id} does not hold node {parent_id}")
        if parent["revoked"]:
            raise ContractError("revoked-parent", parent_id)
        grantee = ctx.channel.network.principals.get(grantee_id)
        if grantee is None:
            raise ContractError("foreign-grantee", f"unknown principal {grantee_id}")
        if grantee.kind not in (EMPLOYEE, DEPARTMENT) or grantee.org != self.organisation:
            raise ContractError("foreign-grantee",
                                f"{grantee_id} does not belong to {self.organisation}")
        added = condition_from_json(args.get("conditions", {"kind": "all", "items": []}))
        sub_limit = args.get("sub_limit")
        if sub_limit is not None:
            credits, period = int(sub_limit[0]), sub_limit[1]
            if credits < 0 or period not in cond.PERIODS:
                raise ContractError("invalid-sub-limit", str(sub_limit))
            sub_limit = [credits, period]
        seq = (ctx.get("node-seq") or 0) + 1
        node_id = args.get("node_id") or f"n{seq:04d}"
        if ctx.get(f"node/{node_id}") is not None:
            raise ContractError("duplicate-node-id", node_id)
        ctx.put("node-seq", seq)
        ctx.put(f"node/{node_id}", {
            "grantor": parent["grantee"],
            "grantee": grantee_id,
            "parent": parent_id,
            "conditions": condition_to_json(added),
            "sub_limit": sub_limit,
            "revoked": False,
            "children": [],
        })
        parent["children"] = parent["children"] + [node_id]
        ctx.put(f"node/{parent_id}", parent)
        index = ctx.get(f"grantee-index/{grantee_id}") or []
        ctx.put(f"grantee-index/{grantee_id}", index + [node_id])
        return {"node_id": node_id}

    def _op_revoke(self, ctx: TxContext, args: dict):
        node_id = args["node_id"]
        node = ctx.get(f"node/{node_id}")
        if node is None:
            raise ContractError("unknown-node", node_id)
        # authorized: the node's grantor or the grantee of any ancestor
        allowed = {node["grantor"]}
        parent_id = node["parent"]
        while parent_id is not None:
            parent = ctx.get(f"node/{parent_id}")
            allowed.add(parent["grantee"])
            allowed.add(parent["grantor"])
            parent_id = parent["parent"]
        if ctx.submitter.id not in allowed:
            raise ContractError("not-authorized",
                                f"{ctx.submitter.id} is not on the grant chain")
        stack = [node_id]
        revoked = []
        while stack:
            nid = stack.pop()
            n = ctx.get(f"node/{nid}")
            if not n["revoked"]:
                n["revoked"] = True
                ctx.put(f"node/{nid}", n)
                revoked.append(nid)
            stack.extend(n["children"])
        return {"revoked": sorted(revoked)}

    # -- rule evaluation -------------------------------------------------------

    def _path_to_root(self, ctx: TxContext, node_id: str) -> list[NodeView]:
        path = []
        nid: str | None = node_id
        while nid is not None:
            raw = ctx.get(f"node/{nid}")
            path.append(NodeView(
                node_id=nid,
                added_conditions=condition_from_json(raw["conditions"]),
                sub_limit=tuple(raw["sub_limit"]) if raw["sub_limit"] else None,
                revoked=raw["revoked"],
            ))
            nid = raw["parent"]
        path.reverse()
        return path

    def _counter_lookup(self, ctx: TxContext, at_ms: int):
        def lookup(node_id: str, period: str) -> int:
            key = period_key(period, at_ms)
            return ctx.get(f"counter/{node_id}/{key}") or 0
        return lookup

    # -- trips -------------------------------------------------------------------

    def _op_request_access(self, ctx: TxContext, args: dict):
        trip = TripRequest.from_json(args)

        def denied(reason: str):
            ctx.discard_effects()
            return {"status": "denied", "trip_id": trip.trip_id, "reason": reason}

        if ctx.get(f"trip/{trip.trip_id}") is not None:
            return denied(DENY_DUPLICATE)
        employee = ctx.channel.network.principals.get(trip.employee)
        role = employee.role if employee is not None else ""
        trip_ctx = TripContext(
            time_ms=trip.requested_at, origin=trip.origin,
            destination=trip.destination, transport_type=trip.transport_type,
            role=role, amount=trip.max_cost,
        )
        node_ids = ctx.get(f"grantee-index/{trip.employee}") or []
        live = []
        for nid in node_ids:
            raw = ctx.get(f"node/{nid}")
            if raw is not None and not raw["revoked"]:
                live.append(nid)
        if not live:
            return denied(DENY_NO_DELEGATION)
        lookup = self._counter_lookup(ctx, trip.requested_at)
        chosen: str | None = None
        first_reason: str | None = None
        for nid in live:
            path = self._path_to_root(ctx, nid)
            reason = decide_by_rules(path, trip_ctx, lookup)
            if reason is None:
                chosen = nid
                break
            if first_reason is None:
                first_reason = reason
        if chosen is None:
            return denied(first_reason or DENY_NO_DELEGATION)

        # pick the first released token contract whose price list serves the type
        serves_type = False
        token_name = None
        pool_available = 0
        for tname in self.token_contracts:
            info = ctx.invoke(tname, "info", {})
            if trip.transport_type not in info["price_list"]:
                continue
            serves_type = True
            if info["phase"] == "released":
                token_name = tname
                pool_available = info["pool_available"]
                break
        if not serves_type:
            return denied(deny_condition(cond.TransportTypes.kind))
        if token_name is None:
            return denied(DENY_POOL)

        hold_id = None
        if self.spending_mode == MODE_RESERVE:
            try:
                hold = ctx.invoke(token_name, "hold", {
                    "trip_id": trip.trip_id,
                    "employee": trip.employee,
                    "max_amount": trip.max_cost,
                })
            except ContractError as exc:
                if exc.code == "insufficient-pool":
                    return denied(DENY_POOL)
                if exc.code == "duplicate-trip-id":
                    return denied(DENY_DUPLICATE)
                raise
            hold_id = hold["hold_id"]
        else:
            if pool_available < trip.max_cost:
                return denied(DENY_POOL)

        # charge period counters pessimistically with the maximum cost
        charged = []
        path = self._path_to_root(ctx, chosen)
        for node in path:
            periods = {b.period for b in budgets_in(node.added_conditions)}
            if node.sub_limit is not None:
                periods.add(node.sub_limit[1])
            for period in sorted(periods):
                key = period_key(period, trip.requested_at)
                ckey = f"counter/{node.node_id}/{key}"
                ctx.put(ckey, (ctx.get(ckey) or 0) + trip.max_cost)
                charged.append([node.node_id, key])

        company = ctx.channel.contract(token_name).company  # type: ignore[attr-defined]
        ctx.put(f"trip/{trip.trip_id}", {
            "trip": trip.to_json(),
            "status": "approved",
            "hold_id": hold_id,
            "token_contract": token_name,
            "company": company,
            "node_id": chosen,
            "charged": charged,
            "decision_reason": "approved",
            "actual_cost": None,
        })
        ctx.emit("trip-approved", {
            "trip_id": trip.trip_id,
            "employee": trip.employee,
            "company": company,
            "transport_type": trip.transport_type,
            "max_cost": trip.max_cost,
            "hold_id": hold_id,
        })
        return {"status": "approved", "trip_id": trip.trip_id,
                "hold_id": hold_id, "company": company, "node_id": chosen}

    def _op_finish_trip(self, ctx: TxContext, args: dict):
        trip_id = args["trip_id"]
        actual = int(args["actual_cost"])
        if (ctx.submitter.kind != TRANSPORT_COMPANY
                or ctx.submitter.id not in {c.id for c in ctx.channel.companies}):
            raise ContractError("wrong-caller",
                                "only a transport company on the channel settles trips")
        record = ctx.get(f"trip/{trip_id}")
        if record is None or record["status"] == "denied":
            raise ContractError("unknown-trip", trip_id)
        if record["status"] == "finished":
            raise ContractError("already-finished", trip_id)
        max_cost = record["trip"]["max_cost"]
        if actual > max_cost:
            raise ContractError("over-hold-amount", f"{actual} > {max_cost}")
        if self.spending_mode == MODE_RESERVE:
            ctx.invoke(record["token_contract"], "settle",
                       {"hold_id": record["hold_id"], "actual_amount": actual})
        else:
            ctx.emit("trip-settled", {
                "contract": record["token_contract"],
                "hold_id": None,
                "trip_id": trip_id,
                "employee": record["trip"]["employee"],
                "actual_cost": actual,
                "refunded": 0,
            })
        refund = max_cost - actual
        if refund > 0:
            for node_id, key in record["charged"]:
                ckey = f"counter/{node_id}/{key}"
                ctx.put(ckey, (ctx.get(ckey) or 0) - refund)
        record["status"] = "finished"
        record["actual_cost"] = actual
        ctx.put(f"trip/{trip_id}", record)
        return {"status": "finished", "trip_id": trip_id, "actual_cost": actual}

    def _op_get_trip(self, ctx: TxContext, args: dict):
        record = ctx.get(f"trip/{args['trip_id']}")
        if record is None:
            raise ContractError("unknown-trip", args["trip_id"])
        return record


ACCESS_CONTRACT_NAME = "access"


def make_access_contract(name: str, config: dict) -> AccessControlContract:
    return AccessControlContract(name, config)


def deploy_access_contract(channel: Channel, organisation: Principal,
                           root_conditions: Condition | None = None,
                           token_contracts: list[str] | None = None,
                           spending_mode: str = MODE_RESERVE) -> str:
    """Deploy the channel's access contract and create its root node."""
    if organisation.id != channel.organisation.id:
        raise LedgerError("wrong-caller",
                          f"{organisation.id} does not own channel {channel.name}")
    if channel.contract(ACCESS_CONTRACT_NAME) is not None:
        raise LedgerError("already-deployed", ACCESS_CONTRACT_NAME)
    if token_contracts is None:
        token_contracts = [
            f"token-{c.id}" for c in channel.companies
            if channel.contract(f"token-{c.id}") is not None
        ]
    channel.deploy(organisation, ACCESS_CONTRACT_NAME, "access", {
        "organisation": organisation.id,
        "token_contracts": token_contracts,
        "spending_mode": spending_mode,
    })
    root = (root_conditions or All()).to_json()
    tx_id = channel.submit(organisation, ACCESS_CONTRACT_NAME, "init",
                           {"root_conditions": root})
    channel.commit_block()
    tx = channel.get_tx(tx_id)
    if tx.validity != "valid":
        raise LedgerError(tx.error or "init-failed", str(tx.response))
    return ACCESS_CONTRACT_NAME
