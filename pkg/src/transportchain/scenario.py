"""End-to-end scenario engine: off-chain negotiation, credit purchase,
access setup, and trip lifecycles, driven from a declarative JSON
document.

A scenario is fully deterministic given its seed: the engine owns the
logical clock and the submission order, so two runs of the same file
produce byte-identical block logs and state hashes.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import jsonschema

from .access_contract import (
    ACCESS_CONTRACT_NAME,
    MODE_RESERVE,
    TripRequest,
    deploy_access_contract,
    make_access_contract,
)
from .ledger import LedgerError, Network, Principal, SimClock
from .token_contract import (
    Proposal,
    deploy_token_contract,
    init_escrow,
    make_token_contract,
    token_contract_name,
)

# Monday 2024-01-08 08:00 UTC: inside the default working-hours windows
DEFAULT_START_MS = int(
    datetime.datetime(2024, 1, 8, 8, 0, tzinfo=datetime.timezone.utc).timestamp() * 1000
)

_CONDITION_SCHEMA = {"type": "object", "required": ["kind"]}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "seed", "principals", "channels"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
        "start_time_ms": {"type": "integer", "minimum": 0},
        "principals": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "kind": {"enum": ["organisation", "department", "employee",
                                      "transport-company"]},
                    "org": {"type": "string"},
                    "role": {"type": "string"},
                },
            },
        },
        "channels": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "organisation", "companies"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "organisation": {"type": "string"},
                    "companies": {"type": "array", "items": {"type": "string"},
                                  "minItems": 1},
                    "initial_balances": {
                        "type": "object",
                        "additionalProperties": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "purchases": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["channel", "company", "credit_amount", "total_price",
                             "price_list"],
                "additionalProperties": False,
                "properties": {
                    "channel": {"type": "string"},
                    "company": {"type": "string"},
                    "credit_amount": {"type": "integer", "minimum": 1},
                    "total_price": {"type": "integer", "minimum": 1},
                    "price_list": {
                        "type": "object",
                        "minProperties": 1,
                        "additionalProperties": {"type": "integer", "minimum": 0},
                    },
                    "negotiation": {
                        "type": "object",
                        "required": ["ask", "bid"],
                        "additionalProperties": False,
                        "properties": {
                            "ask": {"type": "integer", "minimum": 0},
                            "bid": {"type": "integer", "minimum": 0},
                        },
                    },
                    "deposit_tokens": {"type": "integer", "minimum": 1},
                    "deposit_payment": {"type": "integer", "minimum": 1},
                    "order": {"enum": ["tokens-first", "payment-first"]},
                },
            },
        },
        "access": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["channel"],
                "additionalProperties": False,
                "properties": {
                    "channel": {"type": "string"},
                    "spending_mode": {"enum": ["reserve", "postpaid"]},
                    "root_conditions": _CONDITION_SCHEMA,
                    "script": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["action"],
                            "properties": {
                                "action": {"enum": ["delegate", "revoke"]},
                                "caller": {"type": "string"},
                                "parent": {"type": "string"},
                                "grantee": {"type": "string"},
                                "node_id": {"type": "string"},
                                "conditions": _CONDITION_SCHEMA,
                                "sub_limit": {
                                    "type": "array",
                                    "prefixItems": [
                                        {"type": "integer", "minimum": 0},
                                        {"enum": ["day", "week", "month"]},
                                    ],
                                    "minItems": 2, "maxItems": 2,
                                },
                            },
                        },
                    },
                },
            },
        },
        "trips": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["channel", "trip_id", "employee", "transport_type",
                             "origin", "destination", "max_cost"],
                "additionalProperties": False,
                "properties": {
                    "channel": {"type": "string"},
                    "trip_id": {"type": "string", "minLength": 1},
                    "employee": {"type": "string"},
                    "transport_type": {"type": "string"},
                    "origin": {"type": "array", "items": {"type": "number"},
                               "minItems": 2, "maxItems": 2},
                    "destination": {"type": "array", "items": {"type": "number"},
                                    "minItems": 2, "maxItems": 2},
                    "max_cost": {"type": "integer", "minimum": 1},
                    "actual_cost": {"type": "integer", "minimum": 0},
                    "start_after_ms": {"type": "integer", "minimum": 0},
                    "duration_ms": {"type": "integer", "minimum": 0},
                    "finisher": {"type": "string"},
                },
            },
        },
    },
}


def validate_scenario(doc: Any) -> dict:
    """Schema-check a scenario document; raises scenario-validation-error
    with a JSON-path context on failure."""
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "$" + "".join(f"[{p!r}]" for p in exc.absolute_path)
        raise LedgerError("scenario-validation-error", f"{path}: {exc.message}") from None
    return doc


@dataclass(frozen=True)
class NegotiationOutcome:
    proposal: Proposal
    agreed: bool


def negotiate(company: str, organisation: str, ask: int, bid: int,
              credit_amount: int, price_list: dict[str, int]) -> NegotiationOutcome:
    """Deterministic off-chain bargaining stub: a deal closes exactly when
    the buyer's bid covers the seller's ask, at the seller's ask."""
    agreed = bid >= ask
    proposal = Proposal(company=company, organisation=organisation,
                        credit_amount=credit_amount, total_price=ask,
                        price_list=dict(price_list))
    return NegotiationOutcome(proposal=proposal, agreed=agreed)


@dataclass
class TripOutcome:
    trip_id: str
    channel: str
    status: str
    reason: str
    hold_id: str | None = None
    actual_cost: int | None = None

    def to_dict(self) -> dict:
        return {
            "trip_id": self.trip_id,
            "channel": self.channel,
            "status": self.status,
            "reason": self.reason,
            "hold_id": self.hold_id,
            "actual_cost": self.actual_cost,
        }


@dataclass
class ScenarioResult:
    name: str
    seed: int
    network: Network
    trips: list[TripOutcome] = field(default_factory=list)
    purchase_phases: list[dict] = field(default_factory=list)

    def state_hashes(self) -> dict[str, str]:
        return {name: ch.state_hash() for name, ch in sorted(self.network.channels.items())}

    def event_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ch in self.network.channels.values():
            for ev in ch.events:
                counts[ev.name] = counts.get(ev.name, 0) + 1
        return dict(sorted(counts.items()))

    def events(self, channel: str | None = None) -> list:
        if channel is not None:
            return list(self.network.channel(channel).events)
        out = []
        for name in sorted(self.network.channels):
            out.extend(self.network.channels[name].events)
        return out

    def block_logs(self) -> dict[str, list[str]]:
        return {name: ch.export_blocks()
                for name, ch in sorted(self.network.channels.items())}

    def summary(self) -> dict:
        return {
            "scenario": self.name,
            "seed": self.seed,
            "state_hashes": self.state_hashes(),
            "purchases": self.purchase_phases,
            "trips": [t.to_dict() for t in self.trips],
            "event_counts": self.event_counts(),
        }


def new_network(clock: SimClock | None = None, block_size: int = 50,
                record_snapshots: bool = False) -> Network:
    """A network with the standard contract types registered."""
    net = Network(clock=clock, block_size=block_size, record_snapshots=record_snapshots)
    net.register_contract_type("token", make_token_contract)
    net.register_contract_type("access", make_access_contract)
    return net


class ScenarioRunner:
    """Owns the clock and the submission order for one scenario run."""

    def __init__(self, doc: dict, record_snapshots: bool = True):
        self.doc = validate_scenario(doc)
        start = doc.get("start_time_ms", DEFAULT_START_MS)
        self.net = new_network(clock=SimClock(start), record_snapshots=record_snapshots)
        self.result = ScenarioResult(name=doc["name"], seed=doc["seed"], network=self.net)

    # each stage commits what it submitted so later stages see released state

    def run(self) -> ScenarioResult:
        self._setup_principals()
        self._setup_channels()
        for purchase in self.doc.get("purchases", []):
            self.run_purchase(purchase)
        for access in self.doc.get("access", []):
            self._setup_access(access)
        for trip in self.doc.get("trips", []):
            self.run_trip(trip)
        return self.result

    def _fail(self, message: str) -> None:
        raise LedgerError("scenario-validation-error", message)

    def _setup_principals(self) -> None:
        entries = sorted(
            self.doc["principals"],
            key=lambda p: 0 if p["kind"] in ("organisation", "transport-company") else 1,
        )
        for p in entries:
            self.net.register_principal(Principal(
                id=p["id"], kind=p["kind"], org=p.get("org"), role=p.get("role", ""),
            ))

    def _setup_channels(self) -> None:
        for spec in self.doc["channels"]:
            org = self.net.principal(spec["organisation"])
            companies = [self.net.principal(c) for c in spec["companies"]]
            channel = self.net.create_channel(spec["name"], org, companies)
            balances = spec.get("initial_balances", {})
            for owner in sorted(balances):
                channel.submit(self.net.admin, "bank", "mint",
                               {"owner": owner, "amount": balances[owner]})
            if balances:
                channel.commit_block()

    def run_purchase(self, spec: dict) -> str:
        """Steps 1-4: negotiate, escrow both legs, release or roll back."""
        channel = self.net.channel(spec["channel"])
        company = self.net.principal(spec["company"])
        org = channel.organisation
        if spec.get("negotiation") is not None:
            outcome = negotiate(company.id, org.id, spec["negotiation"]["ask"],
                                spec["negotiation"]["bid"], spec["credit_amount"],
                                spec["price_list"])
            if not outcome.agreed:
                self.result.purchase_phases.append({
                    "channel": channel.name, "company": company.id,
                    "phase": "not-agreed",
                })
                return "not-agreed"
            proposal = outcome.proposal
            if proposal.total_price != spec["total_price"]:
                self._fail(f"negotiated price {proposal.total_price} != "
                           f"declared total_price {spec['total_price']}")
        else:
            proposal = Proposal(company=company.id, organisation=org.id,
                                credit_amount=spec["credit_amount"],
                                total_price=spec["total_price"],
                                price_list=dict(spec["price_list"]))
        tname = token_contract_name(company.id)
        if channel.contract(tname) is None:
            deploy_token_contract(channel, company)
        init_escrow(channel, company, proposal)

        deposits = [
            ("tokens", company, spec.get("deposit_tokens", proposal.credit_amount)),
            ("payment", org, spec.get("deposit_payment", proposal.total_price)),
        ]
        if spec.get("order", "tokens-first") == "payment-first":
            deposits.reverse()
        phase = None
        for leg, submitter, amount in deposits:
            tx_id = channel.submit(submitter, tname, f"deposit_{leg}", {"amount": amount})
            channel.commit_block()
            tx = channel.get_tx(tx_id)
            if tx.validity != "valid":
                raise LedgerError(tx.error or "deposit-failed", str(tx.response))
            phase = tx.response["phase"]
        # both parties must have been notified of the outcome (Steps 4a/4b)
        wanted = "token-released" if phase == "released" else "escrow-rolled-back"
        notified = [ev for ev in channel.events
                    if ev.name == wanted and ev.payload.get("contract") == tname
                    and set(ev.payload.get("notify", [])) == {company.id, org.id}]
        if not notified:
            raise LedgerError("missing-confirmation-event", wanted)
        self.result.purchase_phases.append({
            "channel": channel.name, "company": company.id, "phase": phase,
        })
        return phase

    def _setup_access(self, spec: dict) -> None:
        from .conditions import condition_from_json

        channel = self.net.channel(spec["channel"])
        root = condition_from_json(spec.get("root_conditions", {"kind": "all", "items": []}))
        deploy_access_contract(
            channel, channel.organisation, root_conditions=root,
            spending_mode=spec.get("spending_mode", MODE_RESERVE),
        )
        for step in spec.get("script", []):
            caller = self.net.principal(step["caller"])
            if step["action"] == "delegate":
                args = {
                    "parent": step["parent"],
                    "grantee": step["grantee"],
                    "conditions": step.get("conditions", {"kind": "all", "items": []}),
                    "sub_limit": step.get("sub_limit"),
                }
                if step.get("node_id"):
                    args["node_id"] = step["node_id"]
                tx_id = channel.submit(caller, ACCESS_CONTRACT_NAME, "delegate", args)
            else:
                tx_id = channel.submit(caller, ACCESS_CONTRACT_NAME, "revoke",
                                       {"node_id": step["node_id"]})
            channel.commit_block()
            tx = channel.get_tx(tx_id)
            if tx.validity != "valid":
                raise LedgerError(tx.error or "access-script-failed", str(tx.response))

    def run_trip(self, spec: dict) -> TripOutcome:
        """Steps 6-10: request access; on approval ride, then settle."""
        channel = self.net.channel(spec["channel"])
        if channel.contract(ACCESS_CONTRACT_NAME) is None:
            self._fail(f"channel {channel.name} has no access contract")
        employee = self.net.principal(spec["employee"])
        self.net.clock.advance(spec.get("start_after_ms", 1000))
        trip = TripRequest(
            trip_id=spec["trip_id"],
            employee=employee.id,
            transport_type=spec["transport_type"],
            origin=(spec["origin"][0], spec["origin"][1]),
            destination=(spec["destination"][0], spec["destination"][1]),
            requested_at=self.net.clock.now,
            max_cost=spec["max_cost"],
        )
        tx_id = channel.submit(employee, ACCESS_CONTRACT_NAME, "request_access",
                               trip.to_json())
        channel.commit_block()
        response = channel.get_tx(tx_id).response
        if response.get("status") != "approved":
            outcome = TripOutcome(trip_id=trip.trip_id, channel=channel.name,
                                  status="denied", reason=response.get("reason", "error"))
            self.result.trips.append(outcome)
            return outcome
        self.net.clock.advance(spec.get("duration_ms", 1_800_000))
        finisher = self.net.principal(spec.get("finisher", response["company"]))
        actual = spec.get("actual_cost", trip.max_cost)
        fin_tx = channel.submit(finisher, ACCESS_CONTRACT_NAME, "finish_trip",
                                {"trip_id": trip.trip_id, "actual_cost": actual})
        channel.commit_block()
        fin = channel.get_tx(fin_tx)
        if fin.validity != "valid":
            raise LedgerError(fin.error or "finish-failed", str(fin.response))
        outcome = TripOutcome(trip_id=trip.trip_id, channel=channel.name,
                              status="finished", reason="approved",
                              hold_id=response.get("hold_id"), actual_cost=actual)
        self.result.trips.append(outcome)
        return outcome


def run_scenario(doc: dict, record_snapshots: bool = True) -> ScenarioResult:
    return ScenarioRunner(doc, record_snapshots=record_snapshots).run()


def load_fixture(name: str) -> dict:
    """Load a scenario shipped with the package (e.g. "two_org_network")."""
    ref = resources.files("transportchain") / "fixtures" / f"{name}.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def load_scenario_file(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise LedgerError("scenario-validation-error",
                              f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return validate_scenario(doc)
