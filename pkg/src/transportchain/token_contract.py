"""Token smart contract: escrowed credit purchase, the organisation's
credit pool, holds at access time and settlement at trip end.

Phase machine:

    initialized -> tokens-deposited ---+
    initialized -> payment-deposited --+--> released | rolled-back

Release happens inside the transaction carrying the second deposit and
only when both amounts match the proposal exactly; otherwise the escrow
rolls back, refunding the payment, and a fresh escrow must be started.

After release the pool obeys the conservation law

    credit_amount == pool_available + sum(holds) + spent

at every commit; holds reserve a trip's maximum cost and settlement
refunds the unused remainder. The pool decrement reads the pool key, so
concurrent over-draw is impossible under MVCC validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ledger import (
    Channel,
    Contract,
    ContractError,
    LedgerError,
    Principal,
    TxContext,
)

PHASE_INITIALIZED = "initialized"
PHASE_TOKENS = "tokens-deposited"
PHASE_PAYMENT = "payment-deposited"
PHASE_RELEASED = "released"
PHASE_ROLLED_BACK = "rolled-back"

TERMINAL_PHASES = {PHASE_RELEASED, PHASE_ROLLED_BACK}


@dataclass(frozen=True)
class Proposal:
    company: str
    organisation: str
    credit_amount: int
    total_price: int
    price_list: dict[str, int] = field(default_factory=dict)

    def validate(self) -> None:
        if self.credit_amount <= 0 or self.total_price <= 0 or not self.price_list:
            raise ContractError("invalid-proposal",
                                "needs credit_amount > 0, total_price > 0, non-empty price list")
        for t, p in self.price_list.items():
            if int(p) < 0:
                raise ContractError("invalid-proposal", f"negative price for {t!r}")

    def to_json(self) -> dict:
        return {
            "company": self.company,
            "organisation": self.organisation,
            "credit_amount": self.credit_amount,
            "total_price": self.total_price,
            "price_list": dict(sorted(self.price_list.items())),
        }

    @staticmethod
    def from_json(d: dict) -> "Proposal":
        return Proposal(
            company=d["company"],
            organisation=d["organisation"],
            credit_amount=int(d["credit_amount"]),
            total_price=int(d["total_price"]),
            price_list={k: int(v) for k, v in d["price_list"].items()},
        )


class TokenContract(Contract):
    """One instance per (channel, company) pair."""

    ctype = "token"

    def __init__(self, name: str, config: dict):
        self.name = name
        self.company = config["company"]
        self.organisation = config["organisation"]

    def config_dict(self) -> dict:
        return {"company": self.company, "organisation": self.organisation}

    # -- dispatch -----------------------------------------------------------

    def execute(self, ctx: TxContext, op: str, args: dict):
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            raise ContractError("unknown-operation", op)
        return handler(ctx, args)

    # -- escrow -------------------------------------------------------------

    def _op_init(self, ctx: TxContext, args: dict):
        proposal = Proposal.from_json(args["proposal"])
        proposal.validate()
        if ctx.submitter.id != self.company or proposal.company != self.company:
            raise ContractError("caller-not-company",
                                f"only {self.company} may start this escrow")
        if proposal.organisation != self.organisation:
            raise ContractError("invalid-proposal", "organisation mismatch")
        phase = ctx.get("phase")
        # a released escrow stays in force; only a rolled-back one is retryable
        if phase is not None and phase != PHASE_ROLLED_BACK:
            raise ContractError("active-escrow-exists", f"phase {phase}")
        ctx.put("phase", PHASE_INITIALIZED)
        ctx.put("proposal", proposal.to_json())
        ctx.put("escrowed_tokens", 0)
        ctx.put("escrowed_payment", 0)
        return {"phase": PHASE_INITIALIZED}

    def _op_deposit_tokens(self, ctx: TxContext, args: dict):
        amount = int(args["amount"])
        if ctx.submitter.id != self.company:
            raise ContractError("wrong-caller", "tokens come from the company")
        if amount <= 0:
            raise ContractError("invalid-amount")
        phase = ctx.get("phase")
        if phase not in (PHASE_INITIALIZED, PHASE_PAYMENT):
            raise ContractError("wrong-phase", f"phase {phase}")
        ctx.put("escrowed_tokens", amount)
        if phase == PHASE_PAYMENT:
            return {"phase": self._try_release(ctx)}
        ctx.put("phase", PHASE_TOKENS)
        return {"phase": PHASE_TOKENS}

    def _op_deposit_payment(self, ctx: TxContext, args: dict):
        amount = int(args["amount"])
        if ctx.submitter.id != self.organisation:
            raise ContractError("wrong-caller", "payment comes from the organisation")
        if amount <= 0:
            raise ContractError("invalid-amount")
        phase = ctx.get("phase")
        if phase not in (PHASE_INITIALIZED, PHASE_TOKENS):
            raise ContractError("wrong-phase", f"phase {phase}")
        # moves funds out of the payer's settlement account atomically
        ctx.invoke("bank", "debit", {"owner": self.organisation, "amount": amount})
        ctx.put("escrowed_payment", amount)
        if phase == PHASE_TOKENS:
            return {"phase": self._try_release(ctx)}
        ctx.put("phase", PHASE_PAYMENT)
        return {"phase": PHASE_PAYMENT}

    def _op_try_release(self, ctx: TxContext, args: dict):
        phase = ctx.get("phase")
        tokens = ctx.get("escrowed_tokens") or 0
        payment = ctx.get("escrowed_payment") or 0
        if tokens <= 0 or payment <= 0:
            return {"phase": phase}  # precondition unmet: nothing changes
        return {"phase": self._try_release(ctx)}

    def _try_release(self, ctx: TxContext) -> str:
        proposal = Proposal.from_json(ctx.get("proposal"))
        tokens = ctx.get("escrowed_tokens") or 0
        payment = ctx.get("escrowed_payment") or 0
        if tokens == proposal.credit_amount and payment == proposal.total_price:
            ctx.put("phase", PHASE_RELEASED)
            ctx.put("pool", proposal.credit_amount)
            ctx.put("holds_total", 0)
            ctx.put("spent", 0)
            ctx.put("escrowed_tokens", 0)
            ctx.put("escrowed_payment", 0)
            ctx.invoke("bank", "credit",
                       {"owner": self.company, "amount": proposal.total_price})
            ctx.emit("token-released", {
                "contract": self.name,
                "company": self.company,
                "organisation": self.organisation,
                "credit_amount": proposal.credit_amount,
                "total_price": proposal.total_price,
                "notify": [self.company, self.organisation],
            })
            return PHASE_RELEASED
        # mismatch against the proposal: roll back, return both deposits
        ctx.put("phase", PHASE_ROLLED_BACK)
        if payment > 0:
            ctx.invoke("bank", "credit",
                       {"owner": self.organisation, "amount": payment})
        ctx.put("escrowed_tokens", 0)
        ctx.put("escrowed_payment", 0)
        ctx.emit("escrow-rolled-back", {
            "contract": self.name,
            "company": self.company,
            "organisation": self.organisation,
            "reason": "amount-mismatch",
            "returned_tokens": tokens,
            "refunded_payment": payment,
            "notify": [self.company, self.organisation],
        })
        return PHASE_ROLLED_BACK

    # -- pool ----------------------------------------------------------------

    def _require_access_caller(self, ctx: TxContext) -> None:
        caller = ctx.calling_contract
        if caller is None:
            raise ContractError("not-authorized", "must be invoked by the access contract")
        contract = ctx.channel.contract(caller)
        if contract is None or contract.ctype != "access":
            raise ContractError("not-authorized", f"{caller} is not an access contract")

    def _op_hold(self, ctx: TxContext, args: dict):
        self._require_access_caller(ctx)
        trip_id = args["trip_id"]
        employee = args["employee"]
        max_amount = int(args["max_amount"])
        if max_amount <= 0:
            raise ContractError("invalid-amount")
        if ctx.get("phase") != PHASE_RELEASED:
            raise ContractError("wrong-phase", "escrow not released")
        if ctx.get(f"trip/{trip_id}") is not None:
            raise ContractError("duplicate-trip-id", trip_id)
        pool = ctx.get("pool") or 0
        if pool < max_amount:
            raise ContractError("insufficient-pool", f"pool {pool} < {max_amount}")
        hold_id = f"h-{trip_id}"
        ctx.put("pool", pool - max_amount)
        ctx.put("holds_total", (ctx.get("holds_total") or 0) + max_amount)
        ctx.put(f"hold/{hold_id}",
                {"trip_id": trip_id, "employee": employee, "max_amount": max_amount})
        ctx.put(f"trip/{trip_id}", hold_id)
        ctx.emit("hold-created", {
            "contract": self.name,
            "hold_id": hold_id,
            "trip_id": trip_id,
            "employee": employee,
            "max_amount": max_amount,
        })
        return {"hold_id": hold_id}

    def _op_settle(self, ctx: TxContext, args: dict):
        self._require_access_caller(ctx)
        hold_id = args["hold_id"]
        actual = int(args["actual_amount"])
        hold = ctx.get(f"hold/{hold_id}")
        if hold is None:
            raise ContractError("unknown-hold", hold_id)
        if actual < 0:
            raise ContractError("invalid-amount")
        if actual > hold["max_amount"]:
            raise ContractError("over-hold-amount",
                                f"{actual} > held {hold['max_amount']}")
        refund = hold["max_amount"] - actual
        ctx.put("spent", (ctx.get("spent") or 0) + actual)
        ctx.put("pool", (ctx.get("pool") or 0) + refund)
        ctx.put("holds_total", (ctx.get("holds_total") or 0) - hold["max_amount"])
        ctx.delete(f"hold/{hold_id}")
        ctx.emit("trip-settled", {
            "contract": self.name,
            "hold_id": hold_id,
            "trip_id": hold["trip_id"],
            "employee": hold["employee"],
            "actual_cost": actual,
            "refunded": refund,
        })
        return {"hold_id": hold_id, "actual_cost": actual, "refunded": refund}

    # -- reads ----------------------------------------------------------------

    def _op_balance_of(self, ctx: TxContext, args: dict):
        return {
            "pool_available": ctx.get("pool") or 0,
            "holds_total": ctx.get("holds_total") or 0,
            "spent": ctx.get("spent") or 0,
        }

    def _op_info(self, ctx: TxContext, args: dict):
        proposal = ctx.get("proposal")
        return {
            "phase": ctx.get("phase"),
            "price_list": (proposal or {}).get("price_list", {}),
            "pool_available": ctx.get("pool") or 0,
            "company": self.company,
        }


def make_token_contract(name: str, config: dict) -> TokenContract:
    return TokenContract(name, config)


def token_contract_name(company: str) -> str:
    return f"token-{company}"


def deploy_token_contract(channel: Channel, company: Principal) -> str:
    """Lifecycle-deploy a token contract for one company on the channel."""
    name = token_contract_name(company.id)
    channel.deploy(company, name, "token",
                   {"company": company.id, "organisation": channel.organisation.id})
    return name


def init_escrow(channel: Channel, company: Principal, proposal: Proposal) -> str:
    """Start (or restart, after rollback) the escrow for this pair."""
    name = token_contract_name(company.id)
    tx_id = channel.submit(company, name, "init", {"proposal": proposal.to_json()})
    channel.commit_block()
    tx = channel.get_tx(tx_id)
    if tx.validity != "valid":
        raise LedgerError(tx.error or "init-failed", str(tx.response))
    return name


def balance_of(channel: Channel, viewer: Principal, company: str) -> tuple[int, int, int]:
    """Read-only (pool, holds, spent) snapshot for an authorized viewer."""
    try:
        snap = channel.evaluate(viewer, token_contract_name(company), "balance_of", {})
    except LedgerError as exc:
        if exc.code == "non-member-submitter":
            raise LedgerError("not-authorized", str(exc)) from None
        raise
    return snap["pool_available"], snap["holds_total"], snap["spent"]
