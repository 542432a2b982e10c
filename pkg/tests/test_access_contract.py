"""Delegation tree, rule evaluation and trip lifecycle tests, including
the structural monotonicity property."""

import datetime
import random

import pytest
from hypothesis import given, settings, strategies as st

import transportchain as tc
from transportchain.access_contract import NodeView, decide_by_rules
from transportchain.conditions import period_key

from conftest import make_trip, submit_err, submit_ok
from test_conditions import random_condition

UTC = datetime.timezone.utc


def request(channel, trip, submitter=None):
    net = channel.network
    submitter = submitter or net.principal(trip.employee)
    trip = tc.TripRequest(**{**trip.to_json(),
                             "origin": trip.origin, "destination": trip.destination,
                             "requested_at": net.clock.now})
    tx = submit_ok(channel, submitter, "access", "request_access", trip.to_json())
    return tx.response


class TestDeploy:
    def test_second_deploy_rejected(self, funded_channel):
        channel = funded_channel
        with pytest.raises(tc.LedgerError) as exc:
            tc.deploy_access_contract(channel, channel.organisation)
        assert exc.value.code == "already-deployed"

    def test_company_cannot_deploy(self, net):
        org = net.register_principal(tc.Principal("orgA", "organisation"))
        company = net.register_principal(tc.Principal("companyX", "transport-company"))
        channel = net.create_channel("c", org, [company])
        with pytest.raises(tc.LedgerError) as exc:
            tc.deploy_access_contract(channel, company)
        assert exc.value.code == "wrong-caller"


class TestDelegate:
    def test_effective_condition_includes_both_levels(self, funded_channel):
        channel = funded_channel
        # alice inherits TransportTypes from the dept and MaxPerTrip from her node
        resp = request(channel, make_trip("ok", max_cost=25))
        assert resp["status"] == "approved"
        resp = request(channel, make_trip("too-big", max_cost=31))
        assert resp == {"status": "denied", "trip_id": "too-big",
                        "reason": "condition-failed:max-per-trip"}
        resp = request(channel, make_trip("wrong-type", transport_type="taxi"))
        assert resp["reason"] == "condition-failed:transport-types"

    def test_foreign_grantee_rejected(self, funded_channel):
        channel = funded_channel
        net = channel.network
        net.register_principal(tc.Principal("orgB", "organisation"))
        net.register_principal(tc.Principal("eve", "employee", org="orgB"))
        assert submit_err(channel, net.principal("orgA"), "access", "delegate",
                          {"parent": "root", "grantee": "eve",
                           "conditions": {"kind": "all", "items": []},
                           "sub_limit": None}) == "foreign-grantee"

    def test_only_grantee_can_delegate(self, funded_channel):
        channel = funded_channel
        net = channel.network
        assert submit_err(channel, net.principal("bob"), "access", "delegate",
                          {"parent": "eng-dept", "grantee": "bob",
                           "conditions": {"kind": "all", "items": []},
                           "sub_limit": None}) == "not-grantee"

    def test_revoked_parent_rejected(self, funded_channel):
        channel = funded_channel
        net = channel.network
        submit_ok(channel, net.principal("orgA"), "access", "revoke",
                  {"node_id": "eng-dept"})
        assert submit_err(channel, net.principal("orgA-eng"), "access", "delegate",
                          {"parent": "eng-dept", "grantee": "bob",
                           "conditions": {"kind": "all", "items": []},
                           "sub_limit": None}) == "revoked-parent"


class TestRevoke:
    def test_subtree_revocation_denies_requests(self, funded_channel):
        channel = funded_channel
        net = channel.network
        submit_ok(channel, net.principal("orgA"), "access", "revoke",
                  {"node_id": "eng-dept"})
        resp = request(channel, make_trip("after-revoke"))
        assert resp == {"status": "denied", "trip_id": "after-revoke",
                        "reason": "no-delegation"}

    def test_preapproved_trip_still_settles_after_revoke(self, funded_channel):
        channel = funded_channel
        net = channel.network
        resp = request(channel, make_trip("pre"))
        assert resp["status"] == "approved"
        submit_ok(channel, net.principal("orgA"), "access", "revoke",
                  {"node_id": "eng-dept"})
        tx = submit_ok(channel, net.principal("companyX"), "access", "finish_trip",
                       {"trip_id": "pre", "actual_cost": 20})
        assert tx.response["status"] == "finished"

    def test_non_ancestor_cannot_revoke(self, funded_channel):
        channel = funded_channel
        net = channel.network
        assert submit_err(channel, net.principal("bob"), "access", "revoke",
                          {"node_id": "alice-grant"}) == "not-authorized"

    def test_unknown_node(self, funded_channel):
        channel = funded_channel
        net = channel.network
        assert submit_err(channel, net.principal("orgA"), "access", "revoke",
                          {"node_id": "zzz"}) == "unknown-node"

    def test_intermediate_grantee_can_revoke_leaf(self, funded_channel):
        channel = funded_channel
        net = channel.network
        tx = submit_ok(channel, net.principal("orgA-eng"), "access", "revoke",
                       {"node_id": "alice-grant"})
        assert tx.response["revoked"] == ["alice-grant"]
        resp = request(channel, make_trip("gone"))
        assert resp["reason"] == "no-delegation"


class TestRequestAccess:
    def test_approved_holds_max_cost(self, funded_channel):
        channel = funded_channel
        org = channel.organisation
        resp = request(channel, make_trip("t1", max_cost=25))
        assert resp["status"] == "approved"
        assert tc.balance_of(channel, org, "companyX") == (975, 25, 0)

    def test_no_delegation(self, funded_channel):
        channel = funded_channel
        net = channel.network
        net.register_principal(tc.Principal("dave", "employee", org="orgA"))
        resp = request(channel, make_trip("d1", employee="dave"))
        assert resp["reason"] == "no-delegation"

    def test_insufficient_pool_denial(self, funded_channel):
        channel = funded_channel
        # drain the pool to 20 with a big approved trip (bob has no per-trip cap)
        submit_ok(channel, channel.network.principal("orgA"), "access", "delegate",
                  {"parent": "root", "grantee": "bob", "node_id": "bob-grant",
                   "conditions": {"kind": "all", "items": []}, "sub_limit": None})
        resp = request(channel, make_trip("drain", employee="bob", max_cost=980))
        assert resp["status"] == "approved"
        resp = request(channel, make_trip("t2", max_cost=25))
        assert resp == {"status": "denied", "trip_id": "t2",
                        "reason": "insufficient-pool"}

    def test_duplicate_trip_denied(self, funded_channel):
        channel = funded_channel
        assert request(channel, make_trip("t1"))["status"] == "approved"
        resp = request(channel, make_trip("t1"))
        assert resp["reason"] == "duplicate-trip"

    def test_denial_leaves_state_bit_identical(self, funded_channel):
        channel = funded_channel
        before = channel.state_hash()
        resp = request(channel, make_trip("nope", transport_type="taxi"))
        assert resp["status"] == "denied"
        assert channel.state_hash() == before

    def test_weekly_sub_limit_enforced_and_refunded(self, funded_channel):
        channel = funded_channel
        net = channel.network
        # dept sub-limit is 200/week; alice's cap is 30 per trip
        for i in range(6):
            assert request(channel, make_trip(f"w{i}", max_cost=30))["status"] == "approved"
        resp = request(channel, make_trip("w6", max_cost=30))
        assert resp["reason"] == "budget-exceeded"  # 210 > 200
        # settling one trip below max refunds budget for another attempt
        submit_ok(channel, net.principal("companyX"), "access", "finish_trip",
                  {"trip_id": "w0", "actual_cost": 5})
        assert request(channel, make_trip("w7", max_cost=25))["status"] == "approved"


class TestFinishTrip:
    def test_finish_settles_and_counts(self, funded_channel):
        channel = funded_channel
        net = channel.network
        request(channel, make_trip("t1", max_cost=25))
        tx = submit_ok(channel, net.principal("companyX"), "access", "finish_trip",
                       {"trip_id": "t1", "actual_cost": 25})
        assert tx.response == {"status": "finished", "trip_id": "t1", "actual_cost": 25}
        assert tc.balance_of(channel, channel.organisation, "companyX") == (975, 0, 25)
        key = period_key("week", net.clock.now)
        import json as _json
        assert _json.loads(channel.query(f"access/counter/eng-dept/{key}")) == 25

    def test_finish_twice_rejected(self, funded_channel):
        channel = funded_channel
        net = channel.network
        request(channel, make_trip("t1"))
        submit_ok(channel, net.principal("companyX"), "access", "finish_trip",
                  {"trip_id": "t1", "actual_cost": 20})
        assert submit_err(channel, net.principal("companyX"), "access", "finish_trip",
                          {"trip_id": "t1", "actual_cost": 20}) == "already-finished"

    def test_over_held_amount_rejected(self, funded_channel):
        channel = funded_channel
        net = channel.network
        request(channel, make_trip("t1", max_cost=25))
        assert submit_err(channel, net.principal("companyX"), "access", "finish_trip",
                          {"trip_id": "t1", "actual_cost": 26}) == "over-hold-amount"

    def test_employee_cannot_finish(self, funded_channel):
        channel = funded_channel
        net = channel.network
        request(channel, make_trip("t1"))
        assert submit_err(channel, net.principal("alice"), "access", "finish_trip",
                          {"trip_id": "t1", "actual_cost": 10}) == "wrong-caller"

    def test_unknown_trip(self, funded_channel):
        channel = funded_channel
        net = channel.network
        assert submit_err(channel, net.principal("companyX"), "access", "finish_trip",
                          {"trip_id": "zz", "actual_cost": 1}) == "unknown-trip"


# -- monotonicity: child approval implies parent approval ----------------------

def random_path(rng: random.Random, depth: int) -> list[NodeView]:
    nodes = []
    for level in range(depth):
        sub_limit = None
        if rng.random() < 0.4:
            sub_limit = (rng.randint(0, 300), rng.choice(["day", "week", "month"]))
        nodes.append(NodeView(
            node_id=f"n{level}",
            added_conditions=tc.condition_from_json(random_condition(rng, 2)),
            sub_limit=sub_limit,
            revoked=rng.random() < 0.1,
        ))
    return nodes


def random_context(rng: random.Random) -> tc.TripContext:
    t = int(datetime.datetime(2024, 1, 1 + rng.randint(0, 27),
                              rng.randint(0, 23), rng.randint(0, 59),
                              tzinfo=UTC).timestamp() * 1000)
    return tc.TripContext(
        time_ms=t,
        origin=(-33.8688 + rng.uniform(-0.5, 0.5), 151.2093 + rng.uniform(-0.5, 0.5)),
        destination=(-33.8688 + rng.uniform(-0.5, 0.5), 151.2093 + rng.uniform(-0.5, 0.5)),
        transport_type=rng.choice(["bus", "taxi", "train", "ferry"]),
        role=rng.choice(["engineer", "executive", "janitor"]),
        amount=rng.randint(1, 80),
    )


def test_monotonicity_structural():
    rng = random.Random(424242)
    counters: dict = {}

    def lookup(node_id, period):
        return counters.get((node_id, period), 0)

    checked = 0
    for _ in range(2000):
        path = random_path(rng, rng.randint(1, 4))
        for key in list(counters):
            del counters[key]
        for node in path:
            for period in ("day", "week", "month"):
                counters[(node.node_id, period)] = rng.randint(0, 200)
        ctx = random_context(rng)
        child_ok = decide_by_rules(path, ctx, lookup) is None
        parent_ok = decide_by_rules(path[:-1], ctx, lookup) is None
        if child_ok:
            assert parent_ok, (path, ctx)
            checked += 1
    assert checked > 0


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_monotonicity_property(seed):
    rng = random.Random(seed)
    path = random_path(rng, rng.randint(1, 4))
    ctx = random_context(rng)

    # counters must be stable across the two decisions: freeze on first read
    frozen = {}

    def stable_lookup(node_id, period):
        return frozen.setdefault((node_id, period), rng.randint(0, 200))

    if decide_by_rules(path, ctx, stable_lookup) is None:
        assert decide_by_rules(path[:-1], ctx, stable_lookup) is None


class TestMultiNodeEmployees:
    def test_first_passing_node_wins(self, funded_channel):
        channel = funded_channel
        net = channel.network
        # second grant without the per-trip cap
        submit_ok(channel, net.principal("orgA"), "access", "delegate",
                  {"parent": "root", "grantee": "alice", "node_id": "alice-wide",
                   "conditions": {"kind": "all", "items": []}, "sub_limit": None})
        resp = request(channel, make_trip("big", max_cost=100))
        assert resp["status"] == "approved"
        assert resp["node_id"] == "alice-wide"

    def test_denial_reason_reflects_first_candidate(self, funded_channel):
        channel = funded_channel
        resp = request(channel, make_trip("big", max_cost=100))
        assert resp["reason"] == "condition-failed:max-per-trip"
