import pytest

import transportchain as tc


@pytest.fixture
def net():
    return tc.new_network()


@pytest.fixture
def funded_channel(net):
    """orgA + companyX channel with a released 1000-credit escrow, an
    access contract and a delegation chain org -> dept -> alice."""
    orgA = net.register_principal(tc.Principal("orgA", "organisation"))
    companyX = net.register_principal(tc.Principal("companyX", "transport-company"))
    net.register_principal(tc.Principal("orgA-eng", "department", org="orgA"))
    net.register_principal(tc.Principal("alice", "employee", org="orgA", role="engineer"))
    net.register_principal(tc.Principal("bob", "employee", org="orgA", role="executive"))
    channel = net.create_channel("orgA-chan", orgA, [companyX])
    channel.submit(net.admin, "bank", "mint", {"owner": "orgA", "amount": 800})
    channel.commit_block()
    tc.deploy_token_contract(channel, companyX)
    tc.init_escrow(channel, companyX,
                   tc.Proposal("companyX", "orgA", 1000, 500, {"bus": 2, "train": 5}))
    for submitter, op, amount in ((companyX, "deposit_tokens", 1000),
                                  (orgA, "deposit_payment", 500)):
        channel.submit(submitter, "token-companyX", op, {"amount": amount})
        channel.commit_block()
    tc.deploy_access_contract(channel, orgA)
    submit_ok(channel, orgA, "access", "delegate", {
        "parent": "root", "grantee": "orgA-eng", "node_id": "eng-dept",
        "conditions": {"kind": "transport-types", "allowed": ["bus", "train"]},
        "sub_limit": [200, "week"],
    })
    submit_ok(channel, net.principal("orgA-eng"), "access", "delegate", {
        "parent": "eng-dept", "grantee": "alice", "node_id": "alice-grant",
        "conditions": {"kind": "max-per-trip", "credits": 30},
        "sub_limit": None,
    })
    return channel


def submit_ok(channel, submitter, contract, op, args):
    """Submit, commit, and assert the transaction validated."""
    tx_id = channel.submit(submitter, contract, op, args)
    channel.commit_block()
    tx = channel.get_tx(tx_id)
    assert tx.validity == "valid", f"{op}: {tx.error}: {tx.response}"
    return tx


def submit_err(channel, submitter, contract, op, args):
    """Submit, commit, and return the endorsement error code."""
    tx_id = channel.submit(submitter, contract, op, args)
    channel.commit_block()
    tx = channel.get_tx(tx_id)
    assert tx.validity == "endorsement-error", f"{op} unexpectedly {tx.validity}"
    return tx.error


def make_trip(trip_id, employee="alice", transport_type="bus", max_cost=25,
              at_ms=None, origin=(-33.8688, 151.2093),
              destination=(-33.8830, 151.2167), requested_at=0):
    return tc.TripRequest(
        trip_id=trip_id, employee=employee, transport_type=transport_type,
        origin=origin, destination=destination,
        requested_at=requested_at if at_ms is None else at_ms,
        max_cost=max_cost,
    )
