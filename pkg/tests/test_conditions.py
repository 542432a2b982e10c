"""Rule-language tests: the production evaluator is compared against an
independently written brute-force evaluator over a discretized context
grid and randomized condition trees."""

import datetime
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

import transportchain as tc
from transportchain.conditions import (
    GEOFENCE_TOLERANCE_M,
    budgets_in,
    minutes_of_day,
    period_key,
    weekday,
)

UTC = datetime.timezone.utc


# -- independent oracle: works on the JSON form, datetime-based time math ------

def naive_eval(doc: dict, ctx: dict):
    """Reference evaluator; returns (ok, first failing leaf kind or None)."""
    kind = doc["kind"]
    if kind == "all":
        for item in doc.get("items", []):
            ok, label = naive_eval(item, ctx)
            if not ok:
                return False, label
        return True, None
    if kind == "time-window":
        dt = datetime.datetime.fromtimestamp(ctx["time_ms"] / 1000, tz=UTC)
        names = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]
        day_ok = names[dt.weekday()] in doc["days"]
        m = dt.hour * 60 + dt.minute
        if doc["start"] <= doc["end"]:
            time_ok = doc["start"] <= m <= doc["end"]
        else:
            time_ok = m >= doc["start"] or m <= doc["end"]
        return (True, None) if day_ok and time_ok else (False, kind)
    if kind == "geofence":
        # spherical law of cosines, deliberately different from haversine
        def dist(a, b):
            p1, l1 = math.radians(a[0]), math.radians(a[1])
            p2, l2 = math.radians(b[0]), math.radians(b[1])
            c = (math.sin(p1) * math.sin(p2)
                 + math.cos(p1) * math.cos(p2) * math.cos(l2 - l1))
            return 6371000.0 * math.acos(max(-1.0, min(1.0, c)))

        limit = doc["radius_m"] + GEOFENCE_TOLERANCE_M
        points = {"origin": [ctx["origin"]], "destination": [ctx["destination"]],
                  "both": [ctx["origin"], ctx["destination"]]}[doc["applies_to"]]
        ok = all(dist(tuple(doc["center"]), p) <= limit for p in points)
        return (True, None) if ok else (False, kind)
    if kind == "transport-types":
        ok = ctx["transport_type"] in doc["allowed"]
        return (True, None) if ok else (False, kind)
    if kind == "role-is":
        ok = ctx["role"] in doc["roles"]
        return (True, None) if ok else (False, kind)
    if kind == "max-per-trip":
        ok = ctx["amount"] <= doc["credits"]
        return (True, None) if ok else (False, kind)
    if kind == "budget-per-period":
        ok = ctx["period_spent"].get(doc["period"], 0) + ctx["amount"] <= doc["credits"]
        return (True, None) if ok else (False, kind)
    raise AssertionError(f"unknown kind {kind}")


def to_trip_context(ctx: dict) -> tc.TripContext:
    return tc.TripContext(
        time_ms=ctx["time_ms"], origin=ctx["origin"],
        destination=ctx["destination"], transport_type=ctx["transport_type"],
        role=ctx["role"], amount=ctx["amount"], period_spent=ctx["period_spent"],
    )


def context_grid():
    """Discretized contexts covering weekdays, hours, places, types, roles,
    amounts and period spends."""
    base = datetime.datetime(2024, 1, 8, 0, 0, tzinfo=UTC)  # a Monday
    times = [int((base + datetime.timedelta(days=d, hours=h)).timestamp() * 1000)
             for d in (0, 2, 5, 6) for h in (7, 9, 17, 22)]
    places = [(-33.8688, 151.2093), (-33.8000, 151.1000), (-34.5, 150.0)]
    contexts = []
    for t in times:
        for o in places:
            for dest in places[:2]:
                for tt in ("bus", "taxi"):
                    for amount in (5, 40):
                        contexts.append({
                            "time_ms": t, "origin": o, "destination": dest,
                            "transport_type": tt, "role": "engineer",
                            "amount": amount,
                            "period_spent": {"day": 10, "week": 150, "month": 150},
                        })
    return contexts


def random_condition(rng: random.Random, depth: int) -> dict:
    kinds = ["time-window", "geofence", "transport-types", "role-is",
             "max-per-trip", "budget-per-period"]
    if depth > 0 and rng.random() < 0.45:
        return {"kind": "all",
                "items": [random_condition(rng, depth - 1)
                          for _ in range(rng.randint(0, 3))]}
    kind = rng.choice(kinds)
    if kind == "time-window":
        a, b = rng.randint(0, 1439), rng.randint(0, 1439)
        names = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]
        days = sorted(rng.sample(names, rng.randint(1, 7)))
        return {"kind": kind, "start": a, "end": b, "days": days}
    if kind == "geofence":
        return {"kind": kind,
                "center": [-33.8688 + rng.uniform(-0.5, 0.5),
                           151.2093 + rng.uniform(-0.5, 0.5)],
                "radius_m": rng.choice([500.0, 5000.0, 50000.0]),
                "applies_to": rng.choice(["origin", "destination", "both"])}
    if kind == "transport-types":
        return {"kind": kind,
                "allowed": sorted(rng.sample(["bus", "taxi", "train", "ferry"],
                                             rng.randint(1, 3)))}
    if kind == "role-is":
        return {"kind": kind,
                "roles": sorted(rng.sample(["engineer", "executive", "janitor"],
                                           rng.randint(1, 2)))}
    if kind == "max-per-trip":
        return {"kind": kind, "credits": rng.randint(0, 60)}
    return {"kind": "budget-per-period", "credits": rng.randint(0, 400),
            "period": rng.choice(["day", "week", "month"])}


class TestExamples:
    def test_empty_conjunction_is_true(self):
        ctx = to_trip_context(context_grid()[0])
        assert tc.evaluate(tc.All(), ctx) is None

    def test_time_window_weekday_membership(self):
        window = tc.condition_from_json({
            "kind": "time-window", "start": 480, "end": 1080,
            "days": ["mon", "tue", "wed", "thu", "fri"],
        })
        tue_9am = int(datetime.datetime(2024, 1, 9, 9, 0, tzinfo=UTC).timestamp() * 1000)
        sun_9am = int(datetime.datetime(2024, 1, 14, 9, 0, tzinfo=UTC).timestamp() * 1000)
        base = context_grid()[0]
        ok_ctx = to_trip_context({**base, "time_ms": tue_9am})
        bad_ctx = to_trip_context({**base, "time_ms": sun_9am})
        assert tc.evaluate(window, ok_ctx) is None
        assert tc.evaluate(window, bad_ctx) == "time-window"

    def test_geofence_boundary_counts_as_inside(self):
        center = (-33.8688, 151.2093)
        # ~500 m east of center along a parallel
        lon_step = 500.0 / (111320.0 * math.cos(math.radians(center[0])))
        fence = tc.Geofence(center=center, radius_m=500.0, applies_to="origin")
        base = context_grid()[0]
        at_edge = to_trip_context({**base, "origin": (center[0], center[1] + lon_step)})
        assert tc.evaluate(fence, at_edge) is None

    def test_failure_label_is_first_failing_leaf(self):
        combo = tc.All((
            tc.TransportTypes(frozenset({"bus"})),
            tc.MaxPerTrip(10),
        ))
        ctx = to_trip_context({**context_grid()[0],
                               "transport_type": "taxi", "amount": 50})
        assert tc.evaluate(combo, ctx) == "transport-types"

    def test_budget_uses_period_spent(self):
        budget = tc.BudgetPerPeriod(100, "week")
        base = context_grid()[0]
        under = to_trip_context({**base, "amount": 10,
                                 "period_spent": {"week": 80}})
        over = to_trip_context({**base, "amount": 30,
                                "period_spent": {"week": 80}})
        assert tc.evaluate(budget, under) is None
        assert tc.evaluate(budget, over) == "budget-per-period"


class TestOracleAgreement:
    def test_random_trees_match_brute_force_on_grid(self):
        rng = random.Random(20240108)
        grid = context_grid()
        for _ in range(150):
            doc = random_condition(rng, depth=4)
            condition = tc.condition_from_json(doc)
            for ctx in grid:
                ok, label = naive_eval(doc, ctx)
                got = tc.evaluate(condition, to_trip_context(ctx))
                assert (got is None) == ok, (doc, ctx)
                if not ok:
                    assert got == label, (doc, ctx)

    def test_serialization_round_trip(self):
        rng = random.Random(7)
        for _ in range(200):
            doc = random_condition(rng, depth=4)
            condition = tc.condition_from_json(doc)
            again = tc.condition_from_json(tc.condition_to_json(condition))
            assert again == condition


@st.composite
def condition_docs(draw, depth=3):
    rng = random.Random(draw(st.integers(min_value=0, max_value=2**32 - 1)))
    return random_condition(rng, depth)


@settings(max_examples=150, deadline=None)
@given(doc=condition_docs(),
       day=st.integers(min_value=0, max_value=27),
       hour=st.integers(min_value=0, max_value=23),
       amount=st.integers(min_value=1, max_value=80),
       tt=st.sampled_from(["bus", "taxi", "train", "ferry"]),
       role=st.sampled_from(["engineer", "executive", "janitor"]),
       spent=st.integers(min_value=0, max_value=500))
def test_property_oracle_agreement(doc, day, hour, amount, tt, role, spent):
    t = int(datetime.datetime(2024, 1, 1 + day, hour, 30, tzinfo=UTC).timestamp() * 1000)
    ctx = {
        "time_ms": t, "origin": (-33.8688, 151.2093),
        "destination": (-33.80, 151.15), "transport_type": tt, "role": role,
        "amount": amount,
        "period_spent": {"day": spent, "week": spent, "month": spent},
    }
    ok, label = naive_eval(doc, ctx)
    got = tc.evaluate(tc.condition_from_json(doc), to_trip_context(ctx))
    assert (got is None) == ok
    if not ok:
        assert got == label


class TestTimeHelpers:
    @pytest.mark.parametrize("date,expected", [
        (datetime.datetime(2024, 1, 8, tzinfo=UTC), 0),   # Monday
        (datetime.datetime(2024, 1, 14, tzinfo=UTC), 6),  # Sunday
        (datetime.datetime(1970, 1, 1, tzinfo=UTC), 3),   # epoch Thursday
    ])
    def test_weekday(self, date, expected):
        assert weekday(int(date.timestamp() * 1000)) == expected

    def test_minutes_of_day(self):
        ms = int(datetime.datetime(2024, 1, 8, 9, 41, tzinfo=UTC).timestamp() * 1000)
        assert minutes_of_day(ms) == 9 * 60 + 41

    def test_period_keys_are_iso_utc(self):
        ms = int(datetime.datetime(2024, 2, 15, 12, 0, tzinfo=UTC).timestamp() * 1000)
        assert period_key("day", ms) == "2024-02-15"
        assert period_key("week", ms) == "2024-W07"
        assert period_key("month", ms) == "2024-02"

    def test_budgets_in_collects_leaves_in_order(self):
        doc = {"kind": "all", "items": [
            {"kind": "budget-per-period", "credits": 10, "period": "day"},
            {"kind": "all", "items": [
                {"kind": "budget-per-period", "credits": 20, "period": "week"},
            ]},
        ]}
        leaves = budgets_in(tc.condition_from_json(doc))
        assert [(b.credits, b.period) for b in leaves] == [(10, "day"), (20, "week")]
