"""Conjunctive access-rule language for trip requests.

Rules combine by conjunction only, which is what makes downstream
delegation structurally monotone: a child node can only append rules,
never widen them. Evaluation is pure, total and deterministic; the
failure label names the first failing leaf in canonical (depth-first,
left-to-right) order.

Serialization is canonical JSON with a "kind" discriminator so fixture
files, the CLI and tests all share one format.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from typing import Mapping

WEEKDAY_NAMES = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]
PERIODS = ("day", "week", "month")

EARTH_RADIUS_M = 6371000.0
GEOFENCE_TOLERANCE_M = 1.0  # boundary counts as inside

MINUTES_PER_DAY = 24 * 60
MS_PER_DAY = 86_400_000
# logical time zero is 1970-01-01, a Thursday
EPOCH_WEEKDAY = 3


def haversine_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between (lat, lon) degree pairs."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def minutes_of_day(ms: int) -> int:
    return (ms % MS_PER_DAY) // 60000


def weekday(ms: int) -> int:
    """0 = Monday .. 6 = Sunday, UTC."""
    return (ms // MS_PER_DAY + EPOCH_WEEKDAY) % 7


def period_key(period: str, ms: int) -> str:
    """Bucket label for a logical timestamp: ISO-week/month/day, UTC."""
    dt = datetime.datetime.fromtimestamp(ms / 1000, tz=datetime.timezone.utc)
    if period == "day":
        return dt.strftime("%Y-%m-%d")
    if period == "week":
        iso = dt.isocalendar()
        return f"{iso.year}-W{iso.week:02d}"
    if period == "month":
        return dt.strftime("%Y-%m")
    raise ValueError(f"unknown period {period!r}")


@dataclass(frozen=True)
class TripContext:
    """Everything a rule may look at when judging one trip."""

    time_ms: int
    origin: tuple[float, float]
    destination: tuple[float, float]
    transport_type: str
    role: str
    amount: int
    period_spent: Mapping[str, int] = field(default_factory=dict)

    def spent(self, period: str) -> int:
        return int(self.period_spent.get(period, 0))


class Condition:
    kind = ""

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class TimeWindow(Condition):
    start: int  # minutes of day, inclusive
    end: int    # minutes of day, inclusive
    days: frozenset[int] = frozenset(range(7))

    kind = "time-window"

    def to_json(self) -> dict:
        return {"kind": self.kind, "start": self.start, "end": self.end,
                "days": sorted(WEEKDAY_NAMES[d] for d in sorted(self.days))}


@dataclass(frozen=True)
class Geofence(Condition):
    center: tuple[float, float]
    radius_m: float
    applies_to: str = "both"  # origin | destination | both

    kind = "geofence"

    def to_json(self) -> dict:
        return {"kind": self.kind, "center": [self.center[0], self.center[1]],
                "radius_m": self.radius_m, "applies_to": self.applies_to}


@dataclass(frozen=True)
class TransportTypes(Condition):
    allowed: frozenset[str]

    kind = "transport-types"

    def to_json(self) -> dict:
        return {"kind": self.kind, "allowed": sorted(self.allowed)}


@dataclass(frozen=True)
class RoleIs(Condition):
    roles: frozenset[str]

    kind = "role-is"

    def to_json(self) -> dict:
        return {"kind": self.kind, "roles": sorted(self.roles)}


@dataclass(frozen=True)
class MaxPerTrip(Condition):
    credits: int

    kind = "max-per-trip"

    def to_json(self) -> dict:
        return {"kind": self.kind, "credits": self.credits}


@dataclass(frozen=True)
class BudgetPerPeriod(Condition):
    credits: int
    period: str  # day | week | month

    kind = "budget-per-period"

    def to_json(self) -> dict:
        return {"kind": self.kind, "credits": self.credits, "period": self.period}


@dataclass(frozen=True)
class All(Condition):
    items: tuple[Condition, ...] = ()

    kind = "all"

    def to_json(self) -> dict:
        return {"kind": self.kind, "items": [c.to_json() for c in self.items]}


def evaluate(condition: Condition, ctx: TripContext) -> str | None:
    """Return None when the condition holds, else the kind of the first
    failing leaf in canonical depth-first order."""
    if isinstance(condition, All):
        for item in condition.items:
            label = evaluate(item, ctx)
            if label is not None:
                return label
        return None
    if isinstance(condition, TimeWindow):
        if weekday(ctx.time_ms) not in condition.days:
            return condition.kind
        m = minutes_of_day(ctx.time_ms)
        if condition.start <= condition.end:
            ok = condition.start <= m <= condition.end
        else:  # window wrapping midnight
            ok = m >= condition.start or m <= condition.end
        return None if ok else condition.kind
    if isinstance(condition, Geofence):
        limit = condition.radius_m + GEOFENCE_TOLERANCE_M
        points = []
        if condition.applies_to in ("origin", "both"):
            points.append(ctx.origin)
        if condition.applies_to in ("destination", "both"):
            points.append(ctx.destination)
        for p in points:
            if haversine_m(condition.center, p) > limit:
                return condition.kind
        return None
    if isinstance(condition, TransportTypes):
        return None if ctx.transport_type in condition.allowed else condition.kind
    if isinstance(condition, RoleIs):
        return None if ctx.role in condition.roles else condition.kind
    if isinstance(condition, MaxPerTrip):
        return None if ctx.amount <= condition.credits else condition.kind
    if isinstance(condition, BudgetPerPeriod):
        ok = ctx.spent(condition.period) + ctx.amount <= condition.credits
        return None if ok else condition.kind
    raise TypeError(f"unknown condition {condition!r}")


def condition_to_json(condition: Condition) -> dict:
    return condition.to_json()


def condition_from_json(data: dict) -> Condition:
    kind = data.get("kind")
    if kind == "all":
        return All(tuple(condition_from_json(d) for d in data.get("items", [])))
    if kind == "time-window":
        days = data.get("days")
        if days is None:
            day_set = frozenset(range(7))
        else:
            day_set = frozenset(
                WEEKDAY_NAMES.index(d) if isinstance(d, str) else int(d) for d in days
            )
        return TimeWindow(start=int(data["start"]), end=int(data["end"]), days=day_set)
    if kind == "geofence":
        lat, lon = data["center"]
        applies = data.get("applies_to", "both")
        if applies not in ("origin", "destination", "both"):
            raise ValueError(f"bad applies_to {applies!r}")
        return Geofence(center=(float(lat), float(lon)),
                        radius_m=float(data["radius_m"]), applies_to=applies)
    if kind == "transport-types":
        return TransportTypes(frozenset(data["allowed"]))
    if kind == "role-is":
        return RoleIs(frozenset(data["roles"]))
    if kind == "max-per-trip":
        return MaxPerTrip(int(data["credits"]))
    if kind == "budget-per-period":
        period = data["period"]
        if period not in PERIODS:
            raise ValueError(f"bad period {period!r}")
        return BudgetPerPeriod(int(data["credits"]), period)
    raise ValueError(f"unknown condition kind {kind!r}")


def budgets_in(condition: Condition) -> list[BudgetPerPeriod]:
    """All budget leaves of a condition tree, canonical order."""
    if isinstance(condition, BudgetPerPeriod):
        return [condition]
    if isinstance(condition, All):
        out: list[BudgetPerPeriod] = []
        for item in condition.items:
            out.extend(budgets_in(item))
        return out
    return []
