"""Workload generator and metrics collector for the throughput/latency
experiment: rounds of trip-request and trip-finish traffic at fixed send
rates against a configurable-capacity committer.

The committer is the bottleneck abstraction: a single server that drains
pending transactions in blocks of up to ``block_size``, spending
``1/capacity`` seconds of logical time per transaction plus a small
per-type execution cost. Absolute numbers from real deployments are
hardware-bound; what this reproduces is the curve shape: throughput
tracks the send rate below saturation, plateaus near capacity above it,
and latency grows with the pending backlog once the system is saturated.

Each transaction type is measured in its own sub-round (one series per
type, as benchmark tools label rounds per workload); the ``mix`` setting
splits the per-round transaction budget between the two types. Finish
traffic settles trips approved by the preceding request sub-round,
topped up from a pre-approved reservoir when the mix demands more
finishes than requests.
"""

from __future__ import annotations

import csv
import json
import math
import random
import statistics
from collections import deque
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path

from .access_contract import ACCESS_CONTRACT_NAME
from .ledger import LedgerError, MVCC_CONFLICT, Network, VALID
from .scenario import ScenarioResult, run_scenario

REQUEST_ACCESS = "Request_Access"
FINISH_TRIP = "Finish_Trip"


@dataclass
class WorkloadConfig:
    send_rates: list[float] = field(default_factory=lambda: [100, 150, 200, 250, 300])
    tx_per_round: int = 20000
    repetitions: int = 10
    mix: float = 0.5  # fraction of the budget spent on Request_Access
    committer_capacity: float = 175.0  # committed tx per second at zero exec cost
    block_size: int = 50
    retry_limit: int = 3
    request_cost: float = 1.3  # execution cost units per Request_Access
    finish_cost: float = 1.0
    exec_cost_unit_s: float = 1.5e-4  # seconds of committer time per cost unit
    seed: int = 42

    def validate(self) -> None:
        if not self.send_rates or any(r <= 0 for r in self.send_rates):
            raise LedgerError("config-invalid", "send rates must be positive")
        if any(b <= a for a, b in zip(self.send_rates, self.send_rates[1:])):
            raise LedgerError("config-invalid", "send rates must be strictly increasing")
        if not (0.0 <= self.mix <= 1.0):
            raise LedgerError("config-invalid", "mix must be in [0, 1]")
        if self.committer_capacity <= 0:
            raise LedgerError("config-invalid", "capacity must be positive")
        if self.tx_per_round <= 0 or self.repetitions <= 0 or self.block_size <= 0:
            raise LedgerError("config-invalid", "counts must be positive")
        if self.retry_limit < 0:
            raise LedgerError("config-invalid", "retry limit must be >= 0")

    def to_json(self) -> dict:
        return {
            "send_rates": list(self.send_rates),
            "tx_per_round": self.tx_per_round,
            "repetitions": self.repetitions,
            "mix": self.mix,
            "committer_capacity": self.committer_capacity,
            "block_size": self.block_size,
            "retry_limit": self.retry_limit,
            "request_cost": self.request_cost,
            "finish_cost": self.finish_cost,
            "exec_cost_unit_s": self.exec_cost_unit_s,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(d: dict) -> "WorkloadConfig":
        cfg = WorkloadConfig(**{k: d[k] for k in d})
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class WorkloadItem:
    submit_at_ms: int  # relative to round start
    tx_type: str
    channel: str
    submitter: str
    op: str
    args: dict

    def to_json(self) -> dict:
        return {
            "submit_at_ms": self.submit_at_ms,
            "tx_type": self.tx_type,
            "channel": self.channel,
            "submitter": self.submitter,
            "op": self.op,
            "args": self.args,
        }


@dataclass
class RoundMetrics:
    send_rate: float
    rep: int
    tx_type: str
    submitted: int
    committed: int
    valid: int
    conflicts: int
    throughput: float  # valid committed tx per second
    latency_avg: float  # seconds
    latency_p95: float
    latency_max: float
    conflict_rate: float
    duration_s: float
    queue_time_integral: float  # tx-seconds spent in the pending queue+server

    def csv_row(self) -> list:
        return [self.send_rate, self.rep, self.tx_type,
                round(self.throughput, 3), round(self.latency_avg, 6),
                round(self.latency_p95, 6), round(self.latency_max, 6),
                round(self.conflict_rate, 6)]


CSV_HEADER = ["rate", "rep", "tx-type", "throughput", "lat-avg", "lat-p95",
              "lat-max", "conflicts"]


def build_bench_scenario(employees_per_org: int = 50,
                         pool_credits: int = 1_000_000_000,
                         seed: int = 42) -> dict:
    """The default benchmark network: two organisations and two transport
    companies, each pair on its own channel, postpaid spending so request
    traffic carries no shared-key writes."""
    principals = [
        {"id": "orgA", "kind": "organisation"},
        {"id": "orgB", "kind": "organisation"},
        {"id": "companyX", "kind": "transport-company"},
        {"id": "companyY", "kind": "transport-company"},
    ]
    access = []
    channels = []
    for org, company, chan in (("orgA", "companyX", "orgA-chan"),
                               ("orgB", "companyY", "orgB-chan")):
        script = []
        for i in range(employees_per_org):
            emp = f"{org}-e{i:04d}"
            principals.append({"id": emp, "kind": "employee", "org": org,
                               "role": "engineer"})
            script.append({
                "action": "delegate",
                "node_id": f"{emp}-grant",
                "caller": org,
                "parent": "root",
                "grantee": emp,
                "conditions": {"kind": "all", "items": [
                    {"kind": "transport-types", "allowed": ["bus", "taxi", "train"]},
                    {"kind": "max-per-trip", "credits": 50},
                ]},
            })
        channels.append({
            "name": chan,
            "organisation": org,
            "companies": [company],
            "initial_balances": {org: 10_000_000},
        })
        access.append({
            "channel": chan,
            "spending_mode": "postpaid",
            "root_conditions": {"kind": "all", "items": []},
            "script": script,
        })
    purchases = [
        {"channel": "orgA-chan", "company": "companyX",
         "credit_amount": pool_credits, "total_price": 5_000_000,
         "price_list": {"bus": 2, "taxi": 8, "train": 5}},
        {"channel": "orgB-chan", "company": "companyY",
         "credit_amount": pool_credits, "total_price": 5_000_000,
         "price_list": {"bus": 2, "taxi": 8, "train": 5}},
    ]
    return {
        "name": "bench-net",
        "seed": seed,
        "principals": principals,
        "channels": channels,
        "purchases": purchases,
        "access": access,
        "trips": [],
    }


def _submit_times(n: int, rate: float) -> list[int]:
    return [round(i * 1000.0 / rate) for i in range(n)]


def generate_workload(config: WorkloadConfig, scenario_doc: dict, rate: float,
                      rep: int) -> tuple[list[WorkloadItem], list[WorkloadItem], list[WorkloadItem]]:
    """Deterministic (request items, finish items, reservoir items).

    Reservoir items are trips that must be approved during setup because
    the mix asks for more finishes than the request sub-round approves;
    they carry submit time 0 and are driven off-clock.
    """
    config.validate()
    rng = random.Random(f"{config.seed}:{rate}:{rep}")
    employees = [p for p in scenario_doc["principals"] if p["kind"] == "employee"]
    if not employees:
        raise LedgerError("config-invalid", "bench scenario declares no employees")
    org_channel = {c["organisation"]: c["name"] for c in scenario_doc["channels"]}
    company_by_channel = {c["name"]: c["companies"][0] for c in scenario_doc["channels"]}
    types = ["bus", "taxi", "train"]

    n_req = round(config.tx_per_round * config.mix)
    n_fin = config.tx_per_round - n_req
    reservoir_n = max(0, n_fin - n_req)

    def make_trip(tag: str, i: int, at_ms: int) -> WorkloadItem:
        emp = employees[(i + rep) % len(employees)]
        channel = org_channel[emp["org"]]
        max_cost = rng.randint(5, 25)
        lat = -33.86 + rng.uniform(-0.05, 0.05)
        lon = 151.20 + rng.uniform(-0.05, 0.05)
        args = {
            "trip_id": f"{tag}-{i:06d}",
            "employee": emp["id"],
            "transport_type": types[rng.randrange(len(types))],
            "origin": [round(lat, 6), round(lon, 6)],
            "destination": [round(lat + rng.uniform(-0.03, 0.03), 6),
                            round(lon + rng.uniform(-0.03, 0.03), 6)],
            "requested_at": 0,  # stamped with the logical submit time by the driver
            "max_cost": max_cost,
        }
        return WorkloadItem(submit_at_ms=at_ms, tx_type=REQUEST_ACCESS,
                            channel=channel, submitter=emp["id"],
                            op="request_access", args=args)

    reservoir = [make_trip("res", i, 0) for i in range(reservoir_n)]
    req_times = _submit_times(n_req, rate)
    requests = [make_trip("trip", i, req_times[i]) for i in range(n_req)]

    finish_pool = reservoir + requests
    fin_times = _submit_times(n_fin, rate)
    finishes = []
    for i in range(n_fin):
        source = finish_pool[i % len(finish_pool)] if finish_pool else None
        if source is None:
            break
        actual = rng.randint(max(1, source.args["max_cost"] // 2),
                             source.args["max_cost"])
        finishes.append(WorkloadItem(
            submit_at_ms=fin_times[i], tx_type=FINISH_TRIP,
            channel=source.channel,
            submitter=company_by_channel[source.channel],
            op="finish_trip",
            args={"trip_id": source.args["trip_id"], "actual_cost": actual},
        ))
    return requests, finishes, reservoir


def workload_stream_bytes(items: list[WorkloadItem]) -> bytes:
    """Canonical serialization of a stream, for determinism checks."""
    return json.dumps([it.to_json() for it in items],
                      sort_keys=True, separators=(",", ":")).encode("utf-8")


class _Committer:
    """Single-server batch committer over all channels of a network.

    Serves the channel holding the globally oldest pending transaction,
    one block per service; service time is batch_size/capacity plus the
    per-transaction execution costs."""

    def __init__(self, net: Network, config: WorkloadConfig,
                 costs: dict[str, float]):
        self.net = net
        self.config = config
        self.costs = costs
        self.busy_until: int | None = None
        self.batch: tuple | None = None  # (channel name, size)
        self.queues: dict[str, deque[int]] = {}  # arrival seq per channel
        self._seq = 0

    def note_submission(self, channel: str) -> None:
        self._seq += 1
        self.queues.setdefault(channel, deque()).append(self._seq)

    @property
    def backlog(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def maybe_start(self, now: int, tx_types: dict[str, str]) -> None:
        if self.busy_until is not None:
            return
        candidates = [(q[0], name) for name, q in self.queues.items() if q]
        if not candidates:
            return
        channel_name = min(candidates)[1]
        channel = self.net.channel(channel_name)
        size = min(self.config.block_size, len(self.queues[channel_name]))
        exec_s = 0.0
        for tx in islice(channel.pending, size):
            exec_s += self.costs[tx_types[tx.tx_id]] * self.config.exec_cost_unit_s
        service_ms = round((size / self.config.committer_capacity + exec_s) * 1000.0)
        self.busy_until = now + max(1, service_ms)
        self.batch = (channel_name, size)

    def finish_batch(self):
        channel_name, size = self.batch
        self.busy_until = None
        self.batch = None
        q = self.queues[channel_name]
        for _ in range(size):
            q.popleft()
        return self.net.channel(channel_name).commit_block(max_txs=size)


def run_round(net: Network, items: list[WorkloadItem], config: WorkloadConfig,
              send_rate: float, rep: int, tx_type: str,
              trace: list | None = None) -> RoundMetrics:
    """Open-loop drive of one sub-round; returns per-type metrics.

    MVCC-conflicted transactions are retried by this client layer, up to
    the configured limit, each retry re-endorsed against fresher state.
    When ``trace`` is given, (tx_type, submit_ms, commit_ms, validity)
    tuples are appended for every committed transaction.
    """
    costs = {REQUEST_ACCESS: config.request_cost, FINISH_TRIP: config.finish_cost}
    committer = _Committer(net, config, costs)
    t0 = net.clock.now
    tx_types: dict[str, str] = {}
    attempts: dict[str, tuple[WorkloadItem, int]] = {}
    latencies: list[float] = []
    submitted = committed = valid = conflicts = 0
    first_submit: int | None = None
    last_commit = t0

    def submit(item: WorkloadItem, now: int, attempt: int) -> None:
        nonlocal submitted, first_submit
        channel = net.channel(item.channel)
        args = item.args
        if item.op == "request_access":
            args = dict(args, requested_at=now)
        tx_id = channel.submit(net.principal(item.submitter),
                               ACCESS_CONTRACT_NAME, item.op, args)
        tx_types[tx_id] = item.tx_type
        attempts[tx_id] = (item, attempt)
        committer.note_submission(item.channel)
        submitted += 1
        if first_submit is None:
            first_submit = now

    i = 0
    while i < len(items) or committer.busy_until is not None or committer.backlog:
        next_sub = t0 + items[i].submit_at_ms if i < len(items) else None
        next_done = committer.busy_until
        if next_done is not None and (next_sub is None or next_done <= next_sub):
            now = next_done
            net.clock.set(max(net.clock.now, now))
            block = committer.finish_batch()
            if block is not None:
                last_commit = max(last_commit, now)
                for tx in block.transactions:
                    committed += 1
                    if trace is not None:
                        trace.append((tx_types[tx.tx_id], tx.submit_time,
                                      tx.commit_time, tx.validity))
                    if tx.validity == VALID:
                        valid += 1
                        latencies.append((tx.commit_time - tx.submit_time) / 1000.0)
                    elif tx.validity == MVCC_CONFLICT:
                        conflicts += 1
                        item, attempt = attempts[tx.tx_id]
                        if attempt < config.retry_limit:
                            submit(item, now, attempt + 1)
            committer.maybe_start(now, tx_types)
        elif next_sub is not None:
            now = next_sub
            net.clock.set(max(net.clock.now, now))
            submit(items[i], now, 0)
            i += 1
            committer.maybe_start(now, tx_types)
        else:
            break

    duration = max(1, last_commit - (first_submit if first_submit is not None else t0)) / 1000.0
    lat_sorted = sorted(latencies)
    p95 = lat_sorted[max(0, math.ceil(0.95 * len(lat_sorted)) - 1)] if lat_sorted else 0.0
    return RoundMetrics(
        send_rate=send_rate, rep=rep, tx_type=tx_type,
        submitted=submitted, committed=committed, valid=valid, conflicts=conflicts,
        throughput=valid / duration,
        latency_avg=statistics.fmean(latencies) if latencies else 0.0,
        latency_p95=p95,
        latency_max=lat_sorted[-1] if lat_sorted else 0.0,
        conflict_rate=conflicts / committed if committed else 0.0,
        duration_s=duration,
        queue_time_integral=sum(latencies),
    )


def _approve_reservoir(net: Network, reservoir: list[WorkloadItem]) -> None:
    """Pre-approve trips off-clock so finish traffic always has fodder."""
    by_channel: dict[str, list[WorkloadItem]] = {}
    for item in reservoir:
        by_channel.setdefault(item.channel, []).append(item)
    for cname, items in by_channel.items():
        channel = net.channel(cname)
        for item in items:
            args = dict(item.args, requested_at=net.clock.now)
            channel.submit(net.principal(item.submitter),
                           ACCESS_CONTRACT_NAME, "request_access", args)
        while channel.commit_block() is not None:
            pass


def run_rate_rep(config: WorkloadConfig, scenario_doc: dict, rate: float,
                 rep: int) -> list[RoundMetrics]:
    """One (rate, repetition) cell: a fresh network, a request sub-round,
    then a finish sub-round settling the approved trips."""
    result: ScenarioResult = run_scenario(scenario_doc, record_snapshots=False)
    net = result.network
    requests, finishes, reservoir = generate_workload(config, scenario_doc, rate, rep)
    if reservoir:
        _approve_reservoir(net, reservoir)
    out = []
    if requests:
        out.append(run_round(net, requests, config, rate, rep, REQUEST_ACCESS))
    if finishes:
        out.append(run_round(net, finishes, config, rate, rep, FINISH_TRIP))
    return out


@dataclass
class SuiteResult:
    config: WorkloadConfig
    rows: list[RoundMetrics]

    def aggregate(self) -> dict:
        """Mean and stddev per (rate, tx-type) cell."""
        cells: dict[tuple[float, str], list[RoundMetrics]] = {}
        for row in self.rows:
            cells.setdefault((row.send_rate, row.tx_type), []).append(row)
        out: dict[str, dict] = {}
        for (rate, tx_type), rows in sorted(cells.items()):
            tp = [r.throughput for r in rows]
            la = [r.latency_avg for r in rows]
            entry = out.setdefault(tx_type, {"rates": [], "throughput_mean": [],
                                             "throughput_std": [], "latency_mean": [],
                                             "latency_std": []})
            entry["rates"].append(rate)
            entry["throughput_mean"].append(statistics.fmean(tp))
            entry["throughput_std"].append(statistics.pstdev(tp) if len(tp) > 1 else 0.0)
            entry["latency_mean"].append(statistics.fmean(la))
            entry["latency_std"].append(statistics.pstdev(la) if len(la) > 1 else 0.0)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fp:
            writer = csv.writer(fp)
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                writer.writerow(row.csv_row())

    def write_plot_data(self, path) -> None:
        agg = self.aggregate()
        doc = {
            "config": self.config.to_json(),
            "throughput": {t: {"rates": d["rates"], "mean": d["throughput_mean"],
                               "std": d["throughput_std"]} for t, d in agg.items()},
            "latency": {t: {"rates": d["rates"], "mean": d["latency_mean"],
                            "std": d["latency_std"]} for t, d in agg.items()},
        }
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(doc, fp, indent=2, sort_keys=True)
            fp.write("\n")


def run_suite(config: WorkloadConfig, scenario_doc: dict | None = None,
              out_dir: str | Path | None = None, figures: bool = True,
              progress=None) -> SuiteResult:
    """All rates x repetitions; optionally writes CSV, plot data and
    rendered figures under out_dir."""
    config.validate()
    if scenario_doc is None:
        scenario_doc = build_bench_scenario(seed=config.seed)
    rows: list[RoundMetrics] = []
    for rate in config.send_rates:
        for rep in range(config.repetitions):
            if progress is not None:
                progress(f"rate {rate} tps, repetition {rep + 1}/{config.repetitions}")
            rows.extend(run_rate_rep(config, scenario_doc, rate, rep))
    suite = SuiteResult(config=config, rows=rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        suite.write_csv(out / "metrics.csv")
        suite.write_plot_data(out / "plot_data.json")
        if figures:
            from .plots import render_bench_figures

            render_bench_figures(suite.aggregate(), out)
    return suite
