"""Command-line driver: create networks and channels, run escrow and
delegation steps, fire single trips, execute scenario files, run the
benchmark suite, and export or verify block logs.

All state lives in a local data directory (override with --data-dir or
the TRANSPORTCHAIN_DATA environment variable); every command reloads the
network by replaying the stored block logs, applies its operations, and
writes the logs back. The directory is locked for the duration of a
command.

Exit codes: 0 success, 2 usage/state error, 3 validation error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .access_contract import ACCESS_CONTRACT_NAME, TripRequest, deploy_access_contract
from .bench import WorkloadConfig, build_bench_scenario, run_suite
from .conditions import condition_from_json
from .ledger import (
    LedgerError,
    load_block_log,
    Principal,
    replay,
    SimClock,
    verify_block_log,
)
from .scenario import (
    DEFAULT_START_MS,
    load_scenario_file,
    new_network,
    run_scenario,
)
from .token_contract import Proposal, balance_of, deploy_token_contract, init_escrow

EXIT_OK = 0
EXIT_STATE = 2
EXIT_VALIDATION = 3
EXIT_VERIFY = 4

DEFAULT_DATA_DIR = "tcdata"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_STATE):
        super().__init__(message)
        self.code = code


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


class DataStore:
    """File-backed network state: meta.json plus one block log per channel."""

    def __init__(self, root: Path):
        self.root = root
        self.meta_path = root / "meta.json"
        self.blocks_dir = root / "blocks"
        self._lock_path = root / ".lock"
        self._locked = False

    def exists(self) -> bool:
        return self.meta_path.exists()

    def init(self, seed: int) -> None:
        if self.exists():
            raise CliError(f"data dir {self.root} is already initialised")
        self.root.mkdir(parents=True, exist_ok=True)
        self.blocks_dir.mkdir(exist_ok=True)
        self._write_meta({"seed": seed, "clock_ms": DEFAULT_START_MS,
                          "principals": [], "channels": []})

    def lock(self) -> None:
        try:
            fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(f"data dir {self.root} is locked (stale lock? "
                           f"remove {self._lock_path})") from None
        with os.fdopen(fd, "w") as fp:
            fp.write(str(os.getpid()))
        self._locked = True

    def unlock(self) -> None:
        if self._locked:
            self._lock_path.unlink(missing_ok=True)
            self._locked = False

    def _write_meta(self, meta: dict) -> None:
        with open(self.meta_path, "w", encoding="utf-8") as fp:
            json.dump(meta, fp, indent=2, sort_keys=True)
            fp.write("\n")

    def load_meta(self) -> dict:
        if not self.exists():
            raise CliError(f"data dir {self.root} is not initialised "
                           f"(run `transportchain network init` first)")
        with open(self.meta_path, "r", encoding="utf-8") as fp:
            return json.load(fp)

    def load_network(self):
        meta = self.load_meta()
        net = new_network(clock=SimClock(meta["clock_ms"]))
        for p in meta["principals"]:
            net.register_principal(Principal(id=p["id"], kind=p["kind"],
                                             org=p.get("org"), role=p.get("role", "")))
        for c in meta["channels"]:
            org = net.principal(c["organisation"])
            companies = [net.principal(x) for x in c["companies"]]
            channel = net.create_channel(c["name"], org, companies)
            log_path = self.blocks_dir / f"{_safe_name(c['name'])}.jsonl"
            if log_path.exists():
                with open(log_path, "r", encoding="utf-8") as fp:
                    channel.restore_from_log(load_block_log(fp))
        return net, meta

    def save_network(self, net, meta: dict) -> None:
        meta["clock_ms"] = net.clock.now
        meta["principals"] = [
            {"id": p.id, "kind": p.kind, "org": p.org, "role": p.role}
            for p in net.principals.values() if p.kind != "network-admin"
        ]
        meta["channels"] = [
            {"name": ch.name, "organisation": ch.organisation.id,
             "companies": [c.id for c in ch.companies]}
            for ch in net.channels.values()
        ]
        self._write_meta(meta)
        self.blocks_dir.mkdir(exist_ok=True)
        for ch in net.channels.values():
            ch.write_block_log(self.blocks_dir / f"{_safe_name(ch.name)}.jsonl")

    def append_events(self, net) -> None:
        events_dir = self.root / "events"
        events_dir.mkdir(exist_ok=True)
        for ch in net.channels.values():
            path = events_dir / f"{_safe_name(ch.name)}.jsonl"
            with open(path, "w", encoding="utf-8") as fp:
                for ev in ch.events:
                    fp.write(json.dumps(ev.to_dict(), sort_keys=True,
                                        separators=(",", ":")) + "\n")


def _parse_kv_list(values: list[str], what: str) -> dict[str, int]:
    out: dict[str, int] = {}
    for raw in values:
        for part in raw.split(","):
            if not part:
                continue
            if "=" not in part:
                raise CliError(f"bad {what} entry {part!r} (expected key=value)",
                               EXIT_VALIDATION)
            k, v = part.split("=", 1)
            try:
                out[k] = int(v)
            except ValueError:
                raise CliError(f"bad {what} value {v!r}", EXIT_VALIDATION) from None
    return out


def _parse_latlon(raw: str) -> tuple[float, float]:
    try:
        lat, lon = raw.split(",")
        return float(lat), float(lon)
    except ValueError:
        raise CliError(f"bad coordinate {raw!r} (expected lat,lon)",
                       EXIT_VALIDATION) from None


def _parse_conditions(raw: str | None) -> dict:
    if raw is None:
        return {"kind": "all", "items": []}
    try:
        doc = json.loads(raw)
        condition_from_json(doc)  # shape check
        return doc
    except (json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"bad conditions JSON: {exc}", EXIT_VALIDATION) from None


def _submit_checked(channel, submitter, contract, op, args):
    tx_id = channel.submit(submitter, contract, op, args)
    channel.commit_block()
    tx = channel.get_tx(tx_id)
    if tx.validity != "valid":
        raise CliError(f"transaction failed: {tx.error}: {tx.response}")
    return tx


# -- commands ------------------------------------------------------------------


def cmd_network_init(store: DataStore, args) -> int:
    store.init(args.seed)
    print(f"initialised {store.root}")
    return EXIT_OK


def cmd_principal_add(store: DataStore, args) -> int:
    net, meta = store.load_network()
    net.register_principal(Principal(id=args.id, kind=args.kind,
                                     org=args.org, role=args.role or ""))
    store.save_network(net, meta)
    print(f"principal {args.id} ({args.kind})")
    return EXIT_OK


def cmd_channel_create(store: DataStore, args) -> int:
    net, meta = store.load_network()
    org = net.principal(args.org)
    companies = [net.principal(c) for c in args.company]
    channel = net.create_channel(args.name, org, companies)
    balances = _parse_kv_list(args.balance, "balance")
    for owner in sorted(balances):
        channel.submit(net.admin, "bank", "mint",
                       {"owner": owner, "amount": balances[owner]})
    if balances:
        channel.commit_block()
    store.save_network(net, meta)
    print(f"channel {channel.name} members={sorted(channel.members)}")
    return EXIT_OK


def cmd_contract_deploy(store: DataStore, args) -> int:
    net, meta = store.load_network()
    channel = net.channel(args.channel)
    if args.type == "token":
        if not args.company:
            raise CliError("--company is required for token contracts")
        name = deploy_token_contract(channel, net.principal(args.company))
    else:
        name = deploy_access_contract(
            channel, channel.organisation,
            root_conditions=condition_from_json(_parse_conditions(args.root_conditions)),
            spending_mode=args.mode,
        )
    store.save_network(net, meta)
    print(f"deployed {name} on {channel.name}")
    return EXIT_OK


def cmd_escrow_init(store: DataStore, args) -> int:
    net, meta = store.load_network()
    channel = net.channel(args.channel)
    company = net.principal(args.company)
    price_list = _parse_kv_list(args.price_list, "price-list")
    proposal = Proposal(company=company.id, organisation=channel.organisation.id,
                        credit_amount=args.credits, total_price=args.price,
                        price_list=price_list)
    name = init_escrow(channel, company, proposal)
    store.save_network(net, meta)
    print(f"escrow initialized on {name}")
    return EXIT_OK


def cmd_escrow_deposit(store: DataStore, args) -> int:
    net, meta = store.load_network()
    channel = net.channel(args.channel)
    if args.leg == "tokens":
        submitter = net.principal(args.company)
        op = "deposit_tokens"
        contract = f"token-{args.company}"
    else:
        submitter = channel.organisation
        op = "deposit_payment"
        contract = f"token-{args.company}"
    tx = _submit_checked(channel, submitter, contract, op, {"amount": args.amount})
    store.save_network(net, meta)
    print(f"phase {tx.response['phase']}")
    return EXIT_OK


def cmd_access_delegate(store: DataStore, args) -> int:
    net, meta = store.load_network()
    channel = net.channel(args.channel)
    call_args = {
        "parent": args.parent,
        "grantee": args.grantee,
        "conditions": _parse_conditions(args.conditions),
        "sub_limit": None,
    }
    if args.sub_limit:
        credits, _, period = args.sub_limit.partition(":")
        call_args["sub_limit"] = [int(credits), period or "week"]
    if args.node_id:
        call_args["node_id"] = args.node_id
    tx = _submit_checked(channel, net.principal(args.caller),
                         ACCESS_CONTRACT_NAME, "delegate", call_args)
    store.save_network(net, meta)
    print(f"node {tx.response['node_id']}")
    return EXIT_OK


def cmd_access_revoke(store: DataStore, args) -> int:
    net, meta = store.load_network()
    channel = net.channel(args.channel)
    tx = _submit_checked(channel, net.principal(args.caller),
                         ACCESS_CONTRACT_NAME, "revoke", {"node_id": args.node_id})
    store.save_network(net, meta)
    print(f"revoked {' '.join(tx.response['revoked'])}")
    return EXIT_OK


def cmd_trip_request(store: DataStore, args) -> int:
    net, meta = store.load_network()
    channel = net.channel(args.channel)
    employee = net.principal(args.employee)
    net.clock.advance(args.advance_ms)
    trip_id = args.trip_id or f"trip-{net.clock.now}"
    trip = TripRequest(
        trip_id=trip_id, employee=employee.id, transport_type=args.type,
        origin=_parse_latlon(args.origin), destination=_parse_latlon(args.dest),
        requested_at=net.clock.now, max_cost=args.max_cost,
    )
    tx = _submit_checked(channel, employee, ACCESS_CONTRACT_NAME,
                         "request_access", trip.to_json())
    store.save_network(net, meta)
    if args.events:
        store.append_events(net)
    resp = tx.response
    if resp["status"] == "approved":
        print(f"approved hold={resp['hold_id']} trip={trip_id} company={resp['company']}")
    else:
        print(f"denied {resp['reason']} trip={trip_id}")
    return EXIT_OK


def cmd_trip_finish(store: DataStore, args) -> int:
    net, meta = store.load_network()
    channel = net.channel(args.channel)
    if args.company:
        finisher = net.principal(args.company)
    else:
        finisher = channel.companies[0]
    net.clock.advance(args.advance_ms)
    tx = _submit_checked(channel, finisher, ACCESS_CONTRACT_NAME, "finish_trip",
                         {"trip_id": args.trip_id, "actual_cost": args.actual})
    store.save_network(net, meta)
    if args.events:
        store.append_events(net)
    print(f"finished trip={args.trip_id} actual={tx.response['actual_cost']}")
    return EXIT_OK


def cmd_balance(store: DataStore, args) -> int:
    net, _ = store.load_network()
    channel = net.channel(args.channel)
    viewer = net.principal(args.viewer) if args.viewer else channel.organisation
    pool, holds, spent = balance_of(channel, viewer, args.company)
    print(f"pool={pool} holds={holds} spent={spent}")
    return EXIT_OK


def cmd_ledger_export(store: DataStore, args) -> int:
    net, _ = store.load_network()
    channel = net.channel(args.channel)
    lines = channel.export_blocks()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            for line in lines:
                fp.write(line + "\n")
        print(f"wrote {len(lines)} blocks to {args.out}")
    else:
        for line in lines:
            print(line)
    return EXIT_OK


def cmd_ledger_verify(store: DataStore, args) -> int:
    if args.file:
        with open(args.file, "r", encoding="utf-8") as fp:
            try:
                blocks = load_block_log(fp)
                verify_block_log(blocks)
                state = replay(blocks)
            except LedgerError as exc:
                print(f"FAIL {exc.code}")
                return EXIT_VERIFY
        print(f"OK {state.hash()}")
        return EXIT_OK
    net, _ = store.load_network()
    channel = net.channel(args.channel)
    try:
        state = replay(channel.blocks)
    except LedgerError as exc:
        print(f"FAIL {exc.code}")
        return EXIT_VERIFY
    live = channel.state_hash()
    if state.hash() != live:
        print("FAIL replay-divergence")
        return EXIT_VERIFY
    print(f"OK {live}")
    return EXIT_OK


def cmd_scenario_run(store: DataStore, args) -> int:
    doc = load_scenario_file(args.file)
    result = run_scenario(doc)
    out_dir = Path(args.out_dir) if args.out_dir else store.root / "outputs" / _safe_name(doc["name"])
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = result.summary()
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fp:
        json.dump(summary, fp, indent=2, sort_keys=True)
        fp.write("\n")
    for cname, lines in result.block_logs().items():
        with open(out_dir / f"blocks.{_safe_name(cname)}.jsonl", "w", encoding="utf-8") as fp:
            for line in lines:
                fp.write(line + "\n")
    if args.events:
        for cname in result.network.channels:
            with open(out_dir / f"events.{_safe_name(cname)}.jsonl", "w",
                      encoding="utf-8") as fp:
                for ev in result.network.channel(cname).events:
                    fp.write(json.dumps(ev.to_dict(), sort_keys=True,
                                        separators=(",", ":")) + "\n")
    for cname, digest in summary["state_hashes"].items():
        print(f"{cname} {digest}")
    print(f"summary written to {out_dir / 'summary.json'}")
    return EXIT_OK


def cmd_bench_run(store: DataStore, args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fp:
            try:
                cfg = WorkloadConfig.from_json(json.load(fp))
            except (json.JSONDecodeError, TypeError) as exc:
                raise CliError(f"bad bench config: {exc}", EXIT_VALIDATION) from None
    else:
        cfg = WorkloadConfig()
    if args.rates:
        cfg.send_rates = [float(r) for r in args.rates.split(",")]
    if args.reps is not None:
        cfg.repetitions = args.reps
    if args.tx is not None:
        cfg.tx_per_round = args.tx
    if args.capacity is not None:
        cfg.committer_capacity = args.capacity
    if args.mix is not None:
        cfg.mix = args.mix
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    scenario_doc = build_bench_scenario(seed=cfg.seed,
                                        employees_per_org=args.employees)
    out_dir = Path(args.out_dir) if args.out_dir else store.root / "outputs" / "bench"
    suite = run_suite(cfg, scenario_doc=scenario_doc, out_dir=out_dir,
                      figures=not args.no_figures,
                      progress=(lambda msg: print(f"  {msg}", file=sys.stderr))
                      if not args.quiet else None)
    agg = suite.aggregate()
    for tx_type in sorted(agg):
        series = agg[tx_type]
        for rate, tp, lat in zip(series["rates"], series["throughput_mean"],
                                 series["latency_mean"]):
            print(f"{tx_type} rate={rate:.0f} throughput={tp:.1f} latency={lat:.3f}s")
    print(f"metrics written to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transportchain",
        description="Deterministic transport-credit delegation ledger simulator",
    )
    parser.add_argument("--data-dir", default=None,
                        help="state directory (or TRANSPORTCHAIN_DATA, default ./tcdata)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("network", help="network management")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pi = ps.add_parser("init", help="initialise a data directory")
    pi.add_argument("--seed", type=int, default=42)
    pi.set_defaults(func=cmd_network_init, needs_lock=True)

    p = sub.add_parser("principal", help="principal management")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pa = ps.add_parser("add")
    pa.add_argument("--id", required=True)
    pa.add_argument("--kind", required=True,
                    choices=["organisation", "department", "employee",
                             "transport-company"])
    pa.add_argument("--org")
    pa.add_argument("--role")
    pa.set_defaults(func=cmd_principal_add, needs_lock=True)

    p = sub.add_parser("channel", help="channel management")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pc = ps.add_parser("create")
    pc.add_argument("--name", required=True)
    pc.add_argument("--org", required=True)
    pc.add_argument("--company", action="append", required=True)
    pc.add_argument("--balance", action="append", default=[],
                    help="owner=amount settlement funding (repeatable)")
    pc.set_defaults(func=cmd_channel_create, needs_lock=True)

    p = sub.add_parser("contract", help="contract deployment")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pd = ps.add_parser("deploy")
    pd.add_argument("--channel", required=True)
    pd.add_argument("--type", required=True, choices=["token", "access"])
    pd.add_argument("--company", help="token contracts: the selling company")
    pd.add_argument("--mode", default="reserve", choices=["reserve", "postpaid"])
    pd.add_argument("--root-conditions", help="access contracts: condition JSON")
    pd.set_defaults(func=cmd_contract_deploy, needs_lock=True)

    p = sub.add_parser("escrow", help="credit purchase escrow")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pe = ps.add_parser("init")
    pe.add_argument("--channel", required=True)
    pe.add_argument("--company", required=True)
    pe.add_argument("--credits", type=int, required=True)
    pe.add_argument("--price", type=int, required=True)
    pe.add_argument("--price-list", action="append", required=True,
                    help="type=credits-per-unit (repeatable or comma separated)")
    pe.set_defaults(func=cmd_escrow_init, needs_lock=True)
    for leg in ("tokens", "payment"):
        pl = ps.add_parser(f"deposit-{leg}")
        pl.add_argument("--channel", required=True)
        pl.add_argument("--company", required=True)
        pl.add_argument("--amount", type=int, required=True)
        pl.set_defaults(func=cmd_escrow_deposit, needs_lock=True, leg=leg)

    p = sub.add_parser("access", help="delegation management")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pg = ps.add_parser("delegate")
    pg.add_argument("--channel", required=True)
    pg.add_argument("--caller", required=True)
    pg.add_argument("--parent", required=True)
    pg.add_argument("--grantee", required=True)
    pg.add_argument("--conditions", help="condition JSON")
    pg.add_argument("--sub-limit", help="credits[:period], e.g. 200:week")
    pg.add_argument("--node-id")
    pg.set_defaults(func=cmd_access_delegate, needs_lock=True)
    pr = ps.add_parser("revoke")
    pr.add_argument("--channel", required=True)
    pr.add_argument("--caller", required=True)
    pr.add_argument("--node-id", required=True)
    pr.set_defaults(func=cmd_access_revoke, needs_lock=True)

    p = sub.add_parser("trip", help="trip lifecycle")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pt = ps.add_parser("request")
    pt.add_argument("--channel", required=True)
    pt.add_argument("--employee", required=True)
    pt.add_argument("--type", required=True)
    pt.add_argument("--origin", required=True, help="lat,lon")
    pt.add_argument("--dest", required=True, help="lat,lon")
    pt.add_argument("--max-cost", type=int, required=True)
    pt.add_argument("--trip-id")
    pt.add_argument("--advance-ms", type=int, default=60000,
                    help="logical time to advance before submitting")
    pt.add_argument("--events", action="store_true",
                    help="write the per-channel event stream files")
    pt.set_defaults(func=cmd_trip_request, needs_lock=True)
    pf = ps.add_parser("finish")
    pf.add_argument("--channel", required=True)
    pf.add_argument("--trip-id", required=True)
    pf.add_argument("--actual", type=int, required=True)
    pf.add_argument("--company")
    pf.add_argument("--advance-ms", type=int, default=600000)
    pf.add_argument("--events", action="store_true")
    pf.set_defaults(func=cmd_trip_finish, needs_lock=True)

    p = sub.add_parser("balance", help="token pool snapshot")
    p.add_argument("--channel", required=True)
    p.add_argument("--company", required=True)
    p.add_argument("--viewer")
    p.set_defaults(func=cmd_balance, needs_lock=False)

    p = sub.add_parser("ledger", help="block log export and verification")
    ps = p.add_subparsers(dest="subcommand", required=True)
    px = ps.add_parser("export")
    px.add_argument("--channel", required=True)
    px.add_argument("--out")
    px.set_defaults(func=cmd_ledger_export, needs_lock=False)
    pv = ps.add_parser("verify")
    group = pv.add_mutually_exclusive_group(required=True)
    group.add_argument("--channel")
    group.add_argument("--file")
    pv.set_defaults(func=cmd_ledger_verify, needs_lock=False)

    p = sub.add_parser("scenario", help="scripted end-to-end runs")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pr = ps.add_parser("run")
    pr.add_argument("file")
    pr.add_argument("--out-dir")
    pr.add_argument("--events", action="store_true")
    pr.set_defaults(func=cmd_scenario_run, needs_lock=False)

    p = sub.add_parser("bench", help="throughput/latency benchmark")
    ps = p.add_subparsers(dest="subcommand", required=True)
    pb = ps.add_parser("run")
    pb.add_argument("--config", help="WorkloadConfig JSON file")
    pb.add_argument("--rates", help="comma-separated send rates")
    pb.add_argument("--reps", type=int)
    pb.add_argument("--tx", type=int, help="transactions per round")
    pb.add_argument("--capacity", type=float)
    pb.add_argument("--mix", type=float)
    pb.add_argument("--seed", type=int)
    pb.add_argument("--employees", type=int, default=50,
                    help="employees per organisation in the bench network")
    pb.add_argument("--out-dir")
    pb.add_argument("--no-figures", action="store_true")
    pb.add_argument("--quiet", action="store_true")
    pb.set_defaults(func=cmd_bench_run, needs_lock=False)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    data_dir = args.data_dir or os.environ.get("TRANSPORTCHAIN_DATA") or DEFAULT_DATA_DIR
    store = DataStore(Path(data_dir))
    needs_lock = getattr(args, "needs_lock", False)
    try:
        if needs_lock and store.root.exists():
            store.lock()
        elif needs_lock:
            store.root.mkdir(parents=True, exist_ok=True)
            store.lock()
        return args.func(store, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except LedgerError as exc:
        if exc.code in ("scenario-validation-error", "config-invalid"):
            print(f"error: {exc.code}: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        if exc.code == "broken-hash-chain":
            print(f"FAIL {exc.code}")
            return EXIT_VERIFY
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_STATE
    finally:
        store.unlock()


if __name__ == "__main__":
    sys.exit(main())
