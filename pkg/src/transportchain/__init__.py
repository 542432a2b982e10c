"""transportchain: a deterministic simulator of blockchain-based
delegation of transport credits.

Per-organisation channel ledgers with MVCC validation, a token escrow
contract, a monotone access-control delegation contract, an end-to-end
scenario engine, and a throughput/latency benchmark harness.
"""

from .access_contract import (
    ACCESS_CONTRACT_NAME,
    AccessControlContract,
    MODE_POSTPAID,
    MODE_RESERVE,
    NodeView,
    TripRequest,
    decide_by_rules,
    deploy_access_contract,
)
from .bench import (
    FINISH_TRIP,
    REQUEST_ACCESS,
    RoundMetrics,
    SuiteResult,
    WorkloadConfig,
    build_bench_scenario,
    generate_workload,
    run_round,
    run_suite,
)
from .conditions import (
    All,
    BudgetPerPeriod,
    Condition,
    Geofence,
    MaxPerTrip,
    RoleIs,
    TimeWindow,
    TransportTypes,
    TripContext,
    condition_from_json,
    condition_to_json,
    evaluate,
)
from .ledger import (
    Block,
    Channel,
    ContractError,
    Event,
    LedgerError,
    Network,
    Principal,
    ReadWriteSet,
    SimClock,
    TransactionRecord,
    WorldState,
    load_block_log,
    replay,
    verify_block_log,
)
from .scenario import (
    NegotiationOutcome,
    ScenarioResult,
    TripOutcome,
    load_fixture,
    load_scenario_file,
    negotiate,
    new_network,
    run_scenario,
    validate_scenario,
)
from .token_contract import (
    Proposal,
    TokenContract,
    balance_of,
    deploy_token_contract,
    init_escrow,
    token_contract_name,
)

__version__ = "0.1.0"
