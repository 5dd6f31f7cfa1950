"""End-to-end scenario execution and the invariant suite.

The runner wires actors to a fresh ledger and simulated network, drives
the tick loop until quiescence or the tick limit, then checks every market
invariant: token conservation at each journal point, settlement
exclusivity, replay determinism, the journal anonymity scan, the
plaintext-leak scan over the transport transcript, and (when the scenario
declares one) the expected-settlement oracle table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import ledger as ledger_mod
from . import messages
from .actors import Buyer, Notary, OrderParams, Seller, keys_from_seed
from .crypto import derive_address
from .ledger import Ledger, Phase, ReplayError
from .messages import Audience, DataRequest
from .scenario import Scenario
from .transport import Network, NetworkConfig


@dataclass(frozen=True)
class SettlementRow:
    order_id: str
    response_digest: str
    seller_name: str
    seller_address: str
    verdict: str
    outcome: str
    seller_amount: int
    buyer_refund: int
    notary_fee: int


@dataclass
class RunReport:
    scenario_name: str
    ticks_used: int
    quiescent: bool
    rows: List[SettlementRow]
    balances: Dict[str, int]
    total_supply: int
    state_digest: str
    invariant_failures: List[str] = field(default_factory=list)
    oracle_failures: List[str] = field(default_factory=list)
    unsettled: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.invariant_failures and not self.oracle_failures

    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def render(self) -> str:
        lines = [
            f"scenario: {self.scenario_name}",
            f"ticks: {self.ticks_used} quiescent: {'yes' if self.quiescent else 'no'}",
            "settlements:",
        ]
        for row in self.rows:
            lines.append(
                f"  order={row.order_id[:12]} seller={row.seller_name}"
                f" verdict={row.verdict} outcome={row.outcome}"
                f" paid={row.seller_amount} refund={row.buyer_refund}"
                f" fee={row.notary_fee}"
            )
        lines.append("balances:")
        for name in sorted(self.balances):
            lines.append(f"  {name}: {self.balances[name]}")
        lines.append(f"total_supply: {self.total_supply}")
        lines.append(f"state_digest: {self.state_digest}")
        lines.append(f"invariants: {'PASS' if self.ok else 'FAIL'}")
        for failure in self.invariant_failures:
            lines.append(f"  invariant-failure: {failure}")
        for failure in self.oracle_failures:
            lines.append(f"  oracle-failure: {failure}")
        lines.append("--- machine-readable ---")
        machine = {
            "scenario": self.scenario_name,
            "ticks": self.ticks_used,
            "quiescent": self.quiescent,
            "settlements": [vars(row) for row in self.rows],
            "balances": self.balances,
            "total_supply": self.total_supply,
            "state_digest": self.state_digest,
            "invariant_failures": self.invariant_failures,
            "oracle_failures": self.oracle_failures,
            "unsettled": self.unsettled,
        }
        lines.append(json.dumps(machine, sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    scenario: Scenario
    ledger: Ledger
    network: Network
    buyers: List[Buyer]
    sellers: List[Seller]
    notaries: List[Notary]
    report: RunReport


def run_scenario(
    scenario: Scenario,
    seed: Optional[int] = None,
    tick_limit: int = 200,
) -> RunResult:
    scenario.validate()
    net_spec = scenario.network
    network = Network(
        NetworkConfig(
            latency_min=net_spec.latency_min,
            latency_max=net_spec.latency_max,
            drop_rate=net_spec.drop_rate,
            seed=net_spec.seed if seed is None else seed,
        )
    )
    market = Ledger()

    seller_keys = {s.name: keys_from_seed(s.seed) for s in scenario.sellers}
    enrollment = {
        derive_address(keys.public_key): name for name, keys in seller_keys.items()
    }

    notaries = []
    for spec in scenario.notaries:
        truth = {}
        for seller in scenario.sellers:
            for schema, data in seller.dataset.items():
                truth[(seller.name, schema)] = data
        for seller_name, per_schema in spec.ground_truth.items():
            for schema, data in per_schema.items():
                truth[(seller_name, schema)] = data
        notary = Notary(
            name=spec.name,
            seed=spec.seed,
            fee=spec.fee,
            policy=spec.policy(),
            ledger=market,
            network=network,
            ground_truth=truth,
            enrollment=enrollment,
            declines=spec.declines,
            service_terms=messages.terms_link(f"service terms of {spec.name}"),
        )
        network.register(notary.endpoint)
        notaries.append(notary)
    notary_by_name = {n.name: n for n in notaries}
    notary_directory = {n.address: n.name for n in notaries}

    buyers = []
    for spec in scenario.buyers:
        buyer = Buyer(
            name=spec.name,
            seed=spec.seed,
            ledger=market,
            network=network,
            selection=spec.selection,
            force_audit=spec.force_audit,
            mutation=spec.mutation,
        )
        buyer.set_directory(notary_directory)
        network.register(buyer.control_endpoint)
        network.register(buyer.upload_url)
        buyers.append(buyer)
    buyer_by_name = {b.name: b for b in buyers}

    sellers = []
    for spec in scenario.sellers:
        sellers.append(
            Seller(
                name=spec.name,
                seed=spec.seed,
                attributes=spec.attributes,
                dataset=spec.dataset,
                ledger=market,
                network=network,
                mutation=spec.mutation,
                min_price=spec.min_price,
            )
        )

    for spec in scenario.buyers:
        if spec.balance > 0:
            market.mint(buyer_by_name[spec.name].address, spec.balance)

    schedule: List[Tuple[int, Buyer, OrderParams]] = []
    for order in scenario.orders:
        params = OrderParams(
            audience=Audience(frozenset(order.audience)),
            request=DataRequest(order.schema_id, order.fields),
            price=order.price,
            audit_budget=order.audit_budget,
            notary_endpoints=tuple(
                notary_by_name[name].endpoint for name in order.notaries
            ),
            terms=messages.terms_link(order.terms),
            response_window=order.response_window,
            countersign_window=order.countersign_window,
        )
        schedule.append((order.start_tick, buyer_by_name[order.buyer], params))
    last_start = max((t for t, _, _ in schedule), default=0)

    endpoint_owner = {}
    for buyer in buyers:
        endpoint_owner[buyer.control_endpoint] = buyer
        endpoint_owner[buyer.upload_url] = buyer
    for notary in notaries:
        endpoint_owner[notary.endpoint] = notary

    quiescent = False
    while network.tick_now < tick_limit:
        t = network.tick_now
        for start, buyer, params in schedule:
            if start == t:
                buyer.start_order(params, t)
        delivered = network.tick()
        for endpoint in sorted(delivered):
            owner = endpoint_owner[endpoint]
            for envelope in delivered[endpoint]:
                owner.handle(envelope)
        now = network.tick_now
        for buyer in buyers:
            buyer.step(now)
        for seller in sellers:
            seller.step(now)
        for notary in notaries:
            notary.step(now)
        if network.idle and t >= last_start and all(b.done for b in buyers):
            quiescent = True
            break

    report = build_report(scenario, market, network, buyers, sellers, notaries, quiescent)
    return RunResult(scenario, market, network, buyers, sellers, notaries, report)


def build_report(
    scenario: Scenario,
    market: Ledger,
    network: Network,
    buyers: List[Buyer],
    sellers: List[Seller],
    notaries: List[Notary],
    quiescent: bool,
) -> RunReport:
    names = {}
    for buyer in buyers:
        names[buyer.address] = buyer.name
    for seller in sellers:
        names[seller.address] = seller.name
    for notary in notaries:
        names[notary.address] = notary.name

    rows = []
    for buyer in buyers:
        for record in buyer.settlements:
            s = record.settlement
            rows.append(
                SettlementRow(
                    order_id=record.order_id,
                    response_digest=record.response_digest.hex(),
                    seller_name=names.get(record.seller, record.seller.hex),
                    seller_address=record.seller.hex,
                    verdict=s.verdict.letter,
                    outcome=s.outcome.name,
                    seller_amount=s.seller_amount,
                    buyer_refund=s.buyer_refund,
                    notary_fee=s.notary_fee,
                )
            )
    rows.sort(key=lambda r: (r.order_id, r.response_digest))

    balances = {}
    for address in sorted(market.accounts):
        label = names.get(address, address.hex)
        balances[label] = market.accounts[address]

    unsettled = [
        f"{oid}:{digest.hex()}"
        for oid, contract in sorted(market.contracts.items())
        for digest, state in sorted(contract.responses.items())
        if state.phase is not Phase.SETTLED
    ]

    report = RunReport(
        scenario_name=scenario.name,
        ticks_used=network.tick_now,
        quiescent=quiescent,
        rows=rows,
        balances=balances,
        total_supply=market.total_supply,
        state_digest=market.state_digest().hex(),
        unsettled=unsettled,
    )
    report.invariant_failures = run_invariants(scenario, market, network, quiescent, unsettled)
    report.oracle_failures = check_oracle(scenario, rows)
    return report


def run_invariants(
    scenario: Scenario,
    market: Ledger,
    network: Network,
    quiescent: bool,
    unsettled: List[str],
) -> List[str]:
    failures = []

    if not market.conservation_holds():
        failures.append("token conservation violated in final state")
    try:
        # Re-executes every journal event; conservation is checked after
        # each one inside replay().
        replayed = ledger_mod.replay(market.journal)
    except ReplayError as exc:
        failures.append(f"journal replay failed: {exc}")
    else:
        if replayed.state_digest() != market.state_digest():
            failures.append("replayed state digest differs from live state digest")

    for oid, contract in market.contracts.items():
        for digest, state in contract.responses.items():
            if state.phase is Phase.SETTLED and state.outcome is None:
                failures.append(f"settled response {digest.hex()} has no outcome")

    journal = ledger_mod.journal_bytes(market)
    for secret in scenario.profile_secrets():
        if secret and secret in journal:
            failures.append(f"journal leaks profile value {secret!r}")
    for secret in scenario.data_secrets():
        if secret and secret in journal:
            failures.append(f"journal leaks plaintext data {secret!r}")

    data_secrets = [d for d in scenario.data_secrets() if d]
    for envelope in network.transcript:
        for secret in data_secrets:
            if secret in envelope.message:
                failures.append(
                    f"plaintext data left an actor unencrypted (to {envelope.endpoint})"
                )

    if unsettled and not quiescent:
        failures.append(
            f"liveness: tick limit reached with unsettled selected responses: {unsettled}"
        )
    return failures


def check_oracle(scenario: Scenario, rows: List[SettlementRow]) -> List[str]:
    if scenario.expected is None:
        return []
    expected = sorted(
        (e.seller, e.verdict, e.outcome) for e in scenario.expected
    )
    actual = sorted((r.seller_name, r.verdict, r.outcome) for r in rows)
    if expected == actual:
        return []
    missing = [e for e in expected if e not in actual]
    surplus = [a for a in actual if a not in expected]
    out = []
    if missing:
        out.append(f"expected settlements missing: {missing}")
    if surplus:
        out.append(f"settlements not in oracle table: {surplus}")
    return out
