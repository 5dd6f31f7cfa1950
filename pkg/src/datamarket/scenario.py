"""Declarative market scenarios: the dataclasses, the YAML file loader with
cross-reference validation, and a seeded random generator used by the
property suites.

File grammar (YAML, all keys lowercase):

    name: bank
    network: {seed: 7, latency: [1, 2], drop_rate: 0.0}
    buyers:
      - {name: buyer1, seed: 101, balance: 500,
         selection: {rule: ALL_VALID}, force_audit: false, mutation: none}
    sellers:
      - {name: alice, seed: 201, attributes: {country: AR, age: 34},
         data: {card_transactions: "..."}, mutation: none}
    notaries:
      - {name: bank, seed: 301, fee: 2, policy: {mode: ALWAYS},
         declines: false, ground_truth: {alice: {card_transactions: "..."}}}
    orders:
      - {buyer: buyer1, audience: [{attribute: country, op: eq, value: AR}],
         schema: card_transactions, fields: [amount], price: 10,
         audit_budget: 10, notaries: [bank], response_window: 6,
         terms: "model training only"}
    expected_settlements:
      - {seller: alice, verdict: b, outcome: SELLER_PAID}
    secrets: []        # extra strings that must never reach the journal

Notary ground truth defaults to each seller's own dataset; an explicit
`ground_truth` entry overrides it (modelling a seller whose offered data
disagrees with the notary's records). Selection rules: ALL_VALID,
FIRST_K (k), BUDGET_CAP (max_tokens). Notarization modes: ALWAYS, NEVER,
SAMPLE (rate). Mutations: none, substitute_data, bit_flip, wrong_notary,
price_mismatch (sellers); none, certificate_replay, forged_certificate
(buyers).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import yaml

from .actors import Mutation, NotarizationPolicy, SelectionPolicy
from .errors import ScenarioError
from .messages import Comparator, Predicate

_COMPARATORS = {
    "eq": Comparator.EQ,
    "ne": Comparator.NE,
    "ge": Comparator.GE,
    "le": Comparator.LE,
    "in": Comparator.IN,
}


@dataclass(frozen=True)
class NetworkSpec:
    seed: int = 0
    latency_min: int = 1
    latency_max: int = 1
    drop_rate: float = 0.0


@dataclass(frozen=True)
class BuyerSpec:
    name: str
    seed: int
    balance: int
    selection: SelectionPolicy = SelectionPolicy()
    force_audit: bool = False
    mutation: Mutation = Mutation.NONE


@dataclass(frozen=True)
class SellerSpec:
    name: str
    seed: int
    attributes: Dict[str, object] = field(default_factory=dict)
    dataset: Dict[str, bytes] = field(default_factory=dict)
    mutation: Mutation = Mutation.NONE
    min_price: int = 0


@dataclass(frozen=True)
class NotarySpec:
    name: str
    seed: int
    fee: int
    mode: str = "ALWAYS"
    rate: float = 0.0
    declines: bool = False
    ground_truth: Dict[str, Dict[str, bytes]] = field(default_factory=dict)

    def policy(self) -> NotarizationPolicy:
        return NotarizationPolicy(mode=self.mode, rate=self.rate, seed=self.seed)


@dataclass(frozen=True)
class OrderSpec:
    buyer: str
    audience: Tuple[Predicate, ...]
    schema_id: str
    fields: Tuple[str, ...]
    price: int
    audit_budget: int
    notaries: Tuple[str, ...]
    terms: str = "standard terms"
    response_window: int = 6
    countersign_window: int = 4
    start_tick: int = 0


@dataclass(frozen=True)
class ExpectedSettlement:
    seller: str
    verdict: str  # a | b | c
    outcome: str  # SELLER_PAID | BUYER_REFUNDED


@dataclass
class Scenario:
    name: str
    network: NetworkSpec = NetworkSpec()
    buyers: List[BuyerSpec] = field(default_factory=list)
    sellers: List[SellerSpec] = field(default_factory=list)
    notaries: List[NotarySpec] = field(default_factory=list)
    orders: List[OrderSpec] = field(default_factory=list)
    expected: Optional[List[ExpectedSettlement]] = None
    secrets: List[str] = field(default_factory=list)
    absent_schemas: List[str] = field(default_factory=list)

    def profile_secrets(self) -> List[bytes]:
        """Attribute values and seller identities that must never reach the
        journal bytes. Values under 3 bytes are skipped: they are
        indistinguishable from random digest/signature bytes."""
        out = []
        for seller in self.sellers:
            out.append(seller.name.encode())
            for value in seller.attributes.values():
                out.append(str(value).encode())
        for extra in self.secrets:
            out.append(extra.encode())
        return [s for s in out if len(s) >= 3]

    def data_secrets(self) -> List[bytes]:
        """Plaintext data values that may travel only inside ciphertext."""
        out = []
        for seller in self.sellers:
            out.extend(seller.dataset.values())
        for notary in self.notaries:
            for per_schema in notary.ground_truth.values():
                out.extend(per_schema.values())
        return out

    def validate(self) -> None:
        buyer_names = {b.name for b in self.buyers}
        seller_names = {s.name for s in self.sellers}
        notary_names = {n.name for n in self.notaries}
        if len(buyer_names) != len(self.buyers):
            raise ScenarioError("duplicate buyer names")
        if len(seller_names) != len(self.sellers):
            raise ScenarioError("duplicate seller names")
        if len(notary_names) != len(self.notaries):
            raise ScenarioError("duplicate notary names")
        known_schemas = set(self.absent_schemas)
        for seller in self.sellers:
            known_schemas.update(seller.dataset)
        for notary in self.notaries:
            for seller_name, per_schema in notary.ground_truth.items():
                if seller_name not in seller_names:
                    raise ScenarioError(
                        f"notary {notary.name} has ground truth for unknown seller "
                        f"{seller_name}"
                    )
                known_schemas.update(per_schema)
        for order in self.orders:
            if order.buyer not in buyer_names:
                raise ScenarioError(f"order references unknown buyer {order.buyer}")
            for notary in order.notaries:
                if notary not in notary_names:
                    raise ScenarioError(f"order references unknown notary {notary}")
            if not order.notaries:
                raise ScenarioError("order has an empty notary list")
            if order.schema_id not in known_schemas:
                raise ScenarioError(
                    f"schema {order.schema_id!r} is neither held by any seller, "
                    "present in ground truth, nor declared absent"
                )
        for expected in self.expected or []:
            if expected.seller not in seller_names:
                raise ScenarioError(
                    f"expected settlement references unknown seller {expected.seller}"
                )
            if expected.verdict not in ("a", "b", "c"):
                raise ScenarioError(f"unknown verdict {expected.verdict!r}")
            if expected.outcome not in ("SELLER_PAID", "BUYER_REFUNDED"):
                raise ScenarioError(f"unknown outcome {expected.outcome!r}")


# -- YAML loading ---------------------------------------------------------


def _need(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"missing {key!r} in {where}")
    return mapping[key]


def _mutation(raw, where: str) -> Mutation:
    try:
        return Mutation(raw or "none")
    except ValueError:
        raise ScenarioError(f"unknown mutation {raw!r} in {where}") from None


def _selection(raw) -> SelectionPolicy:
    if not raw:
        return SelectionPolicy()
    return SelectionPolicy(
        rule=raw.get("rule", "ALL_VALID"),
        k=int(raw.get("k", 0)),
        max_tokens=int(raw.get("max_tokens", 0)),
    )


def _predicate(raw) -> Predicate:
    attr = _need(raw, "attribute", "audience predicate")
    op = _COMPARATORS.get(str(_need(raw, "op", "audience predicate")).lower())
    if op is None:
        raise ScenarioError(f"unknown comparator {raw.get('op')!r}")
    value = _need(raw, "value", "audience predicate")
    if op is Comparator.IN:
        value = frozenset(str(v) for v in value)
    elif isinstance(value, bool):
        raise ScenarioError("boolean predicate values are not supported")
    elif not isinstance(value, int):
        value = str(value)
    return Predicate(attr, op, value)


def _dataset(raw: dict) -> Dict[str, bytes]:
    return {str(schema): str(value).encode() for schema, value in (raw or {}).items()}


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario does not parse: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be a mapping")
    return scenario_from_dict(doc)


def scenario_from_dict(doc: dict) -> Scenario:
    net_raw = doc.get("network") or {}
    latency = net_raw.get("latency", [1, 1])
    network = NetworkSpec(
        seed=int(net_raw.get("seed", 0)),
        latency_min=int(latency[0]),
        latency_max=int(latency[1]),
        drop_rate=float(net_raw.get("drop_rate", 0.0)),
    )
    buyers = [
        BuyerSpec(
            name=str(_need(raw, "name", "buyer")),
            seed=int(_need(raw, "seed", "buyer")),
            balance=int(raw.get("balance", 0)),
            selection=_selection(raw.get("selection")),
            force_audit=bool(raw.get("force_audit", False)),
            mutation=_mutation(raw.get("mutation"), "buyer"),
        )
        for raw in doc.get("buyers") or []
    ]
    sellers = [
        SellerSpec(
            name=str(_need(raw, "name", "seller")),
            seed=int(_need(raw, "seed", "seller")),
            attributes=dict(raw.get("attributes") or {}),
            dataset=_dataset(raw.get("data")),
            mutation=_mutation(raw.get("mutation"), "seller"),
            min_price=int(raw.get("min_price", 0)),
        )
        for raw in doc.get("sellers") or []
    ]
    notaries = [
        NotarySpec(
            name=str(_need(raw, "name", "notary")),
            seed=int(_need(raw, "seed", "notary")),
            fee=int(raw.get("fee", 0)),
            mode=str((raw.get("policy") or {}).get("mode", "ALWAYS")),
            rate=float((raw.get("policy") or {}).get("rate", 0.0)),
            declines=bool(raw.get("declines", False)),
            ground_truth={
                str(seller): _dataset(per_schema)
                for seller, per_schema in (raw.get("ground_truth") or {}).items()
            },
        )
        for raw in doc.get("notaries") or []
    ]
    orders = [
        OrderSpec(
            buyer=str(_need(raw, "buyer", "order")),
            audience=tuple(_predicate(p) for p in raw.get("audience") or []),
            schema_id=str(_need(raw, "schema", "order")),
            fields=tuple(str(f) for f in raw.get("fields") or []),
            price=int(_need(raw, "price", "order")),
            audit_budget=int(raw.get("audit_budget", 0)),
            notaries=tuple(str(n) for n in _need(raw, "notaries", "order")),
            terms=str(raw.get("terms", "standard terms")),
            response_window=int(raw.get("response_window", 6)),
            countersign_window=int(raw.get("countersign_window", 4)),
            start_tick=int(raw.get("start_tick", 0)),
        )
        for raw in doc.get("orders") or []
    ]
    expected_raw = doc.get("expected_settlements")
    expected = None
    if expected_raw is not None:
        expected = [
            ExpectedSettlement(
                seller=str(_need(raw, "seller", "expected settlement")),
                verdict=str(_need(raw, "verdict", "expected settlement")),
                outcome=str(_need(raw, "outcome", "expected settlement")),
            )
            for raw in expected_raw
        ]
    scenario = Scenario(
        name=str(doc.get("name", "scenario")),
        network=network,
        buyers=buyers,
        sellers=sellers,
        notaries=notaries,
        orders=orders,
        expected=expected,
        secrets=[str(s) for s in doc.get("secrets") or []],
        absent_schemas=[str(s) for s in doc.get("absent_schemas") or []],
    )
    scenario.validate()
    return scenario


# -- random scenario generation -------------------------------------------

_SELLER_MUTS = [
    Mutation.NONE,
    Mutation.NONE,
    Mutation.NONE,
    Mutation.SUBSTITUTE_DATA,
    Mutation.BIT_FLIP,
    Mutation.WRONG_NOTARY,
    Mutation.PRICE_MISMATCH,
]
_BUYER_MUTS = [
    Mutation.NONE,
    Mutation.NONE,
    Mutation.CERTIFICATE_REPLAY,
    Mutation.FORGED_CERTIFICATE,
]


def random_scenario(seed: int) -> Scenario:
    """A seeded one-order market with 1-10 sellers, random policies,
    random mutations, and optionally disagreeing ground truth."""
    rng = random.Random(seed)
    schema = "records"
    n_sellers = rng.randint(1, 10)
    n_notaries = rng.randint(1, 2)
    price = rng.randint(1, 20)

    notaries = []
    gt_overrides: Dict[str, Dict[str, bytes]] = {}
    sellers = []
    for i in range(n_sellers):
        name = f"seller{i}"
        data = f"payload-{rng.getrandbits(64):016x}-{name}"
        matches = rng.random() < 0.8
        sellers.append(
            SellerSpec(
                name=name,
                seed=rng.randint(1, 2**31),
                attributes={
                    "segment": "target" if matches else "other",
                    "tier": f"tier-{rng.randint(1, 5)}",
                },
                dataset={schema: data.encode()},
                mutation=rng.choice(_SELLER_MUTS),
            )
        )
        if rng.random() < 0.15:
            # Notary's records disagree with what the seller offers.
            gt_overrides[name] = {schema: f"truth-{rng.getrandbits(64):016x}".encode()}
    for j in range(n_notaries):
        mode = rng.choice(["ALWAYS", "NEVER", "SAMPLE"])
        notaries.append(
            NotarySpec(
                name=f"notary{j}",
                seed=rng.randint(1, 2**31),
                fee=rng.randint(0, 3),
                mode=mode,
                rate=round(rng.random(), 3) if mode == "SAMPLE" else 0.0,
                ground_truth=gt_overrides if j == 0 else {},
            )
        )
    selection = rng.choice(
        [
            SelectionPolicy(),
            SelectionPolicy(rule="FIRST_K", k=rng.randint(1, n_sellers)),
            SelectionPolicy(rule="BUDGET_CAP", max_tokens=price * rng.randint(1, n_sellers)),
        ]
    )
    buyer = BuyerSpec(
        name="buyer",
        seed=rng.randint(1, 2**31),
        balance=price * n_sellers + 200,
        selection=selection,
        force_audit=rng.random() < 0.3,
        mutation=rng.choice(_BUYER_MUTS),
    )
    order = OrderSpec(
        buyer="buyer",
        audience=(Predicate("segment", Comparator.EQ, "target"),),
        schema_id=schema,
        fields=("value",),
        price=price,
        audit_budget=rng.randint(0, 6),
        notaries=tuple(n.name for n in notaries),
        response_window=4,
        countersign_window=3,
    )
    scenario = Scenario(
        name=f"random-{seed}",
        network=NetworkSpec(
            seed=rng.randint(0, 2**31),
            latency_min=1,
            latency_max=rng.randint(1, 3),
            drop_rate=rng.choice([0.0, 0.0, 0.05]),
        ),
        buyers=[buyer],
        sellers=sellers,
        notaries=notaries,
        orders=[order],
    )
    scenario.validate()
    return scenario
