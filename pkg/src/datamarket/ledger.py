"""Deterministic single-writer token ledger hosting order contracts.

Escrow rules: registering an order moves the buyer's audit budget into the
contract; selecting sellers moves the per-response price into payment
escrow; a verifying notary certificate releases each response's escrow to
the seller (verdicts a/b) or back to the buyer (verdict c), with the
notary's fee drawn from audit escrow for audited verdicts. Every mutation
is journaled, and replaying the journal reproduces the exact state digest.

The journal deliberately stores a blinded order record (digest, buyer
address, amounts, notary terms) instead of the full order: audience
attribute values never reach the journal bytes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

from . import crypto, messages
from .crypto import Address
from .encoding import Reader, encode_uint, write_field, write_uint_field
from .errors import (
    AlreadySettled,
    AuditEscrowDepleted,
    DuplicateResponse,
    GenesisClosed,
    InsufficientFunds,
    InvalidSignature,
    LedgerError,
    OrderClosed,
    ReplayError,
    UnknownOrder,
    UnknownResponse,
)
from .messages import DataOrder, DataResponse, NotaryCertificate, NotaryTerms, Verdict


class EventKind(enum.IntEnum):
    MINT = 0
    ORDER_CREATED = 1
    AUDIT_TOPUP = 2
    SELLERS_SELECTED = 3
    RESPONSE_CLOSED = 4
    ORDER_CLOSED = 5


TRAILER_KIND = 255


@dataclass(frozen=True)
class LedgerEvent:
    sequence: int
    kind: EventKind
    payload: bytes

    def encode(self) -> bytes:
        out = bytearray(encode_uint(self.sequence))
        out.append(self.kind)
        write_field(out, self.payload)
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes) -> "LedgerEvent":
        r = Reader(data)
        seq_bytes = bytes(r.read_byte() for _ in range(8))
        seq = int.from_bytes(seq_bytes, "big")
        kind = EventKind(r.read_byte())
        payload = r.read_field()
        r.expect_end()
        return cls(seq, kind, payload)


class Phase(enum.IntEnum):
    SUBMITTED = 0
    SELECTED = 1
    SETTLED = 2


class Outcome(enum.IntEnum):
    SELLER_PAID = 0
    BUYER_REFUNDED = 1


class Status(enum.IntEnum):
    OPEN = 0
    CLOSED = 1


@dataclass
class ResponseState:
    response: DataResponse
    phase: Phase = Phase.SELECTED
    outcome: Optional[Outcome] = None


@dataclass
class OrderContract:
    order_digest: bytes
    buyer_address: Address
    min_audit_budget: int
    price: int
    notary_terms: Dict[Address, NotaryTerms]
    audit_escrow: int = 0
    payment_escrow: int = 0
    responses: Dict[bytes, ResponseState] = field(default_factory=dict)
    status: Status = Status.OPEN
    # Full order is available on live ledgers only; a replayed contract
    # carries just the blinded record.
    order: Optional[DataOrder] = None


@dataclass(frozen=True)
class Settlement:
    outcome: Outcome
    verdict: Verdict
    seller_amount: int
    buyer_refund: int
    notary_fee: int
    notary: Address


class Ledger:
    """Single-writer escrow ledger with an append-only event journal."""

    def __init__(self):
        self.accounts: Dict[Address, int] = {}
        self.contracts: Dict[str, OrderContract] = {}
        self.journal: List[LedgerEvent] = []
        self.total_supply = 0
        self._genesis_open = True

    # -- queries ---------------------------------------------------------

    def balance(self, address: Address) -> int:
        return self.accounts.get(address, 0)

    def open_orders(self) -> Dict[str, OrderContract]:
        return {oid: c for oid, c in self.contracts.items() if c.status is Status.OPEN}

    def contract(self, order_id: str) -> OrderContract:
        try:
            return self.contracts[order_id]
        except KeyError:
            raise UnknownOrder(f"no contract for order {order_id}") from None

    def escrow_total(self) -> int:
        return sum(c.audit_escrow + c.payment_escrow for c in self.contracts.values())

    def conservation_holds(self) -> bool:
        return sum(self.accounts.values()) + self.escrow_total() == self.total_supply

    # -- operations ------------------------------------------------------

    def mint(self, address: Address, amount: int) -> None:
        if not self._genesis_open:
            raise GenesisClosed("mint is only allowed before the first order")
        if amount <= 0:
            raise LedgerError("mint amount must be positive")
        self._apply_mint(address, amount)
        self._append(EventKind.MINT, _encode_mint(address, amount))

    def register_order(
        self,
        order: DataOrder,
        notary_list: Sequence[NotaryTerms],
        price: int,
    ) -> str:
        if price <= 0:
            raise LedgerError("price must be positive")
        if not notary_list:
            raise LedgerError("notary list must be non-empty")
        if not order.verify_signature():
            raise InvalidSignature("order buyer signature does not verify")
        digest = order.digest()
        order_id = digest.hex()
        if order_id in self.contracts:
            raise LedgerError(f"order {order_id} already registered")
        for nt in notary_list:
            if nt.order_digest != digest:
                raise InvalidSignature("notary terms bind a different order")
            if not nt.verify_signature():
                raise InvalidSignature("notary countersignature does not verify")
        buyer = crypto.derive_address(order.buyer_pk)
        if self.balance(buyer) < order.min_audit_budget:
            raise InsufficientFunds("buyer cannot cover the minimum audit budget")

        self._genesis_open = False
        terms = {nt.notary_address: nt for nt in notary_list}
        if len(terms) != len(notary_list):
            raise LedgerError("duplicate notary in list")
        contract = OrderContract(
            order_digest=digest,
            buyer_address=buyer,
            min_audit_budget=order.min_audit_budget,
            price=price,
            notary_terms=terms,
            order=order,
        )
        self.accounts[buyer] = self.balance(buyer) - order.min_audit_budget
        contract.audit_escrow = order.min_audit_budget
        self.contracts[order_id] = contract
        self._append(EventKind.ORDER_CREATED, _encode_order_created(contract))
        return order_id

    def select_sellers(
        self,
        order_id: str,
        responses: Sequence[DataResponse],
        audit_topup: int = 0,
    ) -> None:
        contract = self.contract(order_id)
        if contract.status is not Status.OPEN:
            raise OrderClosed(f"order {order_id} is closed")
        if audit_topup < 0:
            raise LedgerError("audit top-up must be >= 0")
        if not responses and audit_topup == 0:
            raise LedgerError("empty selection with no top-up")
        if contract.order is None:
            raise LedgerError("contract has no full order; ledger is a replay snapshot")

        seen = set(contract.responses)
        notary_list = list(contract.notary_terms.values())
        for response in responses:
            digest = response.digest()
            if digest in seen:
                raise DuplicateResponse(f"response {digest.hex()} already selected")
            seen.add(digest)
            result = messages.validate_response(
                response, contract.order, notary_list, contract.price
            )
            if not result.ok:
                raise LedgerError(
                    f"invalid response {digest.hex()}: {', '.join(result.failures)}"
                )
        total = contract.price * len(responses) + audit_topup
        if self.balance(contract.buyer_address) < total:
            raise InsufficientFunds("buyer cannot cover selection payment and top-up")

        # All checks passed; the whole selection applies atomically.
        if audit_topup > 0:
            self.accounts[contract.buyer_address] -= audit_topup
            contract.audit_escrow += audit_topup
            self._append(
                EventKind.AUDIT_TOPUP, _encode_topup(contract.order_digest, audit_topup)
            )
        if responses:
            self.accounts[contract.buyer_address] -= contract.price * len(responses)
            contract.payment_escrow += contract.price * len(responses)
            for response in responses:
                contract.responses[response.digest()] = ResponseState(response)
            self._append(
                EventKind.SELLERS_SELECTED,
                _encode_selection(contract.order_digest, responses),
            )

    def close_response(
        self,
        order_id: str,
        response_digest: bytes,
        certificate: NotaryCertificate,
    ) -> Settlement:
        contract = self.contract(order_id)
        if contract.status is not Status.OPEN:
            raise OrderClosed(f"order {order_id} is closed")
        state = contract.responses.get(response_digest)
        if state is None:
            raise UnknownResponse(f"response {response_digest.hex()} is not selected")
        if state.phase is Phase.SETTLED:
            raise AlreadySettled(f"response {response_digest.hex()} is already settled")
        if certificate.order_ref != contract.order_digest:
            raise LedgerError("certificate binds a different order")
        if certificate.response_digest != response_digest:
            raise LedgerError("certificate binds a different response")
        if crypto.derive_address(certificate.notary_pk) != state.response.chosen_notary:
            raise InvalidSignature("certificate is not from the response's chosen notary")
        if not certificate.verify_signature():
            raise InvalidSignature("certificate signature does not verify")
        fee = contract.notary_terms[state.response.chosen_notary].fee
        if certificate.verdict is not Verdict.NOT_NOTARIZED and fee > contract.audit_escrow:
            raise AuditEscrowDepleted(
                f"notary fee {fee} exceeds audit escrow {contract.audit_escrow}"
            )
        settlement = self._apply_close(contract, state, certificate)
        self._append(
            EventKind.RESPONSE_CLOSED,
            _encode_close(contract.order_digest, certificate),
        )
        return settlement

    def close_order(self, order_id: str) -> None:
        contract = self.contract(order_id)
        if contract.status is not Status.OPEN:
            raise OrderClosed(f"order {order_id} is already closed")
        unsettled = [
            d.hex() for d, s in contract.responses.items() if s.phase is not Phase.SETTLED
        ]
        if unsettled:
            raise LedgerError(f"unsettled responses remain: {unsettled}")
        self._apply_order_close(contract)
        self._append(EventKind.ORDER_CLOSED, _encode_order_closed(contract.order_digest))

    # -- state application (shared with replay) --------------------------

    def _apply_mint(self, address: Address, amount: int) -> None:
        self.accounts[address] = self.balance(address) + amount
        self.total_supply += amount

    def _apply_close(
        self, contract: OrderContract, state: ResponseState, cert: NotaryCertificate
    ) -> Settlement:
        price = contract.price
        notary = state.response.chosen_notary
        fee = contract.notary_terms[notary].fee
        seller_amount = buyer_refund = notary_fee = 0
        if cert.verdict is Verdict.NOT_NOTARIZED:
            seller_amount = price
            outcome = Outcome.SELLER_PAID
        elif cert.verdict is Verdict.NOTARIZED_VALID:
            seller_amount = price
            notary_fee = fee
            outcome = Outcome.SELLER_PAID
        else:
            buyer_refund = price
            notary_fee = fee
            outcome = Outcome.BUYER_REFUNDED

        contract.payment_escrow -= price
        if seller_amount:
            addr = state.response.payment_address
            self.accounts[addr] = self.balance(addr) + seller_amount
        if buyer_refund:
            addr = contract.buyer_address
            self.accounts[addr] = self.balance(addr) + buyer_refund
        if notary_fee:
            contract.audit_escrow -= notary_fee
            self.accounts[notary] = self.balance(notary) + notary_fee
        state.phase = Phase.SETTLED
        state.outcome = outcome
        return Settlement(
            outcome=outcome,
            verdict=cert.verdict,
            seller_amount=seller_amount,
            buyer_refund=buyer_refund,
            notary_fee=notary_fee,
            notary=notary,
        )

    def _apply_order_close(self, contract: OrderContract) -> None:
        residual = contract.audit_escrow
        contract.audit_escrow = 0
        buyer = contract.buyer_address
        self.accounts[buyer] = self.balance(buyer) + residual
        contract.status = Status.CLOSED

    def _append(self, kind: EventKind, payload: bytes) -> None:
        self.journal.append(LedgerEvent(len(self.journal), kind, payload))
        if not self.conservation_holds():
            raise LedgerError("internal error: token conservation violated")

    # -- state digest ----------------------------------------------------

    def state_digest(self) -> bytes:
        out = bytearray(encode_uint(self.total_supply))
        for address in sorted(self.accounts):
            write_field(out, address.bytes + encode_uint(self.accounts[address]))
        for order_id in sorted(self.contracts):
            write_field(out, _contract_state_bytes(self.contracts[order_id]))
        return crypto.sha256(bytes(out))


def _contract_state_bytes(c: OrderContract) -> bytes:
    out = bytearray()
    write_field(out, c.order_digest)
    write_field(out, c.buyer_address.bytes)
    write_uint_field(out, c.min_audit_budget)
    write_uint_field(out, c.price)
    write_uint_field(out, c.audit_escrow)
    write_uint_field(out, c.payment_escrow)
    out.append(c.status)
    for addr in sorted(c.notary_terms):
        write_field(out, addr.bytes + encode_uint(c.notary_terms[addr].fee))
    for digest in sorted(c.responses):
        s = c.responses[digest]
        outcome = 0xFF if s.outcome is None else s.outcome
        write_field(
            out,
            digest
            + bytes([s.phase, outcome])
            + s.response.payment_address.bytes
            + s.response.chosen_notary.bytes,
        )
    return bytes(out)


# -- event payload encodings ---------------------------------------------


def _encode_mint(address: Address, amount: int) -> bytes:
    out = bytearray()
    write_field(out, address.bytes)
    write_uint_field(out, amount)
    return bytes(out)


def _encode_order_created(c: OrderContract) -> bytes:
    out = bytearray()
    write_field(out, c.order_digest)
    write_field(out, c.buyer_address.bytes)
    write_uint_field(out, c.min_audit_budget)
    write_uint_field(out, c.price)
    write_uint_field(out, len(c.notary_terms))
    for addr in sorted(c.notary_terms):
        write_field(out, c.notary_terms[addr].encode())
    return bytes(out)


def _encode_topup(order_digest: bytes, amount: int) -> bytes:
    out = bytearray()
    write_field(out, order_digest)
    write_uint_field(out, amount)
    return bytes(out)


def _encode_selection(order_digest: bytes, responses: Sequence[DataResponse]) -> bytes:
    out = bytearray()
    write_field(out, order_digest)
    write_uint_field(out, len(responses))
    for response in responses:
        write_field(out, response.encode())
    return bytes(out)


def _encode_close(order_digest: bytes, certificate: NotaryCertificate) -> bytes:
    out = bytearray()
    write_field(out, order_digest)
    write_field(out, certificate.encode())
    return bytes(out)


def _encode_order_closed(order_digest: bytes) -> bytes:
    out = bytearray()
    write_field(out, order_digest)
    return bytes(out)


# -- replay ---------------------------------------------------------------


def replay(events: Iterable[LedgerEvent]) -> Ledger:
    """Rebuild a ledger from its journal; aborts with the offending
    sequence number on any gap or inconsistent event."""
    ledger = Ledger()
    expected = 0
    for event in events:
        if event.sequence != expected:
            raise ReplayError(expected, f"sequence gap (found {event.sequence})")
        try:
            _replay_event(ledger, event)
        except ReplayError:
            raise
        except Exception as exc:
            raise ReplayError(event.sequence, str(exc)) from exc
        if not ledger.conservation_holds():
            raise ReplayError(event.sequence, "token conservation violated")
        expected += 1
    return ledger


def _replay_event(ledger: Ledger, event: LedgerEvent) -> None:
    r = Reader(event.payload)
    if event.kind is EventKind.MINT:
        address = Address(r.read_field())
        amount = r.read_uint_field()
        ledger._apply_mint(address, amount)
    elif event.kind is EventKind.ORDER_CREATED:
        digest = r.read_field()
        buyer = Address(r.read_field())
        m_a = r.read_uint_field()
        price = r.read_uint_field()
        count = r.read_uint_field()
        terms = {}
        for _ in range(count):
            nt = messages.decode(r.read_field())
            if not isinstance(nt, NotaryTerms):
                raise ReplayError(event.sequence, "order event holds a non-notary message")
            terms[nt.notary_address] = nt
        if ledger.balance(buyer) < m_a:
            raise ReplayError(event.sequence, "buyer balance below audit budget")
        contract = OrderContract(
            order_digest=digest,
            buyer_address=buyer,
            min_audit_budget=m_a,
            price=price,
            notary_terms=terms,
            audit_escrow=m_a,
        )
        ledger.accounts[buyer] = ledger.balance(buyer) - m_a
        ledger.contracts[digest.hex()] = contract
        ledger._genesis_open = False
    elif event.kind is EventKind.AUDIT_TOPUP:
        contract = ledger.contract(r.read_field().hex())
        amount = r.read_uint_field()
        if ledger.balance(contract.buyer_address) < amount:
            raise ReplayError(event.sequence, "buyer balance below top-up")
        ledger.accounts[contract.buyer_address] -= amount
        contract.audit_escrow += amount
    elif event.kind is EventKind.SELLERS_SELECTED:
        contract = ledger.contract(r.read_field().hex())
        count = r.read_uint_field()
        responses = []
        for _ in range(count):
            msg = messages.decode(r.read_field())
            if not isinstance(msg, DataResponse):
                raise ReplayError(event.sequence, "selection event holds a non-response")
            responses.append(msg)
        total = contract.price * count
        if ledger.balance(contract.buyer_address) < total:
            raise ReplayError(event.sequence, "buyer balance below selection payment")
        for response in responses:
            digest = response.digest()
            if digest in contract.responses:
                raise ReplayError(event.sequence, "duplicate response in selection")
            contract.responses[digest] = ResponseState(response)
        ledger.accounts[contract.buyer_address] -= total
        contract.payment_escrow += total
    elif event.kind is EventKind.RESPONSE_CLOSED:
        contract = ledger.contract(r.read_field().hex())
        cert = messages.decode(r.read_field())
        if not isinstance(cert, NotaryCertificate):
            raise ReplayError(event.sequence, "close event holds a non-certificate")
        state = contract.responses.get(cert.response_digest)
        if state is None or state.phase is Phase.SETTLED:
            raise ReplayError(event.sequence, "close of unknown or settled response")
        if crypto.derive_address(cert.notary_pk) != state.response.chosen_notary:
            raise ReplayError(event.sequence, "certificate notary mismatch")
        ledger._apply_close(contract, state, cert)
    elif event.kind is EventKind.ORDER_CLOSED:
        contract = ledger.contract(r.read_field().hex())
        if contract.status is not Status.OPEN:
            raise ReplayError(event.sequence, "order already closed")
        if any(s.phase is not Phase.SETTLED for s in contract.responses.values()):
            raise ReplayError(event.sequence, "order closed with unsettled responses")
        ledger._apply_order_close(contract)
    else:  # pragma: no cover - EventKind is exhaustive
        raise ReplayError(event.sequence, f"unknown event kind {event.kind}")
    r.expect_end()


# -- journal file I/O -----------------------------------------------------


def events_hash(events: Sequence[LedgerEvent]) -> bytes:
    h = bytearray()
    for event in events:
        write_field(h, event.encode())
    return crypto.sha256(bytes(h))


def journal_bytes(ledger: Ledger) -> bytes:
    """Serialize the journal with a trailer frame holding the state digest
    and a hash over the event bytes; together they make any single-byte
    tamper detectable (state-neutral bytes such as signatures included)."""
    out = bytearray()
    for event in ledger.journal:
        write_field(out, event.encode())
    write_field(
        out, bytes([TRAILER_KIND]) + ledger.state_digest() + events_hash(ledger.journal)
    )
    return bytes(out)


def write_journal(path, ledger: Ledger) -> None:
    with open(path, "wb") as fh:
        fh.write(journal_bytes(ledger))


def parse_journal(data: bytes):
    """Split journal bytes into (events, trailer_digest)."""
    r = Reader(data)
    events: List[LedgerEvent] = []
    trailer = None
    while r.remaining():
        frame = r.read_field()
        if frame[:1] == bytes([TRAILER_KIND]):
            trailer = frame[1:]
            if r.remaining():
                raise ReplayError(len(events), "frames after the digest trailer")
            break
        events.append(LedgerEvent.decode(frame))
    return events, trailer


def verify_journal(data: bytes) -> Ledger:
    """Replay journal bytes and check the trailer digest; raises ReplayError."""
    try:
        events, trailer = parse_journal(data)
    except ReplayError:
        raise
    except Exception as exc:
        raise ReplayError(0, f"journal framing error: {exc}") from exc
    ledger = replay(events)
    if trailer is None:
        raise ReplayError(len(events), "journal has no digest trailer (truncated)")
    if len(trailer) != 64:
        raise ReplayError(len(events), "malformed digest trailer")
    if ledger.state_digest() != trailer[:32]:
        raise ReplayError(len(events), "state digest mismatch")
    if events_hash(events) != trailer[32:]:
        raise ReplayError(len(events), "event bytes do not match the journal hash")
    return ledger
