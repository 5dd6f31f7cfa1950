import random
from dataclasses import fields as dataclass_fields

import pytest

from datamarket import crypto, messages
from datamarket.actors import keys_from_seed
from datamarket.errors import MessageError
from datamarket.messages import (
    Audience,
    Comparator,
    DataRequest,
    DataResponse,
    Predicate,
    Verdict,
)

from market_helpers import TERMS, make_market, make_order, make_response


def random_predicate(rng, i):
    op = rng.choice(list(Comparator))
    if op is Comparator.IN:
        value = frozenset(rng.sample(["AR", "BR", "UY", "CL"], rng.randint(1, 3)))
    elif op in (Comparator.GE, Comparator.LE):
        value = rng.randint(0, 120)
    else:
        value = rng.choice(["AR", "BR", "premium"])
    return Predicate(f"attr{i}", op, value)


def random_order(rng):
    preds = frozenset(random_predicate(rng, i) for i in range(rng.randint(0, 3)))
    keys = keys_from_seed(rng.randint(1, 2**31))
    return messages.build_data_order(
        keys,
        Audience(preds),
        DataRequest(f"schema{rng.randint(0, 5)}", tuple(f"f{i}" for i in range(rng.randint(0, 3)))),
        f"ub:buyer{rng.randint(0, 9)}",
        rng.randint(0, 1000),
        TERMS,
    )


def test_encode_deterministic():
    order = random_order(random.Random(1))
    assert order.encode() == order.encode()


def test_roundtrip_100_random_messages():
    rng = random.Random(42)
    for _ in range(100):
        order = random_order(rng)
        assert messages.decode(order.encode()) == order


def test_roundtrip_all_message_types():
    market = make_market()
    response, salt, _ = make_response(market)
    cert = messages.issue_certificate(
        market.notary_keys, market.order.digest(), response, Verdict.NOTARIZED_VALID
    )
    delivery = messages.PayloadDelivery(response.digest(), b"\x01" * 60)
    request = messages.NotarizationRequest(market.order.digest(), response.encode(), True, b"")
    for msg in (
        market.order.audience,
        market.order.request,
        market.order,
        market.terms[0],
        response,
        cert,
        delivery,
        request,
    ):
        assert messages.decode(messages.canonical_encode(msg)) == msg


def test_budget_injectivity():
    keys = keys_from_seed(5)
    a = Audience(frozenset())
    r = DataRequest("s")
    o1 = messages.build_data_order(keys, a, r, "ub:b", 10, TERMS)
    o2 = messages.build_data_order(keys, a, r, "ub:b", 11, TERMS)
    assert o1.signing_bytes() != o2.signing_bytes()


def test_signature_survives_roundtrip():
    market = make_market()
    response, _, _ = make_response(market)
    decoded = messages.decode(response.encode())
    assert decoded.verify_signature()
    decoded_order = messages.decode(market.order.encode())
    assert decoded_order.verify_signature()


def test_build_order_signature_verifies():
    assert make_order(keys_from_seed(3)).verify_signature()


def test_build_order_zero_budget_ok():
    assert make_order(keys_from_seed(3), m_a=0).min_audit_budget == 0


def test_build_order_negative_budget():
    with pytest.raises(MessageError):
        make_order(keys_from_seed(3), m_a=-1)


def test_countersign_valid_order():
    market = make_market()
    assert market.terms[0].verify_signature()
    assert market.terms[0].order_digest == market.order.digest()


def test_countersign_refuses_bad_order():
    keys = keys_from_seed(3)
    order = make_order(keys)
    forged = messages.DataOrder(
        **{
            **messages._asdict_shallow(order),
            "buyer_signature": b"\x00" * 64,
        }
    )
    with pytest.raises(MessageError):
        messages.countersign_order(keys_from_seed(4), forged, 2, TERMS)


def test_countersign_zero_fee_ok():
    order = make_order(keys_from_seed(3))
    terms = messages.countersign_order(keys_from_seed(4), order, 0, TERMS)
    assert terms.fee == 0 and terms.verify_signature()


def test_build_response_valid():
    market = make_market()
    response, salt, _ = make_response(market)
    assert response.verify_signature()
    assert crypto.verify_commitment(salt, b"seller-data-0123", response.commitment)


def test_build_response_unknown_notary():
    market = make_market()
    stranger = crypto.derive_address(keys_from_seed(99).public_key)
    with pytest.raises(MessageError):
        messages.build_data_response(
            keys_from_seed(10),
            market.order,
            market.price,
            b"data",
            stranger,
            market.terms,
            posted_price=market.price,
        )


def test_build_response_price_mismatch():
    market = make_market()
    with pytest.raises(MessageError):
        messages.build_data_response(
            keys_from_seed(10),
            market.order,
            market.price + 1,
            b"data",
            market.notary,
            market.terms,
            posted_price=market.price,
        )


def test_response_has_no_plaintext_field():
    # Structural field census: the offer cannot carry the data or the salt.
    names = {f.name for f in dataclass_fields(DataResponse)}
    assert names == {
        "seller_pk",
        "payment_address",
        "order_ref",
        "price",
        "commitment",
        "chosen_notary",
        "terms",
        "seller_signature",
    }


def test_validate_response_accepts_honest():
    market = make_market()
    response, _, _ = make_response(market)
    assert messages.validate_response(response, market.order, market.terms, market.price).ok


def test_validate_response_rejects_forged_signature():
    market = make_market()
    response, _, _ = make_response(market)
    forged = DataResponse(
        **{**messages._asdict_shallow(response), "seller_signature": b"\x11" * 64}
    )
    result = messages.validate_response(forged, market.order, market.terms, market.price)
    assert not result.ok and "signature" in result.failures


def test_validate_response_rejects_stale_order():
    market = make_market()
    response, _, _ = make_response(market)
    other_order = make_order(keys_from_seed(77))
    result = messages.validate_response(response, other_order, market.terms, market.price)
    assert "order-mismatch" in result.failures


def test_validate_response_rejects_price():
    market = make_market()
    response, _, _ = make_response(market)
    result = messages.validate_response(response, market.order, market.terms, market.price + 1)
    assert "price" in result.failures


def test_certificate_binds_single_response():
    market = make_market()
    r1, _, _ = make_response(market, seller_seed=10)
    r2, _, _ = make_response(market, seller_seed=11)
    cert = messages.issue_certificate(
        market.notary_keys, market.order.digest(), r1, Verdict.NOTARIZED_VALID
    )
    assert cert.verify_signature()
    assert cert.response_digest == r1.digest()
    assert cert.response_digest != r2.digest()


def test_audience_matching():
    audience = Audience(
        frozenset(
            {
                Predicate("country", Comparator.EQ, "AR"),
                Predicate("age", Comparator.GE, 18),
            }
        )
    )
    assert audience.matches({"country": "AR", "age": 30})
    assert not audience.matches({"country": "BR", "age": 30})
    assert not audience.matches({"country": "AR", "age": 17})
    assert not audience.matches({"age": 30})


def test_empty_audience_matches_everyone():
    assert Audience(frozenset()).matches({})
    assert Audience(frozenset()).matches({"anything": 1})


def test_in_and_le_comparators():
    audience = Audience(
        frozenset(
            {
                Predicate("country", Comparator.IN, frozenset({"AR", "UY"})),
                Predicate("age", Comparator.LE, 65),
                Predicate("plan", Comparator.NE, "banned"),
            }
        )
    )
    assert audience.matches({"country": "UY", "age": 64, "plan": "basic"})
    assert not audience.matches({"country": "CL", "age": 64, "plan": "basic"})
    assert not audience.matches({"country": "AR", "age": 66, "plan": "basic"})
    assert not audience.matches({"country": "AR", "age": 60, "plan": "banned"})


def test_payload_plaintext_roundtrip():
    salt, data = b"\x01" * 32, b"the data"
    plain = messages.encode_payload_plaintext(salt, data)
    assert messages.parse_payload_plaintext(plain) == (salt, data)
