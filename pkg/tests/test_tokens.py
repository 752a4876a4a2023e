"""Single-use token store: expiry boundary, reuse detection, atomicity."""
import threading

import pytest

from mediflow.tokens import (
    TokenExpired,
    TokenInvalid,
    TokenReused,
    TokenStore,
    UnknownPrincipalError,
)


class ManualClock:
    def __init__(self, t=1000.0):
        self.t = t

    def __call__(self):
        return self.t


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def store(clock):
    return TokenStore(ttl_s=300.0, clock=clock)


def test_issue_then_consume_returns_principal(store):
    token = store.issue("dev1")
    assert len(token.value) == 64  # 256 bits of hex
    assert store.consume(token.value) == "dev1"


def test_tokens_are_unique_and_unpredictable_length(store):
    values = {store.issue("dev1").value for _ in range(200)}
    assert len(values) == 200


def test_second_consume_reports_reuse(store):
    token = store.issue("dev1")
    store.consume(token.value)
    with pytest.raises(TokenReused):
        store.consume(token.value)


def test_unknown_value_is_invalid(store):
    with pytest.raises(TokenInvalid):
        store.consume("f" * 64)


def test_consume_one_millisecond_before_expiry_succeeds(store, clock):
    token = store.issue("dev1")
    clock.t += 299.999
    assert store.consume(token.value) == "dev1"


def test_consume_exactly_at_expiry_fails(store, clock):
    token = store.issue("dev1")
    clock.t += 300.0  # validity window is half-open: [issued_at, issued_at + ttl)
    with pytest.raises(TokenExpired):
        store.consume(token.value)


def test_expired_precedes_nothing_but_reuse(store, clock):
    token = store.issue("dev1")
    store.consume(token.value)
    clock.t += 1000.0
    # a consumed token stays a reuse report even after its expiry passes
    with pytest.raises(TokenReused):
        store.consume(token.value)


def test_validity_window_exact(store, clock):
    token = store.issue("dev1")
    assert token.issued_at == 1000.0
    assert token.expires_at == 1300.0


def test_purge_removes_only_expired(store, clock):
    old = store.issue("dev1")
    clock.t += 299.0
    fresh = store.issue("dev1")
    clock.t += 2.0  # old now expired, fresh still valid
    removed = store.purge_expired()
    assert removed == 1
    with pytest.raises(TokenInvalid):  # purged tokens are unknown, not expired
        store.consume(old.value)
    assert store.consume(fresh.value) == "dev1"


def test_purge_by_explicit_cutoff(store, clock):
    token = store.issue("dev1")
    assert store.purge_expired(now=clock.t) == 0
    assert store.purge_expired(now=clock.t + 10_000.0) == 1
    assert len(store) == 0


def test_unknown_principal_rejected():
    store = TokenStore(ttl_s=300.0, clock=ManualClock(),
                       principal_exists=lambda name: name == "known")
    store.issue("known")
    with pytest.raises(UnknownPrincipalError):
        store.issue("stranger")


def test_concurrent_consume_exactly_one_winner(store):
    token = store.issue("dev1")
    threads = 32
    barrier = threading.Barrier(threads)
    outcomes = []
    lock = threading.Lock()

    def attempt():
        barrier.wait()
        try:
            store.consume(token.value)
            result = "ok"
        except TokenReused:
            result = "reused"
        except TokenInvalid:
            result = "invalid"
        with lock:
            outcomes.append(result)

    workers = [threading.Thread(target=attempt) for _ in range(threads)]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    assert outcomes.count("ok") == 1
    assert outcomes.count("reused") == threads - 1


def test_dump_restore_round_trip(store, clock):
    a = store.issue("dev1")
    b = store.issue("dev2")
    store.consume(a.value)
    rows = store.dump()
    other = TokenStore(ttl_s=300.0, clock=clock)
    other.restore(rows)
    with pytest.raises(TokenReused):
        other.consume(a.value)
    assert other.consume(b.value) == "dev2"
