"""One-time-use, time-expiring bearer tokens.

The store is the single authority: a token is an opaque 256-bit random
value looked up server-side, not a signed claim. Consumption is an atomic
check-and-set, so under any number of concurrent presentations of the same
value at most one caller ever wins. Time comes from an injectable clock so
expiry is deterministic under test.
"""
from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass
from typing import Callable

DEFAULT_TTL_S = 300.0


class TokenError(Exception):
    """Base for token authentication failures; .code drives the HTTP error body."""

    code = "token_invalid"


class TokenInvalid(TokenError):
    code = "token_invalid"


class TokenExpired(TokenError):
    code = "token_expired"


class TokenReused(TokenError):
    code = "token_reused"


class UnknownPrincipalError(ValueError):
    """issue() called for a principal the owner says does not exist."""


@dataclass
class AuthToken:
    value: str
    principal: str
    issued_at: float
    expires_at: float
    consumed: bool = False


class TokenStore:
    """Issues and atomically consumes one-time tokens.

    principal_exists, when given, vetoes issuance for unknown principals;
    the API server wires it to its user table.
    """

    def __init__(
        self,
        ttl_s: float = DEFAULT_TTL_S,
        clock: Callable[[], float] | None = None,
        principal_exists: Callable[[str], bool] | None = None,
    ) -> None:
        if ttl_s <= 0:
            raise ValueError("ttl_s must be > 0")
        self.ttl_s = float(ttl_s)
        self._clock = clock or time.time
        self._principal_exists = principal_exists
        self._tokens: dict[str, AuthToken] = {}
        self._lock = threading.Lock()

    def issue(self, principal: str, now: float | None = None) -> AuthToken:
        """Create, store, and return a fresh unconsumed token for principal."""
        if self._principal_exists is not None and not self._principal_exists(principal):
            raise UnknownPrincipalError(f"unknown principal: {principal!r}")
        if now is None:
            now = self._clock()
        token = AuthToken(
            value=secrets.token_hex(32),
            principal=principal,
            issued_at=now,
            expires_at=now + self.ttl_s,
        )
        with self._lock:
            self._tokens[token.value] = token
        return token

    def consume(self, value: str, now: float | None = None) -> str:
        """Atomically spend a token and return its principal.

        Validity is the half-open window [issued_at, expires_at): presenting
        the token at exactly expires_at already fails. Raises TokenInvalid,
        TokenExpired, or TokenReused; the three cases stay distinguishable.
        """
        if now is None:
            now = self._clock()
        with self._lock:
            token = self._tokens.get(value)
            if token is None:
                raise TokenInvalid("unknown token")
            if token.consumed:
                raise TokenReused("token already used")
            if now >= token.expires_at:
                raise TokenExpired("token expired")
            token.consumed = True
            return token.principal

    def purge_expired(self, now: float | None = None) -> int:
        """Drop every token with expires_at <= now; returns how many went."""
        if now is None:
            now = self._clock()
        with self._lock:
            dead = [v for v, t in self._tokens.items() if t.expires_at <= now]
            for v in dead:
                del self._tokens[v]
        return len(dead)

    def __len__(self) -> int:
        with self._lock:
            return len(self._tokens)

    # Persistence hooks: by default tokens live in memory only, so a server
    # restart invalidates all sessions. A deployment that wants sessions to
    # survive restarts dumps on shutdown and restores on boot.

    def dump(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "value": t.value,
                    "principal": t.principal,
                    "issued_at": t.issued_at,
                    "expires_at": t.expires_at,
                    "consumed": t.consumed,
                }
                for t in self._tokens.values()
            ]

    def restore(self, rows: list[dict]) -> None:
        with self._lock:
            for row in rows:
                token = AuthToken(
                    value=row["value"],
                    principal=row["principal"],
                    issued_at=float(row["issued_at"]),
                    expires_at=float(row["expires_at"]),
                    consumed=bool(row["consumed"]),
                )
                self._tokens[token.value] = token
