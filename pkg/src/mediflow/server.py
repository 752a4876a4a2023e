"""Network layer: login API, index API, physician endpoints, history persistence.

Split in two: Application holds all state and implements every endpoint as
plain request -> Response logic, so tests and the in-process device
transport can call it without sockets; ApiHTTPServer is a thin threaded
HTTP/1.1 front end over it. One re-entrant lock serializes state mutation;
token consumption atomicity lives in the token store itself.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import logging
import math
import mimetypes
import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Mapping

from .domain import (
    InfusionOutcome,
    InfusionRecord,
    PatientProfile,
    Prescription,
    PrescriptionStatus,
    Role,
    UserAccount,
    canonical_mac,
    check_limits,
    quantize_ml,
)
from .store import EventStore
from .tokens import TokenError, TokenStore

logger = logging.getLogger(__name__)

PBKDF2_ITERATIONS = 20_000
DEFAULT_POLL_INTERVAL_S = 60.0


def hash_password(password: str, iterations: int = PBKDF2_ITERATIONS,
                  salt: bytes | None = None) -> str:
    """Salted PBKDF2-HMAC-SHA256, self-describing so the cost can evolve."""
    if salt is None:
        salt = secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations)
    return f"pbkdf2:{iterations}:{salt.hex()}:{digest.hex()}"


def verify_password(record: str, password: str) -> bool:
    try:
        scheme, iterations, salt_hex, digest_hex = record.split(":")
        if scheme != "pbkdf2":
            return False
        candidate = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"),
                                        bytes.fromhex(salt_hex), int(iterations))
    except (ValueError, TypeError):
        return False
    return hmac.compare_digest(candidate.hex(), digest_hex)


@dataclass
class Proposal:
    proposal_id: str
    patient_id: str
    volume_ml: float
    rate_ml_h: float
    state: str = "pending"  # pending | approved | rejected
    decided_by: str | None = None
    reason: str | None = None
    created_at: float = 0.0

    def view(self) -> dict:
        out = {
            "proposal_id": self.proposal_id,
            "patient_id": self.patient_id,
            "volume_ml": self.volume_ml,
            "rate_ml_h": self.rate_ml_h,
            "state": self.state,
        }
        if self.decided_by is not None:
            out["decided_by"] = self.decided_by
        if self.reason is not None:
            out["reason"] = self.reason
        return out


@dataclass
class Response:
    status: int
    payload: dict | None = None
    body: bytes | None = None
    content_type: str = "application/json"

    def encoded(self) -> bytes:
        if self.body is not None:
            return self.body
        return json.dumps(self.payload).encode("utf-8")


class ApiError(Exception):
    def __init__(self, status: int, code: str) -> None:
        super().__init__(code)
        self.status = status
        self.code = code


def prescription_view(p: Prescription) -> dict:
    return {
        "prescription_id": p.prescription_id,
        "version": p.version,
        "volume_ml": p.volume_ml,
        "rate_ml_h": p.rate_ml_h,
    }


class Application:
    """All server state and endpoint logic, transport-agnostic."""

    def __init__(
        self,
        store: EventStore | None = None,
        clock: Callable[[], float] | None = None,
        ttl_s: float = 300.0,
        poll_interval_s: float = DEFAULT_POLL_INTERVAL_S,
        static_dir: str | Path | None = None,
        pbkdf2_iterations: int = PBKDF2_ITERATIONS,
    ) -> None:
        self.clock = clock or time.time
        self.store = store
        self.poll_interval_s = poll_interval_s
        self.pbkdf2_iterations = pbkdf2_iterations
        self.static_dir = Path(static_dir) if static_dir else None
        self.tokens = TokenStore(ttl_s=ttl_s, clock=self.clock,
                                 principal_exists=lambda u: u in self._accounts)
        self._lock = threading.RLock()
        self._accounts: dict[str, UserAccount] = {}
        self._devices: dict[str, str] = {}  # mac -> username
        self._profiles: dict[str, PatientProfile] = {}
        self._prescriptions: dict[str, list[Prescription]] = {}
        self._proposals: dict[str, Proposal] = {}
        self._proposal_order: dict[str, list[str]] = {}
        self._records: dict[str, list[dict]] = {}
        self._progress: dict[str, dict] = {}  # live, never persisted
        self._routes = self._build_routes()
        if self.store is not None:
            self._load_from_store()

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def _emit(self, family: str, event: dict) -> None:
        if self.store is not None:
            self.store.append(family, event)

    def _load_from_store(self) -> None:
        state, tails = self.store.load()
        if state is not None:
            self._apply_state(state)
        for family in self.store.families:
            for event in tails.get(family, []):
                self._apply_event(family, event)

    def _apply_event(self, family: str, event: dict) -> None:
        kind = event.get("event")
        if family == "users" and kind == "user_created":
            account = UserAccount(
                username=event["username"],
                password_record=event["password_record"],
                role=Role(event["role"]),
                first_name=event["first_name"],
                last_name=event["last_name"],
                institute=event["institute"],
                patient_id=event.get("patient_id"),
            )
            self._accounts[account.username] = account
        elif family == "devices" and kind == "device_registered":
            self._devices[event["mac"]] = event["owner_username"]
        elif family == "profiles" and kind == "limits_set":
            profile = PatientProfile(
                patient_id=event["patient_id"],
                max_volume_ml=event["max_volume_ml"],
                max_rate_ml_h=event["max_rate_ml_h"],
                physician_username=event["physician_username"],
            )
            self._profiles[profile.patient_id] = profile
        elif family == "prescriptions" and kind == "prescription_activated":
            self._activate_prescription_in_memory(Prescription(
                prescription_id=event["prescription_id"],
                patient_id=event["patient_id"],
                version=event["version"],
                volume_ml=event["volume_ml"],
                rate_ml_h=event["rate_ml_h"],
            ))
        elif family == "proposals" and kind == "proposal_created":
            proposal = Proposal(
                proposal_id=event["proposal_id"],
                patient_id=event["patient_id"],
                volume_ml=event["volume_ml"],
                rate_ml_h=event["rate_ml_h"],
                state=event["state"],
                reason=event.get("reason"),
                created_at=event.get("created_at", 0.0),
            )
            self._proposals[proposal.proposal_id] = proposal
            self._proposal_order.setdefault(proposal.patient_id, []).append(proposal.proposal_id)
        elif family == "proposals" and kind == "proposal_decided":
            proposal = self._proposals.get(event["proposal_id"])
            if proposal is not None:
                proposal.state = event["state"]
                proposal.decided_by = event.get("decided_by")
                proposal.reason = event.get("reason")
        elif family == "records" and kind == "record_appended":
            row = {k: v for k, v in event.items() if k != "event"}
            self._records.setdefault(row["patient_id"], []).append(row)

    def state_dict(self) -> dict:
        """Full reduced state for the clean-shutdown snapshot."""
        with self._lock:
            return {
                "users": [
                    {
                        "username": a.username,
                        "password_record": a.password_record,
                        "role": a.role.value,
                        "first_name": a.first_name,
                        "last_name": a.last_name,
                        "institute": a.institute,
                        "patient_id": a.patient_id,
                    }
                    for a in self._accounts.values()
                ],
                "devices": [{"mac": m, "owner_username": u} for m, u in self._devices.items()],
                "profiles": [
                    {
                        "patient_id": p.patient_id,
                        "max_volume_ml": p.max_volume_ml,
                        "max_rate_ml_h": p.max_rate_ml_h,
                        "physician_username": p.physician_username,
                    }
                    for p in self._profiles.values()
                ],
                "prescriptions": {
                    patient: [
                        {
                            "prescription_id": rx.prescription_id,
                            "version": rx.version,
                            "volume_ml": rx.volume_ml,
                            "rate_ml_h": rx.rate_ml_h,
                            "status": rx.status.value,
                        }
                        for rx in versions
                    ]
                    for patient, versions in self._prescriptions.items()
                },
                "proposals": [
                    {**p.view(), "created_at": p.created_at}
                    for p in (self._proposals[pid]
                              for order in self._proposal_order.values() for pid in order)
                ],
                "records": self._records,
            }

    def _apply_state(self, state: dict) -> None:
        for row in state.get("users", []):
            self._apply_event("users", {"event": "user_created", **row})
        for row in state.get("devices", []):
            self._apply_event("devices", {"event": "device_registered", **row})
        for row in state.get("profiles", []):
            self._apply_event("profiles", {"event": "limits_set", **row})
        for patient, versions in state.get("prescriptions", {}).items():
            rxs = [Prescription(
                prescription_id=v["prescription_id"],
                patient_id=patient,
                version=v["version"],
                volume_ml=v["volume_ml"],
                rate_ml_h=v["rate_ml_h"],
                status=PrescriptionStatus(v["status"]),
            ) for v in versions]
            self._prescriptions[patient] = rxs
        for row in state.get("proposals", []):
            created_at = row.get("created_at", 0.0)
            self._apply_event("proposals", {
                "event": "proposal_created",
                "proposal_id": row["proposal_id"],
                "patient_id": row["patient_id"],
                "volume_ml": row["volume_ml"],
                "rate_ml_h": row["rate_ml_h"],
                "state": row["state"],
                "reason": row.get("reason"),
                "created_at": created_at,
            })
            if row["state"] != "pending":
                self._apply_event("proposals", {
                    "event": "proposal_decided",
                    "proposal_id": row["proposal_id"],
                    "state": row["state"],
                    "decided_by": row.get("decided_by"),
                    "reason": row.get("reason"),
                })
        for patient, rows in state.get("records", {}).items():
            self._records[patient] = list(rows)

    def close(self) -> None:
        """Clean shutdown: snapshot full state so restart skips log replay."""
        if self.store is not None:
            self.store.write_snapshot(self.state_dict())
            self.store.close()

    # ------------------------------------------------------------------
    # administration (seed-data, tests)
    # ------------------------------------------------------------------

    def create_user(
        self,
        username: str,
        password: str,
        role: Role,
        first_name: str,
        last_name: str,
        institute: str,
        patient_id: str | None = None,
    ) -> UserAccount:
        with self._lock:
            if username in self._accounts:
                raise ValueError(f"username already exists: {username!r}")
            account = UserAccount(
                username=username,
                password_record=hash_password(password, self.pbkdf2_iterations),
                role=role,
                first_name=first_name,
                last_name=last_name,
                institute=institute,
                patient_id=patient_id,
            )
            self._accounts[username] = account
            self._emit("users", {
                "event": "user_created",
                "username": username,
                "password_record": account.password_record,
                "role": role.value,
                "first_name": first_name,
                "last_name": last_name,
                "institute": institute,
                "patient_id": patient_id,
            })
            return account

    def register_device(self, mac: str, owner_username: str) -> None:
        mac = canonical_mac(mac)
        with self._lock:
            if owner_username not in self._accounts:
                raise ValueError(f"unknown account: {owner_username!r}")
            existing = self._devices.get(mac)
            if existing is not None and existing != owner_username:
                raise ValueError(f"mac already registered: {mac}")
            self._devices[mac] = owner_username
            self._emit("devices", {"event": "device_registered",
                                   "mac": mac, "owner_username": owner_username})

    def set_profile(self, patient_id: str, max_volume_ml: float, max_rate_ml_h: float,
                    physician_username: str) -> PatientProfile:
        with self._lock:
            profile = PatientProfile(
                patient_id=patient_id,
                max_volume_ml=quantize_ml(max_volume_ml),
                max_rate_ml_h=quantize_ml(max_rate_ml_h),
                physician_username=physician_username,
            )
            self._profiles[patient_id] = profile
            self._emit("profiles", {
                "event": "limits_set",
                "patient_id": patient_id,
                "max_volume_ml": profile.max_volume_ml,
                "max_rate_ml_h": profile.max_rate_ml_h,
                "physician_username": physician_username,
            })
            return profile

    def _activate_prescription_in_memory(self, rx: Prescription) -> None:
        versions = self._prescriptions.setdefault(rx.patient_id, [])
        for i, old in enumerate(versions):
            if old.status is PrescriptionStatus.ACTIVE:
                versions[i] = Prescription(
                    prescription_id=old.prescription_id,
                    patient_id=old.patient_id,
                    version=old.version,
                    volume_ml=old.volume_ml,
                    rate_ml_h=old.rate_ml_h,
                    status=PrescriptionStatus.SUPERSEDED,
                )
        versions.append(rx)

    def activate_prescription(self, patient_id: str, volume_ml: float, rate_ml_h: float) -> Prescription:
        """Create the next prescription version, superseding the current one."""
        with self._lock:
            profile = self._profiles.get(patient_id)
            if profile is None:
                raise ValueError(f"no profile for patient: {patient_id!r}")
            volume_ml = quantize_ml(volume_ml)
            rate_ml_h = quantize_ml(rate_ml_h)
            verdict = check_limits(volume_ml, rate_ml_h, profile)
            if not verdict.ok:
                raise ValueError(f"limits exceeded: {', '.join(verdict.violations)}")
            current = self.active_prescription(patient_id)
            version = 1 if current is None else current.version + 1
            rx = Prescription(
                prescription_id=f"rx-{patient_id}-v{version}",
                patient_id=patient_id,
                version=version,
                volume_ml=volume_ml,
                rate_ml_h=rate_ml_h,
            )
            self._activate_prescription_in_memory(rx)
            self._emit("prescriptions", {
                "event": "prescription_activated",
                "prescription_id": rx.prescription_id,
                "patient_id": patient_id,
                "version": version,
                "volume_ml": volume_ml,
                "rate_ml_h": rate_ml_h,
            })
            return rx

    def active_prescription(self, patient_id: str) -> Prescription | None:
        with self._lock:
            for rx in reversed(self._prescriptions.get(patient_id, [])):
                if rx.status is PrescriptionStatus.ACTIVE:
                    return rx
            return None

    def profile(self, patient_id: str) -> PatientProfile | None:
        with self._lock:
            return self._profiles.get(patient_id)

    def records_for(self, patient_id: str) -> list[dict]:
        with self._lock:
            return list(self._records.get(patient_id, []))

    def pending_proposals(self, patient_id: str) -> list[Proposal]:
        with self._lock:
            return [self._proposals[pid] for pid in self._proposal_order.get(patient_id, [])
                    if self._proposals[pid].state == "pending"]

    # ------------------------------------------------------------------
    # request dispatch
    # ------------------------------------------------------------------

    def _build_routes(self):
        return [
            ("POST", re.compile(r"^/api/login$"), self._ep_login),
            ("POST", re.compile(r"^/api/index$"), self._ep_index),
            ("POST", re.compile(r"^/api/infusions$"), self._ep_infusions),
            ("GET", re.compile(r"^/api/patients/([^/]+)/history$"), self._ep_history),
            ("GET", re.compile(r"^/api/patients/([^/]+)/status$"), self._ep_status),
            ("POST", re.compile(r"^/api/patients/([^/]+)/limits$"), self._ep_limits),
            ("POST", re.compile(r"^/api/proposals$"), self._ep_propose),
            ("POST", re.compile(r"^/api/proposals/([^/]+)/decision$"), self._ep_decide),
            ("GET", re.compile(r"^/api/health$"), self._ep_health),
        ]

    def handle(self, method: str, path: str, headers: Mapping[str, str],
               body: bytes | None) -> Response:
        headers = {k.lower(): v for k, v in headers.items()}
        if path == "/app" or path.startswith("/app/"):
            if method != "GET":
                return Response(405, {"error": "method_not_allowed"})
            return self._serve_static(path)
        for verb, pattern, endpoint in self._routes:
            match = pattern.match(path)
            if match is None:
                continue
            if verb != method:
                return Response(405, {"error": "method_not_allowed"})
            data: dict = {}
            if method == "POST" and body:
                try:
                    data = json.loads(body.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    return Response(400, {"error": "invalid_request"})
                if not isinstance(data, dict):
                    return Response(400, {"error": "invalid_request"})
            try:
                return endpoint(headers, data, *match.groups())
            except ApiError as err:
                return Response(err.status, {"error": err.code})
        return Response(404, {"error": "not_found"})

    # ------------------------------------------------------------------
    # auth helpers
    # ------------------------------------------------------------------

    def _consume_bearer(self, headers: Mapping[str, str]) -> UserAccount:
        auth = headers.get("authorization", "")
        if not auth.startswith("Bearer "):
            raise ApiError(401, "token_invalid")
        try:
            principal = self.tokens.consume(auth[len("Bearer "):].strip())
        except TokenError as err:
            raise ApiError(401, err.code) from err
        account = self._accounts.get(principal)
        if account is None:
            raise ApiError(401, "token_invalid")
        return account

    def _next_token(self, account: UserAccount) -> str:
        return self.tokens.issue(account.username).value

    def _require_physician_of(self, account: UserAccount, patient_id: str) -> PatientProfile:
        profile = self._profiles.get(patient_id)
        if profile is None:
            raise ApiError(404, "unknown_patient")
        if account.role is not Role.PHYSICIAN:
            raise ApiError(403, "forbidden")
        if profile.physician_username != account.username:
            raise ApiError(403, "forbidden")
        return profile

    @staticmethod
    def _positive_number(data: dict, key: str) -> float:
        value = data.get(key)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ApiError(400, "invalid_values")
        value = float(value)
        if not math.isfinite(value) or value <= 0:
            raise ApiError(400, "invalid_values")
        quantized = quantize_ml(value)
        # below half the storage quantum rounds to zero, which downstream
        # invariants (profiles, prescriptions) rightly refuse
        if quantized <= 0:
            raise ApiError(400, "invalid_values")
        return quantized

    # ------------------------------------------------------------------
    # endpoints
    # ------------------------------------------------------------------

    def _ep_login(self, headers, data) -> Response:
        username = data.get("username")
        password = data.get("password")
        if not isinstance(username, str) or not isinstance(password, str):
            return Response(401, {"error": "invalid_credentials"})
        account = self._accounts.get(username)
        if account is None:
            # burn comparable time so unknown users are not distinguishable
            hash_password(password, self.pbkdf2_iterations, b"\x00" * 16)
            return Response(401, {"error": "invalid_credentials"})
        if not verify_password(account.password_record, password):
            return Response(401, {"error": "invalid_credentials"})
        if account.role is Role.PATIENT_DEVICE:
            mac = data.get("mac")
            if not isinstance(mac, str):
                return Response(403, {"error": "device_not_registered"})
            try:
                mac = canonical_mac(mac)
            except ValueError:
                return Response(403, {"error": "device_not_registered"})
            if self._devices.get(mac) != username:
                return Response(403, {"error": "device_not_registered"})
        token = self.tokens.issue(username)
        return Response(200, {
            "first_name": account.first_name,
            "last_name": account.last_name,
            "institute": account.institute,
            "token": token.value,
        })

    def _linked_to_patient(self, account: UserAccount, patient_id: str) -> bool:
        if account.role is Role.PATIENT_DEVICE:
            return account.patient_id == patient_id
        profile = self._profiles.get(patient_id)
        return profile is not None and profile.physician_username == account.username

    def _ep_index(self, headers, data) -> Response:
        account = self._consume_bearer(headers)
        patient_id = data.get("patient_id")
        if not isinstance(patient_id, str):
            raise ApiError(400, "invalid_request")
        with self._lock:
            if not self._linked_to_patient(account, patient_id):
                raise ApiError(403, "forbidden_patient")
            progress = data.get("progress")
            if isinstance(progress, dict):
                self._progress[patient_id] = {
                    "delivered_volume_ml": progress.get("delivered_volume_ml"),
                    "elapsed_s": progress.get("elapsed_s"),
                    "version": progress.get("version"),
                    "updated_at": self.clock(),
                }
            rx = self.active_prescription(patient_id)
            if rx is None:
                raise ApiError(404, "no_active_prescription")
            return Response(200, {
                "infusion_index": prescription_view(rx),
                "token": self._next_token(account),
            })

    def _ep_infusions(self, headers, data) -> Response:
        account = self._consume_bearer(headers)
        try:
            record = InfusionRecord(
                record_id=str(data["record_id"]),
                patient_id=str(data["patient_id"]),
                prescription_id=str(data["prescription_id"]),
                version=int(data["version"]),
                started_at=float(data["started_at"]),
                finished_at=float(data["finished_at"]),
                delivered_volume_ml=float(data["delivered_volume_ml"]),
                mean_rate_ml_h=float(data["mean_rate_ml_h"]),
                outcome=InfusionOutcome(data["outcome"]),
            )
        except (KeyError, TypeError, ValueError):
            raise ApiError(400, "invalid_record")
        with self._lock:
            if not self._linked_to_patient(account, record.patient_id):
                raise ApiError(403, "forbidden_patient")
            row = {
                "record_id": record.record_id,
                "patient_id": record.patient_id,
                "prescription_id": record.prescription_id,
                "version": record.version,
                "started_at": record.started_at,
                "finished_at": record.finished_at,
                "delivered_volume_ml": record.delivered_volume_ml,
                "mean_rate_ml_h": record.mean_rate_ml_h,
                "outcome": record.outcome.value,
            }
            self._records.setdefault(record.patient_id, []).append(row)
            self._emit("records", {"event": "record_appended", **row})
            return Response(200, {"token": self._next_token(account)})

    def _ep_history(self, headers, data, patient_id) -> Response:
        account = self._consume_bearer(headers)
        with self._lock:
            self._require_physician_of(account, patient_id)
            return Response(200, {
                "history": self.records_for(patient_id),
                "token": self._next_token(account),
            })

    def _ep_status(self, headers, data, patient_id) -> Response:
        account = self._consume_bearer(headers)
        with self._lock:
            profile = self._require_physician_of(account, patient_id)
            rx = self.active_prescription(patient_id)
            status = {
                "patient_id": patient_id,
                "limits": {
                    "max_volume_ml": profile.max_volume_ml,
                    "max_rate_ml_h": profile.max_rate_ml_h,
                },
                "active_prescription": prescription_view(rx) if rx else None,
                "pending_proposals": [p.view() for p in self.pending_proposals(patient_id)],
                "progress": self._progress.get(patient_id),
            }
            return Response(200, {"status": status, "token": self._next_token(account)})

    def _ep_limits(self, headers, data, patient_id) -> Response:
        account = self._consume_bearer(headers)
        with self._lock:
            self._require_physician_of(account, patient_id)
            max_volume_ml = self._positive_number(data, "max_volume_ml")
            max_rate_ml_h = self._positive_number(data, "max_rate_ml_h")
            profile = self.set_profile(patient_id, max_volume_ml, max_rate_ml_h,
                                       physician_username=account.username)
            # pending proposals that no longer fit are dead on arrival
            for proposal in self.pending_proposals(patient_id):
                if not check_limits(proposal.volume_ml, proposal.rate_ml_h, profile).ok:
                    self._decide_in_memory(proposal, "rejected", decided_by=account.username,
                                           reason="limit_exceeded")
            payload = {
                "patient_id": patient_id,
                "max_volume_ml": profile.max_volume_ml,
                "max_rate_ml_h": profile.max_rate_ml_h,
                "token": self._next_token(account),
            }
            rx = self.active_prescription(patient_id)
            if rx is not None and not check_limits(rx.volume_ml, rx.rate_ml_h, profile).ok:
                # the running infusion is left alone; future approvals are blocked
                payload["warning"] = "below_active_prescription"
            return Response(200, payload)

    def _ep_propose(self, headers, data) -> Response:
        patient_id = data.get("patient_id")
        if not isinstance(patient_id, str):
            raise ApiError(400, "invalid_request")
        with self._lock:
            profile = self._profiles.get(patient_id)
            if profile is None:
                raise ApiError(404, "unknown_patient")
            volume_ml = self._positive_number(data, "volume_ml")
            rate_ml_h = self._positive_number(data, "rate_ml_h")
            proposal = Proposal(
                proposal_id=f"prop-{secrets.token_hex(6)}",
                patient_id=patient_id,
                volume_ml=volume_ml,
                rate_ml_h=rate_ml_h,
                created_at=self.clock(),
            )
            verdict = check_limits(volume_ml, rate_ml_h, profile)
            if not verdict.ok:
                proposal.state = "rejected"
                proposal.reason = "limit_exceeded"
            self._proposals[proposal.proposal_id] = proposal
            self._proposal_order.setdefault(patient_id, []).append(proposal.proposal_id)
            self._emit("proposals", {
                "event": "proposal_created",
                "proposal_id": proposal.proposal_id,
                "patient_id": patient_id,
                "volume_ml": volume_ml,
                "rate_ml_h": rate_ml_h,
                "state": proposal.state,
                "reason": proposal.reason,
                "created_at": proposal.created_at,
            })
            return Response(200, {"proposal": proposal.view()})

    def _decide_in_memory(self, proposal: Proposal, state: str, decided_by: str | None,
                          reason: str | None = None) -> None:
        proposal.state = state
        proposal.decided_by = decided_by
        proposal.reason = reason
        self._emit("proposals", {
            "event": "proposal_decided",
            "proposal_id": proposal.proposal_id,
            "state": state,
            "decided_by": decided_by,
            "reason": reason,
        })

    def _ep_decide(self, headers, data, proposal_id) -> Response:
        account = self._consume_bearer(headers)
        decision = data.get("decision")
        if decision not in ("approve", "reject"):
            raise ApiError(400, "invalid_request")
        with self._lock:
            proposal = self._proposals.get(proposal_id)
            if proposal is None:
                raise ApiError(404, "unknown_proposal")
            self._require_physician_of(account, proposal.patient_id)
            if proposal.state != "pending":
                raise ApiError(409, "already_decided")
            if decision == "reject":
                self._decide_in_memory(proposal, "rejected", decided_by=account.username)
                return Response(200, {
                    "proposal": proposal.view(),
                    "token": self._next_token(account),
                })
            # approval re-checks against the limits in force right now
            profile = self._profiles[proposal.patient_id]
            if not check_limits(proposal.volume_ml, proposal.rate_ml_h, profile).ok:
                self._decide_in_memory(proposal, "rejected", decided_by=account.username,
                                       reason="limit_exceeded")
                return Response(409, {"error": "limit_exceeded"})
            self._decide_in_memory(proposal, "approved", decided_by=account.username)
            rx = self.activate_prescription(proposal.patient_id, proposal.volume_ml,
                                            proposal.rate_ml_h)
            return Response(200, {
                "proposal": proposal.view(),
                "prescription": prescription_view(rx),
                "token": self._next_token(account),
            })

    def _ep_health(self, headers, data) -> Response:
        return Response(200, {"status": "ok", "poll_interval_s": self.poll_interval_s})

    # ------------------------------------------------------------------
    # static files (physician dashboard)
    # ------------------------------------------------------------------

    def _serve_static(self, path: str) -> Response:
        if self.static_dir is None:
            return Response(404, {"error": "not_found"})
        rel = path[len("/app"):].lstrip("/") or "index.html"
        root = self.static_dir.resolve()
        target = (root / rel).resolve()
        if root not in target.parents and target != root:
            return Response(404, {"error": "not_found"})
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            return Response(404, {"error": "not_found"})
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        return Response(200, body=target.read_bytes(), content_type=ctype)


# ---------------------------------------------------------------------------
# demo / bench seed data
# ---------------------------------------------------------------------------

def device_mac(i: int) -> str:
    return f"AA:BB:CC:DD:{(i >> 8) & 0xFF:02X}:{i & 0xFF:02X}"


def seed_demo(app: Application, devices: int = 1, volume_ml: float = 2.0,
              rate_ml_h: float = 4.0) -> dict:
    """Create one physician plus N device accounts with profiles and orders.

    Idempotent enough for demos: raises if usernames already exist. Returns
    the credentials so callers (CLI, bench) can print or reuse them.
    """
    app.create_user("physician1", "phys-pass", Role.PHYSICIAN,
                    first_name="Dana", last_name="Reyes", institute="KNT Clinic")
    seeded = {"physician": {"username": "physician1", "password": "phys-pass"},
              "devices": []}
    for i in range(1, devices + 1):
        username = f"dev{i}"
        patient_id = f"pat-{i:03d}"
        mac = device_mac(i)
        app.create_user(username, "device-pass", Role.PATIENT_DEVICE,
                        first_name=f"Patient{i}", last_name="Demo",
                        institute="KNT Clinic", patient_id=patient_id)
        app.register_device(mac, username)
        app.set_profile(patient_id, 10.0, 10.0, physician_username="physician1")
        app.activate_prescription(patient_id, volume_ml, rate_ml_h)
        seeded["devices"].append({
            "username": username, "password": "device-pass",
            "mac": mac, "patient_id": patient_id,
        })
    return seeded


# ---------------------------------------------------------------------------
# HTTP front end
# ---------------------------------------------------------------------------

_REASONS = {200: "OK", 400: "Bad Request", 401: "Unauthorized", 403: "Forbidden",
            404: "Not Found", 405: "Method Not Allowed", 409: "Conflict",
            500: "Internal Server Error"}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    app: Application  # set by ApiHTTPServer

    def _dispatch(self, method: str) -> None:
        try:
            length = int(self.headers.get("Content-Length", 0) or 0)
            body = self.rfile.read(length) if length else b""
            response = self.app.handle(method, self.path, dict(self.headers), body)
        except Exception:  # never tear down the connection thread on a bug
            logger.exception("unhandled error for %s %s", method, self.path)
            response = Response(500, {"error": "internal_error"})
        payload = response.encoded()
        head = (
            f"HTTP/1.1 {response.status} {_REASONS.get(response.status, 'Unknown')}\r\n"
            f"Content-Type: {response.content_type}\r\n"
            f"Content-Length: {len(payload)}\r\n"
        ).encode("latin-1")
        # one write per response keeps loopback latency flat under load
        try:
            self.wfile.write(head + b"\r\n" + payload)
        except (BrokenPipeError, ConnectionResetError):
            self.close_connection = True

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    # other verbs still reach the app so known paths answer 405, not 501
    def do_PUT(self) -> None:
        self._dispatch("PUT")

    def do_DELETE(self) -> None:
        self._dispatch("DELETE")

    def do_PATCH(self) -> None:
        self._dispatch("PATCH")

    def log_message(self, fmt: str, *args) -> None:  # request logging off: bench noise
        pass


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    # default backlog of 5 drops connections when a user fleet starts at once
    request_queue_size = 128


class ApiHTTPServer:
    """Threaded HTTP server wrapper with lifecycle management."""

    def __init__(self, app: Application, host: str = "127.0.0.1", port: int = 8080,
                 purge_interval_s: float | None = None) -> None:
        self.app = app
        handler = type("BoundHandler", (_Handler,), {"app": app})
        self._httpd = _Server((host, port), handler)
        self._thread: threading.Thread | None = None
        self._purge_interval_s = purge_interval_s
        self._purge_timer: threading.Timer | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def _schedule_purge(self) -> None:
        if self._purge_interval_s is None:
            return
        # keep recently-expired tokens one TTL longer so clients still get a
        # token_expired (not token_invalid) on their first late retry
        self.app.tokens.purge_expired(self.app.clock() - self.app.tokens.ttl_s)
        self._purge_timer = threading.Timer(self._purge_interval_s, self._schedule_purge)
        self._purge_timer.daemon = True
        self._purge_timer.start()

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="mediflow-http", daemon=True)
        self._thread.start()
        self._schedule_purge()

    def serve_forever(self) -> None:
        self._schedule_purge()
        self._httpd.serve_forever()

    def stop(self) -> None:
        if self._purge_timer is not None:
            self._purge_timer.cancel()
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.app.close()
