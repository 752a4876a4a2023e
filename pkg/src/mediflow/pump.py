"""Infusion device as a deterministic discrete-event simulation.

A device is one sequential process: it logs in, fetches its infusion order,
then interleaves motor steps with periodic server polls on a simulated (or
wall) clock. Dispensing is modeled at drop granularity with a two-parameter
noise model; identical seeds give byte-identical traces.
"""
from __future__ import annotations

import http.client
import json
import random
import time
import urllib.parse
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

from .domain import (
    InfusionOutcome,
    SyringeKinematics,
    rate_to_step_interval,
    volume_to_steps,
)

DEFAULT_DROP_QUANTUM_UL = 50.0
DEFAULT_POLL_INTERVAL_S = 60.0


# ---------------------------------------------------------------------------
# clocks
# ---------------------------------------------------------------------------

class SimulatedClock:
    """Manually advanced clock; sleep_until returns instantly."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep_until(self, t: float) -> None:
        if t > self._now:
            self._now = t


class WallClock:
    """Real time, optionally scaled: time_scale simulated seconds per wall second."""

    def __init__(self, time_scale: float = 1.0, start: float = 0.0) -> None:
        if time_scale <= 0:
            raise ValueError("time_scale must be > 0")
        self.time_scale = time_scale
        self._start = start
        self._t0 = time.monotonic()

    def now(self) -> float:
        return self._start + (time.monotonic() - self._t0) * self.time_scale

    def sleep_until(self, t: float) -> None:
        delay = (t - self.now()) / self.time_scale
        if delay > 0:
            time.sleep(delay)


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------

class TransportError(Exception):
    """Server unreachable or connection dropped mid-request."""


class Transport(Protocol):
    def request(self, method: str, path: str, token: str | None,
                body: dict | None) -> tuple[int, dict]: ...


class InProcessTransport:
    """Calls an Application directly; used by simulations and tests."""

    def __init__(self, app) -> None:
        self.app = app

    def request(self, method: str, path: str, token: str | None,
                body: dict | None) -> tuple[int, dict]:
        headers = {"authorization": f"Bearer {token}"} if token else {}
        raw = json.dumps(body).encode("utf-8") if body is not None else None
        response = self.app.handle(method, path, headers, raw)
        payload = response.payload
        if payload is None:
            payload = json.loads(response.encoded() or b"{}")
        return response.status, payload


class HttpTransport:
    """Persistent HTTP/1.1 connection to a running server."""

    def __init__(self, base_url: str, timeout: float = 10.0) -> None:
        parsed = urllib.parse.urlsplit(base_url)
        if parsed.scheme != "http" or not parsed.hostname:
            raise ValueError(f"expected http://host:port, got {base_url!r}")
        self._host = parsed.hostname
        self._port = parsed.port or 80
        self._timeout = timeout
        self._conn: http.client.HTTPConnection | None = None

    def _connection(self) -> http.client.HTTPConnection:
        if self._conn is None:
            self._conn = http.client.HTTPConnection(self._host, self._port,
                                                    timeout=self._timeout)
        return self._conn

    def request(self, method: str, path: str, token: str | None,
                body: dict | None) -> tuple[int, dict]:
        payload = json.dumps(body).encode("utf-8") if body is not None else b""
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        conn = self._connection()
        try:
            conn.request(method, path, body=payload, headers=headers)
            response = conn.getresponse()
            data = response.read()
        except (OSError, http.client.HTTPException) as err:
            self.close()
            raise TransportError(str(err)) from err
        return response.status, (json.loads(data) if data else {})

    def close(self) -> None:
        if self._conn is not None:
            try:
                self._conn.close()
            finally:
                self._conn = None


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Per-run dispensing imperfections.

    One efficiency factor scales every step's displaced volume; one dead
    volume is withheld from the final flush. sigma=0 turns both off so
    zero-noise runs deliver the exact kinematic volume.
    """

    seed: int = 0
    sigma: float = 0.015

    def draw(self, drop_quantum_ul: float) -> tuple[float, float]:
        if self.sigma == 0:
            return 1.0, 0.0
        rng = random.Random(self.seed)
        efficiency = min(1.1, max(0.9, rng.gauss(1.0, self.sigma)))
        dead_volume_ul = rng.uniform(0.0, drop_quantum_ul)
        return efficiency, dead_volume_ul


# ---------------------------------------------------------------------------
# trace and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DropEvent:
    t_s: float  # seconds from session start
    drop_volume_ul: float
    cumulative_ml: float
    cumulative_mass_g: float


@dataclass
class InfusionTrace:
    drops: list[DropEvent] = field(default_factory=list)
    delivered_volume_ml: float = 0.0
    mean_rate_ml_h: float = 0.0

    def to_csv(self) -> str:
        lines = ["t_s,drop_volume_ul,cumulative_ml"]
        for d in self.drops:
            lines.append(f"{d.t_s!r},{d.drop_volume_ul!r},{d.cumulative_ml!r}")
        return "\n".join(lines) + "\n"


class Phase(str, Enum):
    IDLE = "idle"
    AUTHENTICATING = "authenticating"
    ACQUIRING_INDEX = "acquiring_index"
    INFUSING = "infusing"
    COMPLETED = "completed"
    FAULT = "fault"


# Infusing->Infusing is the adaptation self-edge; any 401 re-enters Authenticating.
LEGAL_TRANSITIONS = frozenset({
    (Phase.IDLE, Phase.AUTHENTICATING),
    (Phase.AUTHENTICATING, Phase.ACQUIRING_INDEX),
    (Phase.AUTHENTICATING, Phase.FAULT),
    (Phase.ACQUIRING_INDEX, Phase.INFUSING),
    (Phase.ACQUIRING_INDEX, Phase.AUTHENTICATING),
    (Phase.ACQUIRING_INDEX, Phase.FAULT),
    (Phase.INFUSING, Phase.INFUSING),
    (Phase.INFUSING, Phase.AUTHENTICATING),
    (Phase.AUTHENTICATING, Phase.INFUSING),
    (Phase.INFUSING, Phase.COMPLETED),
    (Phase.INFUSING, Phase.FAULT),
})


@dataclass(frozen=True)
class Transition:
    t_s: float
    src: Phase
    dst: Phase
    reason: str


@dataclass
class SessionResult:
    outcome: InfusionOutcome
    phase: Phase
    fault_reason: str | None
    started_at: float | None
    finished_at: float | None
    delivered_volume_ml: float
    mean_rate_ml_h: float
    steps_executed: int
    versions_seen: list[int]
    trace: InfusionTrace
    transitions: list[Transition]
    record_posted: bool
    record: dict | None


class IllegalTransition(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InfusionPlan:
    steps_total: int
    step_interval_s: float


def plan_schedule(volume_ml: float, rate_ml_h: float,
                  kinematics: SyringeKinematics) -> InfusionPlan:
    return InfusionPlan(
        steps_total=volume_to_steps(volume_ml, kinematics),
        step_interval_s=rate_to_step_interval(rate_ml_h, kinematics),
    )


# ---------------------------------------------------------------------------
# device
# ---------------------------------------------------------------------------

@dataclass
class DeviceConfig:
    username: str
    password: str
    mac: str
    patient_id: str
    kinematics: SyringeKinematics = field(default_factory=SyringeKinematics)
    drop_quantum_ul: float = DEFAULT_DROP_QUANTUM_UL
    poll_interval_s: float = DEFAULT_POLL_INTERVAL_S
    noise_sigma: float = 0.015
    seed: int = 0
    auth_retries: int = 3
    transport_retries: int = 3


class _SessionAbort(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class PumpDevice:
    """One infusion session: login, index acquisition, stepped dispensing, polls."""

    def __init__(self, config: DeviceConfig, transport: Transport, clock=None,
                 on_transition: Callable[[Transition], None] | None = None) -> None:
        self.config = config
        self.transport = transport
        self.clock = clock or SimulatedClock()
        self.on_transition = on_transition
        self.phase = Phase.IDLE
        self.token: str | None = None
        self.transitions: list[Transition] = []
        self.trace = InfusionTrace()
        self.versions_seen: list[int] = []
        self._cumulative_ul = 0.0
        self._steps_total_executed = 0
        self._started_at: float | None = None
        self._active_prescription_id: str | None = None
        self._active_version: int | None = None
        self._active_volume_ml: float | None = None
        self._active_rate_ml_h: float | None = None

    # -- state machine ---------------------------------------------------

    def _transition(self, dst: Phase, reason: str) -> None:
        src = self.phase
        if (src, dst) not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"{src.value} -> {dst.value} ({reason})")
        self.phase = dst
        event = Transition(self.clock.now(), src, dst, reason)
        self.transitions.append(event)
        if self.on_transition is not None:
            self.on_transition(event)

    # -- networking with retry budgets ------------------------------------

    def _request(self, method: str, path: str, body: dict | None,
                 with_token: bool = True) -> tuple[int, dict]:
        last_error = None
        for _ in range(self.config.transport_retries + 1):
            try:
                return self.transport.request(method, path,
                                              self.token if with_token else None, body)
            except TransportError as err:
                last_error = err
        raise _SessionAbort(f"transport_unreachable: {last_error}")

    def _login(self) -> None:
        self._transition(Phase.AUTHENTICATING, "login")
        body = {"username": self.config.username, "password": self.config.password,
                "mac": self.config.mac}
        for attempt in range(self.config.auth_retries + 1):
            status, payload = self._request("POST", "/api/login", body, with_token=False)
            if status == 200:
                self.token = payload["token"]
                return
            if attempt == self.config.auth_retries:
                raise _SessionAbort(payload.get("error", f"login_failed_{status}"))

    def _acquire_index(self) -> dict:
        self._transition(Phase.ACQUIRING_INDEX, "fetch infusion index")
        while True:
            status, payload = self._request("POST", "/api/index",
                                            {"patient_id": self.config.patient_id})
            if status == 200:
                self.token = payload["token"]
                return payload["infusion_index"]
            if status == 401:
                self._login()
                self._transition(Phase.ACQUIRING_INDEX, "retry after re-login")
                continue
            raise _SessionAbort(payload.get("error", f"index_failed_{status}"))

    def _progress_body(self) -> dict:
        elapsed = 0.0 if self._started_at is None else self.clock.now() - self._started_at
        return {
            "patient_id": self.config.patient_id,
            "progress": {
                "delivered_volume_ml": self._cumulative_ul / 1000.0,
                "elapsed_s": elapsed,
                "version": self._active_version,
            },
        }

    def _poll(self) -> dict | None:
        """One mid-infusion poll. Returns a fresh index, or None if unreachable.

        Transport loss is tolerated (the pump keeps stepping and retries next
        interval); a 401 forces the re-login + re-acquire recovery path.
        """
        try:
            status, payload = self.transport.request("POST", "/api/index", self.token,
                                                     self._progress_body())
        except TransportError:
            return None
        if status == 200:
            self.token = payload["token"]
            return payload["infusion_index"]
        if status == 401:
            self._login()
            index = self._acquire_index()
            self._transition(Phase.INFUSING, "resume after re-login")
            return index
        raise _SessionAbort(payload.get("error", f"poll_failed_{status}"))

    # -- dispensing --------------------------------------------------------

    def _emit_drop(self, volume_ul: float) -> None:
        self._cumulative_ul += volume_ul
        cumulative_ml = self._cumulative_ul / 1000.0
        self.trace.drops.append(DropEvent(
            t_s=self.clock.now() - (self._started_at or 0.0),
            drop_volume_ul=volume_ul,
            cumulative_ml=cumulative_ml,
            cumulative_mass_g=cumulative_ml * self.config.kinematics.fluid_density_g_ml,
        ))

    def _adapt(self, index: dict) -> str | None:
        """Apply a freshly polled index. Returns an outcome if the run must stop."""
        version = index["version"]
        if version == self._active_version:
            return None
        self.versions_seen.append(version)
        delivered_nominal_ml = (
            self._steps_total_executed * self.config.kinematics.volume_per_step_ul / 1000.0
        )
        remaining_ml = index["volume_ml"] - delivered_nominal_ml
        self._active_prescription_id = index["prescription_id"]
        self._active_version = version
        self._active_volume_ml = index["volume_ml"]
        self._active_rate_ml_h = index["rate_ml_h"]
        if remaining_ml <= 0:
            return "superseded"
        plan = plan_schedule(remaining_ml, index["rate_ml_h"], self.config.kinematics)
        self._segment_steps_total = plan.steps_total
        self._segment_steps_done = 0
        self._segment_interval = plan.step_interval_s
        self._next_step_t = self.clock.now() + plan.step_interval_s
        self._transition(Phase.INFUSING, f"adapted to version {version}")
        return None

    def _run_engine(self, index: dict) -> str:
        """Event loop: motor steps vs polls, poll wins ties. Returns stop reason."""
        cfg = self.config
        vps = cfg.kinematics.volume_per_step_ul
        efficiency, self._dead_volume_ul = NoiseModel(cfg.seed, cfg.noise_sigma).draw(
            cfg.drop_quantum_ul)
        self._accumulator_ul = 0.0
        self._active_prescription_id = index["prescription_id"]
        self._active_version = index["version"]
        self._active_volume_ml = index["volume_ml"]
        self._active_rate_ml_h = index["rate_ml_h"]
        self.versions_seen.append(index["version"])

        plan = plan_schedule(index["volume_ml"], index["rate_ml_h"], cfg.kinematics)
        start = self.clock.now()
        self._started_at = start
        self._segment_steps_total = plan.steps_total
        self._segment_steps_done = 0
        self._segment_interval = plan.step_interval_s
        self._next_step_t = start + plan.step_interval_s
        next_poll_t = start + cfg.poll_interval_s

        while self._segment_steps_done < self._segment_steps_total:
            if next_poll_t <= self._next_step_t:
                self.clock.sleep_until(next_poll_t)
                next_poll_t += cfg.poll_interval_s
                fresh = self._poll()
                if fresh is not None:
                    stop = self._adapt(fresh)
                    if stop is not None:
                        return stop
                continue
            self.clock.sleep_until(self._next_step_t)
            self._segment_steps_done += 1
            self._steps_total_executed += 1
            self._accumulator_ul += vps * efficiency
            if self._accumulator_ul >= cfg.drop_quantum_ul:
                self._emit_drop(cfg.drop_quantum_ul)
                self._accumulator_ul -= cfg.drop_quantum_ul
            self._next_step_t += self._segment_interval
        return "completed"

    def _flush(self) -> None:
        residue = self._accumulator_ul - self._dead_volume_ul
        if residue > 1e-12:
            self._emit_drop(residue)
        self._accumulator_ul = 0.0

    def _post_record(self, record: dict) -> None:
        while True:
            status, payload = self._request("POST", "/api/infusions", record)
            if status == 200:
                self.token = payload["token"]
                return
            if status == 401:
                self._login()
                self._transition(Phase.INFUSING, "resume to post record")
                continue
            raise _SessionAbort(payload.get("error", f"record_post_failed_{status}"))

    # -- public ------------------------------------------------------------

    def run(self) -> SessionResult:
        fault_reason = None
        outcome = InfusionOutcome.FAULT
        finished_at = None
        record = None
        record_posted = False
        try:
            self._login()
            index = self._acquire_index()
            self._transition(Phase.INFUSING, "schedule planned")
            stop = self._run_engine(index)
            self._flush()
            finished_at = self.clock.now()
            outcome = (InfusionOutcome.COMPLETED if stop == "completed"
                       else InfusionOutcome.SUPERSEDED_MID_INFUSION)
            record = self._build_record(outcome, finished_at)
            self._post_record(record)
            record_posted = True
            self._transition(Phase.COMPLETED, stop)
        except _SessionAbort as err:
            fault_reason = err.reason
            self._transition(Phase.FAULT, err.reason)
            outcome = InfusionOutcome.FAULT
        duration = (finished_at - self._started_at) if (
            finished_at is not None and self._started_at is not None) else 0.0
        delivered_ml = self._cumulative_ul / 1000.0
        self.trace.delivered_volume_ml = delivered_ml
        self.trace.mean_rate_ml_h = (delivered_ml / duration * 3600.0) if duration > 0 else 0.0
        return SessionResult(
            outcome=outcome,
            phase=self.phase,
            fault_reason=fault_reason,
            started_at=self._started_at,
            finished_at=finished_at,
            delivered_volume_ml=delivered_ml,
            mean_rate_ml_h=self.trace.mean_rate_ml_h,
            steps_executed=self._steps_total_executed,
            versions_seen=self.versions_seen,
            trace=self.trace,
            transitions=self.transitions,
            record_posted=record_posted,
            record=record,
        )

    def _build_record(self, outcome: InfusionOutcome, finished_at: float) -> dict:
        delivered_ml = self._cumulative_ul / 1000.0
        # started_at can legitimately be 0.0 on a simulated clock; `or` would
        # zero the duration and report a 0.0 mean rate
        started_at = self._started_at if self._started_at is not None else finished_at
        duration = finished_at - started_at
        return {
            "record_id": uuid.uuid4().hex,
            "patient_id": self.config.patient_id,
            "prescription_id": self._active_prescription_id,
            "version": self._active_version,
            "started_at": self._started_at or 0.0,
            "finished_at": finished_at,
            "delivered_volume_ml": delivered_ml,
            "mean_rate_ml_h": (delivered_ml / duration * 3600.0) if duration > 0 else 0.0,
            "outcome": outcome.value,
        }


def run_session(config: DeviceConfig, transport: Transport, clock=None,
                on_transition: Callable[[Transition], None] | None = None) -> SessionResult:
    """Run one full device session and return its result."""
    return PumpDevice(config, transport, clock=clock, on_transition=on_transition).run()
