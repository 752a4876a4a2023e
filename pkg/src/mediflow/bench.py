"""Load and accuracy benchmarks with CSV/JSON report emission.

The load bench drives closed-loop virtual users (login once, then an
index-poll loop with token chaining) against a running server and measures
client-side latency. The accuracy bench runs end-to-end simulated infusions
against an in-process server and tabulates delivered volume and mean rate
errors the same way the reference hardware evaluation does.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .domain import pct_error, round2
from .pump import DeviceConfig, HttpTransport, InProcessTransport, SimulatedClock, TransportError, run_session
from .server import Application, device_mac, seed_demo


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class LoadReport:
    user_count: int
    duration_s: float
    total_requests: int
    error_count: int
    avg_response_ms: float
    max_response_ms: float
    min_response_ms: float
    avg_throughput_rps: float
    throughput_series: list[tuple[int, float]] = field(default_factory=list)
    response_series: list[tuple[int, float]] = field(default_factory=list)
    per_user_requests: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class AccuracyRow:
    experiment: int
    delivered_volume_ml: float
    pct_error_volume: float
    avg_rate_ml_h: float
    pct_error_rate: float


@dataclass
class AccuracyReport:
    volume_ml: float
    rate_ml_h: float
    rows: list[AccuracyRow] = field(default_factory=list)
    avg_pct_error_volume: float = 0.0
    avg_pct_error_rate: float = 0.0


# ---------------------------------------------------------------------------
# load bench
# ---------------------------------------------------------------------------

def default_credentials(users: int) -> list[dict]:
    """Accounts matching the seed-data convention for N devices."""
    return [
        {
            "username": f"dev{i}",
            "password": "device-pass",
            "mac": device_mac(i),
            "patient_id": f"pat-{i:03d}",
        }
        for i in range(1, users + 1)
    ]


class _Counter:
    """Lock-guarded total, kept separate from per-user tallies so the
    counting-exactness invariant is a real cross-check, not a tautology."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.value = 0

    def increment(self) -> None:
        with self._lock:
            self.value += 1


class _VirtualUser(threading.Thread):
    def __init__(self, base_url: str, creds: dict, barrier: threading.Barrier,
                 duration_s: float, think_s: float, include_records: bool,
                 shared_total: _Counter) -> None:
        super().__init__(daemon=True)
        self.transport = HttpTransport(base_url)
        self.creds = creds
        self.barrier = barrier
        self.duration_s = duration_s
        self.think_s = think_s
        self.include_records = include_records
        self.shared_total = shared_total
        self.samples: list[tuple[int, float]] = []  # (second, latency_ms)
        self.request_count = 0
        self.error_count = 0
        self.login_failed = False

    def _login(self) -> str | None:
        # a fleet connecting at once can outrun the listen queue; back off and retry
        for attempt in range(5):
            try:
                status, payload = self.transport.request("POST", "/api/login", None, {
                    "username": self.creds["username"],
                    "password": self.creds["password"],
                    "mac": self.creds["mac"],
                })
            except TransportError:
                time.sleep(0.05 * (attempt + 1))
                continue
            return payload["token"] if status == 200 else None
        return None

    def run(self) -> None:
        token = self._login()
        if token is None:
            self.login_failed = True
            self.barrier.wait()
            return
        self.barrier.wait()
        start = time.monotonic()
        deadline = start + self.duration_s
        iteration = 0
        while True:
            now = time.monotonic()
            if now >= deadline:
                break
            iteration += 1
            if self.include_records and iteration % 10 == 0:
                path, body = "/api/infusions", self._synthetic_record()
            else:
                path, body = "/api/index", {"patient_id": self.creds["patient_id"]}
            t0 = time.monotonic()
            try:
                status, payload = self.transport.request("POST", path, token, body)
            except TransportError:
                self.error_count += 1
                continue
            t1 = time.monotonic()
            if status == 200:
                token = payload["token"]
                self.samples.append((int(t1 - start), (t1 - t0) * 1000.0))
                self.request_count += 1
                self.shared_total.increment()
            else:
                self.error_count += 1
                if status == 401:
                    try:
                        token = self._login()
                    except TransportError:
                        token = None
                    if token is None:
                        break
            if self.think_s > 0:
                time.sleep(self.think_s)

    def _synthetic_record(self) -> dict:
        return {
            "record_id": uuid.uuid4().hex,
            "patient_id": self.creds["patient_id"],
            "prescription_id": f"rx-{self.creds['patient_id']}-v1",
            "version": 1,
            "started_at": 0.0,
            "finished_at": 1800.0,
            "delivered_volume_ml": 2.0,
            "mean_rate_ml_h": 4.0,
            "outcome": "completed",
        }


def run_load(base_url: str, users: int, duration_s: float, think_s: float = 0.0,
             include_records: bool = False, credentials: list[dict] | None = None) -> LoadReport:
    """Closed-loop load run against a live server; raises if it is unreachable."""
    if users < 1:
        raise ValueError("users must be >= 1")
    probe = HttpTransport(base_url)
    try:
        status, _ = probe.request("GET", "/api/health", None, None)
    except TransportError as err:
        raise RuntimeError(f"server unreachable at {base_url}: {err}") from err
    finally:
        probe.close()
    if status != 200:
        raise RuntimeError(f"server health check failed with status {status}")

    creds = credentials if credentials is not None else default_credentials(users)
    if len(creds) < users:
        raise ValueError("not enough credentials for requested user count")
    barrier = threading.Barrier(users + 1)
    shared_total = _Counter()
    threads = [
        _VirtualUser(base_url, creds[i], barrier, duration_s, think_s,
                     include_records, shared_total)
        for i in range(users)
    ]
    for t in threads:
        t.start()
    barrier.wait()
    for t in threads:
        t.join(timeout=duration_s + 60)
    failed = [t.creds["username"] for t in threads if t.login_failed]
    if failed:
        raise RuntimeError(f"virtual users failed to log in: {', '.join(failed)}")

    all_samples = [s for t in threads for s in t.samples]
    per_user = [t.request_count for t in threads]
    total = sum(per_user)
    if total != shared_total.value:
        raise RuntimeError(
            f"request accounting mismatch: per-user sum {total} != shared counter {shared_total.value}")
    latencies = [ms for _, ms in all_samples]
    buckets: dict[int, list[float]] = {}
    for second, ms in all_samples:
        buckets.setdefault(second, []).append(ms)
    seconds = range(int(duration_s))
    throughput_series = [(s, float(len(buckets.get(s, [])))) for s in seconds]
    response_series = [
        (s, (sum(buckets[s]) / len(buckets[s])) if s in buckets else 0.0)
        for s in seconds
    ]
    return LoadReport(
        user_count=users,
        duration_s=duration_s,
        total_requests=total,
        error_count=sum(t.error_count for t in threads),
        avg_response_ms=(sum(latencies) / len(latencies)) if latencies else 0.0,
        max_response_ms=max(latencies) if latencies else 0.0,
        min_response_ms=min(latencies) if latencies else 0.0,
        avg_throughput_rps=total / duration_s if duration_s > 0 else 0.0,
        throughput_series=throughput_series,
        response_series=response_series,
        per_user_requests=per_user,
    )


# ---------------------------------------------------------------------------
# accuracy bench
# ---------------------------------------------------------------------------

def _mean_2dp(values: list[float]) -> float:
    total = sum((Decimal(str(v)) for v in values), Decimal(0))
    return float((total / len(values)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def run_accuracy(volume_ml: float, rate_ml_h: float, runs: int = 5,
                 seeds: list[int] | None = None, noise_sigma: float = 0.015,
                 poll_interval_s: float = 60.0) -> AccuracyReport:
    """End-to-end simulated infusions; per-run errors from 2-decimal readings.

    Delivered volume and mean rate are quantized to two decimals before the
    error computation, matching how the reference table was tabulated from
    measured readings.
    """
    if seeds is None:
        seeds = list(range(1, runs + 1))
    if len(seeds) != runs:
        raise ValueError("runs must equal len(seeds)")
    rows: list[AccuracyRow] = []
    for experiment, seed in enumerate(seeds, start=1):
        clock = SimulatedClock()
        app = Application(clock=clock.now)
        seed_demo(app, devices=1, volume_ml=volume_ml, rate_ml_h=rate_ml_h)
        creds = default_credentials(1)[0]
        config = DeviceConfig(
            username=creds["username"],
            password=creds["password"],
            mac=creds["mac"],
            patient_id=creds["patient_id"],
            poll_interval_s=poll_interval_s,
            noise_sigma=noise_sigma,
            seed=seed,
        )
        result = run_session(config, InProcessTransport(app), clock=clock)
        if result.outcome.value != "completed":
            raise RuntimeError(f"accuracy run {experiment} did not complete: "
                               f"{result.fault_reason or result.outcome.value}")
        delivered = round2(result.delivered_volume_ml)
        rate = round2(result.mean_rate_ml_h)
        rows.append(AccuracyRow(
            experiment=experiment,
            delivered_volume_ml=delivered,
            pct_error_volume=pct_error(delivered, volume_ml),
            avg_rate_ml_h=rate,
            pct_error_rate=pct_error(rate, rate_ml_h),
        ))
    return AccuracyReport(
        volume_ml=volume_ml,
        rate_ml_h=rate_ml_h,
        rows=rows,
        avg_pct_error_volume=_mean_2dp([r.pct_error_volume for r in rows]),
        avg_pct_error_rate=_mean_2dp([r.pct_error_rate for r in rows]),
    )


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def emit_report(report: LoadReport | AccuracyReport, fmt: str, path: str | Path) -> Path:
    """Write a report as csv or json; identical reports produce identical bytes."""
    path = Path(path)
    if fmt == "json":
        data = json.dumps(asdict(report), sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        if isinstance(report, LoadReport):
            lines = ["second,throughput_rps,avg_response_ms"]
            by_second = dict(report.response_series)
            for second, rps in report.throughput_series:
                lines.append(f"{second},{rps!r},{by_second.get(second, 0.0)!r}")
        else:
            lines = ["setting_volume_ml,setting_rate_ml_h,experiment,"
                     "delivered_volume_ml,pct_error_volume,avg_rate_ml_h,pct_error_rate"]
            for row in report.rows:
                lines.append(
                    f"{report.volume_ml!r},{report.rate_ml_h!r},{row.experiment},"
                    f"{row.delivered_volume_ml:.2f},{row.pct_error_volume!r},"
                    f"{row.avg_rate_ml_h:.2f},{row.pct_error_rate!r}")
            lines.append(f"{report.volume_ml!r},{report.rate_ml_h!r},avg,,"
                         f"{report.avg_pct_error_volume!r},,{report.avg_pct_error_rate!r}")
        data = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format: {fmt!r}")
    path.write_bytes(data.encode("utf-8"))
    return path
