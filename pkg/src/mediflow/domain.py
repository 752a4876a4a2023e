"""Shared domain types and pure validation/kinematic arithmetic.

Everything here is a plain value type or a pure function; nothing touches
I/O, clocks, or stores. Volumes are milliliters, rates milliliters/hour,
step geometry millimeters. Internally the kinematic constants are held as
exact rationals so a step count is a single correctly-rounded integer and
a step interval a single correctly-rounded float.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from enum import Enum
from fractions import Fraction

UL_PER_ML = 1000
ML_QUANTUM = 0.001  # microliter resolution for all volume/rate values


class Role(str, Enum):
    PATIENT_DEVICE = "patient_device"
    PHYSICIAN = "physician"


class PrescriptionStatus(str, Enum):
    ACTIVE = "active"
    SUPERSEDED = "superseded"


class InfusionOutcome(str, Enum):
    COMPLETED = "completed"
    SUPERSEDED_MID_INFUSION = "superseded_mid_infusion"
    FAULT = "fault"


# ---------------------------------------------------------------------------
# MAC addresses
# ---------------------------------------------------------------------------

_MAC_RE = re.compile(r"^([0-9A-Fa-f]{2})[:-]([0-9A-Fa-f]{2})[:-]([0-9A-Fa-f]{2})"
                     r"[:-]([0-9A-Fa-f]{2})[:-]([0-9A-Fa-f]{2})[:-]([0-9A-Fa-f]{2})$")


def canonical_mac(text: str) -> str:
    """Parse a 6-octet hardware address and return it as 'AA:BB:CC:DD:EE:FF'.

    Accepts ':' or '-' separators and any hex case. Raises ValueError for
    anything that is not exactly six hex octets. Canonicalization is
    idempotent: canonical_mac(canonical_mac(x)) == canonical_mac(x).
    """
    m = _MAC_RE.match(text.strip())
    if m is None:
        raise ValueError(f"not a valid MAC address: {text!r}")
    return ":".join(octet.upper() for octet in m.groups())


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserAccount:
    """An account row; password_record is an opaque string owned by the server."""

    username: str
    password_record: str
    role: Role
    first_name: str
    last_name: str
    institute: str
    patient_id: str | None = None

    def __post_init__(self) -> None:
        if not self.username:
            raise ValueError("username must be non-empty")
        if (self.role is Role.PATIENT_DEVICE) != (self.patient_id is not None):
            raise ValueError("patient_id present iff role is patient_device")


@dataclass(frozen=True)
class DeviceIdentity:
    """Binding of one hardware address to one account."""

    mac: str
    owner_username: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "mac", canonical_mac(self.mac))


@dataclass(frozen=True)
class PatientProfile:
    """Physician-set ceilings for one patient's orders."""

    patient_id: str
    max_volume_ml: float
    max_rate_ml_h: float
    physician_username: str

    def __post_init__(self) -> None:
        if not (self.max_volume_ml > 0 and math.isfinite(self.max_volume_ml)):
            raise ValueError("max_volume_ml must be > 0")
        if not (self.max_rate_ml_h > 0 and math.isfinite(self.max_rate_ml_h)):
            raise ValueError("max_rate_ml_h must be > 0")


@dataclass(frozen=True)
class Prescription:
    """A versioned {volume, rate} order for one patient (the infusion index)."""

    prescription_id: str
    patient_id: str
    version: int
    volume_ml: float
    rate_ml_h: float
    status: PrescriptionStatus = PrescriptionStatus.ACTIVE

    def __post_init__(self) -> None:
        if self.version < 1:
            raise ValueError("version must be >= 1")
        if not (self.volume_ml > 0 and math.isfinite(self.volume_ml)):
            raise ValueError("volume_ml must be > 0")
        if not (self.rate_ml_h > 0 and math.isfinite(self.rate_ml_h)):
            raise ValueError("rate_ml_h must be > 0")


@dataclass(frozen=True)
class InfusionRecord:
    """One finished (or aborted) infusion as reported by the device."""

    record_id: str
    patient_id: str
    prescription_id: str
    version: int
    started_at: float
    finished_at: float
    delivered_volume_ml: float
    mean_rate_ml_h: float
    outcome: InfusionOutcome

    def __post_init__(self) -> None:
        if self.finished_at < self.started_at:
            raise ValueError("finished_at must be >= started_at")
        if self.delivered_volume_ml < 0:
            raise ValueError("delivered_volume_ml must be >= 0")


# ---------------------------------------------------------------------------
# Syringe kinematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyringeKinematics:
    """Geometry converting plunger travel into dispensed fluid.

    full_step_mm is the linear plunger travel of one full motor step.
    One mm^3 of displaced plunger volume is one microliter, so
    volume_per_step_ul = pi * (inner_diameter_mm / 2)^2 * full_step_mm.
    """

    full_step_mm: float = 0.0018
    inner_diameter_mm: float = 14.50
    fluid_density_g_ml: float = 1.000

    def __post_init__(self) -> None:
        if not (self.full_step_mm > 0 and math.isfinite(self.full_step_mm)):
            raise ValueError("full_step_mm must be > 0")
        if not (self.inner_diameter_mm > 0 and math.isfinite(self.inner_diameter_mm)):
            raise ValueError("inner_diameter_mm must be > 0")
        if not (self.fluid_density_g_ml > 0 and math.isfinite(self.fluid_density_g_ml)):
            raise ValueError("fluid_density_g_ml must be > 0")

    def volume_per_step_exact(self) -> Fraction:
        """Exact rational volume per step in microliters (pi taken at double precision)."""
        radius = Fraction(self.inner_diameter_mm) / 2
        return Fraction(math.pi) * radius * radius * Fraction(self.full_step_mm)

    @property
    def volume_per_step_ul(self) -> float:
        return float(self.volume_per_step_exact())


def volume_to_steps(volume_ml: float, k: SyringeKinematics) -> int:
    """Number of full motor steps dispensing volume_ml, ties rounded away from zero.

    The quotient is evaluated in exact rational arithmetic and rounded once,
    so the result never drifts from the true nearest integer.
    """
    if not math.isfinite(volume_ml) or volume_ml < 0:
        raise ValueError(f"volume_ml must be finite and >= 0, got {volume_ml!r}")
    if volume_ml == 0:
        return 0
    quotient = Fraction(volume_ml) * UL_PER_ML / k.volume_per_step_exact()
    # floor(x + 1/2) rounds half away from zero for positive x
    return math.floor(quotient + Fraction(1, 2))


def rate_to_step_interval(rate_ml_h: float, k: SyringeKinematics) -> float:
    """Seconds between steps sustaining rate_ml_h; always strictly positive."""
    if not math.isfinite(rate_ml_h) or rate_ml_h <= 0:
        raise ValueError(f"rate_ml_h must be finite and > 0, got {rate_ml_h!r}")
    interval = k.volume_per_step_exact() * 3600 / (Fraction(rate_ml_h) * UL_PER_ML)
    return float(interval)


# ---------------------------------------------------------------------------
# Prescription validation
# ---------------------------------------------------------------------------

class PatientMismatchError(ValueError):
    """Prescription and profile refer to different patients."""


@dataclass(frozen=True)
class LimitCheck:
    """Outcome of validating a prescription against profile limits."""

    ok: bool
    violations: tuple[str, ...] = ()


def validate_prescription(p: Prescription, profile: PatientProfile) -> LimitCheck:
    """Check p against the profile's inclusive limits.

    Raises PatientMismatchError when the two arguments refer to different
    patients; a mismatch is a caller bug, never a quiet pass.
    """
    if p.patient_id != profile.patient_id:
        raise PatientMismatchError(
            f"prescription is for {p.patient_id!r}, profile for {profile.patient_id!r}")
    violations = []
    if p.volume_ml > profile.max_volume_ml:
        violations.append("volume_ml")
    if p.rate_ml_h > profile.max_rate_ml_h:
        violations.append("rate_ml_h")
    return LimitCheck(ok=not violations, violations=tuple(violations))


def check_limits(volume_ml: float, rate_ml_h: float, profile: PatientProfile) -> LimitCheck:
    """Limit check for raw values, before any Prescription exists."""
    violations = []
    if volume_ml > profile.max_volume_ml:
        violations.append("volume_ml")
    if rate_ml_h > profile.max_rate_ml_h:
        violations.append("rate_ml_h")
    return LimitCheck(ok=not violations, violations=tuple(violations))


# ---------------------------------------------------------------------------
# Quantization and report rounding
# ---------------------------------------------------------------------------

def quantize_ml(value: float) -> float:
    """Snap a volume or rate to microliter resolution (3 decimals)."""
    if not math.isfinite(value):
        raise ValueError(f"value must be finite, got {value!r}")
    return float(Decimal(repr(value)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def round2(value: float) -> float:
    """Round to 2 decimals, half away from zero, for report output."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def pct_error(measured: float, prescribed: float) -> float:
    """|measured - prescribed| / prescribed * 100, at 2-decimal precision.

    Computed in decimal arithmetic from 2-decimal operands so table rows
    recompute exactly (2.05 vs 2 -> 2.5, never 2.4999...).
    """
    if prescribed <= 0:
        raise ValueError("prescribed must be > 0")
    m = Decimal(repr(measured)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    p = Decimal(repr(prescribed))
    err = abs(m - p) / p * 100
    return float(err.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
