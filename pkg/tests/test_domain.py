"""Value types, MAC canonicalization, kinematics, and error arithmetic."""
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mpmath import mp, mpf
from mpmath import floor as mpfloor
from mpmath import pi as mppi

from mediflow.domain import (
    InfusionOutcome,
    InfusionRecord,
    LimitCheck,
    PatientMismatchError,
    PatientProfile,
    Prescription,
    SyringeKinematics,
    canonical_mac,
    check_limits,
    pct_error,
    quantize_ml,
    rate_to_step_interval,
    round2,
    validate_prescription,
    volume_to_steps,
)

mp.dps = 60

K = SyringeKinematics()


def oracle_vps_ul(diameter_mm: float, full_step_mm: float) -> mpf:
    return mppi * (mpf(diameter_mm) / 2) ** 2 * mpf(full_step_mm)


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def test_default_volume_per_step_matches_high_precision_oracle():
    oracle = float(oracle_vps_ul(14.50, 0.0018))
    assert abs(K.volume_per_step_ul - oracle) <= math.ulp(oracle)


def test_default_volume_per_step_value():
    assert K.volume_per_step_ul == pytest.approx(0.2972339349377643, abs=1e-15)


def test_steps_for_reference_settings():
    assert volume_to_steps(2.0, K) == 6729
    assert volume_to_steps(5.0, K) == 16822


def test_intervals_for_reference_settings():
    assert rate_to_step_interval(4.0, K) == pytest.approx(0.267510541, abs=1e-9)
    assert rate_to_step_interval(5.0, K) == pytest.approx(0.214008433, abs=1e-9)


def test_zero_volume_is_zero_steps():
    assert volume_to_steps(0.0, K) == 0


def test_steps_rejects_negative_and_non_finite():
    with pytest.raises(ValueError):
        volume_to_steps(-1.0, K)
    with pytest.raises(ValueError):
        volume_to_steps(float("nan"), K)


def test_interval_rejects_zero_rate():
    with pytest.raises(ValueError):
        rate_to_step_interval(0.0, K)


def test_steps_error_bounded_by_half_step():
    for volume in (0.001, 0.5, 2.0, 5.0, 19.97):
        steps = volume_to_steps(volume, K)
        exact = Fraction(volume) * 1000 / K.volume_per_step_exact()
        assert abs(Fraction(steps) - exact) <= Fraction(1, 2)


@given(st.floats(min_value=0.01, max_value=50.0, allow_nan=False))
def test_steps_monotone_in_volume(volume):
    assert volume_to_steps(volume, K) <= volume_to_steps(volume * 1.01, K)


@settings(max_examples=150)
@given(
    volume=st.floats(min_value=0.1, max_value=20.0),
    rate=st.floats(min_value=0.5, max_value=50.0),
    diameter=st.floats(min_value=4.0, max_value=30.0),
)
def test_kinematics_against_mpmath(volume, rate, diameter):
    k = SyringeKinematics(inner_diameter_mm=diameter)
    vps = oracle_vps_ul(diameter, 0.0018)
    assert volume_to_steps(volume, k) == int(mpfloor(mpf(volume) * 1000 / vps + mpf("0.5")))
    interval_oracle = float(vps * 3600 / (mpf(rate) * 1000))
    assert abs(rate_to_step_interval(rate, k) - interval_oracle) <= math.ulp(interval_oracle)


def test_kinematics_validates_geometry():
    with pytest.raises(ValueError):
        SyringeKinematics(full_step_mm=0.0)
    with pytest.raises(ValueError):
        SyringeKinematics(inner_diameter_mm=-1.0)


# ---------------------------------------------------------------------------
# MAC addresses
# ---------------------------------------------------------------------------

def test_canonical_mac_formats():
    assert canonical_mac("aa:bb:cc:dd:ee:ff") == "AA:BB:CC:DD:EE:FF"
    assert canonical_mac("AA-BB-CC-DD-EE-01") == "AA:BB:CC:DD:EE:01"
    assert canonical_mac("0a:1b:2c:3d:4e:5f") == "0A:1B:2C:3D:4E:5F"


@pytest.mark.parametrize("bad", [
    "", "AA:BB:CC:DD:EE", "AA:BB:CC:DD:EE:FF:00", "GG:BB:CC:DD:EE:FF",
    "AABBCCDDEEFF", "AA:BB:CC:DD:EE:F", "AA BB CC DD EE FF",
])
def test_canonical_mac_rejects_malformed(bad):
    with pytest.raises(ValueError):
        canonical_mac(bad)


@given(st.lists(st.integers(min_value=0, max_value=255), min_size=6, max_size=6),
       st.sampled_from(":-"), st.booleans())
def test_canonical_mac_round_trip(octets, sep, lower):
    text = sep.join(f"{o:02X}" for o in octets)
    if lower:
        text = text.lower()
    canonical = canonical_mac(text)
    assert canonical == ":".join(f"{o:02X}" for o in octets)
    assert canonical_mac(canonical) == canonical


# ---------------------------------------------------------------------------
# quantization and error arithmetic
# ---------------------------------------------------------------------------

def test_quantize_ml_half_up():
    assert quantize_ml(2.0005) == 2.001
    assert quantize_ml(2.00049) == 2.0
    assert round2(2.675) == 2.68  # Decimal half-up where float 2.675 reads 2.67499...


TABLE_ROWS_2_4 = [(2.05, 2.5), (2.07, 3.5), (2.01, 0.5), (2.08, 4.0), (2.06, 3.0)]
TABLE_RATES_2_4 = [(3.96, 1.0), (3.99, 0.25), (3.95, 1.25), (4.1, 2.5), (3.98, 0.5)]
TABLE_ROWS_5_5 = [(5.03, 0.6), (4.93, 1.4), (5.07, 1.4), (5.11, 2.2), (4.99, 0.2)]
TABLE_RATES_5_5 = [(4.97, 0.6), (4.95, 1.0), (5.05, 1.0), (5.03, 0.6), (4.94, 1.2)]


@pytest.mark.parametrize("measured,expected", TABLE_ROWS_2_4)
def test_pct_error_volume_rows_first_setting(measured, expected):
    assert pct_error(measured, 2.0) == expected


@pytest.mark.parametrize("measured,expected", TABLE_RATES_2_4)
def test_pct_error_rate_rows_first_setting(measured, expected):
    assert pct_error(measured, 4.0) == expected


@pytest.mark.parametrize("measured,expected", TABLE_ROWS_5_5 + TABLE_RATES_5_5)
def test_pct_error_rows_second_setting(measured, expected):
    assert pct_error(measured, 5.0) == expected


def test_pct_error_is_symmetric_in_sign():
    assert pct_error(1.95, 2.0) == pct_error(2.05, 2.0) == 2.5


# ---------------------------------------------------------------------------
# profiles, prescriptions, limits
# ---------------------------------------------------------------------------

def _profile(**kw):
    defaults = dict(patient_id="pat-001", max_volume_ml=10.0, max_rate_ml_h=10.0,
                    physician_username="physician1")
    defaults.update(kw)
    return PatientProfile(**defaults)


def _rx(**kw):
    defaults = dict(prescription_id="rx-1", patient_id="pat-001", version=1,
                    volume_ml=2.0, rate_ml_h=4.0)
    defaults.update(kw)
    return Prescription(**defaults)


def test_limits_inclusive_at_boundary():
    verdict = check_limits(10.0, 10.0, _profile())
    assert verdict.ok and verdict.violations == ()


def test_limits_violations_reported_per_field():
    verdict = check_limits(11.0, 12.0, _profile())
    assert not verdict.ok
    assert len(verdict.violations) == 2


def test_validate_prescription_checks_patient_identity():
    with pytest.raises(PatientMismatchError):
        validate_prescription(_rx(patient_id="pat-002"), _profile())


def test_validate_prescription_within_limits():
    assert validate_prescription(_rx(), _profile()).ok


def test_prescription_rejects_nonpositive_values():
    with pytest.raises(ValueError):
        _rx(volume_ml=0.0)
    with pytest.raises(ValueError):
        _rx(rate_ml_h=-4.0)
    with pytest.raises(ValueError):
        _rx(version=0)


def test_profile_rejects_nonpositive_limits():
    with pytest.raises(ValueError):
        _profile(max_volume_ml=0.0)


def test_infusion_record_invariants():
    record = InfusionRecord(record_id="r", patient_id="p", prescription_id="rx",
                            version=1, started_at=0.0, finished_at=10.0,
                            delivered_volume_ml=1.0, mean_rate_ml_h=360.0,
                            outcome=InfusionOutcome.COMPLETED)
    assert record.finished_at >= record.started_at
    with pytest.raises(ValueError):
        InfusionRecord(record_id="r", patient_id="p", prescription_id="rx",
                       version=1, started_at=10.0, finished_at=0.0,
                       delivered_volume_ml=1.0, mean_rate_ml_h=1.0,
                       outcome=InfusionOutcome.COMPLETED)


def test_limit_check_is_frozen_value():
    verdict = LimitCheck(ok=True, violations=())
    with pytest.raises(AttributeError):
        verdict.ok = False
