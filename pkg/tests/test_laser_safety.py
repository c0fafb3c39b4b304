import math

import pytest

from pralab.laser_safety import (
    REPORTED_AREA_MM2, REPORTED_MPE_JM2, LaserParams, min_radiated_area, mpe, pulse_energy,
    safety_report,
)


def test_pulse_energy_exact():
    assert pulse_energy(LaserParams()) == 70.0 * 40e-9
    assert pulse_energy(LaserParams()) * 1e6 == pytest.approx(2.8, abs=1e-12)


def test_mpe_values():
    # 18 t^0.75 C4 with C4 = 10^((lambda - 700)/500)
    assert mpe(0.25, 905.0) == pytest.approx(18 * 0.25 ** 0.75 * 10 ** 0.41, rel=1e-12)
    assert mpe(0.25, 905.0) == pytest.approx(16.357, abs=1e-3)
    assert mpe(1.0, 700.0) == pytest.approx(18.0)
    assert mpe(0.25, 700.0) == pytest.approx(6.364, abs=1e-3)


@pytest.mark.parametrize("t, wl", [(0.25, 600.0), (0.25, 1100.0), (0.0, 905.0), (-1.0, 905.0)])
def test_mpe_domain(t, wl):
    with pytest.raises(ValueError):
        mpe(t, wl)


def test_min_area():
    assert min_radiated_area(2.8e-6, 6.36) * 1e6 == pytest.approx(0.4403, abs=1e-4)
    assert min_radiated_area(168e-6, 6.36) * 1e6 == pytest.approx(26.42, abs=0.01)
    with pytest.raises(ValueError):
        min_radiated_area(1.0, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        LaserParams(peak_power_w=0)


def test_report_rows_and_footnotes():
    rep = safety_report()
    rows = dict(rep.rows())
    assert rows["pulse energy"] == "2.8 uJ"
    assert rep.min_area_m2 == pytest.approx(rep.total_energy_j / rep.mpe_jm2)
    assert len(rep.footnotes) == 2
    assert str(REPORTED_MPE_JM2) in rep.footnotes[0]
    assert str(REPORTED_AREA_MM2) in rep.footnotes[1]
    text = rep.to_text()
    assert "[1]" in text and "[2]" in text


def test_report_pulse_count():
    rep = safety_report(LaserParams(pulses_in_exposure=60))
    assert rep.total_energy_j == pytest.approx(168e-6)
    assert math.isclose(rep.min_area_m2, 168e-6 / rep.mpe_jm2)
