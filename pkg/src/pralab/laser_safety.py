"""Eye-safety arithmetic for the spoofing laser: pulse energy, MPE, exposed area."""

from __future__ import annotations

from dataclasses import dataclass

# values printed alongside the formulas; kept for the report footnotes
REPORTED_MPE_JM2 = 6.36
REPORTED_AREA_MM2 = 26.42


@dataclass(frozen=True)
class LaserParams:
    peak_power_w: float = 70.0
    pulse_width_s: float = 40e-9
    wavelength_nm: float = 905.0
    exposure_time_s: float = 0.25
    pulses_in_exposure: int = 1

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def pulse_energy(p: LaserParams) -> float:
    """Energy of one pulse in joules."""
    return p.peak_power_w * p.pulse_width_s


def mpe(t_s: float, wavelength_nm: float) -> float:
    """Maximum permissible exposure in J/m^2 for 700-1050 nm."""
    if not t_s > 0:
        raise ValueError("exposure time must be positive")
    if not 700.0 <= wavelength_nm <= 1050.0:
        raise ValueError(f"wavelength {wavelength_nm} nm outside the 700-1050 nm band")
    return 18.0 * t_s ** 0.75 * 10.0 ** ((wavelength_nm - 700.0) / 500.0)


def min_radiated_area(total_energy_j: float, mpe_jm2: float) -> float:
    """Smallest beam area (m^2) keeping the fluence at or below the MPE."""
    if not mpe_jm2 > 0:
        raise ValueError("MPE must be positive")
    return total_energy_j / mpe_jm2


@dataclass(frozen=True)
class SafetyReport:
    params: LaserParams
    pulse_energy_j: float
    total_energy_j: float
    mpe_jm2: float
    min_area_m2: float
    footnotes: tuple[str, ...]

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("peak power", f"{self.params.peak_power_w:g} W"),
            ("pulse width", f"{self.params.pulse_width_s * 1e9:g} ns"),
            ("wavelength", f"{self.params.wavelength_nm:g} nm"),
            ("exposure time", f"{self.params.exposure_time_s:g} s"),
            ("pulses in exposure", f"{self.params.pulses_in_exposure}"),
            ("pulse energy", f"{self.pulse_energy_j * 1e6:.4g} uJ"),
            ("total energy", f"{self.total_energy_j * 1e6:.6g} uJ"),
            ("MPE", f"{self.mpe_jm2:.5g} J/m^2"),
            ("min radiated area", f"{self.min_area_m2 * 1e6:.5g} mm^2"),
        ]

    def to_text(self) -> str:
        width = max(len(k) for k, _ in self.rows())
        lines = [f"{k:<{width}}  {v}" for k, v in self.rows()]
        lines += [""] + [f"[{i + 1}] {note}" for i, note in enumerate(self.footnotes)]
        return "\n".join(lines) + "\n"


def safety_report(p: LaserParams = LaserParams()) -> SafetyReport:
    e = pulse_energy(p)
    total = e * p.pulses_in_exposure
    m = mpe(p.exposure_time_s, p.wavelength_nm)
    area = min_radiated_area(total, m)
    notes = []
    bare = 18.0 * p.exposure_time_s ** 0.75
    if abs(m - REPORTED_MPE_JM2) > 0.005 and abs(bare - REPORTED_MPE_JM2) < 0.005:
        notes.append(
            f"MPE computed with the wavelength factor is {m:.4g} J/m^2; the commonly quoted "
            f"{REPORTED_MPE_JM2} J/m^2 equals 18*t^0.75 without it ({bare:.4g} J/m^2)."
        )
    quoted_area = 2.8e-6 / REPORTED_MPE_JM2
    notes.append(
        f"2.8 uJ / {REPORTED_MPE_JM2} J/m^2 = {quoted_area * 1e6:.4g} mm^2, not the quoted "
        f"{REPORTED_AREA_MM2} mm^2; that figure matches about "
        f"{REPORTED_AREA_MM2 * 1e-6 * REPORTED_MPE_JM2 / 2.8e-6:.0f} pulses of 2.8 uJ."
    )
    return SafetyReport(p, e, total, m, area, tuple(notes))
