"""
Reference parameter sets: a solenoid valve with the published coil, core, spring and hysteresis constants, and a
synthetic air gap standing in for the field-computed reluctance curve, which is only available as a plot.
"""

from __future__ import annotations

from typing import Sequence

from .hybrid import ActuatorParams, MechParams, VoltageWaveform
from .hysteresis import TABLE_IV, GpmParams
from .magnetics import CoilParams, CoreGeometry, EddyParams, MagneticParams, linear_fixture

VALVE_COIL = CoilParams(R=49.0, N=1200)
VALVE_CORE = CoreGeometry(l_iron=55e-3, A_iron=12.57e-6)
VALVE_EDDY = EddyParams(k_ec=1637.0)
VALVE_MECH = MechParams(m=1.6e-3, k_s=55.0, z_s=15e-3, c=0.0, z_min=0.0, z_max=0.9e-3)

FIXTURE_R0 = 1.0e7
"""Constant parasitic reluctance of the synthetic gap [1/H]"""
FIXTURE_AREA = 2.0e-5
"""Effective pole-face area of the synthetic gap [m^2]"""

PULSE_LEVELS = (18.0, 20.0, 22.0, 24.0, 26.0)
PULSE_PERIOD = 20e-3


def valve_params(
    gpm: GpmParams = TABLE_IV, k_ec: float | None = None, R0: float = FIXTURE_R0, A_gap: float = FIXTURE_AREA
) -> ActuatorParams:
    eddy = VALVE_EDDY if k_ec is None else EddyParams(k_ec)
    table = linear_fixture(R0, A_gap, VALVE_MECH.z_max)
    return ActuatorParams(MagneticParams(VALVE_COIL, VALVE_CORE, eddy, gpm, table), VALVE_MECH)


def valve_pulses(levels: Sequence[float] = PULSE_LEVELS, period: float = PULSE_PERIOD) -> VoltageWaveform:
    """One unipolar pulse per level, on for half of each period; five levels fill 100 ms."""
    return VoltageWaveform.pulses(levels, period, duty=0.5)
