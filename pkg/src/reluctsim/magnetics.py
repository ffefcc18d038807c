"""
Lumped electromagnetic model of a single-coil reluctance actuator.

Ampere's law over the flux path gives N*i + i_ec = H_iron*l_iron + phi*R_air(z), the coil obeys v = R*i + N*dphi/dt,
and the eddy currents are lumped as i_ec = -k_ec*dphi/dt. Using H_iron as the state and dB = mu'*dH, these combine
into an explicit equation for dH_iron/dt that never inverts the hysteresis model.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import math
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.interpolate import PchipInterpolator

from .hysteresis import MU0, Direction, ExtremaHistory, GpmParams, gpm_b, mu_gpm

RELUCTANCE_HEADER = ("z_m", "R_air_per_H", "dR_dz_per_Hm")

EXTRAPOLATION_MARGIN = 0.01
"""Linear continuation allowed beyond each end of the reluctance table, as a fraction of its span."""


class InputError(ValueError):
    """Malformed user data. The message carries the location of the problem."""


@dataclasses.dataclass(frozen=True)
class CoilParams:
    R: float
    """Winding resistance [ohm]"""
    N: int
    """Number of turns"""

    def __post_init__(self) -> None:
        if not (math.isfinite(self.R) and self.R > 0):
            raise ValueError(f"coil resistance must be positive: {self.R}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"number of turns must be a positive integer: {self.N}")


@dataclasses.dataclass(frozen=True)
class CoreGeometry:
    l_iron: float
    """Mean length of the iron path [m]"""
    A_iron: float
    """Mean cross-section of the iron path [m^2]"""

    def __post_init__(self) -> None:
        if not (self.l_iron > 0 and self.A_iron > 0 and math.isfinite(self.l_iron) and math.isfinite(self.A_iron)):
            raise ValueError(f"core dimensions must be positive: {self}")


@dataclasses.dataclass(frozen=True)
class EddyParams:
    k_ec: float
    """Eddy current coefficient [A*s/Wb]"""

    def __post_init__(self) -> None:
        if not (math.isfinite(self.k_ec) and self.k_ec >= 0):
            raise ValueError(f"k_ec must be non-negative: {self.k_ec}")


@dataclasses.dataclass(frozen=True, eq=False)
class ReluctanceTable:
    """
    Air gap reluctance sampled against the gap length. Both columns are interpolated with monotone cubic
    Hermite polynomials; when the derivative column is absent, the reluctance interpolant is differentiated.
    """

    z: npt.NDArray[np.float64]
    R_air: npt.NDArray[np.float64]
    dR_dz: npt.NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=np.float64)
        R = np.asarray(self.R_air, dtype=np.float64)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "R_air", R)
        if self.dR_dz is not None:
            object.__setattr__(self, "dR_dz", np.asarray(self.dR_dz, dtype=np.float64))
        if z.ndim != 1 or z.size < 2 or R.shape != z.shape:
            raise ValueError("the reluctance table needs at least two samples of z and R_air")
        if self.dR_dz is not None and self.dR_dz.shape != z.shape:
            raise ValueError("dR_dz must have one value per sample")
        if not np.all(np.isfinite(z)) or not np.all(np.isfinite(R)):
            raise ValueError("non-finite value in the reluctance table")
        if np.any(np.diff(z) <= 0):
            raise ValueError("z must be strictly increasing in the reluctance table")
        if np.any(R <= 0):
            raise ValueError("R_air must be positive at every sample")

    @functools.cached_property
    def _interp(self) -> tuple[PchipInterpolator, PchipInterpolator]:
        r = PchipInterpolator(self.z, self.R_air, extrapolate=False)
        d = PchipInterpolator(self.z, self.dR_dz, extrapolate=False) if self.dR_dz is not None else r.derivative()
        return r, d

    @property
    def span(self) -> tuple[float, float]:
        return float(self.z[0]), float(self.z[-1])

    @property
    def margin(self) -> float:
        return EXTRAPOLATION_MARGIN * (self.z[-1] - self.z[0])

    def packed(self) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Breakpoints and cubic coefficients (4 x intervals, highest power first) of both interpolants."""
        r, d = self._interp
        cd = d.c
        if cd.shape[0] < 4:
            cd = np.vstack([np.zeros((4 - cd.shape[0], cd.shape[1])), cd])
        return np.ascontiguousarray(r.x), np.ascontiguousarray(r.c), np.ascontiguousarray(cd)

    @staticmethod
    def load_csv(path: str | Path) -> ReluctanceTable:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as ex:
            raise InputError(f"{path}: {ex}") from ex
        return ReluctanceTable.parse_csv(text, str(path))

    @staticmethod
    def parse_csv(text: str, name: str = "<reluctance>") -> ReluctanceTable:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise InputError(f"{name}:1: empty file")
        header = tuple(h.strip() for h in rows[0])
        if header not in (RELUCTANCE_HEADER, RELUCTANCE_HEADER[:2]):
            raise InputError(f"{name}:1: expected header {','.join(RELUCTANCE_HEADER)} (third column optional)")
        cols: list[list[float]] = [[] for _ in header]
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{name}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for k, cell in enumerate(row):
                try:
                    cols[k].append(float(cell))
                except ValueError:
                    raise InputError(f"{name}:{lineno}: not a number: {cell!r}") from None
        try:
            return ReluctanceTable(*[np.array(c) for c in cols])
        except ValueError as ex:
            raise InputError(f"{name}: {ex}") from ex

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        has_d = self.dR_dz is not None
        w.writerow(RELUCTANCE_HEADER if has_d else RELUCTANCE_HEADER[:2])
        for k in range(self.z.size):
            row = [repr(float(self.z[k])), repr(float(self.R_air[k]))]
            if has_d:
                row.append(repr(float(self.dR_dz[k])))
            w.writerow(row)
        return out.getvalue()


def linear_fixture(R0: float, A_gap: float, z_max: float, n: int = 46) -> ReluctanceTable:
    """
    Synthetic gap R_air(z) = R0 + z/(mu0*A_gap): a pole-face gap in series with a constant parasitic gap.
    This is a test fixture standing in for a field-computed table, not measured data.
    """
    z = np.linspace(0.0, z_max, n)
    return ReluctanceTable(z, R0 + z / (MU0 * A_gap), np.full(n, 1.0 / (MU0 * A_gap)))


@dataclasses.dataclass(frozen=True, eq=False)
class MagneticParams:
    coil: CoilParams
    core: CoreGeometry
    eddy: EddyParams
    gpm: GpmParams
    reluctance: ReluctanceTable

    @property
    def damping_factor(self) -> float:
        """N^2/R + k_ec, the total coupling between flux rate and magnetomotive force [A*s/Wb]."""
        return self.coil.N**2 / self.coil.R + self.eddy.k_ec


def reluctance(z: float, table: ReluctanceTable) -> tuple[float, float]:
    """Interpolated (R_air [1/H], dR_air/dz [1/(H*m)]) at gap z [m]."""
    lo, hi = table.span
    m = table.margin
    if not (math.isfinite(z) and lo - m <= z <= hi + m):
        raise ValueError(f"gap {z} m outside the reluctance table span [{lo}, {hi}] m")
    r, d = table._interp
    k = int(np.searchsorted(table.z, z))
    if k < table.z.size and table.z[k] == z:
        # knots return the stored samples, free of polynomial rounding
        dR = float(table.dR_dz[k]) if table.dR_dz is not None else float(d(z))
        return float(table.R_air[k]), dR
    if z < lo or z > hi:
        e = lo if z < lo else hi
        dz = z - e
        return float(r(e) + r.derivative()(e) * dz), float(d(e) + d.derivative()(e) * dz)
    return float(r(z)), float(d(z))


def eddy_current(phi_dot: float, p: EddyParams) -> float:
    return -p.k_ec * phi_dot


def h_field_derivative(
    H_iron: float, z: float, hist: ExtremaHistory, direction: Direction, v: float, params: MagneticParams
) -> float:
    """Rate of change of the iron field intensity [A/m/s] under coil voltage v."""
    c = params
    mu = mu_gpm(H_iron, hist, direction, c.gpm)
    if not mu > 0:
        raise ValueError(f"incremental permeability is not positive: {mu}")
    B = gpm_b(H_iron, hist, direction, c.gpm)
    R_air, _ = reluctance(z, c.reluctance)
    num = c.coil.N / c.coil.R * v - c.core.A_iron * B * R_air - H_iron * c.core.l_iron
    return num / (c.damping_factor * c.core.A_iron * mu)


def coil_current(
    H_iron: float, z: float, hist: ExtremaHistory, direction: Direction, H_dot: float, params: MagneticParams
) -> float:
    c = params
    phi = c.core.A_iron * gpm_b(H_iron, hist, direction, c.gpm)
    phi_dot = c.core.A_iron * mu_gpm(H_iron, hist, direction, c.gpm) * H_dot
    R_air, _ = reluctance(z, c.reluctance)
    return (H_iron * c.core.l_iron + phi * R_air + c.eddy.k_ec * phi_dot) / c.coil.N


def h_static_from_measurement(i: float, phi: float, z: float, params: MagneticParams) -> float:
    """Iron field intensity from measured current and flux, neglecting eddy currents."""
    R_air, _ = reluctance(z, params.reluctance)
    return (params.coil.N * i - phi * R_air) / params.core.l_iron


def magnetic_force(H_iron: float, z: float, hist: ExtremaHistory, direction: Direction, params: MagneticParams) -> float:
    """Reluctance force [N]; negative values act to close the gap."""
    B = gpm_b(H_iron, hist, direction, params.gpm)
    _, dR = reluctance(z, params.reluctance)
    return -0.5 * (params.core.A_iron * B) ** 2 * dR
