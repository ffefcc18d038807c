"""
Derivative-free minimization for the identification stages: Nelder-Mead in a transformed space where positive
parameters are searched in log scale and bounds are enforced by a periodic map, restarted from the best point
until restarts stop paying off.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt
import scipy.optimize


@dataclasses.dataclass(frozen=True)
class FitResult:
    params: dict[str, float]
    objective: float
    iterations: int
    evaluations: int
    converged: bool
    message: str = ""
    value: object = None
    """The fitted model object, where one exists"""

    def __post_init__(self) -> None:
        if not self.objective >= 0:
            raise ValueError(f"objective must be non-negative: {self.objective}")

    def to_json(self) -> dict:
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "evaluations": int(self.evaluations),
            "converged": bool(self.converged),
            "message": self.message,
        }


@dataclasses.dataclass(frozen=True)
class MinimizeOptions:
    xrtol: float = 1e-6
    """Parameter tolerance, relative (absolute in the log-scaled coordinates)"""
    frtol: float = 1e-9
    """Objective tolerance, relative to the objective at the initial point"""
    maxiter: int = 2000
    """Iterations per run"""
    restarts: int = 3
    initial_step: float = 0.1
    """Initial simplex edge in the searched coordinates"""


class _Transform:
    """Maps unconstrained search coordinates u to parameters x, respecting bounds and log scaling."""

    def __init__(self, bounds: Sequence[tuple[float | None, float | None]], log: Sequence[bool]) -> None:
        self.log = np.array(log, dtype=bool)
        lo = np.array([-math.inf if b[0] is None else b[0] for b in bounds], dtype=float)
        hi = np.array([math.inf if b[1] is None else b[1] for b in bounds], dtype=float)
        if np.any(lo >= hi):
            raise ValueError("every lower bound must be below its upper bound")
        if np.any(self.log & (lo < 0)):
            raise ValueError("log-scaled parameters cannot have a negative lower bound")
        with np.errstate(divide="ignore"):
            self.lo = np.where(self.log, np.log(np.maximum(lo, 0.0)), lo)
            self.hi = np.where(self.log, np.log(hi), hi)
        self.x_lo = lo
        self.x_hi = hi

    def _y(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        y = u.copy()
        both = np.isfinite(self.lo) & np.isfinite(self.hi)
        lower = np.isfinite(self.lo) & ~np.isfinite(self.hi)
        upper = ~np.isfinite(self.lo) & np.isfinite(self.hi)
        y[both] = self.lo[both] + (self.hi[both] - self.lo[both]) * 0.5 * (1.0 + np.sin(u[both]))
        y[lower] = self.lo[lower] + u[lower] ** 2
        y[upper] = self.hi[upper] - u[upper] ** 2
        return y

    def x(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        y = self._y(u)
        x = np.where(self.log, np.exp(y), y)
        # Rounding in exp/sin must not step outside the box.
        return np.clip(x, self.x_lo, self.x_hi)

    def scaled(self, x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        y = np.array(x, dtype=float)
        y[self.log] = np.log(y[self.log])
        return y

    def u(self, x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        y = self.scaled(x)
        u = y.copy()
        both = np.isfinite(self.lo) & np.isfinite(self.hi)
        lower = np.isfinite(self.lo) & ~np.isfinite(self.hi)
        upper = ~np.isfinite(self.lo) & np.isfinite(self.hi)
        s = np.clip(2.0 * (y[both] - self.lo[both]) / (self.hi[both] - self.lo[both]) - 1.0, -1.0, 1.0)
        u[both] = np.arcsin(s)
        u[lower] = np.sqrt(np.maximum(y[lower] - self.lo[lower], 0.0))
        u[upper] = np.sqrt(np.maximum(self.hi[upper] - y[upper], 0.0))
        return u

    def simplex(self, x0: npt.NDArray[np.float64], step: float, signs: npt.NDArray[np.float64]):
        """Initial simplex around x0 whose edges are about ``step`` long in the log-scaled coordinates."""
        y0 = self.scaled(x0)
        n = x0.size
        verts = [self.u(x0)]
        for k in range(n):
            y = y0.copy()
            d = step if self.log[k] else step * (abs(y0[k]) if y0[k] != 0 else 1.0)
            d *= signs[k]
            if not (self.lo[k] <= y[k] + d <= self.hi[k]):
                d = -d
            y[k] += d
            x = np.where(self.log, np.exp(y), y)
            uk = self.u(np.clip(x, self.x_lo, self.x_hi))
            if np.allclose(uk, verts[0]):
                uk[k] += step  # at a bound the periodic map is flat
            verts.append(uk)
        return np.array(verts)


def minimize(
    objective: Callable[[npt.NDArray[np.float64]], float],
    initial: Sequence[float],
    bounds: Sequence[tuple[float | None, float | None]] | None = None,
    options: MinimizeOptions | None = None,
    log: Sequence[bool] | None = None,
    names: Sequence[str] | None = None,
    seed: int | None = None,
) -> FitResult:
    """
    Nelder-Mead with restarts. Parameters with a positive lower bound are searched in log scale unless ``log`` says
    otherwise. Candidates where the objective raises or is not finite are rejected. The reported objective never
    exceeds the objective at the initial point. The objective is an error measure and must be non-negative.
    """
    options = options or MinimizeOptions()
    x0 = np.asarray(initial, dtype=float)
    n = x0.size
    bounds = list(bounds) if bounds is not None else [(None, None)] * n
    if len(bounds) != n:
        raise ValueError("one bound pair per parameter is required")
    for k, (lo, hi) in enumerate(bounds):
        if (lo is not None and x0[k] < lo) or (hi is not None and x0[k] > hi):
            raise ValueError(f"initial parameter {k} = {x0[k]} outside its bounds")
    if log is None:
        log = [lo is not None and lo > 0 for lo, _ in bounds]
    if any(lg and x0[k] <= 0 for k, lg in enumerate(log)):
        raise ValueError("log-scaled parameters must start positive")
    tr = _Transform(bounds, log)
    names = list(names) if names is not None else [f"x{k}" for k in range(n)]
    f0 = float(objective(x0))
    if not math.isfinite(f0):
        raise ValueError(f"objective is not finite at the initial point: {f0}")
    rng = np.random.default_rng(seed)

    evaluations = 0
    best_x, best_f = x0.copy(), f0

    def fu(u: npt.NDArray[np.float64]) -> float:
        nonlocal evaluations, best_x, best_f
        evaluations += 1
        x = tr.x(u)
        try:
            f = float(objective(x))
        except (ValueError, ArithmeticError, RuntimeError):
            return math.inf
        if not math.isfinite(f):
            return math.inf
        if f < best_f:
            best_x, best_f = x.copy(), f
        return f

    iterations = 0
    converged = False
    message = ""
    for run in range(options.restarts + 1):
        f_start = best_f
        signs = np.ones(n) if seed is None or run == 0 else rng.choice([-1.0, 1.0], size=n)
        sim = tr.simplex(best_x, options.initial_step, signs)
        res = scipy.optimize.minimize(
            fu,
            sim[0],
            method="Nelder-Mead",
            options={
                "initial_simplex": sim,
                "xatol": options.xrtol,
                "fatol": options.frtol * max(abs(f0), 1e-300),
                "maxiter": options.maxiter,
                "maxfev": 10 * options.maxiter * max(n, 1),
                "adaptive": n > 3,
            },
        )
        iterations += int(res.nit)
        converged = bool(res.success)
        message = str(res.message)
        if run > 0 and f_start - best_f <= options.frtol * abs(f0):
            break
    return FitResult(
        dict(zip(names, map(float, best_x))), best_f, iterations, evaluations + 1, converged, message, best_x
    )
