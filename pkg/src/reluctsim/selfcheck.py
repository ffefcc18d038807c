"""Fast invariant checks on a configuration, each reported as a named pass/fail line."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import integrate

from .config import Config, _normalize
from .hybrid import SimConfig, VoltageWaveform, guards, rest_state, simulate
from .hysteresis import (
    MU0,
    Direction,
    ExtremaHistory,
    GpmParams,
    PreisachTracker,
    RevParams,
    b_rev,
    demag_history,
    gpm_b,
    preisach_density,
    triangle_integral,
)
from .magnetics import reluctance


@dataclasses.dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _triangle_oracle(gp: GpmParams) -> str:
    worst = 0.0
    for a, b in ((1e3, -1e3), (500.0, 100.0), (gp.alpha0, gp.beta0)):
        ref, _ = integrate.dblquad(
            lambda beta, alpha: preisach_density(alpha, beta, gp.dist),
            b, a, lambda alpha: b, lambda alpha: alpha, epsabs=1e-14, epsrel=1e-11,
        )
        worst = max(worst, abs(triangle_integral(a, b, gp.dist) - ref) / ref)
    if worst > 1e-6:
        raise AssertionError(f"relative error {worst:.2e}")
    return f"max relative error {worst:.1e}"


def _permeability(gp: GpmParams) -> str:
    hist = ExtremaHistory((800.0,), (-600.0,), gp.alpha0, gp.beta0)
    worst = 0.0
    eps = 1e-2
    for H in (-400.0, 0.0, 350.0, 700.0):
        tr = PreisachTracker(gp, hist, H - 2 * eps)
        b = tr.replay([H - eps, H, H + eps])
        tr2 = PreisachTracker(gp, hist, H)
        fd = (b[2] - b[0]) / (2 * eps)
        mu = tr2.mu()
        worst = max(worst, abs(fd - mu) / mu)
    if worst > 1e-4:
        raise AssertionError(f"relative error {worst:.2e}")
    return f"max relative error {worst:.1e}"


def _saturation(gp: GpmParams) -> str:
    hist = ExtremaHistory((), (), gp.alpha0, gp.beta0)
    B = gpm_b(gp.alpha0, hist, Direction.INCREASING, gp)
    ref = b_rev(gp.alpha0, gp.rev) + gp.b_irr_sat
    if abs(B - ref) > 1e-9 * abs(ref):
        raise AssertionError(f"B(alpha0) = {B}, expected {ref}")
    return f"B(alpha0) = {B:.6f} T"


def _rev_positive(cfg: dict[str, Any]) -> str:
    g = cfg["gpm"]
    rev = RevParams(g["mu1"], g["mu2"], g["H1"], g["H2"])
    return f"minimum {rev.min_permeability() / MU0:.4g} mu0"


def _reluctance(cfg: Config) -> str:
    t = cfg.reluctance
    me = cfg.mech
    lo, hi = t.span
    if lo > me.z_min or hi < me.z_max:
        raise AssertionError(f"table [{lo}, {hi}] does not cover the stroke")
    zz = np.linspace(lo, hi, 501)
    R = np.array([reluctance(z, t)[0] for z in zz])
    if np.any(R <= 0):
        raise AssertionError("non-positive interpolated reluctance")
    return f"{t.z.size} samples, R in [{R.min():.4g}, {R.max():.4g}] 1/H"


def _guards(cfg: Config) -> str:
    p = cfg.actuator
    n, rng = cfg.demag
    s = rest_state(p, demag_history(n, rng))
    enabled = guards(s, 0.0, p)
    if enabled:
        raise AssertionError(f"guards enabled at rest: {enabled}")
    tr = simulate(s, VoltageWaveform.constant(0.0), p, SimConfig(t_end=1e-3, dt=cfg.sim_config.dt))
    if tr.events or np.max(np.abs(tr.H - s.H)) > 1e-6 * max(1.0, abs(s.H)):
        raise AssertionError("the rest state does not stay at rest")
    return f"rest at H = {s.H:.4g} A/m, mode {int(s.q)}"


def _ampere(cfg: Config) -> str:
    p = cfg.actuator
    n, rng = cfg.demag
    s = rest_state(p, demag_history(n, rng))
    c = p.magnetic
    tr = simulate(s, VoltageWaveform.pulses([24.0], 4e-3), p, SimConfig(t_end=4e-3, dt=cfg.sim_config.dt))
    lhs = c.coil.N * tr.i + tr.iec
    rhs = tr.H * c.core.l_iron + tr.phi * tr.R_air
    scale = np.abs(c.coil.N * tr.i) + np.abs(tr.iec) + np.abs(tr.H * c.core.l_iron) + np.abs(tr.phi * tr.R_air)
    worst = float(np.max(np.abs(lhs - rhs) / np.maximum(scale, 1e-300)))
    if worst > 1e-12:
        raise AssertionError(f"relative residual {worst:.2e}")
    return f"{len(tr)} records, residual {worst:.1e}, {len(tr.events)} jumps"


def run(cfg_raw: dict[str, Any] | None = None, base_dir: str | Path = ".") -> list[Check]:
    """Checks in order; later ones need a fully valid configuration and are skipped otherwise."""
    checks: list[Check] = []

    def check(name: str, fn: Callable[[], str]) -> bool:
        try:
            checks.append(Check(name, True, fn()))
        except (AssertionError, ValueError, ArithmeticError, RuntimeError) as ex:
            checks.append(Check(name, False, str(ex)))
        return checks[-1].passed

    raw = cfg_raw if cfg_raw is not None else Config.default().to_dict()
    norm: dict[str, Any] = {}

    def schema() -> str:
        norm.update(_normalize(raw, Path(base_dir)))
        return "all sections well formed"

    if not check("config-schema", schema):
        return checks
    ok = check("rev-permeability-positive", lambda: _rev_positive(norm))
    ok &= check("reluctance-table", lambda: _reluctance(Config(norm)))
    ok &= check("config-values", lambda: (Config.from_dict(norm), "every section valid")[1])
    if not ok:
        return checks
    cfg = Config.from_dict(norm)
    gp = cfg.gpm
    check("triangle-oracle", lambda: _triangle_oracle(gp))
    check("permeability-finite-difference", lambda: _permeability(gp))
    check("saturation-identity", lambda: _saturation(gp))
    check("guards-at-rest", lambda: _guards(cfg))
    check("ampere-balance", lambda: _ampere(cfg))
    return checks


def format_table(checks: list[Check]) -> str:
    w = max(len(c.name) for c in checks)
    return "\n".join(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{w}}  {c.detail}" for c in checks)
