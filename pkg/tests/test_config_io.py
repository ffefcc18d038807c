from __future__ import annotations

import json

import numpy as np
import pytest

from reluctsim import io
from reluctsim.config import DEFAULT, Config, ConfigError
from reluctsim.fixtures import valve_params
from reluctsim.hybrid import SimConfig, VoltageWaveform, rest_state, simulate
from reluctsim.hysteresis import MU0, TABLE_IV, demag_history
from reluctsim.identify import ExperimentRecord
from reluctsim.magnetics import InputError


def test_default_matches_fixture():
    cfg = Config.default()
    assert cfg.gpm.rev.mu1 == pytest.approx(168.8 * MU0, rel=1e-15)
    assert cfg.gpm.rev == TABLE_IV.rev
    assert cfg.magnetic.coil.N == 1200 and cfg.mech.z_max == 0.9e-3
    assert np.array_equal(cfg.reluctance.R_air, valve_params().magnetic.reluctance.R_air)


def test_round_trip_is_identity(tmp_path):
    cfg = Config.default()
    path = tmp_path / "c.json"
    cfg.save(path)
    back = Config.load(path)
    assert back.data == cfg.data and back.digest() == cfg.digest()
    back.save(tmp_path / "d.json")
    assert (tmp_path / "d.json").read_bytes() == path.read_bytes()


def test_relative_permeability_expands_and_conflicts():
    raw = json.loads(json.dumps(DEFAULT))
    raw["gpm"]["mu1_rel_mu0"] = 10.0
    assert Config.from_dict(raw).data["gpm"]["mu1"] == pytest.approx(10 * MU0)
    raw["gpm"]["mu1"] = 1e-5
    with pytest.raises(ConfigError, match="both mu1 and mu1_rel_mu0"):
        Config.from_dict(raw)


@pytest.mark.parametrize(
    "section,key,value,match",
    [
        ("coil", "R", "49", "coil.R"),
        ("coil", "N", 12.5, "coil.N"),
        ("mech", "m", -1.0, "mech"),
        ("gpm", "extra", 1.0, "unknown key"),
        ("simulation", "dt", 0.0, "simulation"),
        ("demag", "n", 0, "demag"),
    ],
)
def test_invalid_values_name_their_key(section, key, value, match):
    raw = json.loads(json.dumps(DEFAULT))
    raw[section][key] = value
    with pytest.raises(ConfigError, match=match):
        c = Config.from_dict(raw)
        c.demag


def test_missing_key_and_unknown_section():
    raw = json.loads(json.dumps(DEFAULT))
    del raw["core"]["A_iron"]
    with pytest.raises(ConfigError, match="core: missing"):
        Config.from_dict(raw)
    with pytest.raises(ConfigError, match="unknown section"):
        Config.from_dict({"bogus": {}})


def test_table_path_relative_to_config(tmp_path):
    (tmp_path / "gap.csv").write_text(valve_params().magnetic.reluctance.to_csv())
    raw = json.loads(json.dumps(DEFAULT))
    raw["reluctance"] = {"table": "gap.csv"}
    (tmp_path / "cfg.json").write_text(json.dumps(raw))
    cfg = Config.load(tmp_path / "cfg.json")
    assert np.array_equal(cfg.reluctance.z, valve_params().magnetic.reluctance.z)


def test_invalid_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "coil": {"R": 49,\n}\n')
    with pytest.raises(ConfigError, match="bad.json:3"):
        Config.load(p)


def test_updated_section():
    cfg = Config.default().updated("eddy", {"k_ec": 100.0})
    assert cfg.magnetic.eddy.k_ec == 100.0
    assert cfg.sim_config == SimConfig(t_end=0.1)


# --- files ---------------------------------------------------------------------------------------------------------

def test_waveform_round_trip(tmp_path):
    p = tmp_path / "w.csv"
    io.write_waveform(p, [0.0, 1e-3, 2e-3], [0.0, 24.0, 0.0])
    w = io.read_waveform(p)
    assert np.array_equal(w.t, [0.0, 1e-3, 2e-3]) and np.array_equal(w.v, [0.0, 24.0, 0.0])


@pytest.mark.parametrize(
    "text,match",
    [
        ("t_s,v_V\n0,1\n1e-3,abc\n", "w.csv:3: not a number"),
        ("t_s,v_V\n0,1\n1e-3\n", "w.csv:3: expected 2 fields"),
        ("t,v\n0,1\n", "w.csv:1: expected columns"),
        ("t_s,v_V\n0,1\n0,2\n", "strictly increasing"),
        ("t_s,v_V\n", "no samples"),
        ("t_s,v_V\n0,nan\n", "w.csv:2: non-finite"),
    ],
)
def test_waveform_errors(tmp_path, text, match):
    p = tmp_path / "w.csv"
    p.write_text(text)
    with pytest.raises(InputError, match=match):
        io.read_waveform(p)


def test_experiment_round_trip(tmp_path):
    t = np.arange(6) * 1e-4
    rec = ExperimentRecord(t, np.linspace(0, 1, 6), np.linspace(0, 1e-5, 6), 2e-4, np.full(6, 3.0), "bipolar", 6.0)
    io.write_experiment(tmp_path / "e.csv", rec)
    back = io.read_experiment(tmp_path / "e.csv")
    assert np.array_equal(back.t, rec.t) and np.array_equal(back.i, rec.i) and np.array_equal(back.v, rec.v)
    assert (back.gap, back.wave, back.level) == (2e-4, "bipolar", 6.0)
    (tmp_path / "e.json").unlink()
    with pytest.raises(InputError, match="sidecar"):
        io.read_experiment(tmp_path / "e.csv")


def test_trajectory_and_events_files(tmp_path):
    p = valve_params()
    tr = simulate(rest_state(p, demag_history(100)), VoltageWaveform.pulses([24.0], 20e-3), p, SimConfig(t_end=20e-3))
    io.write_trajectory(tmp_path / "t.csv", tr)
    io.write_events(tmp_path / "e.jsonl", tr)
    cols = io.read_columns(tmp_path / "t.csv", ("t_s", "q", "H_A_per_m", "z_m", "vz_m_per_s", "i_A", "phi_Wb", "F_N", "iec_A"))
    assert np.array_equal(cols["t_s"], tr.t) and np.array_equal(cols["phi_Wb"], tr.phi)
    lines = [json.loads(x) for x in (tmp_path / "e.jsonl").read_text().splitlines()]
    assert lines == [e.to_json() for e in tr.events]
    assert set(lines[0]) == {"t", "kind", "q_from", "q_to"}
