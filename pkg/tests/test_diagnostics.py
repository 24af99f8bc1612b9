import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridpic import oracles
from hybridpic.diagnostics import (CostReport, DiagnosticsRecord, RunMismatchError, Totals, conservation_audit,
                                   diagnostics_header, mean_particle_energy, read_diagnostics, record_for,
                                   step_cost_report, write_diagnostics)
from hybridpic.state import FLUID, SOLID, Particles


def test_energy_at_rest_on_floor_is_zero():
    p = Particles.from_arrays([[0.3, 0.0]], None, 1.0)
    assert mean_particle_energy(p, (0.0, -9.81)) == 0.0


def test_energy_kinetic_example():
    p = Particles.from_arrays([[0.3, 0.0]], [[3.0, 0.0]], 2.0)
    assert mean_particle_energy(p, (0.0, -9.81)) == pytest.approx(9.0)


def test_energy_of_empty_set_is_zero():
    assert mean_particle_energy(Particles.empty(2), (0.0, -9.81)) == 0.0


def test_energy_counts_absorbed_mass_and_floor():
    p = Particles.from_arrays([[0.3, 0.5]], None, 1.0, SOLID)
    p.absorbed[0] = 1.0
    assert mean_particle_energy(p, (0.0, -10.0)) == pytest.approx(10.0)
    # gravity pointing up: the floor is the top of the domain
    assert mean_particle_energy(p, (0.0, 10.0), (1.0, 2.0)) == pytest.approx(2 * 10 * 1.5)


@given(st.integers(0, 2**31))
def test_energy_matches_naive_sum_and_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 300))
    p = Particles.from_arrays(rng.uniform(0, 2, (n, 3)), rng.normal(size=(n, 3)), rng.uniform(0.1, 2, n))
    e = mean_particle_energy(p, (0.0, -9.81, 0.0))
    ref = oracles.mean_energy(p.mass, p.vel, p.pos[:, 1], 9.81)
    assert e == pytest.approx(ref, rel=1e-12)
    perm = rng.permutation(n)
    assert mean_particle_energy(p.subset(perm), (0.0, -9.81, 0.0)) == pytest.approx(e, rel=1e-13)


def test_audit_passes_exact_and_flags_mass_loss():
    t = Totals(10.0, np.array([1.0, 2.0]), 3.0)
    assert conservation_audit(t, Totals(10.0, np.array([1.0, 2.0]))).passed
    bad = conservation_audit(t, Totals(9.9, np.array([1.0, 2.0])))
    assert not bad.passed
    assert bad.mass_error == pytest.approx(0.01)
    assert "FAILED" in bad.describe()


def test_audit_catches_nan():
    t = Totals(1.0, np.array([0.0]), 1.0)
    assert not conservation_audit(t, Totals(float("nan"), np.array([0.0]))).passed


def test_cost_report_ratios():
    assert step_cost_report([1, 1, 1], [2, 2, 2]).ratio == pytest.approx(2.0)
    rep = step_cost_report([0.3, 0.5], [0.3, 0.5], {"seed": 1}, {"seed": 1})
    assert rep.ratio == 1.0
    assert json.loads(rep.to_json())["steps"] == 2
    assert "ratio 1.000" in rep.summary()


def test_cost_report_rejects_mismatched_runs():
    with pytest.raises(RunMismatchError, match="seed"):
        step_cost_report([1], [1], {"seed": 1}, {"seed": 2})
    with pytest.raises(RunMismatchError):
        step_cost_report([1, 2], [1])


def test_csv_header_and_precision(tmp_path):
    assert diagnostics_header(2) == ["step", "time", "mass", "px", "py", "L", "mean_energy", "n_fluid", "n_solid",
                                     "pcg_iters"]
    assert diagnostics_header(3)[3:9] == ["px", "py", "pz", "Lx", "Ly", "Lz"]
    p = Particles.from_arrays([[0.1, 0.2], [0.3, 0.4]], [[1 / 3, 0.0], [0.0, 2 / 7]], [1.0, 2.0], [FLUID, SOLID])
    rec = record_for(p, 1, 0.002, (0.0, -9.81))
    path = tmp_path / "d.csv"
    write_diagnostics(path, [rec], 2)
    back = read_diagnostics(path)
    assert back["px"][0] == rec.momentum[0]
    assert back["mean_energy"][0] == rec.mean_energy
    assert back["n_solid"][0] == 1
    assert path.read_text().splitlines()[1].split(",")[1] == "0.002"
