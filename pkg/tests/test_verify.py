import csv
import math

import numpy as np
import pytest

from eulerci.fields import Grid3
from eulerci.iteration import initial_triple
from eulerci.params import from_eps
from eulerci.verify import (EstimateRecord, beltrami_solution_residual, cet_fit,
                            check_inductive, convergence_order, energy_and_l1_holder,
                            holder_majorant, initial_energy, initial_threshold,
                            schauder_constants, summarize, support_band,
                            trivial_phase_triple, triple_invariants, write_records_csv)

from conftest import toy_params


def test_record_pass_and_ratio():
    r = EstimateRecord(1, 0.5, "H", 0, "v_local", 2.0, 4.0)
    assert r.ratio == 0.5 and r.passed
    assert not EstimateRecord(1, 0.5, "H", 0, "v_local", 4.1, 4.0).passed
    s = summarize([r, EstimateRecord(2, 0.6, "K", 0, "v_local", 5.0, 4.0, hard=False)])
    assert s["ok"] and s["hard"] == 1 and s["worst"]["v_local"]["ratio"] == 1.25


def test_records_csv(tmp_path):
    p = tmp_path / "r.csv"
    write_records_csv([EstimateRecord(1, 0.5, "H", 0, "w_sup", 1.0, 2.0)], p)
    rows = list(csv.DictReader(open(p)))
    assert rows[0]["quantity"] == "w_sup" and rows[0]["pass"] == "True"


def test_convergence_order_exact_power():
    hs = [0.1, 0.05, 0.025]
    assert convergence_order(hs, [3 * h ** 4 for h in hs]) == pytest.approx(4.0)


def test_support_band():
    assert support_band(0) == (0.25, 0.75)
    assert support_band(1) == (0.125, 0.875)


def test_beltrami_steady_solution():
    res, sup = beltrami_solution_residual(grid=Grid3(32), lam=1)
    assert res < 1e-10 * sup ** 2


def test_initial_threshold_frozen():
    th = initial_threshold(from_eps(0.1, 2.0), M=3)
    assert th["by_estimate"]["v_local"] == pytest.approx(1 + math.sqrt(2), rel=1e-9)
    assert th["by_estimate"]["R_local"] == pytest.approx(131.64, rel=1e-3)
    assert th["by_estimate"]["DtR_local"] == pytest.approx(54.85, rel=1e-3)
    assert th["threshold"] == th["by_estimate"]["R_local"]


def test_initial_energy_closed_form():
    ps = toy_params(lambda0=4)
    tr = initial_triple(ps, Grid3(16), 1 / 64)
    out = energy_and_l1_holder([tr], stride=4, holder_stride=16)
    lev = out["levels"][0]
    assert lev["analytic_error"] < 1e-10 * max(lev["energy"])
    assert lev["support_ok"] and lev["nontrivial"]
    assert initial_energy(ps, 0.5) == pytest.approx(0.5 * (2 * np.pi) ** 3 * 4.0 ** (-2 * ps.beta0))


def test_holder_majorant_level0():
    ps = toy_params(lambda0=4)
    tr = initial_triple(ps, Grid3(16), 1 / 64)
    tot, terms = holder_majorant([tr], 0.2)
    assert tot == pytest.approx(0.25 * 4.0 ** (0.2 - ps.beta(-1)))


def test_level0_records_toy_are_reports():
    ps = toy_params(lambda0=4)
    tr = initial_triple(ps, Grid3(16), 1 / 64)
    recs = check_inductive(tr, stride=8, M=3)
    assert recs and not any(r.hard for r in recs)
    assert {r.quantity for r in recs} >= {"v_local", "R_local", "DtR_local"}


def test_trivial_phase_triple_is_traceless():
    ps = toy_params(lambda0=2)
    tr = trivial_phase_triple(ps, Grid3(16))
    inv = triple_invariants(tr, stride=4)
    assert inv["trace_rel"] < 1e-13


def test_cet_fit_quick():
    out = cet_fit(grid=Grid3(16), band=3)
    assert out["pass"]
    assert out["constant_factor_error"] < 1e-12


def test_schauder_reports():
    out = schauder_constants(grid=Grid3(16), bands=(2, 4))
    assert out
