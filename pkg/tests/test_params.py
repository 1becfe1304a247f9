import math

import pytest
from scipy.optimize import brentq

from eulerci.params import (ParamError, ParamSet, check_constraints, check_orderings,
                            eps0_bound, exponents_from_eps, from_eps, params_from_dict)

from conftest import toy_params


def test_repaired_exponents_frozen():
    binf, bm1 = exponents_from_eps(0.1)
    assert binf == pytest.approx(1 / 3 - 0.3 / 16)
    assert bm1 == pytest.approx(0.1 / 16)
    assert 1 - 3 * (binf + bm1) == pytest.approx(3 * 0.1 / 8)


@pytest.mark.parametrize("b", [1.01, 1.2, 1.5, 2.0])
def test_literal_exponents_violate_main_condition(b):
    binf, bm1 = exponents_from_eps(0.1, "literal")
    beta0 = (bm1 + (b - 1) * binf) / b
    assert 1 - 3 * b * (beta0 + binf) < 0


def test_literal_convention_rejected():
    with pytest.raises(ParamError):
        from_eps(0.1, 2.0, convention="literal")


def test_b_choice_against_root_finder():
    ps = from_eps(0.1, 2.0)
    binf, bm1 = exponents_from_eps(0.1)

    def m1(b):
        beta0 = (bm1 + (b - 1) * binf) / b
        return 1 - 3 * b * (beta0 + binf)

    def m2(b):
        beta0 = (bm1 + (b - 1) * binf) / b
        return 5 * binf - b * (1 + 3 * beta0)
    roots = [brentq(f, 1 + 1e-12, 2.0) for f in (m1, m2) if f(2.0) < 0]
    bstar = min(roots)
    assert ps.b == pytest.approx(1 + (bstar - 1) / 2, rel=1e-9)
    assert check_constraints(ps).ok


def test_beta_family_monotone_and_limits():
    ps = from_eps(0.1, 2.0)
    betas = [ps.beta(j) for j in range(-1, 40)]
    assert all(a < b for a, b in zip(betas, betas[1:]))
    assert ps.beta(-1) == pytest.approx(ps.b * ps.beta0 + (1 - ps.b) * ps.betaInf)
    assert ps.beta(2000) == pytest.approx(ps.betaInf)


def test_lambda_sequence():
    ps = ParamSet.create(b=1.5, betaInf=0.3, beta0=0.1, lambda0=4.0, toy_mode=True)
    assert [ps.lam(q) for q in range(3)] == [4, 8, math.ceil(8 ** 1.5)]
    ps2 = from_eps(0.1, 2.0)
    assert ps2.lam(0) == 2 and ps2.lam(1) == 3


def test_mu_eta_formulas():
    ps = toy_params(lambda0=16, time_lambda0=None, b=1.2)
    lam = float(ps.lam(1))
    b, b0, binf = ps.b, ps.beta0, ps.betaInf
    e = (1 - b0) * (b + 1) / (2 * b) + (b - 1) * binf / 2
    assert ps.mu(1, 0) == pytest.approx(lam ** e)
    assert ps.mu(1, 1) == pytest.approx(lam ** e)
    assert ps.mu(1, 3) == pytest.approx(lam ** (1 - ps.beta(3)))
    assert ps.eta(1, 2) == pytest.approx(lam ** (b * b0 - (b - 1) * binf - ps.beta(2)))
    # for j >= 2, mu/eta = delta_{q+1,-1}^(1/2) lambda_{q+1}
    for j in (2, 3, 5):
        assert ps.mu(1, j) / ps.eta(1, j) == pytest.approx(ps.delta(1, -1) ** 0.5 * lam)


def test_eps0_bound_formula():
    assert eps0_bound(1.5, 0.1, 0.2) == pytest.approx(0.5 * (1 - 4.5 * 0.3) / 12)


def test_validate_b_equal_one():
    with pytest.raises(ParamError, match="b_gt_1"):
        ParamSet.create(b=1.0, betaInf=0.3, beta0=0.01)


def test_toy_mode_warns_instead():
    with pytest.warns(UserWarning, match="toy mode"):
        ParamSet.create(b=1.0, betaInf=0.3, beta0=0.01, toy_mode=True)


def test_time_lambda0_only_in_toy():
    with pytest.raises(ParamError):
        ParamSet.create(b=1.5, betaInf=0.3, beta0=0.1, time_lambda0=10.0)


def test_orderings_report_lambda0_dependence():
    rep = check_orderings(from_eps(0.1, 2.0), q_max=1)
    assert rep.records
    for r in rep.failures():
        assert r["lambda0_dependent"] or r["name"] == "mu_eta_identity"


def test_config_roundtrip_and_unknown_keys():
    ps = toy_params()
    again = ParamSet(**ps.to_dict())
    assert again.fingerprint() == ps.fingerprint()
    with pytest.raises(ParamError):
        params_from_dict({"b": 1.5, "betaInf": 0.3, "beta0": 0.1, "bogus": 1})


def test_geometric_M_resolves():
    ps = toy_params()
    assert ps.M == pytest.approx(763.9566834342266)
