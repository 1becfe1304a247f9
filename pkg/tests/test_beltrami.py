import numpy as np
import pytest

from eulerci.beltrami import (FAMILY_EVEN, FAMILY_ODD, LAMBDA_BAR, WaveSet, beltrami_field,
                              check_bk_identity, default_waveset, search_families)
from eulerci.fields import AliasingError, Grid3, curl, div


def test_families_on_sphere_and_disjoint():
    ws = default_waveset()
    for fam in ws.families.values():
        assert np.all(np.sum(fam.pairs ** 2, axis=1) == LAMBDA_BAR ** 2)
    assert ws.n_vectors() == 24


def test_bk_vectors():
    ws = default_waveset()
    for fam in ws.families.values():
        for k, A, B in zip(fam.khat, fam.A, fam.B):
            assert abs(k @ A) < 1e-15
            assert np.linalg.norm(A) == pytest.approx(2 ** -0.5)
            assert abs(B @ k) < 1e-15
            # i k x B = B
            assert np.allclose(1j * np.cross(k, B), B)
    assert check_bk_identity(ws) < 1e-14


def test_frozen_constants():
    ws = default_waveset()
    assert ws.r0 == pytest.approx(0.07105874133489512, rel=1e-12)
    assert ws.gamma_max() == pytest.approx(0.75 / np.sqrt(2), rel=1e-12)
    assert ws.geometric_M() == pytest.approx(763.9566834342266, rel=1e-12)


def test_r0_against_sampling_oracle():
    # random operator-norm perturbations never push g below half its identity value
    ws = default_waveset()
    rng = np.random.default_rng(7)
    for fam in ws.families.values():
        g0 = fam.g_identity()
        for _ in range(2000):
            S = rng.normal(size=(3, 3))
            S = S + S.T
            S *= ws.r0 / np.abs(np.linalg.eigvalsh(S)).max()
            assert np.all(fam.g(np.eye(3) + S) >= 0.5 * g0 - 1e-13)
        # the extreme direction attains the bound
        p = int(np.argmin(g0 / fam.nuclear_norms()))
        w, V = np.linalg.eigh(fam.G[p])
        S = -ws.r0 * V @ np.diag(np.sign(w)) @ V.T
        if np.isclose(fam.radius(), ws.r0):
            assert fam.g(np.eye(3) + S)[p] == pytest.approx(0.5 * g0[p], rel=1e-9)


def test_search_reproduces_frozen_families():
    found = search_families()
    frozen = {frozenset(map(tuple, FAMILY_EVEN)), frozenset(map(tuple, FAMILY_ODD))}
    assert {frozenset(map(tuple, f)) for f in found[:2]} == frozen


def test_field_is_curl_eigenfield():
    ws = default_waveset()
    g = Grid3(32)
    rng = np.random.default_rng(3)
    for name in ("even", "odd"):
        a = rng.normal(size=6) + 1j * rng.normal(size=6)
        W = beltrami_field(ws, name, a, 2, g)
        assert np.max(np.abs(div(W).physical())) < 1e-12
        c = curl(W).physical()
        assert np.max(np.abs(c - 2 * LAMBDA_BAR * W.physical())) < 1e-11 * np.abs(c).max()


def test_field_aliasing_refused():
    with pytest.raises(AliasingError):
        beltrami_field(default_waveset(), "even", np.ones(6), 4, Grid3(32))


def test_disjointness_enforced():
    with pytest.raises(ValueError):
        WaveSet(even=FAMILY_EVEN, odd=FAMILY_EVEN)
