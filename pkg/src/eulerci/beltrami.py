"""Beltrami wave families on the integer sphere |k|^2 = 25 and their amplitude functionals.

Each family is stored as six +/- pairs.  For a symmetric matrix R the six
coefficients g_p(R) solve R = sum_p g_p(R) (Id - k_p k_p^T / |k_p|^2), so that
with gamma_p = sqrt(g_p) and gamma_{-k} = gamma_k

    R = 1/2 sum_{k in family} gamma_k(R)^2 (Id - khat khat^T).
"""
from __future__ import annotations

import functools
import itertools
import json

import numpy as np

from .fields import Field, Grid3, AliasingError, TENSOR_INDEX

LAMBDA_BAR = 5

# frozen output of search_families(): best positivity radius, then best conditioning
FAMILY_EVEN = ((0, 3, -4), (0, 3, 4), (3, -4, 0), (3, 4, 0), (4, 0, -3), (4, 0, 3))
FAMILY_ODD = ((0, 4, -3), (0, 4, 3), (3, 0, -4), (3, 0, 4), (4, -3, 0), (4, 3, 0))


class WaveSetError(ValueError):
    pass


def _sym6(m):
    """Coordinates of symmetric matrices (..., 3, 3) in the TENSOR_INDEX order."""
    return np.stack([m[..., a, b] for a, b in TENSOR_INDEX], axis=-1)


def frame_vector(k):
    """A_k: unit normal to k (e3 x k, or e1 x k if k is parallel to e3) scaled to 1/sqrt(2)."""
    k = np.asarray(k, float)
    a = np.cross([0.0, 0.0, 1.0], k)
    if np.linalg.norm(a) < 1e-12:
        a = np.cross([1.0, 0.0, 0.0], k)
    return a / np.linalg.norm(a) / np.sqrt(2.0)


class Family:
    def __init__(self, pairs):
        self.pairs = np.array(pairs, dtype=int)
        k = self.pairs.astype(float)
        norms = np.linalg.norm(k, axis=1)
        if not np.allclose(norms, norms[0]):
            raise WaveSetError("family vectors must share one length")
        self.khat = k / norms[:, None]
        self.projectors = np.eye(3)[None] - np.einsum("pi,pj->pij", self.khat, self.khat)
        basis = _sym6(self.projectors).T  # 6 x 6, column p = projector p
        if abs(np.linalg.det(basis)) < 1e-10:
            raise WaveSetError("projectors do not span the symmetric matrices")
        self.basis = basis
        self.inverse = np.linalg.inv(basis)
        # g_p(R) = tr(G_p R) with symmetric G_p
        self.G = np.zeros((6, 3, 3))
        for p in range(6):
            row = self.inverse[p]
            for n, (a, b) in enumerate(TENSOR_INDEX):
                if a == b:
                    self.G[p, a, a] = row[n]
                else:
                    self.G[p, a, b] = self.G[p, b, a] = 0.5 * row[n]
        self.A = np.array([frame_vector(k) for k in self.pairs])
        self.B = self.A + 1j * np.cross(self.khat, self.A)

    def g(self, R):
        """Linear coefficients g_p(R) for R of shape (..., 3, 3); returns (..., 6)."""
        return _sym6(np.asarray(R, float)) @ self.inverse.T

    def gamma(self, R, check=True):
        g = self.g(R)
        if check and np.any(g <= 0):
            raise WaveSetError("matrix outside the positivity region of the family")
        return np.sqrt(np.maximum(g, 0.0))

    def g_identity(self):
        return self.g(np.eye(3))

    def nuclear_norms(self):
        return np.abs(np.linalg.eigvalsh(self.G)).sum(axis=1)

    def radius(self, fraction=0.5):
        """Largest r with g_p(R) >= fraction * g_p(Id) whenever |R - Id|_op <= r."""
        return float(np.min((1 - fraction) * self.g_identity() / self.nuclear_norms()))

    def reconstruct(self, R):
        g = self.g(R)
        return np.einsum("...p,pij->...ij", g, self.projectors)

    def all_vectors(self):
        """Every k of the family (pairs then their negatives) with B_k."""
        ks = np.concatenate([self.pairs, -self.pairs])
        Bs = np.concatenate([self.B, np.conj(self.B)])
        return ks, Bs


class WaveSet:
    def __init__(self, even=FAMILY_EVEN, odd=FAMILY_ODD, lambda_bar=LAMBDA_BAR):
        self.lambda_bar = lambda_bar
        self.families = {"even": Family(even), "odd": Family(odd)}
        se = {tuple(v) for v in np.concatenate([np.array(even), -np.array(even)])}
        so = {tuple(v) for v in np.concatenate([np.array(odd), -np.array(odd)])}
        if se & so:
            raise WaveSetError("families must be disjoint")
        for fam in self.families.values():
            if not np.allclose(np.linalg.norm(fam.pairs, axis=1), lambda_bar):
                raise WaveSetError("vectors must lie on the sphere of radius lambda_bar")
        self.r0 = min(f.radius(0.5) for f in self.families.values())

    def family(self, s):
        """Family used by cutoff index s: even s -> 'even', odd s -> 'odd'."""
        return self.families["even" if s % 2 == 0 else "odd"]

    def n_vectors(self):
        return sum(2 * len(f.pairs) for f in self.families.values())

    def gamma_max(self, radius=None):
        """max gamma_p over |R - Id| <= radius (default r0/4), exact for linear g."""
        radius = self.r0 / 4 if radius is None else radius
        m = 0.0
        for f in self.families.values():
            m = max(m, float(np.max(f.g_identity() + f.nuclear_norms() * radius)))
        return np.sqrt(m)

    def amplitude_constant(self):
        """Cbar in ||a||_0 + ||L||_0 <= Cbar * delta^(1/2).

        ||a||_0 <= sqrt(4/r0) gamma_max delta^(1/2); the corrector term of L is
        lower order, so we allow the same amount again.
        """
        return 2.0 * 2.0 / np.sqrt(self.r0) * self.gamma_max()

    def geometric_M(self):
        """M = 4 (|even| + |odd|) Cbar."""
        return 4.0 * self.n_vectors() * self.amplitude_constant()

    def to_dict(self):
        out = {"lambda_bar": self.lambda_bar, "r0": self.r0, "families": {}}
        for name, f in self.families.items():
            out["families"][name] = {
                "pairs": f.pairs.tolist(), "A": f.A.tolist(),
                "g_matrices": f.G.tolist(), "g_identity": f.g_identity().tolist()}
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


@functools.lru_cache(maxsize=1)
def default_waveset():
    return WaveSet()


def build_waveset():
    return default_waveset()


def beltrami_field(ws: WaveSet, family, coeffs, lam, grid: Grid3):
    """W(x) = sum_k a_k B_k exp(i lam k.x) for one family.

    `coeffs` holds one complex amplitude per pair (a_k); the partner -k gets
    conj(a_k), which keeps W real.
    """
    fam = ws.families[family] if isinstance(family, str) else family
    coeffs = np.asarray(coeffs, complex)
    kmax = lam * np.abs(fam.pairs).max()
    if any(kmax > lim for lim in grid.kmax):
        raise AliasingError(f"frequency {kmax} exceeds grid band {grid.kmax}")
    c = np.zeros((3,) + grid.spec_shape, complex)
    n1, n2, _ = grid.shape
    for p, k in enumerate(fam.pairs):
        for sign in (1, -1):
            kk = sign * lam * k
            amp = coeffs[p] * fam.B[p] if sign > 0 else np.conj(coeffs[p] * fam.B[p])
            # rfft storage keeps only k3 >= 0; the partner of a skipped mode is implicit
            if kk[2] < 0:
                continue
            c[:, kk[0] % n1, kk[1] % n2, kk[2]] += amp
    return Field(grid, c, "vector", (kmax, kmax, kmax))


def check_bk_identity(ws: WaveSet):
    """max |(B_k (x) B_k' + B_k' (x) B_k)(k + k') - (B_k . B_k')(k + k')| over each family."""
    worst = 0.0
    for fam in ws.families.values():
        ks, Bs = fam.all_vectors()
        for (k, B), (k2, B2) in itertools.product(zip(ks, Bs), repeat=2):
            s = (k + k2).astype(float)
            lhs = np.outer(B, B2) @ s + np.outer(B2, B) @ s
            rhs = (B @ B2) * s
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def sphere_pairs(radius_sq=25):
    vecs = [v for v in itertools.product(range(-5, 6), repeat=3) if sum(x * x for x in v) == radius_sq]
    return sorted({max(v, tuple(-x for x in v)) for v in vecs})


def _conflict_free(pairs, threshold):
    vs = [np.array(p) for p in pairs] + [-np.array(p) for p in pairs]
    for a, b in itertools.combinations(vs, 2):
        if np.any(a != -b) and np.linalg.norm(a + b) < threshold:
            return False
    return True


def search_families(threshold=LAMBDA_BAR / 2):
    """Exhaustive search for two disjoint 6-pair families.

    Families must keep |k + k'| >= threshold for k' != -k inside a family
    (so self-interactions stay at high frequency).  Candidates are ranked
    by the positivity radius, then by the condition number of the basis.
    """
    pairs = sphere_pairs()
    scored = []
    ok = {}
    for idx in itertools.combinations(range(len(pairs)), 6):
        fam_pairs = [pairs[i] for i in idx]
        if not _conflict_free(fam_pairs, threshold):
            continue
        try:
            f = Family(fam_pairs)
        except WaveSetError:
            continue
        if np.any(f.g_identity() <= 0):
            continue
        ok[idx] = (f.radius(0.5), np.linalg.cond(f.basis))
    for a, b in itertools.combinations(sorted(ok), 2):
        if set(a) & set(b):
            continue
        r = min(ok[a][0], ok[b][0])
        c = max(ok[a][1], ok[b][1])
        scored.append((-r, c, a, b))
    scored.sort()
    _, _, a, b = scored[0]
    return tuple(pairs[i] for i in a), tuple(pairs[i] for i in b)
