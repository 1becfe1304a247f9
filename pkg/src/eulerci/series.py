"""Time-dependent fields and point evaluation.

A series is a field depending on t.  Its value at a time is a linear
combination of stored Fields, exposed as ``terms_at(t) -> [(weight, Field)]``
so that linear operations (mollification, evaluation at points) can be
applied term by term.
"""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from scipy import ndimage

from .fields import Field, Grid3, NCOMP, evaluate_sparse, sparse_modes, upsample


class Series:
    kind: str
    grid: Grid3
    support: tuple

    def terms_at(self, t):
        raise NotImplementedError

    def at(self, t):
        return combine(self.terms_at(t), self.grid, self.kind)

    def is_zero_at(self, t):
        return not self.terms_at(t)


class SeparableSeries(Series):
    """f(x, t) = sum_i c_i(t) F_i(x) with analytic time profiles c_i."""

    def __init__(self, grid, kind, terms, support=(0.0, 1.0), derivatives=None):
        self.grid = grid
        self.kind = kind
        self.terms = list(terms)  # (profile, Field)
        self.support = support
        self.derivatives = derivatives

    def terms_at(self, t):
        if not self.support[0] <= t <= self.support[1]:
            return []
        out = []
        for c, f in self.terms:
            w = float(c(t))
            if w != 0.0:
                out.append((w, f))
        return out

    def dt_terms_at(self, t):
        """Exact time derivative, when profile derivatives were given."""
        if self.derivatives is None:
            raise ValueError("no analytic time derivative available")
        if not self.support[0] <= t <= self.support[1]:
            return []
        return [(float(d(t)), f) for d, (_, f) in zip(self.derivatives, self.terms)
                if float(d(t)) != 0.0]

    def map_fields(self, fn):
        return SeparableSeries(self.grid, self.kind, [(c, fn(f)) for c, f in self.terms],
                               self.support, self.derivatives)

    def profile_bound(self, t0, t1, samples=2001):
        """max over [t0, t1] of sum_i |c_i(t)| (dense sampling of the profiles)."""
        lo, hi = max(t0, self.support[0]), min(t1, self.support[1])
        if lo > hi:
            return 0.0
        ts = np.linspace(lo, hi, samples)
        tot = np.zeros_like(ts)
        for c, _ in self.terms:
            tot += np.abs(np.vectorize(c)(ts))
        return float(tot.max())


class SampledSeries(Series):
    """Samples on the uniform grid t_n = n h (n = 0..count-1), cubic Hermite in between.

    ``getter(n)`` returns the Field at t_n or None for an identically zero
    sample.  Slopes are centred differences, so the interpolant is C^1 and
    reproduces cubics away from the ends.
    """

    def __init__(self, grid, kind, h, count, getter, cache=8):
        self.grid = grid
        self.kind = kind
        self.h = h
        self.count = count
        self._getter = getter
        self._cache = OrderedDict()
        self._cache_size = cache
        nz = [n for n in range(count) if self._nonzero_hint(n)]
        # a sample influences the interpolant up to two spacings away
        self.support = ((min(nz) - 2) * h, (max(nz) + 2) * h) if nz else (0.0, 0.0)

    def _nonzero_hint(self, n):
        hint = getattr(self._getter, "nonzero", None)
        return hint(n) if hint is not None else True

    def sample(self, n):
        if n < 0 or n >= self.count:
            return None
        if n in self._cache:
            self._cache.move_to_end(n)
            return self._cache[n]
        f = self._getter(n)
        self._cache[n] = f
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return f

    def terms_at(self, t):
        u = t / self.h
        n = math.floor(u)
        s = u - n
        if abs(s) < 1e-12 or abs(s - 1) < 1e-12:
            f = self.sample(int(round(u)))
            return [(1.0, f)] if f is not None else []
        weights = catmull_rom_weights(s)
        out = []
        for off, w in zip((-1, 0, 1, 2), weights):
            f = self.sample(n + off)
            if f is not None and w != 0.0:
                out.append((w, f))
        return out

    def map_fields(self, fn):
        parent = self

        def getter(n):
            f = parent.sample(n)
            return fn(f) if f is not None else None
        getter.nonzero = self._nonzero_hint
        return SampledSeries(self.grid, self.kind, self.h, self.count, getter)


def catmull_rom_weights(s):
    """Weights of samples n-1, n, n+1, n+2 for the value at n + s."""
    s2, s3 = s * s, s * s * s
    return (0.5 * (-s3 + 2 * s2 - s), 0.5 * (3 * s3 - 5 * s2 + 2),
            0.5 * (-3 * s3 + 4 * s2 + s), 0.5 * (s3 - s2))


def combine(terms, grid, kind):
    """Sum of weighted Fields as one Field."""
    c = np.zeros((NCOMP[kind],) + grid.spec_shape, complex)
    band = (0, 0, 0)
    for w, f in terms:
        c += w * f.coeffs
        band = tuple(max(a, b) for a, b in zip(band, f.band))
    return Field(grid, c, kind, band)


# ---------------------------------------------------------------------------
# evaluation at arbitrary points

class FieldSampler:
    """Evaluate one Field at arbitrary (unwrapped) points.

    Fields with few modes are summed directly; otherwise a spline of the
    given order is fitted on a spectrally oversampled grid and evaluated
    with periodic wrapping.
    """

    def __init__(self, f: Field, max_modes=64, order=5, points_per_wave=8, max_axis=256):
        self.kind = f.kind
        self.ncomp = f.ncomp
        modes = sparse_modes(f)
        self.direct = len(modes[0]) <= max_modes
        if self.direct:
            self.modes = modes
            self.field = f
            return
        band = max(max(f.band), 1)
        factor = 1
        while min(f.grid.shape) * factor < points_per_wave * band and \
                max(f.grid.shape) * factor * 2 <= max_axis:
            factor *= 2
        fine = upsample(f, factor)
        ph = fine.physical()
        self.shape = ph.shape[1:]
        self.order = order
        self.coef = [ndimage.spline_filter(ph[i], order=order, mode="grid-wrap")
                     for i in range(self.ncomp)]

    def __call__(self, pts):
        pts = np.asarray(pts, float)
        flat = pts.reshape(3, -1)
        if self.direct:
            out = evaluate_sparse(self.field, flat.T, self.modes)
        else:
            idx = np.stack([flat[a] * self.shape[a] / (2 * np.pi) for a in range(3)])
            out = np.stack([ndimage.map_coordinates(c, idx, order=self.order, mode="grid-wrap",
                                                    prefilter=False) for c in self.coef])
        return out.reshape((self.ncomp,) + pts.shape[1:])


class SeriesSampler:
    """Point evaluation of a series at (points, time), caching one sampler per stored Field."""

    def __init__(self, series: Series, **kw):
        self.series = series
        self.kw = kw
        self._samplers = {}

    def _sampler(self, f):
        key = id(f)
        hit = self._samplers.get(key)
        if hit is None or hit[0] is not f:
            if len(self._samplers) > 16:
                self._samplers.clear()
            hit = (f, FieldSampler(f, **self.kw))
            self._samplers[key] = hit
        return hit[1]

    def __call__(self, pts, t):
        pts = np.asarray(pts, float)
        out = np.zeros((NCOMP[self.series.kind],) + pts.shape[1:])
        for w, f in self.series.terms_at(t):
            out += w * self._sampler(f)(pts)
        return out
