"""Flows of the mollified velocity, material derivatives and the smoothed Reynolds stress.

Characteristics are integrated with classical RK4 from the points of a
(usually coarse) flow grid.  The displacement x -> X(x) - x is periodic and
smooth, so it is carried to finer grids by spectral interpolation.  Every
map is integrated with a substep count fixed per time window, which keeps
the results smooth in the time arguments.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import Field, Grid3, NCOMP, derivative, grad, multiply, pointwise_norm, resample
from .params import ToyModeWarning
from .series import SampledSeries, SeparableSeries, Series, SeriesSampler

C_FLOW = 0.1
AVERAGE_NODES = 24


class FlowError(ValueError):
    pass


class StencilError(ValueError):
    pass


def _cfl_fail(msg, toy):
    if toy:
        warnings.warn(f"toy mode: {msg}", ToyModeWarning, stacklevel=3)
    else:
        raise FlowError(msg)


def flow_grid_for(grid: Grid3, band, min_n=16):
    """Smallest cubic power-of-two grid with 4 points per unit of `band`, capped by `grid`."""
    n = min_n
    while n < 4 * band + 4:
        n *= 2
    return Grid3(None, tuple(min(n, s) for s in grid.shape))


# ---------------------------------------------------------------------------
# velocity

def _field_bounds(f: Field):
    """(sup |f|, sup |Df|) with the Frobenius norm of the gradient (an upper bound)."""
    v0 = float(pointwise_norm(f.physical(), f.kind).max())
    g = grad(f)
    parts = g if isinstance(g, list) else [g]
    sq = 0.0
    for p in parts:
        sq = sq + np.sum(p.physical() ** 2, axis=0)
    return v0, float(np.sqrt(np.max(sq)))


class Velocity:
    """Point evaluation and norm bounds for a (mollified) velocity series."""

    def __init__(self, series: Series, **sampler_kw):
        self.series = series
        self.sampler = SeriesSampler(series, **sampler_kw)
        self._norms = {}

    def __call__(self, pts, t):
        return self.sampler(pts, t)

    def _norms_of(self, f):
        key = id(f)
        hit = self._norms.get(key)
        if hit is None or hit[0] is not f:
            hit = (f, _field_bounds(f))
            self._norms[key] = hit
        return hit[1]

    def bounds(self, t0, t1):
        """Upper bounds for sup |v| and sup |Dv| over times in [t0, t1]."""
        s = self.series
        if isinstance(s, SeparableSeries):
            b0 = b1 = 0.0
            for c, f in s.terms:
                amp = SeparableSeries(s.grid, s.kind, [(c, f)], s.support).profile_bound(t0, t1)
                n0, n1 = self._norms_of(f)
                b0 += amp * n0
                b1 += amp * n1
            return b0, b1
        if isinstance(s, SampledSeries):
            lo = max(0, math.floor(t0 / s.h) - 2)
            hi = min(s.count - 1, math.ceil(t1 / s.h) + 2)
            b0 = b1 = 0.0
            for n in range(lo, hi + 1):
                f = s.sample(n)
                if f is not None:
                    n0, n1 = self._norms_of(f)
                    b0, b1 = max(b0, n0), max(b1, n1)
            # the cubic Hermite weights have absolute sum at most 1.25
            return 1.25 * b0, 1.25 * b1
        raise TypeError("unsupported series type")


def substeps(vel: Velocity, t0, t1, span, c_flow=C_FLOW):
    """Fixed RK4 substep count for spans up to `span` inside [t0, t1]."""
    b0, b1 = vel.bounds(t0, t1)
    c1 = b0 + b1
    if c1 == 0:
        return 1
    return max(1, math.ceil(span * c1 / c_flow))


def check_cfl(vel: Velocity, t0, t1, span, toy=False):
    _, lip = vel.bounds(t0, t1)
    val = span * lip
    if val > 1.0:
        _cfl_fail(f"flow CFL condition |t - s| * ||D v_ell||_0 <= 1 violated ({val:.3g})", toy)
    return val


def _rk4(vel, x, t0, t1, n):
    dt = (t1 - t0) / n
    # stage times from the index, the last one pinned to t1, so that
    # accumulated rounding never leaves the support of the velocity
    ts = [t0 + i * dt for i in range(n)] + [t1]
    for i in range(n):
        ta, tb = ts[i], ts[i + 1]
        tm = 0.5 * (ta + tb)
        k1 = vel(x, ta)
        k2 = vel(x + 0.5 * dt * k1, tm)
        k3 = vel(x + 0.5 * dt * k2, tm)
        k4 = vel(x + dt * k3, tb)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


# ---------------------------------------------------------------------------
# flow maps

@dataclass
class FlowMap:
    """Particle positions on a grid: X(x, t) for the requested times.

    ``direction`` is 'forward' (X_s, positions at t of particles at x at the
    anchor time s) or 'inverse' (Phi, the position at the anchor time of the
    particle found at x at time t).
    """
    anchor: float
    direction: str
    grid: Grid3
    displacement: dict = field(default_factory=dict)  # time -> (3, *shape)
    steps: dict = field(default_factory=dict)

    def positions(self, t):
        return self.grid.mesh() + self.displacement[t]

    def displacement_field(self, t, grid=None):
        f = Field.from_physical(self.grid, self.displacement[t], "vector")
        return resample(f, grid) if grid is not None else f

    def jacobian(self, t):
        """(3, 3, *shape) array of D X = Id + D(displacement), spectral derivatives."""
        d = self.displacement_field(t)
        out = np.zeros((3, 3) + self.grid.shape)
        for i in range(3):
            for j in range(3):
                out[i, j] = derivative(d.component(i), j).physical()[0]
                if i == j:
                    out[i, j] += 1.0
        return out

    def deviation(self, t):
        """||D X - Id||_0 (operator norm)."""
        jac = self.jacobian(t)
        for i in range(3):
            jac[i, i] -= 1.0
        m = np.moveaxis(jac, (0, 1), (-2, -1))
        return float(np.linalg.norm(m, ord=2, axis=(-2, -1)).max())

    def volume_defect(self, t):
        m = np.moveaxis(self.jacobian(t), (0, 1), (-2, -1))
        return float(np.abs(np.linalg.det(m) - 1.0).max())

    def tail(self, t):
        return self.displacement_field(t).tail


def integrate_flow(vel: Velocity, s, t, grid: Grid3, n_steps=None, toy=False, c_flow=C_FLOW,
                   points=None):
    """Forward flow X_s(., t) from the points of `grid` (or given `points`)."""
    times = [t] if np.isscalar(t) else list(t)
    span = max(abs(tt - s) for tt in times)
    lo, hi = min([s] + times), max([s] + times)
    check_cfl(vel, lo, hi, span, toy)
    x0 = grid.mesh() if points is None else np.asarray(points, float)
    fm = FlowMap(s, "forward", grid)
    for tt in times:
        n = n_steps if n_steps is not None else substeps(vel, lo, hi, abs(tt - s), c_flow)
        if tt == s:
            fm.displacement[tt] = np.zeros_like(x0)
        else:
            fm.displacement[tt] = _rk4(vel, x0, s, tt, n) - x0
        fm.steps[tt] = n
    return fm


class InverseFlows:
    """Phi_s(., t) for the internal cutoffs, anchored at the centre of supp chi_s.

    The RK4 substep count is fixed per cutoff from the velocity bounds on
    its whole support, so Phi_s is a smooth function of t.
    """

    def __init__(self, vel: Velocity, cutoffs, grid: Grid3, toy=False, c_flow=C_FLOW):
        self.vel = vel
        self.cutoffs = cutoffs
        self.grid = grid
        self.toy = toy
        self.c_flow = c_flow
        self._steps = {}
        self._cache = {}

    def anchor(self, s):
        return self.cutoffs.center(s)

    def steps(self, s):
        if s not in self._steps:
            lo, hi = self.cutoffs.support(s)
            span = max(hi - self.anchor(s), self.anchor(s) - lo)
            check_cfl(self.vel, lo, hi, span, self.toy)
            self._steps[s] = substeps(self.vel, lo, hi, span, self.c_flow)
        return self._steps[s]

    def __call__(self, s, t):
        """FlowMap holding Phi_s(., t)."""
        key = (s, t)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            anchor = self.anchor(s)
            fm = FlowMap(anchor, "inverse", self.grid)
            x0 = self.grid.mesh()
            n = self.steps(s)
            fm.displacement[t] = np.zeros_like(x0) if t == anchor else \
                _rk4(self.vel, x0, t, anchor, n) - x0
            fm.steps[t] = n
            self._cache[key] = fm
        return self._cache[key]


def inverse_flow(vel: Velocity, s, cutoffs, t, grid: Grid3, toy=False, c_flow=C_FLOW):
    """Phi_s(., t), the inverse flow anchored at the centre of supp chi_s."""
    return InverseFlows(vel, cutoffs, grid, toy, c_flow)(s, t)


# ---------------------------------------------------------------------------
# time derivatives

STENCIL = ((-2, 1.0 / 12), (-1, -8.0 / 12), (1, 8.0 / 12), (2, -1.0 / 12))


def time_derivative(samples, h):
    """4th-order centred difference from Fields at t-2h, t-h, (t), t+h, t+2h."""
    if len(samples) == 5:
        samples = [samples[0], samples[1], samples[3], samples[4]]
    if len(samples) != 4 or any(f is None for f in samples):
        raise StencilError("time derivative needs samples at t-2h, t-h, t+h and t+2h")
    c = sum(w * f.coeffs for (_, w), f in zip(STENCIL, samples)) / h
    band = tuple(max(f.band[a] for f in samples) for a in range(3))
    return Field(samples[0].grid, c, samples[0].kind, band)


def advect(f: Field, v: Field, toy=False):
    """(v . grad) f, componentwise for vectors and tensors."""
    out = None
    for i in range(3):
        term = multiply(v.component(i), derivative(f, i), toy)
        out = term if out is None else out + term
    return out


def material_derivative(samples, h, v: Field, toy=False):
    """D_t f = d_t f + v . grad f at the centre of five equally spaced samples."""
    if len(samples) != 5:
        raise StencilError("material derivative needs five samples")
    return time_derivative(samples, h) + advect(samples[2], v, toy)


# ---------------------------------------------------------------------------
# smoothed Reynolds stress

def time_kernel(s):
    """Even smooth bump on (-1, 1), not normalized."""
    s = np.asarray(s, float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2))
    return out


def average_nodes(n=AVERAGE_NODES):
    """Gauss-Legendre nodes on (-1, 1) with kernel weights normalized to sum 1."""
    if n < 9:
        raise ValueError("at least 9 quadrature nodes are required")
    x, w = np.polynomial.legendre.leggauss(n)
    w = w * time_kernel(x)
    return x, w / w.sum()


class StressSmoother:
    """R_s for the three cases: flow average (a), transport (b), zero (c)."""

    def __init__(self, R_ell: Series, vel: Velocity, flows: InverseFlows, tau, toy=False,
                 c_flow=C_FLOW, nodes=AVERAGE_NODES):
        self.R_ell = R_ell
        self.sampler = SeriesSampler(R_ell)
        self.vel = vel
        self.flows = flows
        self.grid = flows.grid
        self.tau = tau
        self.toy = toy
        self.c_flow = c_flow
        self.x, self.w = average_nodes(nodes)
        self._seg_steps = {}

    def _segments(self, s):
        """Substep count per node-to-node segment (fixed per cutoff)."""
        if s not in self._seg_steps:
            lo, hi = self.flows.cutoffs.support(s)
            lo, hi = lo - self.tau, hi + self.tau
            check_cfl(self.vel, lo, hi, self.tau, self.toy)
            offs = self.tau * self.x
            pos = np.concatenate([[0.0], offs[offs > 0]])
            neg = np.concatenate([[0.0], -offs[offs < 0][::-1]])
            steps = []
            for seq in (pos, neg):
                steps.append([substeps(self.vel, lo, hi, b - a, self.c_flow)
                              for a, b in zip(seq[:-1], seq[1:])])
            self._seg_steps[s] = steps
        return self._seg_steps[s]

    def _zero(self):
        return Field.zeros(self.grid, "tensor")

    def case_a(self, s, t):
        """Average of R_ell along trajectories through (x, t) over [t - tau, t + tau]."""
        x0 = self.grid.mesh()
        offs = self.tau * self.x
        acc = np.zeros((6,) + self.grid.shape)
        pos_steps, neg_steps = self._segments(s)
        for sign, steps in ((1, pos_steps), (-1, neg_steps)):
            sel = np.nonzero(offs * sign > 0)[0]
            sel = sel if sign > 0 else sel[::-1]
            x, tprev = x0, t
            for k, i in enumerate(sel):
                tn = t + offs[i]
                x = _rk4(self.vel, x, tprev, tn, steps[k])
                tprev = tn
                acc += self.w[i] * self.sampler(x, tn)
        mid = np.nonzero(offs == 0)[0]
        for i in mid:
            acc += self.w[i] * self.sampler(x0, t)
        return Field.from_physical(self.grid, acc, "tensor")

    def case_b(self, s, t):
        """R_ell transported from the anchor time: R_ell(Phi_s(x, t), t)."""
        phi = self.flows(s, t).positions(t)
        return Field.from_physical(self.grid, self.sampler(phi, t), "tensor")

    def __call__(self, case, s, t):
        if case == "a":
            return self.case_a(s, t)
        if case == "b":
            return self.case_b(s, t)
        if case == "c":
            return self._zero()
        raise ValueError(f"unknown smoothing case {case!r}")


def smoothing_case(refined, s):
    """'c' for the two end cutoffs, else 'a' when the parent index is 0 and 'b' otherwise."""
    if refined.is_endpoint(s):
        return "c"
    return "a" if refined.parent_j(s) == 0 else "b"


def smooth_reynolds(R_ell: Series, case, t, s, vel: Velocity, flows: InverseFlows, tau,
                    toy=False, nodes=AVERAGE_NODES):
    """R_s(., t) on the flow grid for the given case."""
    return StressSmoother(R_ell, vel, flows, tau, toy, nodes=nodes)(case, s, t)
