"""One step of the convex-integration scheme and the explicit level-0 triple.

A step takes a triple (v_q, p_q, R_q) with its time partition and produces
v_{q+1} = v_q + w with w = w_o + w_c, the new pressure and the new
traceless stress R^0 + ... + R^4.  Time samples are computed in order on a
uniform grid; the time derivative of w inside R^0 uses the same five-point
stencil as the residual check.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import time as _time
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .beltrami import WaveSet, WaveSetError, default_waveset
from .fields import (AliasingError, Field, Grid3, STATS, TENSOR_INDEX, curl, div,
                     inverse_divergence, mollify, pointwise_norm, read_snapshot, resample,
                     sup_norm, upsample, write_snapshot)
from .params import ParamError, ParamSet, ToyModeWarning
from .series import SampledSeries, SeparableSeries, Series, combine
from .timeline import Partition, build_cutoffs, ramp, ramp_derivative, refine, seed_partition
from .transport import (AVERAGE_NODES, C_FLOW, InverseFlows, StressSmoother, Velocity,
                        flow_grid_for, smoothing_case, time_derivative)

TRIPLE_FORMAT = "eulerci-triple"
NU_RISE = (3 / 8, 7 / 16)
NU_FALL = (9 / 16, 5 / 8)


class ResolutionError(ValueError):
    pass


class PerturbationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# level 0

def _bump_slope(u):
    """Derivative of the ramp derivative (needed for d^2 nu0 / dt^2)."""
    u = np.asarray(u, float)
    out = np.zeros_like(u)
    m = (u > 0) & (u < 1)
    x = u[m]
    out[m] = ramp_derivative(x) * (1 - 2 * x) / (x * (1 - x)) ** 2
    return out


def nu0(t):
    """Smooth bump: 0 outside [3/8, 5/8], 1 on [7/16, 9/16]."""
    t = np.asarray(t, float)
    w = NU_RISE[1] - NU_RISE[0]
    return ramp((t - NU_RISE[0]) / w) * ramp((NU_FALL[1] - t) / w)


def nu0_derivative(t, order=1):
    t = np.asarray(t, float)
    w = NU_RISE[1] - NU_RISE[0]
    u1, u2 = (t - NU_RISE[0]) / w, (NU_FALL[1] - t) / w
    if order == 1:
        return ramp_derivative(u1) / w * ramp(u2) - ramp(u1) * ramp_derivative(u2) / w
    if order == 2:
        return (_bump_slope(u1) * ramp(u2) - 2 * ramp_derivative(u1) * ramp_derivative(u2)
                + ramp(u1) * _bump_slope(u2)) / w ** 2
    raise ValueError("order must be 1 or 2")


def initial_fields(lam0, grid: Grid3):
    """Spatial parts of v_0 and R_0 (unit amplitude)."""
    if lam0 != int(lam0):
        raise ParamError("the level-0 shear needs an integer lambda_0")
    lam0 = int(lam0)
    if lam0 > grid.kmax[2]:
        raise ResolutionError(f"lambda_0 = {lam0} exceeds the x3 band {grid.kmax[2]} of {grid}")
    band = (0, 0, lam0)

    def shear(x1, x2, x3):
        return np.stack([np.cos(lam0 * x3), np.sin(lam0 * x3), 0 * x3])

    def stress(x1, x2, x3):
        s, c, z = np.sin(lam0 * x3), np.cos(lam0 * x3), 0 * x3
        # slots xx, yy, zz, xy, xz, yz
        return np.stack([z, z, z, z, s, -c])
    fv = Field.from_function(grid, shear, "vector", band).compact()
    fr = Field.from_function(grid, stress, "tensor", band).compact()
    return fv, fr


# ---------------------------------------------------------------------------
# triples

@dataclass
class Triple:
    level: int
    params: ParamSet
    grid: Grid3
    partition: Partition
    h: float
    v: Series
    p: Series
    R: Series
    analytic: str | None = None
    path: str | None = None
    records: list = field(default_factory=list)

    @property
    def count(self):
        return int(round(1.0 / self.h)) + 1

    def time(self, n):
        return n * self.h

    def fields_at(self, t):
        return self.v.at(t), self.p.at(t), self.R.at(t)

    def sample_fields(self, name, n):
        series = getattr(self, name)
        if isinstance(series, SampledSeries):
            return series.sample(n)
        terms = series.terms_at(self.time(n))
        return combine(terms, self.grid, series.kind) if terms else None

    def dt_v(self, t):
        """Exact d_t v when known in closed form, else None."""
        if isinstance(self.v, SeparableSeries) and self.v.derivatives is not None:
            return combine(self.v.dt_terms_at(t), self.grid, "vector")
        return None

    def nonzero_samples(self):
        return [n for n in range(self.count)
                if any(self.sample_fields(k, n) is not None for k in ("v", "p", "R"))]

    def save(self, path, records=None):
        return save_triple(self, path, records)


def initial_triple(params: ParamSet, grid: Grid3, h=1 / 256, tick_exp=None):
    """v_0 = lambda0^-beta0 nu0(t) (cos lambda0 x3, sin lambda0 x3, 0), p_0 = 0 and the matching R_0."""
    _check_spacing(h)
    lam0 = params.lambda0
    fv, fr = initial_fields(lam0, grid)
    av = float(lam0) ** -params.beta0
    ar = float(lam0) ** (-params.beta0 - 1)
    support = (NU_RISE[0], NU_FALL[1])
    v = SeparableSeries(grid, "vector", [(lambda t: av * nu0(t), fv)], support,
                        [lambda t: av * nu0_derivative(t)])
    p = SeparableSeries(grid, "scalar", [], support)
    R = SeparableSeries(grid, "tensor", [(lambda t: ar * nu0_derivative(t), fr)], support,
                        [lambda t: ar * nu0_derivative(t, 2)])
    part = seed_partition() if tick_exp is None else seed_partition(tick_exp)
    return Triple(0, params, grid, part, h, v, p, R, analytic="initial")


def _check_spacing(h):
    m = 1.0 / h
    if abs(m - round(m)) > 1e-9 or round(m) < 8:
        raise ValueError("time spacing must be 1/m for an integer m >= 8")


def params_hash(params: ParamSet):
    return params.fingerprint()


def _atomic_json(path, obj):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
    os.replace(tmp, path)


def save_triple(triple: Triple, path, records=None):
    """Write a triple as a directory of snapshots, a partition file and a manifest."""
    os.makedirs(path, exist_ok=True)
    samples = {}
    for name in ("v", "p", "R"):
        os.makedirs(os.path.join(path, name), exist_ok=True)
        shas = []
        for n in range(triple.count):
            f = triple.sample_fields(name, n)
            if f is None:
                shas.append(None)
                continue
            shas.append(write_snapshot(f, os.path.join(path, name, f"{n:06d}.bin")))
        samples[name] = shas
    return write_manifest(triple, path, samples, records)


def write_manifest(triple, path, samples, records=None):
    part_json = triple.partition.to_json()
    with open(os.path.join(path, "partition.json"), "w") as fh:
        fh.write(part_json)
    if records is not None:
        _atomic_json(os.path.join(path, "records.json"), records)
    man = {
        "format": TRIPLE_FORMAT, "version": 1, "level": triple.level,
        "grid": list(triple.grid.shape), "h": triple.h, "count": triple.count,
        "params": triple.params.to_dict(), "params_hash": params_hash(triple.params),
        "analytic": triple.analytic,
        "partition_sha256": hashlib.sha256(part_json.encode()).hexdigest(),
        "samples": samples,
    }
    _atomic_json(os.path.join(path, "manifest.json"), man)
    return man


class _DiskGetter:
    def __init__(self, path, name, shas):
        self.path = path
        self.name = name
        self.shas = shas

    def nonzero(self, n):
        return self.shas[n] is not None

    def __call__(self, n):
        sha = self.shas[n]
        if sha is None:
            return None
        return read_snapshot(os.path.join(self.path, self.name, f"{n:06d}.bin"), sha)


def load_triple(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        man = json.load(fh)
    if man.get("format") != TRIPLE_FORMAT:
        raise ValueError(f"{path} is not a triple directory")
    params = ParamSet(**man["params"])
    with open(os.path.join(path, "partition.json")) as fh:
        text = fh.read()
    if hashlib.sha256(text.encode()).hexdigest() != man["partition_sha256"]:
        raise ValueError("partition checksum mismatch")
    part = Partition.from_dict(json.loads(text))
    grid = Grid3(None, tuple(man["grid"]))
    if man.get("analytic") == "initial":
        tr = initial_triple(params, grid, man["h"], part.tick_exp)
        tr.path = path
        return tr
    series = {}
    kinds = {"v": "vector", "p": "scalar", "R": "tensor"}
    for name, kind in kinds.items():
        getter = _DiskGetter(path, name, man["samples"][name])
        series[name] = SampledSeries(grid, kind, man["h"], man["count"], getter)
    records = []
    rp = os.path.join(path, "records.json")
    if os.path.exists(rp):
        with open(rp) as fh:
            records = json.load(fh)
    return Triple(man["level"], params, grid, part, man["h"], series["v"], series["p"],
                  series["R"], None, path, records)


def verify_checksums(path):
    """Re-read every snapshot of a triple directory; raises on any mismatch."""
    with open(os.path.join(path, "manifest.json")) as fh:
        man = json.load(fh)
    n = 0
    for name, shas in man["samples"].items():
        for i, sha in enumerate(shas):
            if sha is not None:
                read_snapshot(os.path.join(path, name, f"{i:06d}.bin"), sha)
                n += 1
    return n


# ---------------------------------------------------------------------------
# the step

@dataclass
class Perturbation:
    """Everything the new stress needs at one time.

    The fields are kept on coarser grids that still hold their bands
    (w on half the output grid, the stress sum on the flow grid) and are
    resampled exactly on access.
    """
    t: float
    grid: Grid3
    w_stored: Field
    wo_stored: Field
    ring_stored: Field   # sum chi_s^2 R_s (smoothed stress, truncated)
    rho_sum: float       # sum chi_s^2 rho_s
    active: list
    diag: dict

    @property
    def w(self):
        return resample(self.w_stored, self.grid)

    @property
    def wo(self):
        return resample(self.wo_stored, self.grid)

    @property
    def wc(self):
        return resample(self.w_stored - self.wo_stored, self.grid)

    @property
    def ring(self):
        return resample(self.ring_stored, self.grid)


def _slot_identity(s):
    out = np.zeros((6,) + np.shape(s))
    out[0] = out[1] = out[2] = s
    return out


def _outer_slots(a, b):
    """Slots of a b^T + b a^T."""
    return np.stack([a[i] * b[j] + a[j] * b[i] for i, j in TENSOR_INDEX])


def _dot(a, b):
    return np.sum(a * b, axis=0)


def _sup(ph, kind):
    return float(pointwise_norm(ph, kind).max()) if ph is not None else 0.0


def effective_j(partition: Partition, t):
    """Largest j among the level intervals whose closure contains t (a time or an integer tick)."""
    T = partition.ticks
    k = t if isinstance(t, int) else t * T
    return max(iv.j for iv in partition.intervals if iv.lo <= k <= iv.hi)


class StepEngine:
    """Builds the level q+1 triple from a level q triple."""

    def __init__(self, triple: Triple, waveset: WaveSet | None = None, h=None, c_flow=C_FLOW,
                 nodes=AVERAGE_NODES, rho_safety=1.25, flow_grid=None):
        self.tr = triple
        self.ps = ps = triple.params
        self.ws = waveset or default_waveset()
        self.grid = grid = triple.grid
        self.toy = ps.toy_mode
        self.h = h if h is not None else triple.h
        _check_spacing(self.h)
        q = triple.level
        self.q = q
        self.refined, self.partition = refine(triple.partition, ps)
        self.cutoffs = build_cutoffs(self.refined)
        self.lam = ps.lam(q + 1)
        self.ell = ps.ell(q + 1)
        self.tau = ps.tau(q + 1)
        self.freq = self.lam * self.ws.lambda_bar
        self.band_w = tuple(s // 4 - 1 for s in grid.shape)
        self.store_grid = Grid3(None, tuple(max(8, s // 2) for s in grid.shape))
        self.plan = self.resolution_plan()
        self.v_ell = triple.v.map_fields(lambda f: mollify(f, self.ell))
        self.R_ell = triple.R.map_fields(lambda f: mollify(f, self.ell))
        self.vel = Velocity(self.v_ell)
        if flow_grid is None:
            bands = [max(f.band) for s in (triple.v, triple.R) for f in _fields_of(s)]
            flow_grid = flow_grid_for(grid, max(bands + [1]))
        self.flow_grid = flow_grid
        self.flows = InverseFlows(self.vel, self.cutoffs, flow_grid, self.toy, c_flow)
        self.smoother = StressSmoother(self.R_ell, self.vel, self.flows, self.tau, self.toy,
                                       c_flow, nodes)
        self.rho_safety = rho_safety
        self._rho = {}
        self.mesh = grid.mesh()
        self.telemetry = {"flows_s": 0.0, "smoothing_s": 0.0, "amplitudes_s": 0.0,
                          "stress_s": 0.0, "io_s": 0.0}

    # -- planning
    def resolution_plan(self):
        need = self.freq + 2 * self.ps.lam(self.q)
        have = min(self.band_w)
        plan = {"lambda_next": self.lam, "frequency": self.freq, "required_band": need,
                "perturbation_band": list(self.band_w), "grid": list(self.grid.shape)}
        if need > have:
            raise ResolutionError(
                f"grid too small for lambda_{self.q + 1} frequencies: lambda*lambda_bar + "
                f"2 lambda_q = {need} > perturbation band {have} on {self.grid}")
        return plan

    def case(self, s):
        return smoothing_case(self.refined, s)

    def rho(self, s):
        """rho_s = 4 delta_{q+1,j} / r0; toy mode raises it to cover the actual stress."""
        if s in self._rho:
            return self._rho[s]
        if self.refined.is_endpoint(s):
            self._rho[s] = 0.0
            return 0.0
        j = self.refined.parent_j(s)
        base = self.ps.delta(self.q + 1, j)
        lo, hi = self.cutoffs.support(s)
        if self.toy:
            # the per-sample check decides outside toy mode; here the bound only widens rho
            rmax = series_sup(self.R_ell, lo - self.tau, hi + self.tau)
            if rmax > base:
                warnings.warn(
                    f"toy mode: cutoff {s}: ||R_ell||_0 <= {rmax:.3g} exceeds "
                    f"delta_{self.q + 1},{j} = {base:.3g}; rho raised accordingly",
                    ToyModeWarning)
                base = self.rho_safety * rmax
        self._rho[s] = 4.0 * base / self.ws.r0
        return self._rho[s]

    def internal_active(self, t):
        out = []
        for s in self.cutoffs.active(t):
            if self.refined.is_endpoint(s):
                continue
            c = float(self.cutoffs.chi(s, np.array([t]))[0])
            if c != 0.0:
                out.append((s, c))
        return out

    # -- perturbation at one time
    def perturbation(self, t) -> Perturbation:
        grid = self.grid
        wo_ph = np.zeros((3,) + grid.shape)
        ring = Field.zeros(self.flow_grid, "tensor")
        rho_sum = 0.0
        diag = {"cutoffs": []}
        active = self.internal_active(t)
        for s, chi in active:
            fam = self.ws.family(s)
            rho = self.rho(s)
            t0 = _time.perf_counter()
            Rs = self.smoother(self.case(s), s, t)
            t1 = _time.perf_counter()
            self.telemetry["smoothing_s"] += t1 - t0
            fm = self.flows(s, t)
            disp = fm.displacement_field(t, grid).physical()
            t2 = _time.perf_counter()
            self.telemetry["flows_s"] += t2 - t1
            ratio = sup_norm(upsample(Rs, 2) if max(Rs.grid.shape) <= 64 else Rs) / rho
            if ratio > self.ws.r0 / 4 * (1 + 1e-9):
                msg = (f"cutoff {s} at t={t:.6g}: ||R_s||/rho = {ratio:.4g} > r0/4; "
                       "the amplitudes a_k are not well defined")
                if not self.toy:
                    raise PerturbationError(msg)
                warnings.warn(f"toy mode: {msg}", ToyModeWarning)
            Rf = resample(Rs, grid)
            rph = Rf.physical()
            # g_p(R_s / rho) with R_s = rho Id - Rring_s
            m = -rph / rho
            m[:3] += 1.0
            g = np.einsum("pn,n...->p...", fam.inverse, m)
            if np.any(g <= 0):
                raise PerturbationError(
                    f"cutoff {s} at t={t:.6g}: matrix left the positivity region; "
                    "the amplitudes a_k are not well defined")
            amp = np.sqrt(rho * g)
            for p, k in enumerate(fam.pairs):
                theta = self.lam * np.tensordot(k.astype(float), self.mesh + disp, axes=1)
                A = fam.A[p]
                C = np.cross(fam.khat[p], A)
                cs, sn = np.cos(theta), np.sin(theta)
                for i in range(3):
                    wo_ph[i] += 2 * chi * amp[p] * (A[i] * cs - C[i] * sn)
            self.telemetry["amplitudes_s"] += _time.perf_counter() - t2
            ring = ring + resample(Rs, self.flow_grid) * (chi * chi)
            rho_sum += chi * chi * rho
            diag["cutoffs"].append({
                "s": s, "case": self.case(s), "chi": chi, "rho": rho, "stress_ratio": ratio,
                "flow_deviation": fm.deviation(t),
                "flow_tail": fm.tail(t), "stress_tail": Rs.tail, "substeps": fm.steps[t]})
        if not active:
            zero = Field.zeros(self.store_grid, "vector")
            return Perturbation(t, grid, zero, zero, ring, 0.0, [], diag)
        wo = Field.from_physical(grid, wo_ph, "vector", self.band_w)
        diag["wo_tail"] = wo.tail
        w = curl(wo) / (self.lam * self.ws.lambda_bar)
        w.band = wo.band
        return Perturbation(t, grid, resample(w, self.store_grid), resample(wo, self.store_grid),
                            ring, rho_sum, [s for s, _ in active], diag)

    # -- new stress and pressure
    def new_fields(self, pert: Perturbation, dtw: Field):
        """(v_{q+1}, p_{q+1}, R_{q+1}, parts) at pert.t given the stencil derivative of w."""
        t0 = _time.perf_counter()
        grid = self.grid
        t = pert.t
        dtw = resample(dtw, grid)
        vq, pq, Rq = self.tr.fields_at(t)
        vl = mollify(vq, self.ell)
        dv = vq - vl
        wf, ring = pert.w, pert.ring
        for a, b in ((wf, wf), (vl, wf), (dv, wf)):
            _check_product(a, b, self.toy)
        wo, w = pert.wo.physical(), wf.physical()
        wc = w - wo
        vl_ph, dv_ph = vl.physical(), dv.physical()

        # R^0 = R(d_t w + div(v_ell w^T + w v_ell^T))
        t_adv = Field.from_physical(grid, _outer_slots(vl_ph, w), "tensor", grid.product_limit)
        R0 = inverse_divergence(dtw + div(t_adv))
        # R^1 = R div(w_o w_o^T - sum chi^2 R_s - |w_o|^2/2 Id)
        t1 = 0.5 * _outer_slots(wo, wo) - _slot_identity(0.5 * _dot(wo, wo) + pert.rho_sum)
        osc = Field.from_physical(grid, t1, "tensor", grid.product_limit) + ring
        R1 = inverse_divergence(div(osc))
        # R^2, R^3: traceless quadratic terms
        r23 = (_outer_slots(wo, wc) + 0.5 * _outer_slots(wc, wc)
               - _slot_identity((_dot(wc, wc) + 2 * _dot(wo, wc)) / 3)
               + _outer_slots(w, dv_ph) - _slot_identity(2 * _dot(dv_ph, w) / 3))
        R23 = Field.from_physical(grid, r23, "tensor", grid.product_limit)
        R4 = Rq - ring
        Rnew = R0 + R1 + R23 + R4
        dp = -(0.5 * _dot(wo, wo) + _dot(wc, wc) / 3 + 2 * _dot(wo, wc) / 3
               + 2 * _dot(dv_ph, w) / 3)
        dpf = Field.from_physical(grid, dp, "scalar", grid.product_limit)
        pnew = pq + dpf
        vnew = vq + wf
        self.telemetry["stress_s"] += _time.perf_counter() - t0
        parts = {"R0": R0, "R1": R1, "R23": R23, "R4": R4, "dp": dpf, "osc": osc}
        return vnew, pnew, Rnew, parts

    def sample_record(self, pert: Perturbation, parts):
        t = pert.t
        j = effective_j(self.partition, t)
        jj = max(j - 1, 0)
        bound_w = self.ps.M * float(self.lam) ** (-self.ps.beta(jj))
        bound_p = self.ps.M ** 2 * float(self.lam) ** (-self.ps.beta(jj))
        wn = sup_norm(pert.w)
        pn = sup_norm(parts["dp"])
        rec = {"t": t, "j": j, "w_sup": wn, "w_bound": bound_w, "dp_sup": pn, "dp_bound": bound_p,
               "w_ok": bool(wn <= bound_w), "dp_ok": bool(pn <= bound_p)}
        rec.update({k: v for k, v in pert.diag.items() if k != "cutoffs"})
        rec["cutoffs"] = pert.diag["cutoffs"]
        return rec

    # -- driving
    def output_window(self):
        """Open time interval outside of which the new triple vanishes."""
        lo = min(self.tr.v.support[0], self.tr.R.support[0], self.cutoffs.support(1)[0])
        hi = max(self.tr.v.support[1], self.tr.R.support[1],
                 self.cutoffs.support(self.refined.n_cutoffs - 2)[1])
        return lo, hi

    def _w_at(self, t, cache):
        if t not in cache:
            cache[t] = self.perturbation(t)
        return cache[t]

    def fields_with_stencil(self, t, h):
        """New fields at t using perturbations at t +- h, t +- 2h for d_t w."""
        cache = {}
        pts = [t + k * h for k in (-2, -1, 1, 2)]
        ws = [self._w_at(x, cache).w_stored for x in pts]
        pert = self._w_at(t, cache)
        dtw = time_derivative(ws, h)
        return pert, self.new_fields(pert, dtw), cache

    def probe_residual(self, t, h):
        """Euler-Reynolds residual of the new triple at t with stencil spacing h."""
        from .verify import euler_reynolds_residual
        pert, (vnew, pnew, Rnew, _), cache = self.fields_with_stencil(t, h)
        vs = []
        for k in (-2, -1, 1, 2):
            x = t + k * h
            vs.append(self.tr.v.at(x) + cache[x].w)
        dtv = time_derivative(vs, h)
        return euler_reynolds_residual(vnew, pnew, Rnew, dtv, self.toy)

    def run(self, out_dir, progress=None):
        """Compute all samples of the new triple, write them to `out_dir`, return it loaded."""
        h = self.h
        count = int(round(1 / h)) + 1
        lo, hi = self.output_window()
        nz = [n for n in range(count) if lo < n * h < hi]
        if os.path.exists(out_dir):
            shutil.rmtree(out_dir)
        for name in ("v", "p", "R"):
            os.makedirs(os.path.join(out_dir, name))
        shas = {name: [None] * count for name in ("v", "p", "R")}
        records = []
        window = deque()
        order = list(range(nz[0] - 2, nz[-1] + 3)) if nz else []
        stats0 = STATS["fft"]
        start = _time.perf_counter()
        for n in order:
            window.append(self.perturbation(n * h))
            if len(window) > 5:
                window.popleft()
            if len(window) < 5:
                continue
            centre = window[2]
            dtw = time_derivative([window[k].w_stored for k in (0, 1, 3, 4)], h)
            vnew, pnew, Rnew, parts = self.new_fields(centre, dtw)
            m = n - 2
            rec = self.sample_record(centre, parts)
            rec["n"] = m
            records.append(rec)
            t0 = _time.perf_counter()
            for name, f in (("v", vnew), ("p", pnew), ("R", Rnew)):
                shas[name][m] = write_snapshot(f, os.path.join(out_dir, name, f"{m:06d}.bin"))
            self.telemetry["io_s"] += _time.perf_counter() - t0
            if progress:
                progress(m, nz[-1])
        self.telemetry["total_s"] = _time.perf_counter() - start
        self.telemetry["fft_count"] = STATS["fft"] - stats0
        self.telemetry["samples"] = len(records)
        dummy = Triple(self.q + 1, self.ps, self.grid, self.partition, h, None, None, None)
        summary = {"records": records, "plan": self.plan, "flow_grid": list(self.flow_grid.shape),
                   "rho": {str(s): self.rho(s) for s in range(self.refined.n_cutoffs)},
                   "cases": {str(s): self.case(s) for s in range(self.refined.n_cutoffs)},
                   "tau": self.tau, "ell": self.ell, "lambda": self.lam}
        write_manifest(dummy, out_dir, shas, summary)
        return load_triple(out_dir)


def _fields_of(series):
    if isinstance(series, SeparableSeries):
        return [f for _, f in series.terms]
    if isinstance(series, SampledSeries):
        out = []
        for n in range(series.count):
            if series._nonzero_hint(n):
                f = series.sample(n)
                if f is not None:
                    return [f]
        return out
    return []


def _check_product(a: Field, b: Field, toy):
    band = tuple(x + y for x, y in zip(a.band, b.band))
    if any(x > lim for x, lim in zip(band, a.grid.product_limit)):
        msg = f"product band {band} exceeds exact limit {a.grid.product_limit}"
        if not toy:
            raise AliasingError(msg)
        warnings.warn(f"toy mode: {msg}", ToyModeWarning)


def series_sup(series: Series, t0, t1):
    """Upper bound for sup over [t0, t1] of ||f(t)||_0."""
    if isinstance(series, SeparableSeries):
        tot = 0.0
        for c, f in series.terms:
            one = SeparableSeries(series.grid, series.kind, [(c, f)], series.support)
            tot += one.profile_bound(t0, t1) * sup_norm(f)
        return tot
    if isinstance(series, SampledSeries):
        lo = max(0, math.floor(t0 / series.h) - 2)
        hi = min(series.count - 1, math.ceil(t1 / series.h) + 2)
        m = 0.0
        for n in range(lo, hi + 1):
            f = series.sample(n)
            if f is not None:
                m = max(m, sup_norm(f))
        return 1.25 * m
    raise TypeError("unsupported series type")


def step(triple: Triple, out_dir, waveset=None, progress=None, **kw):
    """Level q -> q+1; writes the new triple to `out_dir` and returns (triple, engine)."""
    eng = StepEngine(triple, waveset, **kw)
    return eng.run(out_dir, progress), eng
