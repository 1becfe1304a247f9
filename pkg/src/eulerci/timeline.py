"""Time partitions of [0, 1], their refinement and the quadratic partition of unity.

Interval endpoints are integers on a dyadic tick grid (``2**-tick_exp``), so
shared endpoints and measures are exact.  Lengths coming from real-valued
parameters are rounded to the nearest tick.
"""
from __future__ import annotations

import bisect
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .params import ParamSet, ToyModeWarning

TICK_EXP = 60


class PartitionError(ValueError):
    pass


def _fail(msg, toy):
    if toy:
        warnings.warn(f"toy mode: {msg}", ToyModeWarning, stacklevel=3)
    else:
        raise PartitionError(msg)


@dataclass
class Interval:
    lo: int
    hi: int
    j: int
    tag: str  # 'endpoint', 'seed', 'K' or 'H'

    @property
    def length(self):
        return self.hi - self.lo


@dataclass
class Partition:
    q: int
    intervals: list
    tick_exp: int = TICK_EXP

    @property
    def ticks(self):
        return 1 << self.tick_exp

    def to_time(self, k):
        return k / self.ticks

    def length(self, iv):
        return Fraction(iv.length, self.ticks)

    @property
    def inner(self):
        return self.intervals[1:-1]

    def region_measure(self, j_upto):
        """Exact |union of V_i, i <= j_upto|."""
        s = sum(iv.length for iv in self.inner if iv.j <= j_upto)
        return Fraction(s, self.ticks)

    def support(self):
        """(first, last) tick of the union of inner intervals."""
        return self.inner[0].lo, self.inner[-1].hi

    def j_at(self, t):
        return self.intervals[self.index_at(t)].j

    def index_at(self, t):
        """Index of the interval containing t; shared endpoints go to the left interval."""
        his = [iv.hi for iv in self.intervals]
        k = t * self.ticks if not isinstance(t, int) else t
        i = bisect.bisect_left(his, k)
        return min(i, len(self.intervals) - 1)

    def validate(self, params: ParamSet | None = None, exact=True):
        """Check structural invariants; with params also the size and measure bounds.

        Returns a list of failure strings (empty when everything holds).
        """
        fails = []
        ivs = self.intervals
        if ivs[0].lo != 0 or ivs[-1].hi != self.ticks:
            fails.append("union is not [0,1]")
        for a, b in zip(ivs, ivs[1:]):
            if a.hi != b.lo:
                fails.append(f"gap/overlap at tick {a.hi}")
        for iv in ivs:
            if iv.hi <= iv.lo:
                fails.append(f"empty interval {iv}")
            if not 0 <= iv.j <= self.q:
                fails.append(f"j={iv.j} outside 0..{self.q}")
        if ivs[0].j != 0 or ivs[-1].j != 0:
            fails.append("endpoint intervals must have j=0")
        lo, hi = self.support()
        bound = Fraction(1, 2 ** (self.q + 2))
        if Fraction(lo, self.ticks) < bound or Fraction(hi, self.ticks) > 1 - bound:
            fails.append("support condition violated")
        if params is not None:
            fails += self.check_sizes(params)
            fails += self.check_measures(params)
        return fails

    def check_sizes(self, params):
        """|I| >= 4 / mu_{q+1, j} on every inner interval (exact comparison)."""
        out = []
        for iv in self.inner:
            need = Fraction(4.0 / params.mu(self.q + 1, iv.j))
            if self.length(iv) < need:
                out.append(f"interval [{iv.lo},{iv.hi}] j={iv.j} shorter than 4/mu")
        return out

    def measure_bound(self, params, j):
        lam0 = params.time_lambda0 or params.lambda0
        lam = float(params.lam_time(self.q + 1))
        return lam0 * lam ** (params.beta(j) - params.betaInf + params.eps / 4)

    def check_measures(self, params):
        out = []
        for j in range(self.q + 1):
            m = self.region_measure(j)
            if m > Fraction(self.measure_bound(params, j)):
                out.append(f"measure bound fails for j<={j}: {float(m):.4g}")
        return out

    # ---- serialization
    def to_dict(self):
        return {"q": self.q, "tick_exp": self.tick_exp,
                "intervals": [{"left_index": iv.lo, "right_index": iv.hi, "j": iv.j,
                               "region_tag": iv.tag} for iv in self.intervals]}

    @classmethod
    def from_dict(cls, d):
        ivs = [Interval(int(x["left_index"]), int(x["right_index"]), int(x["j"]), x["region_tag"])
               for x in d["intervals"]]
        return cls(q=int(d["q"]), intervals=ivs, tick_exp=int(d["tick_exp"]))

    def to_json(self):
        return json.dumps(self.to_dict())


def seed_partition(tick_exp=TICK_EXP):
    """Level-0 partition [0,3/8], [3/8,5/8], [5/8,1], all with j = 0."""
    n = 1 << tick_exp
    a, b = 3 * n // 8, 5 * n // 8
    return Partition(0, [Interval(0, a, 0, "endpoint"), Interval(a, b, 0, "seed"),
                         Interval(b, n, 0, "endpoint")], tick_exp)


def overlap_side(j_left, j_right):
    """Attachment side of the overlap between two consecutive subintervals.

    'A1': the overlap starts at the right end of the left subinterval and
    uses the left index; 'A2': it ends at the left end of the right one and
    uses the right index.
    """
    if j_left <= j_right:
        return "A1", j_left
    return "A2", j_right


@dataclass
class RefinedPartition:
    q: int                      # level being refined
    J: list                     # dicts: lo, hi, parent, j, internal
    K: list                     # dicts: lo, hi, side, jstar
    H: list                     # (lo, hi)
    counts: dict                # parent index -> number of subintervals
    tick_exp: int = TICK_EXP

    @property
    def ticks(self):
        return 1 << self.tick_exp

    @property
    def n_cutoffs(self):
        return len(self.J)

    def parent_j(self, s):
        return self.J[s]["j"]

    def is_endpoint(self, s):
        return s == 0 or s == len(self.J) - 1

    def cutoff_support(self, s):
        """Tick range of supp chi_s (closure of K_{s-1} u H_s u K_s)."""
        lo = self.K[s - 1]["lo"] if s > 0 else 0
        hi = self.K[s]["hi"] if s < len(self.K) else self.ticks
        return lo, hi

    def locate(self, t):
        """Region containing t.

        Returns (kind, s, i): kind 'H' or 'K'; s the index of that H_s / K_s;
        i the parent index j on H and the min of the two neighbouring parent
        indices on K.  Shared endpoints belong to the region on the left.
        """
        edges = []
        for s in range(len(self.J)):
            edges.append(("H", s, self.H[s][1]))
            if s < len(self.K):
                edges.append(("K", s, self.K[s]["hi"]))
        k = t * self.ticks if not isinstance(t, int) else t
        his = [e[2] for e in edges]
        idx = min(bisect.bisect_left(his, k), len(edges) - 1)
        kind, s, _ = edges[idx]
        if kind == "H":
            return kind, s, self.J[s]["j"]
        return kind, s, min(self.J[s]["j"], self.J[s + 1]["j"])


def refine(partition: Partition, params: ParamSet):
    """Subdivide the level-q partition and build overlaps and plateaus.

    Returns (RefinedPartition, Partition at level q+1).
    """
    q, T = partition.q, partition.ticks
    toy = params.toy_mode
    fails = partition.validate()
    if fails:
        raise PartitionError("input partition invalid: " + "; ".join(fails))
    for msg in partition.check_sizes(params):
        _fail(msg, toy)

    ivs = partition.intervals
    J = [dict(lo=ivs[0].lo, hi=ivs[0].hi, parent=0, j=0, internal=False)]
    counts = {}
    for a in range(1, len(ivs) - 1):
        iv = ivs[a]
        mu = params.mu(q + 1, iv.j)
        x = mu * iv.length / T / 2
        n = math.ceil(x) - 1
        if n < 2:
            _fail(f"interval {a} splits into n={n} < 2 pieces", toy)
            n = max(n, 1)
        step = round(2.0 / mu * T)
        counts[a] = n
        lo = iv.lo
        for k in range(n):
            hi = lo + step if k < n - 1 else iv.hi
            J.append(dict(lo=lo, hi=hi, parent=a, j=iv.j,
                          internal=(lo != iv.lo and hi != iv.hi)))
            lo = hi
    J.append(dict(lo=ivs[-1].lo, hi=ivs[-1].hi, parent=len(ivs) - 1, j=0, internal=False))

    K = []
    for s in range(len(J) - 1):
        side, js = overlap_side(J[s]["j"], J[s + 1]["j"])
        length = round(params.overlap_length(q + 1, js) * T)
        if side == "A1":
            lo, hi, host = J[s]["hi"], J[s]["hi"] + length, J[s + 1]
        else:
            lo, hi, host = J[s + 1]["lo"] - length, J[s + 1]["lo"], J[s]
        if length <= 0:
            raise PartitionError("overlap length below tick resolution")
        if 4 * length > host["hi"] - host["lo"]:
            _fail(f"overlap {s} longer than a quarter of its host subinterval", toy)
        K.append(dict(lo=lo, hi=hi, side=side, jstar=js))

    H = []
    for s, Js in enumerate(J):
        lo, hi = Js["lo"], Js["hi"]
        if s > 0:
            lo = max(lo, K[s - 1]["hi"])
        if s < len(K):
            hi = min(hi, K[s]["lo"])
        if hi <= lo:
            raise PartitionError(f"plateau {s} is empty")
        if 2 * (hi - lo) < Js["hi"] - Js["lo"]:
            _fail(f"plateau {s} shorter than half its subinterval", toy)
        H.append((lo, hi))

    new = []
    for s in range(len(J)):
        endpoint = s == 0 or s == len(J) - 1
        new.append(Interval(H[s][0], H[s][1], 0 if endpoint else J[s]["j"] + 1,
                            "endpoint" if endpoint else "H"))
        if s < len(K):
            new.append(Interval(K[s]["lo"], K[s]["hi"], 0, "K"))
    refined = RefinedPartition(q, J, K, H, counts, partition.tick_exp)
    out = Partition(q + 1, new, partition.tick_exp)
    fails = out.validate()
    if fails:
        _fail("refined partition invalid: " + "; ".join(fails), toy)
    return refined, out


# ---------------------------------------------------------------------------
# partition of unity

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)
_TABLE_N = 2048


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = (x > 0) & (x < 1)
    xm = x[m]
    out[m] = np.exp(-1.0 / (xm * (1.0 - xm)))
    return out


def _cell_integral(a, b):
    a = np.asarray(a, float)[..., None]
    b = np.asarray(b, float)[..., None]
    x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
    return 0.5 * (b - a)[..., 0] * (_bump(x) @ _GL_W)


_NODES = np.linspace(0.0, 1.0, _TABLE_N + 1)
_CUM = np.concatenate([[0.0], np.cumsum(_cell_integral(_NODES[:-1], _NODES[1:]))])
_Z = _CUM[-1]


def ramp(u):
    """Smooth monotone ramp: 0 for u <= 0, 1 for u >= 1, flat to all orders at both ends."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    i = np.minimum((u * _TABLE_N).astype(int), _TABLE_N - 1)
    return (_CUM[i] + _cell_integral(_NODES[i], u)) / _Z


def ramp_derivative(u):
    return _bump(u) / _Z


# fraction of each overlap kept flat at either end, so supports sit strictly inside
RAMP_MARGIN = 0.125


class CutoffFamily:
    """chi_s for s = 0..N'+1 with sum chi_s^2 = 1 on [0, 1].

    On the overlap K_s, chi_s = cos(pi/2 r) and chi_{s+1} = sin(pi/2 r) where
    r is the smooth ramp across the middle of K_s.
    """

    def __init__(self, refined: RefinedPartition):
        self.refined = refined
        T = refined.ticks
        self.k_lo = np.array([k["lo"] / T for k in refined.K])
        self.k_hi = np.array([k["hi"] / T for k in refined.K])
        if np.any(self.k_hi[:-1] > self.k_lo[1:]):
            raise PartitionError("overlapping supports beyond neighbours")
        self.n = refined.n_cutoffs

    def _phase(self, s, t):
        lo, hi = self.k_lo[s], self.k_hi[s]
        width = (hi - lo) * (1 - 2 * RAMP_MARGIN)
        return ramp((t - lo - RAMP_MARGIN * (hi - lo)) / width)

    def chi(self, s, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        left = self.k_lo[s - 1] if s > 0 else -np.inf
        right = self.k_hi[s] if s < self.n - 1 else np.inf
        m = (t >= left) & (t <= right)
        out[m] = 1.0
        if s > 0:
            mk = (t >= self.k_lo[s - 1]) & (t <= self.k_hi[s - 1])
            out[mk] = np.sin(0.5 * np.pi * self._phase(s - 1, t[mk]))
        if s < self.n - 1:
            mk = (t >= self.k_lo[s]) & (t <= self.k_hi[s])
            out[mk] = np.cos(0.5 * np.pi * self._phase(s, t[mk]))
        return out

    def chi_derivative(self, s, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for kk, sign in ((s - 1, 1.0), (s, -1.0)):
            if 0 <= kk < self.n - 1:
                lo, hi = self.k_lo[kk], self.k_hi[kk]
                width = (hi - lo) * (1 - 2 * RAMP_MARGIN)
                mk = (t >= lo) & (t <= hi)
                u = (t[mk] - lo - RAMP_MARGIN * (hi - lo)) / width
                r = ramp(u)
                trig = np.cos if sign > 0 else np.sin
                out[mk] = sign * 0.5 * np.pi * trig(0.5 * np.pi * r) * ramp_derivative(u) / width
        return out

    def active(self, t):
        """Indices s with chi_s(t) possibly nonzero (at most two)."""
        i = bisect.bisect_left(list(self.k_hi), t)
        if i < self.n - 1 and self.k_lo[i] <= t <= self.k_hi[i]:
            return [i, i + 1]
        return [i]

    def support(self, s):
        lo = self.k_lo[s - 1] if s > 0 else 0.0
        hi = self.k_hi[s] if s < self.n - 1 else 1.0
        return lo, hi

    def center(self, s):
        lo, hi = self.support(s)
        return 0.5 * (lo + hi)

    def sum_of_squares(self, t):
        t = np.asarray(t, dtype=float)
        tot = np.zeros_like(t)
        idx = np.searchsorted(self.k_hi, t)
        for s in np.unique(np.concatenate([idx, idx + 1])):
            if 0 <= s < self.n:
                tot += self.chi(int(s), t) ** 2
        return tot


def build_cutoffs(refined: RefinedPartition) -> CutoffFamily:
    return CutoffFamily(refined)


def cutoff_derivative_constants(n_max=3, samples=20001):
    """Measured C(N) = max |d^N chi / dt^N| * |K|^N for the fixed profile.

    Computed on the unit overlap by repeated finite differencing of a dense
    sample of cos(pi/2 r(u)); it does not depend on |K| by construction.
    """
    u = np.linspace(0.0, 1.0, samples)
    inner = (u - RAMP_MARGIN) / (1 - 2 * RAMP_MARGIN)
    f = np.cos(0.5 * np.pi * ramp(inner))
    h = u[1] - u[0]
    out = {}
    for n in range(1, n_max + 1):
        f = np.gradient(f, h, edge_order=2)
        out[n] = float(np.max(np.abs(f)))
    return out


def refine_rounds(params: ParamSet, rounds, tick_exp=TICK_EXP):
    """Seed partition refined `rounds` times; returns the list of (refined, partition)."""
    part = seed_partition(tick_exp)
    out = []
    for _ in range(rounds):
        ref, part = refine(part, params)
        out.append((ref, part))
    return out
