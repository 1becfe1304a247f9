"""Scalar parameters of the iteration: frequencies, exponents, time scales.

Everything here is a pure function of an immutable :class:`ParamSet`.
Quantities that govern the time partition (``mu``, ``eta``, ``tau``) are
evaluated on the *temporal* frequency sequence, which coincides with the
spatial one unless a toy configuration decouples them (``time_lambda0``).
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

LOG_MAX = math.log(1e300)


class ParamError(ValueError):
    pass


class ScaleOverflowError(OverflowError):
    pass


class ToyModeWarning(UserWarning):
    pass


def _ceil_power(base, exponent):
    """Smallest integer >= base**exponent, robust to last-bit rounding."""
    logv = exponent * math.log(base)
    if logv > LOG_MAX:
        raise ScaleOverflowError(
            f"scale exceeds representable range: {base}^{exponent:.4g} ~ e^{logv:.1f}")
    if base == int(base) and exponent == int(exponent):
        return int(base) ** int(exponent)
    x = float(base) ** float(exponent)
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, x):
        return int(r)
    return int(math.ceil(x))


@dataclass(frozen=True)
class ParamSet:
    eps: float
    b: float
    beta0: float
    betaInf: float
    betaMinus1: float
    eps0: float
    lambda0: float
    M: float = 3.0
    toy_mode: bool = False
    # toy-only: separate base frequency for the time partition
    time_lambda0: Optional[float] = None

    @classmethod
    def create(cls, *, b, betaInf, beta0=None, betaMinus1=None, eps=None, eps0=None,
               lambda0=2.0, M=3.0, toy_mode=False, time_lambda0=None, validate=True):
        """Build a ParamSet, deriving whichever of beta0 / betaMinus1 is missing."""
        if beta0 is None and betaMinus1 is None:
            raise ParamError("one of beta0, betaMinus1 is required")
        if beta0 is None:
            beta0 = (betaMinus1 + (b - 1.0) * betaInf) / b
        elif betaMinus1 is None:
            betaMinus1 = b * beta0 + (1.0 - b) * betaInf
        elif abs(betaMinus1 - (b * beta0 + (1.0 - b) * betaInf)) > 1e-12:
            raise ParamError("betaMinus1 must equal b*beta0 + (1-b)*betaInf")
        if eps is None:
            eps = 3.0 * (1.0 / 3.0 - betaInf)
        if eps0 is None:
            bound = eps0_bound(b, beta0, betaInf)
            eps0 = 0.5 * bound if bound > 0 else 0.01
        ps = cls(eps=float(eps), b=float(b), beta0=float(beta0), betaInf=float(betaInf),
                 betaMinus1=float(betaMinus1), eps0=float(eps0), lambda0=float(lambda0),
                 M=float(M), toy_mode=bool(toy_mode),
                 time_lambda0=None if time_lambda0 is None else float(time_lambda0))
        if validate:
            ps.validate()
        return ps

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def validate(self):
        """Raise ParamError on any violated constraint (warn instead in toy mode)."""
        if self.lambda0 <= 0 or self.b < 1 or self.M <= 0:
            raise ParamError("lambda0 > 0, b >= 1 and M > 0 are required")
        if self.time_lambda0 is not None and not self.toy_mode:
            raise ParamError("time_lambda0 is only allowed in toy mode")
        failed = [r for r in check_constraints(self).records if not r["pass"]]
        if not failed:
            return
        msg = "; ".join(f"{r['name']} (margin {r['margin']:.4g})" for r in failed)
        if self.toy_mode:
            warnings.warn(f"toy mode: constraints violated: {msg}", ToyModeWarning, stacklevel=2)
        else:
            raise ParamError(f"constraints violated: {msg}")

    # ---- exponent family
    def beta(self, j):
        if j < -1:
            raise ParamError(f"beta index must be >= -1, got {j}")
        if j == -1:
            return self.betaMinus1
        s = self.b ** (-j)
        return self.beta0 * s + (1.0 - s) * self.betaInf

    # ---- frequencies
    def lam(self, q):
        if q < 0:
            raise ParamError("level must be nonnegative")
        return _ceil_power(self.lambda0, self.b ** q)

    def lam_time(self, q):
        if self.time_lambda0 is None:
            return self.lam(q)
        return _ceil_power(self.time_lambda0, self.b ** q)

    def delta(self, q, j):
        return float(self.lam(q)) ** (-2.0 * self.beta(j))

    def mu(self, q1, j):
        """Inverse time scale mu_{q1, j} (q1 is the new level q+1)."""
        if j < 0:
            raise ParamError("mu needs j >= 0")
        lam = float(self.lam_time(q1))
        if j <= 1:
            return lam ** self.mu_low_exponent()
        return lam ** (1.0 - self.beta(j))

    def mu_low_exponent(self):
        b = self.b
        return (1 - self.beta0) * (b + 1) / (2 * b) + (b - 1) * self.betaInf / 2

    def eta(self, q1, j):
        b = self.b
        return float(self.lam_time(q1)) ** (b * self.beta0 - (b - 1) * self.betaInf - self.beta(j))

    def overlap_length(self, q1, j):
        return self.eta(q1, j) / self.mu(q1, j)

    def ell(self, q1):
        return float(self.lam(q1)) ** (self.eps0 - 1.0)

    def tau(self, q1):
        return float(self.lam_time(q1)) ** (-1.0 + self.beta0)

    @property
    def omega(self):
        b = self.b
        return (b - 1) * (1 - self.beta0 + b * self.betaInf) / (2 * b)

    def derived(self, q, jmax=None):
        """Snapshot of every derived quantity used to go from level q to q+1."""
        if jmax is None:
            jmax = q + 1
        js = list(range(jmax + 1))
        return DerivedParams(
            q=q, lambda_q=self.lam(q), lambda_next=self.lam(q + 1),
            beta={j: self.beta(j) for j in [-1] + js},
            delta={j: self.delta(q, j) for j in [-1] + js},
            mu={j: self.mu(q + 1, j) for j in js},
            eta={j: self.eta(q + 1, j) for j in js},
            ell=self.ell(q + 1), tau=self.tau(q + 1), omega=self.omega,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    def fingerprint(self):
        import hashlib
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class DerivedParams:
    q: int
    lambda_q: int
    lambda_next: int
    beta: dict
    delta: dict
    mu: dict
    eta: dict
    ell: float
    tau: float
    omega: float


def eps0_bound(b, beta0, betaInf):
    return (b - 1) * (1 - 3 * b * (betaInf + beta0)) / (8 * b)


# ---------------------------------------------------------------------------
# reports

@dataclass
class Report:
    records: list = field(default_factory=list)

    def add(self, name, lhs, rhs, margin, **extra):
        rec = {"name": name, "lhs": float(lhs), "rhs": float(rhs),
               "margin": float(margin), "pass": bool(margin >= 0)}
        rec.update(extra)
        self.records.append(rec)
        return rec

    @property
    def ok(self):
        return all(r["pass"] for r in self.records)

    def by_name(self, name):
        return [r for r in self.records if r["name"] == name]

    def failures(self):
        return [r for r in self.records if not r["pass"]]

    def to_json(self, **kw):
        return json.dumps(self.records, **kw)


class ConstraintReport(Report):
    pass


class OrderingReport(Report):
    pass


def check_constraints(ps: ParamSet) -> ConstraintReport:
    """Evaluate the standing parameter constraints with linear margins (rhs - lhs)."""
    rep = ConstraintReport()
    b, b0, binf = ps.b, ps.beta0, ps.betaInf
    strict = 1e-15
    rep.add("b_gt_1", 1.0, b, b - 1.0 - strict)
    rep.add("condition", 3 * b * (b0 + binf), 1.0, 1.0 - 3 * b * (b0 + binf) - strict)
    rep.add("condition2", b * (1 + 3 * b0), 5 * binf, 5 * binf - b * (1 + 3 * b0) - strict)
    rep.add("betaMinus1_positive", 0.0, ps.betaMinus1, ps.betaMinus1 - strict)
    rep.add("beta0_positive", 0.0, b0, b0 - strict)
    rep.add("beta0_below_betaInf", b0, binf, binf - b0 - strict)
    rep.add("betaInf_below_third", binf, 1 / 3, 1 / 3 - binf - strict)
    rep.add("eps0_positive", 0.0, ps.eps0, ps.eps0 - strict)
    bound = eps0_bound(b, b0, binf)
    rep.add("eps0_bound", ps.eps0, bound, bound - ps.eps0)
    rep.add("betaMinus1_identity", ps.betaMinus1, b * b0 + (1 - b) * binf,
            1e-12 - abs(ps.betaMinus1 - (b * b0 + (1 - b) * binf)))
    return rep


def _log_margin(lhs, rhs):
    """log(rhs/lhs) for an inequality lhs <= rhs."""
    return math.log(rhs) - math.log(lhs)


def check_orderings(ps: ParamSet, q_max=3, j_max=None) -> OrderingReport:
    """Check the parameter orderings used throughout the estimates.

    Margins are log-ratios log(rhs/lhs), so a margin >= 0 means the
    inequality lhs <= rhs holds.  Only the worst record per name and level
    is kept.  Records tagged ``lambda0_dependent`` are the ones that only
    hold once lambda0 is large enough.
    """
    rep = OrderingReport()
    worst = {}

    def note(name, q, lhs, rhs, lam_dep=False, **extra):
        m = _log_margin(lhs, rhs)
        key = (name, q)
        if key not in worst or m < worst[key]["margin"]:
            worst[key] = {"name": name, "q": q, "lhs": float(lhs), "rhs": float(rhs),
                          "margin": float(m), "pass": bool(m >= -1e-12),
                          "lambda0_dependent": lam_dep, **extra}

    if j_max is None:
        j_max = q_max + 2
    om = ps.omega
    for q in range(q_max + 1):
        lq, lq1 = float(ps.lam(q)), float(ps.lam(q + 1))
        for i in range(j_max + 1):
            note("asc_delta_level", q, ps.delta(q + 1, i), ps.delta(q, i), i=i)
            note("asc_delta_index", q, ps.delta(q + 1, i + 1), ps.delta(q + 1, i), i=i)
            note("asc_mu", q, ps.mu(q + 1, i + 1), ps.mu(q + 1, i), i=i)
            r_i = ps.mu(q + 1, i) / ps.eta(q + 1, i)
            r_n = ps.mu(q + 1, i + 1) / ps.eta(q + 1, i + 1)
            note("mu_eta_increasing", q, r_i, r_n, i=i)
            if i >= 2:
                target = ps.delta(q + 1, -1) ** 0.5 * lq1
                rel = abs(r_i / target - 1.0)
                note("mu_eta_identity", q, 1.0 + rel, 1.0 + 1e-12, i=i)
            note("asc_v1", q, ps.delta(q, i) ** 0.5 * lq, ps.delta(q + 1, i + 1) ** 0.5 * lq1,
                 lam_dep=True, i=i)
            # CFL chain
            im = max(i - 1, 0)
            a = ps.delta(q, i - 1) ** 0.5 * lq / (ps.delta(q + 1, i) ** 0.5 * lq1)
            bb = 2 * ps.delta(q, im) ** 0.5 * lq / ps.mu(q + 1, i)
            c = 4 * lq1 ** (-om)
            d = ps.delta(q + 2, i + 1) / (ps.delta(q + 1, i) * lq1 ** (2 * ps.eps0))
            note("cfl_chain_1", q, a, bb, lam_dep=True, i=i)
            note("cfl_chain_2", q, bb, c, lam_dep=True, i=i)
            note("cfl_chain_3", q, c, d, lam_dep=True, i=i)
            note("delta_lambda_mu", q, ps.delta(q, i - 1) ** 0.5 * lq, ps.mu(q + 1, i), lam_dep=True, i=i)
            lhs = ps.delta(q + 1, i) ** 0.5 / lq1 * r_i
            note("ov_final", q, lhs, 2 * ps.delta(q + 2, 0) * lq1 ** (-2 * ps.eps0), lam_dep=True, i=i)
            # growth of the partition from one level to the next
            note("interval_growth_a", q, 4.0,
                 ps.eta(q + 1, i) * ps.mu(q + 2, 0) / ps.mu(q + 1, i), lam_dep=True, i=i)
            note("interval_growth_b", q, 4.0, ps.mu(q + 2, i + 1) / ps.mu(q + 1, i), lam_dep=True, i=i)
        note("trivial_eta", q, ps.eta(q + 1, 0), 0.5, lam_dep=True)
        note("logarithmic_gain", q,
             2 * (q + 1) * float(ps.lam(q + 1)) ** (-ps.eps * (ps.b - 1) / 4), 1.0, lam_dep=True)
        note("endpoint_overlap", q, ps.overlap_length(q + 1, 0), 2.0 ** (-q - 3), lam_dep=True)
        note("cfl_local", q, 10 * ps.M * lq1 ** (-om), 1.0, lam_dep=True)
    rep.records = sorted(worst.values(), key=lambda r: (r["name"], r["q"]))
    return rep


# ---------------------------------------------------------------------------
# derivation from the target Hölder deficit

def exponents_from_eps(eps, convention="repaired"):
    """(betaInf, betaMinus1) from the Hölder deficit eps.

    ``literal``: betaInf = 1/3 - eps/16, betaMinus1 = eps/16.  With these,
    1 - 3b(beta0 + betaInf) = -6(b-1)betaInf < 0 for every b > 1, so no b
    satisfies the main constraint.
    ``repaired``: betaInf = 1/3 - 3eps/16 keeps 1 - 3(betaInf + betaMinus1) = 3eps/8.
    """
    if not 0 < eps < 1 / 3:
        raise ParamError("eps must lie in (0, 1/3)")
    if convention == "literal":
        return 1 / 3 - eps / 16, eps / 16
    if convention == "repaired":
        return 1 / 3 - 3 * eps / 16, eps / 16
    raise ParamError(f"unknown convention {convention!r}")


def _min_margin(b, betaInf, betaMinus1):
    beta0 = (betaMinus1 + (b - 1) * betaInf) / b
    return min(1 - 3 * b * (beta0 + betaInf), 5 * betaInf - b * (1 + 3 * beta0))


def from_eps(eps, lambda0, M=3.0, convention="repaired", toy_mode=False, time_lambda0=None,
             b=None, eps0=None, validate=True):
    """Derive a full ParamSet from eps.

    b is found by bisection for the largest b* in (1, 2] keeping both main
    constraints positive; we then take b = 1 + (b* - 1)/2 so both keep a
    margin, and eps0 = half of its upper bound.
    """
    betaInf, betaMinus1 = exponents_from_eps(eps, convention)
    if b is not None:
        return ParamSet.create(b=b, betaInf=betaInf, betaMinus1=betaMinus1, eps=eps, eps0=eps0,
                               lambda0=lambda0, M=M, toy_mode=toy_mode,
                               time_lambda0=time_lambda0, validate=validate)
    lo, hi = 1.0, 2.0
    if _min_margin(1.0 + 1e-9, betaInf, betaMinus1) <= 0:
        if not toy_mode:
            raise ParamError(
                f"no b > 1 satisfies the constraints for eps={eps} ({convention} exponents)")
        b = 1.0 + 1e-3
    else:
        if _min_margin(hi, betaInf, betaMinus1) > 0:
            lo = hi
        else:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if _min_margin(mid, betaInf, betaMinus1) > 0:
                    lo = mid
                else:
                    hi = mid
        b = 1.0 + 0.5 * (lo - 1.0)
    beta0 = (betaMinus1 + (b - 1) * betaInf) / b
    if eps0 is None:
        bound = eps0_bound(b, beta0, betaInf)
        eps0 = 0.5 * bound if bound > 0 else 0.01
    return ParamSet.create(b=b, betaInf=betaInf, betaMinus1=betaMinus1, eps=eps, eps0=eps0,
                           lambda0=lambda0, M=M, toy_mode=toy_mode, time_lambda0=time_lambda0,
                           validate=validate)


# ---------------------------------------------------------------------------
# config files

_KEYS = {"eps", "b", "beta0", "betaInf", "betaMinus1", "eps0", "lambda0", "M",
         "toy_mode", "time_lambda0", "derive_from_eps", "convention"}


def params_from_dict(cfg: dict, validate=True) -> ParamSet:
    """Build a ParamSet from a config mapping.

    Either give ``derive_from_eps: true`` with ``eps`` and ``lambda0`` (and
    optionally ``b`` and ``eps0``), or the explicit exponents ``b``,
    ``betaInf`` and one of ``beta0``/``betaMinus1``.
    ``M`` may be a number or the string ``"geometric"`` (resolved from the
    Beltrami wave set).
    """
    unknown = set(cfg) - _KEYS
    if unknown:
        raise ParamError(f"unknown config keys: {sorted(unknown)}")
    M = cfg.get("M", 3.0)
    if isinstance(M, str):
        if M != "geometric":
            raise ParamError("M must be a number or 'geometric'")
        from .beltrami import default_waveset
        M = default_waveset().geometric_M()
    toy = bool(cfg.get("toy_mode", False))
    if cfg.get("derive_from_eps"):
        return from_eps(cfg["eps"], cfg.get("lambda0", 2.0), M=M,
                        convention=cfg.get("convention", "repaired"), toy_mode=toy,
                        time_lambda0=cfg.get("time_lambda0"), b=cfg.get("b"),
                        eps0=cfg.get("eps0"), validate=validate)
    for k in ("b", "betaInf"):
        if k not in cfg:
            raise ParamError(f"missing config key {k!r}")
    return ParamSet.create(b=cfg["b"], betaInf=cfg["betaInf"], beta0=cfg.get("beta0"),
                           betaMinus1=cfg.get("betaMinus1"), eps=cfg.get("eps"),
                           eps0=cfg.get("eps0"), lambda0=cfg.get("lambda0", 2.0), M=M,
                           toy_mode=toy, time_lambda0=cfg.get("time_lambda0"), validate=validate)


def load_params(path) -> ParamSet:
    with open(path) as fh:
        cfg = json.load(fh)
    if "params" in cfg:
        cfg = cfg["params"]
    return params_from_dict(cfg)
