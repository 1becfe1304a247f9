"""Band-limited real periodic fields on the 2*pi torus and spectral operators.

A :class:`Field` stores normalized rfft coefficients ``rfftn(f) / n_points``
with a leading component axis (1 for scalars, 3 for vectors, 6 for symmetric
tensors in the order xx, yy, zz, xy, xz, yz).  ``band`` is a per-axis bound
on ``|k_i|`` outside of which every coefficient is zero.  Quadratic products
are computed on the native grid and are exact as long as the summed bands
stay below ``n/2``.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings

import numpy as np
import scipy.fft as sfft

TENSOR_INDEX = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
# transform counts, read by the run telemetry
STATS = {"fft": 0}
# FFT worker threads; results do not depend on this number
FFT = {"workers": int(os.environ.get("EULERCI_THREADS", "1") or 1)}


def set_threads(n):
    FFT["workers"] = max(1, int(n))
_SLOT = {}
for _n, (_a, _b) in enumerate(TENSOR_INDEX):
    _SLOT[(_a, _b)] = _n
    _SLOT[(_b, _a)] = _n
NCOMP = {"scalar": 1, "vector": 3, "tensor": 6}
RANK = {"scalar": 0, "vector": 1, "tensor": 2}


class AliasingError(ValueError):
    pass


class SnapshotError(IOError):
    pass


class Grid3:
    """Uniform periodic grid on [0, 2pi)^3 with n_i points per axis (powers of two)."""

    def __init__(self, N, shape=None):
        shape = tuple(int(s) for s in (shape if shape is not None else (N, N, N)))
        for s in shape:
            if s < 8 or s & (s - 1):
                raise ValueError(f"grid sizes must be powers of two >= 8, got {shape}")
        self.shape = shape
        self.N = max(shape)
        self.size = int(np.prod(shape))
        self.dx = tuple(2 * np.pi / s for s in shape)
        n1, n2, n3 = shape
        self.k1 = (sfft.fftfreq(n1) * n1).reshape(-1, 1, 1)
        self.k2 = (sfft.fftfreq(n2) * n2).reshape(1, -1, 1)
        self.k3 = (sfft.rfftfreq(n3) * n3).reshape(1, 1, -1)
        self.kvec = (self.k1, self.k2, self.k3)
        self.spec_shape = (n1, n2, n3 // 2 + 1)
        self.k2sum = self.k1 ** 2 + self.k2 ** 2 + self.k3 ** 2
        # per-axis dealiased band and exact-product limit
        self.kmax = tuple(s // 3 for s in shape)
        self.product_limit = tuple(s // 2 - 1 for s in shape)

    def __eq__(self, other):
        return isinstance(other, Grid3) and self.shape == other.shape

    def __hash__(self):
        return hash(self.shape)

    def __repr__(self):
        return f"Grid3{self.shape}"

    def coords(self):
        """Broadcastable coordinate arrays x1, x2, x3."""
        return tuple(
            (np.arange(s) * 2 * np.pi / s).reshape([-1 if i == a else 1 for i in range(3)])
            for a, s in enumerate(self.shape))

    def mesh(self):
        x = self.coords()
        return np.stack(np.broadcast_arrays(*x))

    def band_mask(self, band):
        return ((np.abs(self.k1) <= band[0]) & (np.abs(self.k2) <= band[1])
                & (self.k3 <= band[2]))

    def wavenumbers(self):
        return self.kvec


def _as_band(band, grid):
    if band is None:
        return grid.kmax
    if np.isscalar(band):
        band = (int(band),) * 3
    return tuple(min(int(b), s // 2 - 1) for b, s in zip(band, grid.shape))


class Field:
    def __init__(self, grid: Grid3, coeffs, kind, band=None, tail=0.0):
        self.grid = grid
        self.coeffs = coeffs
        self.kind = kind
        self.band = _as_band(band, grid) if band is not None else grid.product_limit
        self.tail = tail

    # ---- constructors
    @classmethod
    def zeros(cls, grid, kind, band=0):
        return cls(grid, np.zeros((NCOMP[kind],) + grid.spec_shape, complex), kind, band)

    @classmethod
    def from_physical(cls, grid, arr, kind=None, band=None):
        """Spectral coefficients of sampled data, truncated to `band`.

        ``tail`` records the relative l2 weight of the discarded modes.
        """
        arr = np.asarray(arr, dtype=float)
        if arr.shape == grid.shape:
            arr = arr[None]
        if kind is None:
            kind = {1: "scalar", 3: "vector", 6: "tensor"}[arr.shape[0]]
        if arr.ndim == 5:  # full 3x3 matrix field
            arr = np.stack([arr[a, b] for a, b in TENSOR_INDEX])
        c = sfft.rfftn(arr, axes=(1, 2, 3), norm="forward", workers=FFT["workers"])
        STATS["fft"] += arr.shape[0]
        band = _as_band(band, grid)
        mask = grid.band_mask(band)
        tot = _spec_energy(c)
        c = c * mask
        kept = _spec_energy(c)
        tail = float(np.sqrt(max(tot - kept, 0.0) / tot)) if tot > 0 else 0.0
        return cls(grid, c, kind, band, tail)

    @classmethod
    def from_function(cls, grid, fn, kind=None, band=None):
        x = grid.coords()
        arr = np.asarray(fn(*np.broadcast_arrays(*x)), float)
        return cls.from_physical(grid, arr, kind, band)

    # ---- views
    @property
    def ncomp(self):
        return self.coeffs.shape[0]

    def physical(self):
        STATS["fft"] += self.ncomp
        return sfft.irfftn(self.coeffs, s=self.grid.shape, axes=(1, 2, 3), norm="forward",
                           workers=FFT["workers"])

    def matrix(self):
        """Physical 3x3 symmetric matrix field (tensors only)."""
        if self.kind != "tensor":
            raise TypeError("matrix() needs a tensor field")
        ph = self.physical()
        return _slots_to_matrix(ph)

    def component(self, i):
        return Field(self.grid, self.coeffs[i:i + 1].copy(), "scalar", self.band)

    def copy(self):
        return Field(self.grid, self.coeffs.copy(), self.kind, self.band, self.tail)

    def mean(self):
        return self.coeffs[:, 0, 0, 0].real.copy()

    def truncate(self, band):
        band = _as_band(band, self.grid)
        return Field(self.grid, self.coeffs * self.grid.band_mask(band), self.kind,
                     tuple(min(a, b) for a, b in zip(band, self.band)))

    def compact(self, rtol=1e-14):
        """Truncated to the measured band (drops transform noise)."""
        return self.truncate(self.measured_band(rtol))

    def measured_band(self, rtol=1e-13):
        """Smallest per-axis band holding every coefficient above rtol * max."""
        a = np.abs(self.coeffs).max(axis=0)
        if a.max() == 0:
            return (0, 0, 0)
        m = a > rtol * a.max()
        g = self.grid
        return tuple(int(np.abs(np.broadcast_to(k, m.shape)[m]).max()) for k in g.kvec)

    # ---- arithmetic
    def _check(self, other):
        if not isinstance(other, Field) or other.grid != self.grid or other.kind != self.kind:
            raise TypeError("incompatible fields")

    def __add__(self, other):
        self._check(other)
        return Field(self.grid, self.coeffs + other.coeffs, self.kind,
                     _max_band(self.band, other.band))

    def __sub__(self, other):
        self._check(other)
        return Field(self.grid, self.coeffs - other.coeffs, self.kind,
                     _max_band(self.band, other.band))

    def __neg__(self):
        return Field(self.grid, -self.coeffs, self.kind, self.band)

    def __mul__(self, s):
        if not np.isscalar(s):
            raise TypeError("use multiply() for field products")
        return Field(self.grid, self.coeffs * s, self.kind, self.band)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / s)

    def __repr__(self):
        return f"Field({self.kind}, {self.grid}, band={self.band})"


def _max_band(a, b):
    return tuple(max(x, y) for x, y in zip(a, b))


def _spec_energy(c):
    """sum |c|^2 over the full spectrum (the k3 = 0 plane is stored once, the rest twice)."""
    c = np.ascontiguousarray(c)
    c0 = np.ascontiguousarray(c[..., 0])
    return float(2.0 * np.vdot(c, c).real - np.vdot(c0, c0).real)


def _slots_to_matrix(ph):
    out = np.empty((3, 3) + ph.shape[1:])
    for a in range(3):
        for b in range(3):
            out[a, b] = ph[_SLOT[(a, b)]]
    return out


def matrix_to_slots(mat):
    return np.stack([mat[a, b] for a, b in TENSOR_INDEX])


# ---------------------------------------------------------------------------
# derivatives

def _dcoef(grid, axis, order=1, band=None):
    k = grid.kvec[axis]
    out = (1j * k) ** order
    # the Nyquist bin has no consistent odd derivative on a real grid
    if order % 2:
        n = grid.shape[axis]
        out = np.where(np.abs(k) == n // 2, 0, out)
    return out


def derivative(f: Field, axis, order=1):
    return Field(f.grid, f.coeffs * _dcoef(f.grid, axis, order), f.kind, f.band)


def partial(f: Field, multi_index):
    """D^beta f for a multi-index (b1, b2, b3)."""
    c = f.coeffs
    for ax, o in enumerate(multi_index):
        if o:
            c = c * _dcoef(f.grid, ax, o)
    return Field(f.grid, c, f.kind, f.band)


def grad(f: Field):
    """Gradient of a scalar (vector field) or of a vector (list of 3 vector columns d_j f)."""
    if f.kind == "scalar":
        c = np.concatenate([f.coeffs * _dcoef(f.grid, a) for a in range(3)])
        return Field(f.grid, c, "vector", f.band)
    if f.kind == "vector":
        return [derivative(f, a) for a in range(3)]
    raise TypeError("grad of tensors is not supported")


def div(f: Field):
    g = f.grid
    if f.kind == "vector":
        c = sum(f.coeffs[a] * _dcoef(g, a) for a in range(3))
        return Field(g, c[None], "scalar", f.band)
    if f.kind == "tensor":
        c = np.stack([sum(f.coeffs[_SLOT[(i, j)]] * _dcoef(g, j) for j in range(3))
                      for i in range(3)])
        return Field(g, c, "vector", f.band)
    raise TypeError("div needs a vector or tensor")


def curl(f: Field):
    if f.kind != "vector":
        raise TypeError("curl needs a vector field")
    g = f.grid
    d = [_dcoef(g, a) for a in range(3)]
    u = f.coeffs
    c = np.stack([d[1] * u[2] - d[2] * u[1], d[2] * u[0] - d[0] * u[2], d[0] * u[1] - d[1] * u[0]])
    return Field(g, c, "vector", f.band)


def laplacian(f: Field):
    return Field(f.grid, -f.grid.k2sum * f.coeffs, f.kind, f.band)


def inverse_laplacian(f: Field):
    """Mean-free solution u of Laplace(u) = f - mean(f)."""
    k2 = f.grid.k2sum.copy()
    k2[0, 0, 0] = 1.0
    c = -f.coeffs / k2
    c[:, 0, 0, 0] = 0.0
    return Field(f.grid, c, f.kind, f.band)


def leray(f: Field):
    """Projection onto divergence-free vector fields (mean kept)."""
    if f.kind != "vector":
        raise TypeError("leray needs a vector field")
    g = f.grid
    k = [np.broadcast_to(kk, g.spec_shape) for kk in g.kvec]
    k2 = g.k2sum.copy()
    k2[0, 0, 0] = 1.0
    kd = sum(k[a] * f.coeffs[a] for a in range(3)) / k2
    c = np.stack([f.coeffs[a] - k[a] * kd for a in range(3)])
    return Field(g, c, "vector", f.band)


def inverse_divergence(v: Field):
    """Symmetric trace-free R(v) with div R(v) = v - mean(v).

    R v = 1/4 (D Pu + D Pu^T) + 3/4 (D u + D u^T) - 1/2 (div u) Id with
    Laplace(u) = v - mean(v) and P the Leray projection.
    """
    if v.kind != "vector":
        raise TypeError("inverse_divergence needs a vector field")
    g = v.grid
    u = inverse_laplacian(v)
    pu = leray(u)
    d = [_dcoef(g, a) for a in range(3)]
    divu = sum(d[a] * u.coeffs[a] for a in range(3))
    c = np.empty((6,) + g.spec_shape, complex)
    for n, (i, j) in enumerate(TENSOR_INDEX):
        s = 0.25 * (d[j] * pu.coeffs[i] + d[i] * pu.coeffs[j]) \
            + 0.75 * (d[j] * u.coeffs[i] + d[i] * u.coeffs[j])
        if i == j:
            s = s - 0.5 * divu
        c[n] = s
    return Field(g, c, "tensor", v.band)


def trace(t: Field):
    return Field(t.grid, (t.coeffs[0] + t.coeffs[1] + t.coeffs[2])[None], "scalar", t.band)


def identity_times(s: Field):
    """Tensor field s * Id."""
    c = np.zeros((6,) + s.grid.spec_shape, complex)
    c[0] = c[1] = c[2] = s.coeffs[0]
    return Field(s.grid, c, "tensor", s.band)


# ---------------------------------------------------------------------------
# products

def _product_band(f, g, toy):
    grid = f.grid
    band = tuple(a + b for a, b in zip(f.band, g.band))
    over = [b > lim for b, lim in zip(band, grid.product_limit)]
    if any(over):
        if not toy:
            raise AliasingError(
                f"product band {band} exceeds exact limit {grid.product_limit} on {grid}")
        warnings.warn("toy mode: truncating product with the 2/3 rule", stacklevel=3)
        return None
    return band


def _phys_pair(f, g, toy):
    band = _product_band(f, g, toy)
    if band is None:
        f, g = f.truncate(f.grid.kmax), g.truncate(g.grid.kmax)
        band = f.grid.kmax
    return f.physical(), g.physical(), band


def multiply(f: Field, g: Field, toy=False):
    """Pointwise product; one factor must be a scalar."""
    if f.kind != "scalar":
        f, g = g, f
    if f.kind != "scalar":
        raise TypeError("multiply needs a scalar factor; use outer/dot for vectors")
    a, b, band = _phys_pair(f, g, toy)
    return Field.from_physical(f.grid, a * b, g.kind, band)


def dot(u: Field, w: Field, toy=False):
    a, b, band = _phys_pair(u, w, toy)
    return Field.from_physical(u.grid, np.sum(a * b, axis=0), "scalar", band)


def outer(u: Field, w: Field, toy=False):
    """Symmetrized outer product (u w^T + w u^T) / 2 as a tensor field."""
    a, b, band = _phys_pair(u, w, toy)
    ph = np.stack([0.5 * (a[i] * b[j] + a[j] * b[i]) for i, j in TENSOR_INDEX])
    return Field.from_physical(u.grid, ph, "tensor", band)


def tensor_apply(t: Field, u: Field, toy=False):
    """Matrix-vector product (t u)_i = t_ij u_j."""
    a, b, band = _phys_pair(t, u, toy)
    ph = np.stack([sum(a[_SLOT[(i, j)]] * b[j] for j in range(3)) for i in range(3)])
    return Field.from_physical(t.grid, ph, "vector", band)


# ---------------------------------------------------------------------------
# mollification

_MOLL_X, _MOLL_W = np.polynomial.legendre.leggauss(160)
_MOLL_R = 0.5 * (_MOLL_X + 1.0)
_MOLL_WR = 0.5 * _MOLL_W * np.exp(-1.0 / (1.0 - _MOLL_R ** 2)) * _MOLL_R ** 2


def mollifier_hat(xi):
    """Fourier transform of the radial bump psi(y) ~ exp(-1/(1-|y|^2)), normalized to 1 at 0."""
    xi = np.asarray(xi, dtype=float)
    flat = xi.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    arg = np.outer(uniq, _MOLL_R)
    vals = (np.sinc(arg / np.pi) @ _MOLL_WR) / _MOLL_WR.sum()
    return vals[inv].reshape(xi.shape)


def mollify(f: Field, ell):
    """Periodic convolution with psi_ell(y) = ell^-3 psi(y/ell)."""
    if ell < 0:
        raise ValueError("mollification length must be nonnegative")
    if ell == 0:
        return f.copy()
    g = f.grid
    kk = np.sqrt(g.k2sum)
    return Field(g, f.coeffs * mollifier_hat(ell * kk), f.kind, f.band)


# ---------------------------------------------------------------------------
# norms and Hölder estimates

def pointwise_norm(ph, kind):
    """|f(x)|: absolute value, Euclidean norm, or operator norm of a symmetric matrix."""
    if kind == "scalar":
        return np.abs(ph[0])
    if kind == "vector":
        return np.sqrt(np.sum(ph ** 2, axis=0))
    mat = _slots_to_matrix(ph)
    mat = np.moveaxis(mat, (0, 1), (-2, -1))
    ev = np.linalg.eigvalsh(mat)
    return np.max(np.abs(ev), axis=-1)


def upsample(f: Field, factor):
    """Same coefficients on a grid `factor` times finer (spectral interpolation)."""
    if factor == 1:
        return f
    g2 = Grid3(None, tuple(s * factor for s in f.grid.shape))
    c = np.zeros((f.ncomp,) + g2.spec_shape, complex)
    n1, n2, _ = f.grid.shape
    b1, b2, b3 = f.band
    i1 = np.r_[0:b1 + 1, n1 - b1:n1] if b1 else np.r_[0:1]
    j1 = np.r_[0:b1 + 1, g2.shape[0] - b1:g2.shape[0]] if b1 else np.r_[0:1]
    i2 = np.r_[0:b2 + 1, n2 - b2:n2] if b2 else np.r_[0:1]
    j2 = np.r_[0:b2 + 1, g2.shape[1] - b2:g2.shape[1]] if b2 else np.r_[0:1]
    c[np.ix_(range(f.ncomp), j1, j2, range(b3 + 1))] = \
        f.coeffs[np.ix_(range(f.ncomp), i1, i2, range(b3 + 1))]
    return Field(g2, c, f.kind, f.band)


def resample(f: Field, grid: Grid3):
    """The same trigonometric polynomial on another grid (modes beyond its band are dropped)."""
    band = tuple(min(b, s // 2 - 1) for b, s in zip(f.band, grid.shape))
    src = _band_slices(f.grid, band)
    dst = _band_slices(grid, band)
    c = np.zeros((f.ncomp,) + grid.spec_shape, complex)
    c[np.ix_(range(f.ncomp), *dst)] = f.coeffs[np.ix_(range(f.ncomp), *src)]
    return Field(grid, c, f.kind, band, f.tail)


def sup_norm(f: Field, oversample=1):
    return float(pointwise_norm(upsample(f, oversample).physical(), f.kind).max())


def multi_indices(m):
    return [(a, b, m - a - b) for a in range(m + 1) for b in range(m + 1 - a)]


def seminorm(f: Field, m, oversample=1):
    """[f]_m = max over |beta| = m of ||D^beta f||_0."""
    if m == 0:
        return sup_norm(f, oversample)
    return max(sup_norm(partial(f, mi), oversample) for mi in multi_indices(m))


def cm_norm(f: Field, m, oversample=1):
    """||f||_m = sum_{j <= m} [f]_j."""
    return sum(seminorm(f, j, oversample) for j in range(m + 1))


HOLDER_DIRECTIONS = [(1, 0, 0), (0, 1, 0), (0, 0, 1),
                     (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
                     (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1)]


class HolderEstimate(float):
    """Float value of an estimate with the maximizing point and offset attached."""

    def __new__(cls, value, point=None, offset=None):
        obj = float.__new__(cls, value)
        obj.point = point
        obj.offset = offset
        return obj


def holder_seminorm(f: Field, m, alpha, oversample=1):
    """Estimate [f]_{m+alpha} from difference quotients on the grid.

    Offsets are dyadic multiples of the grid step along the 13 lattice
    directions (3 axes, 6 face and 4 body diagonals).  Returns a lower bound
    of the true seminorm, tagged with the maximizing point and offset.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    best, arg = 0.0, (None, None)
    fields = [f] if m == 0 else [partial(f, mi) for mi in multi_indices(m)]
    for df in fields:
        ph = upsample(df, oversample).physical()
        shape = ph.shape[1:]
        dx = [2 * np.pi / s for s in shape]
        for d in HOLDER_DIRECTIONS:
            step = 1
            while True:
                shift = [step * di for di in d]
                if any(abs(s) > n // 2 for s, n in zip(shift, shape)):
                    break
                if all(s == 0 or n > 1 for s, n in zip(shift, shape)):
                    diff = ph - np.roll(ph, [-s for s in shift], axis=(1, 2, 3))
                    nrm = pointwise_norm(diff, f.kind)
                    i = int(np.argmax(nrm))
                    dist = np.sqrt(sum((s * h) ** 2 for s, h in zip(shift, dx)))
                    val = nrm.flat[i] / dist ** alpha
                    if val > best:
                        best = float(val)
                        pt = np.unravel_index(i, shape)
                        arg = (tuple(p * h for p, h in zip(pt, dx)),
                               tuple(s * h for s, h in zip(shift, dx)))
                step *= 2
    return HolderEstimate(best, *arg)


def holder_norm(f: Field, m, alpha, oversample=1):
    """||f||_{m+alpha} = ||f||_m + [f]_{m+alpha}."""
    return cm_norm(f, m, oversample) + holder_seminorm(f, m, alpha, oversample)


def l2_energy(v: Field):
    """(1/2) * integral of |v|^2 over the torus (Parseval)."""
    return 0.5 * (2 * np.pi) ** 3 * _spec_energy(v.coeffs)


# ---------------------------------------------------------------------------
# evaluation at arbitrary points

def sparse_modes(f: Field, rtol=0.0):
    """(k, c) arrays of nonzero modes over the full (Hermitian) spectrum."""
    g = f.grid
    a = np.abs(f.coeffs).max(axis=0)
    thr = rtol * a.max() if a.max() > 0 else 0.0
    idx = np.nonzero(a > thr) if thr > 0 else np.nonzero(a)
    ks = np.stack([np.broadcast_to(kk, g.spec_shape)[idx] for kk in g.kvec], axis=1)
    cs = f.coeffs[(slice(None),) + idx]
    # weight 2 for modes whose conjugate partner is not stored
    w = np.where(ks[:, 2] > 0, 2.0, 1.0)
    return ks, cs * w


def evaluate_sparse(f: Field, points, modes=None):
    """Exact trigonometric sum at arbitrary points (..., 3)."""
    ks, cs = modes if modes is not None else sparse_modes(f)
    pts = np.asarray(points, float)
    out = np.zeros((f.ncomp,) + pts.shape[:-1])
    for k, c in zip(ks, cs.T):
        ph = np.exp(1j * (pts @ k.astype(float)))
        out += (c[:, None] * ph.reshape(1, -1)).real.reshape(out.shape)
    return out


# ---------------------------------------------------------------------------
# snapshots

MAGIC = b"EULRFLD1"
_HEADER = struct.Struct("<8sIIIIIIIIIIQ8x")  # 64 bytes
ENDIAN_TAG = 0x01020304
DTYPE_COMPLEX128 = 16
assert _HEADER.size == 64


def _band_slices(grid, band):
    n1, n2, _ = grid.shape
    b1, b2, b3 = band
    i1 = np.r_[0:b1 + 1, n1 - b1:n1] if b1 else np.r_[0:1]
    i2 = np.r_[0:b2 + 1, n2 - b2:n2] if b2 else np.r_[0:1]
    return i1, i2, np.arange(b3 + 1)


def snapshot_bytes(f: Field):
    i1, i2, i3 = _band_slices(f.grid, f.band)
    block = np.ascontiguousarray(f.coeffs[np.ix_(range(f.ncomp), i1, i2, i3)], dtype="<c16")
    head = _HEADER.pack(MAGIC, 1, RANK[f.kind], *f.grid.shape, *f.band, ENDIAN_TAG,
                        DTYPE_COMPLEX128, block.size)
    return head + block.tobytes()


def write_snapshot(f: Field, path, meta=None):
    """Write a binary snapshot plus a JSON sidecar; returns the sha256 of the binary."""
    blob = snapshot_bytes(f)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    digest = hashlib.sha256(blob).hexdigest()
    side = {"kind": f.kind, "shape": list(f.grid.shape), "band": list(f.band),
            "sha256": digest, "tail": f.tail}
    if meta:
        side.update(meta)
    with open(tmp, "w") as fh:
        json.dump(side, fh, indent=1)
    os.replace(tmp, str(path) + ".json")
    return digest


def read_snapshot(path, sha256=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    if sha256 is not None and hashlib.sha256(blob).hexdigest() != sha256:
        raise SnapshotError(f"checksum mismatch in {path}")
    if len(blob) < 64:
        raise SnapshotError(f"truncated snapshot {path}")
    magic, ver, rank, n1, n2, n3, b1, b2, b3, tag, dtype, count = _HEADER.unpack(blob[:64])
    if magic != MAGIC or tag != ENDIAN_TAG or dtype != DTYPE_COMPLEX128:
        raise SnapshotError(f"bad snapshot header in {path}")
    kind = {0: "scalar", 1: "vector", 2: "tensor"}[rank]
    grid = Grid3(None, (n1, n2, n3))
    band = (b1, b2, b3)
    i1, i2, i3 = _band_slices(grid, band)
    shape = (NCOMP[kind], len(i1), len(i2), len(i3))
    if count != int(np.prod(shape)) or len(blob) != 64 + 16 * count:
        raise SnapshotError(f"size mismatch in {path}")
    block = np.frombuffer(blob[64:], dtype="<c16").reshape(shape)
    c = np.zeros((NCOMP[kind],) + grid.spec_shape, complex)
    c[np.ix_(range(NCOMP[kind]), i1, i2, i3)] = block
    return Field(grid, c, kind, band)
