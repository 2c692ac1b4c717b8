"""Closed-form continuum objects on the upper half-plane.

Marked points are real numbers b[0] < ... < b[2n-1] (0-based here: b[0] is
the point the exploration starts from).  The partition function, its
logarithmic gradient and the half-plane observable are all functions of
these reals; the bulk spin correlation uses the same algebra with each pair
(b[2k], b[2k+1]) replaced by (a_k, conj(a_k)).
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.special

KAPPA = 16.0 / 3.0
BOUNDARY_WEIGHT = 1.0 / 16.0


def check_config(b: Sequence[float]) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or len(b) < 2 or len(b) % 2:
        raise ValueError("need an even number (>= 2) of marked points")
    if np.any(np.diff(b) <= 0):
        raise ValueError("marked points must be strictly increasing")
    return b


def _sigmas(n: int) -> np.ndarray:
    return np.array(list(itertools.product((1, -1), repeat=n)), dtype=float)


# -- partition function ------------------------------------------------------

def _chi_vars(x, i: int, j: int):
    """Cross-ratio of pairs i, j (0-based) for a flat list of 2n variables."""
    p1, p2, q1, q2 = x[2 * i], x[2 * i + 1], x[2 * j], x[2 * j + 1]
    return (p2 - q2) * (p1 - q1) / ((p2 - q1) * (p1 - q2))


def chi(b: Sequence[float], i: int, j: int) -> float:
    """chi_ij for 1-based pair indices 1 <= i < j <= n."""
    b = check_config(b)
    n = len(b) // 2
    if not 1 <= i < j <= n:
        raise ValueError(f"need 1 <= i < j <= {n}, got ({i}, {j})")
    return float(_chi_vars(b, i - 1, j - 1))


def sigma_sum(b: Sequence[float]) -> float:
    b = check_config(b)
    n = len(b) // 2
    total = 0.0
    for s in _sigmas(n):
        term = 1.0
        for i, j in itertools.combinations(range(n), 2):
            term *= _chi_vars(b, i, j) ** (s[i] * s[j] / 4.0)
        total += term
    return total


def partition_Z(b: Sequence[float]) -> float:
    b = check_config(b)
    gaps = b[1::2] - b[0::2]
    return float(np.prod(gaps ** -0.125) * math.sqrt(sigma_sum(b)))


def grad_log_Z_all(b: Sequence[float]) -> np.ndarray:
    """Closed-form gradient of log Z with respect to every marked point."""
    b = check_config(b)
    m = len(b)
    n = m // 2
    grad = np.zeros(m)
    for k in range(n):
        g = b[2 * k + 1] - b[2 * k]
        grad[2 * k] += 0.125 / g
        grad[2 * k + 1] -= 0.125 / g
    pairs = list(itertools.combinations(range(n), 2))
    # d log chi_ij / d b_m as a (pairs x m) matrix
    dlog = np.zeros((len(pairs), m))
    for r, (i, j) in enumerate(pairs):
        for (p, q), sgn in (((2 * i + 1, 2 * j + 1), 1), ((2 * i, 2 * j), 1),
                            ((2 * i + 1, 2 * j), -1), ((2 * i, 2 * j + 1), -1)):
            d = b[p] - b[q]
            dlog[r, p] += sgn / d
            dlog[r, q] -= sgn / d
    logchi = np.array([math.log(_chi_vars(b, i, j)) for i, j in pairs])
    S = 0.0
    dS = np.zeros(m)
    for s in _sigmas(n):
        e = np.array([s[i] * s[j] / 4.0 for i, j in pairs])
        term = math.exp(float(e @ logchi)) if pairs else 1.0
        S += term
        if pairs:
            dS += term * (e @ dlog)
    grad += 0.5 * dS / S
    return grad


def grad_log_Z(b: Sequence[float], i: int) -> float:
    """d log Z / d b^(i), with 1-based index i."""
    return float(grad_log_Z_all(b)[i - 1])


def grad_log_Z_first_many(B) -> np.ndarray:
    """d log Z / d b^(1) for each row of an (N, 2n) array of configurations."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    m = B.shape[1]
    if m < 2 or m % 2:
        raise ValueError("need an even number (>= 2) of marked points")
    n = m // 2
    out = 0.125 / (B[:, 1] - B[:, 0])
    if n == 1:
        return out
    pairs = list(itertools.combinations(range(n), 2))
    logchi = np.stack([np.log(_chi_vars(B.T, i, j)) for i, j in pairs], axis=1)
    d1 = np.zeros_like(logchi)
    for r, (i, j) in enumerate(pairs):
        if i == 0:
            d1[:, r] = 1.0 / (B[:, 0] - B[:, 2 * j]) - 1.0 / (B[:, 0] - B[:, 2 * j + 1])
    S = np.zeros(len(B))
    dS = np.zeros(len(B))
    for sg in _sigmas(n):
        e = np.array([sg[i] * sg[j] / 4.0 for i, j in pairs])
        term = np.exp(logchi @ e)
        S += term
        dS += term * (d1 @ e)
    return out + 0.5 * dS / S


def grad_log_Z_fd(b: Sequence[float], i: int, h: float | None = None) -> float:
    """Richardson-extrapolated central difference of log Z (cross-check only)."""
    b = check_config(b)
    h = h if h is not None else 1e-3 * float(np.min(np.diff(b)))

    def d(step):
        bp, bm = b.copy(), b.copy()
        bp[i - 1] += step
        bm[i - 1] -= step
        return (math.log(partition_Z(bp)) - math.log(partition_Z(bm))) / (2 * step)

    return (4.0 * d(h / 2) - d(h)) / 3.0


def drift(W: float, spectators: Sequence[float], kappa: float = KAPPA) -> float:
    """kappa * d log Z / d b^(1) at (W, b^(2), ..., b^(2n))."""
    return kappa * grad_log_Z([W, *spectators], 1)


# -- half-plane observable -----------------------------------------------------

def _pair_root(z, lo: float, hi: float):
    """sqrt(z - lo) sqrt(z - hi) with principal roots: cut on [lo, hi], positive right of it."""
    return np.sqrt(z - lo + 0j) * np.sqrt(z - hi + 0j)


@dataclass
class HalfPlaneObservableFn:
    """f(z) = P(z) / prod_k sqrt((z - b_{2k-1})(z - b_{2k}))."""

    b: np.ndarray
    poly_coeffs: np.ndarray     # ascending powers, real
    condition: float

    @property
    def n(self) -> int:
        return len(self.b) // 2

    def P(self, z):
        return np.polynomial.polynomial.polyval(z, self.poly_coeffs)

    def roots_product(self, z, skip: int | None = None):
        out = 1.0 + 0j
        for k in range(self.n):
            if k != skip:
                out = out * _pair_root(z, self.b[2 * k], self.b[2 * k + 1])
        return out

    def __call__(self, z):
        return self.P(z) / self.roots_product(z)

    def regular_part(self, z):
        """sqrt(z - b1) f(z), analytic near b1 and equal to i there."""
        b = self.b
        return self.P(z) / (np.sqrt(z - b[1] + 0j) * self.roots_product(z, skip=0))

    def pair_limits(self, i: int) -> tuple[complex, complex]:
        """Both sides of the condition for free arc i (1-based), taken from inside H."""
        k = i - 1
        lo, hi = self.b[2 * k] + 0j, self.b[2 * k + 1] + 0j
        return (self.P(lo) / self.roots_product(lo, skip=k),
                self.P(hi) / self.roots_product(hi, skip=k))


def solve_halfplane_observable(b: Sequence[float]) -> HalfPlaneObservableFn:
    b = check_config(b)
    n = len(b) // 2
    probe = HalfPlaneObservableFn(b, np.zeros(n), 1.0)
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    powers = lambda x: np.array([x ** d for d in range(n)])
    # normalization at b1: P(b1) = -sqrt(b2 - b1) prod_{k>=2} roots(b1)
    r1 = probe.roots_product(b[0] + 0j, skip=0)
    if abs(r1.imag) > 1e-12 * max(1.0, abs(r1)):
        raise RuntimeError("branch product is not real at b1")
    M[0] = powers(b[0])
    rhs[0] = -math.sqrt(b[1] - b[0]) * r1.real
    for k in range(1, n):
        rlo = probe.roots_product(b[2 * k] + 0j, skip=k).real
        rhi = probe.roots_product(b[2 * k + 1] + 0j, skip=k).real
        M[k] = powers(b[2 * k]) / rlo + powers(b[2 * k + 1]) / rhi
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"observable system is singular (condition {cond:.3g})")
    coeffs = np.linalg.solve(M, rhs)
    return HalfPlaneObservableFn(b, coeffs, cond)


def coefficient_A(b: Sequence[float], radius: float | None = None) -> float:
    """A from sqrt(z-b1) f(z) = i (1 + 2A (z - b1) + ...), by two radii and extrapolation."""
    b = check_config(b)
    f = solve_halfplane_observable(b)
    gap = float(np.min(np.diff(b)))
    r = radius if radius is not None else 1e-5 * gap
    if r >= 0.5 * gap:
        raise ValueError("extraction radius reaches another marked point")

    def at(rr):
        z = b[0] + 1j * rr
        return (f.regular_part(z) - 1j) / (2j * (z - b[0]))

    est = 2.0 * at(r / 2) - at(r)
    return float(est.real)


def halfplane_f(b: Sequence[float], z) -> complex:
    return solve_halfplane_observable(b)(z)


# -- spin correlation and BPZ ----------------------------------------------------

def _correlation_vars(x: np.ndarray) -> complex:
    """Correlation as an analytic function of 2n independent variables
    (a_1, abar_1, ..., a_n, abar_n)."""
    m = len(x)
    n = m // 2
    pref = 1.0 + 0j
    for k in range(n):
        pref *= ((x[2 * k] - x[2 * k + 1]) / 2j) ** -0.125
    total = 0j
    for s in _sigmas(n):
        term = 1.0 + 0j
        for i, j in itertools.combinations(range(n), 2):
            term *= _chi_vars(x, i, j) ** (s[i] * s[j] / 4.0)
        total += term
    return pref * np.sqrt(total)


def _interleave(a: Sequence[complex]) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    x = np.empty(2 * len(a), dtype=complex)
    x[0::2] = a
    x[1::2] = np.conj(a)
    return x


def halfplane_spin_correlation(a: Sequence[complex]) -> float:
    """prod (Im a_i)^(-1/8) (sum_sigma prod |(a_i - a_j)/(a_i - conj a_j)|^(sigma_i sigma_j / 2))^(1/2)."""
    a = np.asarray(a, dtype=complex)
    if np.any(a.imag <= 0):
        raise ValueError("points must lie in the open upper half-plane")
    if len(set(a.tolist())) != len(a):
        raise ValueError("points must be distinct")
    n = len(a)
    total = 0.0
    for s in _sigmas(n):
        term = 1.0
        for i, j in itertools.combinations(range(n), 2):
            term *= abs((a[i] - a[j]) / (a[i] - np.conj(a[j]))) ** (s[i] * s[j] / 2.0)
        total += term
    return float(np.prod(a.imag ** -0.125) * math.sqrt(total))


@dataclass(frozen=True)
class BpzConvention:
    """Sign in front of the (1/8)(x_j - x_i)^(-2) terms.

    -1 is the annihilating convention; +1 is the operator as printed.
    """

    weight_term_sign: int = -1

    def __post_init__(self):
        if self.weight_term_sign not in (1, -1):
            raise ValueError("weight_term_sign must be +1 or -1")


def bpz_apply(func: Callable[[np.ndarray], complex], x: np.ndarray, i: int,
              conv: BpzConvention, h: float) -> complex:
    """Apply the second-order operator at variable x[i] by central differences."""
    x = np.asarray(x, dtype=complex)
    m = len(x)

    def shifted(k, d):
        y = x.copy()
        y[k] += d
        return func(y)

    f0 = func(x)
    out = (8.0 / 3.0) * (shifted(i, h) - 2 * f0 + shifted(i, -h)) / h ** 2
    for j in range(m):
        if j == i:
            continue
        d = x[j] - x[i]
        out += 2.0 / d * (shifted(j, h) - shifted(j, -h)) / (2 * h)
        out += conv.weight_term_sign * 0.125 / d ** 2 * f0
    return out


def bpz_residual(a: Sequence[complex], i: int, conv: BpzConvention = BpzConvention(),
                 h_step: float = 1e-3) -> float:
    """|L_i C| / |C| for the spin correlation C at upper-half-plane points a (1-based i)."""
    a = np.asarray(a, dtype=complex)
    if np.any(a.imag <= 0):
        raise ValueError("points must lie in the open upper half-plane")
    x = _interleave(a)
    dmin = min(abs(p - q) for p, q in itertools.combinations(x, 2))
    if h_step > 0.1 * dmin:
        raise ValueError("finite-difference step too large for the point spacing")
    val = _correlation_vars(x)
    return float(abs(bpz_apply(_correlation_vars, x, 2 * (i - 1), conv, h_step)) / abs(val))


def bpz_residual_real(b: Sequence[float], i: int, conv: BpzConvention = BpzConvention(),
                      h_step: float | None = None) -> float:
    """Same operator applied to Z at real marked points, at point b^(i) (1-based)."""
    b = check_config(b)
    h = h_step if h_step is not None else 1e-3 * float(np.min(np.diff(b)))
    x = b.astype(complex)
    return float(abs(bpz_apply(_correlation_vars, x, i - 1, conv, h)) / abs(_correlation_vars(x)))


# -- Moebius maps ------------------------------------------------------------------

@dataclass(frozen=True)
class Mobius:
    """x -> (a x + b) / (c x + d) with real coefficients and ad - bc > 0."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if self.a * self.d - self.b * self.c <= 0:
            raise ValueError("map must preserve the upper half-plane")

    def __call__(self, x):
        return (self.a * x + self.b) / (self.c * x + self.d)

    def derivative(self, x):
        return (self.a * self.d - self.b * self.c) / (self.c * x + self.d) ** 2

    def compose(self, other: "Mobius") -> "Mobius":
        return Mobius(self.a * other.a + self.b * other.c, self.a * other.b + self.b * other.d,
                      self.c * other.a + self.d * other.c, self.c * other.b + self.d * other.d)


def covariance_defect(b: Sequence[float], phi: Mobius) -> float:
    """Relative mismatch of Z(phi(b)) prod phi'(b_i)^(1/16) against Z(b)."""
    b = check_config(b)
    img = phi(b)
    if np.any(np.diff(img) <= 0):
        raise ValueError("map does not preserve the order of the points")
    lhs = partition_Z(img) * float(np.prod(phi.derivative(b) ** BOUNDARY_WEIGHT))
    return abs(lhs / partition_Z(b) - 1.0)


# -- rectangle to half-plane --------------------------------------------------------

def agm(x: float, y: float, tol: float = 4e-16) -> float:
    for _ in range(64):
        if abs(x - y) <= tol * abs(x):
            break
        x, y = 0.5 * (x + y), math.sqrt(x * y)
    return 0.5 * (x + y)


def ellip_K(m: float) -> float:
    """Complete elliptic integral of the first kind, parameter m = k^2, via the AGM."""
    if not 0.0 <= m < 1.0:
        raise ValueError("parameter must lie in [0, 1)")
    return math.pi / (2.0 * agm(1.0, math.sqrt(1.0 - m)))


def modulus_for_aspect(aspect: float) -> float:
    """Parameter m = k^2 with K(1-m)/K(m) = 2 * aspect, from the nome by theta series."""
    if aspect <= 0:
        raise ValueError("aspect must be positive")
    q = math.exp(-2.0 * math.pi * aspect)
    th2 = 2.0 * sum(q ** ((j + 0.5) ** 2) for j in range(40))
    th3 = 1.0 + 2.0 * sum(q ** (j * j) for j in range(1, 40))
    return (th2 / th3) ** 4


def _sn_complex(u, m: float):
    """Jacobi sn at complex argument (scalar or array) by the addition formula."""
    u = np.asarray(u, dtype=complex)
    s, c, d, _ = scipy.special.ellipj(u.real, m)
    s1, c1, d1, _ = scipy.special.ellipj(u.imag, 1.0 - m)
    den = c1 ** 2 + m * s ** 2 * s1 ** 2
    return (s * d1 + 1j * c * d * s1 * c1) / den


@dataclass(frozen=True)
class RectangleMap:
    """Conformal map of [0,1] x [0,aspect] onto H: bottom corners -> -1, 1, top -> -1/k, 1/k."""

    aspect: float

    @property
    def m(self) -> float:
        return modulus_for_aspect(self.aspect)

    @property
    def k(self) -> float:
        return math.sqrt(self.m)

    @property
    def K(self) -> float:
        return ellip_K(self.m)

    def __call__(self, z: complex) -> complex:
        z = complex(z)
        tol = 1e-12
        if not (-tol <= z.real <= 1 + tol and -tol <= z.imag <= self.aspect + tol):
            raise ValueError(f"{z} is outside the rectangle")
        w = complex(_sn_complex((z - 0.5) * 2.0 * self.K, self.m))
        if abs(w.imag) < 1e-14 * max(1.0, abs(w)):
            w = complex(w.real, 0.0)
        return w

    def many(self, zs, clip: bool = False) -> np.ndarray:
        """Vectorized map; with ``clip`` points are first projected onto the closed rectangle."""
        zs = np.asarray(zs, dtype=complex)
        if clip:
            zs = np.clip(zs.real, 0.0, 1.0) + 1j * np.clip(zs.imag, 0.0, self.aspect)
        tol = 1e-12
        if np.any((zs.real < -tol) | (zs.real > 1 + tol) | (zs.imag < -tol) | (zs.imag > self.aspect + tol)):
            raise ValueError("points outside the rectangle")
        w = _sn_complex((zs - 0.5) * 2.0 * self.K, self.m)
        flat = np.abs(w.imag) < 1e-14 * np.maximum(1.0, np.abs(w))
        return np.where(flat, w.real + 0j, w)


def rect_to_halfplane(aspect: float, z: complex) -> complex:
    return RectangleMap(aspect)(z)


# -- tables -------------------------------------------------------------------------

def z_table_rows(configs: Sequence[Sequence[float]]) -> list[dict]:
    rows = []
    for b in configs:
        b = check_config(b)
        g = grad_log_Z_all(b)
        rows.append({
            "b": " ".join(repr(float(v)) for v in b),
            "Z": partition_Z(b),
            "grad_log_Z": " ".join(repr(float(v)) for v in g),
            "A": coefficient_A(b),
            "bpz_minus": bpz_residual_real(b, 1, BpzConvention(-1)),
            "bpz_plus": bpz_residual_real(b, 1, BpzConvention(1)),
        })
    return rows


def write_z_table(fh, configs: Sequence[Sequence[float]]) -> list[dict]:
    rows = z_table_rows(configs)
    wr = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["b"])
    wr.writeheader()
    for r in rows:
        wr.writerow(r)
    return rows
