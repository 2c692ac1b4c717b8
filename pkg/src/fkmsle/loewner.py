"""Chordal Loewner numerics with vertical-slit elementary maps.

A slit of height y at W has half-plane capacity y^2/4.  Synthesis composes
inverse slit maps; the zipper applies forward slit maps fitted to
successive curve points.  Both inner loops are compiled with numba.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .continuum import KAPPA, check_config, grad_log_Z, grad_log_Z_first_many


@njit(cache=True)
def _slit_forward(z, W, y):
    d = z - W
    s = np.sqrt(d * d + y * y)
    if s.imag < 0.0 or (s.imag == 0.0 and s.real * d.real < 0.0):
        s = -s
    return W + s


@njit(cache=True)
def _slit_inverse(w, W, y):
    return W + np.sqrt(w - W - y) * np.sqrt(w - W + y)


@njit(cache=True)
def _trace_kernel(W, heights):
    n = len(W)
    out = np.empty(n, dtype=np.complex128)
    for k in range(n):
        z = W[k] + 1j * heights[k]
        for j in range(k - 1, -1, -1):
            z = _slit_inverse(z, W[j], heights[j])
        out[k] = z
    return out


@njit(cache=True)
def _zipper_kernel(points, spect, skip_tol, fail_tol, horizon, block=256):
    """Unzip slit by slit.  Points are brought forward one block at a time, so
    the work stops growing once the capacity horizon is reached."""
    n = len(points)
    m = len(spect)
    w = points.copy()
    s = spect.astype(np.complex128)
    A = np.empty(n)
    Y = np.empty(n)
    W = np.empty(n)
    T = np.empty(n)
    S = np.empty((n, m))
    W[0] = points[0].real
    T[0] = 0.0
    for i in range(m):
        S[0, i] = spect[i]
    cnt = 1
    t = 0.0
    status = 0
    n_slits = 0
    done_upto = 1          # points [1, done_upto) are current
    k = 1
    while k < n:
        if k >= done_upto:
            hi = min(n, done_upto + block)
            for j in range(done_upto, hi):
                z = w[j]
                for q in range(n_slits):
                    z = _slit_forward(z, A[q], Y[q])
                w[j] = z
            done_upto = hi
        p = w[k]
        if p.imag < -fail_tol:
            status = -k
            break
        if not (p.imag <= skip_tol or t + 0.25 * p.imag * p.imag == t):
            a, y = p.real, p.imag
            A[n_slits] = a
            Y[n_slits] = y
            n_slits += 1
            for j in range(k + 1, done_upto):
                w[j] = _slit_forward(w[j], a, y)
            for i in range(m):
                s[i] = _slit_forward(s[i], a, y)
            t += 0.25 * y * y
            W[cnt] = a
            T[cnt] = t
            for i in range(m):
                S[cnt, i] = s[i].real
            cnt += 1
            if t >= horizon:
                break
        k += 1
    return W[:cnt], T[:cnt], S[:cnt], status


# -- data types ------------------------------------------------------------------

@dataclass
class DrivingPath:
    times: np.ndarray
    values: np.ndarray
    spectator_tracks: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    eps_swallow: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        st = np.asarray(self.spectator_tracks, dtype=float)
        self.spectator_tracks = st.reshape(len(self.times), -1) if st.size else np.zeros((len(self.times), 0))
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, fh) -> None:
        wr = csv.writer(fh)
        wr.writerow(["t", "W"] + [f"b{i + 2}" for i in range(self.spectator_tracks.shape[1])])
        for k in range(len(self.times)):
            wr.writerow([repr(float(self.times[k])), repr(float(self.values[k]))]
                        + [repr(float(v)) for v in self.spectator_tracks[k]])


@dataclass
class TracePath:
    points: np.ndarray
    times: np.ndarray | None = None


@dataclass
class SdeConfig:
    kappa: float = KAPPA
    dt: float = 1e-3
    seed: int = 0
    horizon: float = 1.0
    eps_swallow: float | None = None
    dt_rel: float | None = None     # adaptive: dt_k = min(dt, dt_rel * gap^2)
    zero_noise: bool = False
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.dt <= 0 or self.kappa < 0 or self.horizon <= 0:
            raise ValueError("dt, horizon must be positive and kappa non-negative")
        if self.eps_swallow is not None and self.eps_swallow <= 0:
            raise ValueError("eps_swallow must be positive")


# -- sampling -----------------------------------------------------------------------

def sample_driving(b0: Sequence[float], cfg: SdeConfig,
                   rng: np.random.Generator | None = None) -> DrivingPath:
    """Euler-Maruyama for dW = sqrt(kappa) dB + kappa d_1 log Z dt with spectator flows."""
    b0 = check_config(b0)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    eps = cfg.eps_swallow if cfg.eps_swallow is not None else 1e-3 * float(np.min(np.diff(b0)))
    W = float(b0[0])
    spect = b0[1:].astype(float).copy()
    t = 0.0
    ts, Ws, Ss = [0.0], [W], [spect.copy()]
    sk = math.sqrt(cfg.kappa)
    for step in range(cfg.max_steps):
        gap = float(np.min(np.abs(spect - W)))
        if gap < eps or t >= cfg.horizon:
            break
        dt = cfg.dt if cfg.dt_rel is None else min(cfg.dt, cfg.dt_rel * gap * gap)
        dt = min(dt, cfg.horizon - t)
        mu = cfg.kappa * grad_log_Z([W, *spect], 1)
        if not math.isfinite(mu):
            raise RuntimeError(f"drift blew up at step {step}, t = {t}")
        dB = 0.0 if cfg.zero_noise else rng.standard_normal() * math.sqrt(dt)
        spect = spect + 2.0 * dt / (spect - W)
        W = W + sk * dB + mu * dt
        t += dt
        ts.append(t)
        Ws.append(W)
        Ss.append(spect.copy())
        if np.any(np.diff(np.concatenate([[W], spect])) <= 0) and gap >= eps:
            # a spectator was overtaken within one step: stop at the swallow
            break
    return DrivingPath(np.array(ts), np.array(Ws), np.array(Ss), eps)


def brownian_driving(kappa: float, dt: float, horizon: float,
                     rng: np.random.Generator) -> DrivingPath:
    n = int(round(horizon / dt))
    t = dt * np.arange(n + 1)
    W = np.concatenate([[0.0], np.cumsum(rng.standard_normal(n) * math.sqrt(kappa * dt))])
    return DrivingPath(t, W)


def swallow_detect(path: DrivingPath, eps: float | None = None) -> tuple[int | None, float | None]:
    """First spectator (1-based marked-point index) coming within eps of W."""
    eps = path.eps_swallow if eps is None else eps
    S = path.spectator_tracks
    if S.shape[1] == 0 or eps <= 0:
        return None, None
    gaps = np.abs(S - path.values[:, None])
    hit = np.argwhere(gaps < eps)
    order = np.concatenate([[path.values], S.T]).T
    crossed = np.argwhere(np.diff(order, axis=1) <= 0)
    cands = []
    if len(hit):
        cands.append((hit[0, 0], hit[0, 1]))
    if len(crossed):
        k, c = crossed[0]
        cands.append((k, c))
    if not cands:
        return None, None
    k, i = min(cands)
    return int(i) + 2, float(path.times[k])


# -- synthesis and extraction ---------------------------------------------------------

def trace_from_driving(path: DrivingPath) -> TracePath:
    """Tips of the hulls after each step.

    The slit of step (t_k, t_{k+1}] stands at W(t_{k+1}), so the zipper
    returns the driving values at exactly the input times.
    """
    dts = np.diff(path.times)
    heights = 2.0 * np.sqrt(dts)
    tips = _trace_kernel(path.values[1:].astype(np.float64), heights)
    pts = np.concatenate([[complex(path.values[0])], tips])
    return TracePath(pts, path.times.copy())


def extract_driving(trace: TracePath | np.ndarray, spectators: Sequence[float] = (),
                    horizon: float = math.inf, skip_tol: float = 1e-12,
                    fail_tol: float = 1e-6) -> DrivingPath:
    """Zipper: unzip vertical slits fitted to successive trace points.

    The first point is the (real) starting point.  Points whose image has
    imaginary part below ``skip_tol`` lie on the boundary and are skipped;
    an image below ``-fail_tol`` is an error.  Tolerances are absolute.
    """
    pts = trace.points if isinstance(trace, TracePath) else np.asarray(trace)
    pts = np.asarray(pts, dtype=np.complex128)
    if not np.all(np.isfinite(pts)):
        raise ValueError("trace points must be finite")
    spect = np.asarray(spectators, dtype=np.float64)
    W, T, S, status = _zipper_kernel(pts, spect, skip_tol, fail_tol, horizon)
    if status < 0:
        raise ValueError(f"trace point {-status} maps below the real line")
    return DrivingPath(T, W, S)


# -- estimation -------------------------------------------------------------------------

@dataclass
class KappaDriftEstimate:
    kappa_hat: float
    kappa_stderr: float
    drift_slope: float
    drift_stderr: float
    n_paths: int
    dt: float
    n_increments: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def stop_time(path: DrivingPath, horizon: float | None = None, min_gap: float | None = None) -> float:
    """min(horizon, end of path, last time W < b_2 < ... holds, first time a
    spectator comes within min_gap of W)."""
    end = float(path.times[-1])
    if horizon is not None:
        end = min(end, horizon)
    S = path.spectator_tracks
    if S.shape[1]:
        B = np.column_stack([path.values, S])
        broken = np.flatnonzero((np.diff(B, axis=1) <= 0).any(axis=1))
        if len(broken):
            end = min(end, float(path.times[max(broken[0] - 1, 0)]))
    if min_gap is not None and S.shape[1]:
        gap = np.min(np.abs(S - path.values[:, None]), axis=1)
        hit = np.flatnonzero(gap < min_gap)
        if len(hit):
            end = min(end, float(path.times[hit[0]]))
    return end


def stopped_grid(path: DrivingPath, dt: float, end: float) -> np.ndarray:
    """Uniform grid 0, dt, 2dt, ... below ``end``, closed by ``end`` itself."""
    k = int(math.floor(end / dt * (1 + 1e-12)))
    grid = dt * np.arange(k + 1)
    grid = grid[grid <= end]
    if end - grid[-1] > 1e-9 * dt:
        grid = np.append(grid, end)
    return grid


def drift_at(path: DrivingPath, grid: np.ndarray, kappa: float = KAPPA) -> np.ndarray:
    """kappa * d_1 log Z at (W, g(b)) interpolated to the grid times."""
    S = path.spectator_tracks
    if S.shape[1] == 0:
        return np.zeros(len(grid))
    W = np.interp(grid, path.times, path.values)
    Sg = np.column_stack([np.interp(grid, path.times, c) for c in S.T])
    return kappa * grad_log_Z_first_many(np.column_stack([W, Sg]))


def estimate_kappa_drift(paths: Sequence[DrivingPath], b0: Sequence[float] | None = None,
                         dt: float = 0.02, horizon: float | None = None,
                         kappa_model: float = KAPPA, min_gap: float | None = None,
                         drift_dt: float | None = None) -> KappaDriftEstimate:
    """Quadratic-variation diffusivity and drift regression, with path-level errors.

    Each path is cut at a stopping time (horizon, its own end, or a spectator
    within ``min_gap``) and sampled on uniform grids whose last increment is
    truncated at that time, so no increment is conditioned on later survival.

    kappa_hat = sum dW^2 / sum dt on the grid of step ``dt``.  drift_slope is
    the weighted least-squares slope of dW/dt against the predicted drift
    mu = kappa_model * d_1 log Z taken at the start of each increment of the
    finer grid ``drift_dt``, i.e. sum mu dW / sum mu^2 dt.  Standard errors
    treat paths as independent clusters.
    """
    if len(paths) < 2:
        raise ValueError("need at least two paths")
    drift_dt = dt / 10.0 if drift_dt is None else drift_dt
    if dt <= 0 or drift_dt <= 0:
        raise ValueError("grid step must be positive")
    if b0 is not None:
        b0 = check_config(b0)
        for p in paths:
            start = np.concatenate([[p.values[0]], p.spectator_tracks[0]])
            if start.shape != b0.shape or np.max(np.abs(start - b0)) > 1e-9 * max(1.0, np.max(np.abs(b0))):
                raise ValueError("path does not start from the given configuration")
    q_p, tau_p, mu_list, y_list, h_list = [], [], [], [], []
    for p in paths:
        end = stop_time(p, horizon, min_gap)
        if end <= 0:
            continue
        grid = stopped_grid(p, dt, end)
        dW = np.diff(np.interp(grid, p.times, p.values))
        q_p.append(float(np.sum(dW ** 2)))
        tau_p.append(float(grid[-1]))
        fine = stopped_grid(p, drift_dt, end)
        mu = drift_at(p, fine[:-1], kappa_model)
        mu_list.append(mu)
        y_list.append(np.diff(np.interp(fine, p.times, p.values)))
        h_list.append(np.diff(fine))
    if len(q_p) < 2:
        raise ValueError("time grid is degenerate for the given paths")
    q, tau = np.array(q_p), np.array(tau_p)
    P = len(q)
    k_hat = q.sum() / tau.sum()
    k_se = math.sqrt(P / (P - 1) * np.sum((q - k_hat * tau) ** 2)) / tau.sum()
    sxx = sum(float(mu @ (mu * h)) for mu, h in zip(mu_list, h_list))
    if sxx > 0:
        slope = sum(float(mu @ y) for mu, y in zip(mu_list, y_list)) / sxx
        resid = np.array([float(mu @ (y - slope * mu * h)) for mu, y, h in zip(mu_list, y_list, h_list)])
        s_se = math.sqrt(P / (P - 1) * np.sum(resid ** 2)) / sxx
    else:
        slope, s_se = math.nan, math.nan
    return KappaDriftEstimate(float(k_hat), float(k_se), float(slope), float(s_se), P, dt,
                              int(tau.sum() / dt))
