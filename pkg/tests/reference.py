"""Independent reference implementations used as test oracles."""

import math
from fractions import Fraction

import mpmath
import numpy as np
from scipy.integrate import solve_ivp


def lateral_reference(ve, vl, d0, x0=0.0, vw=0.0, mu=0.8, cfg=None, sample_dt=1e-3):
    """Adaptive high-order integration of the overtake model.

    Returns (c_lat, off_road). Manoeuvre switches and the road-edge crossing
    are handled as integration boundaries and terminal events.
    """
    from critscen.simulator import SimConfig
    cfg = cfg or SimConfig()
    zeta = cfg.zeta0 * (mu / cfg.mu_ref) * min(1.0, cfg.v_ref / ve)
    kp, kd = cfg.omega_n**2, 2 * zeta * cfg.omega_n
    amax, aw = mu * cfg.g_grav, cfg.c_wind * vw**2
    dv = ve - vl
    trigger = cfg.t_headway * ve + cfg.d_margin
    if d0 < trigger:
        t_ov = 0.0
    elif dv > 0:
        t_ov = (d0 - trigger) / dv
    else:
        t_ov = np.inf
    t_ret = (d0 + cfg.d_clear) / dv if dv > 0 else np.inf
    t_ret = max(t_ret, t_ov)
    pieces = [(0.0, min(t_ov, cfg.t_end), -cfg.lane_half),
              (min(t_ov, cfg.t_end), min(t_ret, cfg.t_end), cfg.lane_half),
              (min(t_ret, cfg.t_end), cfg.t_end, -cfg.lane_half)]

    def edge(t, s):
        return abs(s[0]) - cfg.road_edge
    edge.terminal = True
    edge.direction = 1

    state = np.array([-cfg.lane_half + x0, 0.0])
    c_lat = abs(state[0])
    for a, b, yref in pieces:
        if b <= a:
            continue

        def rhs(t, s, yref=yref):
            u = np.clip(kp * (yref - s[0]) - kd * s[1], -amax, amax)
            return [s[1], u + aw]
        sol = solve_ivp(rhs, (a, b), state, method="DOP853", rtol=1e-11, atol=1e-12,
                        dense_output=True, events=edge)
        t_stop = sol.t[-1]
        ts = np.append(np.arange(a, t_stop, sample_dt), t_stop)
        c_lat = max(c_lat, float(np.max(np.abs(sol.sol(ts)[0]))))
        if sol.status == 1:
            return max(c_lat, cfg.road_edge), True
        state = sol.y[:, -1]
    return c_lat, False


def apriori_count_exact(x_phys, t_feas):
    """Count of rows with d0 / (v_ego - v_lead) < t_feas in exact rational arithmetic."""
    limit = Fraction(t_feas)
    count = 0
    for ve, vl, d0 in np.asarray(x_phys)[:, :3]:
        dv = Fraction(ve) - Fraction(vl)
        if dv > 0 and Fraction(d0) / dv < limit:
            count += 1
    return count


def brute_dbscan(points, eps, min_pts):
    """O(n^2) DBSCAN with the package's conventions (min-max scaling, inclusive
    eps, self counted, clusters seeded in index order, border points keep the
    first cluster that reaches them)."""
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    lo, hi = p.min(0), p.max(0)
    span = np.where(hi > lo, hi - lo, 1.0)
    p = (p - lo) / span
    n = len(p)
    d = np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(-1))
    nbrs = [np.flatnonzero(d[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_pts for nb in nbrs]
    labels = [-1] * n
    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cid
        stack = [i]
        while stack:
            q = stack.pop()
            for j in nbrs[q]:
                if labels[j] == -1:
                    labels[j] = cid
                    if core[j]:
                        stack.append(j)
        cid += 1
    return np.array(labels)


def partition(labels):
    """Clusters as a set of frozensets plus the noise set."""
    labels = np.asarray(labels)
    clusters = frozenset(frozenset(np.flatnonzero(labels == c).tolist())
                         for c in set(labels.tolist()) if c >= 0)
    return clusters, frozenset(np.flatnonzero(labels < 0).tolist())


def dense_kernel(A, B, ls, sf2):
    out = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            out[i, j] = sf2 * math.exp(-0.5 * sum(((a - b) / ls) ** 2))
    return out


def dense_predict(X, y, Xs, ls, sf2, sn2):
    K = dense_kernel(X, X, ls, sf2) + sn2 * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    Ks = dense_kernel(X, Xs, ls, sf2)
    mean = Ks.T @ Kinv @ y
    var = sf2 - np.einsum("ij,ik,kj->j", Ks, Kinv, Ks)
    return mean, np.maximum(var, 0.0)


def phi_oracle(z):
    """Standard normal CDF at 40 significant digits."""
    with mpmath.workdps(40):
        return float(mpmath.ncdf(mpmath.mpf(z)))
