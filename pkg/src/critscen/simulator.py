"""Desk-scale two-lane overtake simulator with two failure modes.

The ego vehicle is a point mass. Longitudinal motion is kinematic; lateral
motion follows a saturated PD loop tracking the lane centre of the current
manoeuvre, disturbed by a constant crosswind. The lateral frame has y = 0 on
the lane divider, the ego lane centre at -lane_half and the road edges at
+/- road_edge.

Failure modes:

* a-priori infeasible (status 4): the ego closes in faster than ``t_feas``
  allows; nothing is integrated and the metric is the starting offset.
* off road: ``|y|`` exceeds ``road_edge`` during the run; integration stops.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numba
import numpy as np

STATUS_OK = 0
STATUS_INFEASIBLE = 4

FOLLOW, OVERTAKE, RETURN = 0, 1, 2
MANEUVER_NAMES = ("follow", "overtake", "return")

# Values for the optional scenario parameters when a space omits them:
# (x_0_ego, v_wind, mu_road).
OPTIONAL_DEFAULTS = (0.0, 0.0, 0.8)

TRAJECTORY_COLUMNS = ("t", "s_ego", "s_lead", "y", "vy", "maneuver_state")


class NumericalFailure(RuntimeError):
    """The integrator produced a non-finite state."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02
    t_end: float = 40.0
    lane_half: float = 1.75
    road_edge: float = 3.5
    g_grav: float = 9.81
    omega_n: float = 0.4
    zeta0: float = 0.45
    mu_ref: float = 0.8
    v_ref: float = 15.0
    c_wind: float = 0.004
    t_headway: float = 2.0
    d_margin: float = 10.0
    d_clear: float = 15.0
    t_feas: float = 3.25
    # sub-step used to locate the road-departure instant within a step
    event_dt: float = 1e-5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"SimConfig.{name} must be finite and positive, got {value}")
        if self.t_end <= self.dt:
            raise ValueError("t_end must exceed dt")
        if abs(self.road_edge - 2.0 * self.lane_half) > 1e-12:
            raise ValueError("road_edge must equal 2 * lane_half")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimOutcome:
    status: int
    c_lat: float
    off_road: bool
    first_exceed_t: float | None = None
    trajectory: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, SimOutcome):
            return NotImplemented
        same_traj = (self.trajectory is None and other.trajectory is None) or (
            self.trajectory is not None and other.trajectory is not None
            and np.array_equal(self.trajectory, other.trajectory))
        return (self.status, self.c_lat, self.off_road, self.first_exceed_t) == (
            other.status, other.c_lat, other.off_road, other.first_exceed_t) and same_traj

    __hash__ = None


@numba.njit(cache=True)
def _lat_accel(y, vy, y_ref, kp, kd, a_max, a_wind):
    u = kp * (y_ref - y) - kd * vy
    if u > a_max:
        u = a_max
    elif u < -a_max:
        u = -a_max
    return u + a_wind


@numba.njit(cache=True)
def _rk4(y, vy, h, y_ref, kp, kd, a_max, a_wind):
    half = 0.5 * h
    k1y = vy
    k1v = _lat_accel(y, vy, y_ref, kp, kd, a_max, a_wind)
    k2y = vy + half * k1v
    k2v = _lat_accel(y + half * k1y, k2y, y_ref, kp, kd, a_max, a_wind)
    k3y = vy + half * k2v
    k3v = _lat_accel(y + half * k2y, k3y, y_ref, kp, kd, a_max, a_wind)
    k4y = vy + h * k3v
    k4v = _lat_accel(y + h * k3y, k4y, y_ref, kp, kd, a_max, a_wind)
    y_new = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    vy_new = vy + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return y_new, vy_new


@numba.njit(cache=True)
def _next_switch(state, v_ego, v_lead, d0, t_headway, d_margin, d_clear):
    """Time after which the manoeuvre state changes (inf if never)."""
    dv = v_ego - v_lead
    if state == FOLLOW:
        # gap d0 - dv*t drops below the trigger distance
        trigger = t_headway * v_ego + d_margin
        if d0 < trigger:
            return 0.0
        if dv > 0.0:
            return (d0 - trigger) / dv
        return np.inf
    if state == OVERTAKE and dv > 0.0:
        return (d0 + d_clear) / dv
    return np.inf


@numba.njit(cache=True)
def _advance(y, vy, h, y_ref, kp, kd, a_max, a_wind, road_edge, event_dt):
    """One RK4 step of length h; a step that leaves the road is redone in
    sub-steps of at most event_dt and cut at the first state past the edge.

    Returns (y, vy, elapsed, left_road).
    """
    y1, vy1 = _rk4(y, vy, h, y_ref, kp, kd, a_max, a_wind)
    if not abs(y1) > road_edge:
        return y1, vy1, h, False
    n_sub = int(math.ceil(h / event_dt))
    hs = h / n_sub
    for j in range(n_sub):
        y, vy = _rk4(y, vy, hs, y_ref, kp, kd, a_max, a_wind)
        if abs(y) > road_edge:
            return y, vy, (j + 1) * hs, True
    return y, vy, h, False


@numba.njit(cache=True)
def _integrate(v_ego, v_lead, d0, x0, v_wind, mu, dt, n_steps, lane_half, road_edge,
               g_grav, omega_n, zeta0, mu_ref, v_ref, c_wind, t_headway, d_margin,
               d_clear, event_dt, traj):
    """RK4 run of one scenario. Returns (c_lat, off_road, t_exceed, ok).

    Manoeuvre switches are stepped to exactly (their times are analytic), so
    the result converges with dt instead of snapping switches to the grid.
    ``traj`` is filled with grid-time samples when it has ``n_steps + 1`` rows;
    after a road departure the last used row holds the departure state.
    """
    record = traj.shape[0] == n_steps + 1
    zeta = zeta0 * (mu / mu_ref) * min(1.0, v_ref / v_ego)
    kp = omega_n * omega_n
    kd = 2.0 * zeta * omega_n
    a_max = mu * g_grav
    a_wind = c_wind * v_wind * v_wind
    y = -lane_half + x0
    vy = 0.0
    c_lat = abs(y)
    state = FOLLOW
    t_switch = _next_switch(state, v_ego, v_lead, d0, t_headway, d_margin, d_clear)
    for k in range(n_steps):
        t = k * dt
        t_end = (k + 1) * dt
        while True:
            while t_switch <= t and state != RETURN:
                state += 1
                t_switch = _next_switch(state, v_ego, v_lead, d0, t_headway, d_margin, d_clear)
            if record and t == k * dt:
                traj[k, 0] = t
                traj[k, 1] = v_ego * t
                traj[k, 2] = d0 + v_lead * t
                traj[k, 3] = y
                traj[k, 4] = vy
                traj[k, 5] = state
            t_stop = t_switch if t_switch < t_end else t_end
            y_ref = lane_half if state == OVERTAKE else -lane_half
            y, vy, elapsed, left = _advance(y, vy, t_stop - t, y_ref, kp, kd, a_max,
                                            a_wind, road_edge, event_dt)
            if not (math.isfinite(y) and math.isfinite(vy)):
                return c_lat, False, t, False
            if abs(y) > c_lat:
                c_lat = abs(y)
            if left:
                t_out = t + elapsed
                if record:
                    traj[k + 1, 0] = t_out
                    traj[k + 1, 1] = v_ego * t_out
                    traj[k + 1, 2] = d0 + v_lead * t_out
                    traj[k + 1, 3] = y
                    traj[k + 1, 4] = vy
                    traj[k + 1, 5] = state
                return c_lat, True, t_out, True
            if t_stop == t_end:
                break
            t = t_stop
    if record:
        t = n_steps * dt
        traj[n_steps, 0] = t
        traj[n_steps, 1] = v_ego * t
        traj[n_steps, 2] = d0 + v_lead * t
        traj[n_steps, 3] = y
        traj[n_steps, 4] = vy
        traj[n_steps, 5] = state
    return c_lat, False, -1.0, True


@numba.njit(cache=True)
def _integrate_batch(X, dt, n_steps, lane_half, road_edge, g_grav, omega_n, zeta0, mu_ref,
                     v_ref, c_wind, t_headway, d_margin, d_clear, event_dt):
    n = X.shape[0]
    c_lat = np.empty(n)
    off = np.zeros(n, dtype=np.bool_)
    t_out = np.empty(n)
    ok = np.ones(n, dtype=np.bool_)
    dummy = np.zeros((0, 6))
    for i in range(n):
        c_lat[i], off[i], t_out[i], ok[i] = _integrate(
            X[i, 0], X[i, 1], X[i, 2], X[i, 3], X[i, 4], X[i, 5], dt, n_steps, lane_half,
            road_edge, g_grav, omega_n, zeta0, mu_ref, v_ref, c_wind, t_headway, d_margin,
            d_clear, event_dt, dummy)
    return c_lat, off, t_out, ok


def _n_steps(cfg: SimConfig) -> int:
    return int(round(cfg.t_end / cfg.dt))


def expand_params(x_phys) -> np.ndarray:
    """Pad 3-parameter scenarios with the optional-parameter defaults, shape (N, 6)."""
    x = np.atleast_2d(np.asarray(x_phys, dtype=float))
    if x.shape[1] == 6:
        return x
    if x.shape[1] != 3:
        raise ValueError("scenarios must have 3 or 6 parameters "
                         "(v_ego, v_lead, d_0_sep[, x_0_ego, v_wind, mu_road])")
    return np.hstack([x, np.tile(OPTIONAL_DEFAULTS, (x.shape[0], 1))])


def apriori_infeasible(v_ego: float, v_lead: float, d0: float, t_feas: float) -> bool:
    dv = v_ego - v_lead
    return dv > 0 and d0 / dv < t_feas


def _check_params(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("scenario parameters must be finite")
    if np.any(x[:, 0] <= 0) or np.any(x[:, 5] <= 0):
        raise ValueError("v_ego and mu_road must be positive")


def _config_args(cfg: SimConfig) -> tuple:
    return (cfg.dt, _n_steps(cfg), cfg.lane_half, cfg.road_edge, cfg.g_grav, cfg.omega_n,
            cfg.zeta0, cfg.mu_ref, cfg.v_ref, cfg.c_wind, cfg.t_headway, cfg.d_margin,
            cfg.d_clear, cfg.event_dt)


def simulate(scn, cfg: SimConfig | None = None, record: bool = False) -> SimOutcome:
    """Run one concrete scenario (a ``ConcreteScenario`` or a physical vector)."""
    cfg = cfg or SimConfig()
    x = expand_params(getattr(scn, "x_phys", scn))
    _check_params(x)
    ve, vl, d0, x0, vw, mu = (float(v) for v in x[0])
    if apriori_infeasible(ve, vl, d0, cfg.t_feas):
        return SimOutcome(STATUS_INFEASIBLE, abs(-cfg.lane_half + x0), False)
    args = _config_args(cfg)
    n = args[1]
    traj = np.zeros((n + 1, 6) if record else (0, 6))
    c_lat, off, t_out, ok = _integrate(ve, vl, d0, x0, vw, mu, *args, traj)
    if not ok:
        raise NumericalFailure(f"non-finite lateral state at t={t_out:.3f}s "
                               f"for scenario {[ve, vl, d0, x0, vw, mu]}")
    if record:
        # rows up to and including the departure sample; unused rows stay zero
        last = int(np.flatnonzero(traj[:, 0] > 0).max()) if off else n
        traj = traj[: last + 1]
    return SimOutcome(STATUS_OK, float(c_lat), bool(off), float(t_out) if off else None,
                      traj if record else None)


def simulate_batch(x_phys, cfg: SimConfig | None = None):
    """Vectorised ``simulate`` without trajectories.

    Returns (status, c_lat, off_road, t_exceed) arrays, with t_exceed NaN
    where the road was not left; values are identical to calling
    ``simulate`` on each row.
    """
    cfg = cfg or SimConfig()
    x = expand_params(x_phys)
    _check_params(x)
    dv = x[:, 0] - x[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        infeasible = (dv > 0) & (x[:, 2] / np.where(dv > 0, dv, 1.0) < cfg.t_feas)
    status = np.where(infeasible, STATUS_INFEASIBLE, STATUS_OK)
    c_lat = np.abs(-cfg.lane_half + x[:, 3])
    off = np.zeros(x.shape[0], dtype=bool)
    t_exceed = np.full(x.shape[0], np.nan)
    run = np.flatnonzero(~infeasible)
    if run.size:
        c, o, t_out, ok = _integrate_batch(np.ascontiguousarray(x[run]), *_config_args(cfg))
        if not ok.all():
            bad = int(run[np.flatnonzero(~ok)[0]])
            raise NumericalFailure(f"scenario index {bad}: non-finite lateral state")
        c_lat[run] = c
        off[run] = o
        t_exceed[run[o]] = t_out[o]
    return status, c_lat, off, t_exceed


def outcomes_from_batch(status, c_lat, off, t_exceed) -> list[SimOutcome]:
    return [SimOutcome(int(s), float(c), bool(o), float(t) if o else None)
            for s, c, o, t in zip(status, c_lat, off, t_exceed)]


def simulate_many(scenarios, cfg: SimConfig | None = None) -> list[SimOutcome]:
    """Simulate in order; a numerical failure names the offending index."""
    outcomes = []
    for i, scn in enumerate(scenarios):
        try:
            outcomes.append(simulate(scn, cfg))
        except NumericalFailure as exc:
            raise NumericalFailure(f"scenario index {i}: {exc}") from None
    return outcomes


def criticality_vector(out: SimOutcome) -> np.ndarray:
    """(c_lat, status) as floats; the input to failure clustering."""
    return np.array([out.c_lat, float(out.status)])


def trajectory_rows(out: SimOutcome) -> list[dict]:
    if out.trajectory is None:
        return []
    rows = []
    for t, s_ego, s_lead, y, vy, state in out.trajectory:
        rows.append({"t": t, "s_ego": s_ego, "s_lead": s_lead, "y": y, "vy": vy,
                     "maneuver_state": MANEUVER_NAMES[int(state)]})
    return rows
