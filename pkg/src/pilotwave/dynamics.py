"""Bohmian velocity field and trajectory integration.

The guidance ODE ``dq/dt = (hbar/m) Im(grad Psi / Psi)`` is integrated with
a Dormand-Prince 5(4) pair. A batch of trajectories is advanced together
as rows of one array, but every row keeps its own time, step size and
error control. Row ``i`` of a batch therefore goes through exactly the
same floating point operations as a single-trajectory call would.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from pilotwave._validation import as_configurations, check_count, check_positive
from pilotwave.quantum_state import ConfigurationPoint, NodeProximity, _split_point

__all__ = [
    "ConfigurationPoint",
    "IntegratorConfig",
    "NodeEncountered",
    "StepLimitExceeded",
    "Trajectory",
    "TrajectoryStatus",
    "integrate_batch",
    "integrate_trajectory",
    "velocity_field",
    "write_trajectory_csv",
]

TRAJECTORY_CSV_HEADER = ("t", "x1", "y1", "x2", "y2", "vx1", "vy1", "vx2", "vy2", "absPsi")


class NodeEncountered(RuntimeError):
    def __init__(self, t, q):
        self.t = float(t)
        self.q = np.asarray(q, dtype=float)
        super().__init__(f"wavefunction node blocks integration at t={self.t:.6g}, q={self.q}")


class StepLimitExceeded(RuntimeError):
    def __init__(self, t, n_steps):
        self.t = float(t)
        self.n_steps = int(n_steps)
        super().__init__(f"step limit {n_steps} exceeded at t={self.t:.6g}")


class TrajectoryStatus(str, enum.Enum):
    COMPLETE = "complete"
    NODE = "node_encountered"
    STEP_LIMIT = "step_limit_exceeded"


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    max_step: float = 0.25
    min_step: float = 1e-10
    node_epsilon: float = 1e-10
    max_steps: int = 100_000
    project_to_slice: bool = False

    def __post_init__(self):
        check_positive(self.rel_tol, "rel_tol")
        check_positive(self.abs_tol, "abs_tol")
        check_positive(self.max_step, "max_step")
        check_positive(self.min_step, "min_step")
        check_positive(self.node_epsilon, "node_epsilon")
        check_count(self.max_steps, "max_steps")
        if not self.min_step < self.max_step:
            raise ValueError("min_step must be smaller than max_step")


@dataclass
class Trajectory:
    """Samples of one configuration-space trajectory at the requested times.

    ``positions`` and ``velocities`` have shape ``(n_samples, 4)`` in
    ``(x1, y1, x2, y2)`` order. A truncated trajectory only holds the
    samples reached before integration stopped; ``failure`` keeps the
    exception describing why.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    abs_psi: np.ndarray
    status: TrajectoryStatus = TrajectoryStatus.COMPLETE
    failure: Exception | None = None
    stats: dict = field(default_factory=dict)

    @property
    def truncated(self):
        return self.status is not TrajectoryStatus.COMPLETE

    def __len__(self):
        return len(self.times)

    def position_at(self, t):
        idx = np.flatnonzero(self.times == t)
        if idx.size == 0:
            raise KeyError(f"t={t} is not a recorded sample time")
        return self.positions[idx[0]]

    def to_rows(self):
        return np.column_stack([self.times, self.positions, self.velocities, self.abs_psi])


def write_trajectory_csv(trajectory, path):
    """Write one trajectory as CSV at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_CSV_HEADER)
        for row in trajectory.to_rows():
            writer.writerow([format(v, ".17g") for v in row])


def _velocity_rows(w, q, t):
    """Velocity and ``|Psi|`` for rows; no node checks, may be non-finite."""
    jet = w.jet(q, t, order=1)
    c = w.constants
    v = (c.hbar / c.mass) * jet.d1.imag
    return v, jet.abs_psi


def velocity_field(w, q, t=None, node_epsilon=1e-10):
    """Bohmian velocity ``(vx1, vy1, vx2, vy2)`` at ``q``.

    Raises :class:`NodeProximity` when ``|Psi(q)|`` is within
    ``node_epsilon`` (relative to the peak amplitude) of a node.
    """
    q_arr, t = _split_point(q, t)
    q_arr = as_configurations(q_arr)
    v, abs_psi = _velocity_rows(w, q_arr, t)
    near = w.is_near_node(abs_psi, t, node_epsilon)
    if np.any(near):
        raise NodeProximity(abs_psi[near], node_epsilon)
    if isinstance(q, ConfigurationPoint) or np.ndim(q) == 1:
        return v[0]
    return v


# Dormand-Prince 5(4) tableau with the free 4th order continuous extension.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# Shampine's dense output polynomial coefficients (as used by scipy's RK45).
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _project(y):
    diff = (y[:, 0] - y[:, 2]) / 2.0
    ymean = (y[:, 1] + y[:, 3]) / 2.0
    out = y.copy()
    out[:, 0], out[:, 2] = diff, -diff
    out[:, 1], out[:, 3] = ymean, ymean
    return out


def _initial_step(w, y0, t0, f0, cfg):
    """Hairer's starting step heuristic, row-wise."""
    scale = cfg.abs_tol + np.abs(y0) * cfg.rel_tol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2, axis=1))
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    y1 = y0 + h0[:, None] * f0
    f1, _ = _velocity_rows(w, y1, t0 + h0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=1)) / h0
    d2 = np.where(np.isfinite(d2), d2, 1e300)
    big = np.maximum(d1, d2)
    h1 = np.where(big <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.maximum(big, 1e-300)) ** (1 / 5))
    return np.minimum(np.minimum(100 * h0, h1), cfg.max_step)


def _integrate_rows(w, y0, t0, t_end, cfg, sample_times):
    """Advance every row of ``y0`` from ``t0`` to ``t_end``.

    Returns per-row sample arrays plus status and statistics. Rows never
    interact: all reductions below are along the coordinate axis only.
    """
    n = y0.shape[0]
    ns = len(sample_times)
    pos = np.full((n, ns, 4), np.nan)
    vel = np.full((n, ns, 4), np.nan)
    apsi = np.full((n, ns), np.nan)
    status = [TrajectoryStatus.COMPLETE] * n
    failure = [None] * n
    n_steps = np.zeros(n, dtype=np.int64)
    n_rejected = np.zeros(n, dtype=np.int64)
    err_sum = np.zeros(n)
    min_psi = np.full(n, np.inf)

    y = y0.copy()
    t = np.full(n, float(t0))
    f, ap = _velocity_rows(w, y, t)
    min_psi = np.minimum(min_psi, ap)
    next_sample = np.zeros(n, dtype=np.int64)
    # samples at the start time
    at_start = np.asarray(sample_times) == t0
    for j in np.flatnonzero(at_start):
        pos[:, j], vel[:, j], apsi[:, j] = y, f, ap
        next_sample = np.maximum(next_sample, j + 1)

    start_bad = ~np.all(np.isfinite(f), axis=1) | w.is_near_node(ap, t, cfg.node_epsilon)
    active = ~start_bad
    for i in np.flatnonzero(start_bad):
        status[i] = TrajectoryStatus.NODE
        failure[i] = NodeEncountered(t0, y0[i])

    h = np.zeros(n)
    if np.any(active):
        h[active] = _initial_step(w, y[active], t[active], f[active], cfg)
    h = np.maximum(h, cfg.min_step)

    while np.any(active):
        idx = np.flatnonzero(active)
        yi, ti, fi = y[idx], t[idx], f[idx]
        hi = np.minimum(h[idx], t_end - ti)
        k = np.empty((7, idx.size, 4))
        k[0] = fi
        stage_ok = np.ones(idx.size, dtype=bool)
        for s in range(1, 7):
            dy = sum(a * k[m] for m, a in enumerate(_A[s]) if a != 0.0)
            ys = yi + hi[:, None] * dy
            ks, aps = _velocity_rows(w, ys, ti + _C[s] * hi)
            ok = np.all(np.isfinite(ks), axis=1)
            stage_ok &= ok
            k[s] = np.where(ok[:, None], ks, 0.0)
        y_new = yi + hi[:, None] * sum(b * k[m] for m, b in enumerate(_B) if b != 0.0)
        if cfg.project_to_slice:
            y_new = _project(y_new)
        t_new = ti + hi
        f_new = k[6]
        # FSAL stage is evaluated at y_new unless projection moved it
        if cfg.project_to_slice:
            f_new, aps = _velocity_rows(w, y_new, t_new)
            stage_ok &= np.all(np.isfinite(f_new), axis=1)
        err_vec = hi[:, None] * sum(e * k[m] for m, e in enumerate(_E) if e != 0.0)
        scale = cfg.abs_tol + np.maximum(np.abs(yi), np.abs(y_new)) * cfg.rel_tol
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        node = w.is_near_node(aps, t_new, cfg.node_epsilon) | ~stage_ok
        err = np.where(stage_ok, err, np.inf)
        accept = (err <= 1.0) & ~node

        with np.errstate(divide="ignore"):
            factor = np.where(
                err == 0.0, _MAX_FACTOR, np.clip(_SAFETY * err ** (-1 / 5), _MIN_FACTOR, _MAX_FACTOR)
            )
        factor = np.where(accept, factor, np.minimum(factor, 0.5))
        factor = np.where(node, 0.25, factor)
        h_next = np.minimum(hi * factor, cfg.max_step)

        acc = idx[accept]
        if acc.size:
            a_loc = np.flatnonzero(accept)
            # dense output for any sample times inside (t, t_new]
            _emit_samples(
                w, sample_times, acc, a_loc, yi, y_new, ti, t_new, hi, k,
                next_sample, pos, vel, apsi, f_new, aps,
            )
            y[acc], t[acc], f[acc] = y_new[a_loc], t_new[a_loc], f_new[a_loc]
            n_steps[acc] += 1
            err_sum[acc] += np.max(np.abs(err_vec[a_loc]), axis=1)
            min_psi[acc] = np.minimum(min_psi[acc], aps[a_loc])

        rej = idx[~accept]
        n_rejected[rej] += 1
        h[idx] = h_next

        # rows that reached the end
        done = acc[t[acc] >= t_end]
        active[done] = False
        # rows that cannot shrink further
        stuck = rej[h[rej] < cfg.min_step]
        for row in stuck:
            loc = np.flatnonzero(idx == row)[0]
            if node[loc]:
                status[row] = TrajectoryStatus.NODE
                failure[row] = NodeEncountered(t[row], y[row])
            else:
                status[row] = TrajectoryStatus.STEP_LIMIT
                failure[row] = StepLimitExceeded(t[row], n_steps[row] + n_rejected[row])
            active[row] = False
        over = idx[(n_steps[idx] + n_rejected[idx]) >= cfg.max_steps]
        for row in over:
            if active[row]:
                status[row] = TrajectoryStatus.STEP_LIMIT
                failure[row] = StepLimitExceeded(t[row], n_steps[row] + n_rejected[row])
                active[row] = False

    stats = {
        "n_steps": n_steps,
        "n_rejected": n_rejected,
        "error_estimate": err_sum,
        "min_abs_psi": min_psi,
    }
    return pos, vel, apsi, status, failure, stats


def _emit_samples(w, sample_times, rows, locs, yi, y_new, ti, t_new, hi, k,
                  next_sample, pos, vel, apsi, f_new, ap_new):
    ts = np.asarray(sample_times)
    ns = len(ts)
    while True:
        ptr = next_sample[rows]
        pending = ptr < ns
        if not np.any(pending):
            return
        target = np.where(pending, ts[np.minimum(ptr, ns - 1)], np.inf)
        inside = pending & (target <= t_new[locs])
        if not np.any(inside):
            return
        r, lc, tt = rows[inside], locs[inside], target[inside]
        exact_end = tt == t_new[lc]
        theta = (tt - ti[lc]) / hi[lc]
        powers = (theta, theta**2, theta**3, theta**4)
        incr = 0.0
        for s in range(7):
            if not np.any(_P[s]):
                continue
            cs = sum(p * th for p, th in zip(_P[s], powers))
            incr = incr + cs[:, None] * k[s, lc, :]
        yd = yi[lc] + hi[lc][:, None] * incr
        yd = np.where(exact_end[:, None], y_new[lc], yd)
        vd, apd = _velocity_rows(w, yd, tt)
        vd = np.where(exact_end[:, None], f_new[lc], vd)
        apd = np.where(exact_end, ap_new[lc], apd)
        j = next_sample[r]
        pos[r, j], vel[r, j], apsi[r, j] = yd, vd, apd
        next_sample[r] += 1


def _resolve_sample_times(t0, t_end, sample_times):
    if sample_times is None:
        sample_times = [t0, t_end]
    ts = np.asarray(sample_times, dtype=float)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("sample_times must be a non-empty 1-D sequence")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("sample_times must be strictly increasing")
    if ts[0] < t0 or ts[-1] > t_end:
        raise ValueError(f"sample_times must lie in [{t0}, {t_end}]")
    return ts


def _build_trajectory(i, ts, pos, vel, apsi, status, failure, stats):
    keep = np.all(np.isfinite(pos[i]), axis=1)
    return Trajectory(
        times=ts[keep].copy(),
        positions=pos[i][keep],
        velocities=vel[i][keep],
        abs_psi=apsi[i][keep],
        status=status[i],
        failure=failure[i],
        stats={name: arr[i].item() for name, arr in stats.items()},
    )


def integrate_batch(w, initial_points, t_end, cfg=None, sample_times=None, t0=0.0):
    """Integrate many trajectories; output order follows ``initial_points``.

    A failure in one row never aborts the batch: the affected
    :class:`Trajectory` comes back truncated, with ``status`` and
    ``failure`` set.
    """
    cfg = IntegratorConfig() if cfg is None else cfg
    y0 = as_configurations(initial_points)
    t0 = float(t0)
    t_end = float(t_end)
    if not t0 < t_end:
        raise ValueError(f"t_end ({t_end}) must exceed the start time ({t0})")
    ts = _resolve_sample_times(t0, t_end, sample_times)
    pos, vel, apsi, status, failure, stats = _integrate_rows(w, y0, t0, t_end, cfg, ts)
    return [
        _build_trajectory(i, ts, pos, vel, apsi, status, failure, stats)
        for i in range(y0.shape[0])
    ]


def integrate_trajectory(w, q0, t_end, cfg=None, sample_times=None, raise_on_failure=False):
    """Integrate a single trajectory from ``q0`` (a :class:`ConfigurationPoint`)."""
    if isinstance(q0, ConfigurationPoint):
        y0, t0 = q0.as_array(), q0.t
    else:
        y0, t0 = np.asarray(q0, dtype=float), 0.0
    traj = integrate_batch(w, y0[None, :], t_end, cfg, sample_times, t0=t0)[0]
    if raise_on_failure and traj.failure is not None:
        raise traj.failure
    return traj
