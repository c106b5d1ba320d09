"""Oracles and invariant suites.

Quadrature oracles here never touch trajectory code, and finite-difference
oracles never use the analytic derivative of the quantity they check.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
from scipy import integrate

from pilotwave.detection import QuadratureNonConvergence, _axis_overlap, box_probability
from pilotwave.dynamics import IntegratorConfig, _velocity_rows, integrate_batch
from pilotwave.ensembles import sample_antisymmetric_slice, sample_density
from pilotwave.quantum_state import (
    NodeProximity,
    StatisticsMode,
    gaussian_packet_value,
    quantum_force,
)

__all__ = [
    "InvariantReport",
    "QuadratureSpec",
    "continuity_residual",
    "dense_grid_joint_probability",
    "equivariance_test",
    "histogram_tv",
    "integrate_box",
    "min_pairwise_distance",
    "newton_diagnostic",
    "position_moment",
    "quadrature_marginal",
    "sum_conservation_report",
    "symmetry_suite",
    "write_reports",
]


@dataclass(frozen=True)
class InvariantReport:
    name: str
    samples_tested: int
    max_violation: float
    threshold: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.max_violation <= self.threshold)

    def to_json(self):
        payload = asdict(self)
        payload["passed"] = self.passed
        return json.dumps(payload, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_reports(reports, path):
    """JSON lines, one report per line. Returns True iff every report passed."""
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")
    return all(r.passed for r in reports)


# -- quadrature ------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    bounds: tuple
    rel_tol: float = 1e-8
    max_evals: int = 20_000_000

    def __post_init__(self):
        if len(self.bounds) not in (1, 2, 4):
            raise ValueError("quadrature dimension must be 1, 2 or 4")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")

    @property
    def dimension(self):
        return len(self.bounds)


def _trapezoid_rule(lo, hi, n_nodes):
    nodes = np.linspace(lo, hi, n_nodes)
    weights = np.full(n_nodes, (hi - lo) / (n_nodes - 1))
    weights[[0, -1]] *= 0.5
    return nodes, weights


def _tensor_integrate(func, bounds, n_nodes, chunk=2_000_000):
    rules = [_trapezoid_rule(lo, hi, n_nodes) for lo, hi in bounds]
    first_nodes, first_w = rules[0]
    rest = rules[1:]
    if rest:
        grids = np.meshgrid(*[r[0] for r in rest], indexing="ij")
        rest_pts = np.stack([g.ravel() for g in grids], axis=1)
        wgrid = np.meshgrid(*[r[1] for r in rest], indexing="ij")
        rest_w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    else:
        rest_pts, rest_w = np.zeros((1, 0)), np.ones(1)
    total = 0.0
    per = max(1, chunk // rest_pts.shape[0])
    for s in range(0, first_nodes.size, per):
        xs = first_nodes[s : s + per]
        pts = np.concatenate(
            [np.repeat(xs, rest_pts.shape[0])[:, None], np.tile(rest_pts, (xs.size, 1))], axis=1
        )
        vals = func(pts).reshape(xs.size, rest_pts.shape[0])
        total += float(first_w[s : s + per] @ (vals @ rest_w))
    return total, first_nodes.size * rest_pts.shape[0]


def integrate_box(func, spec):
    """Tensor-product trapezoid rule, refined until two levels agree.

    For smooth integrands that decay to zero at the box edges the
    trapezoid rule converges geometrically in the node spacing. ``func``
    maps an ``(m, dim)`` array of points to ``m`` values. The node count per
    axis grows by 1.4x per level; the last difference is the error estimate.
    """
    n_nodes, evals = 12, 0
    prev, n = _tensor_integrate(func, spec.bounds, n_nodes)
    evals += n
    while True:
        n_nodes = int(np.ceil(n_nodes * 1.4))
        if evals + n_nodes ** spec.dimension > spec.max_evals:
            raise QuadratureNonConvergence(prev, float("nan"), spec.rel_tol)
        cur, n = _tensor_integrate(func, spec.bounds, n_nodes)
        evals += n
        if abs(cur - prev) <= spec.rel_tol * abs(cur):
            return cur
        prev = cur


def _support(w, t, coord, widths=10.0):
    """Interval holding ``widths`` effective widths around every packet on ``coord``."""
    lo, hi = np.inf, -np.inf
    for term in w.terms:
        ax = w.axes_of_term(term)[coord]
        if ax is None:
            continue
        c = ax.center + ax.velocity * t
        s = ax.width(t, w.constants)
        lo, hi = min(lo, c - widths * s), max(hi, c + widths * s)
    return lo, hi


def quadrature_marginal(w, t, edges, coords=(0,)):
    """Probability of each histogram cell for the marginal on ``coords``.

    ``edges`` is one edge array for a 1D marginal, or a pair of edge arrays
    for a 2D marginal on ``coords = (i, j)``. Returns cell probabilities
    and the probability mass outside the histogram range.
    """
    full = [(-np.inf, np.inf)] * 4
    if len(coords) == 1:
        e = np.asarray(edges)
        probs = np.empty(e.size - 1)
        for b in range(e.size - 1):
            bounds = list(full)
            bounds[coords[0]] = (e[b], e[b + 1])
            probs[b] = box_probability(w, t, bounds)
    else:
        ea, eb = (np.asarray(x) for x in edges)
        probs = np.empty((ea.size - 1, eb.size - 1))
        for a in range(ea.size - 1):
            for b in range(eb.size - 1):
                bounds = list(full)
                bounds[coords[0]] = (ea[a], ea[a + 1])
                bounds[coords[1]] = (eb[b], eb[b + 1])
                probs[a, b] = box_probability(w, t, bounds)
    return probs, max(0.0, 1.0 - probs.sum())


def position_moment(w, t, coord, power):
    """``<Psi| q_coord^power |Psi>`` by adaptive quadrature."""
    lo, hi = _support(w, t, coord, widths=40.0)
    c = w.constants
    total = 0.0
    for tk in w.terms:
        axes_k = w.axes_of_term(tk)
        for tl in w.terms:
            axes_l = w.axes_of_term(tl)
            prod = 1.0 + 0.0j
            for i, (ak, al) in enumerate(zip(axes_k, axes_l)):
                if i == coord:

                    def f(xi, part, ak=ak, al=al):
                        v = xi**power * np.exp(
                            np.conj(ak.log_parts(xi, t, c)[0]) + al.log_parts(xi, t, c)[0]
                        )
                        return v.real if part == 0 else v.imag

                    re = integrate.quad(f, lo, hi, args=(0,), epsabs=1e-13, epsrel=1e-11, limit=500)[0]
                    im = integrate.quad(f, lo, hi, args=(1,), epsabs=1e-13, epsrel=1e-11, limit=500)[0]
                    prod *= complex(re, im)
                else:
                    prod *= _axis_overlap(ak, al, -np.inf, np.inf, float(t), c, 1e-11)[0]
            total += prod
    return float(w.term_coefficient**2 * total.real)


def dense_grid_joint_probability(w, pair, T, n_x=20, n_y=30, y_widths=8.0, ordered=False):
    """Midpoint Riemann sum of ``|Psi|^2`` over the detector windows.

    Evaluates the full four-dimensional wavefunction on a grid; shares no
    code with the adaptive quadrature used in production.
    """

    def one_order(wp, wq):
        xa = wp.x_min + (np.arange(n_x) + 0.5) * wp.width / n_x
        xb = wq.x_min + (np.arange(n_x) + 0.5) * wq.width / n_x
        lo, hi = _support(w, T, 1, widths=y_widths)
        hy = (hi - lo) / n_y
        ys = lo + (np.arange(n_y) + 0.5) * hy
        g1, g2, g3 = np.meshgrid(ys, xb, ys, indexing="ij")
        rest = np.stack([g1.ravel(), g2.ravel(), g3.ravel()], axis=1)
        total = 0.0
        for x1 in xa:
            q = np.column_stack([np.full(rest.shape[0], x1), rest])
            total += np.sum(np.abs(w.value(q, T)) ** 2)
        return total * (wp.width / n_x) * (wq.width / n_x) * hy * hy

    val = one_order(pair.P, pair.Q)
    if not ordered:
        val += one_order(pair.Q, pair.P)
    return val


# -- continuity ------------------------------------------------------------------


def continuity_residual(w, q, t, step=1e-5, node_epsilon=1e-10):
    """Relative residual of ``d rho/dt + div(rho v) = 0`` at points ``q``.

    ``d rho / dt`` is a central difference of ``|Psi|^2`` in time;
    ``div(rho v) = (hbar/m) rho sum_i Im(d_i^2 Psi / Psi)`` is analytic.
    The residual is divided by the largest of the two terms and of
    ``rho hbar / (m sigma^2)``.
    """
    q = np.asarray(q, dtype=float).reshape(-1, 4)
    t = np.broadcast_to(np.asarray(t, dtype=float), (q.shape[0],))
    c = w.constants
    jet = w.jet(q, t, order=2)
    near = w.is_near_node(jet.abs_psi, t, node_epsilon)
    if np.any(near):
        raise NodeProximity(jet.abs_psi[near], node_epsilon)
    rho = jet.abs_psi**2
    drho_dt = (w.density(q, t + step) - w.density(q, t - step)) / (2.0 * step)
    lap_ratio = np.diagonal(jet.d2, axis1=1, axis2=2)
    div = (c.hbar / c.mass) * rho * lap_ratio.imag.sum(axis=1)
    sigma_min = min(p.sigma_x for p in (w.packet_a, w.packet_b))
    sigma_min = min(sigma_min, *(p.sigma_y for p in (w.packet_a, w.packet_b)))
    scale = np.maximum.reduce(
        [np.abs(drho_dt), np.abs(div), rho * c.hbar / (c.mass * sigma_min**2)]
    )
    return np.abs(drho_dt + div) / scale


# -- equivariance ----------------------------------------------------------------


def histogram_tv(samples, probs, outside, edges):
    """Total variation between an empirical histogram and cell probabilities."""
    if isinstance(edges, tuple):
        counts, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=edges)
    else:
        counts, _ = np.histogram(samples, bins=edges)
    n = samples.shape[0]
    emp = counts / n
    emp_out = 1.0 - emp.sum()
    return 0.5 * (np.abs(emp - probs).sum() + abs(emp_out - outside))


def equivariance_test(w, n, t, bins=50, seed=0, cfg=None, x_range=(-15.0, 15.0), threshold=0.05):
    """Propagate ``n`` Born-distributed samples to ``t`` and compare histograms.

    Marginals of ``x1`` and ``x2`` use ``bins`` cells over ``x_range``; the
    joint ``(x1, x2)`` histogram uses ``round(sqrt(bins))`` cells per axis,
    so every histogram has about ``bins`` cells.
    """
    points, _ = sample_density(w, 0.0, n, seed)
    if t > 0:
        trajs = integrate_batch(w, points, t, cfg or IntegratorConfig())
        ends = np.array([tr.positions[-1] for tr in trajs if not tr.truncated])
        truncated = sum(tr.truncated for tr in trajs)
    else:
        ends, truncated = points, 0
    edges = np.linspace(*x_range, bins + 1)
    tvs = {}
    for name, coord in (("x1", 0), ("x2", 2)):
        if w.is_single_particle and coord == 2:
            continue
        probs, outside = quadrature_marginal(w, t, edges, (coord,))
        tvs[name] = histogram_tv(ends[:, coord], probs, outside, edges)
    if not w.is_single_particle:
        b2 = int(round(np.sqrt(bins)))
        e2 = np.linspace(*x_range, b2 + 1)
        probs, outside = quadrature_marginal(w, t, (e2, e2), (0, 2))
        tvs["x1x2"] = histogram_tv(ends[:, [0, 2]], probs, outside, (e2, e2))
    return InvariantReport(
        name=f"equivariance_t={t:g}",
        samples_tested=int(ends.shape[0]),
        max_violation=float(max(tvs.values())),
        threshold=float(threshold),
        details={"tv": tvs, "truncated": int(truncated), "bins": bins, "seed": seed},
    )


# -- symmetries ------------------------------------------------------------------


def _random_configs(w, n, rng, t_max):
    t = rng.uniform(0.0, t_max, n)
    span = max(abs(w.packet_a.center_x), abs(w.packet_b.center_x))
    x = rng.uniform(-(span + 4.0), span + 4.0, (n, 2))
    vy = w.packet_a.group_velocity_y
    y = w.packet_a.center_y + vy * t[:, None] + rng.normal(0.0, 1.5, (n, 2))
    q = np.column_stack([x[:, 0], y[:, 0], x[:, 1], y[:, 1]])
    return q, t


def _rel(diff, ref):
    return np.abs(diff) / np.maximum(np.abs(ref), 1e-300)


def symmetry_suite(w, n_points=1000, seed=0, threshold=1e-10, t_max=5.0):
    """Exchange, reflection, mirror-slit and velocity identities at random points."""
    rng = np.random.default_rng(seed)
    q, t = _random_configs(w, n_points, rng, t_max)
    c = w.constants
    v_scale = c.hbar / (c.mass * min(w.packet_a.sigma_x, w.packet_b.sigma_x))
    reports = []

    swap = q[:, [2, 3, 0, 1]]
    refl = q * np.array([-1.0, 1.0, -1.0, 1.0])
    psi = w.value(q, t)

    viol = _rel(w.value(swap, t) - psi, psi)
    reports.append(InvariantReport("exchange_symmetry", n_points, float(viol.max()), threshold))

    viol = _rel(w.value(refl, t) - psi, psi)
    reports.append(InvariantReport("reflection_symmetry", n_points, float(viol.max()), threshold))

    pa = gaussian_packet_value(w.packet_a, c, q[:, 0], q[:, 1], t)
    pb = gaussian_packet_value(w.packet_b, c, -q[:, 0], q[:, 1], t)
    viol = _rel(pa - pb, pa)
    reports.append(InvariantReport("mirror_slit_condition", n_points, float(viol.max()), threshold))

    v, _ = _velocity_rows(w, q, t)
    v_refl, _ = _velocity_rows(w, refl, t)
    anti = np.abs(v[:, [0, 2]] + v_refl[:, [0, 2]]) / np.maximum(np.abs(v[:, [0, 2]]), v_scale)
    reports.append(
        InvariantReport("velocity_reflection_antisymmetry", n_points, float(anti.max()), threshold)
    )

    v_swap, _ = _velocity_rows(w, swap, t)
    exch = np.abs(v[:, [0, 1, 2, 3]] - v_swap[:, [2, 3, 0, 1]]) / np.maximum(np.abs(v), v_scale)
    reports.append(InvariantReport("velocity_exchange", n_points, float(exch.max()), threshold))

    plane = q.copy()
    plane[:, 0] = 0.0
    plane[:, 2] = 0.0
    v_plane, _ = _velocity_rows(w, plane, t)
    vio = np.abs(v_plane[:, [0, 2]]).max()
    reports.append(
        InvariantReport("velocity_vanishes_on_plane", n_points, float(vio), min(threshold, 1e-12))
    )
    return reports


# -- trajectory-level checks -----------------------------------------------------


def _rk4_step(w, q, t, dt):
    k1, _ = _velocity_rows(w, q, t)
    k2, _ = _velocity_rows(w, q + 0.5 * dt * k1, t + 0.5 * dt)
    k3, _ = _velocity_rows(w, q + 0.5 * dt * k2, t + 0.5 * dt)
    k4, _ = _velocity_rows(w, q + dt * k3, t + dt)
    return q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def newton_diagnostic(trajectory, w, n_checkpoints=20, dt=1e-4, node_epsilon=1e-10, force_floor=1e-6,
                      threshold=1e-3):
    """Compare ``m dv/dt`` along a trajectory with the quantum force ``-grad Q``.

    ``dv/dt`` is a central difference of the velocity field at points one
    RK4 step of ``+/- dt`` away along the flow.
    """
    c = w.constants
    times = trajectory.times
    interior = np.flatnonzero((times - times[0] >= dt) & (times[-1] - times >= 0))
    if interior.size == 0:
        raise ValueError("trajectory has no samples usable as checkpoints")
    pick = interior[np.unique(np.linspace(0, interior.size - 1, n_checkpoints).round().astype(int))]
    worst, skipped, tested = 0.0, 0, 0
    for j in pick:
        q = trajectory.positions[j][None, :]
        t = float(times[j])
        try:
            force = quantum_force(w, q, np.array([t]), node_epsilon=node_epsilon)
        except NodeProximity:
            skipped += 1
            continue
        q_plus = _rk4_step(w, q, np.array([t]), dt)
        q_minus = _rk4_step(w, q, np.array([t]), -dt)
        v_plus, _ = _velocity_rows(w, q_plus, np.array([t + dt]))
        v_minus, _ = _velocity_rows(w, q_minus, np.array([t - dt]))
        accel = (v_plus - v_minus) / (2 * dt)
        predicted = force / c.mass
        dev = np.linalg.norm(accel - predicted) / max(np.linalg.norm(predicted), force_floor)
        worst = max(worst, float(dev))
        tested += 1
    return InvariantReport(
        "newton_quantum_force",
        tested,
        worst,
        threshold,
        details={"skipped_near_node": skipped, "dt": dt},
    )


def sum_conservation_report(trajectories, sigma0=1.0, threshold=1e-6):
    """Max ``|x1 + x2|`` and sign flips of ``x1`` over slice trajectories."""
    worst, flips = 0.0, 0
    for tr in trajectories:
        s = np.abs(tr.positions[:, 0] + tr.positions[:, 2])
        worst = max(worst, float(s.max()))
        x1 = tr.positions[:, 0]
        big = np.abs(x1) > threshold * sigma0
        if np.any(big) and np.unique(np.sign(x1[big])).size > 1:
            flips += 1
    return InvariantReport(
        "sum_conservation",
        len(trajectories),
        worst / sigma0,
        threshold,
        details={"sign_flips": flips},
    )


def min_pairwise_distance(trajectories):
    """Smallest configuration-space distance between any two trajectories."""
    pos = np.stack([tr.positions for tr in trajectories])  # (n, ns, 4)
    best = np.inf
    for i, j in combinations(range(pos.shape[0]), 2):
        d = np.sqrt(np.sum((pos[i] - pos[j]) ** 2, axis=1)).min()
        best = min(best, float(d))
    return best


def default_slice_trajectories(w, n, t_end, seed, cfg=None, sample_times=None):
    points, _ = sample_antisymmetric_slice(w, 0.0, n, seed)
    return integrate_batch(w, points, t_end, cfg or IntegratorConfig(), sample_times)


def is_mirror_pair(w):
    return w.packet_b == w.packet_a.mirrored() and w.statistics_mode is StatisticsMode.BOSONIC
