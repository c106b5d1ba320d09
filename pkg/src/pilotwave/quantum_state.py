"""Free Gaussian wave packets and the two-particle double-slit state.

Every wavefunction here is a finite sum of terms, each term a product of
one-dimensional spreading Gaussians, one per configuration coordinate
``(x1, y1, x2, y2)``. That separable structure gives closed-form first,
second and third derivatives, which the velocity field, the quantum
potential and the quantum force are built from.

Evaluation is done in the log domain: for every term we form
``L_k = log(term_k)`` and combine terms with weights ``exp(L_k - max Re L)``.
Ratios such as ``dPsi/Psi`` then never underflow in the packet tails.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from pilotwave._validation import as_configurations, as_times, check_positive

__all__ = [
    "ConfigurationPoint",
    "NodeProximity",
    "PacketParams",
    "PhysicalConstants",
    "SlitGeometry",
    "StatisticsMode",
    "TwoParticleWaveFunction",
    "density",
    "gaussian_packet_value",
    "quantum_force",
    "quantum_potential",
    "wavefunction_gradient",
    "wavefunction_value",
]

N_COORDS = 4


class NodeProximity(ValueError):
    """Raised when a quantity is requested too close to a wavefunction node."""

    def __init__(self, abs_psi, threshold):
        self.abs_psi = abs_psi
        self.threshold = threshold
        super().__init__(
            f"|Psi| = {np.min(abs_psi):.3e} is at or below the node threshold {threshold:.3e}"
        )


class StatisticsMode(str, enum.Enum):
    BOSONIC = "bosonic"
    MAXWELL_BOLTZMANN = "maxwell_boltzmann"
    SINGLE_PARTICLE = "single_particle"


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        check_positive(self.hbar, "hbar")
        check_positive(self.mass, "mass")


@dataclass(frozen=True)
class ConfigurationPoint:
    """A point ``(x1, y1, x2, y2)`` of configuration space at time ``t``."""

    x1: float
    y1: float
    x2: float
    y2: float
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())) or not np.isfinite(self.t):
            raise ValueError(f"configuration point must be finite, got {self}")

    def as_array(self):
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)

    @classmethod
    def from_array(cls, q, t=0.0):
        q = np.asarray(q, dtype=float)
        return cls(float(q[0]), float(q[1]), float(q[2]), float(q[3]), float(t))


@dataclass(frozen=True)
class _Axis:
    """One-dimensional free Gaussian along a single axis."""

    center: float
    sigma: float
    velocity: float

    def width(self, t, c):
        """rms width of ``|phi|^2`` at time ``t``."""
        tau = 2.0 * c.mass * self.sigma**2 / c.hbar
        return self.sigma * np.sqrt(1.0 + (t / tau) ** 2)

    def peak(self, t, c):
        return (2.0 * np.pi * self.width(t, c) ** 2) ** -0.25

    def log_parts(self, xi, t, c):
        """Return ``(log phi, d log phi / d xi, d^2 log phi / d xi^2)``.

        The operation order is chosen so that the mirrored axis (center and
        velocity negated) evaluated at ``-xi`` reproduces every quantity
        bit for bit, with the odd ones negated.
        """
        alpha = 1.0 + 1j * (c.hbar * t / (2.0 * c.mass * self.sigma**2))
        a = 1.0 / (4.0 * self.sigma**2 * alpha)
        k = c.mass * self.velocity / c.hbar
        z = xi - self.center - self.velocity * t
        log_norm = -0.25 * np.log(2.0 * np.pi * self.sigma**2) - 0.5 * np.log(alpha)
        log_phi = log_norm - a * (z * z) + 1j * (k * (xi - self.velocity * t / 2.0))
        grad = -2.0 * a * z + 1j * k
        curv = -2.0 * a
        return log_phi, grad, curv * np.ones_like(z)


@dataclass(frozen=True)
class PacketParams:
    """A normalized free Gaussian in the plane, product of x and y factors."""

    center_x: float
    center_y: float
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    group_velocity_x: float = 0.0
    group_velocity_y: float = 0.0

    def __post_init__(self):
        check_positive(self.sigma_x, "sigma_x")
        check_positive(self.sigma_y, "sigma_y")

    @property
    def axes(self):
        return (
            _Axis(self.center_x, self.sigma_x, self.group_velocity_x),
            _Axis(self.center_y, self.sigma_y, self.group_velocity_y),
        )

    def mirrored(self):
        """The packet reflected in the plane ``x = 0``."""
        return PacketParams(
            center_x=-self.center_x,
            center_y=self.center_y,
            sigma_x=self.sigma_x,
            sigma_y=self.sigma_y,
            group_velocity_x=-self.group_velocity_x,
            group_velocity_y=self.group_velocity_y,
        )


@dataclass(frozen=True)
class SlitGeometry:
    """Two slits at ``x = +/- slit_separation_half`` on the line ``y = 0``.

    Packet B is built from packet A by reflection, so the mirror condition
    ``psi_A(x, y, t) == psi_B(-x, y, t)`` holds by construction.
    """

    slit_separation_half: float = 5.0
    screen_y: float = 25.0
    forward_speed: float = 5.0
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    transverse_velocity: float = 0.0

    def __post_init__(self):
        check_positive(self.slit_separation_half, "slit_separation_half")
        check_positive(self.screen_y, "screen_y")
        check_positive(self.forward_speed, "forward_speed")
        check_positive(self.sigma_x, "sigma_x")
        check_positive(self.sigma_y, "sigma_y")

    @property
    def arrival_time(self):
        return self.screen_y / self.forward_speed

    def packets(self):
        a = PacketParams(
            center_x=self.slit_separation_half,
            center_y=0.0,
            sigma_x=self.sigma_x,
            sigma_y=self.sigma_y,
            group_velocity_x=self.transverse_velocity,
            group_velocity_y=self.forward_speed,
        )
        return a, a.mirrored()


def _packet_log_parts(p, c, x, y, t):
    ax, ay = p.axes
    lx, gx, cx = ax.log_parts(x, t, c)
    ly, gy, cy = ay.log_parts(y, t, c)
    return lx + ly, (gx, gy), (cx, cy)


def gaussian_packet_value(p, c, x, y, t):
    """Value of the normalized spreading Gaussian ``p`` at ``(x, y, t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("packets are only evolved forward from t = 0")
    log_phi, _, _ = _packet_log_parts(p, c, np.asarray(x, float), np.asarray(y, float), t)
    return np.exp(log_phi)


def _single_overlap(ax_a, ax_b, c):
    """``<a|b>`` for two 1D packets, by adaptive quadrature at t = 0."""
    lo = min(ax_a.center - 12 * ax_a.sigma, ax_b.center - 12 * ax_b.sigma)
    hi = max(ax_a.center + 12 * ax_a.sigma, ax_b.center + 12 * ax_b.sigma)

    def integrand(xi, part):
        la = ax_a.log_parts(xi, 0.0, c)[0]
        lb = ax_b.log_parts(xi, 0.0, c)[0]
        val = np.exp(np.conj(la) + lb)
        return val.real if part == 0 else val.imag

    re = integrate.quad(integrand, lo, hi, args=(0,), epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    im = integrate.quad(integrand, lo, hi, args=(1,), epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    return complex(re, im)


@dataclass(frozen=True)
class _Jet:
    """Log-derivatives ``D_alpha = d^alpha Psi / Psi`` at a batch of points."""

    abs_psi: np.ndarray
    d1: np.ndarray  # (n, 4)
    d2: np.ndarray  # (n, 4, 4)
    d3: np.ndarray | None  # (n, 4, 4) holding d_i d_i d_j Psi / Psi


@dataclass(frozen=True)
class TwoParticleWaveFunction:
    """Two-particle state built from packets A and B.

    ``BOSONIC``            ``(psi_A(q1) psi_B(q2) + psi_A(q2) psi_B(q1)) / N``
    ``MAXWELL_BOLTZMANN``  ``psi_A(q1) psi_B(q2)``
    ``SINGLE_PARTICLE``    ``(psi_A(q1) + psi_B(q1)) / N1``, independent of ``q2``

    ``N`` accounts for the overlap of non-orthogonal packets,
    ``N = sqrt(2 (1 + |<A|B>|^2))`` and ``N1 = sqrt(2 (1 + Re <A|B>))``.
    """

    packet_a: PacketParams
    packet_b: PacketParams
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    statistics_mode: StatisticsMode = StatisticsMode.BOSONIC

    def __post_init__(self):
        object.__setattr__(self, "statistics_mode", StatisticsMode(self.statistics_mode))

    @classmethod
    def from_geometry(cls, geometry=None, constants=None, mode=StatisticsMode.BOSONIC):
        geometry = SlitGeometry() if geometry is None else geometry
        constants = PhysicalConstants() if constants is None else constants
        a, b = geometry.packets()
        return cls(a, b, constants, StatisticsMode(mode))

    @property
    def mode(self):
        return self.statistics_mode

    @property
    def is_single_particle(self):
        return self.statistics_mode is StatisticsMode.SINGLE_PARTICLE

    @cached_property
    def overlap(self):
        """``<A|B>``; conserved by free evolution so evaluated once at t = 0."""
        c = self.constants
        out = 1.0 + 0.0j
        for ax_a, ax_b in zip(self.packet_a.axes, self.packet_b.axes):
            out *= _single_overlap(ax_a, ax_b, c)
        return out

    @cached_property
    def normalization(self):
        if self.statistics_mode is StatisticsMode.BOSONIC:
            return float(np.sqrt(2.0 * (1.0 + abs(self.overlap) ** 2)))
        if self.statistics_mode is StatisticsMode.SINGLE_PARTICLE:
            return float(np.sqrt(2.0 * (1.0 + self.overlap.real)))
        return 1.0

    @property
    def terms(self):
        """Packets occupying particles 1 and 2 in each term (``None`` = absent)."""
        a, b = self.packet_a, self.packet_b
        if self.statistics_mode is StatisticsMode.BOSONIC:
            return ((a, b), (b, a))
        if self.statistics_mode is StatisticsMode.SINGLE_PARTICLE:
            return ((a, None), (b, None))
        return ((a, b),)

    @property
    def term_coefficient(self):
        return 1.0 / self.normalization

    def axes_of_term(self, term):
        """Per-coordinate 1D axes of one term, in ``(x1, y1, x2, y2)`` order."""
        p1, p2 = term
        return (*p1.axes, *(p2.axes if p2 is not None else (None, None)))

    @property
    def n_active_coords(self):
        return 2 if self.is_single_particle else 4

    def peak_amplitude(self, t):
        """Upper bound on ``|Psi(., t)|`` from the triangle inequality."""
        c = self.constants
        total = 0.0
        for term in self.terms:
            prod = 1.0
            for ax in self.axes_of_term(term):
                if ax is not None:
                    prod = prod * ax.peak(t, c)
            total = total + prod
        return self.term_coefficient * total

    # -- evaluation ---------------------------------------------------------

    def _term_logs(self, q, t):
        c = self.constants
        x1, y1, x2, y2 = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
        cache = {}

        def particle(p, x, y, idx):
            key = (id(p), idx)
            if key not in cache:
                cache[key] = _packet_log_parts(p, c, x, y, t)
            return cache[key]

        logs, grads, curvs = [], [], []
        zeros = np.zeros(q.shape[0], dtype=complex)
        for p1, p2 in self.terms:
            l1, g1, c1 = particle(p1, x1, y1, 1)
            if p2 is None:
                l_tot = l1
                g = (g1[0], g1[1], zeros, zeros)
                cv = (c1[0], c1[1], zeros, zeros)
            else:
                l2, g2, c2 = particle(p2, x2, y2, 2)
                l_tot = l1 + l2
                g = (*g1, *g2)
                cv = (*c1, *c2)
            logs.append(l_tot)
            grads.append(np.stack(np.broadcast_arrays(*g), axis=-1))
            curvs.append(np.stack(np.broadcast_arrays(*cv), axis=-1))
        return logs, grads, curvs

    def value(self, q, t):
        """Complex ``Psi`` at configurations ``q`` (shape ``(n, 4)``) and times ``t``."""
        q, t = as_configurations(q), as_times(t)
        logs, _, _ = self._term_logs(q, t)
        total = np.exp(logs[0])
        for lg in logs[1:]:
            total = total + np.exp(lg)
        return self.term_coefficient * total

    def jet(self, q, t, order=2):
        q, t = as_configurations(q), as_times(t)
        logs, grads, curvs = self._term_logs(q, t)
        shift = logs[0].real
        for lg in logs[1:]:
            shift = np.maximum(shift, lg.real)
        weights = [np.exp(lg - shift) for lg in logs]
        wsum = weights[0]
        for w in weights[1:]:
            wsum = wsum + w
        abs_psi = self.term_coefficient * np.exp(shift) * np.abs(wsum)
        eye = np.eye(N_COORDS)

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            d1 = sum(w[:, None] * g for w, g in zip(weights, grads)) / wsum[:, None]
            d2 = (
                sum(
                    w[:, None, None]
                    * (g[:, :, None] * g[:, None, :] + eye * cv[:, :, None])
                    for w, g, cv in zip(weights, grads, curvs)
                )
                / wsum[:, None, None]
            )
            d3 = None
            if order >= 3:
                acc = 0.0
                for w, g, cv in zip(weights, grads, curvs):
                    second = g * g + cv  # d_i^2 phi / phi
                    t3 = second[:, :, None] * g[:, None, :]
                    diag = g**3 + 3.0 * g * cv
                    idx = np.arange(N_COORDS)
                    t3[:, idx, idx] = diag
                    acc = acc + w[:, None, None] * t3
                d3 = acc / wsum[:, None, None]
        return _Jet(abs_psi=abs_psi, d1=d1, d2=d2, d3=d3)

    def gradient(self, q, t):
        """``dPsi/dq`` as a complex ``(n, 4)`` array, analytic."""
        q, t = as_configurations(q), as_times(t)
        logs, grads, _ = self._term_logs(q, t)
        out = np.exp(logs[0])[:, None] * grads[0]
        for lg, g in zip(logs[1:], grads[1:]):
            out = out + np.exp(lg)[:, None] * g
        return self.term_coefficient * out

    def laplacian_terms(self, q, t):
        """Unmixed second derivatives ``d^2 Psi / dq_i^2``, shape ``(n, 4)``."""
        q, t = as_configurations(q), as_times(t)
        logs, grads, curvs = self._term_logs(q, t)
        out = 0.0
        for lg, g, cv in zip(logs, grads, curvs):
            out = out + np.exp(lg)[:, None] * (g * g + cv)
        return self.term_coefficient * out

    def density(self, q, t):
        return np.abs(self.value(q, t)) ** 2

    def is_near_node(self, abs_psi, t, node_epsilon):
        return abs_psi <= node_epsilon * self.peak_amplitude(as_times(t))


def _split_point(q, t):
    if isinstance(q, ConfigurationPoint):
        return q.as_array(), q.t if t is None else t
    if t is None:
        raise TypeError("t is required when q is not a ConfigurationPoint")
    return q, t


def _maybe_scalar(q, out):
    return out[0] if isinstance(q, ConfigurationPoint) or np.ndim(q) == 1 else out


def wavefunction_value(w, q, t=None):
    q_arr, t = _split_point(q, t)
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    return _maybe_scalar(q, w.value(q_arr, t))


def wavefunction_gradient(w, q, particle_index, t=None):
    """``(dPsi/dx_i, dPsi/dy_i)`` for particle ``particle_index`` in {1, 2}."""
    if particle_index not in (1, 2):
        raise ValueError(f"particle_index must be 1 or 2, got {particle_index!r}")
    q_arr, t = _split_point(q, t)
    grad = w.gradient(q_arr, t)
    sl = slice(0, 2) if particle_index == 1 else slice(2, 4)
    return _maybe_scalar(q, grad[:, sl])


def density(w, q, t=None):
    q_arr, t = _split_point(q, t)
    return _maybe_scalar(q, w.density(q_arr, t))


def _check_nodes(w, jet, t, node_epsilon):
    near = w.is_near_node(jet.abs_psi, t, node_epsilon)
    if np.any(near):
        raise NodeProximity(jet.abs_psi[near], float(node_epsilon * np.max(w.peak_amplitude(as_times(t)))))


def _laplacian_r_over_r(jet):
    """``d_i^2 R / R`` per coordinate from the log-derivatives of Psi.

    Uses ``d log R = Re(d log Psi)`` so no phase branch cuts appear.
    """
    g = jet.d1
    h = np.diagonal(jet.d2, axis1=1, axis2=2)
    return g.real**2 + (h - g * g).real


def quantum_potential(w, q, t=None, node_epsilon=1e-10):
    """``Q = -(hbar^2 / 2m) sum_i (d_i^2 R) / R``."""
    q_arr, t = _split_point(q, t)
    jet = w.jet(q_arr, t, order=2)
    _check_nodes(w, jet, t, node_epsilon)
    c = w.constants
    lap = _laplacian_r_over_r(jet)[:, : w.n_active_coords]
    return _maybe_scalar(q, -(c.hbar**2) / (2.0 * c.mass) * lap.sum(axis=1))


def quantum_force(w, q, t=None, node_epsilon=1e-10):
    """``-grad Q`` from third derivatives of the packets, shape ``(n, 4)``."""
    q_arr, t = _split_point(q, t)
    jet = w.jet(q_arr, t, order=3)
    _check_nodes(w, jet, t, node_epsilon)
    c = w.constants
    g = jet.d1  # G_i
    d2 = jet.d2
    d3 = jet.d3  # [n, i, j] = d_i d_i d_j Psi / Psi
    h_diag = np.diagonal(d2, axis1=1, axis2=2)  # H_i
    # d_j G_i = D_ij - G_i G_j ; d_j H_i = D_iij - H_i G_j
    dg = d2 - g[:, :, None] * g[:, None, :]
    dh = d3 - h_diag[:, :, None] * g[:, None, :]
    # d_j [ (Re G_i)^2 + Re H_i - Re G_i^2 ]
    term = 2.0 * g.real[:, :, None] * dg.real + dh.real - (2.0 * g[:, :, None] * dg).real
    active = w.n_active_coords
    grad_q = -(c.hbar**2) / (2.0 * c.mass) * term[:, :active, :].sum(axis=1)
    if active < N_COORDS:
        grad_q[:, active:] = 0.0
    return _maybe_scalar(q, -grad_q)
