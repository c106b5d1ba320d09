"""Detector windows, SQT joint-detection probabilities and dBB coincidence counts."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from pilotwave.dynamics import IntegratorConfig, integrate_batch
from pilotwave.ensembles import sample_density

__all__ = [
    "CoincidenceResult",
    "DetectorPair",
    "DetectorWindow",
    "EnsembleTooShort",
    "PairMode",
    "QuadratureNonConvergence",
    "ScanRow",
    "box_probability",
    "dbb_coincidences",
    "discrepancy_scan",
    "placement_grid",
    "screen_band_fraction",
    "single_particle_anticoincidence",
    "sqt_joint_probability",
    "write_scan_csv",
]

SCAN_CSV_HEADER = (
    "xP_min", "xP_max", "xQ_min", "xQ_max", "sqt",
    "gibbs_rate", "gibbs_se", "time_rate", "time_se", "discrepancy",
)


class QuadratureNonConvergence(RuntimeError):
    def __init__(self, value, error, rel_tol):
        self.value, self.error, self.rel_tol = value, error, rel_tol
        super().__init__(
            f"quadrature reached error {error:.3e} on value {value:.6e} (rel_tol {rel_tol:.1e})"
        )


class EnsembleTooShort(ValueError):
    pass


class PairMode(str, enum.Enum):
    ORDERED = "ordered"
    UNORDERED = "unordered"


@dataclass(frozen=True)
class DetectorWindow:
    x_min: float
    x_max: float

    def __post_init__(self):
        if not (np.isfinite(self.x_min) or np.isinf(self.x_min)) or not self.x_min < self.x_max:
            raise ValueError(f"detector window needs x_min < x_max, got [{self.x_min}, {self.x_max}]")

    def mirrored(self):
        return DetectorWindow(-self.x_max, -self.x_min)

    def contains(self, x):
        return (x >= self.x_min) & (x <= self.x_max)

    def overlaps(self, other):
        return self.x_min < other.x_max and other.x_min < self.x_max

    @property
    def width(self):
        return self.x_max - self.x_min


@dataclass(frozen=True)
class DetectorPair:
    P: DetectorWindow
    Q: DetectorWindow
    allow_overlap: bool = False

    def __post_init__(self):
        if self.P.overlaps(self.Q) and not self.allow_overlap:
            raise ValueError(f"windows {self.P} and {self.Q} overlap; pass allow_overlap=True")

    @classmethod
    def from_bounds(cls, p, q, allow_overlap=False):
        return cls(DetectorWindow(*p), DetectorWindow(*q), allow_overlap)

    @property
    def overlapping(self):
        return self.P.overlaps(self.Q)

    def mirrored(self):
        """The pair ``(mirror(Q), mirror(P))``."""
        return DetectorPair(self.Q.mirrored(), self.P.mirrored(), self.allow_overlap)

    def swapped(self):
        return DetectorPair(self.Q, self.P, self.allow_overlap)

    @property
    def is_mirror_symmetric(self):
        return self.Q == self.P.mirrored()

    @property
    def admits_antisymmetric_pairs(self):
        """True when some ``x`` has ``x`` in P and ``-x`` in Q."""
        m = self.P.mirrored()
        return m.x_min <= self.Q.x_max and self.Q.x_min <= m.x_max


@dataclass(frozen=True)
class CoincidenceResult:
    trials: int
    coincidences: int
    mode: PairMode
    single_hits: tuple | None = None

    @property
    def rate(self):
        return self.coincidences / self.trials if self.trials else float("nan")

    @property
    def standard_error(self):
        r = self.rate
        return float(np.sqrt(r * (1.0 - r) / self.trials)) if self.trials else float("nan")

    def single_rates(self):
        if self.single_hits is None:
            return None
        return tuple(h / self.trials for h in self.single_hits)


# -- SQT quadrature ------------------------------------------------------------

_EFFECTIVE_WIDTHS = 40.0


@lru_cache(maxsize=4096)
def _axis_overlap(ax_k, ax_l, lo, hi, t, constants, rel_tol):
    """``int_lo^hi conj(phi_k) phi_l d xi`` with its error estimate."""
    if ax_k is None and ax_l is None:
        return 1.0 + 0.0j, 0.0
    centers = [ax.center + ax.velocity * t for ax in (ax_k, ax_l)]
    widths = [ax.width(t, constants) for ax in (ax_k, ax_l)]
    lo_eff = max(lo, min(centers) - _EFFECTIVE_WIDTHS * max(widths))
    hi_eff = min(hi, max(centers) + _EFFECTIVE_WIDTHS * max(widths))
    if lo_eff >= hi_eff:
        return 0.0j, 0.0

    def f(xi, part):
        lk = ax_k.log_parts(xi, t, constants)[0]
        ll = ax_l.log_parts(xi, t, constants)[0]
        v = np.exp(np.conj(lk) + ll)
        return v.real if part == 0 else v.imag

    kw = dict(epsabs=1e-14, epsrel=rel_tol, limit=500)
    points = [c for c in centers if lo_eff < c < hi_eff] or None
    re, e_re = integrate.quad(f, lo_eff, hi_eff, args=(0,), points=points, **kw)
    if ax_k == ax_l:
        im, e_im = 0.0, 0.0
    else:
        im, e_im = integrate.quad(f, lo_eff, hi_eff, args=(1,), points=points, **kw)
    return complex(re, im), float(np.hypot(e_re, e_im))


def box_probability(w, t, bounds, rel_tol=1e-10, return_error=False):
    """``int |Psi(q, t)|^2`` over the box ``bounds`` (one interval per coordinate).

    ``|Psi|^2`` is a double sum over term pairs of products of 1D
    integrals, so the box integral is assembled from adaptive 1D quadratures.
    Single-particle states only use the first two intervals.
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    if len(bounds) != 4:
        raise ValueError("bounds needs one interval per coordinate (x1, y1, x2, y2)")
    total, err = 0.0, 0.0
    terms = w.terms
    for tk in terms:
        axes_k = w.axes_of_term(tk)
        for tl in terms:
            axes_l = w.axes_of_term(tl)
            prod, rel_err = 1.0 + 0.0j, 0.0
            for ak, al, (lo, hi) in zip(axes_k, axes_l, bounds):
                val, e = _axis_overlap(ak, al, lo, hi, float(t), w.constants, rel_tol)
                prod *= val
                rel_err += e / max(abs(val), 1e-300)
            total += prod
            err += abs(prod) * rel_err
    coef2 = w.term_coefficient**2
    value, error = float(coef2 * total.real), float(coef2 * err)
    if return_error:
        return value, error
    return value


def _window_bounds(pair_p, pair_q, y_band):
    y = (-np.inf, np.inf) if y_band is None else tuple(y_band)
    return [(pair_p.x_min, pair_p.x_max), y, (pair_q.x_min, pair_q.x_max), y]


def sqt_joint_probability(w, pair, T, mode=PairMode.UNORDERED, rel_tol=1e-6, y_band=None):
    """Standard quantum joint detection probability at fixed time ``T``.

    The x integrals run over the two windows; the y integrals run over the
    whole line unless ``y_band`` restricts them.
    """
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    mode = PairMode(mode)
    if w.is_single_particle:
        raise ValueError("joint detection needs a two-particle state")
    value, error = box_probability(w, T, _window_bounds(pair.P, pair.Q, y_band), return_error=True)
    if mode is PairMode.UNORDERED:
        v2, e2 = box_probability(w, T, _window_bounds(pair.Q, pair.P, y_band), return_error=True)
        value, error = value + v2, error + e2
    if error > rel_tol * abs(value) and error > 1e-15:
        raise QuadratureNonConvergence(value, error, rel_tol)
    return value


# -- dBB counting --------------------------------------------------------------


def _count(positions, pair, mode):
    x1, x2 = positions[:, 0], positions[:, 2]
    hit = pair.P.contains(x1) & pair.Q.contains(x2)
    if PairMode(mode) is PairMode.UNORDERED:
        hit |= pair.Q.contains(x1) & pair.P.contains(x2)
    return int(hit.sum())


def dbb_coincidences(ensemble, pair, T, mode=PairMode.UNORDERED):
    """Count pair trajectories with ``x1(T)`` in P and ``x2(T)`` in Q."""
    if T > ensemble.horizon:
        raise EnsembleTooShort(f"T={T} exceeds the propagation horizon {ensemble.horizon}")
    positions = ensemble.positions_at(T)
    return CoincidenceResult(
        trials=positions.shape[0], coincidences=_count(positions, pair, mode), mode=PairMode(mode)
    )


def single_particle_anticoincidence(w, n, pair, T, seed, cfg=None):
    """One particle per trial: a coincidence would need both windows to fire.

    Refuses overlapping windows unless the pair was built with
    ``allow_overlap=True``. ``single_hits`` holds the per-window counts.
    """
    if not w.is_single_particle:
        raise ValueError("single_particle_anticoincidence needs a SINGLE_PARTICLE state")
    if pair.overlapping and not pair.allow_overlap:
        raise ValueError("overlapping detector windows are not allowed")
    points, _ = sample_density(w, 0.0, n, seed)
    trajectories = integrate_batch(w, points, T, cfg or IntegratorConfig())
    xs = np.array([tr.positions[-1, 0] for tr in trajectories if not tr.truncated])
    in_p, in_q = pair.P.contains(xs), pair.Q.contains(xs)
    return CoincidenceResult(
        trials=xs.size,
        coincidences=int(np.sum(in_p & in_q)),
        mode=PairMode.ORDERED,
        single_hits=(int(in_p.sum()), int(in_q.sum())),
    )


def screen_band_fraction(ensemble, T, screen_y, half_width):
    """Fraction of pairs with both particles within ``half_width`` of the screen."""
    pos = ensemble.positions_at(T)
    near = (np.abs(pos[:, 1] - screen_y) <= half_width) & (np.abs(pos[:, 3] - screen_y) <= half_width)
    return float(near.mean()) if len(pos) else float("nan")


# -- scans ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScanRow:
    pair: DetectorPair
    sqt: float
    gibbs_rate: float
    gibbs_se: float
    time_rate: float
    time_se: float

    @property
    def discrepancy(self):
        return self.sqt - self.time_rate

    def as_tuple(self):
        return (
            self.pair.P.x_min, self.pair.P.x_max, self.pair.Q.x_min, self.pair.Q.x_max,
            self.sqt, self.gibbs_rate, self.gibbs_se, self.time_rate, self.time_se,
            self.discrepancy,
        )


def placement_grid(centers_p, centers_q, width=0.5, allow_overlap=False):
    """Detector pairs of a common ``width`` centred on every (P, Q) combination."""
    pairs = []
    for cp in centers_p:
        for cq in centers_q:
            p = DetectorWindow(cp - width / 2, cp + width / 2)
            q = DetectorWindow(cq - width / 2, cq + width / 2)
            if p.overlaps(q) and not allow_overlap:
                continue
            pairs.append(DetectorPair(p, q, allow_overlap))
    return pairs


def discrepancy_scan(w, placements, T, gibbs, time_ensemble, mode=PairMode.UNORDERED):
    """SQT probability and both dBB ensemble rates for each placement."""
    rows = []
    for pair in placements:
        g = dbb_coincidences(gibbs, pair, T, mode)
        te = dbb_coincidences(time_ensemble, pair, T, mode)
        rows.append(
            ScanRow(
                pair=pair,
                sqt=sqt_joint_probability(w, pair, T, mode),
                gibbs_rate=g.rate,
                gibbs_se=g.standard_error,
                time_rate=te.rate,
                time_se=te.standard_error,
            )
        )
    return rows


def write_scan_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCAN_CSV_HEADER)
        for row in rows:
            writer.writerow([format(float(v), ".17g") for v in row.as_tuple()])
