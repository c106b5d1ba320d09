"""Initial-condition sampling and the Gibbs / time ensembles.

Sampling is exact rejection sampling from ``|Psi(., t0)|^2``. Each term of
the wavefunction is a product of 1D Gaussians, so ``|term_k|^2`` is a
(possibly unnormalized) Gaussian on any linear slice of configuration
space. With ``K`` terms, Cauchy-Schwarz gives the envelope

    |sum_k c_k T_k|^2 <= K * sum_k |c_k|^2 |T_k|^2,

a Gaussian mixture that bounds the target everywhere.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from pilotwave._validation import check_count, check_nonnegative
from pilotwave.dynamics import IntegratorConfig, integrate_batch

__all__ = [
    "Ensemble",
    "EnsembleKind",
    "EnsembleSpec",
    "EnvelopeViolation",
    "SamplerDiagnostics",
    "TruncationLimitExceeded",
    "build_ensemble",
    "sample_antisymmetric_slice",
    "sample_density",
    "write_manifest",
]

MAX_TRUNCATED_FRACTION = 0.01


class EnvelopeViolation(RuntimeError):
    """The target density exceeded its rejection envelope."""

    def __init__(self, ratio, point):
        self.ratio = float(ratio)
        self.point = np.asarray(point)
        super().__init__(f"density / envelope = {self.ratio:.6g} > 1 at {self.point}")


class TruncationLimitExceeded(RuntimeError):
    pass


class EnsembleKind(str, enum.Enum):
    GIBBS = "gibbs"
    TIME = "time"


@dataclass(frozen=True)
class EnsembleSpec:
    kind: EnsembleKind = EnsembleKind.GIBBS
    size: int = 1000
    seed: int = 0
    constraint_width: float = 0.0
    independent_y: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        check_count(self.size, "size")
        check_nonnegative(self.constraint_width, "constraint_width")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")


@dataclass(frozen=True)
class SamplerDiagnostics:
    proposals: int
    accepted: int
    acceptance_rate: float
    max_density_seen: float
    envelope_constant: float


@dataclass
class Ensemble:
    spec: EnsembleSpec
    initial_points: np.ndarray
    trajectories: list
    sample_times: np.ndarray
    diagnostics: SamplerDiagnostics
    t0: float = 0.0
    truncated_count: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return float(self.sample_times[-1])

    @property
    def complete(self):
        return [tr for tr in self.trajectories if not tr.truncated]

    def positions_at(self, t):
        """``(n_complete, 4)`` positions of the non-truncated members at ``t``."""
        hits = np.flatnonzero(self.sample_times == t)
        if hits.size == 0:
            raise KeyError(f"t={t} is not one of the ensemble sample times")
        j = hits[0]
        rows = [tr.positions[j] for tr in self.complete]
        return np.array(rows).reshape(-1, 4)


# -- Gaussian envelopes --------------------------------------------------------


def _gauss_product(means, variances):
    """Product of 1D normal densities in one variable -> (scale, mean, var)."""
    scale, mu, var = 1.0, means[0], variances[0]
    for m2, v2 in zip(means[1:], variances[1:]):
        s = var + v2
        scale *= np.exp(-((mu - m2) ** 2) / (2 * s)) / np.sqrt(2 * np.pi * s)
        mu = (mu * v2 + m2 * var) / s
        var = var * v2 / s
    return scale, mu, var


class _Envelope:
    """Gaussian mixture bound for ``|Psi|^2`` restricted to a linear embedding.

    ``embedding`` maps each configuration coordinate to ``(free_index, sign)``
    or to ``None`` (coordinate fixed at 0 and absent from the density).
    """

    def __init__(self, w, t0, embedding, n_free):
        c = w.constants
        comps = []
        for term in w.terms:
            axes = w.axes_of_term(term)
            per_free = [([], []) for _ in range(n_free)]
            for ax, emb in zip(axes, embedding):
                if ax is None or emb is None:
                    continue
                j, sign = emb
                center = ax.center + ax.velocity * t0
                per_free[j][0].append(sign * center)
                per_free[j][1].append(ax.width(t0, c) ** 2)
            scale, means, stds = 1.0, [], []
            for ms, vs in per_free:
                s, mu, var = _gauss_product(ms, vs)
                scale *= s
                means.append(mu)
                stds.append(np.sqrt(var))
            comps.append((scale, np.array(means), np.array(stds)))
        coef2 = w.term_coefficient**2
        self.weights_raw = np.array([coef2 * s for s, _, _ in comps])
        self.constant = len(comps) * self.weights_raw.sum()
        self.weights = self.weights_raw / self.weights_raw.sum()
        self.means = np.array([m for _, m, _ in comps])
        self.stds = np.array([s for _, _, s in comps])

    def pdf(self, u):
        out = 0.0
        for wk, mu, sd in zip(self.weights, self.means, self.stds):
            z = (u - mu) / sd
            out = out + wk * np.exp(-0.5 * np.sum(z * z, axis=1)) / np.prod(np.sqrt(2 * np.pi) * sd)
        return out

    def draw(self, rng, m):
        comp = rng.choice(len(self.weights), size=m, p=self.weights)
        return self.means[comp] + self.stds[comp] * rng.standard_normal((m, self.means.shape[1]))


def _rejection_sample(w, t0, n, seed, embedding, n_free, accept_extra=None):
    n = check_count(n, "n")
    rng = np.random.default_rng(seed)
    env = _Envelope(w, t0, embedding, n_free)
    out, proposals, max_seen = [], 0, 0.0
    have, rate = 0, 0.5
    while have < n:
        batch = max(256, int(1.25 * (n - have) / rate))
        u = env.draw(rng, batch)
        uniform = rng.random(batch)
        proposals += batch
        q = _embed(u, embedding)
        rho = w.density(q, t0)
        bound = env.constant * env.pdf(u)
        ratio = rho / bound
        worst = int(np.argmax(ratio))
        if ratio[worst] > 1.0 + 1e-9:
            raise EnvelopeViolation(ratio[worst], q[worst])
        max_seen = max(max_seen, float(rho.max()))
        keep = uniform < ratio
        if accept_extra is not None:
            keep &= accept_extra(q)
        out.append(q[keep])
        have += int(keep.sum())
        rate = max(have / proposals, 1e-4)
    points = np.concatenate(out)[:n]
    accepted = int(sum(len(o) for o in out))
    diag = SamplerDiagnostics(
        proposals=proposals,
        accepted=accepted,
        acceptance_rate=accepted / proposals,
        max_density_seen=max_seen,
        envelope_constant=float(env.constant),
    )
    return points, diag


def _embed(u, embedding):
    q = np.zeros((u.shape[0], 4))
    for c, emb in enumerate(embedding):
        if emb is not None:
            j, sign = emb
            q[:, c] = sign * u[:, j]
    return q


def sample_density(w, t0, n, seed):
    """``n`` i.i.d. configurations from ``|Psi(., t0)|^2``.

    For single-particle states only ``(x1, y1)`` is sampled and the second
    particle's coordinates are set to zero.
    """
    if w.is_single_particle:
        embedding = [(0, 1.0), (1, 1.0), None, None]
        return _rejection_sample(w, t0, n, seed, embedding, 2)
    embedding = [(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)]
    return _rejection_sample(w, t0, n, seed, embedding, 4)


def sample_antisymmetric_slice(w, t0, n, seed, constraint_width=0.0, independent_y=False):
    """Samples constrained to ``x1 + x2 = 0``.

    With ``constraint_width == 0`` points ``(x, y, -x, y)`` are drawn with
    ``(x, y)`` distributed as ``|Psi(x, y, -x, y, t0)|^2`` (or
    ``(x, y1, -x, y2)`` when ``independent_y``). A positive width instead
    draws from ``|Psi|^2`` conditioned on ``|x1 + x2| <= width / 2``.
    """
    if w.is_single_particle:
        raise ValueError("the antisymmetric slice needs a two-particle state")
    check_nonnegative(constraint_width, "constraint_width")
    if constraint_width > 0:
        half = constraint_width / 2.0

        def in_band(q):
            return np.abs(q[:, 0] + q[:, 2]) <= half

        embedding = [(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)]
        return _rejection_sample(w, t0, n, seed, embedding, 4, accept_extra=in_band)
    if independent_y:
        embedding = [(0, 1.0), (1, 1.0), (0, -1.0), (2, 1.0)]
        return _rejection_sample(w, t0, n, seed, embedding, 3)
    embedding = [(0, 1.0), (1, 1.0), (0, -1.0), (1, 1.0)]
    return _rejection_sample(w, t0, n, seed, embedding, 2)


def build_ensemble(w, spec, t_end, cfg=None, sample_times=None, t0=0.0, strict=True):
    """Sample initial points per ``spec`` and propagate them to ``t_end``.

    Truncated trajectories are kept in ``trajectories`` (flagged) but are
    left out of ``positions_at``. If more than 1% are truncated and
    ``strict`` is set, :class:`TruncationLimitExceeded` is raised.
    """
    cfg = IntegratorConfig() if cfg is None else cfg
    if spec.kind is EnsembleKind.GIBBS:
        points, diag = sample_density(w, t0, spec.size, spec.seed)
    else:
        points, diag = sample_antisymmetric_slice(
            w, t0, spec.size, spec.seed, spec.constraint_width, spec.independent_y
        )
    if sample_times is None:
        sample_times = [t0, t_end]
    trajectories = integrate_batch(w, points, t_end, cfg, sample_times, t0=t0)
    truncated = sum(tr.truncated for tr in trajectories)
    finals = np.array([tr.positions[-1] for tr in trajectories if not tr.truncated]).reshape(-1, 4)
    ensemble = Ensemble(
        spec=spec,
        initial_points=points,
        trajectories=trajectories,
        sample_times=np.asarray(sample_times, dtype=float),
        diagnostics=diag,
        t0=float(t0),
        truncated_count=int(truncated),
        stats={
            "mean_steps": float(np.mean([tr.stats["n_steps"] for tr in trajectories])),
            "total_rejected": int(sum(tr.stats["n_rejected"] for tr in trajectories)),
            # how far the final pairs sit from the x1 + x2 = 0 plane
            "max_abs_x_sum_final": float(np.abs(finals[:, 0] + finals[:, 2]).max()) if len(finals) else 0.0,
        },
    )
    if strict and truncated > MAX_TRUNCATED_FRACTION * spec.size:
        raise TruncationLimitExceeded(
            f"{truncated} of {spec.size} trajectories truncated (limit 1%)"
        )
    return ensemble


def write_manifest(ensemble, csv_path, json_path):
    """Initial points as CSV plus a JSON sidecar describing the run."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["idx", "x1", "y1", "x2", "y2"])
        for i, row in enumerate(ensemble.initial_points):
            writer.writerow([i] + [format(v, ".17g") for v in row])
    spec = asdict(ensemble.spec)
    spec["kind"] = ensemble.spec.kind.value
    sidecar = {
        "spec": spec,
        "seed": ensemble.spec.seed,
        "t0": ensemble.t0,
        "sample_times": [float(t) for t in ensemble.sample_times],
        "diagnostics": asdict(ensemble.diagnostics),
        "truncated_count": ensemble.truncated_count,
        "stats": ensemble.stats,
    }
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
