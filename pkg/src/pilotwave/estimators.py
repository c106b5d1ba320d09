"""scikit-learn style wrappers around sampling, propagation and counting.

Rows of ``X`` are configurations ``(x1, y1, x2, y2)``, so the pieces compose
with ordinary array pipelines::

    sampler = BornSampler(random_state=0).fit(wavefunction)
    X0 = sampler.sample(1000)
    XT = BohmianFlow(wavefunction, t_end=5.0).fit().transform(X0)
    rate = CoincidenceCounter((4.0, 4.5), (-4.5, -4.0)).fit().score(XT)
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from pilotwave.detection import DetectorPair, PairMode, _count
from pilotwave.dynamics import IntegratorConfig, integrate_batch
from pilotwave.ensembles import EnsembleKind, sample_antisymmetric_slice, sample_density
from pilotwave.quantum_state import SlitGeometry, TwoParticleWaveFunction


def _check_configurations(X, estimator):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, estimator=estimator)
    if X.shape[1] != 4:
        raise ValueError(
            f"{type(estimator).__name__} expects 4 columns (x1, y1, x2, y2), got {X.shape[1]}"
        )
    return X


def _check_wavefunction(w):
    if w is None:
        return TwoParticleWaveFunction.from_geometry()
    if not isinstance(w, TwoParticleWaveFunction):
        raise TypeError(f"expected a TwoParticleWaveFunction, got {type(w).__name__}")
    return w


class BohmianFlow(TransformerMixin, BaseEstimator):
    """Map initial configurations to their positions at ``t_end``.

    Parameters
    ----------
    wavefunction : TwoParticleWaveFunction, optional
        Guiding state; the default double-slit state when omitted.
    t_start, t_end : float
        Integration interval. ``t_end=None`` uses the default screen arrival time.
    rel_tol, abs_tol, max_step, node_epsilon : float
        Passed to :class:`~pilotwave.dynamics.IntegratorConfig`.

    Rows whose trajectory was truncated at a node come back as NaN; their
    indices are kept in ``truncated_`` after each ``transform``.
    """

    def __init__(self, wavefunction=None, t_start=0.0, t_end=None, rel_tol=1e-8,
                 abs_tol=1e-8, max_step=0.25, node_epsilon=1e-10):
        self.wavefunction = wavefunction
        self.t_start = t_start
        self.t_end = t_end
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.max_step = max_step
        self.node_epsilon = node_epsilon

    def fit(self, X=None, y=None):
        self.wavefunction_ = _check_wavefunction(self.wavefunction)
        self.t_end_ = SlitGeometry().arrival_time if self.t_end is None else float(self.t_end)
        if not self.t_end_ > self.t_start:
            raise ValueError(f"t_end ({self.t_end_}) must exceed t_start ({self.t_start})")
        self.integrator_config_ = IntegratorConfig(
            rel_tol=self.rel_tol,
            abs_tol=self.abs_tol,
            max_step=self.max_step,
            node_epsilon=self.node_epsilon,
        )
        self.n_features_in_ = 4
        return self

    def trajectories(self, X, sample_times=None):
        check_is_fitted(self)
        X = _check_configurations(X, self)
        return integrate_batch(
            self.wavefunction_, X, self.t_end_, self.integrator_config_, sample_times, t0=self.t_start
        )

    def transform(self, X):
        trajs = self.trajectories(X)
        out = np.array([tr.positions[-1] if not tr.truncated else np.full(4, np.nan) for tr in trajs])
        self.truncated_ = np.array([i for i, tr in enumerate(trajs) if tr.truncated], dtype=int)
        return out.reshape(-1, 4)


class BornSampler(BaseEstimator):
    """Draw configurations from ``|Psi(., t0)|^2``.

    ``kind='gibbs'`` samples the full density; ``kind='time'`` samples the
    antisymmetric slice ``x1 + x2 = 0`` used for time ensembles.
    ``random_state`` must be an integer for reproducible output.
    """

    def __init__(self, kind="gibbs", t0=0.0, constraint_width=0.0, independent_y=False,
                 random_state=None):
        self.kind = kind
        self.t0 = t0
        self.constraint_width = constraint_width
        self.independent_y = independent_y
        self.random_state = random_state

    def fit(self, wavefunction=None, y=None):
        self.wavefunction_ = _check_wavefunction(wavefunction)
        self.kind_ = EnsembleKind(self.kind)
        if self.random_state is None:
            self.seed_ = int(np.random.SeedSequence().entropy % 2**63)
        else:
            self.seed_ = int(self.random_state)
        self.n_draws_ = 0
        return self

    def sample(self, n_samples=1):
        check_is_fitted(self)
        # successive calls draw fresh, still reproducible, streams
        seed = [self.seed_, self.n_draws_]
        self.n_draws_ += 1
        if self.kind_ is EnsembleKind.GIBBS:
            X, diag = sample_density(self.wavefunction_, self.t0, n_samples, seed)
        else:
            X, diag = sample_antisymmetric_slice(
                self.wavefunction_, self.t0, n_samples, seed,
                self.constraint_width, self.independent_y,
            )
        self.diagnostics_ = diag
        return X


class CoincidenceCounter(BaseEstimator):
    """Classify configurations as coincidences for a detector pair."""

    def __init__(self, p_window=(4.0, 4.5), q_window=(-4.5, -4.0), mode="unordered",
                 allow_overlap=False):
        self.p_window = p_window
        self.q_window = q_window
        self.mode = mode
        self.allow_overlap = allow_overlap

    def fit(self, X=None, y=None):
        self.pair_ = DetectorPair.from_bounds(self.p_window, self.q_window, self.allow_overlap)
        self.mode_ = PairMode(self.mode)
        self.n_features_in_ = 4
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = _check_configurations(X, self)
        return np.array([_count(row[None, :], self.pair_, self.mode_) == 1 for row in X], dtype=bool)

    def score(self, X, y=None):
        """Coincidence rate over the rows of ``X``."""
        check_is_fitted(self)
        X = _check_configurations(X, self)
        return _count(X, self.pair_, self.mode_) / X.shape[0]
