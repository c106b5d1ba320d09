import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pilotwave.detection import DetectorPair, PairMode, _count
from pilotwave.dynamics import IntegratorConfig, integrate_batch
from pilotwave.estimators import BohmianFlow, BornSampler, CoincidenceCounter

from helpers import ARRIVAL_TIME


@pytest.fixture(scope="module")
def starts(bosonic):
    return BornSampler(random_state=7).fit(bosonic).sample(40)


class TestBohmianFlow:
    def test_transform_matches_batch_integration(self, bosonic, starts):
        flow = BohmianFlow(bosonic).fit()
        ends = flow.transform(starts)
        ref = integrate_batch(bosonic, starts, ARRIVAL_TIME, IntegratorConfig())
        assert np.array_equal(ends, np.array([tr.positions[-1] for tr in ref]))
        assert flow.t_end_ == ARRIVAL_TIME and flow.truncated_.size == 0

    def test_truncated_rows_are_nan(self, bosonic):
        X = np.array([[3.0, 0.0, -6.5, 0.0], [4.3, 0.2, -5.6, -0.4]])
        flow = BohmianFlow(bosonic, node_epsilon=0.3).fit()
        ends = flow.transform(X)
        assert list(flow.truncated_) == [0]
        assert np.all(np.isnan(ends[0])) and np.all(np.isfinite(ends[1]))

    def test_params_and_clone(self, bosonic):
        flow = BohmianFlow(bosonic, t_end=2.0, rel_tol=1e-9)
        params = flow.get_params()
        assert params["t_end"] == 2.0 and params["rel_tol"] == 1e-9
        twin = clone(flow)
        assert twin.get_params()["t_end"] == 2.0 and not hasattr(twin, "t_end_")

    def test_contract(self, bosonic):
        with pytest.raises(NotFittedError):
            BohmianFlow(bosonic).transform(np.zeros((1, 4)))
        with pytest.raises(ValueError):
            BohmianFlow(bosonic).fit().transform(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            BohmianFlow(bosonic, t_start=1.0, t_end=1.0).fit()
        with pytest.raises(TypeError):
            BohmianFlow(wavefunction="bosonic").fit()

    def test_trajectories_at_sample_times(self, bosonic, starts):
        trajs = BohmianFlow(bosonic).fit().trajectories(starts[:3], sample_times=[0.0, 2.5, ARRIVAL_TIME])
        assert all(np.array_equal(tr.times, [0.0, 2.5, ARRIVAL_TIME]) for tr in trajs)


class TestBornSampler:
    def test_reproducible_and_fresh_per_call(self, bosonic):
        a = BornSampler(random_state=3).fit(bosonic)
        b = BornSampler(random_state=3).fit(bosonic)
        first = a.sample(100)
        assert np.array_equal(first, b.sample(100))
        assert not np.array_equal(first, a.sample(100))
        assert a.diagnostics_.accepted >= 100

    def test_time_kind_samples_the_slice(self, bosonic):
        X = BornSampler(kind="time", random_state=0).fit(bosonic).sample(200)
        assert np.all(X[:, 0] + X[:, 2] == 0.0)

    def test_rejects_unknown_kind(self, bosonic):
        with pytest.raises(ValueError):
            BornSampler(kind="canonical").fit(bosonic)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            BornSampler().sample(3)


class TestCoincidenceCounter:
    def test_predict_and_score_agree_with_counting(self, rng):
        X = rng.uniform(-6, 6, size=(5000, 4))
        counter = CoincidenceCounter((1.0, 3.0), (-3.0, -1.0)).fit()
        hits = counter.predict(X)
        pair = DetectorPair.from_bounds((1.0, 3.0), (-3.0, -1.0))
        assert hits.sum() == _count(X, pair, PairMode.UNORDERED)
        assert counter.score(X) == hits.mean()

    def test_ordered_mode_counts_less(self, rng):
        X = rng.uniform(-6, 6, size=(5000, 4))
        un = CoincidenceCounter((1.0, 3.0), (-3.0, -1.0)).fit().score(X)
        ordered = CoincidenceCounter((1.0, 3.0), (-3.0, -1.0), mode="ordered").fit().score(X)
        assert 0 < ordered < un

    def test_overlap_refused_unless_allowed(self):
        with pytest.raises(ValueError):
            CoincidenceCounter((0.0, 1.0), (0.5, 1.5)).fit()
        assert CoincidenceCounter((0.0, 1.0), (0.5, 1.5), allow_overlap=True).fit().pair_.overlapping

    def test_pipeline_composition(self, bosonic):
        X0 = BornSampler(kind="time", random_state=11).fit(bosonic).sample(300)
        XT = BohmianFlow(bosonic).fit().transform(X0)
        # time-ensemble pairs stay on x1 + x2 = 0, so windows off the mirror image never fire
        assert CoincidenceCounter((4.0, 4.5), (-3.0, -2.5)).fit().score(XT) == 0.0
