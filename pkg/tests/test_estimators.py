import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from virtual_channel import make_gilbert_elliott
from virtual_channel.estimators import BeliefPolicy, QueueAnalyzer


class TestQueueAnalyzer:
    def test_fit_attributes(self, fig3_model):
        qa = QueueAnalyzer(policy_ell=2, thresholds=(5,)).fit(fig3_model)
        assert qa.K_ == int(np.argmax(qa.throughput_curve_)) + 1
        assert qa.stable_ and qa.report_.ccdf[5] > 0
        assert qa.score() == pytest.approx(qa.throughput_curve_.max())

    def test_predict_is_level_law(self, fig3_model):
        qa = QueueAnalyzer().fit(fig3_model)
        probs = qa.predict(np.arange(300))
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)
        assert probs @ np.arange(300) == pytest.approx(qa.report_.mean_queue, rel=1e-6)

    def test_fixed_K_and_dict_input(self, fig3_model):
        qa = QueueAnalyzer(K=60).fit(fig3_model.to_dict())
        assert qa.K_ == 60

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            QueueAnalyzer().predict([0])

    def test_clone(self):
        qa = QueueAnalyzer(gamma=0.1, policy_ell=2)
        assert clone(qa).get_params() == qa.get_params()

    def test_unstable_predict(self, fig3_model):
        qa = QueueAnalyzer(K=110, gamma=0.5).fit(fig3_model)
        assert not qa.stable_
        with pytest.raises(ValueError, match="unstable"):
            qa.predict([0])


@pytest.fixture(scope="module")
def fitted():
    return BeliefPolicy(N=40, grid_size=300).fit(make_gilbert_elliott(0.2, 0.3, 40))


class TestBeliefPolicy:
    def test_scalar_and_matrix_beliefs(self, fitted):
        a = fitted.predict([0.2, 0.9])
        b = fitted.predict([[0.8, 0.2], [0.1, 0.9]])
        np.testing.assert_array_equal(a, b)

    def test_values_increase_with_good_belief(self, fitted):
        v = fitted.value(np.linspace(0, 1, 21))
        assert np.all(np.diff(v) >= -1e-9)

    def test_rates(self, fitted):
        r = fitted.predict_rate([1.0])
        assert 0 < r[0] <= 1
        assert fitted.thresholds_.monotone

    def test_invalid_beliefs(self, fitted):
        with pytest.raises(ValueError):
            fitted.predict([[0.5, 0.6]])
        with pytest.raises(ValueError):
            fitted.predict([[0.2, 0.3, 0.5]])

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            BeliefPolicy().value([0.5])
