import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lagtransit.estimator import LagrangeTransitEstimator
from lagtransit.porbit import REFERENCE_GUESSES
from lagtransit.transit import boundary_set


@pytest.fixture(scope="module")
def fitted():
    return LagrangeTransitEstimator().fit()


def test_params_and_clone():
    est = LagrangeTransitEstimator(theta0=0.5, n_jobs=2)
    params = est.get_params()
    assert params["theta0"] == 0.5 and params["n_jobs"] == 2
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_not_fitted():
    with pytest.raises(NotFittedError):
        LagrangeTransitEstimator().transform(np.zeros((1, 4)))


def test_fit_results(fitted):
    assert fitted.orbit_.residual < 1e-11
    assert np.abs(fitted.orbit_.x_bar - REFERENCE_GUESSES["bcp"]).max() < 1e-6
    assert fitted.normal_form_.sigma == pytest.approx(4.2874e8, rel=1e-3)


def test_round_trip(fitted):
    z = np.array([[1e-5, 2e-5, -1e-5, 3e-6], [0.0, 0.0, 1e-6, 0.0]])
    x = fitted.inverse_transform(z)
    assert np.abs(fitted.transform(x) - z).max() < 1e-12
    assert np.array_equal(fitted.inverse_transform(np.zeros((1, 4)))[0], fitted.orbit_.x_bar)
    with pytest.raises(ValueError):
        fitted.transform(np.zeros((2, 3)))


def test_predict_agrees_with_linear_labels(fitted):
    b = boundary_set(fitted.effective_hamiltonian_, 1e-6, 1e-4, 2, "n1")
    X = fitted.inverse_transform(np.vstack([b.transit, b.nontransit]))
    assert list(fitted.predict_local(X)) == ["transit", "transit", "nontransit", "nontransit"]
    assert list(fitted.predict(X)) == ["transit", "transit", "nontransit", "nontransit"]
    assert np.allclose(fitted.energy(X), 1e-6, rtol=1e-6)


def test_fit_rejects_autonomous_model():
    with pytest.raises(ValueError):
        LagrangeTransitEstimator(model_config={"model": "cr3bp"}).fit()
