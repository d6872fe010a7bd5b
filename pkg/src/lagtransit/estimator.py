"""scikit-learn style front end for the orbit / normal-form / transit pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .integrate import IntegratorSettings, monodromy
from .models import model_from_config
from .porbit import REFERENCE_GUESSES, refine_fixed_point
from .symmap import effective_hamiltonian, normal_form, symplectic_eigenbasis
from .transit import RealmWindow, classify_local, phase_frame, verify_transit_batch

__all__ = ["LagrangeTransitEstimator"]


class LagrangeTransitEstimator(TransformerMixin, BaseEstimator):
    """Fit a Lagrange periodic orbit and its map eigenbasis; map states to local coordinates.

    ``fit`` refines the periodic orbit, computes the monodromy matrix, its
    normal form and symplectic eigenbasis, and transports the basis to
    ``theta0``. ``transform`` takes physical states ``(x, y, px, py)`` to
    local ``(q1, p1, q2, p2)``; ``inverse_transform`` goes back.
    ``predict`` classifies states by full nonlinear integration.

    Parameters
    ----------
    model_config : dict, optional
        Model record as accepted by :func:`model_from_config`; defaults to
        the Earth-Moon bicircular model.
    guess : array_like of shape (4,), optional
        Seed for the fixed point; defaults to the stored reference orbit.
    theta0 : float
        Phase of the local frame.
    tol : float
        Fixed-point residual target.
    rel_tol, abs_tol : float
        Integrator tolerances.
    half_width : float
        Half width of the realm-detection window around L1.
    max_periods : float
        Integration budget for ``predict``, in perturbation periods.
    n_jobs : int
        Worker processes for ``predict``.
    """

    def __init__(
        self,
        model_config=None,
        guess=None,
        theta0=0.0,
        tol=1e-11,
        rel_tol=1e-12,
        abs_tol=1e-12,
        half_width=0.15,
        max_periods=6.0,
        n_jobs=1,
    ):
        self.model_config = model_config
        self.guess = guess
        self.theta0 = theta0
        self.tol = tol
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.half_width = half_width
        self.max_periods = max_periods
        self.n_jobs = n_jobs

    def _model(self):
        cfg = self.model_config if self.model_config is not None else {"model": "bcp"}
        return model_from_config(cfg)

    def fit(self, X=None, y=None):
        """Refine the orbit; ``X`` may supply the guess as its first row."""
        model = self._model()
        if not model.periodic:
            raise ValueError("the estimator needs a time-periodic model")
        if X is not None:
            guess = check_array(X, ensure_min_samples=1)[0]
        elif self.guess is not None:
            guess = np.asarray(self.guess, dtype=float)
        else:
            guess = np.asarray(REFERENCE_GUESSES[model.name], dtype=float)
        if guess.shape != (4,):
            raise ValueError("guess must have four components")
        cfg = IntegratorSettings(rel_tol=self.rel_tol, abs_tol=self.abs_tol)
        self.model_ = model
        self.cfg_ = cfg
        self.orbit_ = refine_fixed_point(model, guess, tol=self.tol, cfg=cfg)
        self.monodromy_ = monodromy(self.orbit_, cfg)
        self.normal_form_ = normal_form(self.monodromy_)
        self.basis_ = symplectic_eigenbasis(self.monodromy_, self.normal_form_, orbit_ref=self.orbit_)
        self.effective_hamiltonian_ = effective_hamiltonian(self.normal_form_, self.orbit_.period)
        self.frame_ = phase_frame(self.basis_, self.orbit_, self.theta0, cfg)
        self.window_ = RealmWindow.around_l1(model.mu, self.half_width)
        self.n_features_in_ = 4
        return self

    def transform(self, X):
        check_is_fitted(self, "frame_")
        X = check_array(X)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 features, got {X.shape[1]}")
        return self.frame_.to_local(X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "frame_")
        Z = check_array(Z)
        if Z.shape[1] != 4:
            raise ValueError(f"expected 4 features, got {Z.shape[1]}")
        return self.frame_.to_physical(Z)

    def predict(self, X):
        """Nonlinear outcome label (``transit``, ``nontransit``, ``bounded``, ``undecided``) per state."""
        check_is_fitted(self, "frame_")
        X = check_array(X)
        outs = verify_transit_batch(
            self.model_, X, self.theta0, self.window_, self.cfg_, self.max_periods, self.n_jobs
        )
        return np.array([o.classification.value for o in outs])

    def predict_local(self, X):
        """Linear-theory class of each state from the sign of ``q1 p1``."""
        Z = self.transform(X)
        return np.array([classify_local(z).value for z in Z])

    def energy(self, X):
        """Effective quadratic energy of each state."""
        return self.effective_hamiltonian_.energy(self.transform(X))
