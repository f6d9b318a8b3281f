"""Nuisance estimators: outcome model, residual regressions, selection
probabilities, posterior assignment probabilities, and the imputation-based
CATE estimator.

The estimation stack mirrors how the adaptive split consumes it:

* ``fit_mu`` fits the outcome regression E[Y | X] on all units without
  touching any treatment assignment.
* Scaled residuals ``(y - mu(x)) / (z - e(x))`` turn the partially linear
  outcome model into a regression problem whose target is the CATE; fitting
  them by (weighted) least squares gives the residual-on-covariate CATE
  estimators.
* For units whose assignment is held out, the residual is *imputed* by
  marginalizing z over the posterior assignment probability
  ``e(x, y) = sigmoid((y - mu(x)) tau(x) / nu^2)``; feeding both observed and
  imputed residuals into one regression gives ``fit_bar_learner``, which uses
  every unit's covariates and outcome while reading assignments only from
  the nuisance fold.
* Because the nuisance fold is selected adaptively, plain least squares on
  it is biased; ``fit_rlearner_weighted`` corrects this by inverse weighting
  with the estimated selection probability ``p(x, y)``, a k-nearest-neighbor
  vote on standardized (covariate, outcome) coordinates.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linmodel import LinearModel, fit_wls, _design, _solve_spd

# Sigmoid arguments beyond this magnitude saturate to exactly 0.0 or 1.0 in
# IEEE double precision; clipping here keeps every probability strictly
# inside (0, 1).
_SIGMOID_CLIP = 36.0


def sigmoid(t):
    t = np.clip(np.asarray(t, dtype=float), -_SIGMOID_CLIP, _SIGMOID_CLIP)
    return 1.0 / (1.0 + np.exp(-t))


class AffineRegressor:
    """Least-squares regressor satisfying the fit/predict contract.

    Any object with the same two methods can be plugged in as the outcome
    model; this affine implementation is the default.
    """

    def __init__(self, ridge=0.0):
        self.ridge = ridge
        self.model = None

    def fit(self, x, y, w=None):
        self.model = fit_wls(x, y, w=w, ridge=self.ridge)
        return self

    def predict(self, x):
        if self.model is None:
            raise ValidationError("regressor is not fitted")
        return self.model.predict(x)


def fit_mu(x, y, regressor=None, ridge=0.0):
    """Fit the outcome model E[Y | X] on all units. Uses no assignments."""
    if regressor is None:
        regressor = AffineRegressor(ridge=ridge)
    return regressor.fit(x, y)


def scaled_residual(y, z, mu_vals, e):
    """Residual ``(y - mu(x)) / (z - e(x))``; the regression target whose
    conditional mean is the CATE. The denominator is -e or 1-e, never 0."""
    return (np.asarray(y, dtype=float) - mu_vals) / (np.asarray(z, dtype=float) - e)


def marginalized_residual(y, mu_vals, e, e_hat):
    """Assignment-free residual: z marginalized over the posterior ``e_hat``.

    Equals ``e_hat * R(z=1) + (1 - e_hat) * R(z=0)``; under a half design
    this reduces to ``2 (y - mu(x)) (2 e_hat - 1)``.
    """
    d = np.asarray(y, dtype=float) - mu_vals
    return e_hat * d / (1.0 - e) + (1.0 - e_hat) * d / (0.0 - e)


def fit_rlearner_ols(x, y, z, e, mu_vals, ridge=0.0):
    """CATE regression of scaled residuals on covariates over one fold.

    All array arguments are restricted to the fold; callers hand in exactly
    the assignments they are allowed to read.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < x.shape[1] + 1:
        raise ValidationError("fold too small for the residual regression")
    r = scaled_residual(y, z, mu_vals, e)
    return fit_wls(x, r, ridge=ridge)


def fit_rlearner_weighted(x, y, z, e, mu_vals, p_vals, ridge=0.0):
    """Selection-bias-corrected CATE regression.

    Weights each fold unit by the inverse of its estimated selection
    probability, restoring consistency when the fold was chosen adaptively.
    Constant ``p_vals`` reproduce :func:`fit_rlearner_ols` exactly.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < x.shape[1] + 1:
        raise ValidationError("fold too small for the residual regression")
    p_vals = np.asarray(p_vals, dtype=float).ravel()
    if np.any(p_vals <= 0.0):
        raise ValidationError("selection probabilities must be positive")
    r = scaled_residual(y, z, mu_vals, e)
    return fit_wls(x, r, w=1.0 / p_vals, ridge=ridge)


# Selection probability -------------------------------------------------------

class NeighborIndex:
    """Precomputed k-nearest-neighbor lists over standardized (x, y) space.

    Distances depend only on the covariates and outcomes, which never change
    during the selection loop, so the neighbor lists are built once and each
    refit of the selection probability is a cheap masked vote.
    """

    def __init__(self, x, y, kappa):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        n = x.shape[0]
        if not 1 <= kappa <= n:
            raise ValidationError("kappa must lie in [1, n]")
        self.kappa = int(kappa)
        coords = np.hstack([x, y[:, None]])
        scale = coords.std(axis=0)
        scale[scale == 0.0] = 1.0
        self.coords = coords / scale
        self.scale = scale
        sq = np.einsum("ij,ij->i", self.coords, self.coords)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (self.coords @ self.coords.T)
        # Stable sort so distance ties break toward the lower index.
        order = np.argsort(d2, axis=1, kind="stable")
        self.neighbors = order[:, : self.kappa]
        if kappa < n:
            keep = order != np.arange(n)[:, None]
            self.loo_neighbors = order[keep].reshape(n, n - 1)[:, : self.kappa]
        else:
            self.loo_neighbors = None

    def vote(self, b):
        """Fraction of selected units among each point's nearest neighbors."""
        b = np.asarray(b, dtype=float)
        return b[self.neighbors].mean(axis=1)

    def vote_loo(self, b):
        """Leave-one-out vote: each training point is excluded from its own
        neighborhood, removing the upward bias of self-inclusion at selected
        points."""
        if self.loo_neighbors is None:
            raise ValidationError("leave-one-out vote needs kappa < n")
        b = np.asarray(b, dtype=float)
        return b[self.loo_neighbors].mean(axis=1)

    def vote_at(self, xq, yq, b):
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        yq = np.asarray(yq, dtype=float).ravel()
        q = np.hstack([xq, yq[:, None]]) / self.scale
        d2 = (
            np.einsum("ij,ij->i", q, q)[:, None]
            + np.einsum("ij,ij->i", self.coords, self.coords)[None, :]
            - 2.0 * (q @ self.coords.T)
        )
        nbr = np.argsort(d2, axis=1, kind="stable")[:, : self.kappa]
        return np.asarray(b, dtype=float)[nbr].mean(axis=1)


@dataclass(frozen=True)
class SelectionModel:
    """Nearest-neighbor estimate of P(unit selected | x, y), clipped below."""

    index: NeighborIndex
    b: np.ndarray

    @property
    def kappa(self):
        return self.index.kappa

    @property
    def floor(self):
        return 1.0 / (2.0 * self.kappa)

    def predict_self(self):
        """Probabilities at the training points themselves."""
        return np.clip(self.index.vote(self.b), self.floor, 1.0)

    def predict(self, xq, yq):
        return np.clip(self.index.vote_at(xq, yq, self.b), self.floor, 1.0)


def fit_selection_prob(x, y, b, kappa):
    b = np.asarray(b, dtype=float).ravel()
    if not np.all(np.isin(b, (0.0, 1.0))):
        raise ValidationError("selection indicator must be binary")
    index = NeighborIndex(x, y, kappa)
    return SelectionModel(index=index, b=b)


# Posterior assignment probability --------------------------------------------

def noise_floor(y):
    """Variance floor keeping the posterior's scale parameter positive."""
    return max(1e-8 * float(np.var(np.asarray(y, dtype=float))), 1e-12)


def estimate_noise_var(y, z, e, mu_vals, tau_vals, p_vals, n_total, floor):
    """Inverse-selection-weighted residual variance of the outcome model.

    The residual is the partially linear one, ``y - mu(x) - (z - e(x)) tau(x)``,
    and the sum is normalized by the total sample size so that dividing by
    the true selection probability makes the estimate consistent for the
    noise variance.
    """
    resid = np.asarray(y, dtype=float) - mu_vals - (np.asarray(z, dtype=float) - e) * tau_vals
    p_vals = np.asarray(p_vals, dtype=float)
    return max(float(np.sum(resid**2 / p_vals)) / n_total, floor)


def posterior_e(y, mu_vals, tau_vals, nu2):
    """Posterior probability of treatment given covariates and outcome.

    Under the Gaussian outcome model with a half design this is exactly
    ``sigmoid((y - mu(x)) tau(x) / nu^2)``. Output lies strictly in (0, 1).
    """
    if not nu2 > 0.0:
        raise ValidationError("nu2 must be positive")
    return sigmoid((np.asarray(y, dtype=float) - mu_vals) * tau_vals / nu2)


def certainty(e_val):
    """How predictable an assignment is: 0 at e=1/2, 1 at e in {0, 1}."""
    return np.abs(2.0 * np.asarray(e_val, dtype=float) - 1.0)


@dataclass(frozen=True)
class NuisanceModel:
    """Bundle of fitted nuisances: outcome model, CATE model, noise variance."""

    mu: object
    tau: LinearModel
    nu2: float

    def __post_init__(self):
        if not self.nu2 > 0.0:
            raise ValidationError("nu2 must be positive")

    def mu_vals(self, x):
        return np.asarray(self.mu.predict(x), dtype=float).ravel()

    def tau_vals(self, x):
        return self.tau.predict(x)

    def e_vals(self, x, y):
        return posterior_e(y, self.mu_vals(x), self.tau_vals(x), self.nu2)

    def certainty_vals(self, x, y):
        return certainty(self.e_vals(x, y))


# Imputation-based CATE estimator ----------------------------------------------

def fit_bar_learner(x, y, e, nuisance_mask, z_nuis, mu_vals, e_hat_vals,
                    lam=1.0, ridge=0.0):
    """CATE estimator pooling observed and imputed scaled residuals.

    Nuisance-fold units contribute their observed scaled residual; every
    other unit contributes the marginalized residual built from the posterior
    ``e_hat_vals``. With ``lam=1`` under a half design the solution is the
    plain least-squares fit of the pooled residuals on the covariates:

        beta = (X'X)^{-1} (sum_I x_i r_i + sum_J x_j r_imputed_j)

    with an intercept column in X and ridge stabilization of the Gram matrix.
    ``lam`` rescales the imputed units' contribution; ``lam=0`` reduces to
    :func:`fit_rlearner_ols` on the nuisance fold alone.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mask = np.asarray(nuisance_mask, dtype=bool)
    if mask.sum() < 1:
        raise ValidationError("nuisance fold is empty")
    xd = _design(x)
    xd_i = xd[mask]
    xd_j = xd[~mask]
    r_i = scaled_residual(
        np.asarray(y)[mask], z_nuis, np.asarray(mu_vals)[mask], np.asarray(e)[mask]
    )
    r_j = marginalized_residual(
        np.asarray(y)[~mask], np.asarray(mu_vals)[~mask],
        np.asarray(e)[~mask], np.asarray(e_hat_vals)[~mask],
    )
    gram = xd_i.T @ xd_i + lam * (xd_j.T @ xd_j) + ridge * np.eye(xd.shape[1])
    rhs = xd_i.T @ r_i + lam * (xd_j.T @ r_j)
    return LinearModel(_solve_spd(gram, rhs, ridge))


def expected_beta_distance(x, y, nuisance_mask, mu_vals, c_vals, ridge=0.0):
    """Expected squared gap between the pooled estimator and the full-data one.

    Conditional on covariates and outcomes, with the true posterior used for
    imputation, the gap decomposes unit by unit over the held-out fold:

        4 * sum_j  x_j' (X'X)^{-2} x_j  *  (y_j - mu(x_j))^2  *  (1 - C_j^2)

    where X is the intercept-augmented design and C_j the certainty score.
    Perfectly certain units (C=1) cost nothing to hold out.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mask = np.asarray(nuisance_mask, dtype=bool)
    xd = _design(x)
    gram = xd.T @ xd + ridge * np.eye(xd.shape[1])
    held = ~mask
    if not np.any(held):
        return 0.0
    half = _solve_spd(gram, xd[held].T, ridge)
    lev = np.einsum("ji,ji->i", half, half)
    d2 = (np.asarray(y, dtype=float)[held] - np.asarray(mu_vals)[held]) ** 2
    c2 = np.asarray(c_vals, dtype=float)[held] ** 2
    return 4.0 * float(np.sum(lev * d2 * (1.0 - c2)))


def one_minus_c2_series(s, terms):
    """Partial sum of the alternating series for ``1 - C^2`` at signal-to-noise
    ratio ``s = |tau(x) (y - mu(x))| / nu^2``.

    The series ``4 * sum_t (-1)^{t+1} t exp(-t s)`` converges for s > 0; at
    s = 0 the terms do not decay, so tiny s returns the limiting value 1.
    """
    if s < 0.0:
        raise ValidationError("s must be nonnegative")
    if terms < 1:
        raise ValidationError("terms must be >= 1")
    if s < 1e-3:
        return 1.0
    t = np.arange(1, terms + 1, dtype=float)
    return 4.0 * float(np.sum((-1.0) ** (t + 1.0) * t * np.exp(-t * s)))
