"""Randomization tests: statistics, Monte-Carlo and exact reference
distributions, a Gaussian approximation of the marginalized p-value, and the
threshold solution of the soft inclusion problem.

Both test statistics are linear in the assignment vector, so a draw of the
reference distribution is a single dot product. The Monte-Carlo p-value uses
the add-one correction ``(1 + #{t : T_t >= T_obs}) / (M + 1)``, which is
finite-sample valid for any number of draws because the observed and
randomized assignments are exchangeable; ties count toward the numerator.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .nuisance import NuisanceModel, certainty, posterior_e

STAT_DM = "difference-in-means"
STAT_AIPW = "aipw"


@dataclass(frozen=True)
class TestStatisticSpec:
    """Which statistic to use, plus fitted nuisances when required."""

    __test__ = False  # looks like a pytest class to collectors; it is not

    kind: str
    nuisances: NuisanceModel | None = None

    def __post_init__(self):
        if self.kind not in (STAT_DM, STAT_AIPW):
            raise ValidationError(f"unknown statistic kind {self.kind!r}")
        if self.kind == STAT_AIPW and self.nuisances is None:
            raise ValidationError("the AIPW statistic requires a nuisance model")


@dataclass(frozen=True)
class PValue:
    value: float
    draws: int
    observed: float
    subgroup: int
    flag: str | None = None

    def __post_init__(self):
        if not 0.0 < self.value <= 1.0:
            raise ValidationError("p-value must lie in (0, 1]")


def t_dm(y, z):
    """Difference in means, scaled by 2/|S|: mean treated minus mean control
    under a balanced half design."""
    y = np.asarray(y, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if y.size == 0:
        raise ValidationError("empty subgroup")
    return 2.0 / y.size * float(np.sum(z * y) - np.sum((1.0 - z) * y))


def phi_aipw(y, z, e, mu_vals, tau_vals):
    """Augmented inverse-probability-weighted effect contribution per unit.

    Arm-specific outcome models are reconstructed from the marginal outcome
    model and the CATE: ``mu_z(x) = mu(x) + (z - e(x)) tau(x)``.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    mu1 = mu_vals + (1.0 - e) * tau_vals
    mu0 = mu_vals - e * tau_vals
    return z / e * (y - mu1) - (1.0 - z) / (1.0 - e) * (y - mu0) + tau_vals


def _linear_coeffs(stat, dataset, subgroup):
    """Coefficients (w, c) with T(z) = w @ z + c on the subgroup."""
    idx = np.asarray(subgroup, dtype=int)
    m = idx.size
    y = dataset.y[idx]
    e = dataset.e[idx]
    if stat.kind == STAT_DM:
        return 4.0 * y / m, -2.0 * float(np.sum(y)) / m
    nuis = stat.nuisances
    x = dataset.x[idx]
    mu_vals = nuis.mu_vals(x)
    tau_vals = nuis.tau_vals(x)
    mu1 = mu_vals + (1.0 - e) * tau_vals
    mu0 = mu_vals - e * tau_vals
    w = ((y - mu1) / e + (y - mu0) / (1.0 - e)) / m
    c = float(np.sum(tau_vals - (y - mu0) / (1.0 - e))) / m
    return w, c


def mc_pvalue(stat, dataset, subgroup, m_draws, rng, subgroup_id=0):
    """Monte-Carlo randomization p-value on one subgroup's inference fold.

    Draws ``m_draws`` i.i.d. assignment vectors from the design
    (independent Bernoulli with the stored per-unit probabilities),
    recomputes the statistic on each, and applies the add-one correction.
    An empty fold yields p = 1 with a flag rather than an error.
    """
    idx = np.asarray(subgroup, dtype=int)
    if m_draws < 1:
        raise ValidationError("m_draws must be >= 1")
    if idx.size == 0:
        return PValue(1.0, m_draws, float("nan"), subgroup_id,
                      flag="empty-inference-fold")
    w, c = _linear_coeffs(stat, dataset, idx)
    z_obs = dataset.z[idx]
    if np.any(np.isnan(z_obs)):
        raise ValidationError("masked assignment in the inference fold")
    e = dataset.e[idx]
    draws = (rng.random((m_draws, idx.size)) < e).astype(float)
    # The observed statistic goes through the same matrix product as the
    # reference draws, so a draw replicating the observed assignment ties
    # exactly (ties carry real probability mass on small folds).
    t_all = np.vstack([draws, z_obs[None, :]]) @ w + c
    t_ref, t_obs = t_all[:-1], float(t_all[-1])
    count = int(np.sum(t_ref >= t_obs))
    return PValue((1.0 + count) / (m_draws + 1.0), m_draws, t_obs, subgroup_id)


def exact_pvalue(stat, dataset, subgroup, subgroup_id=0):
    """Exact randomization p-value by enumerating all 2^m assignments.

    Each assignment vector is weighted by its design probability; under the
    half design this is the plain proportion of assignments whose statistic
    is at least the observed one. No add-one correction (the reference
    distribution is complete).
    """
    idx = np.asarray(subgroup, dtype=int)
    m = idx.size
    if m == 0:
        return PValue(1.0, 0, float("nan"), subgroup_id, flag="empty-inference-fold")
    if m > 20:
        raise ValidationError("subgroup too large for exact enumeration")
    w, c = _linear_coeffs(stat, dataset, idx)
    z_obs = dataset.z[idx]
    if np.any(np.isnan(z_obs)):
        raise ValidationError("masked assignment in the inference fold")
    codes = np.arange(1 << m, dtype=np.int64)
    t_ref = np.full(codes.size, c)
    e = dataset.e[idx]
    half = bool(np.all(e == 0.5))
    prob = None if half else np.ones(codes.size)
    for j in range(m):
        bit = (codes >> j) & 1
        t_ref += np.where(bit == 1, w[j], 0.0)
        if prob is not None:
            prob = prob * np.where(bit == 1, e[j], 1.0 - e[j])
    # The observed assignment is one of the enumerated codes; reading its
    # statistic off the same table makes the self-tie exact.
    obs_code = int(sum(1 << j for j in range(m) if z_obs[j] == 1.0))
    t_obs = float(t_ref[obs_code])
    hits = t_ref >= t_obs
    if half:
        value = int(np.sum(hits)) / float(1 << m)
    else:
        value = float(np.sum(prob[hits]))
    return PValue(value, 1 << m, t_obs, subgroup_id)


def gaussian_approx_pvalue(y, mu_vals, tau_vals, nu2, delta_clip=1e-6):
    """Normal approximation of the assignment-marginalized p-value.

    Diagnostic only. The mean gap and variance sum of the observed and
    randomized statistics in their Gaussian limits are

        mean = 2 * sum_j sign(tau_j) |y_j - mu_j| C_j
        var  = 4 * sum_j (y_j - mu_j)^2 (2 - C_j^2)

    and the p-value is ``1 - Phi(mean / sqrt(var))``. Posterior
    probabilities are clipped to [delta, 1 - delta] before scoring.
    """
    y = np.asarray(y, dtype=float).ravel()
    mu_vals = np.asarray(mu_vals, dtype=float).ravel()
    tau_vals = np.asarray(tau_vals, dtype=float).ravel()
    e_vals = np.clip(posterior_e(y, mu_vals, tau_vals, nu2), delta_clip, 1.0 - delta_clip)
    c = certainty(e_vals)
    d = y - mu_vals
    mean = 2.0 * float(np.sum(np.sign(tau_vals) * np.abs(d) * c))
    var = 4.0 * float(np.sum(d**2 * (2.0 - c**2)))
    if var <= 0.0:
        if mean == 0.0:
            return 0.5
        return 0.0 if mean > 0.0 else 1.0
    return float(1.0 - norm.cdf(mean / np.sqrt(var)))


def soft_inclusion_items(y, mu_vals, tau_vals, nu2):
    """Per-unit gain and cost of soft inclusion in the inference fold.

    The gain is the unit's contribution to the mean gap of the Gaussian
    limit, the cost its contribution to the variance sum.
    """
    y = np.asarray(y, dtype=float).ravel()
    mu_vals = np.asarray(mu_vals, dtype=float).ravel()
    tau_vals = np.asarray(tau_vals, dtype=float).ravel()
    c = certainty(posterior_e(y, mu_vals, tau_vals, nu2))
    d = y - mu_vals
    a = np.sign(tau_vals) * np.abs(d) * c
    b = d**2 * (2.0 - c**2)
    return a, b


def optimal_soft_inclusion(y, mu_vals, tau_vals, nu2, budget):
    """Threshold solution of the soft inclusion problem.

    Maximizes ``sum_j xi_j a_j`` subject to ``sum_j xi_j b_j <= budget`` and
    ``xi in [0, 1]^m`` by greedily filling positive-gain items in decreasing
    gain/cost ratio (ties toward the lower index), with at most one
    fractional entry at the budget boundary. Units with nonpositive gain,
    in particular every unit with ``tau(x) <= 0``, are excluded outright.
    """
    if not budget > 0.0:
        raise ValidationError("budget must be positive")
    a, b = soft_inclusion_items(y, mu_vals, tau_vals, nu2)
    xi = np.zeros(a.size)
    pos = np.flatnonzero(a > 0.0)
    if pos.size == 0:
        return xi
    ratio = a[pos] / b[pos]
    order = pos[np.lexsort((pos, -ratio))]
    remaining = float(budget)
    for j in order:
        if b[j] <= remaining:
            xi[j] = 1.0
            remaining -= b[j]
        else:
            xi[j] = remaining / b[j]
            break
    return xi
