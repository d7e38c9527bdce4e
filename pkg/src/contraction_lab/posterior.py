"""Posterior computations: potential, conjugate Gaussian form, exceedance.

Two independent routes to the same posterior are kept side by side: the
closed-form Gaussian conditioning (valid for Gaussian priors) and a
self-normalized importance sampler driven only by the data-misfit potential,
which works for any prior that can be sampled. Their agreement on exceedance
probabilities is the module's oracle-equivalence property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve

from .errors import NumericalError, ParameterError
from .rng import substream
from .spectral import InverseProblem, DataSample, forward_apply, _as_vector


def cholesky_with_jitter(mat: np.ndarray, max_doublings: int = 3) -> np.ndarray:
    """Lower Cholesky factor, escalating a scaled-identity jitter on failure.

    Starts at 1e-12 * ||mat||_F and doubles at most ``max_doublings`` times.
    """
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * np.linalg.norm(mat)
    eye = np.eye(mat.shape[0])
    for _ in range(max_doublings + 1):
        try:
            return np.linalg.cholesky(mat + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise NumericalError("Cholesky failed after jitter escalation",
                         condition_number=float(np.linalg.cond(mat)))


@dataclass(frozen=True, eq=False)
class PosteriorGaussian:
    """Gaussian posterior in phi-coordinates with a lower-triangular
    covariance factor (covariance = factor @ factor.T)."""

    mean: np.ndarray
    cov_factor: np.ndarray
    n_level: float

    def __post_init__(self):
        if self.n_level <= 0:
            raise ParameterError("n_level must be positive")
        if np.any(np.diag(self.cov_factor) <= 0):
            raise ParameterError("covariance factor must have positive diagonal")

    @property
    def n_dim(self) -> int:
        return self.mean.shape[0]

    def covariance(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Posterior draws as columns of an (n_dim, count) array."""
        z = rng.standard_normal((self.n_dim, count))
        return self.mean[:, None] + self.cov_factor @ z


def potential_phi(problem: InverseProblem, y: np.ndarray, u: np.ndarray, n_level: float) -> float:
    """Data-misfit potential ``(n/2) <Gu, Gu>_zeta - n <y, Gu>_zeta``."""
    if n_level <= 0:
        raise ParameterError("n_level must be positive")
    y = _as_vector(y, problem.n_dim, "y")
    gu = problem.noise_whiten(forward_apply(problem, u, "phi"))
    wy = problem.noise_whiten(y)
    value = 0.5 * n_level * float(gu @ gu) - n_level * float(wy @ gu)
    if not np.isfinite(value):
        vals = problem.noise.variances
        raise NumericalError("noise whitening produced non-finite potential",
                             condition_number=float(vals.max() / vals.min()))
    return value


def _potential_batch(problem: InverseProblem, w_y: np.ndarray, u_rows: np.ndarray,
                     n_level: float) -> np.ndarray:
    """Potential of each row of ``u_rows`` against pre-whitened data ``w_y``."""
    v = problem.whitened_forward @ u_rows.T
    return 0.5 * n_level * np.einsum("ij,ij->j", v, v) - n_level * (w_y @ v)


def posterior_precision(problem: InverseProblem, n_level: float) -> np.ndarray:
    """Posterior precision: prior precision plus ``n`` times the whitened Gram."""
    return np.diag(1.0 / problem.prior.variances) + n_level * problem.whitened_gram


def _covariance_factor(problem: InverseProblem, n_level: float) -> tuple[np.ndarray, np.ndarray]:
    """(Cholesky of precision, Cholesky of covariance) for the given n."""
    p_chol = cholesky_with_jitter(posterior_precision(problem, n_level))
    cov = cho_solve((p_chol, True), np.eye(problem.n_dim))
    cov = 0.5 * (cov + cov.T)
    return p_chol, cholesky_with_jitter(cov)


def _posterior_mean(problem: InverseProblem, p_chol: np.ndarray, y: np.ndarray,
                    n_level: float) -> np.ndarray:
    rhs = n_level * (problem.whitened_forward.T @ problem.noise_whiten(y))
    return cho_solve((p_chol, True), rhs)


def conjugate_posterior(problem: InverseProblem, data: DataSample) -> PosteriorGaussian:
    """Closed-form Gaussian posterior for the problem's Gaussian prior."""
    y = _as_vector(data.y, problem.n_dim, "y")
    p_chol, cov_chol = _covariance_factor(problem, data.n_level)
    mean = _posterior_mean(problem, p_chol, y, data.n_level)
    return PosteriorGaussian(mean=mean, cov_factor=cov_chol, n_level=data.n_level)


# ---------------------------------------------------------------------------
# Exceedance probabilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExceedanceEstimate:
    """Monte Carlo estimate of the posterior mass outside a ball.

    ``ess`` is set on the importance-sampled route; its standard error is the
    binomial error at the effective sample size. ``log_normalizer`` records
    the log of the estimated normalizing constant, which must be finite.
    """

    value: float
    std_error: float
    mc_count: int
    xi: float
    ess: float | None = None
    log_normalizer: float | None = None
    degenerate: bool = False

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ParameterError(f"exceedance estimate {self.value} outside [0, 1]")
        effective = self.ess if self.ess is not None else float(self.mc_count)
        if self.std_error > 0.5 / math.sqrt(effective) + 1e-12:
            raise ParameterError("standard error exceeds the binomial bound")


def _binomial_se(p: float, count: float) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / count)


def posterior_exceedance(post: PosteriorGaussian, u0: np.ndarray, xi: float,
                         mc: int, seed: int) -> ExceedanceEstimate:
    """Probability that a posterior draw lands farther than ``xi`` from ``u0``."""
    return posterior_exceedance_grid(post, u0, [xi], mc, seed)[0]


def posterior_exceedance_grid(post: PosteriorGaussian, u0: np.ndarray, xis,
                              mc: int, seed: int) -> list[ExceedanceEstimate]:
    """Exceedance at several radii from one shared sample batch.

    Sharing the batch makes the estimates exactly non-increasing in xi.
    """
    if mc < 100:
        raise ParameterError("mc must be >= 100")
    u0 = _as_vector(u0, post.n_dim, "u0")
    rng = substream(seed, "exceedance")
    z = rng.standard_normal((post.n_dim, mc))
    dev = (post.mean - u0)[:, None] + post.cov_factor @ z
    dist = np.linalg.norm(dev, axis=0)
    out = []
    for xi in xis:
        if xi < 0:
            raise ParameterError("radius must be nonnegative")
        p = float(np.mean(dist > xi))
        out.append(ExceedanceEstimate(value=p, std_error=_binomial_se(p, mc),
                                      mc_count=mc, xi=float(xi)))
    return out


def weighted_posterior_exceedance(problem: InverseProblem, data: DataSample,
                                  u0: np.ndarray, xi: float,
                                  prior_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
                                  mc: int = 2000, seed: int = 0) -> ExceedanceEstimate:
    """Self-normalized prior-sampling estimate of the posterior exceedance.

    Draws come from the prior (or any supplied sampler); each is weighted by
    ``exp(-potential)``. The estimated normalizer is checked to be strictly
    positive and finite, and an effective sample size below 10 marks the
    result as degenerate.
    """
    if mc < 1000:
        raise ParameterError("mc must be >= 1000 for the weighted estimator")
    if xi < 0:
        raise ParameterError("radius must be nonnegative")
    u0 = _as_vector(u0, problem.n_dim, "u0")
    rng = substream(seed, "weighted-exceedance")
    if prior_sampler is None:
        draws = rng.standard_normal((mc, problem.n_dim)) * np.sqrt(problem.prior.variances)[None, :]
    else:
        draws = np.asarray(prior_sampler(rng, mc), dtype=float)
        if draws.shape != (mc, problem.n_dim):
            raise ParameterError("prior_sampler must return an (mc, n_dim) array")

    w_y = problem.noise_whiten(data.y)
    log_w = -_potential_batch(problem, w_y, draws, data.n_level)
    if not np.all(np.isfinite(log_w)):
        raise NumericalError("non-finite importance log-weights")
    shift = log_w.max()
    w = np.exp(log_w - shift)
    total = float(w.sum())
    log_normalizer = shift + math.log(total / mc)
    if not np.isfinite(log_normalizer):
        raise NumericalError("importance-sampling normalizer is not finite")

    indic = np.linalg.norm(draws - u0[None, :], axis=1) > xi
    value = float(w[indic].sum() / total)
    value = min(max(value, 0.0), 1.0)
    ess = total**2 / float(w @ w)
    return ExceedanceEstimate(value=value, std_error=_binomial_se(value, ess),
                              mc_count=mc, xi=float(xi), ess=ess,
                              log_normalizer=log_normalizer, degenerate=ess < 10.0)
