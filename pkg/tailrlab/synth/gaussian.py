"""
Fitting one Gaussian to a two-component mixture under forward KL or total variation distance.

Divergences are computed by quadrature on a fixed grid and minimized by gradient descent with
backtracking on (mu, log sigma). The forward KL fit spreads mass over the gap between the
modes; the total variation fit settles on one mode.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, confloat, conint, validator
from scipy.special import xlogy
from scipy.stats import norm

from tailrlab import autodiff as ad
from tailrlab.serialization import CamelCaseAttributesMixin

logger = logging.getLogger(__name__)

OBJECTIVES = ('kld', 'tvd')
CURVE_HEADER = ('x', 'mixture', 'kld_fit', 'tvd_fit')
FIT_HEADER = ('objective', 'mu', 'sigma', 'divergence', 'iterations', 'converged', 'void_low', 'void_high',
              'void_mass')
_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)


class MixtureSpec(BaseModel):
    weights: Tuple[confloat(gt=0.0), confloat(gt=0.0)] = (0.8, 0.2)
    means: Tuple[float, float] = (-2.0, 3.0)
    stds: Tuple[confloat(gt=0.0), confloat(gt=0.0)] = (0.7, 0.7)

    @validator('weights')
    def weights_sum_to_one(cls, value):
        if abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f'mixture weights must sum to 1, got {sum(value)}')
        return value

    class Config:
        extra = 'forbid'

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def variance(self) -> float:
        second = sum(w * (s ** 2 + m ** 2) for w, m, s in zip(self.weights, self.means, self.stds))
        return float(second - self.mean ** 2)

    def density(self, x: np.ndarray) -> np.ndarray:
        return sum(w * norm.pdf(x, m, s) for w, m, s in zip(self.weights, self.means, self.stds))


class GridSpec(BaseModel):
    """
    Quadrature grid: points evenly spaced over the union of mean +- span_sigmas * std of the
    two components.
    """
    points: conint(ge=3) = 4001
    span_sigmas: confloat(gt=0.0) = 8.0

    class Config:
        extra = 'forbid'

    def build(self, mixture: MixtureSpec) -> np.ndarray:
        low = min(m - self.span_sigmas * s for m, s in zip(mixture.means, mixture.stds))
        high = max(m + self.span_sigmas * s for m, s in zip(mixture.means, mixture.stds))
        return np.linspace(low, high, self.points)


class DescentSpec(BaseModel):
    max_iterations: conint(ge=1) = 5000
    initial_step: confloat(gt=0.0) = 1.0
    shrink: confloat(gt=0.0, lt=1.0) = 0.5
    armijo: confloat(gt=0.0, lt=1.0) = 1e-4
    min_step: confloat(gt=0.0) = 1e-12
    gradient_tolerance: confloat(gt=0.0) = 1e-10

    class Config:
        extra = 'forbid'


class ToyGaussianConfig(BaseModel):
    mixture: MixtureSpec = MixtureSpec()
    grid: GridSpec = GridSpec()
    descent: DescentSpec = DescentSpec()
    void_threshold: confloat(gt=0.0, lt=1.0) = 0.1

    class Config:
        extra = 'forbid'


class GaussianFit(CamelCaseAttributesMixin):
    def __init__(self,
                 objective: str,
                 mu: float,
                 sigma: float,
                 divergence: float,
                 iterations: int,
                 converged: bool,
                 void_interval: Optional[Tuple[float, float]],
                 void_mass: float):
        self.objective = objective
        self.mu = mu
        self.sigma = sigma
        self.divergence = divergence
        self.iterations = iterations
        self.converged = converged
        self.void_interval = void_interval
        self.void_mass = void_mass

    def row(self) -> Tuple:
        low, high = self.void_interval if self.void_interval else ('', '')
        return (self.objective, self.mu, self.sigma, self.divergence, self.iterations, self.converged,
                low, high, self.void_mass)

    def density(self, x: np.ndarray) -> np.ndarray:
        return norm.pdf(x, self.mu, self.sigma)

    def __repr__(self):
        return (f'GaussianFit({self.objective}: mu={self.mu:.6f}, sigma={self.sigma:.6f}, '
                f'void_mass={self.void_mass:.4g}, converged={self.converged})')


def quadrature_tvd(p: np.ndarray, q: np.ndarray, dx: float) -> float:
    return float(0.5 * np.abs(p - q).sum() * dx)


def quadrature_kld(p: np.ndarray, q: np.ndarray, dx: float) -> float:
    return float((xlogy(p, p) - xlogy(p, q)).sum() * dx)


def void_interval(mixture: MixtureSpec, grid: np.ndarray, threshold: float = 0.1) -> Optional[Tuple[float, float]]:
    """
    The span of grid points between the two component means where the mixture density is
    below threshold times its maximum, or None when there are none.
    """
    density = mixture.density(grid)
    low, high = sorted(mixture.means)
    inside = (grid >= low) & (grid <= high) & (density < threshold * density.max())
    if not inside.any():
        return None
    points = grid[inside]
    return float(points.min()), float(points.max())


def _log_density(x: ad.Node, mu: ad.Node, log_sigma: ad.Node) -> ad.Node:
    z = ad.div(ad.sub(x, mu), ad.exp(log_sigma))
    return ad.sub(ad.sub(ad.mul(-0.5, ad.mul(z, z)), log_sigma), _HALF_LOG_TWO_PI)


def _objective(kind: str, grid: np.ndarray, target: np.ndarray, dx: float):
    x, p = ad.constant(grid), ad.constant(target)

    def build(mu: ad.Node, log_sigma: ad.Node) -> ad.Node:
        log_q = _log_density(x, mu, log_sigma)
        if kind == 'kld':
            # cross entropy; differs from KL(p || q) by the constant entropy of p
            return ad.mul(-dx, ad.total(ad.mul(p, log_q)))
        return ad.mul(dx, ad.total(ad.maximum(ad.sub(p, ad.exp(log_q)), 0.0)))

    return build


def _value_and_gradient(build, theta: np.ndarray) -> Tuple[float, np.ndarray]:
    mu, log_sigma = ad.parameter([theta[0]]), ad.parameter([theta[1]])
    loss = build(mu, log_sigma)
    gradient = ad.gradients(loss, [mu, log_sigma])
    return loss.data.item(), np.array([gradient[0][0], gradient[1][0]])


def _value(build, theta: np.ndarray) -> float:
    return build(ad.constant([theta[0]]), ad.constant([theta[1]])).data.item()


def descend(build, start: np.ndarray, spec: DescentSpec) -> Tuple[np.ndarray, float, int, bool]:
    """
    Gradient descent with Armijo backtracking from start.

    Stops when the gradient norm is below tolerance or when no step above min_step gives a
    sufficient decrease; only running out of iterations counts as not converged.

    :return: Final parameters, final loss, iterations used and the convergence flag
    """
    theta = np.array(start, dtype=np.float64)
    loss, gradient = _value_and_gradient(build, theta)
    for iteration in range(1, spec.max_iterations + 1):
        squared = float(gradient @ gradient)
        if np.sqrt(squared) < spec.gradient_tolerance:
            return theta, loss, iteration - 1, True
        step = spec.initial_step
        while step >= spec.min_step:
            candidate = theta - step * gradient
            if _value(build, candidate) <= loss - spec.armijo * step * squared:
                break
            step *= spec.shrink
        else:
            return theta, loss, iteration - 1, True
        theta = candidate
        loss, gradient = _value_and_gradient(build, theta)
    return theta, loss, spec.max_iterations, False


def starting_points(mixture: MixtureSpec) -> List[np.ndarray]:
    """
    Each component and the moment-matched Gaussian, as (mu, log sigma).
    """
    starts = [np.array([m, np.log(s)]) for m, s in zip(mixture.means, mixture.stds)]
    starts.append(np.array([mixture.mean, 0.5 * np.log(mixture.variance)]))
    return starts


def toy_gaussian_fit(mixture: MixtureSpec,
                     objective: str,
                     grid: GridSpec = GridSpec(),
                     descent: DescentSpec = DescentSpec(),
                     void_threshold: float = 0.1) -> GaussianFit:
    """
    Fits a single Gaussian to the mixture by minimizing the chosen divergence from every
    starting point and keeping the best result.

    :param mixture: The two-component target
    :param objective: 'kld' for forward KL(p || q) or 'tvd' for total variation
    :param grid: Quadrature grid
    :param descent: Descent budget and line-search constants
    :param void_threshold: Fraction of the peak mixture density below which the gap between the
        modes counts as void
    :return: The fit, its final divergence and the fitted mass over the void interval
    """
    if objective not in OBJECTIVES:
        raise ValueError(f'Unknown objective {objective!r}; expected one of {OBJECTIVES}')
    points = grid.build(mixture)
    dx = float(points[1] - points[0])
    target = mixture.density(points)
    build = _objective(objective, points, target, dx)

    results = [descend(build, start, descent) for start in starting_points(mixture)]
    theta, _, iterations, converged = min(results, key=lambda result: result[1])
    mu, sigma = float(theta[0]), float(np.exp(theta[1]))
    if not converged:
        logger.warning('The %s fit did not converge within %d iterations', objective, descent.max_iterations)

    fitted = norm.pdf(points, mu, sigma)
    divergence = quadrature_kld(target, fitted, dx) if objective == 'kld' else quadrature_tvd(target, fitted, dx)
    interval = void_interval(mixture, points, void_threshold)
    void_mass = float(norm.cdf(interval[1], mu, sigma) - norm.cdf(interval[0], mu, sigma)) if interval else 0.0
    fit = GaussianFit(objective, mu, sigma, divergence, iterations, converged, interval, void_mass)
    logger.info('%r', fit)
    return fit


def density_curves(mixture: MixtureSpec, grid: GridSpec, kld_fit: GaussianFit, tvd_fit: GaussianFit) -> List[Tuple]:
    points = grid.build(mixture)
    return list(zip(points.tolist(), mixture.density(points).tolist(), kld_fit.density(points).tolist(),
                    tvd_fit.density(points).tolist()))
