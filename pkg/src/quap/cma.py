"""Covariance matrix adaptation evolution strategy with box clamping.

The engine minimises. Callers that maximise (the one-query attack) negate
their fitness before ranking. Recombination uses positive weights for the
better half of the population and negative ("active") weights for the rest,
with the standard default learning rates.

Typical use::

    params = default_params(n, popsize)
    state = initial_state(n, sigma0)
    for t in range(T):
        z = sample_population(state, params, bound, rng)
        f = [objective(zi) for zi in z]
        state = update(state, params, rank_population(z, f))
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NumericalDegeneracyError

EIGEN_FLOOR = 1e-14


@dataclass(frozen=True)
class CmaParams:
    dimension: int
    population_size: int
    parent_count: int
    weights: np.ndarray
    c_m: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    mu_eff: float
    chi_n: float

    @property
    def positive_weights(self):
        return self.weights[: self.parent_count]


def expected_normal_norm(n):
    """Series approximation of E||N(0, I_n)||."""
    return math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))


def default_params(dimension, population_size=None, active=True):
    """Standard strategy parameters for ``dimension`` and ``population_size``.

    ``population_size`` defaults to ``4 + floor(3 ln n)``. With ``active``
    false the weights beyond the parent count are zero.
    """
    n = int(dimension)
    if n < 1:
        raise DomainError("dimension must be at least 1")
    lam = 4 + int(3 * math.log(n)) if population_size is None else int(population_size)
    if lam < 2:
        raise DomainError("population_size must be at least 2")
    s = lam // 2
    raw = math.log((lam + 1) / 2.0) - np.log(np.arange(1, lam + 1))
    pos, neg = raw[:s], raw[s:]
    mu_eff = pos.sum() ** 2 / (pos**2).sum()

    alpha_cov = 2.0
    c_1 = alpha_cov / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(
        1.0 - c_1,
        alpha_cov * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + alpha_cov * mu_eff / 2.0),
    )
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)

    weights = np.zeros(lam)
    weights[:s] = pos / pos.sum()
    if active and len(neg) and np.any(neg < 0):
        neg_mask = neg < 0
        mu_eff_neg = neg[neg_mask].sum() ** 2 / (neg[neg_mask] ** 2).sum()
        alpha_mu = 1.0 + c_1 / c_mu if c_mu > 0 else np.inf
        alpha_mu_eff = 1.0 + 2.0 * mu_eff_neg / (mu_eff + 2.0)
        alpha_posdef = (1.0 - c_1 - c_mu) / (n * c_mu) if c_mu > 0 else np.inf
        scale = min(alpha_mu, alpha_mu_eff, alpha_posdef)
        # raw weights past the midpoint can be exactly zero for odd populations
        weights[s:] = np.where(neg < 0, scale * neg / np.abs(neg[neg_mask]).sum(), 0.0)

    return CmaParams(
        dimension=n,
        population_size=lam,
        parent_count=s,
        weights=weights,
        c_m=1.0,
        c_sigma=c_sigma,
        d_sigma=d_sigma,
        c_c=c_c,
        c_1=c_1,
        c_mu=c_mu,
        mu_eff=mu_eff,
        chi_n=expected_normal_norm(n),
    )


@dataclass(frozen=True)
class CmaState:
    mean: np.ndarray
    step_size: float
    covariance: np.ndarray
    path_sigma: np.ndarray
    path_c: np.ndarray
    generation: int = 0
    # eigendecomposition of ``covariance``, kept in sync by every constructor
    eigenvalues: np.ndarray = field(default=None, repr=False)
    eigenvectors: np.ndarray = field(default=None, repr=False)
    repairs: int = 0

    def __post_init__(self):
        if not self.step_size > 0 or not math.isfinite(self.step_size):
            raise NumericalDegeneracyError(f"step size {self.step_size} is not positive and finite")
        if self.eigenvalues is None or self.eigenvectors is None:
            vals, vecs = _eigh(self.covariance)
            object.__setattr__(self, "eigenvalues", vals)
            object.__setattr__(self, "eigenvectors", vecs)

    @property
    def dimension(self):
        return len(self.mean)

    def inv_sqrt_covariance(self):
        return (self.eigenvectors / np.sqrt(self.eigenvalues)) @ self.eigenvectors.T


def _eigh(matrix):
    if not np.all(np.isfinite(matrix)):
        raise NumericalDegeneracyError("covariance has non-finite entries", matrix)
    try:
        vals, vecs = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError(f"eigendecomposition failed: {exc}", matrix) from exc
    if vals.min() <= 0:
        raise NumericalDegeneracyError("covariance is not positive definite", matrix)
    return vals, vecs


def initial_state(dimension, step_size, mean=None):
    n = int(dimension)
    mean = np.zeros(n) if mean is None else np.array(mean, dtype=np.float64)
    if mean.shape != (n,):
        raise DomainError(f"mean must have shape ({n},)")
    return CmaState(
        mean=mean,
        step_size=float(step_size),
        covariance=np.eye(n),
        path_sigma=np.zeros(n),
        path_c=np.zeros(n),
        eigenvalues=np.ones(n),
        eigenvectors=np.eye(n),
    )


def sample_population(state, params, bound, rng, return_raw=False):
    """Draw ``population_size`` points from N(mean, sigma^2 C), clamped to +-bound.

    With ``return_raw`` the unclamped draws are returned as well, as
    ``(clamped, raw)``. Feeding the raw draws to :func:`update` while
    evaluating the clamped ones keeps the search distribution unbiased by
    the box; feeding the clamped ones is the literal alternative.
    """
    if bound <= 0:
        raise DomainError("bound must be positive")
    n = state.dimension
    normals = rng.standard_normal((params.population_size, n))
    scaled = (normals * np.sqrt(state.eigenvalues)) @ state.eigenvectors.T
    raw = state.mean + state.step_size * scaled
    clamped = np.clip(raw, -bound, bound)
    return (clamped, raw) if return_raw else clamped


@dataclass(frozen=True)
class RankedPopulation:
    """Samples and fitnesses ordered best first (lowest fitness first)."""

    samples: np.ndarray
    fitness: np.ndarray

    def __post_init__(self):
        if len(self.samples) != len(self.fitness):
            raise ValueError("samples and fitness differ in length")


def rank_population(samples, fitness, maximize=False):
    samples = np.asarray(samples, dtype=np.float64)
    fitness = np.asarray(fitness, dtype=np.float64)
    key = -fitness if maximize else fitness
    order = np.argsort(key, kind="stable")
    return RankedPopulation(samples[order], fitness[order])


def update(state, params, ranked):
    """One generation of mean, path, step-size and covariance adaptation.

    Only the order of ``ranked`` matters; fitness values are never read.
    """
    if len(ranked.samples) != params.population_size:
        raise DomainError(
            f"expected {params.population_size} ranked samples, got {len(ranked.samples)}"
        )
    n = state.dimension
    w = params.weights
    s = params.parent_count
    sigma = state.step_size

    y = (ranked.samples - state.mean) / sigma
    y_w = w[:s] @ y[:s]
    inv_sqrt = state.inv_sqrt_covariance()

    mean = state.mean + params.c_m * sigma * y_w

    cs = params.c_sigma
    path_sigma = (1.0 - cs) * state.path_sigma + math.sqrt(
        cs * (2.0 - cs) * params.mu_eff
    ) * (inv_sqrt @ y_w)
    step = sigma * math.exp((cs / params.d_sigma) * (np.linalg.norm(path_sigma) / params.chi_n - 1.0))

    cc = params.c_c
    path_c = (1.0 - cc) * state.path_c + math.sqrt(cc * (2.0 - cc) * params.mu_eff) * y_w

    w_circ = w.copy()
    neg = w < 0
    if np.any(neg):
        mahal = np.sum((y[neg] @ inv_sqrt) ** 2, axis=1)
        safe = np.where(mahal > 0, mahal, 1.0)
        w_circ[neg] = np.where(mahal > 0, w[neg] * n / safe, 0.0)

    cov = (1.0 - params.c_1 - params.c_mu * w.sum()) * state.covariance
    cov += params.c_1 * np.outer(path_c, path_c)
    cov += params.c_mu * (y.T * w_circ) @ y
    cov = 0.5 * (cov + cov.T)

    if not np.all(np.isfinite(cov)):
        raise NumericalDegeneracyError("covariance update produced non-finite entries", cov)
    try:
        vals, vecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError(f"eigendecomposition failed: {exc}", cov) from exc
    floor = EIGEN_FLOOR * np.trace(cov) / n
    repairs = state.repairs
    if vals.min() < floor:
        vals = np.maximum(vals, floor)
        cov = (vecs * vals) @ vecs.T
        cov = 0.5 * (cov + cov.T)
        repairs += 1

    return replace(
        state,
        mean=mean,
        step_size=step,
        covariance=cov,
        path_sigma=path_sigma,
        path_c=path_c,
        generation=state.generation + 1,
        eigenvalues=vals,
        eigenvectors=vecs,
        repairs=repairs,
    )


def trace_record(state, ranked, repaired):
    return {
        "generation": state.generation,
        "sigma": state.step_size,
        "best_fitness": float(ranked.fitness[0]),
        "median_fitness": float(np.median(ranked.fitness)),
        "repair": bool(repaired),
    }


def run_cma(
    objective,
    params,
    bound,
    max_iterations,
    rng,
    sigma0=None,
    mean=None,
    target=None,
    trace=None,
    update_on="raw",
):
    """Minimise ``objective`` over the box [-bound, bound]^n.

    Returns the best point ever evaluated and its fitness. ``trace``, when
    given, is a writable text stream that receives one JSON record per
    generation. ``target`` stops the run early once reached. ``update_on``
    selects whether the distribution learns from the raw draws ("raw") or
    from the clamped points that were evaluated ("clamped").
    """
    if update_on not in ("raw", "clamped"):
        raise DomainError("update_on must be 'raw' or 'clamped'")
    if max_iterations <= 0:
        raise DomainError("max_iterations must be positive")
    sigma0 = 0.6 * bound if sigma0 is None else sigma0
    state = initial_state(params.dimension, sigma0, mean)
    best_x, best_f = None, np.inf
    for _ in range(max_iterations):
        z, raw = sample_population(state, params, bound, rng, return_raw=True)
        f = np.array([objective(zi) for zi in z], dtype=np.float64)
        j = int(np.argmin(f))
        if f[j] < best_f or best_x is None:
            best_x, best_f = z[j].copy(), float(f[j])
        ranked = rank_population(raw if update_on == "raw" else z, f)
        before = state.repairs
        state = update(state, params, ranked)
        if trace is not None:
            trace.write(json.dumps(trace_record(state, ranked, state.repairs > before)) + "\n")
        if target is not None and best_f <= target:
            break
    return best_x, best_f
