"""Experiments built on the priors: shrinkage profiles, normal-means risk,
the sparsity-driven rate, and the Student-t degrees-of-freedom simulation.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as _integrate
from scipy import optimize, special

from .core import RATE_BRACKET, prior_on_distance_scale
from .errors import DomainError, FeasibilityError, NumericalError
from .univariate import student_t_distance_function

# ---------------------------------------------------------------------------
# shrinkage
# ---------------------------------------------------------------------------


def exponential_sigma_density(lam: float) -> Callable:
    """``lam exp(-lam sigma)``: the PC prior for a standard deviation."""
    if not lam > 0:
        raise DomainError(f"rate must be positive, got {lam}")
    return lambda s: lam * np.exp(-lam * np.asarray(s, dtype=float))


def half_cauchy_sigma_density(scale: float = 1.0) -> Callable:
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    return lambda s: 2.0 / (math.pi * scale * (1.0 + (np.asarray(s, dtype=float) / scale) ** 2))


def shrinkage_density(prior_d: Callable, kappa):
    """Density of ``kappa = 1 / (1 + sigma^2)`` given a density on ``sigma``.

    ``pi_kappa(kappa) = pi_sigma(sqrt(1/kappa - 1)) / (2 sqrt(kappa^3 (1 - kappa)))``.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa <= 0) or np.any(kappa >= 1):
        raise DomainError("kappa must lie in (0, 1)")
    sigma = np.sqrt((1.0 - kappa) / kappa)
    out = prior_d(sigma) / (2.0 * np.sqrt(kappa ** 3 * (1.0 - kappa)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ShrinkagePrior:
    sigma_density: Callable

    def density(self, kappa):
        return shrinkage_density(self.sigma_density, kappa)

    def total_mass(self) -> float:
        """Mass of ``pi_kappa`` on (0, 1), computed on the ``sigma`` scale."""
        val, _ = _integrate.quad(lambda k: self.density(k), 0.0, 0.5, limit=200)
        val2, _ = _integrate.quad(lambda k: self.density(k), 0.5, 1.0, limit=200)
        return val + val2


# ---------------------------------------------------------------------------
# normal means
# ---------------------------------------------------------------------------


def _posterior_shrinkage(prior_d: Callable, S: float, p: int) -> float:
    """``E(kappa | y)`` for ``y | sigma ~ N(0, (1 + sigma^2) I_p)``, ``S = |y|^2``."""

    def log_w(s):
        v = 1.0 + s * s
        with np.errstate(divide="ignore"):
            return np.log(prior_d(s)) - 0.5 * p * np.log(v) - 0.5 * S / v

    peak = math.sqrt(max(S / p - 1.0, 0.0))
    grid = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 121), [peak]])
    shift = float(np.max(log_w(grid)))

    def w(s):
        return math.exp(float(log_w(s)) - shift)

    def wk(s):
        return w(s) / (1.0 + s * s)

    cuts = sorted({0.0, peak, 2.0 * peak + 1.0})
    num = den = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", _integrate.IntegrationWarning)
        try:
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b > a:
                    den += _integrate.quad(w, a, b, epsabs=0.0, epsrel=1e-10, limit=200)[0]
                    num += _integrate.quad(wk, a, b, epsabs=0.0, epsrel=1e-10, limit=200)[0]
            den += _integrate.quad(w, cuts[-1], math.inf, epsabs=0.0, epsrel=1e-10, limit=200)[0]
            num += _integrate.quad(wk, cuts[-1], math.inf, epsabs=0.0, epsrel=1e-10, limit=200)[0]
        except _integrate.IntegrationWarning as exc:
            raise NumericalError(f"posterior quadrature failed for |y|^2={S:.6g}, p={p}: {exc}") from exc
    if not (den > 0 and math.isfinite(num)):
        raise NumericalError(f"degenerate posterior over sigma for |y|^2={S:.6g}, p={p}")
    return num / den


def posterior_mean(prior_d: Callable, y) -> np.ndarray:
    """``E(x | y) = y (1 - E(kappa | y))`` under ``x_i | sigma ~ N(0, sigma^2)``."""
    y = np.asarray(y, dtype=float)
    return y * (1.0 - _posterior_shrinkage(prior_d, float(y @ y), y.size))


def _draws(x0_norm, p, replicates, rng):
    if p < 1:
        raise DomainError("dimension must be at least 1")
    if replicates < 100:
        raise DomainError("at least 100 replicates are required")
    x0 = np.zeros(p)
    x0[0] = x0_norm
    return x0, x0 + rng.standard_normal((replicates, p))


def normal_means_risk(prior_d: Callable, x0_norm: float, p: int, replicates: int,
                      rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo risk ``E|x0 - E(x | y)|^2`` and its standard error.

    ``x0`` points along the first axis; by spherical symmetry only its norm matters.
    """
    x0, ys = _draws(x0_norm, p, replicates, rng)
    loss = np.array([np.sum((posterior_mean(prior_d, y) - x0) ** 2) for y in ys])
    return float(loss.mean()), float(loss.std(ddof=1) / math.sqrt(replicates))


def identity_risk(x0_norm: float, p: int, replicates: int, rng) -> tuple[float, float]:
    """Risk of ``delta(y) = y``; its exact value is ``p``."""
    x0, ys = _draws(x0_norm, p, replicates, rng)
    loss = np.sum((ys - x0) ** 2, axis=1)
    return float(loss.mean()), float(loss.std(ddof=1) / math.sqrt(replicates))


@dataclass(frozen=True)
class RiskCurve:
    label: str
    norms: np.ndarray
    risk: np.ndarray
    se: np.ndarray
    p: int
    replicates: int


def risk_curve(prior_d: Optional[Callable], norms: Sequence[float], p: int, replicates: int,
               seed: int, label: str = "") -> RiskCurve:
    """Risk at each norm; each norm uses its own substream of ``seed``.

    ``prior_d=None`` gives the identity estimator.
    """
    streams = np.random.SeedSequence(seed).spawn(len(norms))
    risk, se = [], []
    for nrm, ss in zip(norms, streams):
        rng = np.random.default_rng(ss)
        r, e = identity_risk(nrm, p, replicates, rng) if prior_d is None else \
            normal_means_risk(prior_d, nrm, p, replicates, rng)
        risk.append(r)
        se.append(e)
    return RiskCurve(label, np.asarray(norms, dtype=float), np.array(risk), np.array(se), p, replicates)


# ---------------------------------------------------------------------------
# sparsity-driven rate
# ---------------------------------------------------------------------------

TAIL_FAMILIES = ("exponential", "half_cauchy")


def exceedance_probability(c: float, family: str) -> float:
    """``Prob(|beta| > delta)`` for ``beta | sigma ~ N(0, sigma^2)``, ``sigma = S / lam``, ``c = lam delta``.

    The inner probability is ``erfc(c / (S sqrt 2))``; the outer expectation
    over ``S`` (unit exponential or unit half-Cauchy) is one adaptive quadrature.
    """
    if family == "exponential":
        def f(s):
            return math.exp(-s) * special.erfc(c / (s * math.sqrt(2.0))) if s > 0 else 0.0
    elif family == "half_cauchy":
        def f(s):
            return 2.0 / (math.pi * (1.0 + s * s)) * special.erfc(c / (s * math.sqrt(2.0))) if s > 0 else 0.0
    else:
        raise DomainError(f"tail family must be one of {TAIL_FAMILIES}, got {family!r}")
    knee = max(c, 1e-12)
    with warnings.catch_warnings():
        # far outside the useful range of c the integrand is ~0 and quad complains about roundoff
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        a, _ = _integrate.quad(f, 0.0, knee, epsabs=1e-14, epsrel=1e-11, limit=200)
        b, _ = _integrate.quad(f, knee, math.inf, epsabs=1e-14, epsrel=1e-11, limit=200)
    return a + b


def oracle_lambda(p: int, s0: float, tail_family: str = "exponential") -> float:
    """Rate with ``Prob(|beta| > 1/p) = s0 / p``.

    With ``s0 = p`` the target is the supremum over rates, reached as the rate
    goes to zero; the lower end of the rate bracket is returned.
    """
    if p < 1 or not 1 <= s0 <= p:
        raise DomainError(f"need 1 <= s0 <= p, got s0={s0}, p={p}")
    if tail_family not in TAIL_FAMILIES:
        raise DomainError(f"tail family must be one of {TAIL_FAMILIES}, got {tail_family!r}")
    target = s0 / p
    delta = 1.0 / p
    if target >= 1.0:
        return RATE_BRACKET[0]

    def g(log_lam):
        return exceedance_probability(math.exp(log_lam) * delta, tail_family) - target

    lo, hi = math.log(RATE_BRACKET[0]), math.log(RATE_BRACKET[1])
    if g(lo) * g(hi) > 0:
        raise FeasibilityError(f"Prob(|beta| > 1/p) = {target} is not attainable", attainable=(0.0, 1.0))
    return math.exp(optimize.bisect(g, lo, hi, xtol=1e-13, maxiter=300))


# ---------------------------------------------------------------------------
# Student-t degrees of freedom
# ---------------------------------------------------------------------------

NU_GRID_LO = 2.01
NU_GRID_HI = 1e5
NU_GRID_N = 200


def default_nu_grid(n: int = NU_GRID_N) -> np.ndarray:
    return np.geomspace(NU_GRID_LO, NU_GRID_HI, n)


def student_t_loglik(data, nu_grid) -> np.ndarray:
    """Log-likelihood of unit-variance Student-t data at each grid value of ``nu``."""
    y2 = np.asarray(data, dtype=float) ** 2
    n = y2.size
    out = np.empty(len(nu_grid))
    for k, nu in enumerate(nu_grid):
        const = special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2.0))
        out[k] = n * const - 0.5 * (nu + 1.0) * float(np.sum(np.log1p(y2 / (nu - 2.0))))
    return out


@dataclass(frozen=True)
class GridPosterior:
    """Posterior density of ``nu`` on a grid plus the mass beyond its last node."""

    grid: np.ndarray
    density: np.ndarray
    tail_mass: float

    @property
    def cdf(self) -> np.ndarray:
        x = np.log(self.grid)
        g = self.density * self.grid
        return np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(x))])

    def total(self) -> float:
        return float(self.cdf[-1] + self.tail_mass)

    def quantile(self, q: float) -> float:
        return _grid_quantile(self.grid, self.cdf, q)


def _grid_quantile(grid, cdf, q) -> float:
    if q >= cdf[-1]:
        return math.inf
    k = int(np.searchsorted(cdf, q, side="left"))
    if k == 0:
        return float(grid[0])
    x0, x1 = math.log(grid[k - 1]), math.log(grid[k])
    c0, c1 = cdf[k - 1], cdf[k]
    t = 0.0 if c1 == c0 else (q - c0) / (c1 - c0)
    return float(math.exp(x0 + t * (x1 - x0)))


def student_t_posterior(data, prior, grid=None) -> GridPosterior:
    """Grid posterior of ``nu`` for unit-variance Student-t data.

    ``prior`` supplies ``log_density(nu)`` and ``tail_mass(nu_max)``. The
    trapezoid rule runs in ``log(nu)``. Beyond the last node the likelihood
    is flat to within ``O(1/nu_max)``, so the tail carries the last-node
    likelihood times the prior tail mass.
    """
    grid = default_nu_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid <= 2) or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be increasing and above 2")
    data = np.asarray(data, dtype=float)
    loglik = student_t_loglik(data, grid) if data.size else np.zeros(grid.size)
    with np.errstate(divide="ignore"):
        logp = loglik + np.asarray(prior.log_density(grid), dtype=float)
        tail_prior = float(prior.tail_mass(grid[-1]))
        log_tail = loglik[-1] + (math.log(tail_prior) if tail_prior > 0 else -math.inf)
    top = max(np.max(logp), log_tail)
    if not math.isfinite(top):
        raise NumericalError("posterior is zero on the whole grid")
    dens = np.exp(logp - top)
    tail = math.exp(log_tail - top)
    x = np.log(grid)
    g = dens * grid
    z = float(np.sum(0.5 * (g[1:] + g[:-1]) * np.diff(x))) + tail
    return GridPosterior(grid, dens / z, tail / z)


@dataclass(frozen=True)
class SimulationScenario:
    n: int
    nu_true: float
    prior: object
    replicates: int = 100
    grid: np.ndarray = field(default_factory=default_nu_grid)
    label: str = ""


@dataclass(frozen=True)
class SimulationResult:
    scenario: SimulationScenario
    quantiles: dict
    coverage: float
    intervals: np.ndarray


def simulate_student_t(n: int, nu: float, rng) -> np.ndarray:
    if math.isinf(nu):
        return rng.standard_normal(n)
    return rng.standard_t(nu, n) * math.sqrt((nu - 2.0) / nu)


def _replicate(scenario, ss):
    rng = np.random.default_rng(ss)
    post = student_t_posterior(simulate_student_t(scenario.n, scenario.nu_true, rng),
                               scenario.prior, scenario.grid)
    return post


def simulation_study(scenario: SimulationScenario, seed: int, workers: Optional[int] = None,
                     probs=(0.025, 0.5, 0.975)) -> SimulationResult:
    """Run all replicates and summarise the equal-weight posterior mixture.

    Replicate ``r`` uses substream ``r`` of ``seed``, so the result does not
    depend on ``workers``.
    """
    if scenario.replicates < 1:
        raise DomainError("replicates must be positive")
    streams = np.random.SeedSequence(seed).spawn(scenario.replicates)
    if workers is None:
        workers = int(os.environ.get("PCP_THREADS", os.cpu_count() or 1))
    workers = max(1, min(workers, scenario.replicates))
    if workers == 1:
        posts = [_replicate(scenario, ss) for ss in streams]
    else:
        with ThreadPoolExecutor(workers) as ex:
            posts = list(ex.map(lambda ss: _replicate(scenario, ss), streams))
    cdf = np.mean([p.cdf for p in posts], axis=0)
    quant = {q: _grid_quantile(scenario.grid, cdf, q) for q in probs}
    intervals = np.array([[p.quantile(0.025), p.quantile(0.975)] for p in posts])
    covered = (intervals[:, 0] <= scenario.nu_true) & (scenario.nu_true <= intervals[:, 1])
    return SimulationResult(scenario, quant, float(np.mean(covered)), intervals)


def distance_scale_density(density_nu: Callable, grid) -> np.ndarray:
    """Push a prior on ``nu`` to the Student-t distance scale: ``(d, pi_d(d))`` rows."""
    return prior_on_distance_scale(density_nu, student_t_distance_function(), grid)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_risk_csv(curves: Sequence[RiskCurve], stream) -> None:
    """Columns: ``label, p, replicates, x0_norm, risk, se``."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["label", "p", "replicates", "x0_norm", "risk", "se"])
    for c in curves:
        for nrm, r, e in zip(c.norms, c.risk, c.se):
            w.writerow([c.label, c.p, c.replicates, _fmt(nrm), _fmt(r), _fmt(e)])


def write_simulation_csv(results: Sequence[SimulationResult], stream) -> None:
    """Columns: ``scenario, label, n, nu_true, replicates, quantile, value, coverage``."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["scenario", "label", "n", "nu_true", "replicates", "quantile", "value", "coverage"])
    for k, res in enumerate(results):
        sc = res.scenario
        for q, v in sorted(res.quantiles.items()):
            w.writerow([k, sc.label, sc.n, _fmt(sc.nu_true), sc.replicates, _fmt(q), _fmt(v),
                        _fmt(res.coverage)])


__all__ = [
    "GridPosterior", "RiskCurve", "ShrinkagePrior", "SimulationResult", "SimulationScenario",
    "default_nu_grid", "distance_scale_density", "exceedance_probability",
    "exponential_sigma_density", "half_cauchy_sigma_density", "identity_risk",
    "normal_means_risk", "oracle_lambda", "posterior_mean", "risk_curve", "shrinkage_density",
    "simulate_student_t", "simulation_study", "student_t_loglik", "student_t_posterior",
    "write_risk_csv", "write_simulation_csv",
]
