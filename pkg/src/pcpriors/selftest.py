"""Fast invariant checks behind ``pcpriors selftest``."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from . import bym, core, multivariate, univariate


def _precision_pipeline():
    lam = 1.7
    prior = core.PCPrior1D(lam, univariate.precision_distance())
    taus = np.geomspace(1e-4, 1e4, 25)
    err = max(abs(prior.density(t) / univariate.precision_density(lam, t) - 1.0) for t in taus)
    return err <= 1e-6, f"max rel. error {err:.2e}"


def _ar1_mass():
    prior = univariate.AR1Prior(1.0, "rho_zero")
    mass = sum(integrate.quad(prior.density_z, a, b, limit=500)[0] for a, b in ((-np.inf, 0), (0, np.inf)))
    return abs(mass - 1.0) <= 1e-6, f"mass {mass:.10f}"


def _student_t_monotone():
    nus = np.geomspace(2.0 + 1e-5, 1e6, 400)
    d = univariate.StudentTPrior(1.0).distance(nus)
    return bool(np.all(np.diff(d) < 0)), f"range {d[-1]:.3g}..{d[0]:.3g}"


def _corr_psd():
    rng = np.random.default_rng(0)
    worst = math.inf
    for _ in range(1000):
        R = multivariate.correlation_pc_sample(4, 0.3, rng).R
        worst = min(worst, np.linalg.eigvalsh(R).min())
    return worst >= -1e-12, f"min eigenvalue {worst:.2e}"


def _levinson():
    rng = np.random.default_rng(1)
    worst = 0.0
    stationary = True
    for _ in range(200):
        phi = rng.uniform(-0.9, 0.9, rng.integers(1, 7))
        psi, s = multivariate.levinson_durbin(phi)
        worst = max(worst, np.max(np.abs(multivariate.autocorrelations_to_pacf(s) - phi)))
        worst = max(worst, np.max(np.abs(multivariate.levinson_durbin(multivariate.autocorrelations_to_pacf(s))[1] - s)))
        stationary &= multivariate.is_stationary(psi)
    return worst <= 1e-12 and stationary, f"round-trip error {worst:.2e}"


def _bym_identity():
    model = bym.scale_structure(np.eye(6))
    d = bym.bym_distance(model, np.linspace(0, 1, 11))
    return bool(np.all(d == 0.0)), f"max d {d.max():.2e}"


def _weights_simplex():
    covs = [np.diag([1.0, 2.0, 3.0]), np.diag([3.0, 1.0, 1.0]), np.diag([1.0, 1.0, 5.0])]
    prior = bym.weights_pc_prior(covs, 0.3)
    w = bym.sample_weights(prior, np.random.default_rng(2), 2000)
    err = float(np.max(np.abs(w.sum(axis=1) - 1.0)))
    return err <= 1e-12 and bool(np.all(w >= 0)), f"max |sum - 1| {err:.2e}"


CHECKS = [
    ("precision_pipeline", _precision_pipeline),
    ("ar1_unit_mass", _ar1_mass),
    ("student_t_monotone", _student_t_monotone),
    ("corr_matrix_psd", _corr_psd),
    ("levinson_round_trip", _levinson),
    ("bym_identity_zero", _bym_identity),
    ("weights_on_simplex", _weights_simplex),
]


def run_selftest():
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
