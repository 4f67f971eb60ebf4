"""Deterministic covariance and stability quantities of a problem instance.

Sigma_t = sum_{k<t} A^k Sigma_W (A^k)^T, Gamma_T = mean(Sigma_1..Sigma_T) and,
for strictly stable A, Sigma_inf solving Sigma = A Sigma A^T + Sigma_W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BurnInError, NotStrictlyStableError
from .linalg import lambda_min, opnorm, spectral_radius, sym_inv_sqrt, symmetrize
from .model import ProblemInstance

__all__ = [
    "STABILITY_MARGIN",
    "StabilityCertificate",
    "GramianSet",
    "IsometryCheck",
    "k_check",
    "stability_certificate",
    "solve_sigma_inf",
    "compute_gramians",
    "kappa",
    "check_gramian_isometry",
]

# rho(A) must be below 1 - STABILITY_MARGIN for Sigma_inf and kappa to exist
STABILITY_MARGIN = 1e-9


@dataclass(frozen=True)
class StabilityCertificate:
    """(M, rho) with ||A^k|| <= M rho^k; ``valid`` is False when rho(A) >= 1."""

    m_const: float
    rho: float
    valid: bool


@dataclass(frozen=True, eq=False)
class GramianSet:
    sigma_t: np.ndarray  # (T, d, d), sigma_t[t-1] = Sigma_t
    gamma_T: np.ndarray
    sigma_inf: np.ndarray | None
    cert: StabilityCertificate | None
    kappa: int | None

    @property
    def T(self) -> int:
        return self.sigma_t.shape[0]

    @property
    def stable(self) -> bool:
        return self.sigma_inf is not None


def k_check(rho: float) -> int:
    """Power-sweep horizon used when fitting and checking a certificate."""
    if not 0.0 < rho < 1.0:
        return 200
    return max(200, 4 * math.ceil(1.0 / math.log(1.0 / rho)))


def is_normal(a: np.ndarray, tol: float = 1e-12) -> bool:
    """A A^T == A^T A up to ``tol`` relative to ||A||_F^2; then ||A^k|| = rho(A)^k exactly."""
    scale = float(np.sum(a * a))
    return scale == 0.0 or np.linalg.norm(a @ a.T - a.T @ a) <= tol * scale


def stability_certificate(a: np.ndarray, rho: float | None = None) -> StabilityCertificate:
    """Fit (M, rho) by a power sweep.

    By default rho = (1 + rho(A)) / 2; a caller-supplied ``rho`` must lie in
    (rho(A), 1). M is the smallest constant consistent with k = 0..K_check.
    Normal matrices skip the sweep: ||A^k|| / rho^k is decreasing, so M = 1.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    rad = spectral_radius(a)
    if rad >= 1.0 - STABILITY_MARGIN:
        return StabilityCertificate(m_const=math.inf, rho=1.0, valid=False)
    if rho is None:
        rho = 0.5 * (1.0 + rad)
    elif not rad < rho < 1.0:
        raise ValueError(f"rho must lie in (rho(A)={rad:.6g}, 1), got {rho}")
    if is_normal(a):
        return StabilityCertificate(m_const=1.0, rho=float(rho), valid=True)
    horizon = k_check(rho)
    power = np.eye(a.shape[0])
    m_const = 1.0
    scale = 1.0
    for _ in range(horizon):
        power = power @ a
        scale *= rho
        if scale == 0.0:
            break
        m_const = max(m_const, opnorm(power) / scale)
    return StabilityCertificate(m_const=float(m_const), rho=float(rho), valid=True)


def solve_sigma_inf(a: np.ndarray, sigma_w: np.ndarray, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Stationary covariance via the doubling recursion S <- S + A_k S A_k^T, A_k <- A_k^2."""
    s = symmetrize(np.asarray(sigma_w, dtype=float))
    ak = np.asarray(a, dtype=float)
    for _ in range(max_iter):
        update = ak @ s @ ak.T
        s = symmetrize(s + update)
        ak = ak @ ak
        if np.linalg.norm(update) <= tol * np.linalg.norm(s):
            return s
    raise NotStrictlyStableError("doubling recursion for Sigma_inf did not converge")


def _sigma_sequence(a: np.ndarray, sigma_w: np.ndarray, T: int) -> np.ndarray:
    d = a.shape[0]
    out = np.empty((T, d, d))
    out[0] = sigma_w
    for t in range(1, T):
        out[t] = symmetrize(a @ out[t - 1] @ a.T + sigma_w)
    return out


def kappa(instance: ProblemInstance, cert: StabilityCertificate, sigma_inf: np.ndarray) -> int:
    """Burn-in horizon kappa(A) for the certificate ``cert``.

    The inner ceiling is clamped at 1, so the result is an even integer >= 2.
    """
    if not cert.valid or sigma_inf is None:
        raise NotStrictlyStableError("kappa requires a valid certificate and Sigma_inf")
    rho, m_const = cert.rho, cert.m_const
    sw_norm = opnorm(instance.sigma_w)
    arg = math.sqrt(2.0 * sw_norm) * m_const / math.sqrt((1.0 - rho**2) * lambda_min(sigma_inf))
    if rho <= 0.0:
        inner = 1
    else:
        inner = math.ceil(math.log(arg) / math.log(1.0 / rho))
    return 2 * max(inner, 1)


def compute_gramians(instance: ProblemInstance, T: int, cert: StabilityCertificate | None = None) -> GramianSet:
    """All deterministic Gramians up to horizon ``T``.

    Sigma_inf, the certificate and kappa are None when rho(A) >= 1 - 1e-9.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    a, sw = instance.a, instance.sigma_w
    sig = _sigma_sequence(a, sw, T)
    gamma = symmetrize(sig.mean(axis=0))
    if cert is None:
        cert = stability_certificate(a)
    if not cert.valid:
        return GramianSet(sig, gamma, None, None, None)
    sinf = solve_sigma_inf(a, sw)
    return GramianSet(sig, gamma, sinf, cert, kappa(instance, cert, sinf))


@dataclass(frozen=True)
class IsometryCheck:
    passes: bool
    eigs: tuple[float, float]
    quarter_ok: bool
    kappa: int


def check_gramian_isometry(instance: ProblemInstance, T: int, cert: StabilityCertificate | None = None, tol: float = 1e-9) -> IsometryCheck:
    """Check Gamma_T >= Sigma_inf / 4 and eigenvalues of (Gamma_T^{-1} Gamma_kappa) within [1/4, 4]."""
    g = compute_gramians(instance, T, cert)
    if not g.stable:
        raise NotStrictlyStableError("isometry check needs a strictly stable instance")
    if T < g.kappa:
        raise BurnInError(f"T={T} is below kappa(A)={g.kappa}")
    gamma_kappa = g.sigma_t[: g.kappa].mean(axis=0)
    gi = sym_inv_sqrt(g.gamma_T, name="Gamma_T")
    ev = np.linalg.eigvalsh(symmetrize(gi @ gamma_kappa @ gi))
    si = sym_inv_sqrt(g.sigma_inf, name="Sigma_inf")
    quarter_ok = lambda_min(si @ g.gamma_T @ si) >= 0.25 - tol
    lo, hi = float(ev[0]), float(ev[-1])
    passes = (lo >= 0.25 - tol) and (hi <= 4.0 + tol)
    return IsometryCheck(passes=bool(passes), eigs=(lo, hi), quarter_ok=bool(quarter_ok), kappa=g.kappa)
