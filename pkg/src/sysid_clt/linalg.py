"""Small symmetric-matrix helpers shared by the other modules."""

from __future__ import annotations

import numpy as np

from .errors import SingularCovarianceError

__all__ = [
    "symmetrize",
    "sym_eigh",
    "sym_sqrt",
    "sym_inv_sqrt",
    "sym_inv",
    "opnorm",
    "lambda_min",
    "spectral_radius",
]


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def sym_eigh(m: np.ndarray, rel_floor: float = 1e-13, name: str = "matrix"):
    """Eigendecomposition of a symmetric positive definite matrix.

    Raises SingularCovarianceError when the smallest eigenvalue is at or
    below ``rel_floor`` times the largest one; eigenvalues are never clamped.
    """
    evals, evecs = np.linalg.eigh(symmetrize(np.asarray(m, dtype=float)))
    top = evals[-1]
    if not np.isfinite(top) or top <= 0 or evals[0] <= rel_floor * top:
        raise SingularCovarianceError(
            f"{name} is numerically singular (eigenvalues in [{evals[0]:.3e}, {top:.3e}])"
        )
    return evals, evecs


def sym_sqrt(m: np.ndarray, rel_floor: float = 1e-13, name: str = "matrix") -> np.ndarray:
    evals, evecs = sym_eigh(m, rel_floor, name)
    return (evecs * np.sqrt(evals)) @ evecs.T


def sym_inv_sqrt(m: np.ndarray, rel_floor: float = 1e-13, name: str = "matrix") -> np.ndarray:
    evals, evecs = sym_eigh(m, rel_floor, name)
    return (evecs / np.sqrt(evals)) @ evecs.T


def sym_inv(m: np.ndarray, rel_floor: float = 1e-13, name: str = "matrix") -> np.ndarray:
    evals, evecs = sym_eigh(m, rel_floor, name)
    return (evecs / evals) @ evecs.T


def opnorm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def lambda_min(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(m))[0])


def spectral_radius(a: np.ndarray) -> float:
    a = np.atleast_2d(a)
    return float(np.max(np.abs(np.linalg.eigvals(a))))
