"""OLS fit of the dynamics matrix and the error norms used to score it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import SingularGramError
from .model import TrajectoryBatch

__all__ = [
    "ErrorReport",
    "ols_fit",
    "ols_from_arrays",
    "schatten_norm",
    "weighted_sq_norm",
    "error_report",
    "GRAM_REL_FLOOR",
]

# X^T X is declared singular when lambda_min <= GRAM_REL_FLOOR * lambda_max
GRAM_REL_FLOOR = 1e-12


def ols_from_arrays(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares ``A_hat = Y^T X (X^T X)^{-1}`` solved through the SVD of X."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.linalg.svd(x, compute_uv=False)
    if s.size == 0 or s[-1] ** 2 <= GRAM_REL_FLOOR * s[0] ** 2 or x.shape[0] < x.shape[1]:
        raise SingularGramError(
            f"Gram matrix is singular (rows={x.shape[0]}, d={x.shape[1]}, "
            f"sigma_min/sigma_max={(s[-1] / s[0]) if s.size and s[0] > 0 else 0.0:.3e})"
        )
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return coef.T


def ols_fit(batch: TrajectoryBatch) -> np.ndarray:
    """OLS estimate of A from all ``m T`` transitions of a batch."""
    return ols_from_arrays(batch.x, batch.y)


def schatten_norm(matrix: np.ndarray, p: float) -> float:
    """Schatten-p norm from singular values; ``p = inf`` is the operator norm."""
    if not p >= 1:
        raise ValueError(f"Schatten norm needs p >= 1, got {p}")
    s = np.linalg.svd(np.atleast_2d(matrix), compute_uv=False)
    if s.size == 0:
        return 0.0
    if math.isinf(p):
        return float(s[0])
    top = s[0]
    if top == 0.0:
        return 0.0
    # scale by the top singular value to avoid overflow at large p
    return float(top * np.sum((s / top) ** p) ** (1.0 / p))


def weighted_sq_norm(matrix: np.ndarray, gamma: np.ndarray) -> float:
    """||M||^2_Gamma = Tr(M Gamma M^T)."""
    return float(np.trace(matrix @ gamma @ matrix.T))


@dataclass(frozen=True, eq=False)
class ErrorReport:
    a_hat: np.ndarray
    delta: np.ndarray
    frob_sq: float
    op_sq: float
    schatten: dict[float, float]
    weighted_sq: float

    def fact_chain_ok(self, slack: float = 1e-12) -> bool:
        """op_sq <= S_p^2 <= d^{2/p} op_sq for every stored p."""
        d = self.delta.shape[0]
        for p, val in self.schatten.items():
            upper = self.op_sq if math.isinf(p) else d ** (2.0 / p) * self.op_sq
            scale = max(upper, 1.0)
            if val < self.op_sq - slack * scale or val > upper + slack * scale:
                return False
        return True


def error_report(a_hat: np.ndarray, instance, gramians, ps: Iterable[float] = (1, 2, math.inf)) -> ErrorReport:
    """Every norm of ``A_hat - A`` the library reports.

    ``gramians`` supplies Gamma_T for the weighted norm; a bare matrix is
    accepted in its place.
    """
    gamma_T = getattr(gramians, "gamma_T", gramians)
    delta = np.asarray(a_hat, dtype=float) - instance.a
    s = np.linalg.svd(delta, compute_uv=False)
    op_sq = float(s[0] ** 2)
    frob_sq = float(np.sum(s**2))
    schatten = {float(p): schatten_norm(delta, p) ** 2 for p in ps}
    schatten[2.0] = frob_sq
    schatten[math.inf] = op_sq
    return ErrorReport(
        a_hat=np.asarray(a_hat, dtype=float),
        delta=delta,
        frob_sq=frob_sq,
        op_sq=op_sq,
        schatten=schatten,
        weighted_sq=weighted_sq_norm(delta, gamma_T),
    )
