"""Pathwise checks of the error decomposition and Monte Carlo probes of its ingredients.

The OLS error splits as ``Delta = Q Sigma_hat^{-1}`` with ``Q = W^T X / (mT)``
and ``Sigma_hat = X^T X / (mT)``, and further as

    Delta = Q Gamma_T^{-1} + Q (Sigma_hat^{-1} - Gamma_T^{-1}).

The first term is the martingale ``sum_j D_j``; the second is controlled by
the isometry error ``||I - Sigma_bar||`` of the whitened sample covariance
``Sigma_bar = Gamma_T^{-1/2} Sigma_hat Gamma_T^{-1/2}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import SingularGramError
from .estimator import GRAM_REL_FLOOR, ols_fit, schatten_norm
from .gramians import GramianSet, compute_gramians
from .linalg import lambda_min, opnorm, sym_inv, sym_inv_sqrt, sym_sqrt, symmetrize
from .model import ProblemInstance, TrajectoryBatch, derive_rng, simulate_batch, whiten

__all__ = [
    "DecompositionReport",
    "MartingaleSequence",
    "decompose",
    "martingale_increments",
    "quadratic_variation_identities",
    "block_toeplitz_matrix",
    "block_toeplitz_quadratic_form",
    "isometry_error",
    "isometry_probe",
    "small_ball_probe",
    "chevet_oracle",
    "burkholder_probe",
    "t2_split_probe",
    "phi",
]


def phi(tau: float) -> float:
    return max(tau, tau * tau)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b||_F / max(||b||_F, tiny)."""
    denom = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)


def _sample_cov(batch: TrajectoryBatch) -> np.ndarray:
    x = batch.x
    return symmetrize(x.T @ x / x.shape[0])


def _check_gram(sigma_hat: np.ndarray):
    ev = np.linalg.eigvalsh(sigma_hat)
    if ev[-1] <= 0 or ev[0] <= GRAM_REL_FLOOR * ev[-1]:
        raise SingularGramError("sample covariance is singular")


@dataclass(frozen=True, eq=False)
class DecompositionReport:
    q_hat: np.ndarray
    sigma_hat: np.ndarray
    sigma_bar: np.ndarray
    sigma_tilde_kappa: np.ndarray | None
    t1_sample: dict[float, float]
    t2_sample: dict[float, float]
    iso_error: float
    total_sample: dict[float, float]
    delta: np.ndarray
    decomposition_residual: float
    # pieces of the T2 split: squared isometry error and the self-normalized ratio
    t2_aip_sample: float
    t2_ols_sample: float
    t2_normalizer_lmin: float

    def basic_inequality_holds(self, q: float, slack: float = 1e-9) -> bool:
        """||Delta||^2 <= (1+q) T1 + (1+1/q) T2 for every stored p."""
        for p, total in self.total_sample.items():
            bound = (1 + q) * self.t1_sample[p] + (1 + 1 / q) * self.t2_sample[p]
            if total > bound + slack * max(1.0, bound):
                return False
        return True

    def t2_split_holds(self, p: float, slack: float = 1e-9) -> bool:
        """Pathwise T2 <= d^{2/p} / lambda_min(N) * ||I - Sigma_bar||^2 * OLS ratio."""
        d = self.q_hat.shape[0]
        factor = 1.0 if math.isinf(p) else d ** (2.0 / p)
        bound = factor / self.t2_normalizer_lmin * self.t2_aip_sample * self.t2_ols_sample
        return self.t2_sample[p] <= bound * (1 + slack) + slack


def decompose(batch: TrajectoryBatch, instance: ProblemInstance, gramians: GramianSet,
              ps: Iterable[float] = (1, 2, math.inf), normalizer: str = "auto") -> DecompositionReport:
    """Evaluate every term of the second-order decomposition on one batch.

    ``normalizer`` chooses N in the T2 split: ``"gamma_T"`` (many-trajectory
    choice), ``"gamma_kappa"`` (stable choice) or ``"auto"`` (Gamma_kappa when
    kappa exists and T >= kappa, else Gamma_T).
    """
    ps = sorted({float(p) for p in ps} | {2.0, math.inf})
    n = batch.m * batch.T
    x, w = batch.x, batch.w
    q_hat = w.T @ x / n
    sigma_hat = symmetrize(x.T @ x / n)
    _check_gram(sigma_hat)
    gamma = gramians.gamma_T
    g_inv = sym_inv(gamma, name="Gamma_T")
    g_isqrt = sym_inv_sqrt(gamma, name="Gamma_T")
    sigma_bar = symmetrize(g_isqrt @ sigma_hat @ g_isqrt)
    s_inv = sym_inv(sigma_hat, rel_floor=GRAM_REL_FLOOR, name="Sigma_hat")

    delta = ols_fit(batch) - instance.a
    term1 = q_hat @ g_inv
    term2 = q_hat @ (s_inv - g_inv)

    sigma_tilde = None
    gamma_kappa = None
    if gramians.kappa is not None:
        k = gramians.kappa
        if k <= gramians.T:
            gamma_kappa = gramians.sigma_t[:k].mean(axis=0)
        else:
            gamma_kappa = compute_gramians(instance, k, gramians.cert).gamma_T
        gk_isqrt = sym_inv_sqrt(gamma_kappa, name="Gamma_kappa")
        sigma_tilde = symmetrize(gk_isqrt @ sigma_hat @ gk_isqrt)

    if normalizer == "auto":
        normalizer = "gamma_kappa" if (gamma_kappa is not None and batch.T >= gramians.kappa) else "gamma_T"
    if normalizer == "gamma_kappa":
        if sigma_tilde is None:
            raise ValueError("gamma_kappa normalizer needs a stable instance")
        n_lmin, ratio_lmin = lambda_min(gamma_kappa), lambda_min(sigma_tilde)
    elif normalizer == "gamma_T":
        n_lmin, ratio_lmin = lambda_min(gamma), lambda_min(sigma_bar)
    else:
        raise ValueError(f"unknown normalizer {normalizer!r}")
    q_bar = q_hat @ g_isqrt
    sb_isqrt = sym_inv_sqrt(sigma_bar, rel_floor=GRAM_REL_FLOOR, name="Sigma_bar")
    iso = opnorm(np.eye(batch.d) - sigma_bar)

    return DecompositionReport(
        q_hat=q_hat,
        sigma_hat=sigma_hat,
        sigma_bar=sigma_bar,
        sigma_tilde_kappa=sigma_tilde,
        t1_sample={p: schatten_norm(term1, p) ** 2 for p in ps},
        t2_sample={p: schatten_norm(term2, p) ** 2 for p in ps},
        iso_error=iso,
        total_sample={p: schatten_norm(delta, p) ** 2 for p in ps},
        delta=delta,
        decomposition_residual=_rel(q_hat @ s_inv, delta),
        t2_aip_sample=iso**2,
        t2_ols_sample=opnorm(q_bar @ sb_isqrt) ** 2 / ratio_lmin,
        t2_normalizer_lmin=n_lmin,
    )


@dataclass(frozen=True, eq=False)
class MartingaleSequence:
    increments: np.ndarray  # (mT, d, d)
    i_index: np.ndarray  # 1-based trajectory index i_j
    t_index: np.ndarray  # 1-based time index t_j
    y: np.ndarray = field(repr=False)  # Gamma_T^{-1} x_{t_j}, shape (mT, d)
    w: np.ndarray = field(repr=False)  # w_{t_j}, shape (mT, d)

    def total(self) -> np.ndarray:
        return self.increments.sum(axis=0)


def martingale_increments(batch: TrajectoryBatch, instance: ProblemInstance, gramians: GramianSet) -> MartingaleSequence:
    """D_j = w_{t_j} (Gamma_T^{-1} x_{t_j})^T / (mT), time index flattened first."""
    m, T = batch.m, batch.T
    n = m * T
    j = np.arange(1, n + 1)
    i_idx = (j - 1) // T + 1
    t_idx = (j - 1) % T + 1
    xs = batch.states[i_idx - 1, t_idx - 1, :]
    ws = batch.noises[i_idx - 1, t_idx - 1, :]
    ys = xs @ sym_inv(gramians.gamma_T, name="Gamma_T")
    inc = np.einsum("ja,jb->jab", ws, ys) / n
    return MartingaleSequence(increments=inc, i_index=i_idx, t_index=t_idx, y=ys, w=ws)


def quadratic_variation_identities(batch: TrajectoryBatch, instance: ProblemInstance, gramians: GramianSet) -> dict[str, float]:
    """Residuals of both conditional quadratic-variation closed forms.

    The left-hand sides are summed increment by increment, replacing
    E[w w^T] by Sigma_W and E[||w||^2] by Tr(Sigma_W); the right-hand sides
    use the whitened sample covariance.
    """
    seq = martingale_increments(batch, instance, gramians)
    n = batch.m * batch.T
    sw = instance.sigma_w
    tr_sw = float(np.trace(sw))
    d = batch.d
    col = np.zeros((d, d))  # sum_j E_{j-1}[D_j^T D_j]
    row = np.zeros((d, d))  # sum_j E_{j-1}[D_j D_j^T]
    for y in seq.y:
        col += tr_sw * np.outer(y, y) / n**2
        row += float(y @ y) * sw / n**2
    gamma = gramians.gamma_T
    g_isqrt = sym_inv_sqrt(gamma, name="Gamma_T")
    sigma_bar = g_isqrt @ _sample_cov(batch) @ g_isqrt
    col_closed = tr_sw / n * (g_isqrt @ sigma_bar @ g_isqrt)
    row_closed = float(np.trace(sym_inv(gamma) @ sigma_bar)) / n * sw
    return {
        "residual_col": _rel(col, col_closed),
        "residual_row": _rel(row, row_closed),
        "martingale_sum_residual": _rel(seq.total(), batch.w.T @ batch.x / n @ sym_inv(gamma)),
    }


def block_toeplitz_matrix(instance: ProblemInstance, gamma_T: np.ndarray, T: int) -> np.ndarray:
    """L_T (Td x Td): block (t, s) = Gamma_T^{-1/2} A^{t-s} Sigma_W^{1/2} for s <= t."""
    d = instance.d
    g_isqrt = sym_inv_sqrt(gamma_T, name="Gamma_T")
    sw_sqrt = instance.noise.sqrt_cov
    blocks = []
    power = np.eye(d)
    for _ in range(T):
        blocks.append(g_isqrt @ power @ sw_sqrt)
        power = power @ instance.a
    out = np.zeros((T * d, T * d))
    for t in range(T):
        for s in range(t + 1):
            out[t * d:(t + 1) * d, s * d:(s + 1) * d] = blocks[t - s]
    return out


def block_toeplitz_quadratic_form(batch: TrajectoryBatch, instance: ProblemInstance, gramians: GramianSet,
                                  v: np.ndarray, l_t: np.ndarray | None = None) -> dict[str, float]:
    """Compare v^T Sigma_bar v with wbar^T Q(v) wbar built from the whitened noises w_0..w_{T-1}.

    Q(v) is block diagonal over trajectories; each block is
    ((I_T (x) v^T) L_T)^T ((I_T (x) v^T) L_T) / (mT).
    """
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("v must be a unit vector")
    m, T, d = batch.m, batch.T, batch.d
    gamma = gramians.gamma_T
    if l_t is None:
        l_t = block_toeplitz_matrix(instance, gamma, T)
    proj = np.kron(np.eye(T), v[None, :]) @ l_t  # (T, Td)
    q_block = proj.T @ proj / (m * T)
    # concatenated noises w_0..w_{T-1}; w_0 = x_1
    w_cat = np.concatenate([batch.initial_noise[:, None, :], batch.noises[:, :-1, :]], axis=1)
    wbar = whiten(instance.noise, w_cat).reshape(m, T * d)
    rhs = float(np.einsum("ia,ab,ib->", wbar, q_block, wbar))
    g_isqrt = sym_inv_sqrt(gamma, name="Gamma_T")
    lhs = float(v @ g_isqrt @ _sample_cov(batch) @ g_isqrt @ v)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "residual": abs(lhs - rhs) / max(abs(lhs), np.finfo(float).tiny),
        "trace_q": float(m * np.trace(q_block)),
    }


def isometry_error(batch: TrajectoryBatch, gamma_T: np.ndarray) -> float:
    """||I - Gamma_T^{-1/2} Sigma_hat Gamma_T^{-1/2}||_op."""
    g_isqrt = sym_inv_sqrt(gamma_T, name="Gamma_T")
    sb = g_isqrt @ _sample_cov(batch) @ g_isqrt
    return opnorm(np.eye(batch.d) - sb)


def _isometry_envelope(instance: ProblemInstance, gram: GramianSet, m: int, T: int, r: float) -> float:
    nu, d = instance.noise.nu, instance.d
    if gram.stable:
        cert = gram.cert
        num = math.sqrt(opnorm(instance.sigma_w)) * cert.m_const * (d + r)
        den = math.sqrt(lambda_min(gram.gamma_T)) * (1 - cert.rho) * m * T
        return nu**2 * phi(math.sqrt(num / den))
    return nu**2 * phi(math.sqrt((d + r) / m))


def isometry_probe(instance: ProblemInstance, m_grid: Sequence[int], T_grid: Sequence[int], r: float = 2.0,
                   N: int = 200, seed: int = 0) -> list[dict]:
    """Monte Carlo (E||I - Sigma_bar||^r)^{1/r} on an (m, T) grid, with the envelope (constant 1)."""
    if r < 1:
        raise ValueError("moment order r must be >= 1")
    rows = []
    for gi, T in enumerate(T_grid):
        gram = compute_gramians(instance, T)
        for mi, m in enumerate(m_grid):
            errs = np.array([
                isometry_error(simulate_batch(instance, m, T, seed, replicate=(gi, mi, rep)),
                               gram.gamma_T)
                for rep in range(N)
            ])
            pw = errs**r
            mean_pw = pw.mean()
            moment = mean_pw ** (1.0 / r)
            # delta method for the r-th root of a mean
            se_pw = pw.std(ddof=1) / math.sqrt(N)
            stderr = moment / (r * mean_pw) * se_pw if mean_pw > 0 else 0.0
            rows.append({
                "m": m, "T": T, "r": r, "moment": float(moment), "stderr": float(stderr),
                "mean_error": float(errs.mean()),
                "envelope": _isometry_envelope(instance, gram, m, T, r),
            })
    return rows


def small_ball_probe(instance: ProblemInstance, k: int, eps_grid: Sequence[float], N: int = 1000, seed: int = 0,
                     v_count: int = 4, c: float = 1.0, alpha: float = 0.5) -> list[dict]:
    """Empirical Pr_0{ (1/k) sum_{t<=k} <v, x_t>^2 <= eps v^T Gamma_k v } over N draws, first window only."""
    if N < 1000:
        raise ValueError("small-ball probe needs N >= 1000")
    gram = compute_gramians(instance, k)
    batch = simulate_batch(instance, N, k, seed)
    xs = batch.states[:, :k, :]  # x_1..x_k
    vrng = derive_rng(seed, 2**31 - 1)
    rows = []
    for vi in range(v_count):
        v = vrng.standard_normal(instance.d)
        v /= np.linalg.norm(v)
        energy = np.mean((xs @ v) ** 2, axis=1)
        scale = float(v @ gram.gamma_T @ v)
        for eps in eps_grid:
            prob = float(np.mean(energy <= eps * scale))
            rows.append({
                "v_index": vi, "eps": float(eps), "probability": prob,
                "stderr": math.sqrt(max(prob * (1 - prob), 0.0) / N),
                "envelope": min(1.0, (c * eps) ** alpha) if eps > 0 else 0.0,
            })
    return rows


def chevet_oracle(a: np.ndarray, b: np.ndarray, N: int = 2000, seed: int = 0, c_up: float = 8.0) -> dict[str, float]:
    """Monte Carlo E||A G B||_op^2 against 1/2 and c_up times ||A||^2 ||B||_F^2 + ||A||_F^2 ||B||^2."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    rng = derive_rng(seed, 0)
    g = rng.standard_normal((N, a.shape[1], b.shape[0]))
    vals = np.linalg.norm(a @ g @ b, ord=2, axis=(1, 2)) ** 2
    core = opnorm(a) ** 2 * np.linalg.norm(b) ** 2 + np.linalg.norm(a) ** 2 * opnorm(b) ** 2
    return {
        "mc_mean": float(vals.mean()),
        "stderr": float(vals.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0,
        "lower_env": float(0.5 * core),
        "upper_env": float(c_up * core),
    }


def burkholder_probe(instance: ProblemInstance, gramians: GramianSet, m: int, T: int, N: int = 200,
                     seed: int = 0, r: float | None = None) -> dict[str, float]:
    """Monte Carlo sides of the matrix Burkholder inequality for M = Q Gamma_T^{-1}.

    The conditional quadratic variations use their closed forms; the Schatten
    term uses ||D_j||_{S_r} = ||w|| ||y|| / (mT) (D_j has rank one).
    """
    d = instance.d
    if d < 8:
        warnings.warn(f"Burkholder probe is calibrated for d >= 8; got d={d}", stacklevel=2)
    if r is None:
        r = max(math.log(d), 2.0)
    n = m * T
    sw = instance.sigma_w
    tr_sw, sw_op = float(np.trace(sw)), opnorm(sw)
    g_inv = sym_inv(gramians.gamma_T, name="Gamma_T")
    lhs_sq, col_pw, row_pw, schatten_pw = [], [], [], []
    for rep in range(N):
        batch = simulate_batch(instance, m, T, seed, replicate=rep)
        x, w = batch.x, batch.w
        mart = (w.T @ x / n) @ g_inv
        lhs_sq.append(opnorm(mart) ** 2)
        ys = x @ g_inv
        col = tr_sw / n**2 * (ys.T @ ys)
        row_scalar = float(np.sum(ys * ys)) / n**2
        col_pw.append(opnorm(col) ** (r / 2))
        row_pw.append((row_scalar * sw_op) ** (r / 2))
        norms = np.linalg.norm(w, axis=1) * np.linalg.norm(ys, axis=1) / n
        schatten_pw.append(float(np.sum(norms**r)))
    lhs = math.sqrt(float(np.mean(lhs_sq)))
    term_col = float(np.mean(col_pw)) ** (1 / r)
    term_row = float(np.mean(row_pw)) ** (1 / r)
    term_s = float(np.mean(schatten_pw)) ** (1 / r)
    return {
        "lhs": lhs, "term_col": term_col, "term_row": term_row, "term_schatten": term_s, "r": r,
        "ratio": lhs / (r * (term_col + term_row + term_s)),
    }


def t2_split_probe(instance: ProblemInstance, gramians: GramianSet, m: int, T: int, N: int = 200,
                   seed: int = 0, p: float = math.inf, normalizer: str = "auto") -> dict[str, float]:
    """Monte Carlo T2 next to the product bound d^{2/p}/lambda_min(N) * T2_AIP * T2_OLS."""
    t2, aip4, ols2 = [], [], []
    n_lmin = None
    for rep in range(N):
        batch = simulate_batch(instance, m, T, seed, replicate=rep)
        rep_ = decompose(batch, instance, gramians, ps=(p,), normalizer=normalizer)
        t2.append(rep_.t2_sample[float(p)])
        aip4.append(rep_.t2_aip_sample**2)
        ols2.append(rep_.t2_ols_sample**2)
        n_lmin = rep_.t2_normalizer_lmin
    d = instance.d
    factor = 1.0 if math.isinf(p) else d ** (2.0 / p)
    t2_aip = math.sqrt(float(np.mean(aip4)))
    t2_ols = math.sqrt(float(np.mean(ols2)))
    return {
        "t2": float(np.mean(t2)),
        "t2_aip": t2_aip,
        "t2_ols": t2_ols,
        "bound": factor / n_lmin * t2_aip * t2_ols,
    }
