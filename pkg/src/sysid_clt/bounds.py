"""Closed-form rates and bounds for OLS system identification.

Every hidden universal constant defaults to 1 and can be overridden through
:class:`BoundConstants`; ratio-based comparisons do not depend on them.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NotStrictlyStableError
from .gramians import GramianSet, is_normal, k_check
from .linalg import lambda_min, opnorm, spectral_radius, sym_inv
from .model import ProblemInstance

__all__ = [
    "Regime",
    "AsymptoticRegime",
    "BurninKind",
    "BoundConstants",
    "PriorBoundParams",
    "BoundTerms",
    "BurninResult",
    "RateReport",
    "bar_trace",
    "clt_rate_frobenius",
    "clt_rate_operator",
    "asymptotic_covariance",
    "thm31_bound",
    "thm32_bound",
    "j_constant",
    "prior_bounds",
    "burnin_check",
    "rate_report",
]


class Regime(str, enum.Enum):
    MANY = "many"
    STABLE = "stable"


class AsymptoticRegime(str, enum.Enum):
    FIXED_T = "fixed-T"  # m -> inf, T fixed
    STABLE = "stable"  # T -> inf, m fixed
    JOINT = "joint"  # m, T -> inf together


class BurninKind(str, enum.Enum):
    FROB_MANY = "frob-many"  # Frobenius (1+2q) condition, many trajectories
    FROB_STABLE = "frob-stable"
    OP_MANY = "op-many"  # operator-norm absorption condition, many trajectories
    OP_STABLE = "op-stable"
    THM31_I = "thm31-i"
    THM31_II = "thm31-ii"
    THM32_I = "thm32-i"
    THM32_II = "thm32-ii"


@dataclass(frozen=True)
class BoundConstants:
    """Universal constants hidden behind ``<~`` / ``>~`` (all default to 1)."""

    c1: float = 1.0  # many-trajectory Frobenius higher-order term
    c2: float = 1.0  # stable Frobenius higher-order term
    c_op: float = 1.0  # operator-norm bound prefactor
    c_burnin: float = 1.0  # every burn-in requirement

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class PriorBoundParams:
    k_psi2: float = 1.0  # max coordinate psi_2 norm K
    k_vec: float = 1.0  # directional psi_2 norm K_vec
    delta: float = math.exp(-1.0)  # failure probability in the high-probability bound
    j_a: float | None = None  # sum_t ||A^t||; filled from A when None

    def __post_init__(self):
        if self.k_psi2 <= 0 or self.k_vec <= 0:
            raise ValueError("k_psi2 and k_vec must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class BurninResult:
    kind: BurninKind
    required: float
    actual: float
    satisfied: bool


@dataclass(frozen=True)
class BoundTerms:
    leading: float
    higher: float
    burnin: list[BurninResult] = field(default_factory=list)
    d_below_8: bool = False

    @property
    def total(self) -> float:
        return self.leading + self.higher


@dataclass(frozen=True)
class RateReport:
    gamma_f_target: float
    gamma_op_target: float
    thm31_leading: float
    thm31_higher: float
    thm32_leading: float
    thm32_higher: float
    prior_frob: float
    prior_excess_conversion: float
    prior_op: float
    burnin: dict[str, BurninResult]
    constants_used: dict[str, float]

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "burnin"}
        out["burnin"] = {
            k: {"required": b.required, "actual": b.actual, "satisfied": b.satisfied}
            for k, b in self.burnin.items()
        }
        return out


def bar_trace(m: np.ndarray) -> float:
    """max{Tr(M), log(d) ||M||} for a PSD matrix."""
    d = m.shape[0]
    return max(float(np.trace(m)), math.log(d) * opnorm(m))


def _check_mt(m: int, T: int):
    if m < 1 or T < 1:
        raise ValueError(f"need m >= 1 and T >= 1, got m={m}, T={T}")


def clt_rate_frobenius(sigma_w: np.ndarray, gamma_T: np.ndarray, m: int, T: int) -> float:
    """Tr(Sigma_W) Tr(Gamma_T^{-1}) / (mT)."""
    _check_mt(m, T)
    g_inv = sym_inv(gamma_T, name="Gamma_T")
    return float(np.trace(sigma_w) * np.trace(g_inv) / (m * T))


def clt_rate_operator(sigma_w: np.ndarray, gamma_T: np.ndarray, m: int, T: int) -> float:
    """(||Sigma_W|| Tr(Gamma_T^{-1}) + Tr(Sigma_W) / lambda_min(Gamma_T)) / (mT)."""
    _check_mt(m, T)
    g_inv = sym_inv(gamma_T, name="Gamma_T")
    return float(
        (opnorm(sigma_w) * np.trace(g_inv) + np.trace(sigma_w) / lambda_min(gamma_T)) / (m * T)
    )


def asymptotic_covariance(regime, gramians: GramianSet, m: int, T: int):
    """Kronecker factors (row, column) of the limiting covariance of the scaled vec error.

    FIXED_T: (Gamma_T^{-1}/T, Sigma_W) for sqrt(m) vec(Delta);
    STABLE: (Sigma_inf^{-1}/m, Sigma_W) for sqrt(T) vec(Delta);
    JOINT: (Sigma_inf^{-1}, Sigma_W) for sqrt(mT) vec(Delta).
    vec stacks columns, so Cov(vec Delta) is approximately row (x) column.
    """
    regime = AsymptoticRegime(regime)
    _check_mt(m, T)
    sigma_w = gramians.sigma_t[0]
    if regime is AsymptoticRegime.FIXED_T:
        return sym_inv(gramians.gamma_T, name="Gamma_T") / T, sigma_w.copy()
    if not gramians.stable:
        raise NotStrictlyStableError(f"regime {regime.value} requires rho(A) < 1")
    sinf_inv = sym_inv(gramians.sigma_inf, name="Sigma_inf")
    if regime is AsymptoticRegime.STABLE:
        return sinf_inv / m, sigma_w.copy()
    return sinf_inv, sigma_w.copy()


def _require_stable(gramians: GramianSet):
    if not gramians.stable or gramians.cert is None or not gramians.cert.valid:
        raise NotStrictlyStableError("stable-regime bound requires a strictly stable instance")


def thm31_bound(instance: ProblemInstance, gramians: GramianSet, m: int, T: int, q: float = 1.0,
                regime=Regime.MANY, constants: BoundConstants | None = None) -> BoundTerms:
    """Frobenius bound: (1+q) * CLT rate + (1+1/q) * higher-order term."""
    if q <= 0:
        raise ValueError(f"q must be positive, got {q}")
    regime = Regime(regime)
    c = constants or BoundConstants()
    d, nu = instance.d, instance.noise.nu
    sw = instance.sigma_w
    leading = (1.0 + q) * clt_rate_frobenius(sw, gramians.gamma_T, m, T)
    if regime is Regime.MANY:
        higher = c.c1 * nu**6 * d**3 * opnorm(sw) / (lambda_min(gramians.gamma_T) * m**2 * T)
        kinds = (BurninKind.THM31_I, BurninKind.FROB_MANY)
    else:
        _require_stable(gramians)
        cert = gramians.cert
        higher = (c.c2 * nu**6 * d**3 * cert.m_const * opnorm(sw) ** 1.5
                  / ((1.0 - cert.rho) * lambda_min(gramians.sigma_inf) ** 1.5 * (m * T) ** 2))
        kinds = (BurninKind.THM31_II, BurninKind.FROB_STABLE)
    higher *= 1.0 + 1.0 / q
    checks = [burnin_check(k, instance, gramians, m, T, q=q, constants=c) for k in kinds]
    return BoundTerms(leading=float(leading), higher=float(higher), burnin=checks)


def thm32_bound(instance: ProblemInstance, gramians: GramianSet, m: int, T: int,
                regime=Regime.MANY, constants: BoundConstants | None = None) -> BoundTerms:
    """Operator-norm bound with its log^2(d) leading term and two higher-order terms."""
    regime = Regime(regime)
    _check_mt(m, T)
    c = constants or BoundConstants()
    d, nu = instance.d, instance.noise.nu
    small = d < 8
    if small:
        warnings.warn(f"operator-norm bound is stated for d >= 8; evaluating at d={d}", stacklevel=2)
    sw = instance.sigma_w
    g = gramians.gamma_T
    g_inv = sym_inv(g, name="Gamma_T")
    logd = math.log(d) if d > 1 else 0.0
    core = opnorm(sw) * np.trace(g_inv) + np.trace(sw) * opnorm(g_inv)
    leading = c.c_op * logd**2 * core / (m * T)
    bars = nu**4 * bar_trace(sw) * bar_trace(g_inv)
    # d = 1 has log(d) = 0 and the log-weighted term vanishes
    inv_log = 1.0 / logd if logd > 0 else 0.0
    if regime is Regime.MANY:
        phi_t = opnorm(sw) / lambda_min(g)
        higher = (logd**2 * bars / (m ** (2 * (1 - inv_log)) * T ** (2 * (0.5 - inv_log)))
                  + nu**6 * d**2 * phi_t / (m**2 * T))
        kinds = (BurninKind.THM32_I, BurninKind.OP_MANY)
    else:
        _require_stable(gramians)
        cert = gramians.cert
        phi_inf = opnorm(sw) / lambda_min(gramians.sigma_inf)
        higher = (logd**2 * bars / (m * T) ** (2 * (1 - inv_log))
                  + nu**6 * d**2 * cert.m_const * phi_inf**1.5 / ((1 - cert.rho) * (m * T) ** 2))
        kinds = (BurninKind.THM32_II, BurninKind.OP_STABLE)
    higher *= c.c_op
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        checks = [burnin_check(k, instance, gramians, m, T, constants=c) for k in kinds]
    return BoundTerms(leading=float(leading), higher=float(higher), burnin=checks, d_below_8=small)


def j_constant(a: np.ndarray, cert=None) -> float:
    """sum_{t>=0} ||A^t||, truncated at K_check powers plus the tail M rho^K / (1 - rho)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if cert is None or not cert.valid:
        return math.inf
    if is_normal(a):
        return 1.0 / (1.0 - spectral_radius(a))
    horizon = k_check(cert.rho)
    total = 0.0
    power = np.eye(a.shape[0])
    for _ in range(horizon):
        total += opnorm(power)
        power = power @ a
    return float(total + cert.m_const * cert.rho**horizon / (1.0 - cert.rho))


def _lambda_min_stationary(gramians: GramianSet) -> float:
    # unstable instances fall back to Gamma_T, the many-trajectory analogue
    return lambda_min(gramians.sigma_inf if gramians.stable else gramians.gamma_T)


def prior_bounds(params: PriorBoundParams, gramians: GramianSet, d: int, m: int, T: int) -> dict[str, float]:
    """Earlier bounds, constant 1: operator-to-Frobenius, excess-risk conversion, non-isotropic operator."""
    _check_mt(m, T)
    n = m * T
    lam_inf = _lambda_min_stationary(gramians)
    k2 = params.k_psi2**2
    return {
        "prior_frob": k2 * d * (d + math.log(1.0 / params.delta)) / (n * lam_inf),
        "prior_excess_conversion": k2 * d**2 / (n * lambda_min(gramians.gamma_T)),
        "prior_op": params.k_vec**2 * d / (n * lam_inf),
    }


def burnin_check(kind, instance: ProblemInstance, gramians: GramianSet, m: int, T: int,
                 q: float = 1.0, constants: BoundConstants | None = None) -> BurninResult:
    """Evaluate one sufficient burn-in condition with its configured constant.

    ``required`` and ``actual`` are both on the scale of m (many-trajectory
    kinds) or mT (stable kinds). Stable kinds also require T >= kappa(A).
    """
    kind = BurninKind(kind)
    c = (constants or BoundConstants()).c_burnin
    d, nu = instance.d, instance.noise.nu
    sw = instance.sigma_w
    sw_op, sw_tr = opnorm(sw), float(np.trace(sw))
    g = gramians.gamma_T
    g_inv = sym_inv(g, name="Gamma_T")
    tr_ginv = float(np.trace(g_inv))
    core = sw_op * tr_ginv + sw_tr * opnorm(g_inv)
    logd = math.log(d) if d > 1 else 0.0
    n = m * T

    def stable_parts():
        _require_stable(gramians)
        return gramians.cert, lambda_min(gramians.sigma_inf), gramians.kappa

    if kind is BurninKind.FROB_MANY:
        req = c * nu**6 * d**3 * sw_op / (q**2 * tr_ginv * lambda_min(g) * sw_tr)
        return BurninResult(kind, req, float(m), m >= req)
    if kind is BurninKind.FROB_STABLE:
        cert, lam, _ = stable_parts()
        req = (c * nu**6 * d**3 * cert.m_const * sw_op**1.5
               / (q**2 * (1 - cert.rho) * tr_ginv * lam**1.5 * sw_tr))
        return BurninResult(kind, req, float(n), n >= req)
    if kind in (BurninKind.OP_MANY, BurninKind.OP_STABLE):
        actual = float(m if kind is BurninKind.OP_MANY else n)
        if logd <= 2.0:
            # the exponent 1 - 2/log(d) is non-positive: no sample size suffices
            return BurninResult(kind, math.inf, actual, False)
        expo = 1.0 - 2.0 / logd
        bars = nu**4 * bar_trace(sw) * bar_trace(g_inv)
        if kind is BurninKind.OP_MANY:
            phi_t = sw_op / lambda_min(g)
            ratio = (bars + nu**6 * d**2 * phi_t / logd**2) / core
            rhs = c * ratio * T ** (2.0 / logd)
        else:
            cert, lam, _ = stable_parts()
            phi_inf = sw_op / lam
            ratio = (bars + nu**6 * d**2 * cert.m_const * phi_inf**1.5 / ((1 - cert.rho) * logd**2)) / core
            rhs = c * ratio
        # actual^expo >= rhs  <=>  actual >= rhs^(1/expo)
        req = rhs ** (1.0 / expo)
        return BurninResult(kind, float(req), actual, actual >= req)
    if kind is BurninKind.THM31_I:
        req = c * d
        return BurninResult(kind, float(req), float(m), m >= req)
    if kind is BurninKind.THM32_I:
        req = c * max(1.0, nu**4) * d
        return BurninResult(kind, float(req), float(m), m >= req)
    cert, lam, kap = stable_parts()
    scale = 1.0 if kind is BurninKind.THM31_II else max(1.0, nu**4)
    req = c * max(kap, scale * cert.m_const / (1 - cert.rho) * math.sqrt(sw_op / lam)) * d
    return BurninResult(kind, float(req), float(n), n >= req and T >= kap)


def rate_report(instance: ProblemInstance, gramians: GramianSet, m: int, T: int, q: float = 1.0,
                prior: PriorBoundParams | None = None, constants: BoundConstants | None = None) -> RateReport:
    """Evaluate every rate and bound for one (instance, m, T).

    Stable-regime theorem terms are used when the instance is strictly stable,
    many-trajectory terms otherwise.
    """
    c = constants or BoundConstants()
    prior = prior or PriorBoundParams()
    if prior.j_a is None:
        prior = PriorBoundParams(prior.k_psi2, prior.k_vec, prior.delta, j_constant(instance.a, gramians.cert))
    regime = Regime.STABLE if gramians.stable else Regime.MANY
    sw = instance.sigma_w
    t31 = thm31_bound(instance, gramians, m, T, q, regime, c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t32 = thm32_bound(instance, gramians, m, T, regime, c)
    pb = prior_bounds(prior, gramians, instance.d, m, T)
    kinds = [BurninKind.FROB_MANY, BurninKind.OP_MANY, BurninKind.THM31_I, BurninKind.THM32_I]
    if gramians.stable:
        kinds += [BurninKind.FROB_STABLE, BurninKind.OP_STABLE, BurninKind.THM31_II, BurninKind.THM32_II]
    burn = {k.value: burnin_check(k, instance, gramians, m, T, q=q, constants=c) for k in kinds}
    used = c.as_dict()
    used.update(q=q, nu=instance.noise.nu, k_psi2=prior.k_psi2, k_vec=prior.k_vec,
                delta=prior.delta, j_a=prior.j_a)
    if gramians.stable:
        used.update(m_const=gramians.cert.m_const, rho=gramians.cert.rho, kappa=float(gramians.kappa))
    return RateReport(
        gamma_f_target=clt_rate_frobenius(sw, gramians.gamma_T, m, T),
        gamma_op_target=clt_rate_operator(sw, gramians.gamma_T, m, T),
        thm31_leading=t31.leading,
        thm31_higher=t31.higher,
        thm32_leading=t32.leading,
        thm32_higher=t32.higher,
        prior_frob=pb["prior_frob"],
        prior_excess_conversion=pb["prior_excess_conversion"],
        prior_op=pb["prior_op"],
        burnin=burn,
        constants_used=used,
    )
