"""Replication engine: risk estimates, CLT covariance checks, rate sweeps and gap tables.

Replicate ``r`` of grid point ``g`` always draws from the stream keyed by
``(seed, g, r)``, and results are reduced in replicate order, so the output
does not depend on the number of worker threads.
"""

from __future__ import annotations

import enum
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bounds import (
    AsymptoticRegime,
    PriorBoundParams,
    asymptotic_covariance,
    clt_rate_frobenius,
    clt_rate_operator,
    prior_bounds,
)
from .errors import SingularGramError
from .estimator import ols_fit, schatten_norm, weighted_sq_norm
from .gramians import GramianSet, compute_gramians
from .model import ProblemInstance, simulate_batch
from .presets import build_preset

__all__ = [
    "THREADS_ENV",
    "MAX_FAILURE_FRACTION",
    "Norm",
    "MCResult",
    "ExperimentConfig",
    "resolve_threads",
    "run_replicates",
    "estimate_risk",
    "clt_covariance_check",
    "rate_sweep",
    "loglog_slope",
    "gap_demonstration",
]

THREADS_ENV = "SYSID_CLT_THREADS"
MAX_FAILURE_FRACTION = 0.01


class Norm(str, enum.Enum):
    FROB_SQ = "frob"
    OP_SQ = "op"
    SCHATTEN_SQ = "schatten"
    WEIGHTED_SQ = "weighted"


@dataclass(frozen=True)
class MCResult:
    mean: float
    stderr: float
    n: int
    failures: int = 0

    @property
    def accepted(self) -> bool:
        return self.failures <= MAX_FAILURE_FRACTION * self.n


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else $SYSID_CLT_THREADS, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    return max(1, int(threads))


def run_replicates(fn: Callable[[int], object], N: int, threads: int | None = None) -> list:
    """``[fn(0), ..., fn(N-1)]``; singular-Gram replicates come back as None."""

    def safe(r):
        try:
            return fn(r)
        except SingularGramError:
            return None

    threads = resolve_threads(threads)
    if threads == 1:
        return [safe(r) for r in range(N)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(safe, range(N)))


def _summarize(values: list, N: int) -> MCResult:
    good = np.array([v for v in values if v is not None], dtype=float)
    failures = N - good.size
    if good.size == 0:
        raise SingularGramError(f"all {N} replicates had a singular Gram matrix")
    stderr = float(good.std(ddof=1) / math.sqrt(good.size)) if good.size > 1 else math.inf
    return MCResult(mean=float(good.mean()), stderr=stderr, n=N, failures=failures)


def _norm_fn(norm, p, gamma_T) -> Callable[[np.ndarray], float]:
    norm = Norm(norm)
    if norm is Norm.FROB_SQ:
        return lambda dlt: float(np.sum(dlt * dlt))
    if norm is Norm.OP_SQ:
        return lambda dlt: float(np.linalg.norm(dlt, 2) ** 2)
    if norm is Norm.SCHATTEN_SQ:
        if p is None:
            raise ValueError("Schatten norm needs p")
        return lambda dlt: schatten_norm(dlt, p) ** 2
    return lambda dlt: weighted_sq_norm(dlt, gamma_T)


def estimate_risk(instance: ProblemInstance, m: int, T: int, norm=Norm.FROB_SQ, N: int = 200, seed: int = 0,
                  p: float | None = None, threads: int | None = None, stream: int = 0,
                  gramians: GramianSet | None = None) -> MCResult:
    """Mean and standard error of the squared estimation error over N independent batches."""
    if N < 2:
        raise ValueError("need N >= 2 replicates")
    gamma = None
    if Norm(norm) is Norm.WEIGHTED_SQ:
        gamma = (gramians or compute_gramians(instance, T)).gamma_T
    f = _norm_fn(norm, p, gamma)

    def one(r):
        batch = simulate_batch(instance, m, T, seed, replicate=(stream, r))
        return f(ols_fit(batch) - instance.a)

    return _summarize(run_replicates(one, N, threads), N)


def _scaling(regime: AsymptoticRegime, m: int, T: int) -> float:
    if regime is AsymptoticRegime.FIXED_T:
        return math.sqrt(m)
    if regime is AsymptoticRegime.STABLE:
        return math.sqrt(T)
    return math.sqrt(m * T)


def clt_covariance_check(instance: ProblemInstance, regime, m: int, T: int, N: int = 500, seed: int = 0,
                         threads: int | None = None, stream: int = 0) -> dict:
    """Sample covariance of the scaled vec(Delta) against the Kronecker limit.

    vec stacks columns. ``rel_dist`` is the relative Frobenius distance.
    """
    regime = AsymptoticRegime(regime)
    gram = compute_gramians(instance, T)
    row, col = asymptotic_covariance(regime, gram, m, T)
    predicted = np.kron(row, col)
    scale = _scaling(regime, m, T)

    def one(r):
        batch = simulate_batch(instance, m, T, seed, replicate=(stream, r))
        return scale * (ols_fit(batch) - instance.a).flatten(order="F")

    vecs = [v for v in run_replicates(one, N, threads) if v is not None]
    if len(vecs) < 2:
        raise SingularGramError("fewer than two usable replicates")
    sample = np.atleast_2d(np.cov(np.array(vecs), rowvar=False))
    rel = float(np.linalg.norm(sample - predicted) / np.linalg.norm(predicted))
    return {"rel_dist": rel, "scaled_cov": sample, "predicted": predicted, "failures": N - len(vecs)}


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _gamma_target(norm, sigma_w, gamma_T, m, T) -> float:
    if Norm(norm) is Norm.OP_SQ:
        return clt_rate_operator(sigma_w, gamma_T, m, T)
    return clt_rate_frobenius(sigma_w, gamma_T, m, T)


def rate_sweep(instance: ProblemInstance, axis: str, values: Sequence[int], fixed: int, norm=Norm.FROB_SQ,
               N: int = 200, seed: int = 0, prior: PriorBoundParams | None = None,
               threads: int | None = None) -> tuple[list[dict], float]:
    """Measured risk along one axis (``"m"`` or ``"T"``), with targets, prior bounds and the log-log slope in mT."""
    if axis not in ("m", "T"):
        raise ValueError(f"axis must be 'm' or 'T', got {axis!r}")
    prior = prior or PriorBoundParams()
    rows = []
    gram_cache: dict[int, GramianSet] = {}
    for g, val in enumerate(values):
        m, T = (val, fixed) if axis == "m" else (fixed, val)
        if T not in gram_cache:
            gram_cache[T] = compute_gramians(instance, T)
        gram = gram_cache[T]
        res = estimate_risk(instance, m, T, norm, N, seed, threads=threads, stream=g, gramians=gram)
        target = _gamma_target(norm, instance.sigma_w, gram.gamma_T, m, T)
        pb = prior_bounds(prior, gram, instance.d, m, T)
        prior_key = "prior_op" if Norm(norm) is Norm.OP_SQ else "prior_frob"
        rows.append({
            "m": m, "T": T, "measured": res.mean, "stderr": res.stderr, "failures": res.failures,
            "gamma_target": target, **pb,
            "ratio_measured": res.mean / target, "ratio_prior": pb[prior_key] / target,
        })
    slope = loglog_slope([r["m"] * r["T"] for r in rows], [r["measured"] for r in rows])
    return rows, slope


def gap_demonstration(preset: str, d_list: Sequence[int], T: int, m: int = 1, N: int = 200, seed: int = 0,
                      prior: PriorBoundParams | None = None, threads: int | None = None) -> list[dict]:
    """Per dimension: measured risk, CLT target, prior bound and both ratios.

    ``frob-gap`` scores the Frobenius error against the operator-to-Frobenius
    prior bound; ``op-gap`` scores the operator error against the
    non-isotropic operator prior bound.
    """
    if list(d_list) != sorted(d_list):
        raise ValueError("d_list must be ascending")
    if preset not in ("frob-gap", "op-gap"):
        raise ValueError(f"gap demonstration supports frob-gap and op-gap, got {preset!r}")
    prior = prior or PriorBoundParams()
    op = preset == "op-gap"
    norm = Norm.OP_SQ if op else Norm.FROB_SQ
    rows = []
    for g, d in enumerate(d_list):
        inst = build_preset(preset, d)
        gram = compute_gramians(inst, T)
        res = estimate_risk(inst, m, T, norm, N, seed, threads=threads, stream=g, gramians=gram)
        target = _gamma_target(norm, inst.sigma_w, gram.gamma_T, m, T)
        pb = prior_bounds(prior, gram, d, m, T)
        bound = pb["prior_op" if op else "prior_frob"]
        tag = "op" if op else "f"
        rows.append({
            "d": d, "measured": res.mean, "stderr": res.stderr,
            f"gamma_{tag}": target, ("prior_op" if op else "prior_frob"): bound,
            "ratio_prior": bound / target, "ratio_measured": res.mean / target,
            "failures": res.failures,
        })
    return rows


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment, loadable from JSON.

    Either ``preset`` or both ``a`` and ``sigma_w`` (nested row-major lists)
    must be given.
    """

    preset: str | None = None
    d: int | None = None
    a: list | None = None
    sigma_w: list | None = None
    family: str = "gaussian"
    nu: float | None = None
    family_params: dict = field(default_factory=dict)
    sigma: float = 1.0
    m_grid: list[int] = field(default_factory=lambda: [1])
    T_grid: list[int] = field(default_factory=lambda: [1000])
    norms: list[str] = field(default_factory=lambda: ["frob"])
    N: int = 200
    seed: int | None = None
    constants: dict = field(default_factory=dict)
    output: str | None = None

    def __post_init__(self):
        if not self.m_grid or not self.T_grid:
            raise ValueError("grids must be non-empty")
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.preset is None and (self.a is None or self.sigma_w is None):
            raise ValueError("config needs a preset or explicit a and sigma_w")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def instance(self) -> ProblemInstance:
        from .model import NoiseModel

        if self.a is not None:
            noise = NoiseModel.create(self.family, np.array(self.sigma_w, dtype=float), self.nu, **self.family_params)
            return ProblemInstance(np.array(self.a, dtype=float), noise)
        return build_preset(self.preset, self.d, self.sigma, self.family, self.nu, **self.family_params)
