"""Problem instances, noise families and multi-trajectory VAR(1) simulation.

Trajectories follow ``x_{t+1} = A x_t + w_t`` with ``x_0 = 0``, so the first
stored state ``x_1`` equals the first noise draw ``w_0``. A batch keeps the
states ``x_1 .. x_{T+1}`` together with the noises ``w_1 .. w_T`` that drive
the regression rows.

Randomness is derived from one master seed. Each replicate and each fixed-size
block of trajectories gets its own stream keyed by ``(seed, replicate, block)``,
so results never depend on how replicates are scheduled across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .errors import DimensionMismatchError
from .linalg import sym_eigh, symmetrize

__all__ = [
    "NoiseFamily",
    "NoiseModel",
    "ProblemInstance",
    "TrajectoryBatch",
    "TRAJECTORY_BLOCK",
    "derive_rng",
    "sample_whitened",
    "sample_noise",
    "whiten",
    "simulate_batch",
    "batch_from_noise",
]

# trajectories per independent random stream
TRAJECTORY_BLOCK = 256

_PRODUCT_LAWS = ("gaussian", "rademacher", "uniform")


class NoiseFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    PRODUCT = "product"
    SPIKE = "spike"
    UNIFORM_BALL = "uniform-ball"


def spike_nu(magnitude: float) -> float:
    """Default sub-Gaussian proxy for the three-point spike law."""
    return magnitude / math.sqrt(2.0 * math.log1p(magnitude**2))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Zero-mean noise law ``w = Sigma_W^{1/2} wbar`` with isotropic ``wbar``.

    ``family_params`` holds ``magnitude`` for the spike family and ``law``
    (one tag, or one tag per coordinate) for the product family.
    """

    family: NoiseFamily
    sigma_w: np.ndarray
    nu: float
    family_params: Mapping[str, object] = field(default_factory=dict)
    sqrt_cov: np.ndarray = field(init=False, repr=False)
    inv_sqrt_cov: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        family = NoiseFamily(self.family)
        sigma = np.atleast_2d(np.asarray(self.sigma_w, dtype=float))
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise DimensionMismatchError(f"sigma_w must be square, got shape {sigma.shape}")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-14 * np.abs(sigma).max()):
            raise ValueError("sigma_w must be symmetric")
        sigma = symmetrize(sigma)
        evals, evecs = sym_eigh(sigma, rel_floor=1e-12, name="sigma_w")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ValueError(f"nu must be positive and finite, got {self.nu}")
        params = dict(self.family_params)
        d = sigma.shape[0]
        if family is NoiseFamily.SPIKE:
            mag = float(params.get("magnitude", 1.0))
            if mag < 1.0:
                raise ValueError(f"spike magnitude must be >= 1, got {mag}")
            params["magnitude"] = mag
        elif family is NoiseFamily.PRODUCT:
            law = params.get("law", "rademacher")
            laws = (law,) * d if isinstance(law, str) else tuple(law)
            if len(laws) != d or any(x not in _PRODUCT_LAWS for x in laws):
                raise ValueError(f"product law must be one of {_PRODUCT_LAWS} (or d of them), got {law!r}")
            params["law"] = laws
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "sigma_w", sigma)
        object.__setattr__(self, "family_params", params)
        object.__setattr__(self, "sqrt_cov", (evecs * np.sqrt(evals)) @ evecs.T)
        object.__setattr__(self, "inv_sqrt_cov", (evecs / np.sqrt(evals)) @ evecs.T)

    @property
    def d(self) -> int:
        return self.sigma_w.shape[0]

    @classmethod
    def create(cls, family, sigma_w, nu: float | None = None, **family_params) -> "NoiseModel":
        """Build a model, filling in the family's default ``nu`` when omitted."""
        family = NoiseFamily(family)
        if nu is None:
            if family is NoiseFamily.SPIKE:
                nu = spike_nu(float(family_params.get("magnitude", 1.0)))
            else:
                nu = 1.0
        return cls(family, sigma_w, float(nu), family_params)

    @classmethod
    def gaussian(cls, sigma_w, nu: float | None = None) -> "NoiseModel":
        return cls.create(NoiseFamily.GAUSSIAN, sigma_w, nu)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """The pair (A, W): dynamics matrix plus noise law."""

    a: np.ndarray
    noise: NoiseModel

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if a.shape != (self.noise.d, self.noise.d):
            raise DimensionMismatchError(
                f"A has shape {a.shape} but sigma_w is {self.noise.d}x{self.noise.d}"
            )
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def d(self) -> int:
        return self.a.shape[0]

    @property
    def sigma_w(self) -> np.ndarray:
        return self.noise.sigma_w


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """``m`` trajectories: ``states[i, t-1] = x_t`` for t = 1..T+1, ``noises[i, t-1] = w_t`` for t = 1..T."""

    states: np.ndarray
    noises: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.states.ndim != 3 or self.noises.ndim != 3:
            raise DimensionMismatchError("states and noises must be (m, T+1, d) and (m, T, d)")
        m, tp1, d = self.states.shape
        if self.noises.shape != (m, tp1 - 1, d):
            raise DimensionMismatchError(
                f"noises shape {self.noises.shape} does not match states {self.states.shape}"
            )

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.noises.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def x(self) -> np.ndarray:
        """Design matrix X (mT x d), rows x_t^{(i)} for t = 1..T, trajectory-major."""
        return self.states[:, :-1, :].reshape(-1, self.d)

    @property
    def y(self) -> np.ndarray:
        """Response matrix Y (mT x d), rows x_{t+1}^{(i)}."""
        return self.states[:, 1:, :].reshape(-1, self.d)

    @property
    def w(self) -> np.ndarray:
        """Noise matrix W (mT x d), rows w_t^{(i)} aligned with X."""
        return self.noises.reshape(-1, self.d)

    @property
    def initial_noise(self) -> np.ndarray:
        """w_0 per trajectory, equal to x_1 because x_0 = 0."""
        return self.states[:, 0, :]

    def recursion_residual(self, a: np.ndarray) -> float:
        """max_{i,t} ||x_{t+1} - A x_t - w_t||."""
        resid = self.states[:, 1:, :] - self.states[:, :-1, :] @ np.asarray(a).T - self.noises
        return float(np.max(np.linalg.norm(resid, axis=-1))) if resid.size else 0.0


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream addressed by ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))))


def _sample_product_coords(laws, rng: np.random.Generator, shape) -> np.ndarray:
    out = np.empty(tuple(shape) + (len(laws),))
    for j, law in enumerate(laws):
        if law == "gaussian":
            out[..., j] = rng.standard_normal(shape)
        elif law == "rademacher":
            out[..., j] = rng.integers(0, 2, size=shape) * 2.0 - 1.0
        else:
            out[..., j] = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=shape)
    return out


def sample_whitened(model: NoiseModel, rng: np.random.Generator, shape=()) -> np.ndarray:
    """Draw isotropic ``wbar`` samples with shape ``shape + (d,)``."""
    shape = tuple(np.atleast_1d(shape)) if shape != () else ()
    d = model.d
    fam = model.family
    if fam is NoiseFamily.GAUSSIAN:
        return rng.standard_normal(shape + (d,))
    if fam is NoiseFamily.PRODUCT:
        return _sample_product_coords(model.family_params["law"], rng, shape)
    if fam is NoiseFamily.SPIKE:
        mag = model.family_params["magnitude"]
        u = rng.random(shape + (d,))
        p = 1.0 / (2.0 * mag * mag)
        return np.where(u < p, -mag, np.where(u < 2.0 * p, mag, 0.0))
    # uniform on the ball of radius sqrt(d + 2), whose covariance is the identity
    g = rng.standard_normal(shape + (d,))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    radius = math.sqrt(d + 2.0) * rng.random(shape + (1,)) ** (1.0 / d)
    return g * radius


def sample_noise(model: NoiseModel, rng: np.random.Generator, shape=()) -> np.ndarray:
    """Draw ``w = Sigma_W^{1/2} wbar``; a single d-vector when ``shape == ()``."""
    return sample_whitened(model, rng, shape) @ model.sqrt_cov.T


def whiten(model: NoiseModel, w: np.ndarray) -> np.ndarray:
    """Apply ``Sigma_W^{-1/2}`` (symmetric root) to one vector or a stack of row vectors."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != model.d:
        raise DimensionMismatchError(f"expected trailing dimension {model.d}, got {w.shape}")
    return w @ model.inv_sqrt_cov.T


def _propagate(a: np.ndarray, w_full: np.ndarray) -> np.ndarray:
    """States x_1..x_{T+1} from noises w_0..w_T (shape (m, T+1, d))."""
    if np.count_nonzero(a - np.diag(np.diag(a))) == 0:
        # diagonal dynamics: one scalar AR(1) filter per coordinate
        states = np.empty_like(w_full)
        for j in range(a.shape[0]):
            states[:, :, j] = lfilter([1.0], [1.0, -a[j, j]], w_full[:, :, j], axis=1)
        return states
    states = np.empty_like(w_full)
    states[:, 0, :] = w_full[:, 0, :]
    at = a.T
    for t in range(1, w_full.shape[1]):
        states[:, t, :] = w_full[:, t, :] + states[:, t - 1, :] @ at
    return states


def batch_from_noise(instance: ProblemInstance, noise: np.ndarray, seed: int | None = None) -> TrajectoryBatch:
    """Run the recursion on given noises ``w_0..w_T`` of shape (m, T+1, d)."""
    noise = np.asarray(noise, dtype=float)
    if noise.ndim != 3 or noise.shape[2] != instance.d or noise.shape[1] < 2:
        raise DimensionMismatchError(f"noise must have shape (m, T+1, {instance.d}) with T >= 1")
    states = _propagate(instance.a, noise)
    return TrajectoryBatch(states=states, noises=noise[:, 1:, :].copy(), seed=seed)


def simulate_batch(instance: ProblemInstance, m: int, T: int, seed: int, replicate=0) -> TrajectoryBatch:
    """Simulate ``m`` independent trajectories of length ``T + 1``.

    ``replicate`` is an integer or a tuple of integers addressing the stream.
    """
    if m < 1 or T < 1:
        raise ValueError(f"need m >= 1 and T >= 1, got m={m}, T={T}")
    keys = tuple(replicate) if isinstance(replicate, (tuple, list)) else (replicate,)
    blocks = []
    for b, start in enumerate(range(0, m, TRAJECTORY_BLOCK)):
        size = min(TRAJECTORY_BLOCK, m - start)
        rng = derive_rng(seed, *keys, b)
        blocks.append(sample_noise(instance.noise, rng, (size, T + 1)))
    noise = blocks[0] if len(blocks) == 1 else np.concatenate(blocks, axis=0)
    return batch_from_noise(instance, noise, seed=seed)
