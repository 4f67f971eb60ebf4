"""Named scenario presets used by the CLI and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import NoiseModel, ProblemInstance

__all__ = ["ScenarioPreset", "PRESETS", "build_preset", "rotation_blocks"]


def rotation_blocks(d: int, angle: float = math.pi / 6) -> np.ndarray:
    """Block-diagonal orthogonal matrix of 2x2 rotations (a trailing 1 when d is odd)."""
    out = np.eye(d)
    c, s = math.cos(angle), math.sin(angle)
    for k in range(0, d - 1, 2):
        out[k:k + 2, k:k + 2] = [[c, -s], [s, c]]
    return out


def _noise(sigma_w, family: str, nu, params) -> NoiseModel:
    return NoiseModel.create(family, sigma_w, nu, **params)


def _frob_gap(d, sigma, family, nu, params):
    i = np.arange(1, d + 1, dtype=float)
    return ProblemInstance(np.diag(np.sqrt(1.0 - 1.0 / i**2)), _noise(sigma**2 * np.eye(d), family, nu, params))


def _op_gap(d, sigma, family, nu, params):
    i = np.arange(1, d + 1, dtype=float)
    return ProblemInstance(np.diag(np.sqrt(1.0 - 1.0 / i**4)), _noise(sigma**2 * np.diag(i**-2), family, nu, params))


def _random_walk(d, sigma, family, nu, params):
    return ProblemInstance(np.eye(d), _noise(sigma**2 * np.eye(d), family, nu, params))


def _scalar_stable(d, sigma, family, nu, params):
    return ProblemInstance(0.5 * np.eye(d), _noise(sigma**2 * np.eye(d), family, nu, params))


def _isotropic_stable(d, sigma, family, nu, params):
    return ProblemInstance(0.9 * rotation_blocks(d), _noise(sigma**2 * np.eye(d), family, nu, params))


def _zero(d, sigma, family, nu, params):
    return ProblemInstance(np.zeros((d, d)), _noise(sigma**2 * np.eye(d), family, nu, params))


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    description: str
    builder: Callable
    default_d: int
    default_m: int
    default_T: int


PRESETS: dict[str, ScenarioPreset] = {
    p.name: p
    for p in (
        ScenarioPreset("frob-gap", "A = diag(sqrt(1 - 1/i^2)), Sigma_W = sigma^2 I", _frob_gap, 32, 1, 2000),
        ScenarioPreset("op-gap", "A = diag(sqrt(1 - 1/i^4)), Sigma_W = sigma^2 diag(i^-2)", _op_gap, 32, 1, 1000),
        ScenarioPreset("random-walk", "A = I, Sigma_W = sigma^2 I", _random_walk, 2, 1, 1000),
        ScenarioPreset("scalar-stable", "A = 0.5 I, Sigma_W = sigma^2 I", _scalar_stable, 1, 1, 5000),
        ScenarioPreset("isotropic-stable", "A = 0.9 * block rotation, Sigma_W = sigma^2 I", _isotropic_stable, 4, 1, 1000),
        ScenarioPreset("zero", "A = 0, Sigma_W = sigma^2 I", _zero, 3, 100, 1),
    )
}


def build_preset(name: str, d: int | None = None, sigma: float = 1.0, family: str = "gaussian",
                 nu: float | None = None, **family_params) -> ProblemInstance:
    """Instantiate preset ``name`` at dimension ``d`` (preset default when None)."""
    try:
        preset = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    d = preset.default_d if d is None else int(d)
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return preset.builder(d, float(sigma), family, nu, family_params)
