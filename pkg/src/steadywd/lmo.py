"""Linear minimization oracles for the Sign, Spectral and Bias layer norms."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .linalg import (
    DEFAULT_POLAR_ITERS,
    DegenerateInputError,
    polar_factor,
    rms_norm,
    sign_norm,
)


class NormFamily(str, enum.Enum):
    SIGN = "sign"
    SPECTRAL = "spectral"
    BIAS = "bias"


class DegenerateMomentumError(ValueError):
    """The LMO is undefined for an exactly-zero input."""


@dataclass(frozen=True)
class LmoOutput:
    update: np.ndarray
    family: NormFamily


def lmo_sign(m: np.ndarray) -> LmoOutput:
    m = np.asarray(m, dtype=float)
    return LmoOutput(-np.sign(m) / m.shape[1], NormFamily.SIGN)


def lmo_spectral(m: np.ndarray, iters: int = DEFAULT_POLAR_ITERS) -> LmoOutput:
    m = np.asarray(m, dtype=float)
    d_out, d_in = m.shape
    try:
        polar = polar_factor(m, iters)
    except DegenerateInputError as exc:
        raise DegenerateMomentumError("degenerate momentum: zero matrix") from exc
    return LmoOutput(-np.sqrt(d_out / d_in) * polar, NormFamily.SPECTRAL)


def lmo_bias(m: np.ndarray) -> LmoOutput:
    m = np.asarray(m, dtype=float)
    r = rms_norm(m)
    if r == 0.0:
        raise DegenerateMomentumError("degenerate momentum: zero vector")
    return LmoOutput(-m / r, NormFamily.BIAS)


def lmo(m: np.ndarray, family: NormFamily, polar_iters: int = DEFAULT_POLAR_ITERS) -> LmoOutput:
    family = NormFamily(family)
    if family is NormFamily.SIGN:
        return lmo_sign(m)
    if family is NormFamily.SPECTRAL:
        return lmo_spectral(m, polar_iters)
    return lmo_bias(m)


def scaled_spectral_norm(a: np.ndarray) -> float:
    """Full-accuracy ``sqrt(d_in/d_out) * sigma_max`` (no persisted state)."""
    a = np.asarray(a, dtype=float)
    if not np.any(a):
        return 0.0
    d_out, d_in = a.shape
    return float(np.sqrt(d_in / d_out) * np.linalg.norm(a, ord=2))


def family_norm(w: np.ndarray, family: NormFamily) -> float:
    family = NormFamily(family)
    w = np.asarray(w, dtype=float)
    if family is NormFamily.BIAS:
        if w.ndim != 1:
            raise ValueError(f"Bias norm needs a vector, got shape {w.shape}")
        return rms_norm(w)
    if w.ndim != 2:
        raise ValueError(f"{family.value} norm needs a matrix, got shape {w.shape}")
    if family is NormFamily.SIGN:
        return sign_norm(w)
    return scaled_spectral_norm(w)
