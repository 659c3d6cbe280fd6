"""Update engines: AdamW, AdamC, renormalized AdamW, constrained Scion and ScionC.

The ``*_step`` functions are the per-tensor kernels. They return the new
weights, mutate the optimizer state in place and leave the state untouched
when the gradient is not finite. The classes at the bottom drive the
kernels over a dict of named parameters with schedules attached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DEFAULT_POLAR_ITERS
from .lmo import DegenerateMomentumError, NormFamily, lmo
from .schedule import ScheduleSet, alpha_at, c_sq_at, gamma_at


class NonFiniteGradientError(ValueError):
    pass


@dataclass
class HyperParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 0.1
    lam: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be > 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.lam < 0.0:
            raise ValueError("lam must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    # last computed update u_t, kept for <theta, u> diagnostics
    u: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, theta: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(theta, dtype=float), np.zeros_like(theta, dtype=float))


@dataclass
class ScionState:
    m: np.ndarray
    t: int = 0
    u: np.ndarray | None = None
    skipped: int = 0

    @classmethod
    def zeros_like(cls, theta: np.ndarray) -> "ScionState":
        return cls(np.zeros_like(theta, dtype=float))


@dataclass(frozen=True)
class LayerSpec:
    """Per-tensor configuration.

    ``gamma_scale`` is the peak layer-wise learning rate. The tensor uses
    corrected decay when ``c_sq`` is set and it is not ``correction_exempt``;
    otherwise it decays with the fixed ``lambda_fixed``.
    """

    name: str
    family: NormFamily
    gamma_scale: float = 1.0
    lambda_fixed: float = 0.0
    c_sq: float | None = None
    correction_exempt: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", NormFamily(self.family))
        if self.gamma_scale <= 0.0:
            raise ValueError(f"{self.name}: gamma_scale must be > 0")
        if self.lambda_fixed < 0.0:
            raise ValueError(f"{self.name}: lambda_fixed must be >= 0")
        if self.c_sq is not None and self.c_sq <= 0.0:
            raise ValueError(f"{self.name}: c_sq must be > 0")

    @property
    def decay_mode(self) -> str:
        if self.c_sq is not None and not self.correction_exempt:
            return "corrected"
        return "fixed"


def _check_grad(grad: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("non-finite gradient")
    return grad


def _adam_update(grad: np.ndarray, state: AdamState, hp: HyperParams) -> np.ndarray:
    t = state.t + 1
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * grad
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * grad * grad
    m_hat = m / (1.0 - hp.beta1**t)
    v_hat = v / (1.0 - hp.beta2**t)
    u = m_hat / (np.sqrt(v_hat) + hp.eps)
    state.m, state.v, state.t, state.u = m, v, t, u
    return u


def adamw_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    gamma_t: float,
    lam: float,
    hp: HyperParams,
) -> np.ndarray:
    if gamma_t < 0.0:
        raise ValueError("gamma_t must be >= 0")
    grad = _check_grad(grad)
    u = _adam_update(grad, state, hp)
    return theta - gamma_t * (lam * theta + u)


def adamc_lambda(gamma_t: float, gamma_max: float, lambda_base: float, exempt: bool = False) -> float:
    """Weight decay proportional to the scheduled learning rate."""
    if gamma_max <= 0.0:
        raise ValueError("gamma_max must be > 0")
    if exempt:
        return lambda_base
    return lambda_base * gamma_t / gamma_max


def renorm_adamw_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    gamma_t: float,
    lam: float,
    hp: HyperParams,
    eps_norm: float = 1e-8,
) -> np.ndarray:
    """AdamW step that keeps only the parallel component's effect on the norm.

    Decay is applied first; the Adam step is then taken from the decayed
    weights and rescaled so the norm is ``| |theta_pre| - gamma u_par |``.
    """
    if gamma_t < 0.0:
        raise ValueError("gamma_t must be >= 0")
    grad = _check_grad(grad)
    u = _adam_update(grad, state, hp)
    pre = theta - gamma_t * lam * theta
    post = pre - gamma_t * u
    pre_norm = float(np.linalg.norm(pre))
    if pre_norm >= eps_norm:
        u_par = float(np.vdot(pre, u)) / pre_norm
        post = post * (abs(pre_norm - gamma_t * u_par) / (float(np.linalg.norm(post)) + eps_norm))
    return post


def _scion_update(
    theta: np.ndarray,
    grad: np.ndarray,
    state: ScionState,
    gamma_l: float,
    lambda_l: float,
    alpha: float,
    family: NormFamily,
    polar_iters: int,
) -> np.ndarray:
    if gamma_l < 0.0 or lambda_l < 0.0:
        raise ValueError("gamma and lambda must be >= 0")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    grad = _check_grad(grad)
    state.m = (1.0 - alpha) * state.m + alpha * grad
    state.t += 1
    try:
        direction = lmo(state.m, family, polar_iters).update
    except DegenerateMomentumError:
        state.skipped += 1
        state.u = np.zeros_like(state.m)
        return theta
    # u is the descent direction in the theta_t = (1 - eta) theta - gamma u convention
    state.u = -direction
    return theta + gamma_l * (-lambda_l * theta + direction)


def scion_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: ScionState,
    gamma_l: float,
    lambda_l: float,
    hp: HyperParams,
    layer: LayerSpec,
    polar_iters: int = DEFAULT_POLAR_ITERS,
) -> np.ndarray:
    """Constrained Scion in the (gamma_l, lambda_l) parameterization.

    An exactly-zero momentum leaves the weights untouched for the step.
    """
    return _scion_update(theta, grad, state, gamma_l, lambda_l, hp.alpha, layer.family, polar_iters)


def scionc_lambda(
    gamma_tl: float,
    alpha_t: float,
    c_sq: float | None,
    layer: LayerSpec,
    lambda_fixed: float,
) -> float:
    """Corrected decay ``(2 - alpha) gamma / (2 alpha C^2)``; exempt layers get ``lambda_fixed``."""
    if layer.correction_exempt:
        return lambda_fixed
    if c_sq is None or c_sq <= 0.0:
        raise ValueError(f"{layer.name}: C^2 must be > 0, got {c_sq}")
    if not 0.0 < alpha_t <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return (2.0 - alpha_t) * (gamma_tl / c_sq) / (2.0 * alpha_t)


def scionc_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: ScionState,
    gamma_tl: float,
    alpha_t: float,
    c_sq_tl: float | None,
    layer: LayerSpec,
    lambda_fixed: float,
    polar_iters: int = DEFAULT_POLAR_ITERS,
) -> np.ndarray:
    lam = scionc_lambda(gamma_tl, alpha_t, c_sq_tl, layer, lambda_fixed)
    return _scion_update(theta, grad, state, gamma_tl, lam, alpha_t, layer.family, polar_iters)


# ---------------------------------------------------------------------------
# Multi-tensor drivers


@dataclass
class StepRecord:
    """What one optimizer step did to one tensor."""

    gamma: float
    alpha: float
    lam: float
    theta_dot_u: float


class Optimizer:
    """Base driver: owns per-tensor state, pulls rates from a :class:`ScheduleSet`."""

    name = "base"

    def __init__(self, layers: list[LayerSpec], schedule: ScheduleSet, hp: HyperParams | None = None):
        self.layers = {spec.name: spec for spec in layers}
        self.schedule = schedule
        self.hp = hp or HyperParams()
        self.state: dict[str, AdamState | ScionState] = {}
        self.t = 0

    def gamma_for(self, spec: LayerSpec, t: int) -> float:
        peak = self.schedule.gamma_peak
        if peak == 0.0:
            return 0.0
        return spec.gamma_scale * gamma_at(self.schedule, t) / peak

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, StepRecord]:
        t = self.t + 1
        new: dict[str, np.ndarray] = {}
        records: dict[str, StepRecord] = {}
        for name, spec in self.layers.items():
            theta = params[name]
            new[name], records[name] = self._step_one(spec, theta, grads[name], t)
        params.update(new)
        self.t = t
        return records

    def _step_one(self, spec, theta, grad, t):  # pragma: no cover - abstract
        raise NotImplementedError

    def _dot(self, theta: np.ndarray, st) -> float:
        return float(np.vdot(theta, st.u)) if st.u is not None else 0.0


class AdamW(Optimizer):
    name = "adamw"

    def _lambda(self, spec: LayerSpec, gamma: float) -> float:
        return spec.lambda_fixed

    def _kernel(self, theta, grad, st, gamma, lam):
        return adamw_step(theta, grad, st, gamma, lam, self.hp)

    def _step_one(self, spec, theta, grad, t):
        st = self.state.setdefault(spec.name, AdamState.zeros_like(theta))
        gamma = self.gamma_for(spec, t)
        lam = self._lambda(spec, gamma)
        out = self._kernel(theta, grad, st, gamma, lam)
        return out, StepRecord(gamma, float("nan"), lam, self._dot(theta, st))


class AdamC(AdamW):
    """AdamW with ``lambda_t = lambda * gamma_t / gamma_max`` on non-exempt tensors."""

    name = "adamc"

    def _lambda(self, spec, gamma):
        return adamc_lambda(gamma, spec.gamma_scale, spec.lambda_fixed, spec.correction_exempt)


class RenormAdamW(AdamW):
    name = "renorm-adamw"

    def __init__(self, layers, schedule, hp=None, eps_norm: float = 1e-8):
        super().__init__(layers, schedule, hp)
        self.eps_norm = eps_norm

    def _kernel(self, theta, grad, st, gamma, lam):
        return renorm_adamw_step(theta, grad, st, gamma, lam, self.hp, self.eps_norm)


class Scion(Optimizer):
    """Constrained Scion with fixed per-layer ``lambda_fixed``."""

    name = "scion"

    def __init__(self, layers, schedule, hp=None, polar_iters: int = DEFAULT_POLAR_ITERS):
        super().__init__(layers, schedule, hp)
        self.polar_iters = polar_iters

    def _step_one(self, spec, theta, grad, t):
        st = self.state.setdefault(spec.name, ScionState.zeros_like(theta))
        gamma = self.gamma_for(spec, t)
        alpha = alpha_at(self.schedule, t)
        out = _scion_update(theta, grad, st, gamma, spec.lambda_fixed, alpha, spec.family, self.polar_iters)
        return out, StepRecord(gamma, alpha, spec.lambda_fixed, self._dot(theta, st))


class ScionC(Scion):
    """Scion with decay ``lambda_{t,l} = (2 - alpha_t) gamma_{t,l} / (2 alpha_t C^2_{t,l})``."""

    name = "scionc"

    def _step_one(self, spec, theta, grad, t):
        st = self.state.setdefault(spec.name, ScionState.zeros_like(theta))
        gamma = self.gamma_for(spec, t)
        alpha = alpha_at(self.schedule, t)
        if spec.decay_mode == "corrected":
            c_sq = c_sq_at(self.schedule, t, spec.c_sq)
            lam = scionc_lambda(gamma, alpha, c_sq, spec, spec.lambda_fixed)
        else:
            lam = spec.lambda_fixed
        out = _scion_update(theta, grad, st, gamma, lam, alpha, spec.family, self.polar_iters)
        return out, StepRecord(gamma, alpha, lam, self._dot(theta, st))


OPTIMIZERS: dict[str, type[Optimizer]] = {
    cls.name: cls for cls in (AdamW, AdamC, RenormAdamW, Scion, ScionC)
}
