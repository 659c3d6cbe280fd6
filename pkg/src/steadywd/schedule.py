"""Learning-rate, momentum and C^2 schedules plus effective-learning-rate algebra.

All schedules are pure functions of the 1-based step ``t``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

GAMMA_SHAPES = ("constant", "cosine")
ALPHA_KINDS = ("constant", "linear", "synthesized")
ALPHA_MATCHES = ("correct", "erroneous")
AFTER_CLAMP = ("freeze", "resume")
C_SQ_SHAPES = ("constant", "cosine")


def effective_lr(gamma: float, alpha: float) -> float:
    """``gamma * sqrt((2 - alpha) / alpha)``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return gamma * math.sqrt((2.0 - alpha) / alpha)


def erroneous_effective_lr(gamma: float, alpha: float) -> float:
    """``gamma * (2 - alpha) / alpha``; the wrong quantity, kept as a negative control."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return gamma * (2.0 - alpha) / alpha


def alpha_for_effective_lr(gamma: float, gamma_eff_target: float, alpha_max: float = 1.0) -> float:
    """Momentum ``alpha`` at which ``effective_lr(gamma, alpha)`` hits the target, clamped to ``alpha_max``."""
    if not 0.0 < alpha_max <= 1.0:
        raise ValueError(f"alpha_max must be in (0, 1], got {alpha_max}")
    if gamma == 0.0:
        if gamma_eff_target > 0.0:
            raise ValueError("gamma = 0 cannot reach a positive effective learning rate")
        return alpha_max
    ratio = gamma_eff_target / gamma
    return min(2.0 / (ratio * ratio + 1.0), alpha_max)


def _alpha_for_erroneous_lr(gamma: float, target: float, alpha_max: float) -> float:
    if gamma == 0.0:
        if target > 0.0:
            raise ValueError("gamma = 0 cannot reach a positive effective learning rate")
        return alpha_max
    return min(2.0 / (target / gamma + 1.0), alpha_max)


def _cosine(p: float) -> float:
    return 0.5 * (1.0 + math.cos(math.pi * p))


@dataclass(frozen=True)
class ScheduleSet:
    """Time-indexed generators for gamma, alpha and C^2.

    ``alpha_kind``:
      * ``constant``: ``alpha0`` throughout.
      * ``linear``: ``alpha0 -> alpha1`` across all steps.
      * ``synthesized``: after warmup, gamma is held at ``gamma_peak`` and
        alpha rises from ``alpha0`` so the effective learning rate follows
        the ``gamma_shape`` baseline run at constant ``alpha0``; ``alpha1``
        is the clamp ``alpha_max``. ``alpha_match = "erroneous"`` matches
        ``gamma (2 - alpha) / alpha`` instead. Once clamped, gamma either
        stays frozen or resumes decaying to keep matching (``after_clamp``).
    """

    total_steps: int
    warmup_steps: int = 0
    gamma_peak: float = 1.0
    gamma_shape: str = "cosine"
    alpha_kind: str = "constant"
    alpha0: float = 0.1
    alpha1: float = 1.0
    alpha_match: str = "correct"
    after_clamp: str = "freeze"
    c_sq_shape: str = "constant"
    c_sq0: float = 1.0
    c_sq_final: float | None = None

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must be in [0, total_steps]")
        if self.gamma_peak < 0.0 or not math.isfinite(self.gamma_peak):
            raise ValueError("gamma_peak must be finite and >= 0")
        for value, allowed, name in (
            (self.gamma_shape, GAMMA_SHAPES, "gamma_shape"),
            (self.alpha_kind, ALPHA_KINDS, "alpha_kind"),
            (self.alpha_match, ALPHA_MATCHES, "alpha_match"),
            (self.after_clamp, AFTER_CLAMP, "after_clamp"),
            (self.c_sq_shape, C_SQ_SHAPES, "c_sq_shape"),
        ):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")
        for a in (self.alpha0, self.alpha1):
            if not 0.0 < a <= 1.0:
                raise ValueError(f"alpha values must be in (0, 1], got {a}")
        if self.c_sq0 <= 0.0:
            raise ValueError("c_sq0 must be > 0")
        if self.c_sq_shape == "cosine" and (self.c_sq_final is None or self.c_sq_final <= 0.0):
            raise ValueError("cosine C^2 schedule needs c_sq_final > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"step {t} outside [1, {self.total_steps}]")

    def shape_factor(self, t: int) -> float:
        """Baseline gamma schedule divided by ``gamma_peak``, in [0, 1]."""
        self._check_t(t)
        if t <= self.warmup_steps:
            return t / self.warmup_steps
        if self.gamma_shape == "constant":
            return 1.0
        span = self.total_steps - self.warmup_steps
        return _cosine((t - self.warmup_steps) / span)

    def _synth(self, t: int) -> tuple[float, float]:
        """(gamma, alpha) for a synthesized momentum schedule."""
        base_gamma = self.gamma_peak * self.shape_factor(t)
        if t <= self.warmup_steps:
            return base_gamma, self.alpha0
        gamma = self.gamma_peak
        if self.alpha_match == "correct":
            target = effective_lr(base_gamma, self.alpha0)
            alpha = alpha_for_effective_lr(gamma, target, self.alpha1)
            if alpha >= self.alpha1 and self.after_clamp == "resume":
                gamma = target / math.sqrt((2.0 - self.alpha1) / self.alpha1)
        else:
            target = erroneous_effective_lr(base_gamma, self.alpha0)
            alpha = _alpha_for_erroneous_lr(gamma, target, self.alpha1)
            if alpha >= self.alpha1 and self.after_clamp == "resume":
                gamma = target * self.alpha1 / (2.0 - self.alpha1)
        return gamma, alpha

    def clamp_onset(self) -> int | None:
        """First step at which a synthesized alpha hits ``alpha1``; None if never."""
        if self.alpha_kind != "synthesized":
            return None
        for t in range(self.warmup_steps + 1, self.total_steps + 1):
            if self._synth(t)[1] >= self.alpha1:
                return t
        return None


def gamma_at(s: ScheduleSet, t: int) -> float:
    if s.alpha_kind == "synthesized":
        s._check_t(t)
        return s._synth(t)[0]
    return s.gamma_peak * s.shape_factor(t)


def alpha_at(s: ScheduleSet, t: int) -> float:
    s._check_t(t)
    if s.alpha_kind == "constant":
        return s.alpha0
    if s.alpha_kind == "linear":
        p = 0.0 if s.total_steps == 1 else (t - 1) / (s.total_steps - 1)
        return s.alpha0 + (s.alpha1 - s.alpha0) * p
    return s._synth(t)[1]


def c_sq_at(s: ScheduleSet, t: int, c_sq0: float | None = None) -> float:
    """C^2 at step t. ``c_sq0`` overrides the schedule's start value; a cosine
    schedule keeps the ratio ``c_sq_final / s.c_sq0`` for the override."""
    s._check_t(t)
    start = s.c_sq0 if c_sq0 is None else c_sq0
    if s.c_sq_shape == "constant":
        return start
    final = s.c_sq_final * (start / s.c_sq0)
    p = 0.0 if s.total_steps == 1 else (t - 1) / (s.total_steps - 1)
    return final + (start - final) * _cosine(p)


def gamma_eff_at(s: ScheduleSet, t: int) -> float:
    return effective_lr(gamma_at(s, t), alpha_at(s, t))
