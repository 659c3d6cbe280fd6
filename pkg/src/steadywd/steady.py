"""Closed-form steady-state weight norms and the random-walk simulators that check them.

Conventions: every ``c_sq`` is a *squared* update norm, ``E[|u|^2]``. For
i.i.d. standard-normal updates of dimension ``d`` that is ``d``; for
RMS-normalized updates it is exactly ``d``.

The simulated system is ``theta_t = (1 - eta_t) theta_{t-1} - gamma_t u_t``
with ``theta_0 = 0``, where the decay ``eta_t`` is either coupled to the
learning rate (``gamma_t * lam``), independent (``eta``) or corrected
(``lam * gamma_t^2 / gamma_peak``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

UPDATE_KINDS = ("gaussian_iid", "momentum_gaussian", "momentum_rms_normalized", "adam")
DECAY_MODES = ("coupled", "independent", "corrected")
GAMMA_SHAPES = ("constant", "cosine")

# plateau window for scheduled runs, in half-lives from the start
PLATEAU_WINDOW = (2.0, 4.0)
# final window for scheduled runs, fraction of steps
FINAL_WINDOW = 0.05
_NOISE_CHUNK = 256


@dataclass(frozen=True)
class SteadyPrediction:
    norm_sq: float
    regime: str
    exact: float
    approx: float

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    @property
    def truncation_gap(self) -> float:
        """Relative gap ``|approx - exact| / exact``."""
        if self.exact == 0.0:
            return 0.0
        return abs(self.approx - self.exact) / self.exact


def predict_iid(gamma: float, lam: float, c_sq: float) -> SteadyPrediction:
    """Steady ``E|theta|^2 = gamma C / (lam (2 - gamma lam))`` for updates independent of the weights.

    ``c_sq`` is ``E|u|^2``.
    """
    eta = gamma * lam
    if not 0.0 < eta < 1.0:
        raise ValueError(f"unstable decay: gamma*lambda = {eta} must lie in (0, 1)")
    exact = gamma * c_sq / (lam * (2.0 - eta))
    approx = gamma * c_sq / (2.0 * lam)
    return SteadyPrediction(exact, "iid", exact, approx)


def predict_momentum_normalized(
    gamma: float, eta: float, alpha: float, c_sq: float, exact: bool = True
) -> SteadyPrediction:
    """Steady norm for normalized momentum updates with independent decay ``eta``.

    ``c_sq = |u|^2`` (``d`` for RMS-normalized updates). The exact form keeps
    all orders of ``eta``; the approximation drops them and equals
    ``gamma_eff^2 C^2 / (2 eta)``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if c_sq < 0.0 or gamma < 0.0:
        raise ValueError("gamma and c_sq must be >= 0")
    g2c2 = gamma * gamma * c_sq
    full = g2c2 / (2.0 * eta - eta * eta) * (2.0 - eta - alpha + alpha * eta) / (eta + alpha - alpha * eta)
    trunc = g2c2 * (2.0 - alpha) / (2.0 * alpha * eta)
    if exact:
        return SteadyPrediction(full, "momentum_normalized_exact", full, trunc)
    return SteadyPrediction(trunc, "momentum_normalized_approx", full, trunc)


def half_life(eta: float) -> float:
    """Steps for the decay factor ``(1 - eta)^t`` to reach 1/2."""
    if not 0.0 < eta < 1.0:
        return math.inf
    return -math.log(2.0) / math.log1p(-eta)


@dataclass(frozen=True)
class SimConfig:
    """One random-walk experiment, vectorized over ``seeds``.

    ``lam`` drives coupled/corrected decay, ``eta`` independent decay.
    ``stride > 1`` (gaussian_iid only) advances ``stride`` steps at a time
    by drawing the exact aggregated Gaussian increment, and records the
    trace at that stride.
    """

    dim: int
    steps: int
    gamma: float
    lam: float | None = None
    eta: float | None = None
    decay_mode: str = "coupled"
    alpha: float | None = None
    update_kind: str = "gaussian_iid"
    seeds: tuple[int, ...] = (0,)
    measure_window: float = 0.2
    warmup_steps: int = 0
    gamma_shape: str = "constant"
    gamma_trace: tuple[float, ...] | None = None
    alpha_trace: tuple[float, ...] | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_lag: int = 0
    stride: int = 1
    require_steady: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.update_kind not in UPDATE_KINDS:
            raise ValueError(f"update_kind must be one of {UPDATE_KINDS}")
        if self.decay_mode not in DECAY_MODES:
            raise ValueError(f"decay_mode must be one of {DECAY_MODES}")
        if self.gamma_shape not in GAMMA_SHAPES:
            raise ValueError(f"gamma_shape must be one of {GAMMA_SHAPES}")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")
        if self.decay_mode == "independent":
            if self.eta is None or not 0.0 <= self.eta < 1.0:
                raise ValueError("independent decay needs eta in [0, 1)")
        elif self.lam is None or self.lam < 0.0:
            raise ValueError(f"{self.decay_mode} decay needs lam >= 0")
        if self.update_kind.startswith("momentum") and self.alpha_trace is None:
            if self.alpha is None or not 0.0 < self.alpha <= 1.0:
                raise ValueError("momentum updates need alpha in (0, 1]")
        if not 0.0 < self.measure_window <= 1.0:
            raise ValueError("measure_window must lie in (0, 1]")
        if not 0 <= self.warmup_steps <= self.steps:
            raise ValueError("warmup_steps must lie in [0, steps]")
        for trace in (self.gamma_trace, self.alpha_trace):
            if trace is not None and len(trace) != self.steps:
                raise ValueError("explicit traces must have one entry per step")
        if self.stride < 1 or self.steps % self.stride:
            raise ValueError("stride must be >= 1 and divide steps")
        if self.stride > 1 and self.update_kind != "gaussian_iid":
            raise ValueError("stride > 1 is only exact for gaussian_iid")
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        eta = self.peak_eta
        if eta >= 1.0:
            raise ValueError(f"unstable decay: peak eta = {eta}")
        if self.require_steady and eta > 0.0:
            need = 10.0 * half_life(eta)
            if self.update_kind.startswith("momentum") and self.alpha:
                need = max(need, 10.0 / self.alpha)
            if self.steps < need:
                raise ValueError(
                    f"steps={self.steps} is shorter than 10 half-lives / mixing times ({need:.0f})"
                )

    @property
    def peak_eta(self) -> float:
        if self.decay_mode == "independent":
            return float(self.eta)
        return self.gamma * float(self.lam)

    @property
    def half_life(self) -> float:
        return half_life(self.peak_eta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        for k in ("gamma_trace", "alpha_trace"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    def gammas(self) -> np.ndarray:
        if self.gamma_trace is not None:
            return np.asarray(self.gamma_trace, dtype=float)
        t = np.arange(1, self.steps + 1, dtype=float)
        g = np.full(self.steps, self.gamma)
        w = self.warmup_steps
        if w:
            g[:w] = self.gamma * t[:w] / w
        if self.gamma_shape == "cosine" and self.steps > w:
            p = (t[w:] - w) / (self.steps - w)
            g[w:] = self.gamma * 0.5 * (1.0 + np.cos(np.pi * p))
        return g

    def alphas(self) -> np.ndarray | None:
        if self.alpha_trace is not None:
            return np.asarray(self.alpha_trace, dtype=float)
        if self.alpha is None:
            return None
        return np.full(self.steps, float(self.alpha))

    def etas(self, gammas: np.ndarray) -> np.ndarray:
        if self.decay_mode == "independent":
            return np.full(self.steps, float(self.eta))
        if self.decay_mode == "coupled":
            return gammas * self.lam
        if self.gamma == 0.0:
            return np.zeros(self.steps)
        return self.lam * gammas * gammas / self.gamma


@dataclass
class SimResult:
    config: SimConfig
    steps: np.ndarray  # 1-based step index of each trace entry
    norm_trace: np.ndarray  # seed-averaged |theta|_2
    seed_norms: np.ndarray  # (n_seeds, n_records)
    gamma_trace: np.ndarray
    alpha_trace: np.ndarray | None
    steady_norm_mean: float
    steady_norm_sq_mean: float
    autocorr: np.ndarray  # <u_{t-k}, u_t>, k = 0..max_lag
    m_autocorr: np.ndarray | None  # <m_{t-k}, m_t> for momentum kinds
    u_sq_mean: float
    m_norm_cv: float | None  # std/mean of |m| over the window
    plateau_mean: float | None = None
    final_mean: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.config.seeds

    def summary(self) -> dict:
        out = {
            "steady_norm_mean": self.steady_norm_mean,
            "steady_norm_sq_mean": self.steady_norm_sq_mean,
            "u_sq_mean": self.u_sq_mean,
            "half_life": self.config.half_life,
            "seeds": list(self.seeds),
        }
        if self.plateau_mean is not None:
            out["plateau_mean"] = self.plateau_mean
            out["final_mean"] = self.final_mean
        if self.m_norm_cv is not None:
            out["m_norm_cv"] = self.m_norm_cv
        if self.config.max_lag:
            out["autocorr"] = self.autocorr.tolist()
        return out


class _Noise:
    """Per-seed standard-normal streams, drawn in chunks of whole steps."""

    def __init__(self, seeds: tuple[int, ...], dim: int):
        self.rngs = [np.random.default_rng(s) for s in seeds]
        self.dim = dim
        self.buf = np.empty((0, len(seeds), dim))
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos == len(self.buf):
            self.buf = np.stack([r.standard_normal((_NOISE_CHUNK, self.dim)) for r in self.rngs], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


class _LagBuffer:
    """Running mean of ``<x_{t-k}, x_t>`` for k = 0..max_lag, summed over dims, averaged over seeds."""

    def __init__(self, max_lag: int, shape: tuple[int, int]):
        self.max_lag = max_lag
        self.ring = np.zeros((max_lag + 1,) + shape)
        self.sums = np.zeros(max_lag + 1)
        self.counts = np.zeros(max_lag + 1)
        self.n = 0

    def push(self, x: np.ndarray, measure: bool) -> None:
        size = self.max_lag + 1
        slot = self.n % size
        self.ring[slot] = x
        if measure:
            k_max = min(self.n, self.max_lag)
            # one matvec against every slot, then map slot -> lag
            dots = self.ring.reshape(size, -1) @ x.ravel() / x.shape[0]
            lags = (slot - np.arange(size)) % size
            valid = lags <= k_max
            self.sums[lags[valid]] += dots[valid]
            self.counts[: k_max + 1] += 1
        self.n += 1

    def mean(self) -> np.ndarray:
        return np.divide(self.sums, self.counts, out=np.full_like(self.sums, np.nan), where=self.counts > 0)


def _rms_rows(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(x * x, axis=1, keepdims=True))


def simulate(cfg: SimConfig) -> SimResult:
    """Run the random walk for every seed in ``cfg.seeds`` and measure steady-state statistics."""
    gammas = cfg.gammas()
    etas = cfg.etas(gammas)
    alphas = cfg.alphas()
    if cfg.stride > 1:
        return _simulate_strided(cfg, gammas, etas)
    n_seeds = len(cfg.seeds)
    shape = (n_seeds, cfg.dim)
    theta = np.zeros(shape)
    m = np.zeros(shape)
    v = np.zeros(shape)
    noise = _Noise(cfg.seeds, cfg.dim)
    norms = np.empty((n_seeds, cfg.steps))
    start = cfg.steps - int(round(cfg.measure_window * cfg.steps))
    momentum = cfg.update_kind.startswith("momentum")
    u_lags = _LagBuffer(cfg.max_lag, shape)
    m_lags = _LagBuffer(cfg.max_lag, shape) if momentum else None
    u_sq_sum = 0.0
    m_norms = []
    for i in range(cfg.steps):
        xi = noise.next()
        if cfg.update_kind == "gaussian_iid":
            u = xi
        elif momentum:
            a = alphas[i]
            m *= 1.0 - a
            m += a * xi
            if cfg.update_kind == "momentum_gaussian":
                u = m
            else:
                u = m / _rms_rows(m)
        else:
            t = i + 1
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * xi
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * xi * xi
            u = (m / (1.0 - cfg.beta1**t)) / (np.sqrt(v / (1.0 - cfg.beta2**t)) + cfg.adam_eps)
        theta *= 1.0 - etas[i]
        theta -= gammas[i] * u
        norms[:, i] = np.sqrt(np.einsum("sd,sd->s", theta, theta))
        measuring = i >= start
        if measuring:
            u_sq_sum += float(np.einsum("sd,sd->", u, u)) / n_seeds
            if momentum:
                m_norms.append(np.sqrt(np.einsum("sd,sd->s", m, m)))
        if cfg.max_lag:
            u_lags.push(u, measuring)
            if m_lags is not None:
                m_lags.push(m, measuring)
    n_meas = cfg.steps - start
    autocorr = u_lags.mean() if cfg.max_lag else np.array([u_sq_sum / n_meas])
    m_cv = None
    if m_norms:
        mn = np.asarray(m_norms)
        m_cv = float(np.mean(mn.std(axis=0) / mn.mean(axis=0)))
    return _finish(
        cfg,
        np.arange(1, cfg.steps + 1),
        norms,
        gammas,
        alphas,
        autocorr,
        m_lags.mean() if (m_lags is not None and cfg.max_lag) else None,
        u_sq_sum / n_meas,
        m_cv,
    )


def _simulate_strided(cfg: SimConfig, gammas: np.ndarray, etas: np.ndarray) -> SimResult:
    # Over a block of k steps the linear Gaussian recurrence is
    # theta <- A theta + N(0, V) with A = prod a_j and
    # V = sum_j gamma_j^2 prod_{i>j} a_i^2; draw that directly.
    k = cfg.stride
    n_blocks = cfg.steps // k
    a = (1.0 - etas).reshape(n_blocks, k)
    g2 = (gammas * gammas).reshape(n_blocks, k)
    block_a = np.prod(a, axis=1)
    # suffix products prod_{i>j} a_i within each block
    suffix = np.ones_like(a)
    suffix[:, :-1] = np.cumprod(a[:, :0:-1], axis=1)[:, ::-1]
    block_sd = np.sqrt(np.sum(g2 * suffix * suffix, axis=1))
    n_seeds = len(cfg.seeds)
    theta = np.zeros((n_seeds, cfg.dim))
    noise = _Noise(cfg.seeds, cfg.dim)
    norms = np.empty((n_seeds, n_blocks))
    for b in range(n_blocks):
        theta *= block_a[b]
        theta -= block_sd[b] * noise.next()
        norms[:, b] = np.sqrt(np.einsum("sd,sd->s", theta, theta))
    steps = np.arange(k, cfg.steps + 1, k)
    return _finish(cfg, steps, norms, gammas[k - 1 :: k], None, np.array([float(cfg.dim)]), None, float(cfg.dim), None)


def _finish(cfg, steps, norms, gammas, alphas, autocorr, m_autocorr, u_sq_mean, m_cv) -> SimResult:
    mean_trace = norms.mean(axis=0)
    n = len(steps)
    start = n - max(1, int(round(cfg.measure_window * n)))
    window = norms[:, start:]
    steady = float(window.mean())
    steady_sq = float(np.mean(window * window))
    plateau = final = None
    if cfg.gamma_shape == "cosine" or cfg.gamma_trace is not None:
        plateau = _plateau_mean(cfg, steps, mean_trace)
        fstart = n - max(1, int(round(FINAL_WINDOW * n)))
        final = float(mean_trace[fstart:].mean())
        if cfg.gamma_shape == "cosine":
            steady = plateau
            mask = _plateau_mask(cfg, steps)
            steady_sq = float(np.mean(norms[:, mask] ** 2))
    return SimResult(
        config=cfg,
        steps=steps,
        norm_trace=mean_trace,
        seed_norms=norms,
        gamma_trace=gammas,
        alpha_trace=alphas,
        steady_norm_mean=steady,
        steady_norm_sq_mean=steady_sq,
        autocorr=autocorr,
        m_autocorr=m_autocorr,
        u_sq_mean=u_sq_mean,
        m_norm_cv=m_cv,
        plateau_mean=plateau,
        final_mean=final,
    )


def _plateau_mask(cfg: SimConfig, steps: np.ndarray) -> np.ndarray:
    h = cfg.half_life
    lo, hi = PLATEAU_WINDOW
    x = steps / h if math.isfinite(h) else np.zeros(len(steps))
    mask = (x >= lo) & (x <= hi)
    if not mask.any():
        mask = np.zeros(len(steps), dtype=bool)
        mask[len(steps) // 4 : max(len(steps) // 4 + 1, len(steps) // 2)] = True
    return mask


def _plateau_mean(cfg: SimConfig, steps: np.ndarray, trace: np.ndarray) -> float:
    return float(trace[_plateau_mask(cfg, steps)].mean())


def appendix_a_config(
    eta: float,
    dim: int = 1000,
    per_element_var: float = 1.0 / 2000.0,
    seeds: tuple[int, ...] = tuple(range(8)),
    half_lives: float = 10.0,
    warmup_half_lives: float = 0.5,
    cosine: bool = True,
    stride: int = 1,
) -> SimConfig:
    """The reference random system: ``gamma / (2 lam) = per_element_var`` at ``gamma lam = eta``.

    Runs ``half_lives`` half-lives, the first ``warmup_half_lives`` of them
    as linear warmup, then cosine (or constant) learning rate.
    """
    gamma = math.sqrt(2.0 * per_element_var * eta)
    lam = eta / gamma
    h = half_life(eta)
    steps = math.ceil(half_lives * h)
    steps += -steps % stride
    warmup = int(round(warmup_half_lives * h))
    return SimConfig(
        dim=dim,
        steps=steps,
        gamma=gamma,
        lam=lam,
        seeds=seeds,
        warmup_steps=warmup,
        gamma_shape="cosine" if cosine else "constant",
        stride=stride,
        require_steady=False,
    )


def simulate_cosine_decay(cfg: SimConfig) -> SimResult:
    """Run a scheduled-gamma simulation; ``plateau_mean`` and ``final_mean`` describe the trace shape.

    A constant-gamma config runs unchanged, so this reduces to :func:`simulate`.
    """
    return simulate(cfg)


def simulate_adam_betas(beta1: float, beta2: float, cfg: SimConfig) -> SimResult:
    """Adam moment recursions on i.i.d. unit Gaussian gradients, decoupled decay."""
    return simulate(replace(cfg, update_kind="adam", beta1=beta1, beta2=beta2))


def normalized_trace(result: SimResult, grid: np.ndarray, bin_width: float = 0.25) -> np.ndarray:
    """Seed-averaged norm trace, binned on a grid of half-life units and divided by the plateau."""
    h = result.config.half_life
    x = result.steps / h
    out = np.empty(len(grid))
    for i, c in enumerate(grid):
        sel = (x > c - bin_width) & (x <= c)
        out[i] = result.norm_trace[sel].mean() if sel.any() else np.interp(c, x, result.norm_trace)
    return out / result.plateau_mean


def tuc_estimate(result: SimResult, alpha: float, exact: bool = False) -> float:
    """Effective learning rate implied by a measured steady norm.

    Inverts ``|theta|^2 = gamma_eff^2 C^2 / (2 eta)`` with ``C^2 = dim``.
    With ``exact`` the full finite-eta formula at momentum ``alpha`` is
    inverted instead.
    """
    cfg = result.config
    norm_sq = result.steady_norm_sq_mean
    if norm_sq == 0.0:
        return 0.0
    eta = cfg.peak_eta
    c_sq = float(cfg.dim)
    if not exact:
        return math.sqrt(2.0 * eta * norm_sq / c_sq)
    unit = predict_momentum_normalized(1.0, eta, alpha, c_sq, exact=True).norm_sq
    gamma = math.sqrt(norm_sq / unit)
    return gamma * math.sqrt((2.0 - alpha) / alpha)
