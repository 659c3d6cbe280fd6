"""Toy training harness: synthetic data, a small hand-differentiated MLP, metric capture.

The model is ``x -> [W h + b -> sqrt(2) GELU]* -> W_out h + b_out``. Hidden
matrices use the Spectral norm, biases the Bias norm and the output matrix
the Sign norm. The output matrix is correction-exempt by default.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf, logsumexp, softmax

from .linalg import PowerIterState, spectral_norm
from .lmo import NormFamily, family_norm
from .optim import OPTIMIZERS, HyperParams, LayerSpec, NonFiniteGradientError, Optimizer, RenormAdamW
from .schedule import ScheduleSet, alpha_at, gamma_at

TASK_KINDS = ("gaussian_blobs_classification", "linear_regression")
_SQRT2 = math.sqrt(2.0)


class NonFiniteActivationError(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite activations in layer {layer!r}")
        self.layer = layer


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "gaussian_blobs_classification"
    input_dim: int = 32
    num_classes: int = 8
    samples: int = 8192
    noise_scale: float = 1.0
    radius: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"kind must be one of {TASK_KINDS}")
        if self.input_dim < 1 or self.samples < 10:
            raise ValueError("need input_dim >= 1 and samples >= 10")
        if self.kind == "gaussian_blobs_classification" and self.num_classes < 2:
            raise ValueError("classification needs at least two classes")
        if self.noise_scale < 0.0 or self.radius < 0.0:
            raise ValueError("noise_scale and radius must be >= 0")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    means: np.ndarray | None = None


def gen_task(task: SyntheticTask) -> Dataset:
    """Reproducible features/labels with a 90/10 train/validation split.

    Blobs: one mean per class at distance ``radius`` from the origin in a
    random direction, isotropic noise of scale ``noise_scale``, uniform class
    priors. Regression: ``y = x w + noise`` with a unit-norm ``w`` (targets
    are then ``(n, 1)`` floats).
    """
    rng = np.random.default_rng(task.seed)
    n = task.samples
    if task.kind == "gaussian_blobs_classification":
        dirs = rng.standard_normal((task.num_classes, task.input_dim))
        means = task.radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        y = np.arange(n) % task.num_classes
        rng.shuffle(y)
        x = means[y] + task.noise_scale * rng.standard_normal((n, task.input_dim))
    else:
        means = None
        w = rng.standard_normal(task.input_dim)
        w /= np.linalg.norm(w)
        x = rng.standard_normal((n, task.input_dim))
        y = (x @ w + task.noise_scale * rng.standard_normal(n))[:, None]
    n_train = int(round(0.9 * n))
    return Dataset(x[:n_train], y[:n_train], x[n_train:], y[n_train:], means)


def gelu2(z: np.ndarray) -> np.ndarray:
    """``sqrt(2) * GELU(z)``, exact (erf) form."""
    return _SQRT2 * z * 0.5 * (1.0 + erf(z / _SQRT2))


def gelu2_grad(z: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(z / _SQRT2))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return _SQRT2 * (cdf + z * pdf)


@dataclass
class ToyModel:
    """MLP parameters in forward order plus one :class:`LayerSpec`-ready role per tensor."""

    params: dict[str, np.ndarray]
    families: dict[str, NormFamily]
    output: str
    loss: str = "ce"

    @classmethod
    def init(
        cls,
        input_dim: int = 32,
        hidden: tuple[int, ...] = (64,),
        num_classes: int = 8,
        seed: int = 0,
        loss: str = "ce",
    ) -> "ToyModel":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        families: dict[str, NormFamily] = {}
        dims = (input_dim, *hidden, num_classes)
        n_layers = len(dims) - 1
        for i in range(n_layers):
            d_in, d_out = dims[i], dims[i + 1]
            last = i == n_layers - 1
            w, b = (f"out.W", f"out.b") if last else (f"h{i}.W", f"h{i}.b")
            params[w] = rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)
            params[b] = np.zeros(d_out)
            families[w] = NormFamily.SIGN if last else NormFamily.SPECTRAL
            families[b] = NormFamily.BIAS
        return cls(params, families, output="out.W", loss=loss)

    @property
    def layer_names(self) -> list[str]:
        return list(self.params)

    def _pairs(self) -> list[tuple[str, str]]:
        names = self.layer_names
        return [(names[i], names[i + 1]) for i in range(0, len(names), 2)]

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = x
        pairs = self._pairs()
        for k, (w, b) in enumerate(pairs):
            z = h @ self.params[w].T + self.params[b]
            h = z if k == len(pairs) - 1 else gelu2(z)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == y))


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy, written as ``log(1 + sum_{i != c} exp(v_i - v_c))``.

    This form stays strictly positive for confidently correct rows where
    ``-log softmax`` would round to zero.
    """
    rows = np.arange(len(y))
    d = logits - logits[rows, y][:, None]
    d[rows, y] = -np.inf
    return np.logaddexp(0.0, logsumexp(d, axis=1))


def forward_backward(model: ToyModel, x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over the batch and exact gradients for every parameter."""
    if len(x) == 0:
        raise ValueError("empty batch")
    n = len(x)
    pairs = model._pairs()
    acts = [x]
    pre = []
    h = x
    for k, (w, b) in enumerate(pairs):
        z = h @ model.params[w].T + model.params[b]
        if not np.all(np.isfinite(z)):
            raise NonFiniteActivationError(w.split(".")[0])
        pre.append(z)
        h = z if k == len(pairs) - 1 else gelu2(z)
        acts.append(h)
    out = acts[-1]
    if model.loss == "ce":
        loss = float(np.mean(cross_entropy(out, y)))
        delta = softmax(out, axis=1)
        delta[np.arange(n), y] -= 1.0
        delta /= n
    else:
        diff = out - y
        loss = float(0.5 * np.mean(np.sum(diff * diff, axis=1)))
        delta = diff / n
    grads: dict[str, np.ndarray] = {}
    for k in range(len(pairs) - 1, -1, -1):
        w, b = pairs[k]
        grads[w] = delta.T @ acts[k]
        grads[b] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.params[w]) * gelu2_grad(pre[k - 1])
    return loss, {name: grads[name] for name in model.params}


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    """Everything needed to reproduce a toy training run.

    Per-family peak learning rates (``lr_*``), fixed decay (``wd_*``) and
    corrected-decay C^2 (``c_sq_*``) feed the per-tensor :class:`LayerSpec`.
    ``c_sq_*`` only matters for scionc; Adam variants use ``wd_*`` as lambda.
    """

    optimizer: str = "scionc"
    steps: int = 3000
    batch_size: int = 256
    warmup_steps: int = 150
    gamma_shape: str = "cosine"
    alpha: float = 0.1
    lr_spectral: float = 0.05
    lr_sign: float = 0.2
    lr_bias: float = 0.05
    wd_spectral: float = 0.2
    wd_sign: float = 0.004
    wd_bias: float = 0.2
    c_sq_spectral: float | None = None
    c_sq_bias: float | None = None
    c_sq_shape: str = "constant"
    c_sq_final_ratio: float = 0.25
    output_bias_exempt: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eps_norm: float = 1e-8
    polar_iters: int = 8
    hidden: tuple[int, ...] = (64,)
    init_seed: int = 0
    shuffle_seed: int = 0
    log_every: int = 50
    check_norm_law: bool = False
    task: SyntheticTask = field(default_factory=SyntheticTask)

    def __post_init__(self) -> None:
        if isinstance(self.task, dict):
            self.task = SyntheticTask(**self.task)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps, batch_size and log_every must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.warmup_steps <= self.steps:
            raise ValueError("warmup_steps must lie in [0, steps]")
        # fill corrected-decay C^2 so ScionC starts with the same decay as Scion
        for fam in ("spectral", "bias"):
            if getattr(self, f"c_sq_{fam}") is None:
                lam = getattr(self, f"wd_{fam}")
                if lam > 0.0:
                    value = c_sq_for_lambda(getattr(self, f"lr_{fam}"), self.alpha, lam)
                    setattr(self, f"c_sq_{fam}", value)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def c_sq_for_lambda(gamma: float, alpha: float, lam: float) -> float:
    """The C^2 at which corrected decay equals ``lam`` at learning rate ``gamma``."""
    return (2.0 - alpha) * gamma / (2.0 * alpha * lam)


def layer_specs(model: ToyModel, cfg: TrainConfig) -> list[LayerSpec]:
    specs = []
    for name, fam in model.families.items():
        key = fam.value
        exempt = name == model.output or (cfg.output_bias_exempt and name == "out.b")
        c_sq = getattr(cfg, f"c_sq_{key}", None) if not exempt else None
        specs.append(
            LayerSpec(
                name=name,
                family=fam,
                gamma_scale=getattr(cfg, f"lr_{key}"),
                lambda_fixed=getattr(cfg, f"wd_{key}"),
                c_sq=c_sq,
                correction_exempt=exempt,
            )
        )
    return specs


def build_schedule(cfg: TrainConfig) -> ScheduleSet:
    return ScheduleSet(
        total_steps=cfg.steps,
        warmup_steps=cfg.warmup_steps,
        gamma_peak=1.0,
        gamma_shape=cfg.gamma_shape,
        alpha_kind="constant",
        alpha0=cfg.alpha,
        c_sq_shape=cfg.c_sq_shape,
        c_sq0=1.0,
        c_sq_final=cfg.c_sq_final_ratio if cfg.c_sq_shape == "cosine" else None,
    )


def build_optimizer(model: ToyModel, cfg: TrainConfig) -> Optimizer:
    specs = layer_specs(model, cfg)
    schedule = build_schedule(cfg)
    hp = HyperParams(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, alpha=cfg.alpha)
    cls = OPTIMIZERS[cfg.optimizer]
    if cls is RenormAdamW:
        return cls(specs, schedule, hp, eps_norm=cfg.eps_norm)
    if cfg.optimizer in ("scion", "scionc"):
        return cls(specs, schedule, hp, polar_iters=cfg.polar_iters)
    return cls(specs, schedule, hp)


@dataclass
class LayerMetrics:
    l2_norm: float
    family_norm: float
    grad_norm: float
    theta_dot_u: float
    lam: float
    tracked_spectral: float | None = None


@dataclass
class MetricsRecord:
    step: int
    loss: float
    gamma: float
    alpha: float
    layers: dict[str, LayerMetrics]
    sign_norm: float
    spectral_geomean: float
    train_accuracy: float | None = None


@dataclass
class TrainResult:
    records: list[MetricsRecord]
    model: ToyModel
    config: TrainConfig
    diverged: bool = False
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    norm_law_violations: int = 0


class _Batches:
    """Full-shuffle minibatches; epoch ``e`` uses permutation seed ``(shuffle_seed, e)``."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n, self.bs, self.seed = n, min(batch_size, n), seed
        self.epoch = -1
        self.pos = n

    def next(self) -> np.ndarray:
        if self.pos + self.bs > self.n:
            self.epoch += 1
            self.perm = np.random.default_rng([self.seed, self.epoch]).permutation(self.n)
            self.pos = 0
        idx = self.perm[self.pos : self.pos + self.bs]
        self.pos += self.bs
        return idx


def run_training(
    cfg: TrainConfig,
    model: ToyModel | None = None,
    data: Dataset | None = None,
    progress=None,
) -> TrainResult:
    """Train the toy model; one :class:`MetricsRecord` per ``log_every`` steps (and the last step).

    A non-finite loss stops the run and sets ``diverged``. With
    ``check_norm_law`` and the renormalized AdamW optimizer, every step's
    norm is checked against ``| |theta_pre| - gamma u_par |`` within
    ``2 * eps_norm`` and violations are counted.
    """
    data = data or gen_task(cfg.task)
    loss_kind = "ce" if cfg.task.kind == "gaussian_blobs_classification" else "mse"
    if model is None:
        out_dim = cfg.task.num_classes if loss_kind == "ce" else 1
        model = ToyModel.init(cfg.task.input_dim, cfg.hidden, out_dim, cfg.init_seed, loss_kind)
    opt = build_optimizer(model, cfg)
    batches = _Batches(len(data.x_train), cfg.batch_size, cfg.shuffle_seed)
    trackers = {
        name: PowerIterState.cold(*p.shape, seed=i)
        for i, (name, p) in enumerate(model.params.items())
        if model.families[name] is NormFamily.SPECTRAL
    }
    result = TrainResult([], model, cfg)
    for t in range(1, cfg.steps + 1):
        idx = batches.next()
        xb, yb = data.x_train[idx], data.y_train[idx]
        try:
            loss, grads = forward_backward(model, xb, yb)
        except NonFiniteActivationError:
            result.diverged = True
            break
        if not math.isfinite(loss):
            result.diverged = True
            break
        if t == 1:
            result.initial_loss = loss
        before = {k: v.copy() for k, v in model.params.items()} if cfg.check_norm_law else None
        try:
            steps = opt.step(model.params, grads)
        except NonFiniteGradientError:
            result.diverged = True
            break
        if not all(np.all(np.isfinite(p)) for p in model.params.values()):
            result.diverged = True
            break
        if before is not None and isinstance(opt, RenormAdamW):
            result.norm_law_violations += _count_norm_law_violations(before, model.params, opt, steps, cfg)
        tracked = {name: spectral_norm(model.params[name], st, 1) for name, st in trackers.items()}
        result.final_loss = loss
        if t % cfg.log_every == 0 or t == cfg.steps:
            rec = _record(t, loss, model, grads, steps, tracked, opt, data)
            result.records.append(rec)
            if progress is not None:
                progress(rec)
    return result


def _count_norm_law_violations(before, after, opt: RenormAdamW, steps, cfg: TrainConfig) -> int:
    bad = 0
    for name, rec in steps.items():
        theta = before[name]
        pre = theta - rec.gamma * rec.lam * theta
        pre_norm = float(np.linalg.norm(pre))
        if pre_norm < cfg.eps_norm:
            continue
        u = opt.state[name].u
        target = abs(pre_norm - rec.gamma * float(np.vdot(pre, u)) / pre_norm)
        if abs(float(np.linalg.norm(after[name])) - target) > 2.0 * cfg.eps_norm:
            bad += 1
    return bad


def _record(t, loss, model: ToyModel, grads, steps, tracked, opt: Optimizer, data: Dataset) -> MetricsRecord:
    layers = {}
    for name, p in model.params.items():
        rec = steps[name]
        layers[name] = LayerMetrics(
            l2_norm=float(np.linalg.norm(p)),
            family_norm=family_norm(p, model.families[name]),
            grad_norm=float(np.linalg.norm(grads[name])),
            theta_dot_u=rec.theta_dot_u,
            lam=rec.lam,
            tracked_spectral=tracked.get(name),
        )
    spectral = [layers[n].family_norm for n, f in model.families.items() if f is NormFamily.SPECTRAL]
    geo = float(np.exp(np.mean(np.log(spectral)))) if spectral and min(spectral) > 0 else 0.0
    acc = model.accuracy(data.x_train, data.y_train) if model.loss == "ce" else None
    sched = opt.schedule
    return MetricsRecord(
        step=t,
        loss=loss,
        gamma=gamma_at(sched, t),
        alpha=alpha_at(sched, t),
        layers=layers,
        sign_norm=layers[model.output].family_norm,
        spectral_geomean=geo,
        train_accuracy=acc,
    )


# ---------------------------------------------------------------------------
# Output-layer alignment


@dataclass
class AlignmentReport:
    epsilon: float
    n_rows: int
    n_correct: int
    n_inequality_holds: int  # among correctly classified rows
    n_misclassified_decrease: int
    theta_dot_neg_grad: float  # <theta_out, -grad theta_out L> over the batch

    @property
    def holds_for_all_correct(self) -> bool:
        return self.n_inequality_holds == self.n_correct


def scaled_logit_losses(logits: np.ndarray, y: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row CE at ``v`` and at ``(1 + epsilon) v``."""
    return cross_entropy(logits, y), cross_entropy((1.0 + epsilon) * logits, y)


def output_alignment_check(model: ToyModel, x: np.ndarray, y: np.ndarray, epsilon: float = 1e-3) -> AlignmentReport:
    """Check that scaling the logits of correctly classified rows lowers their loss."""
    logits = model.logits(x)
    correct = np.argmax(logits, axis=1) == y
    base, scaled = scaled_logit_losses(logits, y, epsilon)
    _, grads = forward_backward(model, x, y)
    dot = sum(
        float(np.vdot(model.params[n], -grads[n])) for n in (model.output, "out.b")
    )
    return AlignmentReport(
        epsilon=epsilon,
        n_rows=len(y),
        n_correct=int(correct.sum()),
        n_inequality_holds=int(np.sum(scaled[correct] < base[correct])),
        n_misclassified_decrease=int(np.sum(scaled[~correct] < base[~correct])),
        theta_dot_neg_grad=dot,
    )
