"""Sign-based white-box attack loop with a pluggable supervision gradient.

Every strategy here is the classic formula with the gradient term abstracted
behind a provider callable (x, y) -> (g, trace), so the same loop runs with
the plain dL/dx or with the parameter-adapted variant from `p3a.core`:

  BIM   iterative signed steps                  https://arxiv.org/abs/1607.02533
  PGD   BIM from a random start in the ball     https://arxiv.org/abs/1706.06083
  MI    L1-normalized momentum accumulation     https://arxiv.org/abs/1710.06081
  DI    random resize-and-pad before the grad   https://arxiv.org/abs/1803.06978
  TI    kernel-smoothed gradient                https://arxiv.org/abs/1904.02884
  SINI  Nesterov lookahead + scale averaging    https://arxiv.org/abs/1908.06281

All losses, predictions, and the KL drift recorded in the trace are evaluated
at the victim's ORIGINAL parameters, whatever the provider did internally.
Iterates stay inside the L-inf ball around the clean sample and inside [0,1].
"""

import math
from dataclasses import dataclass

import numpy as np

from .diffnet import LabeledSample, Model, kl_metric, loss_ce
from .numerics import LINF, GridShape, clip_ball, gaussian_kernel, norm, sign, smooth2d

BIM = "bim"
PGD = "pgd"
MI = "mi"
DI = "di"
TI = "ti"
SINI = "sini"

STRATEGIES = (BIM, PGD, MI, DI, TI, SINI)

BALL_SLACK = 1e-9  # tolerance on the recorded L-inf distance invariant


@dataclass(frozen=True)
class AttackConfig:
    strategy: str
    eps: float = 0.1
    step_size: float = 0.02
    iterations: int = 10
    mu: float = 1.0                 # momentum decay (MI / SINI)
    di_prob: float = 0.5            # transform probability (DI)
    di_resize_low: float = 0.75     # lower bound of the resize range, fraction of side
    ti_kernel_side: int = 5
    ti_sigma: float = 1.5           # sigma <= 0 collapses the kernel to a delta
    scale_copies: int = 5           # gradient-averaging copies (SINI)
    pgd_random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not 0.0 <= self.di_prob <= 1.0:
            raise ValueError(f"di_prob must lie in [0, 1], got {self.di_prob}")
        if not 0.0 < self.di_resize_low <= 1.0:
            raise ValueError(f"di_resize_low must lie in (0, 1], got {self.di_resize_low}")
        if self.ti_kernel_side < 1 or self.ti_kernel_side % 2 == 0:
            raise ValueError(f"ti_kernel_side must be odd, got {self.ti_kernel_side}")
        if self.ti_sigma < 0:
            raise ValueError(f"ti_sigma must be >= 0, got {self.ti_sigma}")
        if self.scale_copies < 1:
            raise ValueError(f"scale_copies must be >= 1, got {self.scale_copies}")


@dataclass
class AttackStep:
    x_adv: np.ndarray
    ce_loss: float
    kl: float
    prediction: int
    linf: float
    dsp_traces: tuple = ()


@dataclass
class AttackTrace:
    steps: list
    clean_loss: float
    clean_prediction: int
    x0: np.ndarray

    @property
    def final(self) -> AttackStep:
        return self.steps[-1]


def step_bim(x_adv: np.ndarray, g: np.ndarray, cfg: AttackConfig, x0: np.ndarray) -> np.ndarray:
    """Signed ascent step projected back into the ball (PGD uses the same update)."""
    return clip_ball(x_adv + cfg.step_size * sign(g), x0, cfg.eps, LINF)


def step_mi(x_adv: np.ndarray, g: np.ndarray, state: np.ndarray, cfg: AttackConfig,
            x0: np.ndarray):
    """Momentum accumulation of the L1-normalized gradient, then a signed step."""
    l1 = norm(g, "l1")
    if l1 == 0.0:
        return clip_ball(x_adv, x0, cfg.eps, LINF), state
    state = cfg.mu * state + g / l1
    return clip_ball(x_adv + cfg.step_size * sign(state), x0, cfg.eps, LINF), state


def _resize_area(img: np.ndarray, new_side: int) -> np.ndarray:
    """Exact area-average resampling of a square (side, side, c) image."""
    side = img.shape[0]
    if new_side == side:
        return img.copy()
    # w[i, j] = length of overlap between output cell i and input cell j,
    # in output-cell units, so each row sums to 1
    scale = side / new_side
    w = np.zeros((new_side, side))
    for i in range(new_side):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(math.floor(lo), min(math.ceil(hi), side)):
            w[i, j] = (min(hi, j + 1) - max(lo, j)) / scale
    return np.einsum("ij,jkc,lk->ilc", w, img, w)


def di_transform(x: np.ndarray, grid: GridShape, cfg: AttackConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Random resize-and-pad input diversity; identity with probability 1 - di_prob."""
    grid.check_matches(x.size)
    if grid.height != grid.width:
        raise ValueError("diverse-input transform needs a square grid")
    if cfg.di_prob == 0.0 or rng.random() >= cfg.di_prob:
        return x
    side = grid.height
    low = math.ceil(cfg.di_resize_low * side)
    new_side = int(rng.integers(low, side + 1))
    img = x.reshape(side, side, grid.channels)
    small = _resize_area(img, new_side)
    top = int(rng.integers(0, side - new_side + 1))
    left = int(rng.integers(0, side - new_side + 1))
    out = np.zeros_like(img)
    out[top:top + new_side, left:left + new_side, :] = small
    return out.reshape(x.shape)


def step_di(x_adv, cfg: AttackConfig, dsp, y, x0, grid: GridShape, rng):
    """Gradient at the randomly transformed input, then the signed BIM step."""
    g, trace = dsp(di_transform(x_adv, grid, cfg, rng), y)
    return step_bim(x_adv, g, cfg, x0), trace


def step_ti(x_adv, cfg: AttackConfig, dsp, y, x0, grid: GridShape, kernel=None):
    """Kernel-smoothed gradient, then the signed BIM step."""
    if kernel is None:
        kernel = gaussian_kernel(cfg.ti_kernel_side, cfg.ti_sigma)
    g, trace = dsp(x_adv, y)
    return step_bim(x_adv, smooth2d(g, grid, kernel), cfg, x0), trace


def step_sini(x_adv, state, cfg: AttackConfig, dsp, y, x0):
    """Nesterov lookahead, scale-averaged gradient, then the momentum step."""
    x_nes = x_adv + cfg.step_size * cfg.mu * state
    traces = []
    g = np.zeros_like(x_adv)
    for i in range(cfg.scale_copies):
        g_i, trace = dsp(x_nes / 2.0 ** i, y)
        g = g + g_i
        if trace is not None:
            traces.append(trace)
    x_next, state = step_mi(x_adv, g / cfg.scale_copies, state, cfg, x0)
    return x_next, state, traces


def run_attack(model: Model, sample: LabeledSample, cfg: AttackConfig, dsp,
               grid: GridShape | None = None,
               rng: np.random.Generator | None = None) -> AttackTrace:
    """Run the configured strategy for cfg.iterations steps and record the trace.

    `dsp` is any callable (x, y) -> (gradient, trace-or-None). Campaigns that
    parallelize over samples should pass a per-sample `rng`; by default a
    fresh generator is seeded from cfg.seed.
    """
    x0 = np.asarray(sample.x, dtype=np.float64)
    y = sample.y_true
    if x0.min() < 0.0 or x0.max() > 1.0:
        raise ValueError("sample values must lie in [0, 1]")
    if cfg.strategy in (DI, TI):
        if grid is None:
            raise ValueError(f"{cfg.strategy} needs a grid shape for its transform")
        grid.check_matches(x0.size)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    clean_logits = model.logits(x0)
    clean_loss = loss_ce(clean_logits, y)
    clean_pred = int(np.argmax(clean_logits))

    x = x0.copy()
    if cfg.strategy == PGD and cfg.pgd_random_start:
        x = clip_ball(x0 + rng.uniform(-cfg.eps, cfg.eps, size=x0.shape), x0, cfg.eps, LINF)
    state = np.zeros_like(x0)
    kernel = gaussian_kernel(cfg.ti_kernel_side, cfg.ti_sigma) if cfg.strategy == TI else None

    steps = []
    for _ in range(cfg.iterations):
        trace = None
        if cfg.strategy in (BIM, PGD):
            g, trace = dsp(x, y)
            x = step_bim(x, g, cfg, x0)
        elif cfg.strategy == MI:
            g, trace = dsp(x, y)
            x, state = step_mi(x, g, state, cfg, x0)
        elif cfg.strategy == DI:
            x, trace = step_di(x, cfg, dsp, y, x0, grid, rng)
        elif cfg.strategy == TI:
            x, trace = step_ti(x, cfg, dsp, y, x0, grid, kernel)
        else:  # SINI
            x, state, traces = step_sini(x, state, cfg, dsp, y, x0)
        if cfg.strategy != SINI:
            traces = [] if trace is None else [trace]

        logits = model.logits(x)
        linf = norm(x - x0, "linf")
        if linf > cfg.eps + BALL_SLACK or x.min() < 0.0 or x.max() > 1.0:
            raise AssertionError("attack iterate escaped the perturbation ball")
        steps.append(AttackStep(
            x_adv=x.copy(),
            ce_loss=loss_ce(logits, y),
            kl=kl_metric(clean_logits, logits),
            prediction=int(np.argmax(logits)),
            linf=linf,
            dsp_traces=tuple(traces),
        ))
    return AttackTrace(steps=steps, clean_loss=clean_loss, clean_prediction=clean_pred, x0=x0)
