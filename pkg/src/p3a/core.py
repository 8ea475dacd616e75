"""Parameter-adaptive gradient supervision (P3A).

Before each supervision-gradient evaluation, the victim's parameters are
nudged along a handful of candidate directions (theta' = theta +- lr * F),
the input gradient is recomputed at each candidate, and each candidate is
scored by how much it is predicted to raise the loss of a raw gradient step:

    gain = (g' - g) . g

which is the directional finite-difference estimate of the mixed second-order
effect of the parameter change on the input gradient, contracted with the
current ascent direction (positive scale factors dropped, ranking only). The
gradient of the best-scoring candidate replaces the plain one; the unperturbed
parameters act as an identity candidate with gain 0, so selection never does
predictably worse than no adaptation. The victim itself is never mutated.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffnet
from .numerics import dot, ensure_finite, norm, sign

DEFENSIVE = "defensive"    # F = dL/dtheta: explore where the defense would move
UNIFORM = "uniform"        # F = constant S: every parameter treated alike
MAGNITUDE = "magnitude"    # F = 2*theta: larger parameters explored further
DECOUPLING = "decoupling"  # F = sign(dL/dtheta): gradient direction, unit scale
IDENTITY = "identity"

# Fixed priority; equal positive gains resolve to the earliest entry. A
# candidate must strictly beat gain 0, so exact ties go to the identity.
METHOD_PRIORITY = (DEFENSIVE, DECOUPLING, MAGNITUDE, UNIFORM)

FORWARD = "forward"
CENTRAL = "central"


@dataclass(frozen=True)
class P3AConfig:
    alpha_lr: float = 1e-4
    methods: tuple = METHOD_PRIORITY
    directions: str = "both"          # "plus" | "minus" | "both"
    uniform_s: float = 1.0
    normalize_direction: bool = False
    beta: float = 1e-3                # raw-gradient validation step scale (tests only)
    dfd_variant: str = FORWARD        # gain estimator: forward or central difference
    selection: str = "adaptive_max"   # "adaptive_max" | "fixed"
    fixed_method: str | None = None
    fixed_direction: int = 1
    reselect: str = "per_step"        # "per_step" | "per_attack"
    max_candidates: int | None = None

    def __post_init__(self):
        if self.alpha_lr <= 0:
            raise ValueError(f"alpha_lr must be positive, got {self.alpha_lr}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.methods:
            raise ValueError("at least one update method must be enabled")
        for m in self.methods:
            if m not in METHOD_PRIORITY:
                raise ValueError(f"unknown update method {m!r}")
        if self.directions not in ("plus", "minus", "both"):
            raise ValueError(f"directions must be plus/minus/both, got {self.directions!r}")
        if self.dfd_variant not in (FORWARD, CENTRAL):
            raise ValueError(f"dfd_variant must be forward/central, got {self.dfd_variant!r}")
        if self.selection not in ("adaptive_max", "fixed"):
            raise ValueError(f"selection must be adaptive_max/fixed, got {self.selection!r}")
        if self.selection == "fixed":
            if self.fixed_method not in METHOD_PRIORITY:
                raise ValueError(f"fixed selection needs a valid method, got {self.fixed_method!r}")
            if self.fixed_direction not in (1, -1):
                raise ValueError(f"fixed_direction must be +-1, got {self.fixed_direction}")
        if self.reselect not in ("per_step", "per_attack"):
            raise ValueError(f"reselect must be per_step/per_attack, got {self.reselect!r}")
        if self.max_candidates is not None and self.max_candidates < 1:
            raise ValueError(f"max_candidates must be positive, got {self.max_candidates}")

    def direction_signs(self) -> tuple:
        return {"plus": (1,), "minus": (-1,), "both": (1, -1)}[self.directions]


@dataclass
class Candidate:
    method: str
    direction: int            # +1 / -1, 0 for the identity candidate
    theta_prime: np.ndarray
    g_prime: np.ndarray
    gain: float


@dataclass
class DspTrace:
    base_grad_norm: float
    gains: tuple              # ((method, direction, gain), ...) in evaluation order
    selected_method: str
    selected_direction: int
    selected_gain: float
    mode: str = "adaptive"    # "adaptive" | "fixed"


def dfd_forward(grad_fn: Callable[[np.ndarray], np.ndarray], u: np.ndarray,
                delta_u: np.ndarray, eps_fd: float) -> np.ndarray:
    """Forward-difference estimate of how the gradient map moves along delta_u.

    (grad_fn(u + eps*du) - grad_fn(u)) / eps, an O(eps)-accurate estimate of
    the mixed second derivative contracted with delta_u.
    """
    if eps_fd <= 0:
        raise ValueError(f"eps_fd must be positive, got {eps_fd}")
    if u.shape != delta_u.shape:
        raise ValueError(f"direction shape {delta_u.shape} does not match u {u.shape}")
    out = (grad_fn(u + eps_fd * delta_u) - grad_fn(u)) / eps_fd
    return ensure_finite(out, "dfd_forward")


def dfd_central(grad_fn: Callable[[np.ndarray], np.ndarray], u: np.ndarray,
                delta_u: np.ndarray, eps_fd: float) -> np.ndarray:
    """Symmetric-difference variant of dfd_forward; error drops to O(eps^2)."""
    if eps_fd <= 0:
        raise ValueError(f"eps_fd must be positive, got {eps_fd}")
    if u.shape != delta_u.shape:
        raise ValueError(f"direction shape {delta_u.shape} does not match u {u.shape}")
    out = (grad_fn(u + eps_fd * delta_u) - grad_fn(u - eps_fd * delta_u)) / (2.0 * eps_fd)
    return ensure_finite(out, "dfd_central")


def make_direction(method: str, theta: np.ndarray, g_theta: np.ndarray,
                   cfg: P3AConfig) -> np.ndarray:
    """Parameter-update direction F for one of the four methods."""
    if method == DEFENSIVE:
        out = g_theta.copy()
    elif method == UNIFORM:
        out = np.full_like(theta, cfg.uniform_s)
    elif method == MAGNITUDE:
        out = 2.0 * theta
    elif method == DECOUPLING:
        out = sign(g_theta)
    else:
        raise ValueError(f"unknown update method {method!r}")
    if cfg.normalize_direction:
        n = norm(out)
        if n > 0:
            out = out / n
    return out


def score_candidate(g_prime: np.ndarray, g_base: np.ndarray) -> float:
    """Predicted loss gain of swapping g_base for g_prime (ranking signal only)."""
    return dot(g_prime - g_base, g_base)


def _enabled_pairs(cfg: P3AConfig):
    pairs = [
        (method, direction)
        for method in METHOD_PRIORITY if method in cfg.methods
        for direction in cfg.direction_signs()
    ]
    if cfg.max_candidates is not None:
        pairs = pairs[:cfg.max_candidates]
    return pairs


def evaluate_candidates(model: diffnet.Model, x: np.ndarray, y: int,
                        cfg: P3AConfig, pairs=None):
    """Baseline DualGrad plus one scored Candidate per (method, direction) pair."""
    sample = diffnet.LabeledSample(x, y)
    base = diffnet.backward_dual(model.arch, model.theta, sample)
    if pairs is None:
        pairs = _enabled_pairs(cfg)
    grad_cache: dict = {}

    def grad_at(method, direction):
        key = (method, direction)
        if key not in grad_cache:
            f_dir = make_direction(method, model.theta, base.g_theta, cfg)
            theta_prime = diffnet.perturb_params(model.theta, f_dir, direction * cfg.alpha_lr)
            g_prime = diffnet.input_gradient(model.arch, theta_prime, sample)
            grad_cache[key] = (theta_prime, g_prime)
        return grad_cache[key]

    candidates = []
    for method, direction in pairs:
        theta_prime, g_prime = grad_at(method, direction)
        if cfg.dfd_variant == CENTRAL:
            _, g_opposite = grad_at(method, -direction)
            gain = dot(0.5 * (g_prime - g_opposite), base.g_x)
        else:
            gain = score_candidate(g_prime, base.g_x)
        candidates.append(Candidate(method, direction, theta_prime, g_prime, gain))
    return base, candidates


def _select(base: diffnet.DualGrad, candidates: list) -> Candidate:
    # a candidate must STRICTLY beat the identity floor (and the running best),
    # so exact ties fall back to the unperturbed parameters and equal positive
    # gains resolve to the earliest method in priority order
    best = Candidate(IDENTITY, 0, None, base.g_x, 0.0)
    for c in candidates:
        if c.gain > best.gain:
            best = c
    return best


def p3a_dsp(model: diffnet.Model, x: np.ndarray, y: int, cfg: P3AConfig):
    """One adapted supervision-gradient evaluation: (g_selected, DspTrace)."""
    if cfg.selection == "fixed":
        pairs = [(cfg.fixed_method, cfg.fixed_direction)]
        base, candidates = evaluate_candidates(model, x, y, cfg, pairs)
        chosen = candidates[0]
        trace = DspTrace(
            base_grad_norm=norm(base.g_x),
            gains=tuple((c.method, c.direction, c.gain) for c in candidates),
            selected_method=chosen.method,
            selected_direction=chosen.direction,
            selected_gain=chosen.gain,
            mode="fixed",
        )
        return chosen.g_prime, trace
    base, candidates = evaluate_candidates(model, x, y, cfg)
    chosen = _select(base, candidates)
    trace = DspTrace(
        base_grad_norm=norm(base.g_x),
        gains=tuple((c.method, c.direction, c.gain) for c in candidates),
        selected_method=chosen.method,
        selected_direction=chosen.direction,
        selected_gain=chosen.gain,
    )
    return chosen.g_prime, trace


class P3ADsp:
    """Supervision-gradient provider backed by parameter adaptation.

    One instance per attacked sample. With reselect="per_attack" the first
    non-identity (method, direction) choice is kept for the rest of the run
    (the identity floor still applies at every call); the default re-selects
    from scratch on every call.
    """

    def __init__(self, model: diffnet.Model, cfg: P3AConfig):
        self.model = model
        self.cfg = cfg
        self._frozen: tuple | None = None

    def __call__(self, x: np.ndarray, y: int):
        cfg = self.cfg
        if cfg.selection == "fixed" or self._frozen is None:
            g, trace = p3a_dsp(self.model, x, y, cfg)
            if cfg.selection != "fixed" and cfg.reselect == "per_attack" \
                    and trace.selected_method != IDENTITY:
                self._frozen = (trace.selected_method, trace.selected_direction)
            return g, trace
        base, candidates = evaluate_candidates(self.model, x, y, cfg, [self._frozen])
        chosen = _select(base, candidates)
        trace = DspTrace(
            base_grad_norm=norm(base.g_x),
            gains=tuple((c.method, c.direction, c.gain) for c in candidates),
            selected_method=chosen.method,
            selected_direction=chosen.direction,
            selected_gain=chosen.gain,
        )
        return chosen.g_prime, trace


class VanillaDsp:
    """Plain supervision gradient: dL/dx at the victim's own parameters."""

    def __init__(self, model: diffnet.Model):
        self.model = model

    def __call__(self, x: np.ndarray, y: int):
        g = diffnet.input_gradient(self.model.arch, self.model.theta, diffnet.LabeledSample(x, y))
        return g, None


def dsp_vanilla(model: diffnet.Model, x: np.ndarray, y: int):
    """Function form of VanillaDsp: (g, trace=None)."""
    return VanillaDsp(model)(x, y)


def lookahead_loss_pair(model: diffnet.Model, x: np.ndarray, y: int,
                        theta_prime: np.ndarray, beta: float):
    """Losses of one raw-gradient step guided by the perturbed vs. base gradient.

    Both losses are evaluated at the ORIGINAL parameters; only the step
    direction differs: x + beta * dL/dx(x, theta') versus x + beta * dL/dx(x,
    theta). This is the ground truth the gain estimate tries to rank.
    """
    sample = diffnet.LabeledSample(x, y)
    g_base = diffnet.input_gradient(model.arch, model.theta, sample)
    g_prime = diffnet.input_gradient(model.arch, theta_prime, sample)
    loss_base = diffnet.loss_ce(model.logits(x + beta * g_base), y)
    loss_prime = diffnet.loss_ce(model.logits(x + beta * g_prime), y)
    return loss_prime, loss_base
