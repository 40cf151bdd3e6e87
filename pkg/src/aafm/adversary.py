"""Fast-gradient embedding perturbations and their automatic adaptation.

Perturbation strength is per feature value (softplus of a learnable
per-domain scale divided by the value's combination variety), the
adversarial loss weight is per sample (an affine map of its negative joint
frequency onto ``[1, t]``), and an optional regularizer keeps the learnable
scales from collapsing early in training.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import fm
from .errors import ConfigError

ZERO_GRAD = 1e-12
NORM_FLOOR = 1e-8


@dataclass
class AdversaryConfig:
    base_epsilon: float = 0.5
    lambda_fixed: float = 1.0
    t: float = 100.0
    anneal_alpha: float = 1e-3
    adaptive_epsilon: bool = False
    adaptive_lambda: bool = False
    decay: bool = False

    def __post_init__(self):
        if self.t < 1:
            raise ConfigError(f"t must be >= 1, got {self.t}")
        if self.base_epsilon < 0:
            raise ConfigError("base_epsilon must be non-negative")
        if self.anneal_alpha < 0:
            raise ConfigError("anneal_alpha must be non-negative")
        if self.lambda_fixed < 0:
            raise ConfigError("lambda_fixed must be non-negative")

    @property
    def active(self):
        """Whether the adversarial loss term contributes anything at all."""
        eps_on = self.adaptive_epsilon or self.base_epsilon > 0
        lam_on = self.adaptive_lambda or self.lambda_fixed > 0
        return eps_on and lam_on


@dataclass
class AdversaryState:
    omega: np.ndarray
    tau: int = 1
    s_min: float = 0.0
    s_max: float = 0.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.s_min > self.s_max:
            raise ValueError("s_min must not exceed s_max")


def init_state(n_domains, joint_alpha=None):
    """Zero scales, epoch 1, and frequency extrema cached from ``joint_alpha``."""
    state = AdversaryState(np.zeros(n_domains))
    if joint_alpha is not None:
        cache_extrema(state, joint_alpha)
    return state


def cache_extrema(state, joint_alpha):
    s = -np.asarray(joint_alpha, dtype=np.float64)
    state.s_min = float(s.min())
    state.s_max = float(s.max())


def softplus(x):
    return np.logaddexp(0.0, x)


def fgsm_direction(trace, labels, params):
    """Unit loss-gradient directions per embedding, ``(B, n, d)``, and a mask
    of the embeddings whose gradient norm is above the zero guard."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    g = (trace.yhat - y)[:, None, None] * fm.grad_logit_wrt_embedding(trace, params)
    norms = np.linalg.norm(g, axis=2)
    live = norms >= ZERO_GRAD
    unit = np.where(live[:, :, None], g / np.where(live, norms, 1.0)[:, :, None], 0.0)
    return unit, live


def fgsm_delta(trace, labels, params, eps):
    """Perturbation of norm ``eps[b, i]`` along each embedding's loss gradient.

    ``eps`` broadcasts against ``(B, n)``; a per-domain vector works too.
    Embeddings with a vanishing gradient get an exactly-zero perturbation.
    """
    unit, _ = fgsm_direction(trace, labels, params)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), unit.shape[:2])
    if (eps < 0).any():
        raise ValueError("perturbation strengths must be non-negative")
    return eps[:, :, None] * unit


def adaptive_epsilon(omega, beta):
    """``softplus(omega_i / beta)``; ``omega`` per domain, ``beta`` per sample-domain.

    Variety 0 (value unseen in training) is treated as 1.
    """
    beta = np.where(np.asarray(beta, dtype=np.float64) <= 0, 1.0, beta)
    return softplus(np.asarray(omega)[None, :] / np.atleast_2d(beta)) if np.ndim(beta) == 2 \
        else softplus(np.asarray(omega) / beta)


def epsilon_for(values, stats, state, config):
    """Strength per (sample, domain) under the configured mode, ``(B, n)``."""
    values = np.atleast_2d(values)
    if config.adaptive_epsilon:
        _, beta = stats.lookup(values)
        return adaptive_epsilon(state.omega, beta)
    return np.full(values.shape, float(config.base_epsilon))


def omega_gradient(d_e_adv, unit, beta, omega):
    """Gradient of the adversarial objective w.r.t. the per-domain scales.

    ``d_e_adv`` is the objective's gradient w.r.t. the perturbed embeddings
    and ``unit`` the (frozen) perturbation directions, so the derivative
    w.r.t. each strength is their inner product; the chain continues through
    ``softplus'(omega / beta) / beta``.
    """
    beta = np.where(np.asarray(beta, dtype=np.float64) <= 0, 1.0, beta)
    d_eps = np.einsum("bid,bid->bi", d_e_adv, unit)
    z = np.asarray(omega)[None, :] / beta
    return np.sum(d_eps * expit(z) / beta, axis=0)


def reweight_lambda(joint_alpha, state, config):
    """Per-sample adversarial weight in ``[1, t]``, larger for rarer samples."""
    joint_alpha = np.asarray(joint_alpha, dtype=np.float64)
    if not config.adaptive_lambda:
        return np.full(joint_alpha.shape, float(config.lambda_fixed))
    t = float(config.t)
    span = state.s_max - state.s_min
    if span <= 0:
        return np.full(joint_alpha.shape, (1.0 + t) / 2.0)
    s = -joint_alpha
    lam = 1.0 + (t - 1.0) * (s - state.s_min) / span
    return np.clip(lam, 1.0, t)


def decay_loss(state, config):
    if not config.decay or config.anneal_alpha == 0:
        return 0.0
    norm = max(float(np.linalg.norm(state.omega)), NORM_FLOOR)
    return config.anneal_alpha / (state.tau * norm)


def decay_gradient(state, config):
    """``-alpha * omega / (tau * ||omega||^3)``, zero when the regularizer is off."""
    if not config.decay or config.anneal_alpha == 0:
        return np.zeros_like(state.omega)
    norm = float(np.linalg.norm(state.omega))
    if norm < NORM_FLOOR:
        # clamped norm: the loss is flat in omega there
        return np.zeros_like(state.omega)
    return -config.anneal_alpha * state.omega / (state.tau * norm ** 3)
