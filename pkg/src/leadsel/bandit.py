"""Thompson sampling with a single-hidden-layer reward network.

The network predicts each arm's mean reward from its block-embedded context;
its parameter gradient defines the posterior variance through a maintained
inverse kernel matrix, updated by rank-one Sherman-Morrison downdates.

Parameter vector layout (fixed, relied on by checkpoints and the kernels):
``[W1 row-major (m x input_dim), b1 (m), w2 (m), b2 (1)]`` so
``p = m * input_dim + 2 * m + 1``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .context import EmbeddedContext
from .errors import NumericalError, ParameterError

logger = logging.getLogger(__name__)

NEGATIVE_VARIANCE_FLOOR = -1e-12
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NtsConfig:
    """Hyperparameters of the sampler and its reward network."""

    input_dim: int
    nu: float = 1e-6
    lam: float = 0.1
    m: int = 128
    learning_rate: float = 1e-2
    sgd_steps_per_round: int = 100
    minibatch_size: int = 512
    weight_decay_schedule: str = "lambda_over_t"
    sgd_dtype: str = "float64"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ParameterError("input_dim must be at least 1")
        if self.nu <= 0:
            raise ParameterError("nu must be positive")
        if self.lam <= 0:
            raise ParameterError("lam must be positive")
        if self.m < 1:
            raise ParameterError("m must be at least 1")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.sgd_steps_per_round < 0:
            raise ParameterError("sgd_steps_per_round must be non-negative")
        if self.minibatch_size < 1:
            raise ParameterError("minibatch_size must be at least 1")
        if self.weight_decay_schedule != "lambda_over_t":
            raise ParameterError(f"unknown weight decay schedule {self.weight_decay_schedule!r}")
        if self.sgd_dtype not in ("float64", "float32"):
            raise ParameterError(f"sgd_dtype must be float64 or float32, got {self.sgd_dtype!r}")

    @property
    def n_params(self) -> int:
        return self.m * self.input_dim + 2 * self.m + 1


def _theta_views(theta: np.ndarray, config: NtsConfig):
    m, dim = config.m, config.input_dim
    w1 = theta[: m * dim].reshape(m, dim)
    b1 = theta[m * dim : m * dim + m]
    w2 = theta[m * dim + m : m * dim + 2 * m]
    b2 = theta[m * dim + 2 * m :]
    return w1, b1, w2, b2


HIDDEN_BIAS_INIT = 0.1


def init_theta(config: NtsConfig, rng: np.random.Generator) -> np.ndarray:
    """Glorot-style scaled uniform draws for the weights.

    Hidden biases start at a small positive constant so every ReLU unit is
    initially active on every input block; with narrow networks, zero biases
    leave some arms' blocks near-dead at init and unlearnable in practice.
    """
    theta = np.zeros(config.n_params)
    w1, b1, w2, _ = _theta_views(theta, config)
    limit1 = np.sqrt(6.0 / (config.input_dim + config.m))
    limit2 = np.sqrt(6.0 / (config.m + 1))
    w1[:] = rng.uniform(-limit1, limit1, size=w1.shape)
    b1[:] = HIDDEN_BIAS_INIT
    w2[:] = rng.uniform(-limit2, limit2, size=w2.shape)
    return theta


def forward(theta: np.ndarray, x: np.ndarray, config: NtsConfig) -> float:
    """f(x; theta) = w2 . relu(W1 x + b1) + b2."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (config.input_dim,):
        raise ParameterError(f"context has shape {x.shape}, expected ({config.input_dim},)")
    w1, b1, w2, b2 = _theta_views(theta, config)
    z = w1 @ x + b1
    return float(w2 @ np.maximum(z, 0.0) + b2[0])


def gradient(theta: np.ndarray, x: np.ndarray, config: NtsConfig) -> np.ndarray:
    """df/dtheta at (x, theta), flattened in the documented layout.

    The ReLU subgradient at exactly 0 is taken as 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (config.input_dim,):
        raise ParameterError(f"context has shape {x.shape}, expected ({config.input_dim},)")
    w1, b1, w2, _ = _theta_views(theta, config)
    z = w1 @ x + b1
    active = z > 0.0
    g = np.empty(config.n_params)
    gw1, gb1, gw2, gb2 = _theta_views(g, config)
    gb1[:] = np.where(active, w2, 0.0)
    gw1[:] = gb1[:, None] * x[None, :]
    gw2[:] = np.maximum(z, 0.0)
    gb2[0] = 1.0
    return g


@lru_cache(maxsize=64)
def _block_columns(d: int, k: int) -> np.ndarray:
    return k * d + np.arange(d)


def _sparse_gradient(
    config: NtsConfig, features: np.ndarray, z_col: np.ndarray, w2: np.ndarray, k: int, d: int
) -> tuple[np.ndarray, np.ndarray]:
    """(indices, values) of the non-zero gradient entries for one arm.

    Inactive ReLU units contribute exactly zero to every gradient block, so
    only active units appear; the bias-to-output entry is always present.
    """
    m, dim = config.m, config.input_dim
    active = np.flatnonzero(z_col > 0.0)
    cols = _block_columns(d, k)
    w1_idx = (active[:, None] * dim + cols[None, :]).ravel()
    idx = np.concatenate([w1_idx, m * dim + active, m * dim + m + active, [config.n_params - 1]])
    w2_act = w2[active]
    vals = np.concatenate([(w2_act[:, None] * features[None, :]).ravel(), w2_act, z_col[active], [1.0]])
    return np.ascontiguousarray(idx, dtype=np.intp), vals


def _sigma_sq(quad: float, config: NtsConfig) -> float:
    sigma_sq = config.lam * quad / config.m
    if not np.isfinite(sigma_sq):
        raise NumericalError(f"posterior variance is not finite ({sigma_sq!r})")
    if sigma_sq < 0.0:
        if sigma_sq < NEGATIVE_VARIANCE_FLOOR:
            raise NumericalError(f"posterior variance {sigma_sq!r} below cancellation floor")
        sigma_sq = 0.0
    return sigma_sq


@dataclass(frozen=True)
class ArmPosterior:
    """Per-arm posterior summary for one round."""

    mean: np.ndarray
    variance: np.ndarray
    sampled: np.ndarray


@dataclass
class RegretLedger:
    """Per-round optimal/obtained rewards and their cumulative gap."""

    optimal: list[float] = field(default_factory=list)
    obtained: list[float] = field(default_factory=list)
    cumulative: float = 0.0

    def increments(self) -> np.ndarray:
        return np.asarray(self.optimal) - np.asarray(self.obtained)

    def __len__(self) -> int:
        return len(self.optimal)


def record_regret(ledger: RegretLedger, optimal_reward: float, obtained_reward: float) -> RegretLedger:
    """Append one round; the cumulative sum uses the append order."""
    if not (np.isfinite(optimal_reward) and np.isfinite(obtained_reward)):
        raise ParameterError("rewards must be finite")
    ledger.optimal.append(float(optimal_reward))
    ledger.obtained.append(float(obtained_reward))
    ledger.cumulative += float(optimal_reward) - float(obtained_reward)
    return ledger


@dataclass
class BanditState:
    """Mutable sampler state, exclusively owned by one round loop."""

    config: NtsConfig
    theta: np.ndarray
    u_inv: np.ndarray
    t: int
    rng: np.random.Generator
    _history_x: np.ndarray
    _history_r: np.ndarray
    _history_x32: np.ndarray | None = None  # mirror kept when sgd_dtype is float32

    @property
    def history_x(self) -> np.ndarray:
        return self._history_x[: self.t]

    @property
    def history_r(self) -> np.ndarray:
        return self._history_r[: self.t]


def init_state(config: NtsConfig, seed: int) -> BanditState:
    p = config.n_params
    bytes_needed = p * p * 8
    if bytes_needed > 2**31:
        logger.warning(
            "inverse kernel matrix needs %.1f GiB (p=%d); consider a smaller hidden width",
            bytes_needed / 2**30,
            p,
        )
    rng = np.random.default_rng(seed)
    theta = init_theta(config, rng)
    u_inv = np.eye(p) / config.lam
    capacity = 256
    return BanditState(
        config=config,
        theta=theta,
        u_inv=u_inv,
        t=0,
        rng=rng,
        _history_x=np.empty((capacity, config.input_dim)),
        _history_r=np.empty(capacity),
        _history_x32=(
            np.empty((capacity, config.input_dim), dtype=np.float32)
            if config.sgd_dtype == "float32"
            else None
        ),
    )


def posterior_variance(state: BanditState, g: np.ndarray) -> float:
    """sigma^2 = lam * g' U^-1 g / m via the maintained inverse."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (state.config.n_params,):
        raise ParameterError(f"gradient has shape {g.shape}, expected ({state.config.n_params},)")
    quad = _kernels.quad_form(state.u_inv, g)
    return _sigma_sq(quad, state.config)


def sample_rewards(state: BanditState, embedded: EmbeddedContext, rng: np.random.Generator) -> ArmPosterior:
    """Gaussian posterior sample per arm: Normal(mean, nu^2 sigma^2).

    Exploits the block structure of embedded contexts: each arm's gradient
    is non-zero only on its own input block plus the shared tail.
    """
    cfg = state.config
    n_arms = embedded.n_arms
    d = embedded.dim
    if n_arms * d != cfg.input_dim:
        raise ParameterError(
            f"embedded context is {n_arms}x{n_arms * d}, expected input_dim {cfg.input_dim}"
        )
    w1, b1, w2, b2 = _theta_views(state.theta, cfg)
    # all arms share the same d features; z for arm k uses W1's block-k columns
    feats = _embedded_features(embedded)
    z = w1.reshape(cfg.m, n_arms, d) @ feats + b1[:, None]  # (m, K)

    mean = np.maximum(z, 0.0).T @ w2 + b2[0]  # (K,)
    variance = np.empty(n_arms)
    for k in range(n_arms):
        idx, vals = _sparse_gradient(cfg, feats, z[:, k], w2, k, d)
        quad = _kernels.quad_form_idx(state.u_inv, idx, vals)
        variance[k] = _sigma_sq(quad, cfg)
    sampled = mean + cfg.nu * np.sqrt(variance) * rng.standard_normal(n_arms)
    return ArmPosterior(mean=mean, variance=variance, sampled=sampled)


def _embedded_features(embedded: EmbeddedContext) -> np.ndarray:
    """Recover the shared d-vector from the block-diagonal embedding."""
    return embedded.vectors[0, : embedded.dim]


def select_arm(posterior: ArmPosterior) -> int:
    """Argmax of the sampled rewards; ties break toward the lowest arm id."""
    return int(np.argmax(posterior.sampled))


@dataclass(frozen=True)
class UpdateResult:
    """Diagnostics from one round's update."""

    losses: np.ndarray
    gradient: np.ndarray
    denominator: float


def _grow_history(state: BanditState, needed: int) -> None:
    capacity = state._history_x.shape[0]
    if needed <= capacity:
        return
    new_capacity = max(needed, 2 * capacity)
    grown_x = np.empty((new_capacity, state.config.input_dim))
    grown_r = np.empty(new_capacity)
    grown_x[: state.t] = state._history_x[: state.t]
    grown_r[: state.t] = state._history_r[: state.t]
    state._history_x = grown_x
    state._history_r = grown_r
    if state._history_x32 is not None:
        grown_x32 = np.empty((new_capacity, state.config.input_dim), dtype=np.float32)
        grown_x32[: state.t] = state._history_x32[: state.t]
        state._history_x32 = grown_x32


def _sgd(state: BanditState, n: int, counter: int) -> np.ndarray:
    """Gradient descent on the mean squared reward error over history.

    Weight decay lam/counter is applied to every parameter, coupled into
    the gradient. Histories larger than ``minibatch_size`` are subsampled
    per step as a contiguous window at a random offset, which keeps the
    batch a zero-copy view of the history buffer.
    """
    cfg = state.config
    w1, b1, w2, b2 = _theta_views(state.theta, cfg)
    use32 = state._history_x32 is not None
    X = (state._history_x32 if use32 else state._history_x)[:n]
    r = state._history_r[:n]
    if use32:
        r = r.astype(np.float32)
    lr = cfg.learning_rate
    decay = cfg.lam / counter
    losses = np.empty(cfg.sgd_steps_per_round)
    for step in range(cfg.sgd_steps_per_round):
        if n > cfg.minibatch_size:
            if step == 0:
                # the newest observation must be fitted promptly
                start = n - cfg.minibatch_size
            else:
                start = int(state.rng.integers(0, n - cfg.minibatch_size + 1))
            xb = X[start : start + cfg.minibatch_size]
            rb = r[start : start + cfg.minibatch_size]
        else:
            xb, rb = X, r
        if use32:
            w1c = w1.astype(np.float32)
            b1c = b1.astype(np.float32)
            w2c = w2.astype(np.float32)
            b2c = np.float32(b2[0])
        else:
            w1c, b1c, w2c, b2c = w1, b1, w2, b2[0]
        z = xb @ w1c.T + b1c  # (B, m)
        h = np.maximum(z, 0.0)
        err = h @ w2c + b2c - rb
        losses[step] = float(err @ err) / err.size
        coef = 2.0 / err.size
        gw2 = coef * (h.T @ err)
        gb2 = coef * float(err.sum())
        dz = np.outer(err, w2c)
        dz[z <= 0.0] = 0.0
        gw1 = coef * (dz.T @ xb)
        gb1 = coef * dz.sum(axis=0)
        w1 -= lr * (gw1 + decay * w1)
        b1 -= lr * (gb1 + decay * b1)
        w2 -= lr * (gw2 + decay * w2)
        b2 -= lr * (gb2 + decay * b2)
    return losses


def update(
    state: BanditState,
    x_chosen: np.ndarray,
    reward: float,
    *,
    sparse_block: tuple[int, int] | None = None,
) -> UpdateResult:
    """One observed round: train the network, then downdate the kernel inverse.

    The rank-one term uses the gradient at the freshly trained parameters.
    ``sparse_block=(arm_id, d)`` routes the downdate through the sparse
    kernel path for block-embedded contexts; semantics are unchanged.

    On a failed downdate the parameters are rolled back and
    :class:`NumericalError` propagates with the state unchanged.
    """
    if not np.isfinite(reward):
        raise ParameterError(f"reward must be finite, got {reward!r}")
    cfg = state.config
    x_chosen = np.asarray(x_chosen, dtype=np.float64)
    if x_chosen.shape != (cfg.input_dim,):
        raise ParameterError(f"context has shape {x_chosen.shape}, expected ({cfg.input_dim},)")

    t_new = state.t + 1
    _grow_history(state, t_new)
    state._history_x[state.t] = x_chosen
    state._history_r[state.t] = reward
    if state._history_x32 is not None:
        state._history_x32[state.t] = x_chosen

    theta_backup = state.theta.copy()
    losses = _sgd(state, t_new, t_new)

    g = gradient(state.theta, x_chosen, cfg)
    try:
        if sparse_block is None:
            denom = _kernels.sm_update(state.u_inv, g, float(cfg.m))
        else:
            k, d = sparse_block
            w1, b1, w2, _ = _theta_views(state.theta, cfg)
            feats = x_chosen[k * d : (k + 1) * d]
            z_col = w1[:, k * d : (k + 1) * d] @ feats + b1
            idx, vals = _sparse_gradient(cfg, feats, z_col, w2, k, d)
            denom = _kernels.sm_update_idx(state.u_inv, idx, vals, float(cfg.m))
    except NumericalError:
        state.theta[:] = theta_backup
        raise

    state.t = t_new
    return UpdateResult(losses=losses, gradient=g, denominator=float(denom))


def save_state(state: BanditState, path) -> None:
    """Exact checkpoint: parameters, kernel inverse, history, and RNG state."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "t": state.t,
        "rng_state": state.rng.bit_generator.state,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            theta=state.theta,
            u_inv=state.u_inv,
            history_x=state.history_x,
            history_r=state.history_r,
            meta=np.array(json.dumps(meta)),
        )


def load_state(path) -> BanditState:
    """Restore a checkpoint written by :func:`save_state`, bit-exact."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"][()]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ParameterError(f"unsupported checkpoint version {meta.get('version')!r}")
        config = NtsConfig(**meta["config"])
        theta = np.array(data["theta"])
        u_inv = np.array(data["u_inv"])
        history_x = np.array(data["history_x"])
        history_r = np.array(data["history_r"])
    t = int(meta["t"])
    if theta.shape != (config.n_params,) or u_inv.shape != (config.n_params, config.n_params):
        raise ParameterError("checkpoint arrays do not match its config")
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    capacity = max(256, t)
    full_x = np.empty((capacity, config.input_dim))
    full_r = np.empty(capacity)
    full_x[:t] = history_x
    full_r[:t] = history_r
    full_x32 = None
    if config.sgd_dtype == "float32":
        full_x32 = np.empty((capacity, config.input_dim), dtype=np.float32)
        full_x32[:t] = history_x
    return BanditState(
        config=config,
        theta=theta,
        u_inv=np.ascontiguousarray(u_inv),
        t=t,
        rng=rng,
        _history_x=full_x,
        _history_r=full_r,
        _history_x32=full_x32,
    )
