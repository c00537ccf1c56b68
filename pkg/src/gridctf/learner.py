"""Loss assembly and optimisation for one agent.

Trajectories arrive as fixed-length unrolls with masks for padding past an
episode boundary.  The learner replays each unroll through the current
parameters (reusing the stored latent noise so importance ratios are exact
when behaviour and target coincide), corrects the value targets with
V-trace, and descends the combined actor-critic / divergence /
reward-prediction objective with RMSProp.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import agent as agent_mod
from . import nn
from .agent import AgentParams, VARIANT_FTW
from .nn import Tensor

UNROLL_LENGTH = 100
BATCH_SIZE = 32
GAMMA = 0.99
RHO_BAR = 1.0
C_BAR = 1.0
BASELINE_WEIGHT = 0.5  # fixed, not evolved
GRAD_CLIP_NORM = 10.0
KL_PRIOR_TARGET_STD = 0.1  # prior is regularised toward N(0, 0.1)

REPLAY_CAPACITY = 800
REPLAY_SEQ_LEN = 3
REPLAY_HALF_BATCH = 16

LABEL_NEG, LABEL_ZERO, LABEL_POS = 0, 1, 2


class LearnerError(ValueError):
    pass


class NotReady(Exception):
    """Replay warm-up has not finished; skip the loss term."""


@dataclass
class LossWeights:
    learning_rate: float = 3e-4
    entropy_cost: float = 5e-3
    reward_pred_weight: float = 0.3
    kl_posterior_prior: float = 1e-2
    kl_prior_reg: float = 1e-3
    fast_to_slow_scale: float = 0.5
    baseline: float = BASELINE_WEIGHT

    def __post_init__(self):
        if self.baseline != BASELINE_WEIGHT:
            raise LearnerError("baseline cost weight is fixed at 0.5")
        for name in ("learning_rate", "entropy_cost", "reward_pred_weight",
                     "kl_posterior_prior", "kl_prior_reg", "fast_to_slow_scale"):
            if getattr(self, name) <= 0:
                raise LearnerError(f"{name} must be positive")


@dataclass
class Trajectory:
    """Fixed-length unroll of one player's experience.

    Arrays are sized for ``unroll + 1`` observations (the extra slot holds
    the bootstrap observation); ``length`` counts real steps and ``mask``
    zeroes the padding of partial windows.
    """

    length: int
    windows: np.ndarray  # (T+1, W, W, C) uint8
    scalars: np.ndarray  # (T+1, S) float32
    prev_actions: np.ndarray  # (T+1,) int64, -1 before the first action
    prev_rewards: np.ndarray  # (T+1,) float32
    actions: np.ndarray  # (T,) int64
    rewards: np.ndarray  # (T,) float32
    behavior_log_probs: np.ndarray  # (T,) float32
    behavior_values: np.ndarray  # (T,) float32
    dones: np.ndarray  # (T,) bool
    mask: np.ndarray  # (T,) float32
    latent_noise: np.ndarray  # (T+1, latent) float32
    init_state: dict[str, np.ndarray]
    policy_version: int = 0
    agent_id: int = 0
    posterior_stats: np.ndarray | None = None
    prior_stats: np.ndarray | None = None

    @property
    def unroll(self) -> int:
        return self.actions.shape[0]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.behavior_log_probs[: self.length])):
            raise LearnerError("behaviour log-probs must be finite")
        if self.length > self.unroll:
            raise LearnerError("length exceeds unroll size")


def vtrace(
    behavior_log_probs: np.ndarray,
    target_log_probs: np.ndarray,
    rewards: np.ndarray,
    values: np.ndarray,
    discounts: np.ndarray,
    mask: np.ndarray,
    rho_bar: float = RHO_BAR,
    c_bar: float = C_BAR,
) -> tuple[np.ndarray, np.ndarray]:
    """Off-policy corrected value targets and policy advantages.

    ``values`` has one more column than the rest (bootstrap).  Returns
    (value targets v_s, advantages rho * (r + gamma * v_{s+1} - V_s)).
    """
    b, t = rewards.shape
    if values.shape != (b, t + 1):
        raise LearnerError(f"values must have shape {(b, t + 1)}, got {values.shape}")
    ratios = np.exp(target_log_probs - behavior_log_probs)
    rhos = np.minimum(rho_bar, ratios) * mask
    cs = np.minimum(c_bar, ratios) * mask

    vs = np.zeros((b, t + 1), dtype=np.float64)
    vs[:, t] = values[:, t]
    for s in range(t - 1, -1, -1):
        delta = rhos[:, s] * (rewards[:, s] + discounts[:, s] * values[:, s + 1] - values[:, s])
        vs[:, s] = values[:, s] + delta + discounts[:, s] * cs[:, s] * (vs[:, s + 1] - values[:, s + 1])

    v_next = np.concatenate([vs[:, 1:t], values[:, t : t + 1]], axis=1)
    adv = rhos * (rewards + discounts * v_next - values[:, :t])
    return vs[:, :t], adv


@dataclass
class ReplaySequence:
    windows: np.ndarray  # (3, W, W, C) uint8
    scalars: np.ndarray  # (3, S) float32
    label: int  # LABEL_NEG / LABEL_ZERO / LABEL_POS


class RewardPredReplay:
    """Two ring buffers: sequences ending in a non-zero reward, and in zero."""

    def __init__(self, capacity: int = REPLAY_CAPACITY):
        self.capacity = capacity
        self.nonzero: deque[ReplaySequence] = deque(maxlen=capacity)
        self.zero: deque[ReplaySequence] = deque(maxlen=capacity)

    def push(self, seq: ReplaySequence) -> None:
        (self.zero if seq.label == LABEL_ZERO else self.nonzero).append(seq)

    @property
    def ready(self) -> bool:
        return len(self.nonzero) >= REPLAY_HALF_BATCH and len(self.zero) >= REPLAY_HALF_BATCH

    def sample(self, rng: np.random.Generator, half: int = REPLAY_HALF_BATCH):
        """Uniform 16 + 16 batch; raises NotReady during warm-up."""
        if len(self.nonzero) < half or len(self.zero) < half:
            raise NotReady(
                f"replay warm-up: {len(self.nonzero)}/{half} non-zero, {len(self.zero)}/{half} zero"
            )
        picks = [self.nonzero[i] for i in rng.choice(len(self.nonzero), size=half, replace=False)]
        picks += [self.zero[i] for i in rng.choice(len(self.zero), size=half, replace=False)]
        windows = np.stack([p.windows for p in picks])
        scalars = np.stack([p.scalars for p in picks])
        labels = np.array([p.label for p in picks], dtype=np.int64)
        return windows, scalars, labels

    def state_arrays(self) -> dict:
        def pack(buf):
            return {
                "windows": np.stack([s.windows for s in buf]) if buf else np.zeros((0,)),
                "scalars": np.stack([s.scalars for s in buf]) if buf else np.zeros((0,)),
                "labels": np.array([s.label for s in buf], dtype=np.int64),
            }

        return {"nonzero": pack(self.nonzero), "zero": pack(self.zero)}

    @classmethod
    def from_state_arrays(cls, state: dict, capacity: int = REPLAY_CAPACITY) -> "RewardPredReplay":
        rp = cls(capacity)
        for name, buf in (("nonzero", rp.nonzero), ("zero", rp.zero)):
            packed = state[name]
            for i in range(len(packed["labels"])):
                buf.append(ReplaySequence(packed["windows"][i], packed["scalars"][i],
                                          int(packed["labels"][i])))
        return rp


def reward_label(reward: float) -> int:
    if reward > 0:
        return LABEL_POS
    if reward < 0:
        return LABEL_NEG
    return LABEL_ZERO


@dataclass
class BatchArrays:
    """Stacked trajectory batch ready for an unroll."""

    windows: np.ndarray  # (B, T+1, W, W, C)
    scalars: np.ndarray  # (B, T+1, S)
    prev_actions: np.ndarray
    prev_rewards: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_log_probs: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    latent_noise: np.ndarray
    init_state: agent_mod.RecurrentState


def stack_batch(trajectories: list[Trajectory]) -> BatchArrays:
    for tr in trajectories:
        tr.validate()
    return BatchArrays(
        windows=np.stack([t.windows for t in trajectories]),
        scalars=np.stack([t.scalars for t in trajectories]),
        prev_actions=np.stack([t.prev_actions for t in trajectories]),
        prev_rewards=np.stack([t.prev_rewards for t in trajectories]),
        actions=np.stack([t.actions for t in trajectories]),
        rewards=np.stack([t.rewards for t in trajectories]),
        behavior_log_probs=np.stack([t.behavior_log_probs for t in trajectories]),
        dones=np.stack([t.dones for t in trajectories]),
        mask=np.stack([t.mask for t in trajectories]),
        latent_noise=np.stack([t.latent_noise for t in trajectories]),
        init_state=agent_mod.stack_states([t.init_state for t in trajectories]),
    )


def build_loss(
    batch: BatchArrays,
    params: AgentParams,
    weights: LossWeights,
    replay_batch=None,
    gamma: float = GAMMA,
    rho_bar: float = RHO_BAR,
    c_bar: float = C_BAR,
    frozen_targets: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Tensor, dict]:
    """Differentiable total loss and per-component numeric breakdown.

    Components sum over time and average over the batch, so the loss is
    invariant to trajectory order.  Value targets and advantages are
    stop-gradients; pass ``frozen_targets`` (vs, adv) to pin them, e.g. when
    comparing against finite differences.
    """
    cfg = params.cfg
    b, t_plus_1 = batch.prev_actions.shape
    t_len = t_plus_1 - 1
    dtype = next(iter(params.tensors.values())).data.dtype

    state = batch.init_state
    log_probs, values, entropies, kls_qp, kls_prior = [], [], [], [], []
    for t in range(t_plus_1):
        obs_flat = agent_mod.obs_to_arrays(batch.windows[:, t], batch.scalars[:, t], dtype=dtype)
        u = agent_mod.encode_obs(params, obs_flat)
        out = agent_mod.step_core(
            params, state, u,
            batch.prev_actions[:, t],
            batch.prev_rewards[:, t],
            latent_noise=batch.latent_noise[:, t],
            fast_to_slow_scale=weights.fast_to_slow_scale,
        )
        values.append(out.value)
        if t < t_len:
            head = nn.CategoricalHead(out.logits)
            log_probs.append(head.log_prob(batch.actions[:, t]))
            entropies.append(head.entropy())
            if cfg.variant == VARIANT_FTW:
                kls_qp.append(nn.kl_diag_gauss(out.posterior, out.prior))
                target = nn.DiagGaussian(
                    Tensor(np.zeros((b, cfg.latent_dim), dtype=dtype)),
                    Tensor(np.full((b, cfg.latent_dim), np.log(KL_PRIOR_TARGET_STD), dtype=dtype)),
                )
                kls_prior.append(nn.kl_diag_gauss(out.prior, target))
        state = out.state

    if frozen_targets is None:
        target_log_probs = np.stack([lp.data for lp in log_probs], axis=1)
        values_np = np.stack([v.data[:, 0] for v in values], axis=1)
        discounts = gamma * (1.0 - batch.dones.astype(np.float64))
        vs, adv = vtrace(
            batch.behavior_log_probs, target_log_probs, batch.rewards.astype(np.float64),
            values_np.astype(np.float64), discounts, batch.mask.astype(np.float64),
            rho_bar, c_bar,
        )
    else:
        vs, adv = frozen_targets

    inv_b = 1.0 / b
    pg_loss = nn.constant(0.0)
    value_loss = nn.constant(0.0)
    entropy_sum = nn.constant(0.0)
    kl_qp_sum = nn.constant(0.0)
    kl_prior_sum = nn.constant(0.0)
    for t in range(t_len):
        m = batch.mask[:, t].astype(dtype)
        pg_loss = pg_loss - nn.sum_(nn.mul(log_probs[t], (adv[:, t] * m).astype(dtype)))
        err = nn.narrow(values[t], -1, 0, 1) - (vs[:, t].astype(dtype)).reshape(b, 1)
        value_loss = value_loss + nn.sum_(nn.mul(nn.mul(err, err), m.reshape(b, 1)))
        entropy_sum = entropy_sum + nn.sum_(nn.mul(entropies[t], m))
        if cfg.variant == VARIANT_FTW:
            kl_qp_sum = kl_qp_sum + nn.sum_(nn.mul(kls_qp[t], m))
            kl_prior_sum = kl_prior_sum + nn.sum_(nn.mul(kls_prior[t], m))

    loss = (
        nn.mul(pg_loss, inv_b)
        + nn.mul(value_loss, weights.baseline * inv_b)
        - nn.mul(entropy_sum, weights.entropy_cost * inv_b)
        + nn.mul(kl_qp_sum, weights.kl_posterior_prior * inv_b)
        + nn.mul(kl_prior_sum, weights.kl_prior_reg * inv_b)
    )
    components = {
        "pg": float(pg_loss.data) * inv_b,
        "value": float(value_loss.data) * BASELINE_WEIGHT * inv_b,
        "entropy": float(entropy_sum.data) / max(1.0, float(batch.mask.sum())),
        "kl_posterior_prior": float(kl_qp_sum.data) * inv_b,
        "kl_prior_reg": float(kl_prior_sum.data) * inv_b,
        "reward_pred": 0.0,
    }

    if replay_batch is not None:
        windows, scalars_, labels = replay_batch
        nb = windows.shape[0]
        flat = np.stack(
            [agent_mod.obs_to_arrays(windows[:, i], scalars_[:, i], dtype=dtype) for i in range(REPLAY_SEQ_LEN)],
            axis=1,
        )
        logits = agent_mod.reward_pred_logits(params, flat)
        ce = -nn.mul(nn.sum_(nn.pick_rows(nn.log_softmax(logits), labels)), 1.0 / nb)
        loss = loss + nn.mul(ce, weights.reward_pred_weight)
        components["reward_pred"] = float(ce.data)

    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite loss; components: {components}")
    components["total"] = float(loss.data)
    components["vtrace_targets"] = (vs, adv)
    return loss, components


def compute_loss(
    batch: list[Trajectory] | BatchArrays,
    params: AgentParams,
    weights: LossWeights,
    replay_batch=None,
) -> tuple[float, dict[str, np.ndarray], dict]:
    """Run the loss and reverse pass; returns (loss, gradients, components)."""
    if isinstance(batch, list):
        batch = stack_batch(batch)
    nn.zero_grads(params.tensors)
    loss, components = build_loss(batch, params, weights, replay_batch)
    components.pop("vtrace_targets", None)
    nn.backward(loss)
    grads = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in params.tensors.items()
    }
    nn.zero_grads(params.tensors)
    return float(loss.data), grads, components


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float = GRAD_CLIP_NORM) -> float:
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class RMSProp:
    """Squared-gradient moving average; decay 0.99, eps 1e-5, no momentum."""

    def __init__(self, params: AgentParams, decay: float = 0.99, eps: float = 1e-5):
        self.decay = decay
        self.eps = eps
        self.avg = {k: np.zeros_like(t.data, dtype=np.float64) for k, t in params.tensors.items()}

    def step(self, params: AgentParams, grads: dict[str, np.ndarray], lr: float) -> None:
        for k, t in params.tensors.items():
            g = grads[k].astype(np.float64)
            self.avg[k] = self.decay * self.avg[k] + (1.0 - self.decay) * g * g
            t.data -= (lr * g / np.sqrt(self.avg[k] + self.eps)).astype(t.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.avg.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for k in self.avg:
            self.avg[k] = state[k].copy()


@dataclass
class Learner:
    """Owns one agent's parameters, replay and optimiser state."""

    params: AgentParams
    weights: LossWeights
    replay: RewardPredReplay = field(default_factory=RewardPredReplay)
    use_reward_pred: bool = True
    optimizer: RMSProp | None = None
    updates: int = 0

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = RMSProp(self.params)

    def update(self, trajectories: list[Trajectory], rng: np.random.Generator) -> dict:
        batch = stack_batch(trajectories)
        replay_batch = None
        if self.use_reward_pred:
            try:
                replay_batch = self.replay.sample(rng)
            except NotReady:
                replay_batch = None
        loss, grads, components = compute_loss(batch, self.params, self.weights, replay_batch)
        grad_norm = clip_by_global_norm(grads)
        self.optimizer.step(self.params, grads, self.weights.learning_rate)
        self.updates += 1
        self.params.policy_version += 1
        components["grad_norm"] = grad_norm
        components["policy_version"] = self.params.policy_version
        return components
