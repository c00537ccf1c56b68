"""The policy network: a fast recurrent core whose stochastic latent is
regularised toward a prior emitted by a slower core.

The fast core ticks every step; the slow core updates every ``tau`` steps
and parameterises the latent prior.  The ``NoTemporalHierarchy`` variant
keeps the same fast core, posterior and heads (its extra input slots are
fed zeros) but has no slow core or prior, so the two variants differ only
by the slow-core and prior parameter blocks.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .env import NUM_ACTIONS, OBS_DIM
from .nn import Tensor

VARIANT_FTW = "FTW"
VARIANT_NO_TH = "NoTemporalHierarchy"

LOG_STD_MIN = -8.0
LOG_STD_MAX = 2.0
RESET_PRIOR_STD = 1.0  # overwritten at step 0, which always slow-ticks

TAU_MIN, TAU_MAX = 5, 20  # half-open [5, 20)

CHECKPOINT_MAGIC = b"GCTFAG01"


class AgentError(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    variant: str = VARIANT_FTW
    obs_dim: int = OBS_DIM
    encoder_widths: tuple[int, ...] = (128, 64)
    fast_hidden: int = 128
    slow_hidden: int = 128
    latent_dim: int = 32
    tau: int = 10
    head_hidden: int = 64
    num_actions: int = NUM_ACTIONS

    def __post_init__(self):
        if self.variant not in (VARIANT_FTW, VARIANT_NO_TH):
            raise AgentError(f"unknown variant {self.variant!r}")
        if not TAU_MIN <= self.tau < TAU_MAX:
            raise AgentError(f"tau must lie in [{TAU_MIN}, {TAU_MAX}), got {self.tau}")
        if self.latent_dim < 1:
            raise AgentError("latent_dim must be >= 1")

    @property
    def enc_out(self) -> int:
        return self.encoder_widths[-1]

    @property
    def fast_input_dim(self) -> int:
        # u, one-hot previous action, previous reward, prior stats, z_prev, h_slow
        return (self.enc_out + self.num_actions + 1
                + 2 * self.latent_dim + self.latent_dim + self.slow_hidden)

    def with_tau(self, tau: int) -> "AgentConfig":
        return replace(self, tau=int(tau))


@dataclass
class AgentParams:
    cfg: AgentConfig
    tensors: dict[str, Tensor]
    policy_version: int = 0

    def copy(self) -> "AgentParams":
        return AgentParams(
            cfg=self.cfg,
            tensors={k: nn.parameter(v.data.copy()) for k, v in self.tensors.items()},
            policy_version=self.policy_version,
        )

    def num_params(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


@dataclass
class RecurrentState:
    h_fast: Tensor
    c_fast: Tensor
    h_slow: Tensor | None
    c_slow: Tensor | None
    z_prev: Tensor
    prior_mean: Tensor | None
    prior_log_std: Tensor | None
    step: np.ndarray  # per-sample tick counter since reset
    tau: np.ndarray  # per-sample slow-core period

    @property
    def batch(self) -> int:
        return self.h_fast.data.shape[0]


@dataclass
class AgentOutput:
    logits: Tensor
    value: Tensor
    posterior: nn.DiagGaussian
    prior: nn.DiagGaussian | None
    z: Tensor
    state: RecurrentState
    encoded: Tensor
    latent_noise: np.ndarray


def init_params(cfg: AgentConfig, rng: np.random.Generator, dtype=np.float32) -> AgentParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
    t: dict[str, Tensor] = {}

    def block(name: str, shape: tuple[int, ...]):
        t[f"{name}.w"] = nn.parameter(nn.fan_in_uniform(rng, shape, dtype))
        t[f"{name}.b"] = nn.parameter(np.zeros(shape[-1], dtype=dtype))

    last = cfg.obs_dim
    for i, width in enumerate(cfg.encoder_widths):
        block(f"enc{i}", (last, width))
        last = width
    block("fast", (cfg.fast_input_dim + cfg.fast_hidden, 4 * cfg.fast_hidden))
    if cfg.variant == VARIANT_FTW:
        block("slow", (cfg.fast_hidden + cfg.slow_hidden, 4 * cfg.slow_hidden))
        block("prior", (cfg.slow_hidden, 2 * cfg.latent_dim))
    block("post", (cfg.fast_hidden, 2 * cfg.latent_dim))
    block("pi0", (cfg.latent_dim, cfg.head_hidden))
    block("pi1", (cfg.head_hidden, cfg.num_actions))
    block("v0", (cfg.latent_dim, cfg.head_hidden))
    block("v1", (cfg.head_hidden, 1))
    block("rp0", (3 * cfg.enc_out, cfg.head_hidden))
    block("rp1", (cfg.head_hidden, 3))
    return AgentParams(cfg=cfg, tensors=t)


def reset_state(cfg: AgentConfig, batch: int = 1, dtype=np.float32, tau: int | None = None) -> RecurrentState:
    """Zero hidden state, unit-variance prior, counter at zero."""
    tau = cfg.tau if tau is None else int(tau)
    if not TAU_MIN <= tau < TAU_MAX:
        raise AgentError(f"tau must lie in [{TAU_MIN}, {TAU_MAX}), got {tau}")

    def zeros(dim):
        return Tensor(np.zeros((batch, dim), dtype=dtype))

    ftw = cfg.variant == VARIANT_FTW
    return RecurrentState(
        h_fast=zeros(cfg.fast_hidden),
        c_fast=zeros(cfg.fast_hidden),
        h_slow=zeros(cfg.slow_hidden) if ftw else None,
        c_slow=zeros(cfg.slow_hidden) if ftw else None,
        z_prev=zeros(cfg.latent_dim),
        prior_mean=zeros(cfg.latent_dim) if ftw else None,
        prior_log_std=(
            Tensor(np.full((batch, cfg.latent_dim), np.log(RESET_PRIOR_STD), dtype=dtype))
            if ftw else None
        ),
        step=np.zeros(batch, dtype=np.int64),
        tau=np.full(batch, tau, dtype=np.int64),
    )


def obs_to_arrays(window: np.ndarray, scalars: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Flatten one observation (or a batch) for the encoder."""
    window = np.asarray(window, dtype=dtype)
    scalars = np.asarray(scalars, dtype=dtype)
    if window.ndim == 3:
        return np.concatenate([window.reshape(-1), scalars])
    return np.concatenate([window.reshape(window.shape[0], -1), scalars], axis=1)


def encode_obs(params: AgentParams, obs_flat: np.ndarray) -> Tensor:
    """Two affine+tanh layers over the flattened ego window and scalars."""
    x = Tensor(np.atleast_2d(obs_flat))
    for i in range(len(params.cfg.encoder_widths)):
        x = nn.tanh(nn.affine(x, params.tensors[f"enc{i}.w"], params.tensors[f"enc{i}.b"]))
    return x


def step_core(
    params: AgentParams,
    state: RecurrentState,
    u: Tensor,
    a_prev: np.ndarray,
    r_prev: np.ndarray,
    *,
    rng: np.random.Generator | None = None,
    latent_noise: np.ndarray | None = None,
    fast_to_slow_scale=1.0,
) -> AgentOutput:
    """One recurrent step.  Pass ``rng`` to draw fresh latent noise or
    ``latent_noise`` to replay a stored sample."""
    cfg = params.cfg
    t = params.tensors
    batch = state.batch
    dtype = state.h_fast.data.dtype

    a_prev = np.asarray(a_prev)
    a_onehot = np.zeros((batch, cfg.num_actions), dtype=dtype)
    valid = a_prev >= 0
    a_onehot[np.nonzero(valid)[0], a_prev[valid]] = 1.0
    r_col = np.asarray(r_prev, dtype=dtype).reshape(batch, 1)

    if cfg.variant == VARIANT_FTW:
        update = (state.step % state.tau == 0)
        if update.any():
            slow_in = nn.scale_gradient(state.h_fast, fast_to_slow_scale)
            h_new, c_new = nn.lstm_cell(slow_in, state.h_slow, state.c_slow, t["slow.w"], t["slow.b"])
            if update.all():
                h_slow, c_slow = h_new, c_new
            else:
                m = update.astype(dtype).reshape(batch, 1)
                h_slow = nn.add(nn.mul(h_new, m), nn.mul(state.h_slow, 1.0 - m))
                c_slow = nn.add(nn.mul(c_new, m), nn.mul(state.c_slow, 1.0 - m))
        else:
            h_slow, c_slow = state.h_slow, state.c_slow
        prior_out = nn.affine(h_slow, t["prior.w"], t["prior.b"])
        prior = nn.DiagGaussian(
            mean=nn.narrow(prior_out, -1, 0, cfg.latent_dim),
            log_std=nn.clip(nn.narrow(prior_out, -1, cfg.latent_dim, cfg.latent_dim),
                            LOG_STD_MIN, LOG_STD_MAX),
        )
        prior_mean_in, prior_std_in = prior.mean, prior.log_std
        h_slow_in = h_slow
    else:
        h_slow = c_slow = prior = None
        prior_mean_in = Tensor(np.zeros((batch, cfg.latent_dim), dtype=dtype))
        prior_std_in = Tensor(np.zeros((batch, cfg.latent_dim), dtype=dtype))
        h_slow_in = Tensor(np.zeros((batch, cfg.slow_hidden), dtype=dtype))

    fast_in = nn.concat(
        [u, Tensor(a_onehot), Tensor(r_col), prior_mean_in, prior_std_in, state.z_prev, h_slow_in],
        axis=-1,
    )
    h_fast, c_fast = nn.lstm_cell(fast_in, state.h_fast, state.c_fast, t["fast.w"], t["fast.b"])

    post_out = nn.affine(h_fast, t["post.w"], t["post.b"])
    posterior = nn.DiagGaussian(
        mean=nn.narrow(post_out, -1, 0, cfg.latent_dim),
        log_std=nn.clip(nn.narrow(post_out, -1, cfg.latent_dim, cfg.latent_dim),
                        LOG_STD_MIN, LOG_STD_MAX),
    )
    if latent_noise is not None:
        eps = np.asarray(latent_noise, dtype=dtype)
        z = nn.reparam_with_noise(posterior, eps)
    elif rng is not None:
        z, eps = nn.sample_reparam(posterior, rng)
    else:
        raise AgentError("step_core needs either rng or latent_noise")

    logits = nn.affine(nn.tanh(nn.affine(z, t["pi0.w"], t["pi0.b"])), t["pi1.w"], t["pi1.b"])
    value = nn.narrow(nn.affine(nn.tanh(nn.affine(z, t["v0.w"], t["v0.b"])), t["v1.w"], t["v1.b"]),
                      -1, 0, 1)
    if not np.all(np.isfinite(logits.data)) or not np.all(np.isfinite(value.data)):
        raise FloatingPointError(
            f"non-finite activations at step {state.step.tolist()} "
            f"(logits finite: {np.all(np.isfinite(logits.data))})"
        )

    new_state = RecurrentState(
        h_fast=h_fast,
        c_fast=c_fast,
        h_slow=h_slow,
        c_slow=c_slow,
        z_prev=z,
        prior_mean=prior.mean if prior is not None else None,
        prior_log_std=prior.log_std if prior is not None else None,
        step=state.step + 1,
        tau=state.tau,
    )
    return AgentOutput(
        logits=logits, value=value, posterior=posterior, prior=prior, z=z,
        state=new_state, encoded=u, latent_noise=eps,
    )


def act(out: AgentOutput, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
    head = nn.CategoricalHead(out.logits)
    return head.greedy() if greedy else head.sample(rng)


# ---------------------------------------------------------------------------
# Fused acting path: the same arithmetic as encode_obs + step_core on plain
# numpy buffers, for the hot per-step loop of arena workers.  Kept in lock
# step with step_core by an equality test; gradients never flow here.

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_fast(x, h, c, w, b):
    z = np.concatenate([x, h], axis=-1) @ w + b
    hidden = h.shape[-1]
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden : 2 * hidden])
    g = np.tanh(z[:, 2 * hidden : 3 * hidden])
    o = _sigmoid(z[:, 3 * hidden :])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def fast_step(
    params: AgentParams,
    state: RecurrentState,
    obs_flat: np.ndarray,
    a_prev: int,
    r_prev: float,
    rng: np.random.Generator,
    greedy: bool = False,
):
    """One acting step without graph recording.

    Returns (action, info, new_state); ``info`` carries everything the
    trajectory builder stores (log-prob, value, latent noise, posterior and
    prior stats).
    """
    cfg = params.cfg
    t = {k: v.data for k, v in params.tensors.items()}
    dtype = t["fast.w"].dtype

    u = np.atleast_2d(np.asarray(obs_flat, dtype=dtype))
    for i in range(len(cfg.encoder_widths)):
        u = np.tanh(u @ t[f"enc{i}.w"] + t[f"enc{i}.b"])

    a_onehot = np.zeros((1, cfg.num_actions), dtype=dtype)
    if a_prev >= 0:
        a_onehot[0, a_prev] = 1.0
    r_col = np.array([[r_prev]], dtype=dtype)

    if cfg.variant == VARIANT_FTW:
        h_slow, c_slow = state.h_slow.data, state.c_slow.data
        if state.step[0] % state.tau[0] == 0:
            h_slow, c_slow = _lstm_fast(state.h_fast.data, h_slow, c_slow,
                                        t["slow.w"], t["slow.b"])
        prior_out = h_slow @ t["prior.w"] + t["prior.b"]
        prior_mean = prior_out[:, : cfg.latent_dim]
        prior_log_std = np.clip(prior_out[:, cfg.latent_dim :], LOG_STD_MIN, LOG_STD_MAX)
        prior_stats = np.concatenate([prior_mean[0], prior_log_std[0]])
        fast_in = np.concatenate(
            [u, a_onehot, r_col, prior_mean, prior_log_std, state.z_prev.data, h_slow], axis=1)
    else:
        h_slow = c_slow = None
        prior_mean = prior_log_std = None
        prior_stats = None
        zeros_block = np.zeros((1, 2 * cfg.latent_dim + cfg.slow_hidden), dtype=dtype)
        fast_in = np.concatenate(
            [u, a_onehot, r_col,
             zeros_block[:, : 2 * cfg.latent_dim], state.z_prev.data,
             zeros_block[:, 2 * cfg.latent_dim :]], axis=1)

    h_fast, c_fast = _lstm_fast(fast_in, state.h_fast.data, state.c_fast.data,
                                t["fast.w"], t["fast.b"])
    post_out = h_fast @ t["post.w"] + t["post.b"]
    post_mean = post_out[:, : cfg.latent_dim]
    post_log_std = np.clip(post_out[:, cfg.latent_dim :], LOG_STD_MIN, LOG_STD_MAX)
    eps = rng.standard_normal(post_mean.shape).astype(dtype)
    z = post_mean + np.exp(post_log_std) * eps

    logits = np.tanh(z @ t["pi0.w"] + t["pi0.b"]) @ t["pi1.w"] + t["pi1.b"]
    value = float((np.tanh(z @ t["v0.w"] + t["v0.b"]) @ t["v1.w"] + t["v1.b"])[0, 0])
    if not np.all(np.isfinite(logits)) or not np.isfinite(value):
        raise FloatingPointError(f"non-finite activations at step {state.step.tolist()}")

    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    if greedy:
        action = int(np.argmax(logits[0]))
    else:
        probs = np.exp(log_probs)
        # matches CategoricalHead.sample draw for draw
        U = rng.random(probs.shape[:-1] + (1,))
        cdf = np.cumsum(probs, axis=-1)
        action = int(min((U > cdf).sum(axis=-1)[0], cfg.num_actions - 1))

    info = {
        "log_prob": float(log_probs[0, action]),
        "value": value,
        "noise": eps[0],
        "posterior": np.concatenate([post_mean[0], post_log_std[0]]),
        "prior": prior_stats,
    }
    new_state = RecurrentState(
        h_fast=Tensor(h_fast), c_fast=Tensor(c_fast),
        h_slow=Tensor(h_slow) if h_slow is not None else None,
        c_slow=Tensor(c_slow) if c_slow is not None else None,
        z_prev=Tensor(z),
        prior_mean=Tensor(prior_mean) if prior_mean is not None else None,
        prior_log_std=Tensor(prior_log_std) if prior_log_std is not None else None,
        step=state.step + 1,
        tau=state.tau,
    )
    return action, info, new_state


def reward_pred_logits(params: AgentParams, obs_flat_3: np.ndarray) -> Tensor:
    """Three-observation sequences -> 3-way reward sign logits.

    ``obs_flat_3`` has shape (B, 3, obs_dim); the shared encoder embeds each
    observation and the head reads their concatenation.
    """
    b = obs_flat_3.shape[0]
    encoded = [encode_obs(params, obs_flat_3[:, i]) for i in range(3)]
    x = nn.concat(encoded, axis=-1)
    t = params.tensors
    return nn.affine(nn.tanh(nn.affine(x, t["rp0.w"], t["rp0.b"])), t["rp1.w"], t["rp1.b"])


def state_to_arrays(state: RecurrentState) -> dict[str, np.ndarray]:
    out = {
        "h_fast": state.h_fast.data.copy(),
        "c_fast": state.c_fast.data.copy(),
        "z_prev": state.z_prev.data.copy(),
        "step": state.step.copy(),
        "tau": state.tau.copy(),
    }
    if state.h_slow is not None:
        out["h_slow"] = state.h_slow.data.copy()
        out["c_slow"] = state.c_slow.data.copy()
        out["prior_mean"] = state.prior_mean.data.copy()
        out["prior_log_std"] = state.prior_log_std.data.copy()
    return out


def arrays_to_state(arrays: dict[str, np.ndarray]) -> RecurrentState:
    ftw = "h_slow" in arrays
    return RecurrentState(
        h_fast=Tensor(arrays["h_fast"].copy()),
        c_fast=Tensor(arrays["c_fast"].copy()),
        h_slow=Tensor(arrays["h_slow"].copy()) if ftw else None,
        c_slow=Tensor(arrays["c_slow"].copy()) if ftw else None,
        z_prev=Tensor(arrays["z_prev"].copy()),
        prior_mean=Tensor(arrays["prior_mean"].copy()) if ftw else None,
        prior_log_std=Tensor(arrays["prior_log_std"].copy()) if ftw else None,
        step=arrays["step"].copy(),
        tau=arrays["tau"].copy(),
    )


def stack_states(states: list[dict[str, np.ndarray]]) -> RecurrentState:
    keys = states[0].keys()
    stacked = {k: np.concatenate([s[k] for s in states], axis=0) if states[0][k].ndim > 1
               else np.concatenate([np.atleast_1d(s[k]) for s in states])
               for k in keys}
    return arrays_to_state(stacked)


# ---------------------------------------------------------------------------
# Checkpoint chunks: JSON header + named little-endian float32 blocks.

def params_to_bytes(params: AgentParams) -> bytes:
    names = sorted(params.tensors)
    header = {
        "variant": params.cfg.variant,
        "config": {
            "variant": params.cfg.variant,
            "obs_dim": params.cfg.obs_dim,
            "encoder_widths": list(params.cfg.encoder_widths),
            "fast_hidden": params.cfg.fast_hidden,
            "slow_hidden": params.cfg.slow_hidden,
            "latent_dim": params.cfg.latent_dim,
            "tau": params.cfg.tau,
            "head_hidden": params.cfg.head_hidden,
            "num_actions": params.cfg.num_actions,
        },
        "policy_version": params.policy_version,
        "blocks": [{"name": n, "shape": list(params.tensors[n].data.shape)} for n in names],
    }
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(head_bytes)))
    buf.write(head_bytes)
    for n in names:
        buf.write(np.ascontiguousarray(params.tensors[n].data, dtype="<f4").tobytes())
    return buf.getvalue()


def params_from_bytes(blob: bytes, dtype=np.float32) -> AgentParams:
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise AgentError("bad checkpoint chunk: wrong magic")
    off = len(CHECKPOINT_MAGIC)
    (head_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    try:
        header = json.loads(blob[off : off + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise AgentError(f"bad checkpoint chunk: corrupt header ({e})") from e
    off += head_len
    c = header["config"]
    cfg = AgentConfig(
        variant=c["variant"],
        obs_dim=c["obs_dim"],
        encoder_widths=tuple(c["encoder_widths"]),
        fast_hidden=c["fast_hidden"],
        slow_hidden=c["slow_hidden"],
        latent_dim=c["latent_dim"],
        tau=c["tau"],
        head_hidden=c["head_hidden"],
        num_actions=c["num_actions"],
    )
    tensors = {}
    for blk in header["blocks"]:
        shape = tuple(blk["shape"])
        n_bytes = int(np.prod(shape)) * 4
        if off + n_bytes > len(blob):
            raise AgentError("bad checkpoint chunk: truncated data")
        arr = np.frombuffer(blob[off : off + n_bytes], dtype="<f4").reshape(shape)
        tensors[blk["name"]] = nn.parameter(arr.astype(dtype))
        off += n_bytes
    if off != len(blob):
        raise AgentError("bad checkpoint chunk: trailing data")
    return AgentParams(cfg=cfg, tensors=tensors, policy_version=header["policy_version"])


def save_agent(params: AgentParams, path) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_agent(path, dtype=np.float32) -> AgentParams:
    with open(path, "rb") as f:
        return params_from_bytes(f.read(), dtype=dtype)
