"""The outer optimisation loop: internal reward evolution, hyperparameter
evolution, and skill-matched game assembly.

Match outcomes (never internal rewards) drive the Elo estimates, and Elo
drives inheritance, so the population climbs the win-probability
meta-objective while each learner climbs its own internal return.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import TAU_MAX, TAU_MIN
from .events import NUM_EVENT_KINDS, GameEvent, sign_vector
from .rating import pairwise_win_prob

MATCHMAKING_SIGMA = 1.0 / 6.0
INHERIT_THRESHOLD = 0.7
PERTURB_PROB = 0.05
PERTURB_FACTORS = (1.2, 0.8)
DEFAULT_BURN_IN_GAMES = 50  # paper-scale value is 1000

# Weight magnitudes may evolve well past their initial range but must stay
# finite and keep their sign.
REWARD_WEIGHT_MIN, REWARD_WEIGHT_MAX = 1e-3, 100.0

EPSILON_RANGE = (0.1, 10.0)
LEARNING_RATE_RANGE = (1e-5, 5e-3)
ENTROPY_COST_RANGE = (5e-4, 1e-2)
REWARD_PRED_RANGE = (0.1, 1.0)
KL_POSTERIOR_PRIOR_RANGE = (1e-3, 1.0)
KL_PRIOR_REG_RANGE = (1e-4, 1e-1)
FAST_TO_SLOW_RANGE = (0.1, 1.0)


class PopulationError(ValueError):
    pass


def log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


@dataclass
class InternalReward:
    """Per-agent mapping from the 13 event kinds to scalar rewards."""

    w: np.ndarray  # shape (13,)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (NUM_EVENT_KINDS,):
            raise PopulationError(f"w must have shape ({NUM_EVENT_KINDS},)")
        if not np.all(np.isfinite(self.w)):
            raise PopulationError("internal reward weights must be finite")

    def copy(self) -> "InternalReward":
        return InternalReward(self.w.copy())


def init_rewards(rng: np.random.Generator) -> InternalReward:
    """w_i = epsilon * sign_i with a single epsilon ~ LogUniform(0.1, 10)."""
    eps = log_uniform(rng, *EPSILON_RANGE)
    return InternalReward(eps * np.array(sign_vector(), dtype=np.float64))


def internal_reward(w: InternalReward, events: list[GameEvent]) -> float:
    """Sum of the weight table entries for this tick's events."""
    return float(sum(w.w[int(e.kind) - 1] for e in events))


@dataclass
class HyperParams:
    learning_rate: float
    entropy_cost: float
    reward_pred_weight: float
    kl_posterior_prior: float
    kl_prior_reg: float
    fast_to_slow_scale: float
    tau: int

    def __post_init__(self):
        if not TAU_MIN <= self.tau < TAU_MAX:
            raise PopulationError(f"tau must lie in [{TAU_MIN}, {TAU_MAX})")

    def copy(self) -> "HyperParams":
        return replace(self)


def sample_hyperparams(rng: np.random.Generator) -> HyperParams:
    return HyperParams(
        learning_rate=log_uniform(rng, *LEARNING_RATE_RANGE),
        entropy_cost=log_uniform(rng, *ENTROPY_COST_RANGE),
        reward_pred_weight=log_uniform(rng, *REWARD_PRED_RANGE),
        kl_posterior_prior=log_uniform(rng, *KL_POSTERIOR_PRIOR_RANGE),
        kl_prior_reg=log_uniform(rng, *KL_PRIOR_REG_RANGE),
        fast_to_slow_scale=log_uniform(rng, *FAST_TO_SLOW_RANGE),
        tau=int(rng.integers(TAU_MIN, TAU_MAX)),
    )


def _perturb_scalar(value: float, lo: float, hi: float, rng: np.random.Generator) -> float:
    if rng.random() < PERTURB_PROB:
        value *= PERTURB_FACTORS[int(rng.integers(0, 2))]
    return float(min(max(value, lo), hi))


def explore(
    w: InternalReward, phi: HyperParams, rng: np.random.Generator
) -> tuple[InternalReward, HyperParams]:
    """Each scalar independently perturbed by +-20% with probability 5%;
    tau instead resamples uniformly from [5, 20)."""
    new_w = w.w.copy()
    for i in range(NUM_EVENT_KINDS):
        mag = _perturb_scalar(abs(new_w[i]), REWARD_WEIGHT_MIN, REWARD_WEIGHT_MAX, rng)
        new_w[i] = math.copysign(mag, new_w[i])
    new_phi = HyperParams(
        learning_rate=_perturb_scalar(phi.learning_rate, *LEARNING_RATE_RANGE, rng),
        entropy_cost=_perturb_scalar(phi.entropy_cost, *ENTROPY_COST_RANGE, rng),
        reward_pred_weight=_perturb_scalar(phi.reward_pred_weight, *REWARD_PRED_RANGE, rng),
        kl_posterior_prior=_perturb_scalar(phi.kl_posterior_prior, *KL_POSTERIOR_PRIOR_RANGE, rng),
        kl_prior_reg=_perturb_scalar(phi.kl_prior_reg, *KL_PRIOR_REG_RANGE, rng),
        fast_to_slow_scale=_perturb_scalar(phi.fast_to_slow_scale, *FAST_TO_SLOW_RANGE, rng),
        tau=int(rng.integers(TAU_MIN, TAU_MAX)) if rng.random() < PERTURB_PROB else phi.tau,
    )
    return InternalReward(new_w), new_phi


@dataclass
class PopulationRecord:
    agent_id: int
    w: InternalReward
    phi: HyperParams
    psi: float = 1000.0
    games: int = 0
    burn_in: int = 0  # games remaining before PBT may replace this agent


@dataclass
class MatchUp:
    players: list[int]  # four agent ids, focal agent included
    blue: list[int]  # slot indices 0..3
    red: list[int]


def matchmake(
    p: int,
    psi: np.ndarray,
    rng: np.random.Generator,
    self_play: bool = False,
) -> MatchUp:
    """Three co-players biased toward similar skill, then a random 2v2 split.

    Candidate weights are exp(-(P(p beats q) - 0.5)^2 / (2 sigma^2)) with
    sigma = 1/6; sampling is without replacement.  ``self_play`` pairs the
    focal agent with three copies of itself instead.
    """
    pop = len(psi)
    if self_play:
        chosen = [p, p, p]
    else:
        if pop < 4:
            raise PopulationError(f"population of {pop} cannot fill a 2v2 game")
        candidates = [q for q in range(pop) if q != p]
        weights = np.array([
            math.exp(-((pairwise_win_prob(p, q, psi) - 0.5) ** 2) / (2 * MATCHMAKING_SIGMA**2))
            for q in candidates
        ])
        chosen = []
        for _ in range(3):
            probs = weights / weights.sum()
            idx = int(rng.choice(len(candidates), p=probs))
            chosen.append(candidates.pop(idx))
            weights = np.delete(weights, idx)

    players = [p] + chosen
    order = rng.permutation(4)
    blue = sorted(int(i) for i in order[:2])
    red = sorted(int(i) for i in order[2:])
    return MatchUp(players=players, blue=blue, red=red)


@dataclass
class PbtDecision:
    inherit_from: int | None  # None is a no-op
    win_prob: float


def pbt_step(
    p: int,
    population: list[PopulationRecord],
    rng: np.random.Generator,
    threshold: float = INHERIT_THRESHOLD,
) -> PbtDecision:
    """Sample a rival; if the focal agent's estimated win probability against
    it falls below the threshold, inherit from the rival and explore."""
    record = population[p]
    if record.burn_in > 0:
        return PbtDecision(inherit_from=None, win_prob=float("nan"))
    others = [r.agent_id for r in population if r.agent_id != p]
    if not others:
        return PbtDecision(inherit_from=None, win_prob=float("nan"))
    q = int(others[rng.integers(0, len(others))])
    psi = np.array([r.psi for r in population])
    wp = pairwise_win_prob(p, q, psi)
    if wp < threshold:
        return PbtDecision(inherit_from=q, win_prob=wp)
    return PbtDecision(inherit_from=None, win_prob=wp)
