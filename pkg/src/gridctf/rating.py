"""Team skill ratings: a logistic model over summed member ratings.

A match is a signed count vector ``m`` (appearances in blue minus red);
blue's win probability is ``1 / (1 + 10^(-psi.m / 400))``.  Ratings are
the maximiser of the match-outcome likelihood, found by damped Newton
ascent with the anchor agent pinned, which is equivalent to maximising
freely and shifting the anchor afterwards because the likelihood only
depends on rating differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_K = np.log(10.0) / 400.0
DEFAULT_ANCHOR_VALUE = 1000.0
GRAD_TOL = 1e-6


class RatingError(ValueError):
    pass


@dataclass(frozen=True)
class MatchRecord:
    """m[i]: appearances of agent i in blue minus red; y: 1 blue win, 0 red win, 1/2 draw."""

    m: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64))
        if self.y not in (0.0, 0.5, 1.0):
            raise RatingError(f"y must be 0, 1/2 or 1, got {self.y}")


def make_record(blue_ids, red_ids, y: float, num_agents: int) -> MatchRecord:
    m = np.zeros(num_agents, dtype=np.float64)
    for i in blue_ids:
        m[i] += 1
    for i in red_ids:
        m[i] -= 1
    return MatchRecord(m=m, y=float(y))


@dataclass
class Ratings:
    psi: np.ndarray  # NaN for unrated agents
    anchor: int
    anchor_value: float = DEFAULT_ANCHOR_VALUE
    unrated: list[int] = field(default_factory=list)
    grad_norm: float = float("nan")

    def rated_ids(self) -> list[int]:
        return [i for i in range(len(self.psi)) if i not in set(self.unrated)]


def win_prob(psi: np.ndarray, m: np.ndarray) -> float:
    """P(blue wins) = 1 / (1 + 10^(-psi.m / 400)).

    Computed so that win_prob(psi, m) + win_prob(psi, -m) == 1 exactly.
    """
    s = float(np.dot(psi, m))
    if s >= 0:
        return 1.0 / (1.0 + 10.0 ** (-s / 400.0))
    return 1.0 - 1.0 / (1.0 + 10.0 ** (s / 400.0))


def pairwise_win_prob(i: int, j: int, psi: np.ndarray) -> float:
    """Win probability of an (i, i) team against a (j, j) team; 0.5 when i == j."""
    if i == j:
        return 0.5
    m = np.zeros(len(psi))
    m[i] = 2.0
    m[j] = -2.0
    return win_prob(psi, m)


def log_likelihood(psi: np.ndarray, records: list[MatchRecord]) -> float:
    total = 0.0
    for rec in records:
        p = win_prob(psi, rec.m)
        p = min(max(p, 1e-15), 1.0 - 1e-15)
        total += rec.y * np.log(p) + (1.0 - rec.y) * np.log(1.0 - p)
    return total


def _connected_to_anchor(num_agents: int, records: list[MatchRecord], anchor: int) -> np.ndarray:
    adj: list[set[int]] = [set() for _ in range(num_agents)]
    for rec in records:
        ids = np.nonzero(rec.m != 0)[0]
        for a in ids:
            adj[a].update(int(b) for b in ids)
    seen = np.zeros(num_agents, dtype=bool)
    stack = [anchor]
    seen[anchor] = True
    while stack:
        a = stack.pop()
        for b in adj[a]:
            if not seen[b]:
                seen[b] = True
                stack.append(b)
    return seen


def fit(
    records: list[MatchRecord],
    anchor: int,
    anchor_value: float = DEFAULT_ANCHOR_VALUE,
    max_iter: int = 200,
    tol: float = GRAD_TOL,
) -> Ratings:
    """Maximum-likelihood ratings with the anchor pinned at ``anchor_value``.

    Agents outside the anchor's comparison component are reported as
    unrated (NaN) rather than extrapolated.
    """
    if not records:
        raise RatingError("fit requires at least one match record")
    num_agents = len(records[0].m)
    if not 0 <= anchor < num_agents:
        raise RatingError(f"anchor {anchor} out of range")

    rated = _connected_to_anchor(num_agents, records, anchor)
    used = [rec for rec in records if np.all(rated[np.nonzero(rec.m != 0)[0]])]
    mat = np.stack([rec.m for rec in used])  # (N, M)
    ys = np.array([rec.y for rec in used])

    free = [i for i in range(num_agents) if rated[i] and i != anchor]
    psi = np.full(num_agents, anchor_value, dtype=np.float64)

    def grad_full(p_vec):
        return _K * mat.T @ (ys - p_vec)

    for _ in range(max_iter):
        s = mat @ psi
        p_vec = 1.0 / (1.0 + np.exp(-_K * s))
        g = grad_full(p_vec)
        if np.linalg.norm(g[rated]) < tol:
            break
        if not free:
            break
        w = p_vec * (1.0 - p_vec)
        sub = mat[:, free]
        hess = _K * _K * (sub * w[:, None]).T @ sub
        hess += 1e-12 * np.eye(len(free))
        try:
            step = np.linalg.solve(hess, g[free])
        except np.linalg.LinAlgError:
            step = g[free] / max(1e-12, np.linalg.norm(g[free]))
        # Backtracking keeps the ascent monotone far from the optimum.
        base_ll = log_likelihood(psi, used)
        scale = 1.0
        for _ in range(30):
            trial = psi.copy()
            trial[free] += scale * step
            if log_likelihood(trial, used) >= base_ll - 1e-12:
                psi = trial
                break
            scale *= 0.5

    s = mat @ psi
    p_vec = 1.0 / (1.0 + np.exp(-_K * s))
    g = grad_full(p_vec)
    grad_norm = float(np.linalg.norm(g[rated]))
    unrated = [i for i in range(num_agents) if not rated[i]]
    psi[unrated] = np.nan
    return Ratings(psi=psi, anchor=anchor, anchor_value=anchor_value,
                   unrated=unrated, grad_norm=grad_norm)


def export_csv(ratings: Ratings, games: dict[int, int] | None, path, last_refit: int = 0) -> None:
    """Ratings table: agent id, rating, games played, last refit marker."""
    games = games or {}
    with open(path, "w", encoding="utf-8") as f:
        f.write("agent_id,psi,games,last_refit\n")
        for i, value in enumerate(ratings.psi):
            shown = "" if np.isnan(value) else f"{value:.3f}"
            f.write(f"{i},{shown},{games.get(i, 0)},{last_refit}\n")
