"""Property tests over spec invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from gridctf.analysis import hellinger
from gridctf.env import NUM_ACTIONS, decode_action, encode_action
from gridctf.events import EventKind, GameEvent, sign_vector
from gridctf.population import InternalReward, internal_reward
from gridctf.rating import win_prob


@given(st.integers(0, NUM_ACTIONS - 1))
def test_action_codec_left_inverse(index):
    move, turn, tag = decode_action(index)
    assert encode_action(move, turn, tag) == index
    assert 0 <= move < 5 and 0 <= turn < 3 and 0 <= tag < 2


@settings(max_examples=100)
@given(
    psi=st.lists(st.floats(-2000, 4000, allow_nan=False), min_size=2, max_size=8),
    seed=st.integers(0, 10_000),
)
def test_win_prob_antisymmetric_and_bounded(psi, seed):
    psi = np.array(psi)
    m = np.random.default_rng(seed).integers(-2, 3, size=len(psi)).astype(float)
    p = win_prob(psi, m)
    assert 0.0 <= p <= 1.0
    assert p + win_prob(psi, -m) == 1.0


@settings(max_examples=60)
@given(
    weights=st.lists(st.floats(1e-3, 100), min_size=32, max_size=32),
)
def test_hellinger_bounds_and_symmetry(weights):
    w = np.array(weights)
    p = w[:16] / w[:16].sum()
    q = w[16:] / w[16:].sum()
    d = hellinger(p, q)
    assert 0.0 <= d <= 1.0 + 1e-12
    assert np.isclose(d, hellinger(q, p))
    assert hellinger(p, p) < 1e-7


@settings(max_examples=50)
@given(
    eps=st.floats(0.1, 10.0),
    kinds=st.lists(st.integers(1, 13), min_size=0, max_size=6),
)
def test_internal_reward_is_linear_table_lookup(eps, kinds):
    signs = np.array(sign_vector(), dtype=float)
    w = InternalReward(eps * signs)
    events = [GameEvent(kind=EventKind(k), subject=0, tick=0) for k in kinds]
    expected = sum(eps * signs[k - 1] for k in kinds)
    assert np.isclose(internal_reward(w, events), expected)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 500))
def test_generated_maps_always_valid(seed):
    from gridctf.mapgen import GenConfig, generate_indoor
    from gridctf.maps import validate

    spec = generate_indoor(GenConfig(side=13, seed=seed))
    assert validate(spec).ok
