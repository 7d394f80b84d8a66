import json

import numpy as np
import pytest

from smlab.gridworld import NONE, GridConfig, GridMatchingEnv, random_start_cells
from smlab.instances import generate_instance
from smlab.matching import is_stable

N = 2  # side size used by the hand traces; agents 0,1 | 2,3
UP = N  # first move action


def make_env(cells, n=N, seed=0, **kw):
    inst = generate_instance("SM", "Asymmetric", n, seed)
    return GridMatchingEnv(GridConfig(3, 3, cells, **kw), inst)


def stay(env):
    """Joint action in which everyone expresses interest in local 0 (nobody moves)."""
    return np.zeros(2 * env.n, dtype=np.int64)


def test_config_validation():
    with pytest.raises(ValueError):
        GridConfig(3, 3, [0, 9])
    with pytest.raises(ValueError):
        GridConfig(0, 3, [])
    with pytest.raises(ValueError):
        GridConfig(3, 3, [0], noise_sigma=-1)
    with pytest.raises(ValueError):
        make_env([0, 1, 2])


def test_reset_state_and_obs_shape():
    env = make_env([4, 0, 8, 2])
    obs = env.reset(1)
    assert obs.shape == (4, 9 + 4)
    assert (env.state.matched_with == NONE).all()
    assert (env.state.last_interest == NONE).all()
    assert env.state.step == 0
    # agent 0 alone in cell 4: only its position bit
    assert np.flatnonzero(obs[0]).tolist() == [4]


def test_shared_start_cell_presence():
    env = make_env([4, 0, 8, 4])
    obs = env.reset(0)
    # side-1 agent 0 and side-2 agent 3 (local 1) share cell 4
    assert obs[0, 9 + 1] == 1 and obs[3, 9 + 0] == 1
    assert obs[0, 9:].sum() == 1 and obs[3, 9:].sum() == 1
    assert obs[1, 9:].sum() == 0


def test_reset_deterministic():
    a, b = make_env([0, 1, 2, 3]), make_env([0, 1, 2, 3])
    assert np.array_equal(a.reset(5), b.reset(5))


def test_mutual_interest_forms_match():
    env = make_env([4, 0, 4, 8], noise_sigma=0.0)
    env.reset(0)
    acts = np.array([0, UP, 0, UP])  # 0 -> local 0 (agent 2), 2 -> local 0 (agent 0)
    obs, r = env.step(acts)
    assert env.state.matched_with[0] == 2 and env.state.matched_with[2] == 0
    assert r[0] == env.instance.utility_1[0, 0]
    assert r[2] == env.instance.utility_2[0, 0]
    assert r[1] == r[3] == -1.0
    # interest-in-me now visible to both
    assert obs[0, 9 + N + 0] == 1 and obs[2, 9 + N + 0] == 1


def test_mean_reward_is_utility():
    env = make_env([4, 0, 4, 8])
    env.reset(3)
    acts = np.array([0, UP, 0, UP])
    c = np.array([env.step(acts)[1][0] for _ in range(4000)]) / env.instance.utility_1[0, 0]
    assert c.mean() == pytest.approx(1.0, abs=0.01)
    assert c.std() == pytest.approx(0.1, rel=0.05)


def test_interest_in_far_agent_stays_unmatched():
    env = make_env([4, 0, 8, 2])
    env.reset(0)
    obs, r = env.step(np.array([0, 0, 0, 0]))
    assert env.state.positions.tolist() == [4, 0, 8, 2]
    assert (env.state.matched_with == NONE).all()
    assert (r == -1.0).all()


def test_moving_dissolves_match():
    env = make_env([4, 0, 4, 8])
    env.reset(0)
    env.step(np.array([0, UP, 0, UP]))
    assert env.state.matched_with[0] == 2
    _, r = env.step(np.array([UP, UP, 0, UP]))  # agent 0 moves up
    assert (env.state.matched_with == NONE).all()
    assert r[0] == r[2] == -1.0
    assert env.state.positions[0] == 1 and env.state.positions[2] == 4


def test_moves_clamp_at_edges():
    env = make_env([0, 8, 0, 8])
    env.reset(0)
    n = N
    env.step(np.array([n, n + 1, n + 2, n + 3]))  # up, down, left, right
    assert env.state.positions.tolist() == [0, 8, 0, 8]
    env.step(np.array([n + 1, n, n + 3, n + 2]))
    assert env.state.positions.tolist() == [3, 5, 1, 7]


def test_malformed_actions():
    env = make_env([0, 1, 2, 3])
    with pytest.raises(RuntimeError):
        env.step(stay(env))
    env.reset(0)
    for bad in ([0, 0, 0], [0, 0, 0, N + 4], [0, 0, 0, -1], [0.5, 0, 0, 0]):
        with pytest.raises(ValueError):
            env.step(np.array(bad))


def check_invariants(env, obs):
    st, n, cells = env.state, env.n, env.config.n_cells
    assert (obs[:, :cells].sum(axis=1) == 1).all()
    assert (obs[np.arange(2 * n), st.positions] == 1).all()
    presence, interest = obs[:, cells:cells + n], obs[:, cells + n:]
    assert (interest <= presence).all()
    for a in range(2 * n):
        b = st.matched_with[a]
        if b != NONE:
            assert st.matched_with[b] == a
            assert (a < n) != (b < n)
            assert st.positions[a] == st.positions[b]
        for k in range(n):
            other = env.opposite(a, k)
            assert presence[a, k] == (st.positions[other] == st.positions[a])
            assert interest[a, k] == (presence[a, k] and st.last_interest[other] == a)


def test_random_rollout_invariants():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = 1 + trial % 4
        inst = generate_instance("SMI", "Asymmetric", n, trial)
        cells = random_start_cells(2, 3, 2 * n, rng)
        env = GridMatchingEnv(GridConfig(2, 3, cells), inst)
        obs = env.reset(trial)
        check_invariants(env, obs)
        for _ in range(200):
            # bias towards interest so matches actually form
            acts = np.where(rng.random(2 * n) < 0.7, rng.integers(n, size=2 * n), rng.integers(n, n + 4, size=2 * n))
            obs, r = env.step(acts)
            check_invariants(env, obs)
            matched = env.state.matched_with != NONE
            assert (r[~matched] == -1.0).all()
        env.current_matching()  # consistent by construction


def test_rollout_replays_bit_identically():
    def rollout():
        env = make_env([0, 4, 4, 8], n=N)
        env.reset(11)
        rng = np.random.default_rng(2)
        out = []
        for _ in range(300):
            obs, r = env.step(rng.integers(N + 4, size=2 * N))
            out.append((obs.copy(), r.copy(), env.state.matched_with.copy()))
        return out

    for (o1, r1, m1), (o2, r2, m2) in zip(rollout(), rollout()):
        assert np.array_equal(o1, o2) and np.array_equal(r1, r2) and np.array_equal(m1, m2)


def test_noise_statistics():
    env = make_env([4, 4, 4, 4], noise_sigma=0.1)
    env.reset(0)
    draws = env.state.reward_rng.normal(1.0, 0.1, size=10**6)
    assert abs(draws.mean() - 1.0) < 5 * 0.1 / 1000
    assert abs(draws.std() - 0.1) < 1e-3


def test_current_matching_and_trace(tmp_path):
    inst = generate_instance("SM", "Symmetric", N, 0)
    env = GridMatchingEnv(GridConfig(3, 3, [4, 4, 4, 4]), inst, record_trace=True)
    env.reset(0)
    env.step(np.array([0, 1, 0, 1]))
    m = env.current_matching()
    assert m.pairs() == [(0, 0), (1, 1)]
    assert is_stable(inst, m) == (inst.utility_1[0, 0] > inst.utility_1[0, 1])
    path = tmp_path / "trace.jsonl"
    env.dump_trace(path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert recs[0]["step"] == 1 and recs[0]["matches"] == [2, 3, 0, 1]
