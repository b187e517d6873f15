import numpy as np
import pytest

from etdlab.environments import (
    CATALOG,
    GOLDEN_TASKS,
    RECONSTRUCTED_TASKS,
    StreamGenerator,
    batch_transition,
    build,
    generate_batch,
)
from etdlab.learners import Algorithm, AlgorithmConfig, LearnerState, step
from etdlab.mdp import induced_kernel, stationary_distribution, true_value
from etdlab.spectral import emphatic_weights, key_matrices, mean_field_fixed_point


def test_catalog_names():
    assert set(CATALOG) == set(GOLDEN_TASKS) | set(RECONSTRUCTED_TASKS)
    with pytest.raises(KeyError):
        build("cart_pole")


@pytest.mark.parametrize("name", list(CATALOG))
def test_every_task_builds_and_is_ergodic(name):
    task = build(name)
    d = stationary_distribution(induced_kernel(task.mdp, task.behavior))
    assert np.all(d > 0)
    assert task.name == name


def test_sutton_facts():
    task = build("two_state_sutton")
    np.testing.assert_array_equal(task.phi[:, 0], [1.0, 2.0])
    assert task.gamma == 0.9 and not task.mdp.reward.any()
    assert key_matrices(task, []).a_td[0, 0] == pytest.approx(-0.2)


def test_new_task_facts():
    task = build("two_state_new")
    np.testing.assert_allclose(true_value(task.mdp, task.target), [9.0, 10.0])
    assert key_matrices(task, []).a_td[0, 0] == pytest.approx(0.248)
    assert task.mdp.reward[1, 1] == 1.0 and task.mdp.reward.sum() == 1.0


def test_counterexample_facts():
    task = build("two_state_cetd_counterexample")
    np.testing.assert_allclose(induced_kernel(task.mdp, task.behavior), [[0.05, 0.95], [0.05, 0.95]])
    np.testing.assert_allclose(emphatic_weights(task), [0.05, 9.95])


def test_baird_construction():
    task = build("baird_7state")
    phi = task.phi
    assert phi.shape == (7, 8)
    for i in range(6):
        expected = np.zeros(8)
        expected[i], expected[7] = 2.0, 1.0
        np.testing.assert_array_equal(phi[i], expected)
    np.testing.assert_array_equal(phi[6], [0, 0, 0, 0, 0, 0, 1, 2])
    assert np.linalg.matrix_rank(phi) == 7
    assert not task.features.require_full_rank and "rank" in str(task.metadata)
    np.testing.assert_allclose(task.behavior.probs[:, 0], 6 / 7)
    np.testing.assert_array_equal(task.target.probs[:, 1], 1.0)
    assert task.gamma == 0.99 and task.eval_target == "zero"


def test_boyan_closed_form_solution():
    task = build("boyan_chain")
    assert task.mdp.n_states == 13 and task.phi.shape[1] == 4
    z, err = mean_field_fixed_point(task, "TD")
    np.testing.assert_allclose(z, [-24.0, -16.0, -8.0, 0.0], atol=1e-8)
    assert err == pytest.approx(0.0, abs=1e-8)
    assert np.all(task.behavior.probs == task.target.probs)


@pytest.mark.parametrize("name", ["rw_tabular", "rw_inverted", "rw_dependent"])
def test_random_walk_configuration(name):
    task = build(name)
    live = task.eval_states
    assert len(live) == 5
    np.testing.assert_allclose(task.behavior.probs[live], 0.5)
    np.testing.assert_allclose(task.target.probs[live, 1], 0.7)
    v = task.target_values()[live]
    assert np.all(np.diff(v) > 0) and 0 < v[0] and v[-1] < 1


def test_next_transition_fields_on_new_task():
    task = build("two_state_new")
    gen = StreamGenerator(task, 0)
    for _ in range(50):
        tr = gen.next_transition()
        assert tr.rho == (2.0 if tr.a == 1 else 0.0)
        assert tr.s_next == tr.a  # action 0 -> s1, action 1 -> s2
        assert tr.r == (1.0 if (tr.s, tr.a) == (1, 1) else 0.0)


def test_same_seed_same_stream():
    task = build("baird_7state")
    a, b = StreamGenerator(task, 42), StreamGenerator(task, 42)
    assert [a.next_transition() for _ in range(1000)] == [b.next_transition() for _ in range(1000)]
    c = StreamGenerator(task, 43)
    assert [c.next_transition() for _ in range(20)] != [StreamGenerator(task, 42).next_transition() for _ in range(20)]


@pytest.mark.parametrize("name", ["two_state_new", "boyan_chain", "rw_dependent"])
def test_batch_equals_single_streams(name):
    task = build(name)
    seeds = [7, 8, 9]
    batch = generate_batch(task, seeds, 400)
    for j, seed in enumerate(seeds):
        gen = StreamGenerator(task, seed)
        for t in range(400):
            tr = gen.next_transition()
            col = batch_transition(batch, t)
            assert (col.s[j], col.a[j], col.s_next[j]) == (tr.s, tr.a, tr.s_next)
            assert col.r[j] == tr.r and col.rho[j] == tr.rho
            assert col.episode_start[j] == tr.episode_start and col.ends_episode[j] == tr.ends_episode


def test_visit_frequencies_counterexample():
    task = build("two_state_cetd_counterexample")
    batch = generate_batch(task, range(10), 100_000)
    freq = np.bincount(batch["s"].ravel(), minlength=2) / batch["s"].size
    np.testing.assert_allclose(freq, [0.05, 0.95], atol=0.01)


def test_state_action_frequencies_within_three_over_root_n():
    task = build("rw_tabular")
    batch = generate_batch(task, range(10), 100_000)
    N = batch["s"].size
    d = stationary_distribution(induced_kernel(task.mdp, task.behavior))
    expected = d[:, None] * task.behavior.probs
    counts = np.zeros_like(expected)
    np.add.at(counts, (batch["s"].ravel(), batch["a"].ravel()), 1)
    assert np.all(np.abs(counts / N - expected) <= 3 / np.sqrt(N))


@pytest.mark.parametrize("name", ["boyan_chain", "rw_inverted"])
def test_episode_starts_reset_trace(name):
    task = build(name)
    batch = generate_batch(task, [1], 3000)
    assert batch["episode_start"][0, 0]
    np.testing.assert_array_equal(batch["episode_start"][1:, 0], batch["ends_episode"][:-1, 0])
    # episodes begin at the restart state
    starts = batch["s"][1:, 0][batch["episode_start"][1:, 0]]
    assert len(starts) > 10 and np.all(task.start_dist[starts] > 0)
    state = LearnerState.initial(task, 1)
    cfg = AlgorithmConfig(Algorithm.ETD, 0.01)
    for t in range(3000):
        state = step(state, cfg, batch_transition(batch, t), task)
        if batch["episode_start"][t, 0]:
            assert state.follow_on[0] == 1.0


def test_terminal_transitions_do_not_bootstrap():
    task = build("boyan_chain")
    gen = StreamGenerator(task, 0)
    for _ in range(200):
        tr = gen.next_transition()
        if tr.ends_episode:
            assert task.mdp.terminal[tr.s] and tr.rho == 1.0
