import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etdlab.environments import CATALOG, build, random_task
from etdlab.mdp import FeatureMap, FiniteMdp, Policy, PredictionTask, discounted_kernel
from etdlab.spectral import (
    NoStableFixedPoint,
    ThresholdUndefined,
    c_min,
    coupling_identity_check,
    emphatic_weights,
    hurwitz_check,
    integrate_mean_field,
    is_positive_definite,
    joint_matrix,
    key_matrices,
    mean_field_fixed_point,
    mean_field_terms,
    pd_by_eigenvalues,
    pd_by_minors,
    residual_matrix_certificate,
    spectrum,
    symmetric_part,
)


def _gamma_zero_task():
    mdp = FiniteMdp(np.full((2, 2, 2), 0.5), np.array([[1.0, 0.0], [0.0, 2.0]]), 0.0)
    return PredictionTask(mdp, Policy.uniform(2, 2), Policy([[0.7, 0.3], [0.2, 0.8]]), FeatureMap([[1.0], [0.5]]))


def _random_tasks(n, seed=0, **kw):
    rng = np.random.default_rng(seed)
    return [random_task(rng, **kw) for _ in range(n)]


@pytest.mark.parametrize(
    "name, f",
    [("two_state_cetd_counterexample", [0.05, 9.95]), ("two_state_sutton", [0.5, 9.5]), ("two_state_new", [0.5, 9.5])],
)
def test_emphatic_weights_examples(name, f):
    np.testing.assert_allclose(emphatic_weights(build(name)), f, atol=1e-12)


def test_emphatic_weights_gamma_zero_equals_d():
    task = _gamma_zero_task()
    np.testing.assert_allclose(emphatic_weights(task), [0.5, 0.5], atol=1e-15)
    assert coupling_identity_check(task) < 1e-15


def test_emphatic_weights_neumann_series():
    task = _random_tasks(1, seed=7)[0]
    G = discounted_kernel(task.mdp, task.target)
    from etdlab.spectral import behavior_distribution

    d = behavior_distribution(task)
    series, term = np.zeros_like(d), d.copy()
    for _ in range(2000):
        series += term
        term = G.T @ term
    f = emphatic_weights(task)
    np.testing.assert_allclose(f, series, atol=1e-10)
    assert np.all(f >= d - 1e-15)


@pytest.mark.parametrize("name", list(CATALOG))
def test_coupling_identity_catalog(name):
    assert coupling_identity_check(build(name)) <= 1e-10


def test_coupling_identity_random_tasks():
    for task in _random_tasks(50, seed=1, n_states=5):
        assert coupling_identity_check(task) <= 1e-10


def test_sutton_key_matrices():
    rep = key_matrices(build("two_state_sutton"), [9.0])
    assert rep.a_td[0, 0] == pytest.approx(-0.2, abs=1e-12)
    assert rep.a_etd[0, 0] == pytest.approx(3.4, abs=1e-12)
    np.testing.assert_allclose(rep.g_cetd, [[3.4, 1.5], [1.5, 1.0]], atol=1e-12)
    assert rep.determinants["CETD"] == pytest.approx(1.15, abs=1e-12)
    assert rep.determinants["RETD(c=9)"] == pytest.approx(31.75, abs=1e-12)
    np.testing.assert_allclose(rep.eigenvalues["CETD"], [4.12, 0.28], atol=5e-3)
    np.testing.assert_allclose(rep.eigenvalues["RETD(c=9)"], [10.32, 3.08], atol=1e-2)
    assert rep.c_min == pytest.approx(-0.338, abs=5e-4)
    assert rep.c_min_note == "always PD"
    assert not rep.pd_flags["TD"] and rep.pd_flags["CETD"]


def test_counterexample_quadratic_form():
    rep = key_matrices(build("two_state_cetd_counterexample"), [])
    np.testing.assert_allclose(rep.g_cetd, [[0.3812, 0.62], [0.62, 1.0]], atol=1e-12)
    x = np.array([1.0, -0.62])
    assert x @ rep.g_cetd @ x == pytest.approx(-0.0032, abs=1e-12)
    assert not rep.pd_flags["CETD"]


def test_joint_matrix_structure():
    rep = key_matrices(build("rw_dependent"), [0.0, 3.0])
    E = np.zeros_like(rep.g_cetd)
    E[-1, -1] = 1.0
    np.testing.assert_allclose(rep.g_retd[3.0], rep.g_cetd + 3.0 * E, atol=1e-14)
    np.testing.assert_allclose(rep.g_retd_of_c(3.0), rep.g_retd[3.0])
    np.testing.assert_array_equal(rep.g_retd[0.0], rep.g_cetd)
    assert rep.eigenvalues["CETD"][0] >= rep.eigenvalues["CETD"][-1]


def test_joint_matrix_coupling_blocks_symmetric_on_random_tasks():
    # the off-diagonal column and row agree by the coupling identity; the
    # emphatic block itself is only symmetric for a single feature
    for task in _random_tasks(100, seed=2):
        rep = key_matrices(task, [1.0])
        G = rep.g_cetd
        np.testing.assert_allclose(G[:-1, -1], G[-1, :-1], atol=1e-10)
    for task in _random_tasks(30, seed=3, n_features=1):
        rep = key_matrices(task, [1.0])
        np.testing.assert_allclose(rep.g_cetd, rep.g_cetd.T, atol=1e-10)


def test_c_min_threshold_is_sharp():
    tasks = [build("two_state_cetd_counterexample"), build("two_state_new"), build("two_state_sutton")]
    tasks += _random_tasks(60, seed=4)
    checked = 0
    for task in tasks:
        try:
            cm = c_min(task)
        except ThresholdUndefined:
            continue
        rep = key_matrices(task, [])
        eps = 1e-6 * (1 + abs(cm))
        assert is_positive_definite(rep.g_retd_of_c(cm + eps))
        assert not is_positive_definite(rep.g_retd_of_c(cm - eps))
        checked += 1
    assert checked > 20


@pytest.mark.parametrize("name, expected", [("two_state_cetd_counterexample", 0.3844 / 0.3812 - 1),
                                             ("two_state_new", 0.119)])
def test_c_min_examples(name, expected):
    assert c_min(build(name)) == pytest.approx(expected, abs=5e-4)


def test_c_min_undefined_for_singular_emphatic_block():
    with pytest.raises(ThresholdUndefined):
        c_min(build("baird_7state"))
    rep = key_matrices(build("baird_7state"))
    assert rep.c_min is None and "undefined" in rep.c_min_note


def test_c_min_gamma_zero_always_pd():
    rep = key_matrices(_gamma_zero_task())
    assert rep.c_min < 0 and rep.c_min_note == "always PD"


def test_certificate_gamma_zero():
    task = _gamma_zero_task()
    cert = residual_matrix_certificate(task, 0.0)
    d = np.array([0.5, 0.5])
    np.testing.assert_allclose(cert.K, np.diag(d) - np.outer(d, d), atol=1e-15)
    np.testing.assert_allclose(cert.column_sums, 0.0, atol=1e-15)


def test_certificate_new_task_at_boundary():
    cert = residual_matrix_certificate(build("two_state_new"), 9.0)
    assert cert.offdiag_nonpositive and cert.columns_positive and cert.rows_nonnegative
    # state 0's row sum is exactly zero at c = gamma / (1 - gamma)
    assert cert.row_sums[0] == pytest.approx(0.0, abs=1e-12)
    assert cert.certified


def test_certificate_sufficient_condition_random_tasks():
    for task in _random_tasks(100, seed=5):
        c = task.gamma / (1 - task.gamma)
        cert = residual_matrix_certificate(task, c)
        assert cert.offdiag_nonpositive
        np.testing.assert_allclose(cert.column_sums, cert.expected_column_sums, atol=1e-10)
        np.testing.assert_allclose(cert.row_sums, cert.expected_row_sums, atol=1e-10)
        assert cert.rows_positive
        assert is_positive_definite(key_matrices(task, [c]).g_retd[c])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(-2.0, 2.0))
def test_pd_eigenvalues_agree_with_minors(n, seed, shift):
    B = np.random.default_rng(seed).normal(size=(n, n))
    M = B @ B.T / n + shift * np.eye(n)
    assert pd_by_eigenvalues(M) == pd_by_minors(M)


def test_pd_uses_quadratic_form_for_nonsymmetric():
    M = np.array([[1.0, 10.0], [0.0, 1.0]])  # eigenvalues 1, 1 but indefinite form
    assert not pd_by_eigenvalues(M)
    assert hurwitz_check(M)[0]
    np.testing.assert_allclose(symmetric_part(M), [[1.0, 5.0], [5.0, 1.0]])


def test_hurwitz_examples():
    ok, abscissa = hurwitz_check(np.eye(3))
    assert ok and abscissa == pytest.approx(-1.0)
    rep = key_matrices(build("two_state_new"), [9.0])
    assert rep.hurwitz["RETD(c=9)"]
    assert not rep.hurwitz["CETD"]


def test_spectrum_sorted_descending():
    ev = spectrum(np.diag([1.0, 3.0, 2.0]))
    assert list(ev) == [3.0, 2.0, 1.0]


def test_mean_field_td_new_task():
    z, err = mean_field_fixed_point(build("two_state_new"), "TD")
    assert z[0] == pytest.approx(0.3 / 0.248, rel=1e-9)
    assert err == pytest.approx(8.56, abs=5e-3)


def test_mean_field_zero_reward():
    z, err = mean_field_fixed_point(build("two_state_sutton"), "ETD")
    assert np.allclose(z, 0.0) and err == 0.0
    z, err = mean_field_fixed_point(build("two_state_sutton"), "RETD", 9.0)
    assert np.allclose(z, 0.0) and err == 0.0


def test_mean_field_no_stable_point():
    with pytest.raises(NoStableFixedPoint):
        mean_field_fixed_point(build("two_state_new"), "CETD")
    with pytest.raises(NoStableFixedPoint):
        mean_field_fixed_point(build("two_state_sutton"), "TD")


@pytest.mark.parametrize("name, algo, c", [("two_state_new", "RETD", 9.0), ("two_state_sutton", "CETD", 0.0),
                                           ("two_state_new", "TD", 0.0), ("rw_dependent", "RETD", 9.0)])
def test_euler_converges_to_fixed_point(name, algo, c):
    h, G = mean_field_terms(build(name), algo, c)
    z, _ = integrate_mean_field(h, G, np.ones(len(h)))
    np.testing.assert_allclose(z, np.linalg.solve(G, h), atol=1e-6)


def test_joint_matrix_corner():
    G = joint_matrix(np.array([[2.0]]), np.array([1.0]), np.array([1.0]), 4.0)
    np.testing.assert_array_equal(G, [[2.0, 1.0], [1.0, 5.0]])
