import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cfs_lab import operator_core as oc
from cfs_lab import sphere_model as sm
from cfs_lab.errors import DomainError, InvalidOptions
from oracles import sphere_d_closed_form

SQ2 = math.sqrt(2.0)
FAST = sm.MinimizeOptions(master_seed=3, restarts=2, temperature_levels=30, steps_per_level=20,
                          polish_iterations=500, workers=1)


def _unit(rng, k):
    v = rng.normal(size=(k, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


# closed form -------------------------------------------------------------------------


@pytest.mark.parametrize("c,tau,expected", [(1.0, SQ2, 16.0), (0.0, SQ2, 0.0), (-1.0, 2.7, 0.0)])
def test_d_function_values(c, tau, expected):
    assert sm.d_function(c, tau) == pytest.approx(expected, abs=1e-12)


def test_d_function_domain():
    with pytest.raises(DomainError):
        sm.d_function(1.1, 2.0)
    with pytest.raises(DomainError):
        sm.theta_max(0.5)


def test_d_function_matches_eigenvalue_oracle(rng):
    for c, tau in zip(rng.uniform(-1, 1, 500), rng.uniform(1, 3, 500)):
        assert max(0.0, sm.d_function(c, tau)) == pytest.approx(
            sphere_d_closed_form(c, tau), rel=1e-10, abs=1e-10)


def test_lagrangian_examples():
    x = np.array([0.0, 0.0, 1.0])
    y = np.array([math.sqrt(0.75), 0.0, -0.5])
    assert sm.sphere_lagrangian(x, y, 2.0) == 0.0
    assert sm.sphere_lagrangian(x, x, SQ2) == pytest.approx(16.0)


def test_tau_one_never_clipped(rng):
    for x, y in zip(_unit(rng, 50), _unit(rng, 50)):
        c = float(x @ y)
        assert sm.sphere_lagrangian(x, y, 1.0) == pytest.approx(2 * (1 + c) ** 2)


def test_theta_max():
    assert sm.theta_max(SQ2) == pytest.approx(math.pi / 2)
    assert sm.theta_max(2.0) == pytest.approx(math.pi / 3)
    assert sm.theta_max(1.0) is None


def test_embed():
    np.testing.assert_allclose(sm.embed([0, 0, 1], SQ2).entries, np.diag([1 + SQ2, 1 - SQ2]))
    np.testing.assert_allclose(sm.embed([0, 0, -1], SQ2).entries, np.diag([1 - SQ2, 1 + SQ2]))
    rng = np.random.default_rng(0)
    for x in _unit(rng, 10):
        e = sm.embed(x, 1.7).entries
        assert np.trace(e).real == pytest.approx(2.0)
        assert np.linalg.det(e).real == pytest.approx(1 - 1.7 ** 2)


def test_oracle_identity_with_spectral_lagrangian(rng):
    for x, y, tau in zip(_unit(rng, 400), _unit(rng, 400), rng.uniform(1, 3, 400)):
        spectral = oc.lagrangian(sm.embed(x, tau), sm.embed(y, tau))
        closed = sm.sphere_lagrangian(x, y, tau)
        assert abs(spectral - closed) <= 1e-10 * max(1.0, abs(closed))


def test_classification_threshold(rng):
    tau = 1.8
    cmax = math.cos(sm.theta_max(tau))
    for x, y in zip(_unit(rng, 200), _unit(rng, 200)):
        c = float(x @ y)
        if abs(c - cmax) < 1e-6:
            continue
        cls = oc.classify(oc.product_spectrum(sm.embed(x, tau), sm.embed(y, tau)))
        assert cls is (oc.CausalClass.TIMELIKE if c > cmax else oc.CausalClass.SPACELIKE)


# configurations and actions -----------------------------------------------------------


def test_platonic_cosines():
    def cosines(solid):
        p = sm.platonic(solid, SQ2).points
        g = p @ p.T
        return np.unique(np.round(g[~np.eye(len(p), dtype=bool)], 12))

    assert len(sm.platonic("tetra", SQ2).points) == 4
    np.testing.assert_allclose(cosines("tetra"), [-1 / 3])
    np.testing.assert_allclose(cosines("octa"), [-1, 0], atol=1e-12)
    np.testing.assert_allclose(cosines("icosa"), [-1, -1 / math.sqrt(5), 1 / math.sqrt(5)])
    with pytest.raises(InvalidOptions):
        sm.platonic("torus", SQ2)


def test_platonic_actions():
    tetra = sm.platonic("tetra", SQ2)
    assert sm.sphere_action(tetra) == pytest.approx(4.0, abs=1e-12)
    assert sm.sphere_constraint(tetra) == pytest.approx(12.0, abs=1e-12)
    assert sm.sphere_action(sm.platonic("octa", SQ2)) == pytest.approx(16 / 6, abs=1e-12)


def test_single_point_action():
    for tau in (1.0, 1.3, 2.5):
        cfg = sm.sphere_config(tau, [[0, 1, 0]])
        assert sm.sphere_action(cfg) == pytest.approx(8 * tau * tau)


def test_action_matches_operator_core(rng):
    for tau in (1.0, SQ2, 2.2):
        cfg = sm.sphere_config(tau, _unit(rng, 7), rng.uniform(0.1, 1, 7))
        meas = oc.make_measure([sm.embed(x, tau) for x in cfg.points], cfg.weights, spin_dim=1)
        rep = oc.action(meas)
        assert rep.action_S == pytest.approx(sm.sphere_action(cfg), rel=1e-10)
        assert rep.constraint_T == pytest.approx(sm.sphere_constraint(cfg), rel=1e-10)


def test_rotation_invariance(rng):
    cfg = sm.sphere_config(1.6, _unit(rng, 9), rng.uniform(0.1, 1, 9))
    rot = Rotation.random(random_state=4).as_matrix()
    rotated = sm.sphere_config(1.6, cfg.points @ rot.T, cfg.weights)
    assert sm.sphere_action(rotated) == pytest.approx(sm.sphere_action(cfg), abs=1e-12)


def test_config_validation():
    with pytest.raises(DomainError):
        sm.sphere_config(0.9, [[1, 0, 0]])
    with pytest.raises(InvalidOptions):
        sm.sphere_config(1.5, [[0, 0, 0]])
    with pytest.raises(InvalidOptions):
        sm.sphere_config(1.5, [[2, 0, 0]], normalize=False)


def test_tetrahedron_is_strict_local_minimum(rng):
    tetra = sm.platonic("tetra", SQ2)
    for _ in range(50):
        pts = tetra.points + 1e-3 * rng.normal(size=(4, 3))
        w = tetra.weights + 1e-3 * rng.normal(size=4)
        cfg = sm.sphere_config(SQ2, pts, np.abs(w))
        assert sm.sphere_action(cfg) >= 4.0 - 1e-12


# clustering ------------------------------------------------------------------------------


def test_support_clusters():
    two = sm.sphere_config(1.5, [[0, 0, 1], [0, 0, 1]], [0.5, 0.5])
    sup = sm.support_clusters(two)
    assert sup.size == 1 and sup.weights[0] == pytest.approx(1.0)
    assert sm.support_clusters(sm.platonic("tetra", SQ2)).size == 4
    base = sm.platonic("tetra", SQ2).points
    rng = np.random.default_rng(1)
    jitter = base + 1e-5 * rng.normal(size=base.shape)
    cfg = sm.sphere_config(SQ2, np.vstack([base, jitter]))
    sup = sm.support_clusters(cfg)
    assert sup.size == 4
    assert sup.weights.sum() == pytest.approx(1.0)


def test_support_drops_negligible_weights():
    cfg = sm.sphere_config(1.5, [[0, 0, 1], [1, 0, 0]], [1.0, 1e-12])
    assert sm.support_clusters(cfg).size == 1


# minimization ------------------------------------------------------------------------------


def test_options_validation():
    with pytest.raises(InvalidOptions):
        sm.MinimizeOptions(restarts=0).validate()
    with pytest.raises(InvalidOptions):
        sm.MinimizeOptions(cooling_factor=1.0).validate()
    with pytest.raises(InvalidOptions):
        sm.minimize(sm.RandomStart(1.5, 0), FAST)
    with pytest.raises(InvalidOptions):
        sm.minimize(sm.RandomStart(0.5, 4), FAST)


def test_single_point_minimum():
    res = sm.minimize(sm.RandomStart(1.7, 1), FAST)
    assert res.action == pytest.approx(8 * 1.7 ** 2)
    assert res.support.size == 1


def test_minimize_contract_and_determinism():
    a = sm.minimize(sm.RandomStart(1.6, 6), FAST)
    b = sm.minimize(sm.RandomStart(1.6, 6), FAST)
    assert a.action == b.action
    np.testing.assert_array_equal(a.best.points, b.best.points)
    assert a.action == pytest.approx(sm.sphere_action(a.best), abs=1e-12)
    assert np.all(np.diff(a.history) <= 0)
    assert a.history[-1] == pytest.approx(a.action, abs=1e-12)
    assert a.support.weights.sum() == pytest.approx(1.0)
    assert len(a.restart_actions) == FAST.restarts
    assert a.action == pytest.approx(min(a.restart_actions), abs=1e-12)
    assert a.action <= 8 * 1.6 ** 2


def test_minimize_independent_of_worker_count():
    opts2 = sm.MinimizeOptions(**{**FAST.__dict__, "workers": 2})
    a = sm.minimize(sm.RandomStart(1.3, 5), FAST)
    b = sm.minimize(sm.RandomStart(1.3, 5), opts2)
    assert a.action == b.action
    np.testing.assert_array_equal(a.best.weights, b.best.weights)


def test_minimize_from_tetrahedron_never_increases():
    res = sm.minimize(sm.platonic("tetra", SQ2), FAST)
    assert res.action <= 4.0 + 1e-12


def test_tau_one_reaches_two_design_value():
    # at tau = 1 every spherical 2-design has action 8/3
    res = sm.minimize(sm.RandomStart(1.0, 6), FAST)
    assert res.action == pytest.approx(8 / 3, abs=1e-6)


def test_sweep_rows_sorted():
    rows = sm.sweep([1.5, 1.0], [3, 2], FAST)
    assert [(r.tau, r.m) for r in rows] == [(1.0, 2), (1.0, 3), (1.5, 2), (1.5, 3)]
    assert sm.sweep([], [2], FAST) == []
    # larger point sets can emulate smaller ones
    assert rows[1].min_action <= rows[0].min_action + 1e-9
