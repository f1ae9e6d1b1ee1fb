import numpy as np
import pytest

from sgdchain import engine, rng
from sgdchain.model import NoiseModel, make_spec


def test_beta_zero_is_identity(quad_3d):
    spec, noise = quad_3d
    tr = engine.run_chain(spec, noise, 0.0, [3.0, 2.0, 1.0], 20, 1)
    np.testing.assert_array_equal(tr.iterates, np.tile([3.0, 2.0, 1.0], (21, 1)))


def test_chain_and_ensemble_agree_bitwise(quad_3d):
    spec, noise = quad_3d
    ens = engine.run_ensemble(spec, noise, 0.1, [1.0, 1.0, 1.0], 40, [40], 5, 7)
    tr = engine.run_chain(spec, noise, 0.1, [1.0, 1.0, 1.0], 40, rng.replica_seed(7, 2))
    np.testing.assert_array_equal(ens.at(40)[2], tr.final)


def test_threads_do_not_change_results(quad_3d):
    spec, noise = quad_3d
    a = engine.run_ensemble(spec, noise, 0.1, [0.0, 0.0, 0.0], 30, [10, 30], 3000, 3, threads=1,
                            windows=[(5, 20)])
    b = engine.run_ensemble(spec, noise, 0.1, [0.0, 0.0, 0.0], 30, [10, 30], 3000, 3, threads=4,
                            windows=[(5, 20)])
    np.testing.assert_array_equal(a.at(30), b.at(30))
    np.testing.assert_array_equal(a.window_average(5, 20), b.window_average(5, 20))


def test_chunk_boundary_invariance(oracle_1d):
    spec, noise = oracle_1d
    T = engine.CHUNK + 10
    full = engine.run_chain(spec, noise, 0.1, [0.5], T, 11).iterates
    short = engine.run_chain(spec, noise, 0.1, [0.5], engine.CHUNK - 3, 11).iterates
    np.testing.assert_array_equal(full[: engine.CHUNK - 2], short)


def test_recursion_matches_hand_rolled(oracle_1d):
    spec, noise = oracle_1d
    tr = engine.run_chain(spec, noise, 0.2, [1.0], 5, 9, record_gradients=True)
    th = 1.0
    for t in range(5):
        th = th - 0.2 * tr.gradients[t, 0]
        assert tr.iterates[t + 1, 0] == pytest.approx(th, rel=1e-15)


def test_window_average_matches_trajectory(oracle_1d):
    spec, noise = oracle_1d
    ens = engine.run_ensemble(spec, noise, 0.1, [1.0], 30, [], 2, 4, windows=[(10, 15)])
    tr = engine.run_chain(spec, noise, 0.1, [1.0], 30, rng.replica_seed(4, 1))
    assert ens.window_average(10, 15)[1, 0] == pytest.approx(tr.iterates[11:26, 0].mean(), rel=1e-13)


def test_step_size_guard(oracle_1d):
    spec, noise = oracle_1d
    with pytest.raises(engine.StepSizeError, match="ergodicity"):
        engine.run_chain(spec, noise, 1.5, [0.0], 5, 0)
    tr = engine.run_chain(spec, noise, 1.5, [0.0], 5, 0, force=True)
    assert tr.iterates.shape == (6, 1)


def test_divergence_reports_step_and_replica(oracle_1d):
    spec, noise = oracle_1d
    with pytest.raises(engine.DivergenceError) as info:
        engine.run_ensemble(spec, noise, 3.0, [1.0], 500, [], 3, 0, force=True)
    assert info.value.step > 0 and 0 <= info.value.replica < 3


def test_projection_keeps_iterates_in_ball():
    sigma = np.eye(2)
    noise = NoiseModel.random_design(sigma, 1.0)
    spec = make_spec("logistic_ball", [0.2, 0.1], sigma, noise, ball_radius=0.5)
    tr = engine.run_projected_chain(spec, noise, 0.5, [0.0, 0.0], 200, 3)
    assert np.linalg.norm(tr.iterates, axis=1).max() <= 0.5 + 1e-12


def test_minibatch_reduces_variance(quad_3d):
    spec, noise = quad_3d
    a = engine.run_ensemble(spec, noise, 0.1, spec.theta_star, 100, [100], 4000, 1)
    b = engine.run_ensemble(spec, noise, 0.1, spec.theta_star, 100, [100], 4000, 1, batch=10)
    ra = ((a.at(100) - spec.theta_star) ** 2).sum(1).mean()
    rb = ((b.at(100) - spec.theta_star) ** 2).sum(1).mean()
    assert rb == pytest.approx(ra / 10, rel=0.15)


def test_coupled_identical_starts_stay_together(quad_3d):
    spec, noise = quad_3d
    run = engine.run_coupled_pair(spec, noise, 0.1, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 20, 50, 2)
    assert np.all(run.sq_dists == 0)


def test_csv_round_trip(tmp_path, quad_3d):
    spec, noise = quad_3d
    ens = engine.run_ensemble(spec, noise, 0.1, [0.0, 0.0, 0.0], 10, [5, 10], 7, 2)
    engine.write_ensemble_csv(ens, tmp_path / "e.csv")
    back = engine.read_ensemble_csv(tmp_path / "e.csv")
    np.testing.assert_array_equal(back[10], ens.at(10))
    run = engine.run_coupled_pair(spec, noise, 0.1, [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 5, 4, 2)
    engine.write_coupling_csv(run, tmp_path / "c.csv")
    np.testing.assert_array_equal(engine.read_coupling_csv(tmp_path / "c.csv"), run.sq_dists)


def test_gaussian_init_is_seeded(quad_3d):
    spec, noise = quad_3d
    init = engine.GaussianInit(spec.theta_star, np.eye(3))
    a = engine.run_ensemble(spec, noise, 0.1, init, 0, [0], 100, 5).at(0)
    b = engine.run_ensemble(spec, noise, 0.1, init, 0, [0], 100, 5).at(0)
    np.testing.assert_array_equal(a, b)
    assert a.std(0).min() > 0.5
