import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from softae.ensemble import TransitionDataset
from softae.envs import EnvSpec, cart_tasks, cart_transition_matrices, env_reset
from softae.errors import ConfigError, DomainError, ExperimentError, UsageError
from softae.harness import io
from softae.harness.config import (ExperimentConfig, FitConfig, Method, ModelConfig, RunConfig,
                                   config_from_dict, config_to_dict, paper_preset, resolve_seed)
from softae.harness.evaluation import (HeatmapGrid, coverage_entropy, coverage_heatmap,
                                       evaluate_model_mse, evaluate_zero_shot, generate_heldout)
from softae.harness.experiment import init_model, rollout, run_experiment
from softae.planning import DeterministicModel, ICemConfig, PlannerSpec, Propagation


def tiny_config(method="random", episodes=2, horizon=5, **run_kw):
    return ExperimentConfig(
        model=ModelConfig(hidden=[8]),
        fit=FitConfig(epochs=2, max_gradient_steps=20),
        icem=ICemConfig(samples=8, elites=2, iterations=1, particles_per_candidate=2),
        run=RunConfig(method=method, episodes=episodes, rollout_horizon=horizon,
                      train_task="reach_close", **run_kw),
    )


# ---- config -------------------------------------------------------------------

def test_config_dict_round_trip():
    cfg = tiny_config("hucrl")
    again = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(again) == config_to_dict(cfg)


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError):
        config_from_dict({"run": {"episodez": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"run": {"episodes": -1}})
    with pytest.raises(ConfigError):
        config_from_dict({"run": {"seeds": []}})


def test_hucrl_needs_existing_task():
    with pytest.raises(ConfigError):
        ExperimentConfig(run=RunConfig(method=Method.HUCRL, train_task="nope"))


def test_partial_icem_section_keeps_desk_defaults():
    cfg = config_from_dict({"icem": {"samples": 60}})
    assert cfg.icem.samples == 60 and cfg.icem.elites == ExperimentConfig().icem.elites


def test_paper_preset_values():
    cfg = paper_preset(ExperimentConfig())
    assert cfg.model.hidden == [256] * 4 and cfg.fit.learning_rate == 5e-5
    assert cfg.fit.max_gradient_steps == 5000 and cfg.icem.samples == 200 and cfg.icem.elites == 20


def test_seed_env_var_wins(monkeypatch):
    cfg = ExperimentConfig(run=RunConfig(seeds=[4, 5]))
    assert resolve_seed(None, cfg) == 4
    assert resolve_seed(9, cfg) == 9
    monkeypatch.setenv("SOFTAE_SEED", "17")
    assert resolve_seed(9, cfg) == 17
    monkeypatch.setenv("SOFTAE_SEED", "x")
    with pytest.raises(ConfigError):
        resolve_seed(9, cfg)


# ---- experiment loop ---------------------------------------------------------------

def test_zero_episodes():
    cfg = tiny_config(episodes=0)
    data, model, record = run_experiment(cfg, 0)
    assert len(data) == 0 and record.rows == []
    fresh = init_model(cfg, 0)
    assert all(np.array_equal(a, b) for a, b in zip(model.particles.arrays(), fresh.particles.arrays()))


def test_random_bookkeeping():
    data, _, record = run_experiment(tiny_config(episodes=2, horizon=5), 0)
    assert len(data) == 10 and data.episode_boundaries == [5]
    assert [r.episode for r in record.rows] == [1, 2]
    assert all(math.isfinite(r.train_loss) and math.isfinite(r.exploration_return) for r in record.rows)


@pytest.mark.parametrize("method", ["softae", "mean_ae", "pets_ae", "hucrl"])
def test_model_based_methods_run_and_grow_dataset(method):
    sizes = []
    run_experiment(tiny_config(method, episodes=3, horizon=4), 1,
                   on_episode=lambda ep, d, m, row: sizes.append(len(d)))
    assert sizes == [4, 8, 12]


def test_same_seed_gives_identical_bytes():
    cfg = tiny_config("softae", episodes=2, horizon=4)
    out = []
    for _ in range(2):
        data, model, record = run_experiment(cfg, 3, record_wall_time=False)
        out.append((io.dataset_to_text(data), io.dumps(io.model_to_dict(model)),
                    io.record_to_csv(record)))
    assert out[0] == out[1]


def test_methods_share_the_reset_state():
    starts = []
    for method in ("random", "softae"):
        data, _, _ = run_experiment(tiny_config(method, episodes=1, horizon=2), 0)
        starts.append(data.states[0])
    assert np.array_equal(starts[0], starts[1])
    assert np.array_equal(starts[0], env_reset(EnvSpec()).to_vector())


def test_failure_reports_episode_and_phase():
    def boom(ep, *_):
        if ep == 2:
            raise RuntimeError("stop")

    with pytest.raises(ExperimentError) as info:
        run_experiment(tiny_config(episodes=3), 0, on_episode=boom)
    err = info.value
    assert err.episode == 2 and err.phase == "callback"
    assert len(err.record.rows) == 2 and err.record.failed_episode == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_failure_is_recorded_in_fit_phase():
    cfg = tiny_config(episodes=2)
    cfg.fit.learning_rate = 1e300
    cfg.fit.max_gradient_steps = 50
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg, 0)
    assert info.value.phase == "fit" and info.value.episode == 1


def test_rollout_uses_policy_actions():
    env = EnvSpec.delayed_cart()
    S, A, S2 = rollout(env, lambda s: np.array([0.5]), 4)
    assert S.shape == (4, 4) and np.all(A == 0.5)
    assert np.array_equal(S[1:], S2[:-1])


# ---- held-out set and model error --------------------------------------------------------

def test_heldout_empty_and_sizes():
    env = EnvSpec()
    assert len(generate_heldout(env, 0)) == 0
    data, truncated = generate_heldout(env, 50, 40, seed=1, return_info=True)
    assert len(data) <= 2000 and any(truncated)
    assert len(data.episode_boundaries) == 49


def test_heldout_deterministic():
    a, b = generate_heldout(EnvSpec(), 5, 10, seed=2), generate_heldout(EnvSpec(), 5, 10, seed=2)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)


def test_heldout_only_for_arm():
    with pytest.raises(UsageError):
        generate_heldout(EnvSpec.delayed_cart(), 3)


def _dataset(S, A, S2):
    S, A, S2 = (np.asarray(x, dtype=float) for x in (S, A, S2))
    return TransitionDataset(S.shape[1], A.shape[1], S, A, S2)


def test_mse_zero_for_exact_model():
    held = generate_heldout(EnvSpec(), 3, 10, seed=0)
    lookup = {tuple(s) + tuple(a): sp for s, a, sp in zip(held.states, held.actions, held.next_states)}
    model = DeterministicModel(lambda S, A: np.array([lookup[tuple(s) + tuple(a)] for s, a in zip(S, A)]),
                               held.d_s, held.d_a)
    res = evaluate_model_mse(model, held)
    assert res.mse == 0.0


def test_mse_offset_by_one_std_is_one():
    rng = np.random.default_rng(0)
    S2 = rng.normal(size=(50, 3))
    held = _dataset(np.zeros((50, 3)), np.zeros((50, 1)), S2)
    std = S2.std(axis=0)
    model = DeterministicModel(lambda S, A: S2 + std, 3, 1)
    assert evaluate_model_mse(model, held).mse == pytest.approx(1.0, rel=1e-12)


def test_mse_hand_computation():
    S2 = np.array([[0.0, 1.0], [2.0, 1.0], [4.0, 4.0]])
    held = _dataset(np.zeros((3, 2)), np.zeros((3, 1)), S2)
    model = DeterministicModel(lambda S, A: np.tile([1.0, 2.0], (len(S), 1)), 2, 1)
    # std0 = sqrt(8/3), std1 = sqrt(2); squared errors (1, 1, 9) and (1, 1, 4)
    d0 = (1 + 1 + 9) / 3 / (8 / 3)
    d1 = (1 + 1 + 4) / 3 / 2
    res = evaluate_model_mse(model, held)
    assert res.mse == pytest.approx((d0 + d1) / 2, rel=1e-14)
    np.testing.assert_allclose(res.per_dim, [d0, d1], rtol=1e-14)
    assert res.excluded_dims == 0


def test_constant_dims_are_excluded_and_counted():
    S2 = np.array([[0.0, 5.0], [2.0, 5.0]])
    held = _dataset(np.zeros((2, 2)), np.zeros((2, 1)), S2)
    res = evaluate_model_mse(DeterministicModel(lambda S, A: np.zeros((len(S), 2)), 2, 1), held)
    assert res.excluded_dims == 1 and np.isnan(res.per_dim[1])
    # dim 0 has std 1 and squared errors (0, 4)
    assert res.mse == pytest.approx(2.0)


def test_mse_errors():
    with pytest.raises(DomainError):
        evaluate_model_mse(DeterministicModel(lambda S, A: S, 2, 1), TransitionDataset(2, 1))


# ---- zero-shot -----------------------------------------------------------------------------

def cart_lp_optimum(env, horizon):
    """Best summed velocity over ``horizon`` steps by linear programming on the exact dynamics."""
    A, B = cart_transition_matrices(env)
    d = env.d_s
    # velocity after step t is linear in the forces u_0..u_t
    coef = np.zeros(horizon)
    M = np.eye(d)
    rows = []
    for t in range(horizon):
        rows.append(M)
        M = A @ M
    for t in range(horizon):
        for j in range(t + 1):
            coef[j] += (np.linalg.matrix_power(A, t - j) @ B)[1, 0]
    res = linprog(-coef, bounds=[(-env.force_limit, env.force_limit)] * horizon, method="highs")
    return -res.fun


def test_zero_shot_cart_matches_linear_programming_optimum():
    env = EnvSpec.delayed_cart()
    A, B = cart_transition_matrices(env)
    model = DeterministicModel(lambda S, U: S @ A.T + U @ B.T, env.d_s, env.d_a)
    task = cart_tasks(horizon=60)[0]
    icem = ICemConfig(samples=30, elites=5, iterations=2, action_bounds=env.action_bounds)
    res = evaluate_zero_shot(model, [task], PlannerSpec(Propagation.MEAN, None, 10), icem, env, 1, 0)
    best = cart_lp_optimum(env, 60)
    ret = res[task.task_id].returns[0]
    assert best > 0 and ret == pytest.approx(best, rel=0.05)
    assert res[task.task_id].std == 0.0


def test_zero_shot_deterministic():
    env = EnvSpec.delayed_cart()
    A, B = cart_transition_matrices(env)
    model = DeterministicModel(lambda S, U: S @ A.T + U @ B.T, env.d_s, env.d_a)
    tasks = cart_tasks(horizon=15)
    icem = ICemConfig(samples=10, elites=2, iterations=1, action_bounds=env.action_bounds)
    spec = PlannerSpec(Propagation.MEAN, None, 5)
    r1 = evaluate_zero_shot(model, tasks, spec, icem, env, 2, 5)
    r2 = evaluate_zero_shot(model, tasks, spec, icem, env, 2, 5)
    assert all(r1[k].returns == r2[k].returns for k in r1)


def test_zero_shot_records_planner_failures():
    env = EnvSpec.delayed_cart()
    model = DeterministicModel(lambda S, U: np.full(S.shape, np.nan), env.d_s, env.d_a)
    icem = ICemConfig(samples=4, elites=2, iterations=1, action_bounds=env.action_bounds)
    res = evaluate_zero_shot(model, cart_tasks(horizon=3), PlannerSpec(Propagation.MEAN, None, 2),
                             icem, env, 1, 0)
    for r in res.values():
        assert np.isnan(r.returns[0]) and len(r.errors) == 1


# ---- coverage ----------------------------------------------------------------------------------

BOX = ((-1.0, 1.0), (-1.0, 1.0))


def test_single_sample_heatmap():
    g = coverage_heatmap(np.array([[0.0, 0.0]]), BOX, 4)
    assert g.total == 1 and coverage_entropy(g) == 0.0


def test_uniform_counts_give_log_bins():
    g = HeatmapGrid(BOX[0], BOX[1], 5, np.full((5, 5), 3))
    assert coverage_entropy(g) == pytest.approx(math.log(25), rel=1e-14)


def test_three_one_split():
    pts = np.array([[-0.5, -0.5]] * 3 + [[0.5, 0.5]])
    g = coverage_heatmap(pts, BOX, 2)
    assert coverage_entropy(g) == pytest.approx(-(0.75 * math.log(0.75) + 0.25 * math.log(0.25)))


def test_out_of_bounds_dropped_and_counted():
    g = coverage_heatmap(np.array([[0.0, 0.0], [1.0, 1.0], [1.5, 0.0], [0.0, -2.0]]), BOX, 3)
    assert g.total == 2 and g.dropped == 2


def test_bins_must_be_positive():
    with pytest.raises(ConfigError):
        coverage_heatmap(np.zeros((1, 2)), BOX, 0)


def test_heatmap_from_dataset_uses_next_state_tips():
    d = TransitionDataset(4, 1, np.zeros((2, 4)), np.zeros((2, 1)),
                          np.array([[0, 0, 0.5, 0.5], [0, 0, -0.5, 0.5]]))
    g = coverage_heatmap(d, BOX, 2)
    assert g.counts[1, 1] == 1 and g.counts[0, 1] == 1


@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=60),
       st.integers(1, 8))
def test_heatmap_counts_in_bounds_samples(points, bins):
    pts = np.array(points)
    g = coverage_heatmap(pts, BOX, bins)
    inside = int(np.sum(np.all(np.abs(pts) <= 1.0, axis=1)))
    assert g.total == inside and g.dropped == len(pts) - inside
    assert 0.0 <= coverage_entropy(g) <= math.log(bins * bins) + 1e-12


@given(st.lists(st.integers(0, 20), min_size=4, max_size=16), st.randoms())
def test_entropy_invariant_under_bin_relabeling(counts, rnd):
    counts = counts[:4] if len(counts) < 9 else counts[:9]
    side = int(math.isqrt(len(counts)))
    c = np.array(counts[:side * side]).reshape(side, side)
    shuffled = c.ravel().copy()
    rnd.shuffle(shuffled)
    a = coverage_entropy(HeatmapGrid(BOX[0], BOX[1], side, c))
    b = coverage_entropy(HeatmapGrid(BOX[0], BOX[1], side, shuffled.reshape(side, side)))
    assert a == pytest.approx(b, abs=1e-12)


def test_merging_equal_bins_lowers_entropy_by_log2():
    split = HeatmapGrid(BOX[0], BOX[1], 2, np.array([[2, 2], [4, 0]]))
    merged = HeatmapGrid(BOX[0], BOX[1], 2, np.array([[4, 0], [4, 0]]))
    # merging two bins of mass 1/4 each changes H by -(1/2) ln 2
    assert coverage_entropy(split) - coverage_entropy(merged) == pytest.approx(0.5 * math.log(2))


def test_in_loop_evaluation_schedule():
    cfg = tiny_config("softae", episodes=3, horizon=3, eval_every=2)
    cfg.tasks = [replace(t, horizon=3) for t in cfg.tasks]
    _, _, record = run_experiment(cfg, 0)
    assert sorted({e for e, _, _ in record.task_curve}) == [2, 3]
    assert set(record.task_returns) == {t.task_id for t in cfg.tasks}
    last = {t: r for e, t, r in record.task_curve if e == 3}
    assert last == record.task_returns
    _, _, off = run_experiment(cfg.with_eval_every(0), 0)
    assert off.task_curve == [] and off.task_returns == {}
