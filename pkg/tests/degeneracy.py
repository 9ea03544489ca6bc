"""Random instances for the bit-exact degeneracy identities

* optimistic propagation with beta = 0 behaves exactly like mean propagation;
* trajectory sampling on a model with sigma == 0 behaves exactly like mean propagation.

Each check returns a list of human-readable mismatches (empty when the identity holds).
"""

import numpy as np

from softae.ensemble import EnsembleModel, Normalizer, init_ensemble
from softae.numerics import MlpParams, init_mlp
from softae.planning import (EPISTEMIC, AugmentedActionSeq, ICemConfig, MpcController,
                             PlannerSpec, Propagation, icem_optimize, mpc_step, rollout_value,
                             rollout_values)


def quadratic_reward(next_states, actions):
    return -np.sum(next_states**2, axis=-1) - 0.1 * np.sum(actions**2, axis=-1)


def _instance(k: int, zero_sigma: bool):
    rng = np.random.default_rng([k, int(zero_sigma)])
    d_s, d_a = int(rng.integers(2, 5)), int(rng.integers(1, 3))
    hidden = (int(rng.integers(4, 12)),)
    if zero_sigma:
        net = init_mlp([d_s + d_a, *hidden, d_s], rng)
        model = EnsembleModel(MlpParams.stack([net] * 3), Normalizer.identity(d_s + d_a, d_s),
                              d_s, d_a)
    else:
        model = init_ensemble(d_s, d_a, hidden=hidden, size=3, seed=int(rng.integers(2**31)))
    horizon = int(rng.integers(1, 6))
    reward = quadratic_reward if zero_sigma or k % 2 else EPISTEMIC
    bounds = np.tile([-1.0, 1.0], (d_a, 1))
    config = ICemConfig(samples=16, elites=4, iterations=2, particles_per_candidate=3,
                        action_bounds=bounds)
    s0 = rng.normal(size=d_s)
    return rng, model, horizon, reward, config, s0


def _same(a, b) -> bool:
    return np.array_equal(np.asarray(a), np.asarray(b))


def check_optimistic_beta_zero(k: int) -> list[str]:
    rng, model, H, reward, config, s0 = _instance(k, zero_sigma=False)
    d_s, d_a = model.d_s, model.d_a
    seed = int(rng.integers(2**31))
    mean = PlannerSpec(Propagation.MEAN, reward, H, beta=0.0)
    opt = PlannerSpec(Propagation.OPTIMISTIC, reward, H, beta=0.0)
    bad = []

    acts = rng.uniform(-1, 1, (H, d_a))
    eta = rng.uniform(-1, 1, (H, d_s))
    v_mean = rollout_value(model, mean, s0, AugmentedActionSeq(acts))
    v_opt = rollout_value(model, opt, s0, AugmentedActionSeq(acts, eta))
    if not _same(v_mean, v_opt):
        bad.append(f"instance {k}: rollout_value {v_mean!r} vs {v_opt!r}")

    aug_bounds = np.concatenate([config.action_bounds, np.tile([-1.0, 1.0], (d_s, 1))])
    r_mean = icem_optimize(lambda p: rollout_values(model, mean, s0, p), H, d_a, config,
                           rng=np.random.default_rng(seed))
    r_opt = icem_optimize(lambda p: rollout_values(model, opt, s0, p[..., :d_a], p[..., d_a:]),
                          H, d_a + d_s, config, rng=np.random.default_rng(seed), bounds=aug_bounds)
    if not (_same(r_mean.best_value, r_opt.best_value)
            and _same(r_mean.best_candidate, r_opt.best_candidate[:, :d_a])
            and _same(r_mean.best_history, r_opt.best_history)):
        bad.append(f"instance {k}: icem_optimize differs")

    c_mean, c_opt = MpcController(seed=seed), MpcController(seed=seed)
    s_m = s_o = s0
    for t in range(3):
        a_m, i_m = mpc_step(c_mean, model, mean, config, s_m)
        a_o, i_o = mpc_step(c_opt, model, opt, config, s_o)
        if not (_same(a_m, a_o) and _same(i_m["best_value"], i_o["best_value"])):
            bad.append(f"instance {k}: mpc_step differs at step {t}")
            break
        s_m = model.predict_batch(s_m, a_m)[0]
        s_o = model.predict_batch(s_o, a_o)[0]
    return bad


def check_sampling_zero_sigma(k: int) -> list[str]:
    rng, model, H, reward, config, s0 = _instance(k, zero_sigma=True)
    d_a = model.d_a
    seed = int(rng.integers(2**31))
    mean = PlannerSpec(Propagation.MEAN, reward, H)
    ts = PlannerSpec(Propagation.TRAJECTORY_SAMPLING, reward, H, noise_seed=k)
    bad = []

    acts = rng.uniform(-1, 1, (H, d_a))
    v_mean = rollout_value(model, mean, s0, AugmentedActionSeq(acts))
    v_ts = rollout_value(model, ts, s0, AugmentedActionSeq(acts), rng=np.random.default_rng(seed),
                         particles_per_candidate=config.particles_per_candidate)
    if not _same(v_mean, v_ts):
        bad.append(f"instance {k}: rollout_value {v_mean!r} vs {v_ts!r}")

    noise = np.random.default_rng(seed + 1)
    r_mean = icem_optimize(lambda p: rollout_values(model, mean, s0, p), H, d_a, config,
                           rng=np.random.default_rng(seed))
    r_ts = icem_optimize(lambda p: rollout_values(model, ts, s0, p, rng=noise,
                                                  particles_per_candidate=3),
                         H, d_a, config, rng=np.random.default_rng(seed))
    if not (_same(r_mean.best_value, r_ts.best_value)
            and _same(r_mean.best_candidate, r_ts.best_candidate)
            and _same(r_mean.best_history, r_ts.best_history)):
        bad.append(f"instance {k}: icem_optimize differs")

    c_mean, c_ts = MpcController(seed=seed), MpcController(seed=seed)
    s = s0
    for t in range(3):
        a_m, i_m = mpc_step(c_mean, model, mean, config, s)
        a_t, i_t = mpc_step(c_ts, model, ts, config, s)
        if not (_same(a_m, a_t) and _same(i_m["best_value"], i_t["best_value"])):
            bad.append(f"instance {k}: mpc_step differs at step {t}")
            break
        s = model.predict_batch(s, a_m)[0]
    return bad
