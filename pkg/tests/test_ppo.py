import math

import numpy as np
import pytest

from staghunt import env as E
from staghunt.oracle import ScriptedKind, monte_carlo_value
from staghunt.policy import MlpDims, MlpParams, forward, init_params, log_softmax, sample_action
from staghunt.ppo import (
    AdamState, Hyperparams, Learner, RolloutBatch, RolloutCollector, TrainingError, adam_step,
    adapt_kl_coeff, compute_gae, decode_joint, encode_joint, ppo_loss_and_grad, train_centralized,
    train_ippo,
)
from staghunt.seeding import streams

SMALL = MlpDims(obs_dim=12, hidden=6, n_actions=5)
TINY_HP = Hyperparams(train_batch=300, sgd_minibatch=64, sgd_iters=2, num_envs=4, hidden=8)


# ---------------------------------------------------------------- GAE

def _gae_oracle(rewards, values, terminal_last, bootstrap, gamma, lam):
    """Sum of discounted TD errors, written as an explicit double loop."""
    n = len(rewards)
    v_next = list(values[1:]) + [0.0 if terminal_last else bootstrap]
    deltas = [rewards[t] + gamma * v_next[t] - values[t] for t in range(n)]
    return [sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, n)) for t in range(n)]


def test_gae_worked_example():
    adv, ret = compute_gae([0, 0, 25], [1, 1, 1], [False, False, True], 0.0, 0.99, 1.0)
    expected = _gae_oracle([0, 0, 25], [1, 1, 1], True, 0.0, 0.99, 1.0)
    np.testing.assert_allclose(expected, [23.5025, 23.75, 24.0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(adv, [23.5025, 23.75, 24.0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(ret, adv + 1.0, rtol=0, atol=1e-12)


def test_gae_identities():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        r = rng.normal(size=n)
        v = rng.normal(size=n)
        term = np.zeros(n, bool)
        term[-1] = True
        # lambda = 1, gamma = 1: reward-to-go minus value
        adv, _ = compute_gae(r, v, term, 123.0, 1.0, 1.0)
        np.testing.assert_allclose(adv, np.cumsum(r[::-1])[::-1] - v, atol=1e-12)
        # lambda = 1: discounted return minus value
        g = float(rng.uniform(0.5, 1.0))
        disc = np.array([sum(g ** (k - t) * r[k] for k in range(t, n)) for t in range(n)])
        adv, _ = compute_gae(r, v, term, 0.0, g, 1.0)
        np.testing.assert_allclose(adv, disc - v, atol=1e-12)
        # gamma = 0: one-step
        adv, _ = compute_gae(r, v, term, 0.0, 0.0, 0.7)
        np.testing.assert_allclose(adv, r - v, atol=1e-12)
        # truncated tail bootstraps, arbitrary lambda
        lam = float(rng.uniform(0, 1))
        b = float(rng.normal())
        adv, _ = compute_gae(r, v, np.zeros(n, bool), b, g, lam)
        np.testing.assert_allclose(adv, _gae_oracle(r, v, False, b, g, lam), atol=1e-12)


# ---------------------------------------------------------------- loss

def _random_minibatch(rng, params, n, clip, spread=1.0):
    obs = rng.random((n, params.dims.obs_dim))
    logits, values = forward(params, obs)
    old_logits = logits + rng.normal(0, spread, logits.shape)
    actions = rng.integers(params.dims.n_actions, size=n)
    old_lp = log_softmax(old_logits)[np.arange(n), actions]
    new_lp = log_softmax(logits)[np.arange(n), actions]
    ratio = np.exp(new_lp - old_lp)
    # keep every sample away from the non-differentiable clip edges
    ok = (np.abs(ratio - (1 - clip)) > 0.02) & (np.abs(ratio - (1 + clip)) > 0.02)
    adv = rng.normal(size=n)
    returns = values + rng.choice([-1, 1], n) * rng.uniform(0, 20, n)
    err = np.abs(values - returns)
    ok &= np.abs(err - 10.0) > 0.05
    mb = RolloutBatch(obs, actions, old_lp, old_logits, values, np.zeros(n), np.zeros(n, bool),
                      adv, returns)
    return mb.take(np.flatnonzero(ok))


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    hp = Hyperparams(entropy_coeff=0.01)
    h = 1e-6
    worst = 0.0
    clipped_seen = 0
    for case in range(100):
        p = init_params(rng, SMALL)
        p.flat[:] += rng.normal(0, 0.3, p.flat.size)
        mb = _random_minibatch(rng, p, 24, hp.clip)
        kl_coeff = float(rng.uniform(0, 1))
        _, grad, stats = ppo_loss_and_grad(p, mb, hp, kl_coeff)
        clipped_seen += stats["clip_frac"] > 0
        fd = np.empty_like(grad)
        for k in range(p.flat.size):
            old = p.flat[k]
            p.flat[k] = old + h
            up = ppo_loss_and_grad(p, mb, hp, kl_coeff)[0]
            p.flat[k] = old - h
            dn = ppo_loss_and_grad(p, mb, hp, kl_coeff)[0]
            p.flat[k] = old
            fd[k] = (up - dn) / (2 * h)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad) + np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
    assert clipped_seen >= 50
    assert worst < 1e-4, worst


def test_loss_value_matches_formula():
    rng = np.random.default_rng(3)
    hp = Hyperparams(entropy_coeff=0.05)
    p = init_params(rng, SMALL)
    p.flat[:] += rng.normal(0, 0.3, p.flat.size)
    mb = _random_minibatch(rng, p, 40, hp.clip)
    loss, _, _ = ppo_loss_and_grad(p, mb, hp, 0.4)
    logits, values = forward(p, mb.obs)
    lp = log_softmax(logits)
    olp = log_softmax(mb.logits)
    total = 0.0
    for i in range(len(mb)):
        rho = math.exp(lp[i, mb.actions[i]] - mb.logp[i])
        A = mb.advantages[i]
        surr = min(rho * A, min(max(rho, 0.7), 1.3) * A)
        vf = min((values[i] - mb.returns[i]) ** 2, 100.0)
        ent = -sum(math.exp(x) * x for x in lp[i])
        kl = sum(math.exp(o) * (o - c) for o, c in zip(olp[i], lp[i]))
        total += -surr + vf - 0.05 * ent + 0.4 * kl
    assert loss == pytest.approx(total / len(mb), rel=1e-12)


def test_identity_ratio_surrogate_is_minus_mean_advantage():
    rng = np.random.default_rng(5)
    p = init_params(rng, SMALL)
    obs = rng.random((50, 12))
    logits, values = forward(p, obs)
    a = rng.integers(5, size=50)
    adv = rng.normal(size=50)
    adv = (adv - adv.mean()) / adv.std()
    mb = RolloutBatch(obs, a, log_softmax(logits)[np.arange(50), a], logits, values,
                      np.zeros(50), np.zeros(50, bool), adv, values.copy())
    _, _, stats = ppo_loss_and_grad(p, mb, Hyperparams(), 0.2)
    assert abs(stats["policy_loss"]) < 1e-12
    assert stats["kl"] == pytest.approx(0.0, abs=1e-15)
    assert stats["vf_loss"] == 0.0


def test_saturated_clip_has_no_policy_gradient():
    rng = np.random.default_rng(6)
    p = init_params(rng, SMALL)
    obs = rng.random((1, 12))
    logits, values = forward(p, obs)
    a = np.array([2])
    lp = log_softmax(logits)[0, 2]
    old_lp = lp - math.log(1 + 2 * 0.3)  # rho = 1 + 2 clip
    mb = RolloutBatch(obs, a, np.array([old_lp]), logits.copy(), values, np.zeros(1),
                      np.zeros(1, bool), np.array([1.5]), values.copy())
    _, grad, _ = ppo_loss_and_grad(p, mb, Hyperparams(), 0.0)
    assert not grad.any()
    mb.advantages[:] = -1.5  # negative advantage keeps the unclipped branch
    _, grad, _ = ppo_loss_and_grad(p, mb, Hyperparams(), 0.0)
    assert grad.any()


def test_nonfinite_loss_aborts():
    p = init_params(np.random.default_rng(0), SMALL)
    obs = np.random.default_rng(1).random((4, 12))
    logits, values = forward(p, obs)
    mb = RolloutBatch(obs, np.zeros(4, int), np.zeros(4), logits, values, np.zeros(4),
                      np.zeros(4, bool), np.array([np.nan, 0, 0, 0]), values)
    with pytest.raises(TrainingError):
        ppo_loss_and_grad(p, mb, Hyperparams(), 0.2)


@pytest.mark.parametrize("args,expected", [
    ((0.2, 0.5, 0.2), 0.3), ((0.2, 0.05, 0.2), 0.1), ((0.2, 0.2, 0.2), 0.2),
    ((0.2, 0.4, 0.2), 0.2), ((0.2, 0.1, 0.2), 0.2),
])
def test_adapt_kl(args, expected):
    assert adapt_kl_coeff(*args) == pytest.approx(expected, abs=1e-15)


# ---------------------------------------------------------------- Adam

def test_adam_two_step_scalar_trace():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    g1, g2, x0 = 0.5, -2.0, 1.0
    # hand recursion
    m1 = (1 - b1) * g1
    v1 = (1 - b2) * g1 ** 2
    x1 = x0 - lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
    m2 = b1 * m1 + (1 - b1) * g2
    v2 = b2 * v1 + (1 - b2) * g2 ** 2
    x2 = x1 - lr * (m2 / (1 - b1 ** 2)) / (math.sqrt(v2 / (1 - b2 ** 2)) + eps)
    st = AdamState.zeros(1)
    y1, st = adam_step(np.array([x0]), np.array([g1]), st, lr, b1, b2, eps)
    y2, st = adam_step(y1, np.array([g2]), st, lr, b1, b2, eps)
    assert abs(y1[0] - x1) < 1e-12 and abs(y2[0] - x2) < 1e-12 and st.t == 2


def test_adam_first_step_and_zero_grad():
    g = np.array([3.0, -0.2, 1e-3])
    x, _ = adam_step(np.zeros(3), g, AdamState.zeros(3), 1e-3)
    np.testing.assert_allclose(x, -1e-3 * np.sign(g), rtol=1e-4)
    x0 = np.array([1.0, 2.0])
    x, _ = adam_step(x0, np.zeros(2), AdamState.zeros(2), 1e-3)
    np.testing.assert_array_equal(x, x0)
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), AdamState.zeros(2), 1e-3)


# ---------------------------------------------------------------- hyperparams

def test_hyperparam_defaults_and_validation():
    hp = Hyperparams()
    assert (hp.clip, hp.gamma, hp.train_batch, hp.sgd_minibatch, hp.sgd_iters) == (0.3, 0.99, 4000, 128, 30)
    assert (hp.kl_coeff, hp.kl_target, hp.entropy_coeff, hp.vf_clip) == (0.2, 0.2, 0.0, 10.0)
    assert (hp.vf_loss_coeff, hp.gae_lambda, hp.learning_rate) == (1.0, 1.0, 5e-5)
    for bad in (dict(gamma=0), dict(gae_lambda=1.5), dict(clip=0), dict(sgd_minibatch=5000)):
        with pytest.raises(ValueError):
            Hyperparams(**bad)


# ---------------------------------------------------------------- rollouts

def _collector(label, seed, slots=("agent0", "agent1"), num_envs=4, config=None):
    r = streams(seed)
    cfg = config or E.config_for(label)
    return RolloutCollector(cfg, list(slots), num_envs, r["spawn"], r["stag"], r["sampling"]), r


def test_collect_exact_size_and_determinism():
    out = []
    for _ in range(2):
        col, r = _collector("RRR", 5)
        params = [init_params(r["policy-init"], MlpDims(hidden=8)) for _ in range(2)]
        batches, stats = col.collect(params, 500, 0.99, 1.0)
        out.append((batches, stats))
    for b in out[0][0]:
        assert len(b) == 500 and b.obs.shape == (500, 12)
        assert np.isfinite(b.advantages).all()
        np.testing.assert_allclose(b.returns - b.values, b.advantages, atol=1e-12)
    for b1, b2 in zip(out[0][0], out[1][0]):
        for k in b1.__dataclass_fields__:
            np.testing.assert_array_equal(getattr(b1, k), getattr(b2, k))
    assert out[0][1] == out[1][1]


def test_frozen_agents_take_no_decisions():
    col, r = _collector("FFF", 1, num_envs=2)
    params = [init_params(r["policy-init"], MlpDims(hidden=8)) for _ in range(2)]
    batches, stats = col.collect(params, 400, 0.99, 1.0)
    for i, b in enumerate(batches):
        # the self-frozen flag is always 0 in a learner's own observations
        assert not b.obs[:, 10].any()
        # every terminal step carries one of the terminal payoffs
        assert set(np.unique(b.rewards[b.terminals])) <= {25.0, 2.0, -1.0}
        assert not b.rewards[~b.terminals].any()


def test_all_stay_policy_only_truncates():
    cfg = E.EnvConfig(stag_move=E.StagMove.RANDOM, time_limit=3, label="FFR")
    col, r = _collector(None, 2, config=cfg)
    p = MlpParams(MlpDims(hidden=8))
    p["b3"][E.STAY] = 1e3
    batches, stats = col.collect([p, p], 120, 0.99, 1.0)
    assert stats.combined == [] and stats.truncated > 0
    assert (batches[0].actions == E.STAY).all()
    assert not batches[0].terminals.any()


def test_iteration_zero_matches_uniform_baseline():
    hp = Hyperparams(train_batch=4000, num_envs=32, sgd_iters=1, learning_rate=0.0)
    res = train_ippo("FFF", hp, iterations=1, seed=0)
    pt = res.curve[0]
    mc = monte_carlo_value(E.variant("FFF"), (ScriptedKind.UNIFORM_RANDOM,) * 2, 4000, 1.0,
                           np.random.default_rng(1), spawn_rng=np.random.default_rng(2))
    combined = mc.mean[0] + mc.mean[1]
    se = pt.std_combined_reward / math.sqrt(pt.episodes)
    assert pt.episodes > 100
    assert abs(pt.mean_combined_reward - combined) < 5 * se + 0.2


def test_zero_learning_rate_keeps_parameters():
    hp = Hyperparams(train_batch=300, sgd_minibatch=64, sgd_iters=2, num_envs=4, hidden=8,
                     learning_rate=0.0)
    r = streams(3)
    dims = MlpDims(hidden=8)
    init = [init_params(r["policy-init"], dims) for _ in range(2)]
    res = train_ippo("RRR", hp, iterations=2, seed=3)
    for a, b in zip(res.policies, init):
        assert a.flat.tobytes() == b.flat.tobytes()


def test_train_ippo_shapes_and_reproducibility():
    a = train_ippo("FRF", TINY_HP, iterations=2, seed=7)
    b = train_ippo("FRF", TINY_HP, iterations=2, seed=7)
    assert len(a.curve) == 2 and a.curve == b.curve
    assert all(x == y for x, y in zip(a.policies, b.policies))
    assert a.policies[0] != a.policies[1]
    assert a.policies[0].flat is not a.policies[1].flat
    for pt in a.curve:
        assert -2 <= pt.mean_combined_reward <= 50


def test_learner_resets_and_stats():
    r = streams(0)
    L = Learner(init_params(r["policy-init"], MlpDims(hidden=8)), TINY_HP, r["sgd"])
    col, _ = _collector("FFF", 0)
    batches, _ = col.collect([L.params, L.params], 300, 0.99, 1.0)
    st = L.update(batches[0])
    assert abs(batches[0].advantages.mean()) < 1e-9
    assert st["measured_kl"] >= 0
    assert L.adam.t == TINY_HP.sgd_iters * math.ceil(300 / 64)
    L.reset_optimizer()
    assert L.adam.t == 0 and not L.adam.m.any()


# ---------------------------------------------------------------- centralised

def test_joint_encoding():
    for a0 in range(5):
        for a1 in range(5):
            j = encode_joint(a0, a1)
            assert 0 <= j < 25 and decode_joint(j) == (a0, a1)
    rng = np.random.default_rng(0)
    a, _ = sample_action(np.zeros((100_000, 25)), rng)
    a0, a1 = decode_joint(a)
    for marg in (a0, a1):
        np.testing.assert_allclose(np.bincount(marg, minlength=5) / len(a), 0.2, atol=0.01)


def test_train_centralized_runs():
    res = train_centralized("FFF", TINY_HP, iterations=2, seed=1)
    (p,) = res.policies
    assert p.dims == MlpDims(24, 8, 25)
    assert len(res.curve) == 2
    for pt in res.curve:
        assert pt.mean_combined_reward <= 50
