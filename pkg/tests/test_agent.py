import copy
import math

import numpy as np
import pytest

from abx.action_balance import BonusVector, mix_policy, normalize
from abx.agent import Agent, AgentConfig, gae, ppo_objective
from abx.errors import ConfigurationError, UsageError
from abx.gridworld import EnvConfig, GridPos, GridWorld, all_features

CFG = EnvConfig()


def make(method, **kw):
    env = GridWorld(CFG)
    env.reset()
    return Agent(AgentConfig(method=method, **kw), CFG), env


def zero_logits(agent):
    w, b = agent.policy.layers[-1]
    w[:, :agent.k] = 0.0
    b[:agent.k] = 0.0


def test_method_gating():
    random, _ = make("random")
    assert random.policy is None and random.balancer is None and random.novelty is None
    rnd, _ = make("rnd")
    assert rnd.balancer is None and rnd.novelty is not None
    ab, _ = make("ab")
    assert ab.balancer is not None and ab.novelty is None
    both, _ = make("ab_rnd")
    assert both.balancer is not None and both.novelty is not None


def test_unknown_method_rejected():
    with pytest.raises(ConfigurationError):
        AgentConfig(method="greedy")


def test_random_act_is_uniform():
    agent, _ = make("random")
    probs, bonus = agent.behavior(GridPos(3, 3))
    assert np.array_equal(probs, np.full(4, 0.25)) and bonus is None
    a, p, diag = agent.act(GridPos(3, 3))
    assert 0 <= a < 4 and p == 0.25 and diag is None


def test_rnd_never_computes_bonus_vectors():
    agent, _ = make("rnd")
    _, bonus = agent.behavior(GridPos(1, 2))
    assert bonus is None


def test_action_balance_prefers_high_bonus(monkeypatch):
    agent, _ = make("ab")
    zero_logits(agent)
    monkeypatch.setattr(agent.balancer, "bonus_vector",
                        lambda s, state_tag=None: BonusVector([0.0, 0.0, 0.0, 10.0]))
    agent._normalizer = None
    probs, _ = agent.behavior(GridPos(5, 5))
    assert int(np.argmax(probs)) == 3
    assert np.allclose(probs, mix_policy(np.zeros(4), normalize([0, 0, 0, 10.0])))


def test_act_sampling_frequencies_match_behavior():
    agent, _ = make("ab_rnd", seed=4)
    pos = GridPos(7, 12)
    probs, _ = agent.behavior(pos)
    n = 100_000
    counts = np.zeros(4)
    for _ in range(n):
        a, p, diag = agent.act(pos)
        counts[a] += 1
    assert diag is not None and len(diag) == 4
    assert np.max(np.abs(counts / n - probs)) < 0.01


def test_rollout_is_one_full_episode():
    agent, env = make("rnd")
    rollout = agent.collect_rollout(env)
    assert len(rollout) == 200
    assert rollout[0].state == CFG.start
    assert [t.done for t in rollout] == [False] * 199 + [True]


def test_rollout_rewards_follow_visit_counts():
    agent, env = make("rnd")
    rollout = agent.collect_rollout(env)
    assert rollout[0].reward == 1.0
    seen = {}
    for t in rollout:
        n = seen.get(t.next_state, 0)
        assert t.reward == 1.0 / math.sqrt(n + 1)
        assert t.intrinsic == t.reward and t.external == 0.0
        seen[t.next_state] = n + 1


def test_methods_without_novelty_get_zero_reward():
    for method in ("random", "ab"):
        agent, env = make(method)
        assert all(t.reward == 0.0 for t in agent.collect_rollout(env))


def test_behavior_prob_matches_sampling_distribution():
    agent, env = make("ab_rnd", seed=2)
    frozen = copy.deepcopy(agent._normalizer)
    rollout = agent.collect_rollout(env)
    # normalizer statistics only move after the rollout
    agent._normalizer = frozen
    for t in rollout:
        probs, _ = agent.behavior(t.state)
        assert 0 < t.behavior_prob <= 1
        assert t.behavior_prob == pytest.approx(probs[t.action], rel=1e-9)


def test_rollout_resets_and_stops_on_goal():
    cfg = EnvConfig(goal=(1, 0), max_episode_len=5)
    env = GridWorld(cfg)
    env.reset()
    agent = Agent(AgentConfig(method="random", seed=0), cfg)
    rollout = agent.collect_rollout(env, max_steps=500, stop_on_goal=True)
    assert rollout[-1].reached_goal and rollout[-1].next_state == GridPos(1, 0)
    assert sum(t.reached_goal for t in rollout) == 1


def test_random_update_reports_zeros():
    agent, env = make("random")
    report = agent.update(agent.collect_rollout(env))
    assert report.action_balance_loss == 0 and report.novelty_loss == 0 and report.total_loss == 0


@pytest.mark.parametrize("method", ["rnd", "ab", "ab_rnd"])
def test_total_loss_is_sum_of_components(method):
    agent, env = make(method, seed=1)
    for _ in range(2):
        r = agent.update(agent.collect_rollout(env))
        assert abs(r.total_loss - (r.policy_loss + r.action_balance_loss + r.novelty_loss)) <= 1e-12
    if method != "rnd":
        assert r.action_balance_loss > 0 and r.mean_bonus_entropy is not None
    else:
        assert r.mean_bonus_entropy is None


def test_neural_novelty_variant_trains():
    agent, env = make("rnd", novelty="neural", distill_lr=1e-3)
    rollout = agent.collect_rollout(env)
    assert all(t.reward > 0 for t in rollout)
    report = agent.update(rollout)
    assert report.novelty_loss > 0


def test_empty_rollout_rejected():
    agent, _ = make("rnd")
    with pytest.raises(UsageError):
        agent.update([])


def test_agent_is_deterministic():
    def trace():
        agent, env = make("ab_rnd", seed=123)
        actions = []
        for _ in range(3):
            rollout = agent.collect_rollout(env)
            actions.extend(t.action for t in rollout)
            agent.update(rollout)
        return actions, agent.policy.params.copy(), agent.balancer.pair.predictor.params.copy()

    a1, p1, b1 = trace()
    a2, p2, b2 = trace()
    assert a1 == a2
    assert p1.tobytes() == p2.tobytes() and b1.tobytes() == b2.tobytes()


def test_first_ratio_uses_behavior_prob_and_is_finite():
    agent, env = make("ab_rnd", seed=5)
    rollout = agent.collect_rollout(env)
    feats = all_features(CFG)
    states = feats[[agent._state_index(t.state) for t in rollout]]
    out = agent.policy.forward(states)
    actions = np.array([t.action for t in rollout])
    behavior = np.array([t.behavior_prob for t in rollout])
    *_, ratio = ppo_objective(out, actions, behavior, np.zeros(len(rollout)), np.zeros(len(rollout)),
                              0.2, 0.5, 0.0)
    pi = np.exp(out[:, :4] - out[:, :4].max(1, keepdims=True))
    pi /= pi.sum(1, keepdims=True)
    assert np.all(np.isfinite(ratio))
    assert np.allclose(ratio, pi[np.arange(len(actions)), actions] / behavior)


def test_policy_denominator_switch():
    agent, env = make("ab_rnd", seed=5, ratio_denominator="policy")
    rollout = agent.collect_rollout(env)
    for t in rollout:
        logits, _ = agent.policy_outputs(t.state)
        pi = np.exp(logits - logits.max())
        pi /= pi.sum()
        assert t.policy_prob == pytest.approx(pi[t.action], rel=1e-9)
    agent.update(rollout)


def test_zero_clip_keeps_logit_steps_bounded():
    agent, env = make("rnd", clip_epsilon=0.0, seed=3)
    feats = all_features(CFG)
    for _ in range(3):
        before = agent.policy.forward(feats)[:, :4]
        agent.update(agent.collect_rollout(env))
        after = agent.policy.forward(feats)[:, :4]
        assert np.max(np.abs(after - before)) < 1.0


def brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    n = len(rewards)
    nxt = list(values[1:]) + [bootstrap]
    deltas = [rewards[t] + gamma * nxt[t] * (not dones[t]) - values[t] for t in range(n)]
    out = []
    for t in range(n):
        total, weight = 0.0, 1.0
        for l in range(t, n):
            total += weight * deltas[l]
            if dones[l]:
                break
            weight *= gamma * lam
        out.append(total)
    return np.array(out)


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
def test_gae_matches_brute_force(lam):
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=30), rng.normal(size=30)
    d = rng.uniform(size=30) < 0.15
    assert np.allclose(gae(r, v, d, 0.7, 0.9, lam), brute_force_gae(r, v, d, 0.7, 0.9, lam), atol=1e-12)


def test_gae_lambda_one_is_discounted_return_minus_value():
    r = np.array([1.0, 0.0, 2.0])
    v = np.array([0.5, 0.2, 0.1])
    adv = gae(r, v, np.array([False, False, True]), 9.0, 0.9, 1.0)
    returns = [1 + 0.9 * 0 + 0.81 * 2, 0 + 0.9 * 2, 2.0]
    assert np.allclose(adv, np.array(returns) - v)


def test_zero_advantage_gives_zero_surrogate_gradient():
    rng = np.random.default_rng(1)
    out = rng.normal(size=(10, 5))
    args = (out, rng.integers(0, 4, 10), np.full(10, 0.25), np.zeros(10), out[:, 4].copy())
    _, surrogate, _, _, grad, _ = ppo_objective(*args, 0.2, 0.5, 0.0)
    assert surrogate == 0.0 and np.all(grad == 0.0)
    *_, grad_ent, _ = ppo_objective(*args, 0.2, 0.5, 0.01)
    assert np.any(grad_ent[:, :4] != 0.0)


def test_ppo_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    out = rng.normal(size=(8, 5))
    actions = rng.integers(0, 4, 8)
    old = rng.uniform(0.1, 0.9, 8)
    adv, ret = rng.normal(size=8), rng.normal(size=8)

    def loss(o):
        return ppo_objective(o, actions, old, adv, ret, 0.2, 0.5, 0.01)[0]

    grad = ppo_objective(out, actions, old, adv, ret, 0.2, 0.5, 0.01)[4]
    h = 1e-6
    for i in range(8):
        for j in range(5):
            o = out.copy()
            o[i, j] += h
            up = loss(o)
            o[i, j] -= 2 * h
            assert grad[i, j] == pytest.approx((up - loss(o)) / (2 * h), rel=1e-5, abs=1e-9)
