"""PPO agent with optional action-balance and next-state bonus modules.

Method variants:

    random               uniform actions, nothing learned
    rnd                  PPO on r' = r + next-state bonus, actions ~ softmax(policy logits)
    action_balance       PPO on r' = r, actions ~ softmax(logits + normalized action bonuses)
    action_balance_rnd   both of the above

Within a rollout all network parameters are fixed, so behavior
distributions are computed once per visited cell and then reused.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from abx.action_balance import (ActionBalancer, BonusVector, RunningNormalizer, action_channel,
                                entropy, make_balancer, normalize, one_hot, softmax)
from abx.approximator import MLP, Adam, ApproximatorSpec, clip_by_norm
from abx.errors import ConfigurationError, UsageError
from abx.gridworld import NUM_ACTIONS, EnvConfig, GridWorld, all_features, features
from abx.novelty import NoveltyEstimator, make_novelty

METHODS = ("random", "rnd", "action_balance", "action_balance_rnd")
METHOD_ALIASES = {
    "ab": "action_balance",
    "ab_rnd": "action_balance_rnd",
    "abrnd": "action_balance_rnd",
}
BALANCE_METHODS = ("action_balance", "action_balance_rnd")
NOVELTY_METHODS = ("rnd", "action_balance_rnd")
EMBEDDINGS = ("one_hot", "one_hot+channel", "channel")


def canonical_method(name: str) -> str:
    name = METHOD_ALIASES.get(name.strip().lower(), name.strip().lower())
    if name not in METHODS:
        raise ConfigurationError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return name


@dataclass
class AgentConfig:
    method: str = "action_balance_rnd"
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    rollout_len: int = 200
    epochs_per_update: int = 4
    minibatch_size: int = 50
    learning_rate: float = 1e-3
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    seed: int = 0
    hidden_dim: int = 64
    hidden_layers: int = 2
    # distillation pairs (action balancer and neural novelty)
    distill_lr: float = 1e-2
    distill_output_dim: int = 32
    distill_optimizer: str = "adam"
    balancer_passes: int = 1
    balancer_minibatch: int = 0
    novelty: str = "tabular"
    novelty_normalize: bool = False
    embedding: str = "one_hot"
    channel_rows: int = 8
    channel_cols: int = 8
    channel_pad: float = 1.0
    bonus_normalize: str = "running"
    ratio_denominator: str = "behavior"

    def __post_init__(self):
        self.method = canonical_method(self.method)
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.clip_epsilon < 0:
            raise ConfigurationError("clip_epsilon must be >= 0")
        for name in ("rollout_len", "epochs_per_update", "minibatch_size", "hidden_dim",
                     "hidden_layers", "balancer_passes", "distill_output_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.distill_lr < 0:
            raise ConfigurationError("learning rates must be positive")
        if self.entropy_coef < 0:
            raise ConfigurationError("entropy_coef must be >= 0")
        if self.novelty not in ("tabular", "neural"):
            raise ConfigurationError(f"unknown novelty variant {self.novelty!r}")
        if self.embedding not in EMBEDDINGS:
            raise ConfigurationError(f"unknown embedding {self.embedding!r}")
        if self.bonus_normalize not in ("per_vector", "running"):
            raise ConfigurationError(f"unknown bonus normalization {self.bonus_normalize!r}")
        if self.ratio_denominator not in ("behavior", "policy"):
            raise ConfigurationError(f"unknown ratio denominator {self.ratio_denominator!r}")


@dataclass(slots=True)
class Transition:
    state: tuple
    action: int
    reward: float
    next_state: tuple
    done: bool
    behavior_prob: float
    value_estimate: float
    policy_prob: float = 0.0
    external: float = 0.0
    intrinsic: float = 0.0
    reached_goal: bool = False
    bonus_entropy: float | None = None


@dataclass
class UpdateReport:
    policy_loss: float
    action_balance_loss: float
    novelty_loss: float
    total_loss: float
    mean_bonus_entropy: float | None

    def row(self) -> list:
        ent = "" if self.mean_bonus_entropy is None else repr(self.mean_bonus_entropy)
        return [repr(self.policy_loss), repr(self.action_balance_loss), repr(self.novelty_loss),
                repr(self.total_loss), ent]


UPDATE_COLUMNS = ["update_index", "l_p", "ab_loss", "nov_loss", "l_t", "mean_bonus_entropy"]


def gae(rewards, values, dones, bootstrap: float, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates; ``dones[t]`` cuts the trace after step t."""
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    next_value = bootstrap
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv


def ppo_objective(outputs, actions, old_probs, advantages, returns, clip_epsilon: float,
                  value_coef: float, entropy_coef: float):
    """Clipped-surrogate loss on a minibatch and its gradient with respect to
    the network outputs (k logits followed by the value).

    Returns (loss, surrogate, value_loss, entropy, grad, ratio).
    """
    n, width = outputs.shape
    k = width - 1
    logits, values = outputs[:, :k], outputs[:, k]
    probs = softmax(logits)
    rows = np.arange(n)
    p_a = probs[rows, actions]
    ratio = p_a / old_probs
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    surrogate = -float(np.mean(np.minimum(ratio * advantages, clipped * advantages)))
    value_err = values - returns
    value_loss = 0.5 * float(np.mean(value_err ** 2))
    ent = entropy(probs)
    mean_ent = float(ent.mean())
    loss = surrogate + value_coef * value_loss - entropy_coef * mean_ent

    # the unclipped branch carries gradient unless clipping is active on the min
    active = ~(((advantages >= 0) & (ratio > 1.0 + clip_epsilon))
               | ((advantages < 0) & (ratio < 1.0 - clip_epsilon)))
    d_logp = np.where(active, -ratio * advantages, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    grad = np.zeros_like(outputs)
    grad[:, :k] = d_logp[:, None] * (onehot - probs)
    if entropy_coef:
        logp = np.log(probs)
        d_ent = -probs * (logp + ent[:, None])
        grad[:, :k] -= entropy_coef * d_ent / n
    grad[:, k] = value_coef * value_err / n
    return loss, surrogate, value_loss, mean_ent, grad, ratio


class Agent:
    def __init__(self, config: AgentConfig, env_config: EnvConfig | None = None):
        self.config = config
        self.env_config = env_config or EnvConfig()
        self.k = NUM_ACTIONS
        self.features = all_features(self.env_config)
        seq = np.random.SeedSequence(int(config.seed) & 0xFFFFFFFFFFFFFFFF)
        s_policy, s_balancer, s_novelty, s_sample, s_shuffle = seq.spawn(5)
        self.rng = np.random.default_rng(s_sample)
        self.shuffle_rng = np.random.default_rng(s_shuffle)
        self.updates = 0

        method = config.method
        self.policy: MLP | None = None
        self.balancer: ActionBalancer | None = None
        self.novelty: NoveltyEstimator | None = None
        if method != "random":
            spec = ApproximatorSpec(2, config.hidden_dim, self.k + 1, config.hidden_layers)
            self.policy = MLP.initialized(spec, np.random.default_rng(s_policy), output_scale=0.01)
            self.optimizer = Adam(spec.param_count)
        if method in BALANCE_METHODS:
            self.balancer = make_balancer(
                2, self._schemes(), int(s_balancer.generate_state(2, np.uint64)[0]),
                config.hidden_dim, config.hidden_layers, config.distill_output_dim,
                config.distill_optimizer)
            self.balancer.attach_states(self.features)
            self._normalizer = RunningNormalizer() if config.bonus_normalize == "running" else None
        if method in NOVELTY_METHODS:
            self.novelty = make_novelty(
                config.novelty, self.env_config, int(s_novelty.generate_state(2, np.uint64)[0]),
                ApproximatorSpec(2, config.hidden_dim, config.distill_output_dim, config.hidden_layers),
                normalize=config.novelty_normalize, optimizer=config.distill_optimizer)

    def _schemes(self):
        c = self.config
        channel = action_channel(self.k, c.channel_rows, c.channel_cols, c.channel_pad)
        return {"one_hot": [one_hot(self.k)],
                "one_hot+channel": [one_hot(self.k), channel],
                "channel": [channel]}[c.embedding]

    def _normalize(self, bonus: np.ndarray) -> np.ndarray:
        if self._normalizer is None:
            return normalize(bonus)
        return self._normalizer(bonus)

    def _state_index(self, pos) -> int:
        return pos[1] * self.env_config.width + pos[0]

    def policy_outputs(self, pos) -> tuple[np.ndarray, float]:
        out = self.policy.forward(features(pos, self.env_config)[None, :])[0]
        return out[:self.k], float(out[self.k])

    def behavior(self, pos) -> tuple[np.ndarray, np.ndarray | None]:
        """Sampling distribution at a cell and the raw bonus vector (if any)."""
        if self.policy is None:
            return np.full(self.k, 1.0 / self.k), None
        logits, _ = self.policy_outputs(pos)
        if self.balancer is None:
            return softmax(logits), None
        bonus = self.balancer.bonus_vector(features(pos, self.env_config)).values
        return softmax(logits + self._normalize(bonus)), bonus

    def act(self, pos) -> tuple[int, float, BonusVector | None]:
        probs, bonus = self.behavior(pos)
        a = int(np.searchsorted(np.cumsum(probs), self.rng.random(), side="right"))
        a = min(a, self.k - 1)
        return a, float(probs[a]), None if bonus is None else BonusVector(bonus, tuple(pos))

    def collect_rollout(self, env: GridWorld, max_steps: int | None = None,
                        stop_on_goal: bool = False) -> list[Transition]:
        """Step the environment ``rollout_len`` times (or ``max_steps``),
        resetting on episode end. With stop_on_goal the rollout ends right
        after the first goal contact."""
        n = self.config.rollout_len if max_steps is None else max_steps
        k = self.k
        width = self.env_config.width
        uniforms = self.rng.random(n).tolist()

        if self.policy is not None:
            table = self.policy.forward(self.features)
            pi_probs = softmax(table[:, :k])
            values = table[:, k].tolist()
            pi_rows = pi_probs.tolist()
            pi_cum = np.cumsum(pi_probs, axis=1).tolist()
        else:
            values = None
        balancer = self.balancer
        rows: dict[int, tuple] = {}
        novelty = self.novelty

        out: list[Transition] = []
        if env.position is None or env.done:
            env.reset()
        pos = env.position
        for t in range(n):
            idx = pos[1] * width + pos[0]
            if balancer is not None:
                row = rows.get(idx)
                if row is None:
                    bonus = balancer.bonus_row(idx)
                    probs = softmax(table[idx, :k] + self._normalize(bonus))
                    row = (np.cumsum(probs).tolist(), probs.tolist(),
                           float(entropy(softmax(normalize(bonus)))), bonus)
                    rows[idx] = row
                cum, probs_row, ent = row[0], row[1], row[2]
            elif values is not None:
                cum, probs_row, ent = pi_cum[idx], pi_rows[idx], None
            else:
                cum, probs_row, ent = None, None, None

            u = uniforms[t]
            if cum is None:
                a = min(int(u * k), k - 1)
                prob = pol = 1.0 / k
                value = 0.0
            else:
                a = 0
                while a < k - 1 and u >= cum[a]:
                    a += 1
                prob = probs_row[a]
                pol = pi_rows[idx][a]
                value = values[idx]

            res = env.step(a)
            nxt = res.next_state
            intrinsic = 0.0
            if novelty is not None:
                intrinsic = novelty.intrinsic_bonus(nxt)
                novelty.observe(nxt)
            out.append(Transition(pos, a, res.reward + intrinsic, nxt, res.done, prob, value, pol,
                                  res.reward, intrinsic, res.reached_goal, ent))
            if res.done:
                if stop_on_goal and res.reached_goal:
                    break
                pos = env.reset()
            else:
                pos = nxt
        if self._uses_running_normalizer() and rows:
            self._normalizer.update(np.array([r[3] for r in rows.values()]))
        return out

    def _uses_running_normalizer(self) -> bool:
        return self.balancer is not None and self._normalizer is not None

    def update(self, rollout: list[Transition]) -> UpdateReport:
        if not rollout:
            raise UsageError("update needs a non-empty rollout")
        cfg = self.config
        policy_loss = ab_loss = nov_loss = 0.0
        ents = [t.bonus_entropy for t in rollout if t.bonus_entropy is not None]
        mean_ent = float(np.mean(ents)) if ents else None
        if self.policy is not None:
            policy_loss = self._ppo_update(rollout)
            if self.balancer is not None:
                states = self.features[[self._state_index(t.state) for t in rollout]]
                actions = np.array([t.action for t in rollout])
                report = self.balancer.train(
                    states, actions, cfg.distill_lr, cfg.balancer_passes,
                    cfg.balancer_minibatch or None, self.shuffle_rng)
                ab_loss = report.mean_squared_error_before
            if self.novelty is not None:
                report = self.novelty.train(cfg.distill_lr)
                if report is not None:
                    nov_loss = report.mean_squared_error_before
        self.updates += 1
        return UpdateReport(policy_loss, ab_loss, nov_loss, policy_loss + ab_loss + nov_loss, mean_ent)

    def _ppo_update(self, rollout: list[Transition]) -> float:
        cfg = self.config
        idx = np.array([self._state_index(t.state) for t in rollout])
        states = self.features[idx]
        actions = np.array([t.action for t in rollout])
        rewards = np.array([t.reward for t in rollout])
        dones = np.array([t.done for t in rollout])
        values = np.array([t.value_estimate for t in rollout])
        if cfg.ratio_denominator == "behavior":
            old = np.array([t.behavior_prob for t in rollout])
        else:
            old = np.array([t.policy_prob for t in rollout])
        last = rollout[-1]
        bootstrap = 0.0 if last.done else self.policy_outputs(last.next_state)[1]
        adv = gae(rewards, values, dones, bootstrap, cfg.gamma, cfg.gae_lambda)
        returns = adv + values
        if cfg.normalize_advantages:
            std = adv.std()
            adv = (adv - adv.mean()) / std if std > 1e-8 else np.zeros_like(adv)

        n = len(rollout)
        size = min(cfg.minibatch_size, n)
        losses = []
        for _ in range(cfg.epochs_per_update):
            order = self.shuffle_rng.permutation(n)
            for lo in range(0, n, size):
                mb = order[lo:lo + size]
                out = self.policy.forward(states[mb], keep=True)
                loss, *_, grad_out, _ = ppo_objective(
                    out, actions[mb], old[mb], adv[mb], returns[mb],
                    cfg.clip_epsilon, cfg.value_coef, cfg.entropy_coef)
                grad = clip_by_norm(self.policy.backward(grad_out), cfg.max_grad_norm)
                self.optimizer.step(self.policy.params, grad, cfg.learning_rate)
                losses.append(loss)
        return float(np.mean(losses))


def make_agent(config: AgentConfig, env_config: EnvConfig | None = None) -> Agent:
    return Agent(config, env_config)
