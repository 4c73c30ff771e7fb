"""Improved PPO: clipped surrogate + value regression with manual gradients,
generalized advantage estimation, policy-feedback discounting, and
action-ensemble sample-count schedules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Adam, GaussianPolicy, Mlp


class InvalidProgress(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


VARIANTS = ("NONE", "AEL", "AEP", "AEB", "AEE", "AEW")


@dataclass(frozen=True)
class EnsembleSchedule:
    variant: str = "AEW"
    alpha: float = 7.0
    beta: float = 20.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    eta: float = 0.9                 # policy-feedback lower clip
    use_pf: bool = False
    pf_density_mode: str = "joint"   # or "geometric": per-dim geometric mean
    pf_in_gae: bool = False
    pf_product_to_horizon: bool = False  # product upper index T instead of i
    epochs: int = 10
    minibatch: int = 64
    steps_per_update: int = 2048
    total_steps: int = 200_000
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    hidden: tuple[int, ...] = (256, 256, 256)
    third_layer_tanh: bool = True
    action_limit: float = 3.14
    normalize_advantages: bool = True
    # "base": density of the averaged action under the unmodified policy
    # (numerator and denominator match, but averaged actions look inflated-
    # likely, which drags log_std down). "effective": exact density of the
    # i-sample mean, N(mu, sigma^2 / i)
    ensemble_density: str = "base"


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def ensemble_count(schedule: EnsembleSchedule, e_n: int, e_a: int,
                   rng: np.random.Generator) -> int:
    """Number of policy samples to average at training progress e_n/e_a.

    Stochastic variants draw from their distribution with progress-dependent
    parameters and clip the (rounded) draw into [1, cap]."""
    if not 0 <= e_n <= e_a:
        raise InvalidProgress(f"e_n={e_n} outside [0, {e_a}]")
    p = e_n / e_a if e_a > 0 else 0.0
    v = schedule.variant
    if v == "NONE":
        return 1
    if v == "AEL":
        return max(1, _round_half_up(1.0 + schedule.alpha * p))
    if v == "AEP":
        b = 1.0 + schedule.alpha * p
        draw = rng.poisson(b)
        return int(np.clip(draw, 1, int(np.ceil(b))))
    if v == "AEB":
        a = 1.0 + schedule.alpha * p
        b = 1.0 + schedule.beta * p
        # Beta support is [0, 1]; scale by a before clipping into [1, ceil(a)]
        draw = _round_half_up(a * rng.beta(a, b))
        return int(np.clip(draw, 1, int(np.ceil(a))))
    if v == "AEE":
        # rate 1/(1 + alpha p) read as mean 1 + alpha p
        mean = 1.0 + schedule.alpha * p
        draw = _round_half_up(rng.exponential(mean))
        return int(np.clip(draw, 1, int(np.ceil(mean))))
    # AEW
    k = 1.0 + schedule.alpha * p
    lam = 1.0 + schedule.beta * p
    draw = _round_half_up(lam * rng.weibull(k))
    return int(np.clip(draw, 1, int(np.ceil(lam))))


def ensemble_cap(schedule: EnsembleSchedule, e_n: int, e_a: int) -> int:
    p = e_n / e_a if e_a > 0 else 0.0
    v = schedule.variant
    if v == "NONE":
        return 1
    if v in ("AEL", "AEP", "AEB", "AEE"):
        return int(np.ceil(1.0 + schedule.alpha * p))
    return int(np.ceil(1.0 + schedule.beta * p))


def ensemble_action(policy: GaussianPolicy, s: np.ndarray, i: int,
                    rng: np.random.Generator,
                    effective_density: bool = False) -> tuple[np.ndarray, float]:
    """Average of i Gaussian samples with its log density.

    By default the density is the base policy's, evaluated at the averaged
    action; with effective_density it is the exact density of the i-sample
    mean, N(mu, sigma^2 / i). Ratios at update time use the same convention,
    so importance weights stay self-consistent either way."""
    if i < 1:
        raise ValueError("ensemble size must be >= 1")
    mu = policy.mean(s)
    noise = rng.normal(size=(i, mu.shape[-1]))
    a = mu + policy.std * np.mean(noise, axis=0)
    scale = 1.0 / np.sqrt(i) if effective_density else 1.0
    return a, float(policy.log_prob_value(mu, a, std_scale=scale))


def pf_discount(log_density: float, eta: float) -> float:
    """Adaptive clipped discount: clip(pi(s, a), eta, 1)."""
    if not 0.6 <= eta <= 0.99:
        raise ValueError("eta must lie in [0.6, 0.99]")
    return float(np.clip(np.exp(log_density), eta, 1.0))


def pf_return(rewards: np.ndarray, pf_gammas: np.ndarray,
              product_to_horizon: bool = False) -> np.ndarray:
    """R_t = sum_{i=t}^T r_i prod_{j=t}^i gamma_j (default), computed by the
    backward recursion R_t = gamma_t (r_t + R_{t+1}).

    With product_to_horizon the product always runs through the final step:
    R_t = sum_i r_i prod_{j=t}^T gamma_j."""
    rewards = np.asarray(rewards, dtype=float)
    pf_gammas = np.asarray(pf_gammas, dtype=float)
    if rewards.shape != pf_gammas.shape:
        raise LengthMismatch("rewards and pf_gammas must align")
    n = len(rewards)
    out = np.empty(n)
    if product_to_horizon:
        suffix_sum = np.cumsum(rewards[::-1])[::-1]
        tail_prod = 1.0
        for t in reversed(range(n)):
            tail_prod *= pf_gammas[t]
            out[t] = suffix_sum[t] * tail_prod
        return out
    acc = 0.0
    for t in reversed(range(n)):
        acc = pf_gammas[t] * (rewards[t] + acc)
        out[t] = acc
    return out


def compute_gae(rewards: np.ndarray, values: np.ndarray, bootstrap: float,
                gamma: float, lam: float) -> np.ndarray:
    """A_t = sum_k (gamma lam)^k delta_{t+k}, backward recursion."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise LengthMismatch("rewards and values must align")
    n = len(rewards)
    adv = np.empty(n)
    next_v = bootstrap
    acc = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + gamma * next_v - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_v = values[t]
    return adv


def policy_loss(new_logp: np.ndarray, old_logp: np.ndarray,
                advantages: np.ndarray, eps: float) -> tuple[float, np.ndarray, dict]:
    """Clipped surrogate loss -mean(min(r A, clip(r) A)) with its gradient
    w.r.t. the new log densities, plus ratio/clip diagnostics."""
    ratio = np.exp(new_logp - old_logp)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    per_sample = np.minimum(unclipped, clipped)
    loss = -float(np.mean(per_sample))
    active = unclipped <= clipped
    grad = np.where(active, unclipped, 0.0) * (-1.0 / len(ratio))
    diag = {
        "mean_ratio": float(np.mean(ratio)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    return loss, grad, diag


def value_loss(values: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE against the (policy-feedback) return targets, with gradient."""
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if values.shape != targets.shape:
        raise LengthMismatch("values and targets must align")
    diff = values - targets
    return float(np.mean(diff ** 2)), 2.0 * diff / len(values)


class RolloutBuffer:
    """Episode-aligned transition store for one update batch."""

    def __init__(self):
        self.states: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.log_densities: list[float] = []
        self.rewards: list[float] = []
        self.pf_gammas: list[float] = []
        self.std_scales: list[float] = []
        self.episode_starts: list[int] = [0]

    def __len__(self) -> int:
        return len(self.states)

    def add(self, s, a, logp, r, pf_gamma, std_scale: float = 1.0) -> None:
        self.states.append(np.asarray(s, dtype=float))
        self.actions.append(np.asarray(a, dtype=float))
        self.log_densities.append(float(logp))
        self.rewards.append(float(r))
        self.pf_gammas.append(float(pf_gamma))
        self.std_scales.append(float(std_scale))

    def end_episode(self) -> None:
        if self.episode_starts[-1] != len(self.states):
            self.episode_starts.append(len(self.states))

    def episode_slices(self) -> list[slice]:
        bounds = self.episode_starts
        if bounds[-1] != len(self.states):
            bounds = [*bounds, len(self.states)]
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def clear(self) -> None:
        self.states.clear()
        self.actions.clear()
        self.log_densities.clear()
        self.rewards.clear()
        self.pf_gammas.clear()
        self.std_scales.clear()
        self.episode_starts = [0]


def ppo_update(buffer: RolloutBuffer, policy: GaussianPolicy, value_net: Mlp,
               actor_opt: Adam, critic_opt: Adam, cfg: PpoConfig,
               rng: np.random.Generator) -> dict:
    """k epochs of shuffled minibatch steps on the clipped surrogate and the
    value regression. Advantages use constant-gamma GAE; value targets are
    the policy-feedback returns (plain discounted returns when PF is off)."""
    states = np.array(buffer.states)
    actions = np.array(buffer.actions)
    old_logp = np.array(buffer.log_densities)
    rewards = np.array(buffer.rewards)
    pf_gammas = np.array(buffer.pf_gammas)
    std_scales = np.array(buffer.std_scales)

    values = value_net.forward(states)[:, 0]
    advantages = np.empty(len(states))
    targets = np.empty(len(states))
    for sl in buffer.episode_slices():
        if cfg.pf_in_gae:
            adv = _gae_variable_gamma(rewards[sl], values[sl], pf_gammas[sl],
                                      cfg.gae_lambda)
        else:
            adv = compute_gae(rewards[sl], values[sl], 0.0, cfg.gamma,
                              cfg.gae_lambda)
        advantages[sl] = adv
        targets[sl] = pf_return(rewards[sl], pf_gammas[sl],
                                cfg.pf_product_to_horizon)

    if cfg.normalize_advantages:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    n = len(states)
    diags = {"policy_loss": 0.0, "value_loss": 0.0, "mean_ratio": 0.0,
             "clip_fraction": 0.0}
    n_batches = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            sb, ab, cb = states[idx], actions[idx], std_scales[idx]
            # actor step
            cache: list = []
            mu = policy.mean(sb, cache)
            new_logp = policy.log_prob_value(mu, ab, std_scale=cb)
            p_loss, d_logp, diag = policy_loss(new_logp, old_logp[idx],
                                               advantages[idx], cfg.clip_eps)
            dmu_logp, dls_logp = policy.log_prob_grads(mu, ab, std_scale=cb)
            dmu = d_logp[:, None] * dmu_logp
            d_log_std = np.sum(d_logp[:, None] * dls_logp, axis=0)
            grads, _ = policy.mean_net.backward(cache, dmu)
            new_params = actor_opt.step(policy.parameters(), [*grads, d_log_std])
            policy.set_parameters(new_params)
            # critic step
            cache = []
            vb = value_net.forward(sb, cache)[:, 0]
            v_loss, dv = value_loss(vb, targets[idx])
            vgrads, _ = value_net.backward(cache, dv[:, None])
            value_net.set_parameters(critic_opt.step(value_net.parameters(), vgrads))

            diags["policy_loss"] += p_loss
            diags["value_loss"] += v_loss
            diags["mean_ratio"] += diag["mean_ratio"]
            diags["clip_fraction"] += diag["clip_fraction"]
            n_batches += 1
    for k in diags:
        diags[k] /= max(n_batches, 1)
    return diags


def _gae_variable_gamma(rewards, values, gammas, lam) -> np.ndarray:
    n = len(rewards)
    adv = np.empty(n)
    next_v = 0.0
    acc = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + gammas[t] * next_v - values[t]
        acc = delta + gammas[t] * lam * acc
        adv[t] = acc
        next_v = values[t]
    return adv


def transition_pf_gamma(logp: float, cfg: PpoConfig, action_dim: int = 6) -> float:
    """Per-transition discount: clipped policy density under PF, constant
    gamma otherwise. The geometric mode uses the per-dimension geometric-mean
    density exp(logp / action_dim) instead of the joint density."""
    if not cfg.use_pf:
        return cfg.gamma
    if cfg.pf_density_mode == "geometric":
        return pf_discount(logp / action_dim, cfg.eta)
    return pf_discount(logp, cfg.eta)


def save_checkpoint(path, policy: GaussianPolicy, value_net: Mlp,
                    cfg: PpoConfig) -> None:
    from .nets import save_arrays
    arrays = [np.array([len(policy.mean_net.parameters())], dtype=float),
              *policy.parameters(), *value_net.parameters()]
    hyper = {"state_dim": policy.mean_net.in_dim,
             "action_dim": policy.mean_net.out_dim,
             "hidden": list(cfg.hidden),
             "third_layer_tanh": cfg.third_layer_tanh}
    save_arrays(path, arrays, hyper)


def load_checkpoint(path) -> tuple[GaussianPolicy, Mlp]:
    import json

    from .nets import load_arrays
    arrays = load_arrays(path)
    with open(str(path) + ".json") as f:
        hyper = json.load(f)
    n_mlp = int(arrays[0][0])
    policy = GaussianPolicy(Mlp(hyper["state_dim"], hyper["action_dim"],
                                hidden=tuple(hyper["hidden"]),
                                third_layer_tanh=hyper["third_layer_tanh"]))
    policy.set_parameters(arrays[1:n_mlp + 2])
    value_net = Mlp(hyper["state_dim"], 1, hidden=tuple(hyper["hidden"]),
                    third_layer_tanh=hyper["third_layer_tanh"])
    value_net.set_parameters(arrays[n_mlp + 2:])
    return policy, value_net


@dataclass
class TrainResult:
    episode_returns: np.ndarray
    policy: GaussianPolicy
    value_net: Mlp
    diagnostics: list[dict]


def train(env_factory, cfg: PpoConfig, schedule: EnsembleSchedule,
          seed: int, progress_callback=None) -> TrainResult:
    """Algorithm-2-style driver: collect whole episodes, update every
    steps_per_update transitions, deterministically seeded."""
    env = env_factory(seed)
    rng = np.random.default_rng(seed)
    policy = GaussianPolicy(Mlp(env.state_dim, env.action_dim, hidden=cfg.hidden,
                                out_gain=0.01,
                                third_layer_tanh=cfg.third_layer_tanh, rng=rng))
    value_net = Mlp(env.state_dim, 1, hidden=cfg.hidden, out_gain=1.0,
                    third_layer_tanh=cfg.third_layer_tanh, rng=rng)
    actor_opt = Adam(policy.parameters(), lr=cfg.actor_lr)
    critic_opt = Adam(value_net.parameters(), lr=cfg.critic_lr)
    buffer = RolloutBuffer()
    diagnostics: list[dict] = []
    episode_returns: list[float] = []

    max_steps = env.episode.max_steps
    total_episodes = max(cfg.total_steps // max_steps, 1)
    steps_done = 0
    for e_n in range(total_episodes):
        s = env.reset()
        ep_ret = 0.0
        done = False
        while not done:
            i = ensemble_count(schedule, e_n, total_episodes, rng)
            effective = cfg.ensemble_density == "effective"
            a, logp = ensemble_action(policy, s, i, rng,
                                      effective_density=effective)
            s_next, r, done, _ = env.step(np.clip(a, -cfg.action_limit,
                                                  cfg.action_limit))
            buffer.add(s, a, logp, r,
                       transition_pf_gamma(logp, cfg, env.action_dim),
                       std_scale=1.0 / np.sqrt(i) if effective else 1.0)
            s = s_next
            ep_ret += r
            steps_done += 1
        buffer.end_episode()
        episode_returns.append(ep_ret)
        if progress_callback is not None:
            progress_callback(e_n, ep_ret)
        if len(buffer) >= cfg.steps_per_update:
            diagnostics.append(ppo_update(buffer, policy, value_net, actor_opt,
                                          critic_opt, cfg, rng))
            buffer.clear()
    return TrainResult(episode_returns=np.array(episode_returns), policy=policy,
                       value_net=value_net, diagnostics=diagnostics)
