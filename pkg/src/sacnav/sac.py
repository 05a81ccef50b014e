"""Soft Actor-Critic from image observations with random-shift augmentation.

``mode="rad"`` applies one random shift per forward pass; ``mode="drq"``
additionally averages the soft value target over ``K`` independently
shifted copies of the next observation. The convolutional encoder is shared
by actor and critics but trained by the critic loss only.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import autodiff as ad
from .env import COLLISION, SUCCESS, TIMEOUT, EnvConfig, NavEnv, run_episode
from .gridworld import Action, ActionBounds

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0
ATANH_EPS = 1e-6  # actions at the exact bound are pulled this far inside


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class NetConfig:
    conv_layers: int = 4
    filters: int = 32
    first_stride: int = 1
    latent: int = 50
    hidden: int = 1024
    hidden_layers: int = 3  # fully connected layers = hidden_layers + 1

    @classmethod
    def paper(cls) -> "NetConfig":
        return cls()

    @classmethod
    def desk(cls) -> "NetConfig":
        return cls(conv_layers=2, filters=16, first_stride=2, latent=32, hidden=256, hidden_layers=2)

    @classmethod
    def tiny(cls) -> "NetConfig":
        return cls(conv_layers=2, filters=4, first_stride=1, latent=8, hidden=16, hidden_layers=2)


@dataclass(frozen=True)
class SacConfig:
    episodes: int = 10_000
    explore_episodes: int = 10
    batch_size: int = 128
    capacity: int = 1_000_000
    gamma: float = 0.99
    lr: float = 1e-3
    tau: float = 0.01
    target_update_freq: int = 2
    actor_update_freq: int = 2
    mode: str = "drq"  # drq | rad
    drq_k: int = 2
    shift_px: int = 4
    target_entropy: float = -2.0
    init_temperature: float = 0.1
    checkpoint_every: int = 0  # episodes; 0 = only at the end

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.drq_k < 1:
            raise ValueError("K must be >= 1")
        if self.mode not in ("drq", "rad"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def k(self) -> int:
        return self.drq_k if self.mode == "drq" else 1


# --------------------------------------------------------------------------
# networks


def mlp(n_in: int, hidden: int, hidden_layers: int, n_out: int) -> nn.Sequential:
    layers, d = [], n_in
    for _ in range(hidden_layers):
        layers += [ad.Linear(d, hidden), nn.ReLU()]
        d = hidden
    layers.append(ad.Linear(d, n_out))
    return nn.Sequential(*layers)


class Encoder(nn.Module):
    def __init__(self, obs_shape, cfg: NetConfig):
        super().__init__()
        c, h, w = obs_shape
        convs = []
        for i in range(cfg.conv_layers):
            stride = cfg.first_stride if i == 0 else 1
            convs.append(ad.Conv2d(c if i == 0 else cfg.filters, cfg.filters, 3, stride))
            h, w = (h - 3) // stride + 1, (w - 3) // stride + 1
        self.convs = nn.ModuleList(convs)
        self.flat_dim = cfg.filters * h * w
        self.fc = ad.Linear(self.flat_dim, cfg.latent)
        self.norm = ad.LayerNorm(cfg.latent)

    def forward(self, obs):
        x = obs
        for conv in self.convs:
            x = ad.relu(conv(x))
        x = x.reshape(x.shape[0], -1)
        return ad.tanh(self.norm(self.fc(x)))


class Actor(nn.Module):
    def __init__(self, cfg: NetConfig, act_dim: int = 2):
        super().__init__()
        self.net = mlp(cfg.latent, cfg.hidden, cfg.hidden_layers, 2 * act_dim)

    def forward(self, z):
        mu, log_std = self.net(z).chunk(2, dim=-1)
        return mu, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)


class Critic(nn.Module):
    """Twin Q heads on (latent, squashed action)."""

    def __init__(self, cfg: NetConfig, act_dim: int = 2):
        super().__init__()
        self.q1 = mlp(cfg.latent + act_dim, cfg.hidden, cfg.hidden_layers, 1)
        self.q2 = mlp(cfg.latent + act_dim, cfg.hidden, cfg.hidden_layers, 1)

    def forward(self, z, a):
        za = torch.cat([z, a], dim=-1)
        return self.q1(za).squeeze(-1), self.q2(za).squeeze(-1)


# --------------------------------------------------------------------------
# squashed Gaussian


def log1m_tanh2(u: torch.Tensor) -> torch.Tensor:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))


def squash_log_prob(u: torch.Tensor, mu: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """Log density of tanh(u) for u ~ N(mu, std^2), summed over the action axis."""
    z = (u - mu) / torch.exp(log_std)
    gauss = -0.5 * z ** 2 - log_std - 0.5 * math.log(2 * math.pi)
    return (gauss - log1m_tanh2(u)).sum(-1)


def log_prob(mu, log_std, a, bounds: Optional[ActionBounds] = None) -> torch.Tensor:
    """Log density of the action ``a`` under the squashed Gaussian policy.

    Without ``bounds``, ``a`` lives in (-1, 1)^2; with ``bounds`` it is in
    environment units and the affine rescaling's log-Jacobian is subtracted.
    Entries at (or beyond) the box edge are pulled ``ATANH_EPS`` inside.
    """
    mu, log_std, a = (torch.as_tensor(x, dtype=ad.default_dtype()) for x in (mu, log_std, a))
    half = None
    if bounds is not None:
        low = torch.as_tensor(bounds.low, dtype=a.dtype)
        high = torch.as_tensor(bounds.high, dtype=a.dtype)
        half = (high - low) / 2.0
        a = (a - low) / half - 1.0
    a = a.clamp(-1.0 + ATANH_EPS, 1.0 - ATANH_EPS)
    lp = squash_log_prob(torch.atanh(a), mu, log_std)
    if half is not None:
        lp = lp - torch.log(half).sum()
    return lp


def to_env_action(a_norm, bounds: ActionBounds) -> Action:
    a = np.asarray(a_norm, dtype=float).reshape(-1)
    low, high = bounds.low, bounds.high
    v, w = low + (a + 1.0) * 0.5 * (high - low)
    return Action(float(min(max(v, bounds.v_min), bounds.v_max)),
                  float(min(max(w, -bounds.w_max), bounds.w_max)))


# --------------------------------------------------------------------------
# augmentation


def shift_image(obs: torch.Tensor, dx: int, dy: int, radius: int) -> torch.Tensor:
    """Translate images by (dx cols, dy rows) with edge replication; |dx|, |dy| <= radius."""
    if radius == 0:
        return obs
    single = obs.dim() == 3
    x = obs[None] if single else obs
    h, w = x.shape[-2:]
    padded = F.pad(x, (radius,) * 4, mode="replicate")
    oy, ox = radius - dy, radius - dx
    out = padded[..., oy:oy + h, ox:ox + w]
    return out[0] if single else out


def rad_shift(obs: torch.Tensor, radius: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Independent uniform random shift in [-radius, radius]^2 for each image of a batch."""
    if radius == 0:
        return obs
    single = obs.dim() == 3
    x = obs[None] if single else obs
    h, w = x.shape[-2:]
    padded = F.pad(x, (radius,) * 4, mode="replicate")
    offs = torch.randint(0, 2 * radius + 1, (x.shape[0], 2), generator=generator).tolist()
    out = torch.stack([padded[i, :, r:r + h, c:c + w] for i, (r, c) in enumerate(offs)])
    return out[0] if single else out


# --------------------------------------------------------------------------
# replay buffer


class ReplayBuffer:
    """FIFO ring of transitions.

    Observations are stored as uint8 ``round(x * 254)``, exact for the
    costmap channels (costs are integers over 254) and within 1/508 for the
    yaw plane of the ``channel`` variant.
    """

    SCALE = 254.0

    def __init__(self, capacity: int, obs_shape, act_dim: int = 2, seed: int = 0):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity,) + tuple(obs_shape), np.uint8)
        self.next_obs = np.zeros((self.capacity,) + tuple(obs_shape), np.uint8)
        self.actions = np.zeros((self.capacity, act_dim), np.float32)
        self.rewards = np.zeros(self.capacity, np.float32)
        self.dones = np.zeros(self.capacity, np.float32)
        self.cursor = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward, next_obs, done) -> None:
        i = self.cursor
        self.obs[i] = np.round(np.asarray(obs) * self.SCALE)
        self.next_obs[i] = np.round(np.asarray(next_obs) * self.SCALE)
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self) -> np.ndarray:
        """Storage indices oldest first."""
        start = self.cursor if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def sample(self, batch_size: int, dtype=torch.float32) -> dict:
        idx = self.rng.integers(0, self.size, batch_size)
        return {
            "obs": torch.as_tensor(self.obs[idx], dtype=dtype) / self.SCALE,
            "action": torch.as_tensor(self.actions[idx], dtype=dtype),
            "reward": torch.as_tensor(self.rewards[idx], dtype=dtype),
            "next_obs": torch.as_tensor(self.next_obs[idx], dtype=dtype) / self.SCALE,
            "done": torch.as_tensor(self.dones[idx], dtype=dtype),
        }


# --------------------------------------------------------------------------
# agent


class SacAgent:
    def __init__(self, obs_shape, cfg: SacConfig = SacConfig(), net: NetConfig = NetConfig.desk(),
                 bounds: ActionBounds = ActionBounds(), seed: int = 0):
        self.obs_shape = tuple(obs_shape)
        self.cfg = cfg
        self.net = net
        self.bounds = bounds
        torch.manual_seed(seed)
        self.gen = torch.Generator().manual_seed(seed)
        self.encoder = Encoder(obs_shape, net)
        self.actor = Actor(net)
        self.critic = Critic(net)
        self.encoder_target = Encoder(obs_shape, net)
        self.critic_target = Critic(net)
        self.encoder_target.load_state_dict(self.encoder.state_dict())
        self.critic_target.load_state_dict(self.critic.state_dict())
        for p in list(self.encoder_target.parameters()) + list(self.critic_target.parameters()):
            p.requires_grad_(False)
        self.log_alpha = nn.Parameter(torch.tensor(math.log(cfg.init_temperature), dtype=ad.default_dtype()))
        self.critic_params = list(self.encoder.parameters()) + list(self.critic.parameters())
        self.actor_params = list(self.actor.parameters())
        self.critic_opt = ad.Adam(self.critic_params, lr=cfg.lr)
        self.actor_opt = ad.Adam(self.actor_params, lr=cfg.lr)
        self.alpha_opt = ad.Adam([self.log_alpha], lr=cfg.lr)
        self.updates = 0

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    # -- acting
    def policy_dist(self, obs: torch.Tensor, detach_encoder: bool = True):
        z = self.encoder(obs)
        if detach_encoder:
            z = ad.detach(z)
        return self.actor(z)

    @torch.no_grad()
    def act_normalized(self, obs: np.ndarray, deterministic: bool = True) -> np.ndarray:
        x = torch.as_tensor(obs, dtype=ad.default_dtype())[None]
        mu, log_std = self.policy_dist(x)
        u = mu if deterministic else mu + log_std.exp() * torch.randn(mu.shape, generator=self.gen)
        return torch.tanh(u)[0].cpu().numpy()

    def act(self, obs: np.ndarray, mode: str = "deterministic") -> Action:
        if mode not in ("deterministic", "sample"):
            raise ValueError(f"unknown mode {mode!r}")
        return to_env_action(self.act_normalized(obs, mode == "deterministic"), self.bounds)

    def sample_pi(self, z: torch.Tensor, noise: torch.Tensor) -> tuple:
        """Reparameterized squashed action and its log-probability."""
        mu, log_std = self.actor(z)
        u = ad.reparam_gaussian_sample(mu, log_std, noise)
        return torch.tanh(u), squash_log_prob(u, mu, log_std)

    def noise(self, n: int) -> torch.Tensor:
        return torch.randn((n, 2), generator=self.gen, dtype=ad.default_dtype())

    def augment(self, obs: torch.Tensor) -> torch.Tensor:
        return rad_shift(obs, self.cfg.shift_px, self.gen)

    # -- losses (pure given their random inputs)
    @torch.no_grad()
    def soft_target(self, reward, done, next_augs, noises) -> torch.Tensor:
        """Mean over augmented next states of r + gamma (1 - d) [min target Q - alpha log pi]."""
        targets = []
        for nxt, eps in zip(next_augs, noises):
            a, logp = self.sample_pi(self.encoder(nxt), eps)
            zt = self.encoder_target(nxt)
            q1, q2 = self.critic_target(zt, a)
            v = torch.minimum(q1, q2) - self.alpha * logp
            targets.append(reward + self.cfg.gamma * (1.0 - done) * v)
        return torch.stack(targets).mean(0)

    def critic_loss(self, obs_aug, action, target) -> torch.Tensor:
        return self._q_loss(self.encoder(obs_aug), action, target)

    def _q_loss(self, z, action, target) -> torch.Tensor:
        q1, q2 = self.critic(z, action)
        return 0.5 * (((q1 - target) ** 2).mean() + ((q2 - target) ** 2).mean())

    def actor_loss(self, z, noise) -> tuple:
        """Returns (loss, log pi); ``z`` should already be detached."""
        a, logp = self.sample_pi(z, noise)
        q1, q2 = self.critic(z, a)
        return (self.alpha.detach() * logp - torch.minimum(q1, q2)).mean(), logp

    def alpha_loss(self, logp) -> torch.Tensor:
        return (-self.alpha * (logp.detach() + self.cfg.target_entropy)).mean()

    # -- update steps
    def critic_update(self, batch: dict) -> tuple:
        """One critic step; returns (loss, detached latent of the augmented observations)."""
        obs_aug = self.augment(batch["obs"])
        n = obs_aug.shape[0]
        next_augs = [self.augment(batch["next_obs"]) for _ in range(self.cfg.k)]
        noises = [self.noise(n) for _ in range(self.cfg.k)]
        target = self.soft_target(batch["reward"], batch["done"], next_augs, noises)
        z = self.encoder(obs_aug)
        loss = self._q_loss(z, batch["action"], target)
        self.critic_opt.zero_grad()
        loss.backward()
        self.critic_opt.step()
        return loss.item(), ad.detach(z)

    def actor_update(self, z: torch.Tensor) -> tuple:
        """Actor step then temperature step on detached latents; returns (actor loss, alpha loss)."""
        loss, logp = self.actor_loss(z, self.noise(z.shape[0]))
        grads = torch.autograd.grad(loss, self.actor_params)
        ad.adam_step(self.actor_params, grads, self.actor_opt.state)
        aloss = self.alpha_loss(logp)
        self.alpha_opt.zero_grad()
        aloss.backward()
        self.alpha_opt.step()
        return loss.item(), aloss.item()

    @torch.no_grad()
    def target_sync(self, tau: Optional[float] = None) -> None:
        tau = self.cfg.tau if tau is None else tau
        if not 0 < tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        pairs = list(zip(self.encoder_target.parameters(), self.encoder.parameters()))
        pairs += list(zip(self.critic_target.parameters(), self.critic.parameters()))
        for tgt, src in pairs:
            tgt.mul_(1.0 - tau).add_(src, alpha=tau)

    def update(self, batch: dict) -> dict:
        self.updates += 1
        out = {}
        out["critic_loss"], z = self.critic_update(batch)
        if self.updates % self.cfg.actor_update_freq == 0:
            out["actor_loss"], out["alpha_loss"] = self.actor_update(z)
        if self.updates % self.cfg.target_update_freq == 0:
            self.target_sync()
        if not all(math.isfinite(v) for v in out.values()) or not math.isfinite(self.log_alpha.item()):
            raise TrainingDiverged(f"non-finite losses at update {self.updates}: {out}")
        return out

    # -- persistence
    def tensors(self) -> dict:
        out = {}
        for prefix, mod in (("encoder", self.encoder), ("actor", self.actor), ("critic", self.critic),
                            ("encoder_target", self.encoder_target), ("critic_target", self.critic_target)):
            for k, v in mod.state_dict().items():
                out[f"{prefix}.{k}"] = v
        out["log_alpha"] = self.log_alpha.detach()
        return out

    def load_tensors(self, tensors: dict) -> None:
        for prefix, mod in (("encoder", self.encoder), ("actor", self.actor), ("critic", self.critic),
                            ("encoder_target", self.encoder_target), ("critic_target", self.critic_target)):
            sd = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
            mod.load_state_dict(sd)
        with torch.no_grad():
            self.log_alpha.copy_(tensors["log_alpha"].reshape(()))

    def save(self, stem, extra: Optional[dict] = None) -> None:
        meta = {"obs_shape": list(self.obs_shape), "sac": asdict(self.cfg), "net": asdict(self.net),
                "bounds": asdict(self.bounds)}
        meta.update(extra or {})
        ad.save_checkpoint(self.tensors(), stem, meta)

    @classmethod
    def load(cls, stem, seed: int = 0) -> "SacAgent":
        tensors, meta = ad.load_checkpoint(stem)
        agent = cls(meta["obs_shape"], SacConfig(**meta["sac"]), NetConfig(**meta["net"]),
                    ActionBounds(**meta["bounds"]), seed)
        agent.load_tensors(tensors)
        agent.meta = meta
        return agent


class SacPolicy:
    """Local-planner adapter: renders the context's observation and acts."""

    def __init__(self, agent: SacAgent, mode: str = "deterministic"):
        self.agent = agent
        self.mode = mode

    def __call__(self, ctx) -> Action:
        return self.agent.act(ctx.observation(), self.mode)


# --------------------------------------------------------------------------
# training and evaluation

LOG_FIELDS = ["episode", "steps", "return", "outcome", "critic_loss", "actor_loss", "alpha_loss", "alpha"]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@dataclass
class TrainResult:
    agent: SacAgent
    rows: list = field(default_factory=list)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in LOG_FIELDS])
        return buf.getvalue()

    def success_rate(self, last: int = 100) -> float:
        tail = self.rows[-last:]
        return sum(r["outcome"] == SUCCESS for r in tail) / max(len(tail), 1)


def train(make_scenario: Callable[[int], object], env_cfg: EnvConfig, cfg: SacConfig,
          net: NetConfig = NetConfig.desk(), seed: int = 0, outdir=None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train a SAC agent on ``make_scenario(episode_index)`` worlds.

    The first ``explore_episodes`` act uniformly at random; afterwards one
    gradient update follows every environment step.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    obs_shape = env_cfg.obs.shape
    obs_meta = asdict(env_cfg.obs)
    agent = SacAgent(obs_shape, cfg, net, env_cfg.bounds, seed)
    buf = ReplayBuffer(min(cfg.capacity, 10_000_000), obs_shape, seed=seed + 1)
    result = TrainResult(agent)
    outdir = Path(outdir) if outdir is not None else None
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
    for ep in range(cfg.episodes):
        env = NavEnv(make_scenario(ep), env_cfg)
        ctx = env.reset()
        obs = ctx.observation()
        ep_ret, losses = 0.0, {"critic_loss": [], "actor_loss": [], "alpha_loss": []}
        while True:
            if ep < cfg.explore_episodes:
                a = rng.uniform(-1.0, 1.0, 2)
            else:
                a = agent.act_normalized(obs, deterministic=False)
            ctx, r, done, status = env.step(to_env_action(a, env_cfg.bounds))
            nxt = ctx.observation()
            buf.add(obs, a, r, nxt, status in (SUCCESS, COLLISION))
            obs = nxt
            ep_ret += r
            if ep >= cfg.explore_episodes and len(buf) >= cfg.batch_size:
                for k, v in agent.update(buf.sample(cfg.batch_size, ad.default_dtype())).items():
                    losses[k].append(v)
            if done:
                break
        row = {"episode": ep, "steps": env.steps, "return": ep_ret, "outcome": status,
               "alpha": float(agent.log_alpha.detach().exp())}
        for k, v in losses.items():
            row[k] = float(np.mean(v)) if v else float("nan")
        result.rows.append(row)
        if progress is not None:
            progress(row)
        if outdir is not None and cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
            agent.save(outdir / f"checkpoint_ep{ep + 1}", {"seed": seed, "episode": ep + 1, "obs": obs_meta})
    if outdir is not None:
        agent.save(outdir / "checkpoint", {"seed": seed, "episode": cfg.episodes, "obs": obs_meta})
        (outdir / "train_log.csv").write_text(result.csv_text())
    return result


@dataclass
class EvalResult:
    success_rate: float
    collision_rate: float
    timeout_rate: float
    outcomes: list

    @classmethod
    def from_outcomes(cls, outcomes: list) -> "EvalResult":
        n = max(len(outcomes), 1)
        return cls(sum(o == SUCCESS for o in outcomes) / n, sum(o == COLLISION for o in outcomes) / n,
                   sum(o not in (SUCCESS, COLLISION) for o in outcomes) / n, list(outcomes))


def evaluate(agent: SacAgent, scenarios, env_cfg: EnvConfig, episodes: Optional[int] = None) -> EvalResult:
    """Deterministic-mode rollouts over ``scenarios`` (a list or a callable index -> spec)."""
    if callable(scenarios):
        if episodes is None:
            raise ValueError("episodes required with a scenario generator")
        specs = (scenarios(i) for i in range(episodes))
    else:
        specs = list(scenarios)[:episodes] if episodes is not None else list(scenarios)
    policy = SacPolicy(agent)
    outcomes = [run_episode(s, policy, env_cfg, record=False).status for s in specs]
    return EvalResult.from_outcomes(outcomes)
