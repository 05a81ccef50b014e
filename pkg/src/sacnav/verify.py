"""Finite-difference gradient checks for every op and for the three SAC losses.

Runs in 64-bit on a tiny network (8x8 observation, widths <= 16).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import torch

from . import autodiff as ad
from .sac import NetConfig, SacAgent, SacConfig

TOLERANCE = 1e-4


def _weighted(out: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    # random weights make the scalar loss sensitive to every output entry
    return (out * w).sum()


def _op_cases(rng: np.random.Generator) -> dict:
    def t(*shape, lo=-1.0, hi=1.0):
        return ad.tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    def away_from_zero(*shape):
        a = rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
        return ad.tensor(a, requires_grad=True)

    cases = {}
    x, w, b = t(2, 2, 6, 6), t(3, 2, 3, 3), t(3)
    r = ad.tensor(rng.normal(size=(2, 3, 4, 4)))
    cases["conv2d"] = (lambda: _weighted(ad.conv2d(x, w, b), r), [x, w, b])
    x2, w2, b2 = t(2, 2, 7, 7), t(3, 2, 3, 3), t(3)
    r2 = ad.tensor(rng.normal(size=(2, 3, 3, 3)))
    cases["conv2d_stride2"] = (lambda: _weighted(ad.conv2d(x2, w2, b2, stride=2), r2), [x2, w2, b2])
    xl, wl, bl = t(4, 5), t(3, 5), t(3)
    rl = ad.tensor(rng.normal(size=(4, 3)))
    cases["linear"] = (lambda: _weighted(ad.linear(xl, wl, bl), rl), [xl, wl, bl])
    xn, sn, hn = t(4, 6), t(6), t(6)
    rn = ad.tensor(rng.normal(size=(4, 6)))
    cases["layer_norm"] = (lambda: _weighted(ad.layer_norm(xn, sn, hn), rn), [xn, sn, hn])
    for name, fn, make in (("relu", ad.relu, away_from_zero), ("tanh", ad.tanh, t), ("exp", ad.exp, t),
                           ("log", ad.log, lambda *s: t(*s, lo=0.2, hi=2.0))):
        xe = make(3, 4)
        re_ = ad.tensor(rng.normal(size=(3, 4)))
        cases[name] = (lambda fn=fn, xe=xe, re_=re_: _weighted(fn(xe), re_), [xe])
    xs = t(3, 4)
    rs = ad.tensor(rng.normal(size=4))
    cases["sum"] = (lambda: _weighted(ad.sum(xs, 0), rs), [xs])
    xm = t(3, 4)
    cases["mean"] = (lambda: _weighted(ad.mean(xm, 0), rs), [xm])
    a = t(3, 4)
    b_min = ad.tensor(a.detach().numpy() + rng.uniform(0.05, 0.5, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)),
                      requires_grad=True)
    rm = ad.tensor(rng.normal(size=(3, 4)))
    cases["minimum"] = (lambda: _weighted(ad.minimum(a, b_min), rm), [a, b_min])
    mu, ls, eps = t(5, 2), t(5, 2), ad.tensor(rng.normal(size=(5, 2)))
    rr = ad.tensor(rng.normal(size=(5, 2)))
    cases["reparam_gaussian_sample"] = (lambda: _weighted(ad.reparam_gaussian_sample(mu, ls, eps), rr), [mu, ls])
    return cases


def _loss_cases(rng: np.random.Generator, seed: int) -> dict:
    agent = SacAgent((3, 8, 8), SacConfig(), NetConfig.tiny(), seed=seed)
    n = 6
    obs = ad.tensor(rng.uniform(0, 1, (n, 3, 8, 8)))
    action = ad.tensor(rng.uniform(-0.9, 0.9, (n, 2)))
    target = ad.tensor(rng.normal(size=n))
    noise = ad.tensor(rng.normal(size=(n, 2)))
    with torch.no_grad():
        z = agent.encoder(obs)
    critic_params = list(agent.encoder.parameters()) + list(agent.critic.parameters())

    def j_pi():
        return agent.actor_loss(z, noise)[0]

    def j_alpha():
        with torch.no_grad():
            _, logp = agent.sample_pi(z, noise)
        return agent.alpha_loss(logp)

    return {
        "J_Q": (lambda: agent.critic_loss(obs, action, target), critic_params),
        "J_pi": (j_pi, list(agent.actor.parameters())),
        "J_alpha": (j_alpha, [agent.log_alpha]),
    }


def gradcheck_suite(seed: int = 0, max_entries: int = 24) -> dict:
    """Relative error per check name (ops first, then J_Q, J_pi, J_alpha)."""
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    out = {}
    with ad.precision(64):
        cases = _op_cases(rng)
        cases.update(_loss_cases(rng, seed))
        for name, (f, params) in cases.items():
            out[name] = ad.gradcheck(f, params, eps=1e-6, max_entries=max_entries, seed=seed)
    return out


def report(errors: dict, tol: float = TOLERANCE) -> tuple:
    """(all passed, printable lines)."""
    lines = [f"{'PASS' if e <= tol else 'FAIL'} {name:<26s} rel_err={e:.2e}" for name, e in errors.items()]
    ok = all(math.isfinite(e) and e <= tol for e in errors.values())
    return ok, lines
