"""YAML run configuration with a strict schema.

Every physical quantity carries its unit in the key name. Unknown keys and
wrongly typed values are rejected with a ``ConfigError`` naming the key.

Schema (all sections and keys optional; defaults shown by ``default_yaml()``)::

    seed: int
    outdir: str
    observation: kind (polar|rotation|arrow|channel), width_px, height_px,
                 range_m, marker_px, frame_stack
    network:     preset (desk|paper|tiny), conv_layers, filters, first_stride,
                 latent, hidden, hidden_layers      (explicit keys override the preset)
    sac:         episodes, explore_episodes, batch_size, capacity, gamma, lr,
                 tau, target_update_freq, actor_update_freq, mode (drq|rad),
                 drq_k, shift_px, target_entropy, init_temperature, checkpoint_every
    env:         dt_s, footprint_m, v_min_mps, v_max_mps, w_max_radps,
                 front_range_m, waypoint_spacing_m, waypoint_clearance_m
    reward:      r_max, sigma_m, half_width_m, goal_tolerance_m,
                 distance_weight, bearing_weight
    inflation:   cost_scaling_per_m, inflation_radius_m, inscribed_radius_m
    evaluate:    episodes, worlds (held_out|training)
    benchmark:   planners [sac|dwa|sp], scenarios [C1..C4], seeds [int], checkpoint
    dwa:         acc_lin_mps2, acc_ang_radps2, n_v, n_w, horizon_s, w_path,
                 w_clear, w_speed, clearance_cap_m
    sp:          lookahead_m, k_w_per_s, cost_weight
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .costmap import InflationParams, ObservationConfig
from .env import EnvConfig
from .gridworld import ActionBounds
from .nav_classic import DwaConfig, SpConfig
from .reward import RewardParams
from .sac import NetConfig, SacConfig


class ConfigError(ValueError):
    pass


NUM = (int, float)

# section -> key -> (accepted types, (target object, target field))
SCHEMA = {
    "observation": {
        "kind": (str, "kind"), "width_px": (int, "w"), "height_px": (int, "h"), "range_m": (NUM, "r_max_m"),
        "marker_px": (int, "marker_px"), "frame_stack": (int, "frame_stack"),
    },
    "network": {
        "preset": (str, None), "conv_layers": (int, "conv_layers"), "filters": (int, "filters"),
        "first_stride": (int, "first_stride"), "latent": (int, "latent"), "hidden": (int, "hidden"),
        "hidden_layers": (int, "hidden_layers"),
    },
    "sac": {k: (t, k) for k, t in {
        "episodes": int, "explore_episodes": int, "batch_size": int, "capacity": int, "gamma": NUM,
        "lr": NUM, "tau": NUM, "target_update_freq": int, "actor_update_freq": int, "mode": str,
        "drq_k": int, "shift_px": int, "target_entropy": NUM, "init_temperature": NUM,
        "checkpoint_every": int}.items()},
    "env": {
        "dt_s": (NUM, "dt_s"), "footprint_m": (NUM, "footprint_m"), "v_min_mps": (NUM, "v_min"),
        "v_max_mps": (NUM, "v_max"), "w_max_radps": (NUM, "w_max"), "front_range_m": (NUM, "front_range_m"),
        "waypoint_spacing_m": (NUM, "waypoint_spacing_m"), "waypoint_clearance_m": (NUM, "waypoint_clearance_m"),
    },
    "reward": {k: (NUM, k) for k in ("r_max", "sigma_m", "half_width_m", "goal_tolerance_m",
                                     "distance_weight", "bearing_weight")},
    "inflation": {
        "cost_scaling_per_m": (NUM, "cost_scaling_factor"), "inflation_radius_m": (NUM, "inflation_radius"),
        "inscribed_radius_m": (NUM, "inscribed_radius"),
    },
    "evaluate": {"episodes": (int, "episodes"), "worlds": (str, "worlds")},
    "benchmark": {"planners": (list, "planners"), "scenarios": (list, "scenarios"), "seeds": (list, "seeds"),
                  "checkpoint": ((str, type(None)), "checkpoint")},
    "dwa": {
        "acc_lin_mps2": (NUM, "acc_lin_mps2"), "acc_ang_radps2": (NUM, "acc_ang_radps2"), "n_v": (int, "n_v"),
        "n_w": (int, "n_w"), "horizon_s": (NUM, "horizon_s"), "w_path": (NUM, "w_path"),
        "w_clear": (NUM, "w_clear"), "w_speed": (NUM, "w_speed"), "clearance_cap_m": (NUM, "clearance_cap_m"),
    },
    "sp": {"lookahead_m": (NUM, "lookahead_m"), "k_w_per_s": (NUM, "k_w"), "cost_weight": (NUM, "cost_weight")},
}
TOP_LEVEL = {"seed": int, "outdir": str}
PRESETS = {"desk": NetConfig.desk, "paper": NetConfig.paper, "tiny": NetConfig.tiny}


@dataclass
class EvalSettings:
    episodes: int = 100
    worlds: str = "held_out"


@dataclass
class BenchmarkSettings:
    planners: list = field(default_factory=lambda: ["sac", "dwa", "sp"])
    scenarios: list = field(default_factory=lambda: ["C1", "C2", "C3", "C4"])
    seeds: list = field(default_factory=lambda: list(range(10)))
    checkpoint: Optional[str] = None


@dataclass
class RunConfig:
    seed: int = 0
    outdir: str = "runs/default"
    env: EnvConfig = field(default_factory=lambda: EnvConfig(obs=ObservationConfig(dims=(40, 40))))
    net: NetConfig = field(default_factory=NetConfig.desk)
    sac: SacConfig = field(default_factory=lambda: SacConfig(episodes=800, capacity=100_000))
    evaluate: EvalSettings = field(default_factory=EvalSettings)
    benchmark: BenchmarkSettings = field(default_factory=BenchmarkSettings)
    dwa: DwaConfig = field(default_factory=DwaConfig)
    sp: SpConfig = field(default_factory=SpConfig)


def _check_type(path: str, value, types) -> None:
    types = types if isinstance(types, tuple) else (types,)
    # bool is an int subclass; never accept it for numbers
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{path}: expected {'/'.join(t.__name__ for t in types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{path}: expected {'/'.join(t.__name__ for t in types)}, "
                          f"got {type(value).__name__} ({value!r})")


def _section(data: dict, name: str) -> dict:
    """Validated {target field: value} for one section."""
    raw = data.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(raw).__name__}")
    out = {}
    for key, value in raw.items():
        if key not in SCHEMA[name]:
            raise ConfigError(f"{name}.{key}: unknown key; allowed: {', '.join(sorted(SCHEMA[name]))}")
        types, target = SCHEMA[name][key]
        _check_type(f"{name}.{key}", value, types)
        out[target if target is not None else key] = value
    return out


def from_dict(data: Optional[dict]) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    for key in data:
        if key not in SCHEMA and key not in TOP_LEVEL:
            raise ConfigError(f"{key}: unknown section; allowed: {', '.join(sorted(set(SCHEMA) | set(TOP_LEVEL)))}")
    for key, t in TOP_LEVEL.items():
        if key in data:
            _check_type(key, data[key], t)
    base = RunConfig()
    try:
        obs_kw = _section(data, "observation")
        h, w = obs_kw.pop("h", base.env.obs.dims[0]), obs_kw.pop("w", base.env.obs.dims[1])
        obs = replace(base.env.obs, dims=(h, w), **obs_kw)

        net_kw = _section(data, "network")
        preset = net_kw.pop("preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(f"network.preset: expected one of {sorted(PRESETS)}, got {preset!r}")
        net = replace(PRESETS[preset](), **net_kw)

        sac = replace(base.sac, **{k: float(v) if isinstance(v, int) and SCHEMA["sac"][k][0] is NUM else v
                                   for k, v in _section(data, "sac").items()})

        env_kw = _section(data, "env")
        bounds = ActionBounds(**{k: float(env_kw.pop(k)) for k in ("v_min", "v_max", "w_max") if k in env_kw})
        reward = replace(base.env.reward, **_section(data, "reward"))
        inflation = replace(base.env.inflation, **_section(data, "inflation"))
        env = replace(base.env, obs=obs, bounds=bounds, reward=reward, inflation=inflation, **env_kw)

        ev = replace(base.evaluate, **_section(data, "evaluate"))
        if ev.worlds not in ("held_out", "training"):
            raise ConfigError(f"evaluate.worlds: expected held_out or training, got {ev.worlds!r}")
        bench = replace(base.benchmark, **_section(data, "benchmark"))
        dwa = replace(base.dwa, bounds=bounds, footprint_m=env.footprint_m, sim_dt_s=env.dt_s,
                      control_dt_s=env.dt_s, **_section(data, "dwa"))
        sp = replace(base.sp, bounds=bounds, **_section(data, "sp"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return RunConfig(seed=data.get("seed", base.seed), outdir=data.get("outdir", base.outdir), env=env,
                     net=net, sac=sac, evaluate=ev, benchmark=bench, dwa=dwa, sp=sp)


def load(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}") from e
    return from_dict(data)


def default_yaml() -> str:
    """The desk-scale defaults written out in config syntax."""
    c = RunConfig()
    n, s, e = c.net, c.sac, c.env
    doc = {
        "seed": c.seed, "outdir": c.outdir,
        "observation": {"kind": e.obs.kind, "width_px": e.obs.dims[1], "height_px": e.obs.dims[0],
                        "range_m": e.obs.r_max_m, "marker_px": e.obs.marker_px, "frame_stack": e.obs.frame_stack},
        "network": {"preset": "desk"},
        "sac": {k: getattr(s, k) for k in SCHEMA["sac"]},
        "env": {"dt_s": e.dt_s, "footprint_m": e.footprint_m, "v_min_mps": e.bounds.v_min,
                "v_max_mps": e.bounds.v_max, "w_max_radps": e.bounds.w_max, "front_range_m": e.front_range_m,
                "waypoint_spacing_m": e.waypoint_spacing_m, "waypoint_clearance_m": e.waypoint_clearance_m},
        "reward": {k: getattr(e.reward, k) for k in SCHEMA["reward"]},
        "inflation": {"cost_scaling_per_m": e.inflation.cost_scaling_factor,
                      "inflation_radius_m": e.inflation.inflation_radius,
                      "inscribed_radius_m": e.inflation.inscribed_radius},
        "evaluate": {"episodes": c.evaluate.episodes, "worlds": c.evaluate.worlds},
        "benchmark": {"planners": c.benchmark.planners, "scenarios": c.benchmark.scenarios,
                      "seeds": c.benchmark.seeds, "checkpoint": c.benchmark.checkpoint},
    }
    return yaml.safe_dump(doc, sort_keys=False)
