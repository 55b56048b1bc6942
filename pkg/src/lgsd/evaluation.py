"""Metrics and artifacts for trained skills: coverage, moved distance, language goals, latent traces.

Trajectories are kept as one ``(T + 1, state_dim)`` array per episode so that
sets with different episode lengths can be merged. The coordinates every
metric measures come from the environment's ``position_slice``: the agent for
the point mass and the object for the pusher.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import forward
from .env import ENVIRONMENTS, EnvConfig, make_env
from .skill_core import infer_skill

STATE_COLUMNS = {"point": ["x", "y"], "pusher": ["arm_x", "arm_y", "obj_x", "obj_y"]}


@dataclass
class TrajectorySet:
    env: str
    states: list  # one (T_i + 1, state_dim) array per episode
    skills: np.ndarray  # (n_episodes, D)
    rewards: list | None = None  # one (T_i,) array per episode
    d_lang: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {self.env!r}")
        self.skills = np.atleast_2d(np.asarray(self.skills, dtype=np.float64))
        if len(self.states) != len(self.skills):
            raise ValueError(f"{len(self.states)} episodes but {len(self.skills)} skills")
        for ep in self.states:
            if np.ndim(ep) != 2 or len(ep) < 1:
                raise ValueError("each episode needs a (T + 1, state_dim) state array")

    def __len__(self):
        return len(self.states)

    @property
    def position_slice(self) -> slice:
        return ENVIRONMENTS[self.env].position_slice

    def positions(self) -> list[np.ndarray]:
        return [np.asarray(ep)[:, self.position_slice] for ep in self.states]

    def terminal_positions(self) -> np.ndarray:
        return np.array([p[-1] for p in self.positions()])

    def extend(self, other: "TrajectorySet") -> "TrajectorySet":
        if other.env != self.env:
            raise ValueError("cannot merge trajectories from different environments")
        join = lambda a, b: None if a is None or b is None else list(a) + list(b)  # noqa: E731
        skills = np.concatenate([self.skills, other.skills]) if len(other) else self.skills
        return TrajectorySet(self.env, list(self.states) + list(other.states), skills, join(self.rewards, other.rewards), join(self.d_lang, other.d_lang), dict(self.meta))


def generate(checkpoint, n_skills: int, seed: int = 0, deterministic: bool = True, space=None, skills=None) -> TrajectorySet:
    """Roll out ``n_skills`` skills drawn from ``N(0, I)`` (or the given ``skills``)."""
    from .trainer import build_language_space, phi_features, rollout

    cfg = checkpoint.config
    env = make_env(cfg.env)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_skills, cfg.skill.dim)) if skills is None else np.atleast_2d(np.asarray(skills, dtype=np.float64))
    if len(z) == 0:
        raise ValueError("nothing to roll out")
    seeds = rng.integers(0, 2**31 - 1, size=len(z))
    states, *_ = rollout(checkpoint.policy, env, z, seeds, rng, deterministic)
    states = states.transpose(1, 0, 2)
    f = phi_features(cfg, states)
    lat = forward(checkpoint.phi, f.reshape(-1, f.shape[-1])).reshape(len(z), -1, cfg.skill.dim)
    rewards = np.sum((lat[:, 1:] - lat[:, :-1]) * z[:, None, :], axis=-1)
    space = space or build_language_space(cfg)
    d = np.stack([space.distance(ep[:-1], ep[1:]) for ep in states])
    return TrajectorySet(cfg.env.name, list(states), z, list(rewards), list(d), {"checkpoint": checkpoint.digest()[:16], "seed": seed})


def random_trajectories(env_config: EnvConfig, n_episodes: int, seed: int = 0) -> TrajectorySet:
    """Uniformly random actions in ``[-1, 1]^2`` for every step of every episode."""
    env = make_env(env_config)
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=n_episodes)
    s = env.reset_batch(seeds)
    out = [s]
    for _ in range(env_config.episode_length):
        s = env.step(s, rng.uniform(-1.0, 1.0, size=(n_episodes, env.action_dim)))
        out.append(s)
    states = np.stack(out).transpose(1, 0, 2)
    return TrajectorySet(env_config.name, list(states), np.zeros((n_episodes, 0)), meta={"policy": "uniform_random", "seed": seed})


def _cells(points: np.ndarray, cell_size: float) -> set:
    return set(map(tuple, np.floor(points / cell_size).astype(np.int64).tolist()))


def coverage(trajs: TrajectorySet, cell_size: float = 0.01, region=None) -> int:
    """Number of distinct grid cells visited by the measured position.

    ``region`` optionally keeps only positions for which it returns True
    (a vectorized predicate over an ``(n, 2)`` array).
    """
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    if len(trajs) == 0:
        return 0
    pts = np.concatenate(trajs.positions())
    if region is not None:
        pts = pts[np.asarray(region(pts), dtype=bool)]
    return len(_cells(pts, cell_size))


def moved_distance(trajs: TrajectorySet) -> float:
    """Mean distance between the object's first and last position."""
    if trajs.env != "pusher":
        raise ValueError(f"moved distance needs pusher trajectories, got {trajs.env!r}")
    if len(trajs) == 0:
        raise ValueError("no episodes")
    return float(np.mean([np.linalg.norm(p[-1] - p[0]) for p in trajs.positions()]))


HALF_PLANES = {"N": (1, 1.0), "S": (1, -1.0), "E": (0, 1.0), "W": (0, -1.0)}


def half_plane(direction: str, slack: float = 0.0):
    """Predicate for the allowed side of a half-plane template, widened by ``slack``."""
    axis, sign = HALF_PLANES[direction]
    return lambda pts: sign * np.asarray(pts)[:, axis] >= -slack


def template_direction(template_id: str) -> str | None:
    return template_id[-1] if "half_plane_" in template_id else None


def allowed_terminal_fraction(trajs: TrajectorySet, direction: str, slack: float = 0.05) -> float:
    return float(np.mean(half_plane(direction, slack)(trajs.terminal_positions())))


# goal sentences -------------------------------------------------------------

class GoalParseError(ValueError):
    pass


_NUM = r"(-?\d+(?:\.\d+)?)"
_GOAL_PATTERNS = {
    "point": re.compile(r"^(?:Description:\s*)?The robot's x, y position is \[\s*" + _NUM + r"\s*,\s*" + _NUM + r"\s*\]\.?\s*$"),
    "pusher": re.compile(r"^(?:Description:\s*)?The object's x, y position is \[\s*" + _NUM + r"\s*,\s*" + _NUM + r"\s*\]\.?\s*$"),
}


def parse_goal(env_name: str, text: str) -> np.ndarray:
    """Coordinates named by a goal sentence in the environment's position format."""
    pattern = _GOAL_PATTERNS.get(env_name)
    if pattern is None:
        raise GoalParseError(f"no goal format for environment {env_name!r}")
    m = pattern.match(text.strip())
    if not m:
        raise GoalParseError(f"goal text does not match the {env_name} position format: {text!r}")
    return np.array([float(m.group(1)), float(m.group(2))])


def goal_text(env_name: str, position) -> str:
    """The sentence the describer would emit for ``position`` (two decimals)."""
    x, y = (f"{v:.2f}" for v in np.asarray(position, dtype=np.float64))
    x, y = ("0.00" if v == "-0.00" else v for v in (x, y))
    if env_name == "point":
        return f"The robot's x, y position is [{x}, {y}]"
    if env_name == "pusher":
        return f"The object's x, y position is [{x}, {y}]."
    raise GoalParseError(f"no goal format for environment {env_name!r}")


@dataclass
class GoalResult:
    goal: np.ndarray
    skill: np.ndarray
    terminals: np.ndarray
    success: np.ndarray

    @property
    def rate(self) -> float:
        return float(np.mean(self.success))

    def to_dict(self) -> dict:
        return {
            "goal": self.goal.tolist(),
            "skill": self.skill.tolist(),
            "success_rate": self.rate,
            "terminals": self.terminals.tolist(),
        }


def zero_shot_goal(checkpoint, text: str, radius: float = 0.1, n_episodes: int = 10, seed: int = 0, normalize: bool = True, deterministic: bool | None = None, embedder=None) -> GoalResult:
    """Infer a skill from ``text`` and count episodes ending within ``radius`` of the named position."""
    from .embed import make_embedder
    from .trainer import rollout

    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    cfg = checkpoint.config
    goal = parse_goal(cfg.env.name, text)
    ec = cfg.embedder
    embedder = embedder or make_embedder(ec.backend, ec.n_features, ec.seed, ec.tokenizer)
    z = infer_skill(checkpoint.psi, text.strip().removeprefix("Description:").strip(), embedder, normalize)
    env = make_env(cfg.env)
    rng = np.random.default_rng(seed)
    det = cfg.eval.deterministic if deterministic is None else deterministic
    seeds = rng.integers(0, 2**31 - 1, size=n_episodes)
    states, *_ = rollout(checkpoint.policy, env, np.repeat(z[None, :], n_episodes, axis=0), seeds, rng, det)
    terminals = env.position(states[-1])
    success = np.linalg.norm(terminals - goal, axis=1) <= radius
    return GoalResult(goal, z, terminals, success)


# latent traces --------------------------------------------------------------

def latent_path(checkpoint, states) -> np.ndarray:
    from .trainer import phi_features

    return forward(checkpoint.phi, phi_features(checkpoint.config, np.atleast_2d(states)))


def alignment(checkpoint, trajs: TrajectorySet) -> float:
    """Mean cosine between each episode's latent displacement and its skill."""
    cos = []
    for ep, z in zip(trajs.states, trajs.skills):
        lat = latent_path(checkpoint, ep)
        delta = lat[-1] - lat[0]
        denom = np.linalg.norm(delta) * np.linalg.norm(z)
        cos.append(float(delta @ z / denom) if denom > 0 else 0.0)
    return float(np.mean(cos))


def latent_csv(latents: np.ndarray) -> str:
    latents = np.atleast_2d(latents)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"phi{i}" for i in range(latents.shape[1])])
    for t, row in enumerate(latents):
        w.writerow([t] + [repr(float(v)) for v in row])
    return buf.getvalue()


def read_latent_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def latent_svg(latents: np.ndarray, z, size: int = 400, pad: int = 30) -> str:
    """Latent path as a polyline, start and end markers, and the skill direction as an arrow."""
    lat = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if lat.shape[1] != 2:
        raise ValueError("drawing needs a 2-dimensional latent space")
    z = np.asarray(z, dtype=np.float64)
    lo, hi = lat.min(axis=0), lat.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    centre = (lo + hi) / 2.0
    scale = (size - 2 * pad) / span

    def px(p):
        return (size / 2 + (p[0] - centre[0]) * scale, size / 2 - (p[1] - centre[1]) * scale)

    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(px, lat))
    sx, sy = px(lat[0])
    ex, ey = px(lat[-1])
    zn = np.linalg.norm(z)
    u = z / zn if zn > 0 else np.zeros(2)
    ax, ay = sx + u[0] * (size / 4), sy - u[1] * (size / 4)
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        '<defs><marker id="head" markerWidth="8" markerHeight="8" refX="6" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#c0392b"/></marker></defs>',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="#999"/>',
        f'<polyline points="{pts}" fill="none" stroke="#2c3e50" stroke-width="1.5"/>',
        f'<circle cx="{_fmt(sx)}" cy="{_fmt(sy)}" r="4" fill="#27ae60"/>',
        f'<circle cx="{_fmt(ex)}" cy="{_fmt(ey)}" r="4" fill="#2980b9"/>',
        f'<line x1="{_fmt(sx)}" y1="{_fmt(sy)}" x2="{_fmt(ax)}" y2="{_fmt(ay)}" stroke="#c0392b" stroke-width="2" marker-end="url(#head)"/>',
        f'<text x="8" y="16" font-family="sans-serif" font-size="12">z = [{", ".join(_fmt(v) for v in z)}]</text>',
        "</svg>",
        "",
    ])


def trajectory_svg(trajs: TrajectorySet, bound: float = 1.0, size: int = 400, pad: int = 20) -> str:
    """Measured-position paths of every episode inside the square arena."""
    scale = (size - 2 * pad) / (2 * bound)

    def px(p):
        return (pad + (p[0] + bound) * scale, pad + (bound - p[1]) * scale)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{size - 2 * pad}" height="{size - 2 * pad}" fill="white" stroke="#333"/>',
    ]
    n = max(len(trajs), 1)
    for i, pos in enumerate(trajs.positions()):
        hue = int(360 * i / n)
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(px, pos))
        lines.append(f'<polyline points="{pts}" fill="none" stroke="hsl({hue},70%,45%)" stroke-width="1"/>')
        ex, ey = px(pos[-1])
        lines.append(f'<circle cx="{_fmt(ex)}" cy="{_fmt(ey)}" r="2.5" fill="hsl({hue},70%,35%)"/>')
    lines += ["</svg>", ""]
    return "\n".join(lines)


# trajectory CSV -------------------------------------------------------------

def _state_columns(env: str, dim: int) -> list[str]:
    names = STATE_COLUMNS.get(env)
    return names if names and len(names) == dim else [f"s{i}" for i in range(dim)]


def trajectory_csv(trajs: TrajectorySet) -> str:
    """One row per visited state; ``reward`` and ``d_lang`` describe the step leaving it (blank on the last row)."""
    if len(trajs) == 0:
        raise ValueError("no episodes to write")
    D = trajs.skills.shape[1]
    ds = np.asarray(trajs.states[0]).shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "t"] + [f"z{i}" for i in range(D)] + _state_columns(trajs.env, ds) + ["reward", "d_lang"])
    for e, (ep, z) in enumerate(zip(trajs.states, trajs.skills)):
        r = trajs.rewards[e] if trajs.rewards is not None else None
        d = trajs.d_lang[e] if trajs.d_lang is not None else None
        for t, s in enumerate(ep):
            last = t == len(ep) - 1
            rv = "" if last or r is None else repr(float(r[t]))
            dv = "" if last or d is None else repr(float(d[t]))
            w.writerow([e, t] + [repr(float(v)) for v in z] + [repr(float(v)) for v in s] + [rv, dv])
    return buf.getvalue()


def write_trajectory_csv(trajs: TrajectorySet, path) -> None:
    Path(path).write_text(trajectory_csv(trajs))


def read_trajectory_csv(path, env: str | None = None) -> TrajectorySet:
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{path} is empty")
    header = rows[0]
    if header[:2] != ["episode", "t"] or header[-2:] != ["reward", "d_lang"]:
        raise ValueError(f"{path} is not a trajectory CSV")
    D = sum(1 for h in header if re.fullmatch(r"z\d+", h))
    state_cols = header[2 + D:-2]
    if env is None:
        env = next((k for k, v in STATE_COLUMNS.items() if v == state_cols), None)
        if env is None:
            raise ValueError(f"cannot infer the environment from columns {state_cols}")
    episodes: dict[int, list] = {}
    for r in rows[1:]:
        episodes.setdefault(int(r[0]), []).append(r)
    states, skills, rewards, dl = [], [], [], []
    have_r = have_d = True
    for e in sorted(episodes):
        ep = sorted(episodes[e], key=lambda r: int(r[1]))
        skills.append([float(v) for v in ep[0][2:2 + D]])
        states.append(np.array([[float(v) for v in r[2 + D:-2]] for r in ep]))
        rv = [r[-2] for r in ep[:-1]]
        dv = [r[-1] for r in ep[:-1]]
        have_r &= all(rv)
        have_d &= all(dv)
        rewards.append(np.array([float(v) for v in rv]) if all(rv) else None)
        dl.append(np.array([float(v) for v in dv]) if all(dv) else None)
    if not states:
        raise ValueError(f"{path} has no episodes")
    return TrajectorySet(env, states, np.array(skills).reshape(len(states), D), rewards if have_r else None, dl if have_d else None)
