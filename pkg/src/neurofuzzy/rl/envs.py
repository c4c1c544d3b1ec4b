"""Low-dimensional toy environments with discrete actions.

Every environment is deterministic given the seed passed to ``reset`` and
follows the contract ``reset(seed) -> obs`` and ``step(action) -> (obs,
reward, terminal)``.  Each also exposes ``oracle_action()``, a scripted policy
that reads the hidden state.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def _bounce(pos: float, vel: float) -> tuple[float, float]:
    pos += vel
    if pos > 1.0:
        pos, vel = 2.0 - pos, -vel
    elif pos < -1.0:
        pos, vel = -2.0 - pos, -vel
    return pos, vel


class TrackAndShoot:
    """A target slides along a wall; the agent pans its aim and fires.

    Projectiles need ``travel`` ticks to reach the wall, so a good shooter
    leads the target.  Only one projectile may be in flight.  A hit pays +1
    and respawns the target somewhere else.

    Observation: ``[target - aim, velocity / max_speed, aim, projectile in flight]``.
    Actions: 0 pan left, 1 pan right, 2 fire.
    """

    name = "track-and-shoot"
    n_actions = 3
    obs_low = np.array([-2.0, -1.0, -1.0, 0.0])
    obs_high = np.array([2.0, 1.0, 1.0, 1.0])

    def __init__(self, horizon: int = 60, aim_step: float = 0.1, travel: int = 2,
                 hit_radius: float = 0.15, speed=(0.02, 0.06)):
        self.horizon = horizon
        self.aim_step = aim_step
        self.travel = travel
        self.hit_radius = hit_radius
        self.speed = speed
        self.rng = np.random.default_rng(0)

    @property
    def obs_dim(self) -> int:
        return len(self.obs_low)

    def _spawn(self) -> None:
        self.target = self.rng.uniform(-1.0, 1.0)
        self.velocity = self.rng.choice([-1.0, 1.0]) * self.rng.uniform(*self.speed)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.aim = 0.0
        self.timer = 0
        self.shot_at = 0.0
        self._spawn()
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.array([self.target - self.aim, self.velocity / self.speed[1], self.aim,
                         float(self.timer > 0)])

    def step(self, action: int):
        action = int(action)
        if action == 0:
            self.aim = max(-1.0, self.aim - self.aim_step)
        elif action == 1:
            self.aim = min(1.0, self.aim + self.aim_step)
        elif action == 2 and self.timer == 0:
            self.timer = self.travel
            self.shot_at = self.aim
        self.target, self.velocity = _bounce(self.target, self.velocity)
        reward = 0.0
        if self.timer > 0:
            self.timer -= 1
            if self.timer == 0 and abs(self.target - self.shot_at) < self.hit_radius:
                reward = 1.0
                self._spawn()
        self.t += 1
        return self.observe(), reward, self.t >= self.horizon

    def predicted_target(self, ticks: int) -> float:
        pos, vel = self.target, self.velocity
        for _ in range(ticks):
            pos, vel = _bounce(pos, vel)
        return pos

    def oracle_action(self) -> int:
        lead = self.predicted_target(self.travel) - self.aim
        if self.timer == 0 and abs(lead) < self.hit_radius - 0.03:
            return 2
        # keep tracking where the target will be once the gun is free again
        ahead = self.predicted_target(self.travel + self.timer + 1) - self.aim
        return 0 if ahead < 0 else 1


class DodgeLine:
    """Projectiles fall toward a line; the agent steps sideways to avoid them.

    Pays +1 for every tick survived; three hits end the episode.
    Observation: ``[position, offset and time-to-impact of the two nearest projectiles]``.
    Actions: 0 left, 1 right, 2 stay.
    """

    name = "dodge-line"
    n_actions = 3
    obs_low = np.array([-1.0, -2.0, 0.0, -2.0, 0.0])
    obs_high = np.array([1.0, 2.0, 1.0, 2.0, 1.0])

    def __init__(self, horizon: int = 100, step_size: float = 0.15, fall_ticks: int = 8,
                 spawn_every: int = 3, hit_radius: float = 0.15, lives: int = 3):
        self.horizon = horizon
        self.step_size = step_size
        self.fall_ticks = fall_ticks
        self.spawn_every = spawn_every
        self.hit_radius = hit_radius
        self.lives = lives
        self.rng = np.random.default_rng(0)

    @property
    def obs_dim(self) -> int:
        return len(self.obs_low)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.pos = 0.0
        self.hits = 0
        self.shots: list[list[float]] = []  # [x, ticks left]
        return self.observe()

    def _nearest(self) -> list[list[float]]:
        return sorted(self.shots, key=lambda s: (s[1], abs(s[0] - self.pos)))[:2]

    def observe(self) -> np.ndarray:
        feats = [self.pos]
        near = self._nearest()
        for k in range(2):
            if k < len(near):
                feats += [near[k][0] - self.pos, near[k][1] / self.fall_ticks]
            else:
                feats += [2.0, 1.0]
        return np.array(feats)

    def step(self, action: int):
        action = int(action)
        if action == 0:
            self.pos = max(-1.0, self.pos - self.step_size)
        elif action == 1:
            self.pos = min(1.0, self.pos + self.step_size)
        if self.t % self.spawn_every == 0:
            self.shots.append([self.rng.uniform(-1.0, 1.0), float(self.fall_ticks)])
        landed = []
        for s in self.shots:
            s[1] -= 1
            if s[1] <= 0:
                landed.append(s)
        for s in landed:
            self.shots.remove(s)
            if abs(s[0] - self.pos) < self.hit_radius:
                self.hits += 1
        self.t += 1
        terminal = self.hits >= self.lives or self.t >= self.horizon
        reward = 0.0 if self.hits >= self.lives else 1.0
        return self.observe(), reward, terminal

    def oracle_action(self) -> int:
        def danger(x):
            return sum(1.0 / s[1] for s in self.shots if abs(s[0] - x) < self.hit_radius + 0.05)
        moves = [max(-1.0, self.pos - self.step_size), min(1.0, self.pos + self.step_size), self.pos]
        return int(np.argmin([danger(x) + 1e-3 * abs(x) for x in moves]))


class Gather:
    """Health drains every tick; walking onto a token restores it.

    Pays +1 per tick alive.  Observation: ``[position, health, offsets of two tokens]``.
    Actions: 0 left, 1 right, 2 stay.
    """

    name = "gather"
    n_actions = 3
    obs_low = np.array([-1.0, 0.0, -2.0, -2.0])
    obs_high = np.array([1.0, 1.0, 2.0, 2.0])

    def __init__(self, horizon: int = 150, step_size: float = 0.1, drain: float = 0.04,
                 restore: float = 0.35, pickup_radius: float = 0.08):
        self.horizon = horizon
        self.step_size = step_size
        self.drain = drain
        self.restore = restore
        self.pickup_radius = pickup_radius
        self.rng = np.random.default_rng(0)

    @property
    def obs_dim(self) -> int:
        return len(self.obs_low)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.pos = 0.0
        self.health = 1.0
        self.tokens = list(self.rng.uniform(-1.0, 1.0, size=2))
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.array([self.pos, self.health, self.tokens[0] - self.pos, self.tokens[1] - self.pos])

    def step(self, action: int):
        action = int(action)
        if action == 0:
            self.pos = max(-1.0, self.pos - self.step_size)
        elif action == 1:
            self.pos = min(1.0, self.pos + self.step_size)
        self.health -= self.drain
        for k, tok in enumerate(self.tokens):
            if abs(tok - self.pos) < self.pickup_radius:
                self.health = min(1.0, self.health + self.restore)
                self.tokens[k] = self.rng.uniform(-1.0, 1.0)
        self.t += 1
        alive = self.health > 0
        return self.observe(), float(alive), (not alive) or self.t >= self.horizon

    def oracle_action(self) -> int:
        target = min(self.tokens, key=lambda tok: abs(tok - self.pos))
        if abs(target - self.pos) < self.pickup_radius:
            return 2
        return 0 if target < self.pos else 1


ENVIRONMENTS = {cls.name: cls for cls in (TrackAndShoot, DodgeLine, Gather)}


def make_env(name: str, **kwargs):
    if name not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    return ENVIRONMENTS[name](**kwargs)
