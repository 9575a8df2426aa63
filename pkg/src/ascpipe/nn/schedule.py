"""Cosine-decay learning-rate schedule with warm restarts.

Cycle i covers steps t = 0..L_i inclusive, where L_i grows by
cycle_mult each restart. The rate starts at lr_max (t = 0), reaches
lr_min exactly at t = L_i, and restarts at lr_max on the next step.
The inclusive endpoint is what lets both boundary values be hit
exactly rather than approached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class ScheduleConfig:
    first_cycle_len: int
    lr_max: float = 0.1
    lr_min: float = 1e-5
    cycle_mult: int = 2
    momentum: float = 0.9

    def __post_init__(self):
        if not 0 < self.lr_min < self.lr_max:
            raise ConfigError("need 0 < lr_min < lr_max")
        if self.first_cycle_len < 1:
            raise ConfigError("first_cycle_len must be >= 1")
        if self.cycle_mult < 1:
            raise ConfigError("cycle_mult must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")


def cycle_position(step: int, cfg: ScheduleConfig) -> tuple[int, int, int]:
    """(cycle index, offset within cycle, cycle length) for a global step."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    length = cfg.first_cycle_len
    idx = 0
    remaining = step
    while remaining > length:
        remaining -= length + 1  # each cycle holds length+1 steps, 0..length
        length *= cfg.cycle_mult
        idx += 1
    return idx, remaining, length


def cosine_restart_lr(step: int, cfg: ScheduleConfig) -> float:
    _, t, length = cycle_position(step, cfg)
    cos_part = 1.0 + math.cos(math.pi * t / length)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * cos_part
