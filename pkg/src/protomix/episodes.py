"""Seeded construction of C-way K-shot episodic tasks from a class-grouped pool."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EpisodeError


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode shape: C classes, K support and M query samples per class."""

    n_way: int = 4
    k_shot: int = 5
    m_query: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ConfigError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1 or self.m_query < 1:
            raise ConfigError(
                f"k_shot and m_query must be >= 1, got {self.k_shot} and {self.m_query}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.k_shot >= self.m_query:
            warnings.warn(
                f"k_shot ({self.k_shot}) >= m_query ({self.m_query}); the method "
                "was designed for more queries than shots",
                stacklevel=2,
            )


@dataclass
class Episode:
    """One sampled task: disjoint support and query sets over the chosen classes."""

    support: list
    query: list
    class_ids: list
    episode_index: int


def sample_episode(pool, cfg: EpisodeConfig, episode_index):
    """Draw one episode, fully determined by (cfg.seed, episode_index).

    ``pool`` maps class id to its samples. Classes are chosen uniformly
    without replacement among those with at least K+M samples; within a
    class, K+M samples are drawn without replacement and split into support
    and query.
    """
    need = cfg.k_shot + cfg.m_query
    eligible = sorted(cid for cid, group in pool.items() if len(group) >= need)
    if len(eligible) < cfg.n_way:
        short = {cid: len(group) for cid, group in sorted(pool.items()) if len(group) < need}
        raise EpisodeError(
            f"need {cfg.n_way} classes with >= {need} samples, only "
            f"{len(eligible)} eligible; short classes: {short}"
        )
    rng = np.random.default_rng([cfg.seed, episode_index])
    class_ids = [int(c) for c in rng.choice(eligible, size=cfg.n_way, replace=False)]
    support, query = [], []
    for cid in class_ids:
        group = pool[cid]
        picks = rng.choice(len(group), size=need, replace=False)
        support.extend(group[i] for i in picks[: cfg.k_shot])
        query.extend(group[i] for i in picks[cfg.k_shot:])
    return Episode(support=support, query=query, class_ids=class_ids, episode_index=episode_index)
