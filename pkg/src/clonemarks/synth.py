"""Synthetic contact traces with planted, possibly overlapping communities.

Each day every pair sharing a community meets with probability ``p_intra``
and every other pair with probability ``p_inter``; a meeting day produces a
few contacts placed uniformly inside the day.  Days draw from independent
generators derived from (seed, day), so output is reproducible regardless of
how days are scheduled.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from itertools import combinations
from pathlib import Path

import numpy as np

from .identity import EntityId
from .trace import DAY, WEEK, ContactTrace


@dataclass(frozen=True)
class SynthConfig:
    nodes: int = 1500
    communities: int = 75
    community_size: int = 20
    community_sizes: tuple[int, ...] | None = None   # overrides the two above
    overlap: float = 0.1          # fraction of community nodes given a second community
    p_intra: float = 0.8
    p_inter: float = 0.001
    weeks: int = 8
    contacts_per_meeting: tuple[int, int] = (1, 2)
    duration: tuple[int, int] = (300, 3600)           # seconds
    seed: int = 0

    def __post_init__(self):
        if self.nodes < 0 or self.weeks < 0:
            raise ValueError("nodes and weeks must be non-negative")
        for p in (self.p_intra, self.p_inter, self.overlap):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")
        if sum(self.sizes) > self.nodes:
            raise ValueError("community sizes exceed node count")
        if any(s < 1 for s in self.sizes):
            raise ValueError("community sizes must be positive")
        lo, hi = self.contacts_per_meeting
        if not 1 <= lo <= hi:
            raise ValueError("contacts_per_meeting must satisfy 1 <= lo <= hi")
        dlo, dhi = self.duration
        if not 0 <= dlo <= dhi < DAY:
            raise ValueError("duration must satisfy 0 <= lo <= hi < 1 day")

    @property
    def sizes(self) -> tuple[int, ...]:
        if self.community_sizes is not None:
            return tuple(self.community_sizes)
        return (self.community_size,) * self.communities

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("community_sizes", "contacts_per_meeting", "duration"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def node_ids(n: int) -> list[EntityId]:
    width = max(4, len(str(max(n - 1, 0))))
    return [EntityId.node(f"n{i:0{width}d}") for i in range(n)]


def assign_communities(config: SynthConfig) -> list[list[int]]:
    """Member lists (node indices) of the planted communities."""
    rng = np.random.default_rng([config.seed, 0xC0])
    perm = rng.permutation(config.nodes)
    groups, pos = [], 0
    for size in config.sizes:
        groups.append(sorted(perm[pos:pos + size].tolist()))
        pos += size
    if len(groups) > 1 and config.overlap > 0:
        placed = perm[:pos]
        extra = rng.random(len(placed)) < config.overlap
        home = np.repeat(np.arange(len(groups)), config.sizes)
        for node, h, flag in zip(placed.tolist(), home.tolist(), extra.tolist()):
            if not flag:
                continue
            other = int(rng.integers(len(groups) - 1))
            other += other >= h
            groups[other].append(node)
        groups = [sorted(set(g)) for g in groups]
    return groups


def intra_pairs(groups: list[list[int]], n: int) -> np.ndarray:
    keys = {u * n + v for g in groups for u, v in combinations(sorted(g), 2)}
    return np.array(sorted(keys), dtype=np.int64)


def _sample_inter(rng, n: int, count: int, intra: np.ndarray) -> np.ndarray:
    chosen = np.zeros(0, dtype=np.int64)
    while len(chosen) < count:
        need = count - len(chosen)
        u = rng.integers(0, n, size=2 * need + 8)
        v = rng.integers(0, n, size=2 * need + 8)
        ok = u != v
        lo, hi = np.minimum(u, v)[ok], np.maximum(u, v)[ok]
        keys = lo * n + hi
        keys = keys[~np.isin(keys, intra)]
        keys = keys[~np.isin(keys, chosen)]
        # keep first occurrences in draw order
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        chosen = np.concatenate([chosen, keys[:need]])
    return chosen


def generate_day(config: SynthConfig, day: int, intra: np.ndarray) -> tuple:
    n = config.nodes
    rng = np.random.default_rng([config.seed, 1, day])
    meet = intra[rng.random(len(intra)) < config.p_intra]
    n_inter = n * (n - 1) // 2 - len(intra)
    if config.p_inter > 0 and n_inter > 0:
        count = int(rng.binomial(n_inter, config.p_inter))
        meet = np.concatenate([meet, _sample_inter(rng, n, count, intra)])
    lo, hi = config.contacts_per_meeting
    reps = rng.integers(lo, hi + 1, size=len(meet))
    keys = np.repeat(meet, reps)
    dlo, dhi = config.duration
    dur = rng.integers(dlo, dhi + 1, size=len(keys))
    offset = (rng.random(len(keys)) * (DAY - dur)).astype(np.int64)
    start = day * DAY + offset
    a, b = np.divmod(keys, n)
    return a, b, start, start + dur


def generate(config: SynthConfig = SynthConfig()) -> ContactTrace:
    """Contact trace over [0, weeks] for ``config``; same config, same trace."""
    if config.nodes == 0:
        return ContactTrace((), [], [], [], [], (0, config.weeks * WEEK))
    groups = assign_communities(config)
    intra = intra_pairs(groups, config.nodes)
    cols = [generate_day(config, d, intra) for d in range(config.weeks * 7)]
    if cols:
        a, b, s, e = (np.concatenate(c) for c in zip(*cols))
    else:
        a = b = s = e = np.zeros(0, dtype=np.int64)
    return ContactTrace(node_ids(config.nodes), a, b, s, e, (0, config.weeks * WEEK))


# small bundled configurations used by tests and the CLI demo
FIXTURES = {
    "tiny20": SynthConfig(nodes=20, communities=4, community_size=5, overlap=0.2,
                          p_intra=0.7, p_inter=0.02, weeks=4, seed=20),
    "small50": SynthConfig(nodes=50, communities=5, community_size=10, overlap=0.1,
                           p_intra=0.75, p_inter=0.01, weeks=8, seed=50),
    "default": SynthConfig(),
}
