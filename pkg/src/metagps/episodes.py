"""N-way K-shot episode sampling, support-noise injection and batch streams."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .graphcore import Graph

DEFAULT_POOL_CAP = 2048


class EpisodeError(ValueError):
    pass


@dataclass(frozen=True)
class Episode:
    """One task. ``support``/``query`` are (node_id, class_id) pairs, class-major."""

    classes: tuple
    support: tuple
    query: tuple
    pool: tuple
    split: str = "train"

    @property
    def n_way(self) -> int:
        return len(self.classes)

    def support_nodes(self) -> np.ndarray:
        return np.array([v for v, _ in self.support], dtype=np.int64)

    def query_nodes(self) -> np.ndarray:
        return np.array([v for v, _ in self.query], dtype=np.int64)

    def support_targets(self) -> np.ndarray:
        """Support labels as positions 0..N-1 in ``classes``."""
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[c] for _, c in self.support], dtype=np.int64)

    def query_targets(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[c] for _, c in self.query], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps(
            {
                "classes": list(self.classes),
                "support": [list(p) for p in self.support],
                "query": [list(p) for p in self.query],
                "pool": list(self.pool),
                "split": self.split,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "Episode":
        d = json.loads(line)
        return cls(
            classes=tuple(d["classes"]),
            support=tuple(tuple(p) for p in d["support"]),
            query=tuple(tuple(p) for p in d["query"]),
            pool=tuple(d["pool"]),
            split=d.get("split", "train"),
        )


def check_episode(ep: Episode, K: int, M: int) -> None:
    """Raise AssertionError unless ``ep`` satisfies the episode invariants."""
    s_nodes = [v for v, _ in ep.support]
    q_nodes = [v for v, _ in ep.query]
    assert not set(s_nodes) & set(q_nodes), "support and query overlap"
    assert len(set(s_nodes)) == len(s_nodes) and len(set(q_nodes)) == len(q_nodes)
    for c in ep.classes:
        assert sum(1 for _, y in ep.support if y == c) == K, f"class {c} support count"
        assert sum(1 for _, y in ep.query if y == c) == M, f"class {c} query count"
    assert all(y in ep.classes for _, y in ep.support + ep.query)
    assert not set(ep.pool) & (set(s_nodes) | set(q_nodes)), "pool overlaps task nodes"


def sample_episode(
    G: Graph,
    split: str,
    N: int,
    K: int,
    M: int,
    pool_cap: int = DEFAULT_POOL_CAP,
    seed=None,
) -> Episode:
    rng = np.random.default_rng(seed)
    split_classes = np.array(G.class_split[split], dtype=np.int64)
    if len(split_classes) < N:
        raise EpisodeError(f"split {split!r} has {len(split_classes)} classes, need {N}")
    classes = rng.choice(split_classes, size=N, replace=False)
    support, query = [], []
    for c in classes:
        nodes = G.nodes_of_class(int(c))
        if len(nodes) < K + M:
            raise EpisodeError(f"class {int(c)} has {len(nodes)} nodes, need K+M={K + M}")
        picked = rng.choice(nodes, size=K + M, replace=False)
        support += [(int(v), int(c)) for v in picked[:K]]
        query += [(int(v), int(c)) for v in picked[K:]]

    used = {v for v, _ in support} | {v for v, _ in query}
    candidates = np.array([v for v in G.nodes_in_split(split) if int(v) not in used], dtype=np.int64)
    take = min(pool_cap, len(candidates))
    pool = rng.choice(candidates, size=take, replace=False) if take else np.zeros(0, np.int64)
    return Episode(
        classes=tuple(int(c) for c in classes),
        support=tuple(support),
        query=tuple(query),
        pool=tuple(int(v) for v in pool),
        split=split,
    )


def noise_count(ratio: float, K: int) -> int:
    # floor with a guard against representation error (0.2 * 5 == 1.0000000000000002 etc.)
    return int(math.floor(ratio * K + 1e-9))


def inject_noise(G: Graph, ep: Episode, ratio: float, seed=None) -> Episode:
    """Replace floor(ratio*K) support nodes per class by nodes of other classes.

    The replaced slots keep the original (now wrong) label. Random draws do
    not depend on ``ratio``, so corruptions at a lower ratio are a subset of
    those at a higher ratio for the same seed.
    """
    if not 0 <= ratio < 1:
        raise ValueError(f"noise ratio {ratio} outside [0, 1)")
    K = len(ep.support) // max(1, ep.n_way)
    c = noise_count(ratio, K)
    if c == 0:
        return ep
    rng = np.random.default_rng(seed)
    taken = {v for v, _ in ep.support} | {v for v, _ in ep.query}
    split_nodes = G.nodes_in_split(ep.split)
    support = list(ep.support)
    for cls in ep.classes:
        slots = [i for i, (_, y) in enumerate(support) if y == cls]
        order = rng.permutation(len(slots))
        donors = np.array(
            [v for v in split_nodes if G.y[v] != cls and int(v) not in taken], dtype=np.int64
        )
        if len(donors) < c:
            raise EpisodeError(f"no donor nodes available for class {cls}")
        size = len(slots) if len(donors) >= len(slots) else c
        picked = rng.choice(donors, size=size, replace=False)
        taken.update(int(v) for v in picked)
        for j in range(c):
            support[slots[order[j]]] = (int(picked[j]), cls)
    used = {v for v, _ in support}
    pool = tuple(v for v in ep.pool if v not in used)
    return replace(ep, support=tuple(support), pool=pool)


def episode_stream(
    G: Graph,
    split: str,
    N: int,
    K: int,
    M: int,
    batch_size: int,
    seed=None,
    pool_cap: int = DEFAULT_POOL_CAP,
    noise_ratio: float = 0.0,
) -> Iterator[list[Episode]]:
    """Endless stream of episode batches; every episode gets its own sub-seed."""
    root = np.random.SeedSequence(seed)
    batch = 0
    while True:
        children = np.random.SeedSequence(root.entropy, spawn_key=(batch,)).spawn(batch_size)
        episodes = []
        for child in children:
            s_ep, s_noise = (int(x) for x in child.generate_state(2, dtype=np.uint64))
            ep = sample_episode(G, split, N, K, M, pool_cap=pool_cap, seed=s_ep)
            if noise_ratio:
                ep = inject_noise(G, ep, noise_ratio, seed=s_noise)
            episodes.append(ep)
        yield episodes
        batch += 1


def fixed_episodes(G, split, N, K, M, count, seed, pool_cap=0, noise_ratio=0.0) -> list[Episode]:
    """A reproducible list of episodes, e.g. for validation or meta-testing."""
    if count == 0:
        return []
    return next(episode_stream(G, split, N, K, M, count, seed=seed, pool_cap=pool_cap,
                               noise_ratio=noise_ratio))
