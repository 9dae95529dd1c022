"""Experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import json
import logging
import os

import numpy as np

from .. import adcore as ad
from ..episodes import noise_count
from ..graphcore import Graph, generate_sbm, load_graph
from ..metalearner.model import VARIANTS, Ablation, MetaState, Problem, init_state
from ..metalearner.training import meta_test, meta_train
from ..metrics import MetricsReport, davies_bouldin, silhouette
from .config import Config

log = logging.getLogger(__name__)


def build_graph(cfg: Config) -> Graph:
    if cfg.dataset:
        return load_graph(cfg.dataset)
    return generate_sbm(cfg.classes, cfg.per_class, cfg.p_in, cfg.p_out, cfg.feature_dim,
                        cfg.feature_noise, seed=cfg.graph_seed, split=tuple(cfg.split))


def initial_state(cfg: Config, G: Graph, ablation: Ablation | None = None) -> tuple[MetaState, Problem]:
    ablation = cfg.ablation() if ablation is None else ablation
    problem = Problem(G, cfg.hyper(), ablation)
    state = init_state(problem.encoder, cfg.N, cfg.hyper(), ablation, seed=cfg.seed)
    return state, problem


class JsonlWriter:
    """One JSON object per line, keys sorted, flushed per record."""

    def __init__(self, path: str):
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        self.fh = open(path, "w")

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def read_jsonl(path: str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def train(cfg: Config, G: Graph | None = None, ablation: Ablation | None = None,
          noise_ratio: float | None = None, log_path: str | None = None):
    """Fit one meta-learner; returns ``(state, train_log, problem, rng_state)``."""
    G = build_graph(cfg) if G is None else G
    state, problem = initial_state(cfg, G, ablation)
    writer = JsonlWriter(log_path) if log_path else None
    try:
        best, tlog = meta_train(G, state, cfg.schedule(noise_ratio), problem=problem,
                                on_record=writer)
    finally:
        if writer:
            writer.close()
    # episode streams are counter based: seed plus batch count is the full state
    rng = {"stream_seed": cfg.seed, "batches_consumed": len(tlog.records)}
    return best, tlog, problem, rng


def evaluate(cfg: Config, state: MetaState, G: Graph | None = None,
             noise_ratio: float | None = None, problem: Problem | None = None) -> MetricsReport:
    G = build_graph(cfg) if G is None else G
    return meta_test(G, state, N=cfg.N, K=cfg.K, M=cfg.M, n_tasks=cfg.test_tasks,
                     repeats=cfg.test_repeats, seed=cfg.seed,
                     noise_ratio=cfg.noise_ratio if noise_ratio is None else noise_ratio,
                     problem=problem)


def ablation_table(cfg: Config, G: Graph | None = None) -> list[dict]:
    """Full model plus the five single-component variants on one config."""
    G = build_graph(cfg) if G is None else G
    rows = []
    for name, ab in VARIANTS.items():
        state, _, problem, _ = train(cfg, G, ablation=ab)
        rep = evaluate(cfg, state, G, problem=problem)
        rows.append({
            "variant": name,
            "accuracy_mean": rep.accuracy_mean, "accuracy_std": rep.accuracy_std,
            "macro_f1_mean": rep.macro_f1_mean, "macro_f1_std": rep.macro_f1_std,
        })
        log.info("ablation %s: acc %.4f", name, rep.accuracy_mean)
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<10} {'accuracy':>16} {'macro_f1':>16}"]
    for r in rows:
        acc = f"{r['accuracy_mean']:.4f} ± {r['accuracy_std']:.4f}"
        f1 = f"{r['macro_f1_mean']:.4f} ± {r['macro_f1_std']:.4f}"
        lines.append(f"{r['variant']:<10} {acc:>16} {f1:>16}")
    return "\n".join(lines)


def noise_sweep(cfg: Config, ratios=None, G: Graph | None = None, retrain: bool = True) -> list[dict]:
    """Accuracy at each support-noise ratio, with noise in training and test supports.

    All ratios share the episode seeds, so a lower ratio's corruptions are a
    subset of a higher one's. Ratios giving the same per-class noise count
    produce identical runs and are computed once. With ``retrain=False`` one
    clean model is trained and only the test supports are corrupted.
    """
    ratios = list(cfg.noise_ratios if ratios is None else ratios)
    G = build_graph(cfg) if G is None else G
    cache: dict = {}
    clean = None
    rows = []
    for r in ratios:
        c = noise_count(r, cfg.K)
        if c not in cache:
            if retrain:
                state, _, problem, _ = train(cfg, G, noise_ratio=r)
            else:
                if clean is None:
                    clean = train(cfg, G, noise_ratio=0.0)
                state, _, problem, _ = clean
            cache[c] = evaluate(cfg, state, G, noise_ratio=r, problem=problem)
        rep = cache[c]
        rows.append({"ratio": r, "noise_count": c, "accuracy_mean": rep.accuracy_mean,
                     "accuracy_std": rep.accuracy_std, "macro_f1_mean": rep.macro_f1_mean})
    return rows


def is_non_increasing(values) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def embeddings(problem: Problem, state: MetaState) -> np.ndarray:
    with ad.no_record():
        return problem.embed(state.theta).value


def dump_embeddings(path: str, G: Graph, Z: np.ndarray, nodes=None) -> None:
    nodes = np.arange(G.n) if nodes is None else np.asarray(nodes)
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["node_id", "label"] + [f"z{j}" for j in range(Z.shape[1])]) + "\n")
        for v in nodes:
            fh.write(",".join([str(int(v)), str(int(G.y[v]))] + [repr(float(x)) for x in Z[v]]) + "\n")


def embedding_quality(G: Graph, Z: np.ndarray, split: str = "test") -> dict:
    """SC and DB of the embeddings of one split's nodes, or None if undefined."""
    nodes = G.nodes_in_split(split)
    out = {"sc": None, "db": None}
    if len(np.unique(G.y[nodes])) < 2:
        return out
    out["sc"] = silhouette(Z[nodes], G.y[nodes])
    try:
        out["db"] = davies_bouldin(Z[nodes], G.y[nodes])
    except ValueError:
        pass
    return out
