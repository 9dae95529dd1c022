"""Self-check suite behind the ``check`` command.

Each check returns ``(name, ok, detail)``. The toy problem builders are also
used by the test-suite.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .. import adcore as ad
from ..episodes import Episode, check_episode, inject_noise, noise_count, sample_episode
from ..graphcore import Graph, hop_adjacency
from ..metalearner import components as C
from ..metalearner.model import (Ablation, HyperParams, MetaState, Problem, episode_objective,
                                 init_state, run_episode)
from ..metrics import davies_bouldin, silhouette

FD_TOL = 1e-5


def toy_graph(seed, n_classes=3, per_class=4, feature_dim=2, p=0.5) -> Graph:
    """Small random graph with every class in the train split."""
    rng = np.random.default_rng(seed)
    n = n_classes * per_class
    y = np.repeat(np.arange(n_classes), per_class)
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    X = rng.normal(size=(n, feature_dim)) + np.eye(n_classes, feature_dim)[y]
    split = {"train": tuple(range(n_classes)), "val": (), "test": ()}
    return Graph(X=X, edges=edges, y=y, class_split=split)


def _well_posed(problem: Problem, theta: ad.ParamSet, margin=1e-3) -> bool:
    """No all-zero embedding rows and no encoder pre-activation near the ReLU kink."""
    enc = problem.encoder
    if enc.kind != "hop":
        Z = enc.propagated @ theta["enc.W"].value
        return bool(np.all(np.abs(Z).sum(axis=1) > 0))
    pre_f = problem.G.X @ theta["enc.W_f"].value
    F = np.maximum(pre_f, 0)
    R = np.hstack([F] + [A @ F for A in enc.adjs])
    pre_z = R @ theta["enc.W_r"].value
    return bool(np.all(np.abs(pre_f) > margin) and np.all(np.abs(pre_z) > margin)
                and np.all(np.maximum(pre_z, 0).sum(axis=1) > margin))


def toy_problem(seed, ablation: Ablation | None = None, hidden=2, hops=1, theta_steps=1,
                order=ad.EXACT, mlp_hidden=1):
    """(problem, state, episode) on a 12-node graph with d' = ``hidden``.

    Parameters are redrawn until the point is away from ReLU kinks and every
    embedding row is nonzero. Psi gets small random values so the modulation
    is not the identity.
    """
    G = toy_graph(seed)
    h = HyperParams(hidden=hidden, mlp_hidden=mlp_hidden, hops=hops, theta_steps=theta_steps, topk=2,
                    order=order)
    ablation = ablation or Ablation()
    problem = Problem(G, h, ablation)
    for attempt in range(1000):
        state = init_state(problem.encoder, 2, h, ablation, seed=[seed, attempt])
        if _well_posed(problem, state.theta):
            break
    else:
        raise RuntimeError(f"no well-posed toy point for seed {seed}")
    rng = np.random.default_rng([seed, 1])
    state.psi = state.psi.unflatten(0.1 * rng.normal(size=state.psi.total_len))
    ep = sample_episode(G, "train", 2, 1, 2, seed=seed)
    return problem, state, ep


COMPONENTS = ("contrastive", "self_training", "query_ce", "total")


def objective_fn(problem: Problem, state: MetaState, ep: Episode):
    """Map a merged (theta, psi) ParamSet to the dict of loss components.

    The self-training target is computed once at the base point and held
    fixed, matching its treatment as a constant.
    """
    n_theta = len(state.theta)
    pseudo: dict = {}

    def f(params: ad.ParamSet) -> dict:
        names = params.names()
        theta = params.select(names[:n_theta])
        psi = params.select(names[n_theta:])
        total, terms = episode_objective(problem, ep, state, theta, psi, pseudo=pseudo)
        return {"contrastive": terms["contrastive"], "self_training": terms["self_training"],
                "query_ce": terms["query_ce"], "total": total}

    with ad.Tape():
        f(state.theta.merged(state.psi))
    return f


def component_fd_errors(f, params: ad.ParamSet, h: float = 1e-5) -> dict:
    """Max relative error of each component's gradient against central differences.

    One set of probes serves every component; the error measure matches
    :func:`adcore.finite_diff_check`.
    """
    leaves = params.leaves()
    with ad.Tape(ad.EXACT):
        out = f(leaves)
        analytic = {k: np.concatenate([np.ravel(g.value) for g in ad.grad(v, leaves.values())])
                    for k, v in out.items()}
    base = params.flatten()
    numeric = {k: np.empty_like(base) for k in out}
    for i in range(base.size):
        vals = []
        for step in (h, -h):
            probe = base.copy()
            probe[i] += step
            with ad.Tape():
                vals.append({k: v.item() for k, v in f(params.unflatten(probe, True)).items()})
        for k in out:
            numeric[k][i] = (vals[0][k] - vals[1][k]) / (2 * h)
    return {k: float(np.max(np.abs(analytic[k] - numeric[k]) / np.maximum(1.0, np.abs(numeric[k]))))
            for k in out}


def gradient_errors(seed: int) -> dict:
    problem, state, ep = toy_problem(seed)
    return component_fd_errors(objective_fn(problem, state, ep), state.theta.merged(state.psi))


def bfs_distances(n, edges) -> np.ndarray:
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    D = np.full((n, n), -1)
    for s in range(n):
        D[s, s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for w in adj[u]:
                if D[s, w] < 0:
                    D[s, w] = D[s, u] + 1
                    q.append(w)
    return D


def _check_gradients(seeds=range(3)):
    worst = max(max(gradient_errors(s).values()) for s in seeds)
    return "finite differences", worst <= FD_TOL, f"max relative error {worst:.2e}"


def _check_second_order():
    a, alpha, t0 = 1.0, 0.1, 1.0
    results = {}
    for mode in (ad.EXACT, ad.FIRST_ORDER):
        def outer(p):
            inner = a * ad.square(p["t"])
            return ad.square(ad.sgd_step(inner, p, alpha)["t"])
        results[mode] = ad.grad_of_grad(outer, ad.ParamSet([("t", np.array(t0))]), mode)["t"].item()
    exact = 2 * t0 * (1 - 2 * a * alpha) ** 2
    first = 2 * (1 - 2 * a * alpha) * t0
    ok = (abs(results[ad.EXACT] - exact) <= 1e-10 * abs(exact)
          and abs(results[ad.FIRST_ORDER] - first) <= 1e-10 * abs(first))
    return "second order toy", ok, f"exact {results[ad.EXACT]!r}, first-order {results[ad.FIRST_ORDER]!r}"


def _check_hops(seed=0):
    G = toy_graph(seed, p=0.25)
    D = bfs_distances(G.n, G.edges)
    A = G.adjacency()
    ok = all(np.array_equal(hop_adjacency(A, i).toarray() != 0, D == i) for i in (1, 2, 3))
    return "hop adjacency vs BFS", ok, ""


def _check_normalization(seed=0):
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(50):
        Z, P = rng.normal(size=(7, 3)) * 3, rng.normal(size=(3, 3))
        with ad.no_record():
            Q = C.soft_assign(ad.Tensor(Z), ad.Tensor(P)).value
            S = ad.row_softmax(ad.Tensor(Z * 10)).value
        T = C.sharpen(Q)
        kl = C.self_training_loss(ad.Tensor(Q), T).item()
        ok &= bool(np.allclose(Q.sum(1), 1, atol=1e-9) and np.allclose(S.sum(1), 1, atol=1e-9)
                   and np.allclose(T.sum(1), 1, atol=1e-9) and kl >= -1e-12)
        labels = rng.integers(0, 3, size=7)
        if len(np.unique(labels)) > 1:
            ok &= -1 <= silhouette(Z, labels) <= 1 and davies_bouldin(Z, labels) >= 0
    return "normalization", bool(ok), ""


def _check_identity_modulation(seed=0):
    problem, state, ep = toy_problem(seed, order=ad.FIRST_ORDER)
    state = state.copy()
    psi = ad.ParamSet((k, np.zeros(v.shape) if k.endswith(("W2", "b2")) else v.value)
                      for k, v in state.psi.items())
    plain = MetaState(state.theta, psi, state.hyper, Ablation(no_s2=True), state.n_way)
    with ad.Tape():
        full = run_episode(problem, state, state.theta.leaves(), psi.leaves(), ep)
    with ad.Tape():
        bare = run_episode(problem, plain, state.theta.leaves(), psi.leaves(), ep)
    ok = np.array_equal(full.query_logits, bare.query_logits)
    return "identity modulation", bool(ok), ""


def _check_episodes(seed=0):
    G = toy_graph(seed, n_classes=4, per_class=6)
    ok = True
    for s in range(20):
        ep = sample_episode(G, "train", 3, 2, 2, seed=s)
        check_episode(ep, 2, 2)
        for r in (0.0, 0.5):
            noisy = inject_noise(G, ep, r, seed=s)
            changed = sum(a != b for a, b in zip(ep.support, noisy.support))
            ok &= changed == ep.n_way * noise_count(r, 2)
    return "episode invariants", bool(ok), ""


CHECKS = (_check_gradients, _check_second_order, _check_hops, _check_normalization,
          _check_identity_modulation, _check_episodes)


def run_checks() -> list[tuple[str, bool, str]]:
    results = []
    for check in CHECKS:
        try:
            results.append(check())
        except Exception as e:  # a crash is a failed check
            results.append((check.__name__.lstrip("_"), False, f"{type(e).__name__}: {e}"))
    return results
