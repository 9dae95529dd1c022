"""Brute-force reference implementations used as test oracles.

These are deliberately naive (explicit loops, dense matrices) and share no
code with the package.
"""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np


def bfs_distance_matrix(n, edges):
    adj = {u: set() for u in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    D = np.full((n, n), -1, dtype=int)
    for s in range(n):
        D[s, s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for w in sorted(adj[u]):
                if D[s, w] < 0:
                    D[s, w] = D[s, u] + 1
                    q.append(w)
    return D


def homophily(n, edges, labels):
    nbrs = {u: [] for u in range(n)}
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    total = 0.0
    for v in range(n):
        if nbrs[v]:
            total += sum(labels[u] == labels[v] for u in nbrs[v]) / len(nbrs[v])
    return total / n


def dense_sym_normalize(B):
    B = np.asarray(B, dtype=float)
    out = np.zeros_like(B)
    deg = B.sum(axis=1)
    for u in range(len(B)):
        for v in range(len(B)):
            if B[u, v]:
                out[u, v] = B[u, v] / math.sqrt(deg[u] * deg[v])
    return out


def prototypes(Z, labels, classes):
    out = []
    for c in classes:
        rows = [Z[i] for i in range(len(labels)) if labels[i] == c]
        out.append(sum(rows) / len(rows))
    return np.array(out)


def soft_assign(Z, P):
    Q = np.zeros((len(Z), len(P)))
    for i in range(len(Z)):
        k = [1.0 / (1.0 + sum((Z[i][d] - P[j][d]) ** 2 for d in range(len(P[j]))))
             for j in range(len(P))]
        for j in range(len(P)):
            Q[i, j] = k[j] / sum(k)
    return Q


def select_high_confidence(Q, K):
    n, m = len(Q), len(Q[0]) if len(Q) else 0
    chosen = set()
    for j in range(m):
        # sort by value descending, then by row index ascending
        ranked = sorted(range(n), key=lambda i: (-Q[i][j], i))
        chosen.update(ranked[: min(K, n)])
    return sorted(chosen)


def sharpen(Q):
    Q = np.asarray(Q, dtype=float)
    n, m = Q.shape
    z = [sum(Q[i, j] for i in range(n)) for j in range(m)]
    out = np.zeros_like(Q)
    for i in range(n):
        w = [Q[i, j] ** 2 / z[j] for j in range(m)]
        for j in range(m):
            out[i, j] = w[j] / sum(w)
    return out


def kl_rows(target, soft):
    total = 0.0
    for p_row, q_row in zip(target, soft):
        for p, q in zip(p_row, q_row):
            if p > 0:
                total += p * math.log(p / q)
    return total


def contrastive(Z, labels, P, tau):
    """Literal sum over anchors, positives and candidates."""
    def unit(v):
        return np.asarray(v, dtype=float) / math.sqrt(sum(x * x for x in v))

    U = [unit(z) for z in Z]
    V = [unit(p) for p in P]
    n = len(U)
    total = 0.0
    for i in range(n):
        cands = [U[k] for k in range(n) if k != i] + [V[labels[i]]]
        pos = [U[k] for k in range(n) if k != i and labels[k] == labels[i]] + [V[labels[i]]]
        denom = sum(math.exp(float(U[i] @ c) / tau) for c in cands)
        class_size = sum(1 for k in range(n) if labels[k] == labels[i])
        term = sum(-math.log(math.exp(float(U[i] @ p) / tau) / denom) for p in pos)
        total += term / class_size
    return total


def silhouette(E, labels):
    E = np.asarray(E, dtype=float)
    n = len(E)
    scores = []
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            scores.append(0.0)
            continue
        a = sum(np.linalg.norm(E[i] - E[j]) for j in same) / len(same)
        b = math.inf
        for c in set(labels):
            if c == labels[i]:
                continue
            other = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(np.linalg.norm(E[i] - E[j]) for j in other) / len(other))
        m = max(a, b)
        scores.append(0.0 if m == 0 else (b - a) / m)
    return sum(scores) / n


def davies_bouldin(E, labels):
    E = np.asarray(E, dtype=float)
    classes = sorted(set(labels))
    cent, scat = {}, {}
    for c in classes:
        pts = [E[i] for i in range(len(E)) if labels[i] == c]
        cent[c] = sum(pts) / len(pts)
        scat[c] = sum(np.linalg.norm(p - cent[c]) for p in pts) / len(pts)
    total = 0.0
    for c in classes:
        total += max((scat[c] + scat[d]) / np.linalg.norm(cent[c] - cent[d])
                     for d in classes if d != c)
    return total / len(classes)


def macro_f1(preds, labels, classes):
    scores = []
    for c in classes:
        tp = fp = fn = 0
        for p, t in zip(preds, labels):
            tp += p == c and t == c
            fp += p == c and t != c
            fn += p != c and t == c
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / len(scores)


def macro_f1_table(length, n_classes):
    """(preds, labels) -> macro-F1 over every pair of vectors of the given length."""
    vectors = list(itertools.product(range(n_classes), repeat=length))
    return vectors, {(p, t): macro_f1(p, t, range(n_classes)) for p in vectors for t in vectors}


def spectral_radius(M, iters=2000, seed=0):
    """Power iteration on M^T M; returns sqrt of the dominant eigenvalue."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=M.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = M.T @ (M @ x)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        lam, x = nrm / np.linalg.norm(x), y / nrm
    return math.sqrt(lam)
