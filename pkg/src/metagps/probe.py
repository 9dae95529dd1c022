"""Linear probe: multinomial logistic regression on fixed features.

Used to calibrate synthetic feature noise and to score dumped embeddings.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp


def fit_logistic(X: np.ndarray, y: np.ndarray, n_classes: int, l2: float = 1e-3,
                 max_iter: int = 500) -> np.ndarray:
    """Weights (d+1, C) minimizing mean cross-entropy plus l2 * ||W||^2."""
    X = np.asarray(X, dtype=np.float64)
    Xb = np.hstack([X, np.ones((len(X), 1))])
    Y = np.eye(n_classes)[np.asarray(y)]
    d1 = Xb.shape[1]

    def f(w):
        W = w.reshape(d1, n_classes)
        S = Xb @ W
        lse = logsumexp(S, axis=1)
        loss = np.mean(lse - np.sum(S * Y, axis=1)) + l2 * np.sum(W[:-1] ** 2)
        P = np.exp(S - lse[:, None])
        g = Xb.T @ (P - Y) / len(X)
        g[:-1] += 2 * l2 * W[:-1]
        return loss, g.ravel()

    res = minimize(f, np.zeros(d1 * n_classes), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter})
    return res.x.reshape(d1, n_classes)


def predict(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    Xb = np.hstack([np.asarray(X, dtype=np.float64), np.ones((len(X), 1))])
    return np.argmax(Xb @ W, axis=1)


def linear_probe(X, y, train_frac: float = 0.5, seed=0, l2: float = 1e-3) -> float:
    """Held-out accuracy of a logistic-regression probe on a stratified split."""
    X, y = np.asarray(X, dtype=np.float64), np.asarray(y)
    classes = np.unique(y)
    rng = np.random.default_rng(seed)
    train = np.zeros(len(y), dtype=bool)
    for c in classes:
        idx = np.flatnonzero(y == c)
        k = max(1, int(round(train_frac * len(idx))))
        train[rng.choice(idx, size=k, replace=False)] = True
    if train.all():
        raise ValueError("probe split leaves no held-out nodes")
    remap = np.searchsorted(classes, y)
    W = fit_logistic(X[train], remap[train], len(classes), l2=l2)
    return float(np.mean(predict(W, X[~train]) == remap[~train]))


def calibrate_noise(make_graph, target: float = 0.6, lo: float = 0.05, hi: float = 3.0,
                    iters: int = 14, seed=0) -> float:
    """Bisect the feature noise so that the raw-feature probe scores ``target``.

    ``make_graph(noise)`` must return a Graph. Probe accuracy is treated as
    decreasing in the noise level.
    """
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        G = make_graph(mid)
        if linear_probe(G.X, G.y, seed=seed) > target:
            lo = mid
        else:
            hi = mid
    return round(0.5 * (lo + hi), 3)
