import numpy as np
import pytest

from metagps.graphcore import generate_sbm
from metagps.probe import calibrate_noise, fit_logistic, linear_probe, predict


def test_separable_features_probe_perfectly():
    y = np.repeat([0, 1, 2], 20)
    X = np.eye(3)[y] * 5 + np.random.default_rng(0).normal(size=(60, 3)) * 0.1
    assert linear_probe(X, y, seed=0) == 1.0


def test_noise_features_probe_near_chance():
    rng = np.random.default_rng(1)
    y = np.repeat(np.arange(4), 200)
    acc = linear_probe(rng.normal(size=(800, 8)), y, seed=1)
    assert abs(acc - 0.25) <= 0.06


def test_fit_matches_gradient_stationarity():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(40, 3)), rng.integers(0, 3, size=40)
    l2 = 1e-2
    W = fit_logistic(X, y, 3, l2=l2)
    Xb = np.hstack([X, np.ones((40, 1))])
    S = Xb @ W
    P = np.exp(S - S.max(1, keepdims=True))
    P /= P.sum(1, keepdims=True)
    g = Xb.T @ (P - np.eye(3)[y]) / 40
    g[:-1] += 2 * l2 * W[:-1]
    assert np.max(np.abs(g)) <= 1e-4
    assert predict(W, X).shape == (40,)


def test_probe_needs_held_out_nodes():
    with pytest.raises(ValueError):
        linear_probe(np.zeros((2, 1)), [0, 1], train_frac=1.0)


def test_calibrated_noise_hits_target():
    make = lambda s: generate_sbm(6, 60, 0.05, 0.005, 8, s, seed=0)
    noise = calibrate_noise(make, target=0.6, iters=12)
    acc = linear_probe(make(noise).X, make(noise).y, seed=0)
    assert abs(acc - 0.6) <= 0.05
