"""Differentiable building blocks of the meta-learner.

Everything here works on :class:`~metagps.adcore.Tensor` values except the
pseudo-label helpers (:func:`select_high_confidence`, :func:`sharpen`), which
operate on plain arrays because their outputs are treated as constants.
"""

from __future__ import annotations

import numpy as np

from .. import adcore as ad


class EmptyClassError(ValueError):
    pass


def mlp(x: ad.Tensor, params: ad.ParamSet) -> ad.Tensor:
    """relu(x W1 + b1) W2 + b2."""
    h = ad.relu(ad.matmul(x, params["W1"]) + params["b1"])
    return ad.matmul(h, params["W2"]) + params["b2"]


def averaging_matrix(labels, class_list) -> np.ndarray:
    """Row j averages the rows whose label is ``class_list[j]``."""
    labels = np.asarray(labels)
    M = np.zeros((len(class_list), len(labels)))
    for j, c in enumerate(class_list):
        members = labels == c
        count = int(members.sum())
        if count == 0:
            raise EmptyClassError(f"class {c} has no contributing nodes")
        M[j, members] = 1.0 / count
    return M


def prototypes(Z: ad.Tensor, labels, class_list) -> ad.Tensor:
    """Per-class mean embedding, one row per entry of ``class_list``."""
    return ad.matmul(ad.Tensor(averaging_matrix(labels, class_list)), Z)


def proto_init(P: ad.Tensor, theta_p: ad.ParamSet) -> ad.Tensor:
    """Class-specific head weights phi_j = MLP(P_j)."""
    return mlp(P, theta_p)


def logits(Z: ad.Tensor, phi: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.matmul(Z, ad.transpose(phi)) + b


def score(Z: ad.Tensor, phi: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.row_softmax(logits(Z, phi, b))


def cross_entropy(Z: ad.Tensor, targets, phi: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Mean categorical cross-entropy of the head on the given rows."""
    targets = np.asarray(targets, dtype=np.intp)
    logp = ad.log_softmax(logits(Z, phi, b))
    picked = ad.getitem(logp, (np.arange(len(targets)), targets))
    return -ad.tmean(picked)


def adapt_phi(phi: ad.Tensor, Z_support: ad.Tensor, targets, b: ad.Tensor,
              alpha: float, steps: int = 1) -> ad.Tensor:
    """Gradient descent on the head weights alone, using the support loss."""
    for _ in range(steps):
        loss = cross_entropy(Z_support, targets, phi, b)
        phi = ad.sgd_step(loss, ad.ParamSet([("phi", phi)]), alpha)["phi"]
    return phi


def contrastive_loss(Z_task: ad.Tensor, labels, P_task: ad.Tensor, tau: float) -> ad.Tensor:
    """Supervised contrastive loss with the class prototype as an extra positive.

    ``labels`` index rows of ``P_task``. For anchor i the candidates are every
    other task node plus its own class prototype; positives are same-class
    nodes plus that prototype. Per-anchor terms are scaled by 1/|class size|
    and summed.
    """
    labels = np.asarray(labels, dtype=np.intp)
    n = len(labels)
    U = ad.row_l2_normalize(Z_task)
    V = ad.row_l2_normalize(P_task)
    inv_tau = 1.0 / tau
    node_logits = ad.matmul(U, ad.transpose(U)) * inv_tau
    proto_logits = ad.tsum(U * ad.gather_rows(V, labels), axis=1, keepdims=True) * inv_tau
    L = ad.concat([node_logits, proto_logits], axis=1)

    others = np.ones((n, n + 1))
    others[np.arange(n), np.arange(n)] = 0.0
    same = (labels[:, None] == labels[None, :]).astype(float)
    positives = np.concatenate([same, np.ones((n, 1))], axis=1) * others
    class_size = np.bincount(labels, minlength=int(labels.max()) + 1)[labels].astype(float)

    # cosine logits are bounded by 1/tau, a safe shift for the exponentials
    log_norm = ad.log(ad.tsum(ad.exp(L - inv_tau) * ad.Tensor(others), axis=1)) + inv_tau
    pos_sum = ad.tsum(L * ad.Tensor(positives), axis=1)
    n_pos = positives.sum(axis=1)
    per_anchor = -(pos_sum - ad.Tensor(n_pos) * log_norm) / ad.Tensor(class_size)
    return ad.tsum(per_anchor)


def soft_assign(Z_pool: ad.Tensor, P: ad.Tensor) -> ad.Tensor:
    """Student-t (one degree of freedom) assignment of rows to prototypes."""
    kernel = 1.0 / (1.0 + ad.sqdist(Z_pool, P))
    return kernel / ad.tsum(kernel, axis=1, keepdims=True)


def select_high_confidence(Q: np.ndarray, K: int) -> np.ndarray:
    """Sorted union over columns of the K rows with the largest entries.

    Ties go to the smaller row index.
    """
    Q = np.asarray(Q, dtype=np.float64)
    n = Q.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    k = min(K, n)
    chosen = set()
    for j in range(Q.shape[1]):
        order = np.argsort(-Q[:, j], kind="stable")
        chosen.update(order[:k].tolist())
    return np.array(sorted(chosen), dtype=np.intp)


def sharpen(Q_hc: np.ndarray) -> np.ndarray:
    """Square and frequency-normalize, z_j taken over the given rows."""
    Q_hc = np.asarray(Q_hc, dtype=np.float64)
    z = Q_hc.sum(axis=0)
    w = Q_hc**2 / z
    return w / w.sum(axis=1, keepdims=True)


def self_training_loss(Q_soft: ad.Tensor, Q_target: np.ndarray) -> ad.Tensor:
    """KL(target || soft), summed over rows; the target is a constant."""
    Q_target = np.asarray(Q_target, dtype=np.float64)
    if Q_target.size == 0:
        return ad.Tensor(0.0)
    zero = Q_target == 0
    if np.any((Q_soft.value == 0) & ~zero):
        raise ValueError("soft assignment is zero where the target is positive")
    entropy_part = float(np.sum(np.where(zero, 0.0, Q_target * np.log(np.where(zero, 1.0, Q_target)))))
    cross = ad.tsum(ad.Tensor(Q_target) * ad.log(Q_soft + ad.Tensor(zero.astype(float))))
    return entropy_part - cross


def modulation(t: ad.Tensor, psi: ad.ParamSet) -> tuple[ad.Tensor, ad.Tensor]:
    """Raw scaling and shifting vectors from the task embedding ``t`` (1 x d')."""
    lam = mlp(t, _sub(psi, "lam."))
    mu = mlp(t, _sub(psi, "mu."))
    size = lam.shape[1]
    return ad.reshape(lam, (size,)), ad.reshape(mu, (size,))


def s2_modulate(Z_support: ad.Tensor, psi: ad.ParamSet, theta: ad.ParamSet) -> ad.ParamSet:
    """Theta_i = (1 + lambda) * Theta + mu with t = mean support embedding."""
    t = ad.tmean(Z_support, axis=0, keepdims=True)
    lam, mu = modulation(t, psi)
    flat = theta.flat()
    return theta.from_flat((1.0 + lam) * flat + mu)


def _sub(params: ad.ParamSet, prefix: str) -> ad.ParamSet:
    return ad.ParamSet((k[len(prefix):], v) for k, v in params.items() if k.startswith(prefix))
