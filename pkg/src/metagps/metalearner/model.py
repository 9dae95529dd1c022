"""Meta-learner state and the per-episode pipeline."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import adcore as ad
from ..encoder import GraphEncoder, glorot
from ..episodes import Episode
from ..graphcore import Graph
from . import components as C


@dataclass
class HyperParams:
    alpha: float = 0.5
    beta: float = 0.001
    xi: float = 0.1
    zeta: float = 0.1
    gamma: float = 0.001
    tau: float = 0.5
    topk: int = 30
    phi_steps: int = 1
    theta_steps: int = 5
    order: str = ad.FIRST_ORDER
    hidden: int = 16
    mlp_hidden: int = 16
    hops: int = 2
    sgc_power: int = 2
    pool_cap: int = 2048
    optimizer: str = "adam"

    def __post_init__(self):
        if self.order not in ad.MODES:
            raise ValueError(f"order must be one of {ad.MODES}, got {self.order!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass
class Ablation:
    no_st: bool = False
    no_s2: bool = False
    sgc_encoder: bool = False
    no_cl: bool = False
    no_pi: bool = False

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


VARIANTS = {
    "full": Ablation(),
    "w/o ST": Ablation(no_st=True),
    "w/o S2": Ablation(no_s2=True),
    "w/o SGC": Ablation(sgc_encoder=True),
    "w/o CL": Ablation(no_cl=True),
    "w/o PI": Ablation(no_pi=True),
}


@dataclass
class MetaState:
    theta: ad.ParamSet
    psi: ad.ParamSet
    hyper: HyperParams = field(default_factory=HyperParams)
    ablation: Ablation = field(default_factory=Ablation)
    n_way: int = 5

    def copy(self) -> "MetaState":
        return MetaState(self.theta.detached(), self.psi.detached(),
                         HyperParams(**asdict(self.hyper)), Ablation(**asdict(self.ablation)),
                         self.n_way)


def sub(params: ad.ParamSet, prefix: str) -> ad.ParamSet:
    return C._sub(params, prefix)


def _mlp_params(rng, prefix, d_in, d_hidden, d_out, zero_last=False) -> list:
    W2 = np.zeros((d_hidden, d_out)) if zero_last else glorot(rng, d_hidden, d_out)
    return [
        (prefix + "W1", glorot(rng, d_in, d_hidden)),
        (prefix + "b1", np.zeros(d_hidden)),
        (prefix + "W2", W2),
        (prefix + "b2", np.zeros(d_out)),
    ]


def init_state(encoder: GraphEncoder, n_way: int, hyper: HyperParams | None = None,
               ablation: Ablation | None = None, seed=0) -> MetaState:
    hyper = hyper or HyperParams()
    ablation = ablation or Ablation()
    rng = np.random.default_rng(seed)
    d = hyper.hidden
    enc = encoder.init(rng, d)
    theta = ad.ParamSet(
        [("enc." + k, v) for k, v in enc.items()]
        + _mlp_params(rng, "proto.", d, hyper.mlp_hidden, d)
        + [("head.b", np.zeros(n_way))]
    )
    size = theta.total_len
    psi = ad.ParamSet(
        _mlp_params(rng, "lam.", d, hyper.mlp_hidden, size, zero_last=True)
        + _mlp_params(rng, "mu.", d, hyper.mlp_hidden, size, zero_last=True)
    )
    return MetaState(theta, psi, hyper, ablation, n_way)


class Problem:
    """A graph prepared for meta-learning under one encoder variant."""

    def __init__(self, G: Graph, hyper: HyperParams | None = None, ablation: Ablation | None = None):
        hyper = hyper or HyperParams()
        ablation = ablation or Ablation()
        self.G = G
        self.encoder = GraphEncoder(
            G, kind="sgc" if ablation.sgc_encoder else "hop",
            hops=hyper.hops, sgc_power=hyper.sgc_power,
        )

    def embed(self, theta: ad.ParamSet, rows=None) -> ad.Tensor:
        return self.encoder(sub(theta, "enc."), rows=rows)


@dataclass
class EpisodeResult:
    query_ce: ad.Tensor
    contrastive: ad.Tensor
    self_training: ad.Tensor
    query_logits: np.ndarray
    query_targets: np.ndarray

    def predictions(self) -> np.ndarray:
        return np.argmax(self.query_logits, axis=1)

    def accuracy(self) -> float:
        return float(np.mean(self.predictions() == self.query_targets))


def _random_phi(ep: Episode, n_way: int, d: int) -> ad.Tensor:
    rng = np.random.default_rng([int(v) for v, _ in ep.support])
    return ad.Tensor(glorot(rng, d, n_way).T, requires_grad=True)


def run_episode(problem: Problem, state: MetaState, theta: ad.ParamSet, psi: ad.ParamSet,
                ep: Episode, training: bool = True, pseudo: dict | None = None) -> EpisodeResult:
    """Forward pipeline for one task on the active tape.

    During training the prototypes use every labelled node of the episode's
    classes and the contrastive/self-training terms are computed; at test time
    prototypes come from the support set only and both terms are zero.

    ``pseudo`` caches the self-training selection and target: when it already
    holds ``rows`` and ``target`` those are reused, otherwise they are stored
    into it. Gradient checks use this to hold the constant target fixed.
    """
    h, ab = state.hyper, state.ablation
    G = problem.G
    classes = list(ep.classes)
    s_nodes, q_nodes = ep.support_nodes(), ep.query_nodes()
    s_t, q_t = ep.support_targets(), ep.query_targets()

    if training:
        Z = problem.embed(theta)
        Z_s = ad.gather_rows(Z, s_nodes)
        members = np.flatnonzero(np.isin(G.y, classes))
        P = C.prototypes(ad.gather_rows(Z, members), G.y[members], classes)
    else:
        Z_s = problem.embed(theta, rows=s_nodes)
        P = C.prototypes(Z_s, s_t, range(len(classes)))

    b = theta["head.b"]
    if ab.no_pi:
        phi = _random_phi(ep, len(classes), h.hidden)
    else:
        phi = C.proto_init(P, sub(theta, "proto."))
    phi = C.adapt_phi(phi, Z_s, s_t, b, h.alpha, h.phi_steps)

    zero = ad.Tensor(0.0)
    cl = st = zero
    if training and not ab.no_cl and h.xi != 0:
        task_nodes = np.concatenate([s_nodes, q_nodes])
        task_labels = np.concatenate([s_t, q_t])
        cl = C.contrastive_loss(ad.gather_rows(Z, task_nodes), task_labels, P, h.tau)
    if training and not ab.no_st and h.zeta != 0 and len(ep.pool):
        Q_soft = C.soft_assign(ad.gather_rows(Z, np.asarray(ep.pool)), P)
        if pseudo is not None and "rows" in pseudo:
            rows, target = pseudo["rows"], pseudo["target"]
            Q_hc = ad.gather_rows(Q_soft, rows)
        else:
            rows = C.select_high_confidence(Q_soft.value, h.topk)
            Q_hc = ad.gather_rows(Q_soft, rows)
            target = C.sharpen(Q_hc.value)
            if pseudo is not None:
                pseudo.update(rows=rows, target=target)
        st = C.self_training_loss(Q_hc, target)

    task_theta = theta if ab.no_s2 else C.s2_modulate(Z_s, psi, theta)
    enc_names = ["enc." + k for k in problem.encoder.param_names]
    adapted = task_theta.select(enc_names + ["head.b"])
    for _ in range(h.theta_steps):
        Zs = problem.embed(adapted, rows=s_nodes)
        loss = C.cross_entropy(Zs, s_t, phi, adapted["head.b"])
        # the head is held fixed: the step is the partial gradient in the encoder
        adapted = ad.sgd_step(loss, adapted, h.alpha, hold=[phi])

    Z_q = problem.embed(adapted, rows=q_nodes)
    q_logits = C.logits(Z_q, phi, adapted["head.b"])
    logp = ad.log_softmax(q_logits)
    q_ce = -ad.tmean(ad.getitem(logp, (np.arange(len(q_t)), q_t)))
    return EpisodeResult(q_ce, cl, st, q_logits.value.copy(), q_t)


def psi_penalty(psi: ad.ParamSet) -> ad.Tensor:
    total = ad.Tensor(0.0)
    for t in psi.values():
        total = total + ad.tsum(ad.square(t))
    return total


def episode_objective(problem: Problem, ep: Episode, state: MetaState,
                      theta: ad.ParamSet | None = None, psi: ad.ParamSet | None = None,
                      pseudo: dict | None = None):
    """Weighted training objective of one task and its components.

    Returns ``(total, terms)`` where ``terms`` holds the already weighted
    ``query_ce``, ``contrastive``, ``self_training`` and ``psi_penalty``
    tensors; they sum to ``total``.
    """
    h = state.hyper
    theta = state.theta if theta is None else theta
    psi = state.psi if psi is None else psi
    res = run_episode(problem, state, theta, psi, ep, training=True, pseudo=pseudo)
    reg = ad.Tensor(0.0) if state.ablation.no_s2 or h.gamma == 0 else h.gamma * psi_penalty(psi)
    terms = {
        "query_ce": res.query_ce,
        "contrastive": h.xi * res.contrastive,
        "self_training": h.zeta * res.self_training,
        "psi_penalty": reg,
    }
    total = terms["query_ce"] + terms["contrastive"] + terms["self_training"] + terms["psi_penalty"]
    return total, terms
