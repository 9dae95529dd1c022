"""Meta-training (outer loop) and meta-testing."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import adcore as ad
from ..episodes import Episode, episode_stream, fixed_episodes
from ..graphcore import Graph
from ..metrics import MetricsReport, macro_f1
from .model import MetaState, Problem, episode_objective, psi_penalty, run_episode

log = logging.getLogger(__name__)

COMPONENTS = ("query_ce", "contrastive", "self_training", "psi_penalty")


class TrainingError(RuntimeError):
    pass


@dataclass
class Schedule:
    """Outer-loop schedule. An epoch is ``batches_per_epoch`` meta-batches
    followed by one validation pass."""

    N: int = 5
    K: int = 5
    M: int = 10
    batch_size: int = 10
    epochs: int = 100
    batches_per_epoch: int = 1
    patience: int = 50
    val_tasks: int = 50
    noise_ratio: float = 0.0
    seed: int = 0


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float | None = None
    stopped_early: bool = False


class Adam:
    def __init__(self, size: int, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grads
        self.v = self.b2 * self.v + (1 - self.b2) * grads * grads
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, size: int, lr: float):
        self.lr = lr

    def step(self, params, grads):
        return params - self.lr * grads


def batch_gradient(problem: Problem, state: MetaState, episodes: list[Episode]):
    """Summed objective over a batch and its flat gradient w.r.t. (theta, psi).

    Episodes are processed on separate tapes in index order; the penalty on
    psi is added once per batch.
    """
    h = state.hyper
    n_theta = state.theta.total_len
    grad_flat = np.zeros(n_theta + state.psi.total_len)
    sums = dict.fromkeys(COMPONENTS, 0.0)
    for i, ep in enumerate(episodes):
        with ad.Tape(h.order):
            theta, psi = state.theta.leaves(), state.psi.leaves()
            h_zero = MetaState(theta, psi, replace(h, gamma=0.0), state.ablation, state.n_way)
            total, terms = episode_objective(problem, ep, h_zero, theta, psi)
            for name in ("query_ce", "contrastive", "self_training"):
                value = terms[name].item()
                if not np.isfinite(value):
                    raise TrainingError(f"non-finite {name} ({value}) in episode {i}")
                sums[name] += value
            grads = ad.backward(total, theta.merged(psi))
        grad_flat += grads.flatten()

    if not state.ablation.no_s2 and h.gamma != 0:
        with ad.Tape():
            psi = state.psi.leaves()
            reg = h.gamma * psi_penalty(psi)
            g = ad.backward(reg, psi).flatten()
        sums["psi_penalty"] = reg.item()
        grad_flat[n_theta:] += g
    total = sums["query_ce"] + sums["contrastive"] + sums["self_training"] + sums["psi_penalty"]
    return total, sums, grad_flat


def evaluate(problem: Problem, state: MetaState, episodes: list[Episode]):
    """Per-task (accuracy, macro-F1, query CE, predictions) without CL/ST."""
    records = []
    for ep in episodes:
        with ad.Tape(ad.FIRST_ORDER):
            res = run_episode(problem, state, state.theta.leaves(), state.psi.leaves(), ep,
                              training=False)
        preds = res.predictions()
        records.append({
            "accuracy": float(np.mean(preds == res.query_targets)),
            "macro_f1": macro_f1(preds, res.query_targets, range(ep.n_way)),
            "query_ce": res.query_ce.item(),
        })
    return records


def meta_train(G: Graph, state: MetaState, schedule: Schedule,
               problem: Problem | None = None, on_record=None) -> tuple[MetaState, TrainLog]:
    """Algorithm loop: batches of tasks, one outer step per batch.

    Returns the snapshot with the best validation accuracy (the final state if
    there is no usable validation split) and the per-batch log.
    """
    problem = problem or Problem(G, state.hyper, state.ablation)
    h = state.hyper
    state = state.copy()
    n_theta = state.theta.total_len
    params = np.concatenate([state.theta.flatten(), state.psi.flatten()])
    opt = (Adam if h.optimizer == "adam" else SGD)(params.size, h.beta)

    seeds = np.random.SeedSequence(schedule.seed).spawn(2)
    stream = episode_stream(G, "train", schedule.N, schedule.K, schedule.M, schedule.batch_size,
                            seed=int(seeds[0].generate_state(1)[0]), pool_cap=h.pool_cap,
                            noise_ratio=schedule.noise_ratio)
    val_eps = []
    if schedule.val_tasks and len(G.class_split["val"]) >= schedule.N:
        val_eps = fixed_episodes(G, "val", schedule.N, schedule.K, schedule.M, schedule.val_tasks,
                                 seed=int(seeds[1].generate_state(1)[0]),
                                 noise_ratio=schedule.noise_ratio)

    out = TrainLog()
    best = state.copy()
    best_loss, since_improved = np.inf, 0
    batch_no = 0
    for epoch in range(schedule.epochs):
        for b in range(schedule.batches_per_epoch):
            total, sums, grads = batch_gradient(problem, state, next(stream))
            params = opt.step(params, grads)
            state.theta = state.theta.unflatten(params[:n_theta])
            state.psi = state.psi.unflatten(params[n_theta:])
            record = {"epoch": epoch, "batch": batch_no, "total_loss": total}
            record.update(sums)
            record["val_accuracy"] = None
            if b == schedule.batches_per_epoch - 1 and val_eps:
                recs = evaluate(problem, state, val_eps)
                val_acc = float(np.mean([r["accuracy"] for r in recs]))
                val_loss = float(np.mean([r["query_ce"] for r in recs]))
                record["val_accuracy"] = val_acc
                record["val_loss"] = val_loss
                if out.best_val_accuracy is None or val_acc > out.best_val_accuracy:
                    out.best_val_accuracy, out.best_epoch = val_acc, epoch
                    best = state.copy()
                if val_loss < best_loss:
                    best_loss, since_improved = val_loss, 0
                else:
                    since_improved += 1
            out.records.append(record)
            if on_record is not None:
                on_record(record)
            batch_no += 1
        if val_eps and since_improved >= schedule.patience:
            out.stopped_early = True
            log.info("early stop at epoch %d", epoch)
            break
    if not val_eps:
        best = state
        out.best_epoch = len(out.records) and out.records[-1]["epoch"]
    return best, out


def meta_test(G: Graph, state: MetaState, N: int | None = None, K: int = 5, M: int = 10,
              n_tasks: int = 200, repeats: int = 10, seed: int = 0, noise_ratio: float = 0.0,
              problem: Problem | None = None) -> MetricsReport:
    """Mean/std of accuracy and macro-F1 over ``repeats`` sets of test tasks."""
    N = state.n_way if N is None else N
    problem = problem or Problem(G, state.hyper, state.ablation)
    start = time.perf_counter()
    accs, f1s, tasks = [], [], []
    for r, ss in enumerate(np.random.SeedSequence(seed).spawn(repeats)):
        eps = fixed_episodes(G, "test", N, K, M, n_tasks, seed=int(ss.generate_state(1)[0]),
                             noise_ratio=noise_ratio)
        recs = evaluate(problem, state, eps)
        for rec in recs:
            rec["repeat"] = r
        tasks += recs
        accs.append(float(np.mean([x["accuracy"] for x in recs])))
        f1s.append(float(np.mean([x["macro_f1"] for x in recs])))
    return MetricsReport(accuracy=accs, macro_f1=f1s, tasks=tasks,
                         wall_clock=time.perf_counter() - start)
