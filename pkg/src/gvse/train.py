"""Loss stack, triplet mining, Adam, and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericFault
from .model import GvseModel
from .tensor import Param, Tensor

logger = logging.getLogger(__name__)


@dataclass
class LossWeights:
    gamma: float = 0.5  # weight of the word-vector regression term
    alpha: float = 1.0  # triplet margin
    bias_weight: float = 1.0  # transductive bias term weight

    def __post_init__(self):
        if self.gamma < 0 or self.alpha < 0:
            raise ContractError("gamma and alpha must be non-negative")


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self):
        return len(self.anchors)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    gamma: float = 0.5
    alpha: float = 1.0
    transductive: bool = False
    bias_weight: float = 1.0
    seed: int = 0


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_attribute_ce(phi_x: Tensor, labels: np.ndarray, att_seen: np.ndarray) -> Tensor:
    """Softmax cross-entropy over seen classes, scored by phi(x)^T phi(y).

    `labels` index rows of `att_seen` (the seen-class attribute matrix).
    """
    n = phi_x.shape[0]
    s = att_seen.shape[0]
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= s:
        raise ContractError(f"labels must index the {s} seen classes")
    scores = T.matmul(phi_x, Tensor(att_seen.T))  # N x S
    lse = T.logsumexp(scores)
    onehot = np.zeros((n, s))
    onehot[np.arange(n), labels] = 1.0
    correct = T.tsum(T.mul(scores, Tensor(onehot)))
    return T.scale(T.sub(T.tsum(lse), correct), 1.0 / n)


def loss_triplet(lat: Tensor, triplets: TripletBatch, alpha: float = 1.0) -> Tensor:
    """Mean hinge over triplets of squared-distance margins."""
    if len(triplets) == 0:
        logger.warning("empty triplet batch; triplet loss is 0")
        return Tensor(0.0)
    h = lat.shape[1]
    ones = Tensor(np.ones((h, 1)))
    a = T.gather_rows(lat, triplets.anchors)
    p = T.gather_rows(lat, triplets.positives)
    ng = T.gather_rows(lat, triplets.negatives)
    dpos = T.matmul(T.mul(T.sub(a, p), T.sub(a, p)), ones)
    dneg = T.matmul(T.mul(T.sub(a, ng), T.sub(a, ng)), ones)
    margin = T.add(T.sub(dpos, dneg), Tensor(np.full((len(triplets), 1), alpha)))
    return T.scale(T.tsum(T.relu(margin)), 1.0 / len(triplets))


def loss_wordvec(word_preds: list[Tensor], labels: np.ndarray,
                 membership: np.ndarray, targets: np.ndarray) -> Tensor:
    """MSE of the last GCN block's squeezed output against attribute word
    vectors, summed over each sample's member attributes only."""
    if not word_preds:
        raise ContractError("no word-vector predictions given")
    total = None
    for pred, y in zip(word_preds, labels):
        member = membership[y]
        if member.sum() == 0:
            raise ContractError(f"class {y} has no member attributes")
        mask = Tensor(member.astype(np.float64).reshape(-1, 1))
        diff = T.sub(pred, Tensor(targets))
        term = T.tsum(T.mul(mask, T.mul(diff, diff)))
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / len(word_preds))


def loss_bias(phi_x: Tensor, att_all: np.ndarray, unseen_ids: np.ndarray) -> Tensor:
    """QFSL-style bias term: -log of the softmax mass on unseen classes."""
    n = phi_x.shape[0]
    scores = T.matmul(phi_x, Tensor(att_all.T))  # N x |Y|
    lse_all = T.logsumexp(scores)
    unseen_scores = T.matmul(phi_x, Tensor(att_all[unseen_ids].T))
    lse_unseen = T.logsumexp(unseen_scores)
    return T.scale(T.tsum(T.sub(lse_all, lse_unseen)), 1.0 / n)


def loss_total(l_a: Tensor, l_lt: Tensor, l_w: Tensor | None, weights: LossWeights,
               l_b: Tensor | None = None, transductive: bool = False) -> Tensor:
    total = T.add(l_a, l_lt)
    if l_w is not None and weights.gamma != 0.0:
        total = T.add(total, T.scale(l_w, weights.gamma))
    if transductive:
        if l_b is None:
            raise ContractError("transductive training requires an unlabeled-batch bias term")
        total = T.add(total, T.scale(l_b, weights.bias_weight))
    return total


def mine_triplets(labels: np.ndarray, rng: np.random.Generator) -> TripletBatch:
    """Random within-batch mining: one positive and one negative per anchor."""
    labels = np.asarray(labels)
    anchors, positives, negatives = [], [], []
    for i, y in enumerate(labels):
        pos_pool = np.where((labels == y) & (np.arange(len(labels)) != i))[0]
        neg_pool = np.where(labels != y)[0]
        if pos_pool.size == 0 or neg_pool.size == 0:
            continue
        anchors.append(i)
        positives.append(int(rng.choice(pos_pool)))
        negatives.append(int(rng.choice(neg_pool)))
    return TripletBatch(np.array(anchors, dtype=np.int64),
                        np.array(positives, dtype=np.int64),
                        np.array(negatives, dtype=np.int64))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)  # param id -> first moment
    v: dict = field(default_factory=dict)  # param id -> second moment


def adam_step(params: list[Param], state: OptimizerState) -> None:
    """Bias-corrected Adam update; zeroes grads afterwards."""
    state.step += 1
    t = state.step
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericFault(f"NaN/Inf gradient in {p.name}")
        m = state.m.setdefault(p.id, np.zeros_like(p.data))
        v = state.v.setdefault(p.id, np.zeros_like(p.data))
        m += (1.0 - state.beta1) * (p.grad - m)
        v += (1.0 - state.beta2) * (p.grad * p.grad - v)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.zero_grad()


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train_epoch(model: GvseModel, dataset, config: TrainConfig, rng: np.random.Generator,
                state: OptimizerState, weights: LossWeights) -> dict:
    """One pass over the seen training samples in shuffled mini-batches."""
    t0 = time.perf_counter()
    seen_ids = np.asarray(dataset.split.seen)
    seen_pos = {y: i for i, y in enumerate(seen_ids)}
    train_idx = np.where(np.isin(dataset.labels, seen_ids))[0]
    order = train_idx[rng.permutation(len(train_idx))]
    att_seen = dataset.cam.values[seen_ids]
    membership = dataset.membership
    targets = dataset.word_table.vectors if dataset.word_table is not None else None

    unseen_pool = None
    if config.transductive:
        unseen_pool = np.where(np.isin(dataset.labels, dataset.split.unseen))[0]
        if unseen_pool.size == 0:
            raise ContractError("transductive training needs unlabeled unseen-class samples")

    sums = {"L_A": 0.0, "L_LT": 0.0, "L_W": 0.0, "L_B": 0.0, "total": 0.0, "grad_norm": 0.0}
    nbatch = 0
    for lo in range(0, len(order), config.batch_size):
        batch = order[lo : lo + config.batch_size]
        labels = dataset.labels[batch]
        traces = [model.forward(Tensor(dataset.images[i])) for i in batch]
        phi_x = T.stack([tr.phi for tr in traces])
        batch_labels = np.array([seen_pos[y] for y in labels])

        l_a = loss_attribute_ce(phi_x, batch_labels, att_seen)
        if model.config.latent:
            lat = T.stack([tr.phi_lat for tr in traces])
            l_lt = loss_triplet(lat, mine_triplets(labels, rng), weights.alpha)
        else:
            l_lt = Tensor(0.0)
        l_w = None
        if (model.config.gvse_enabled and model.wired and targets is not None
                and model.graph_vertices == membership.shape[1]):
            l_w = loss_wordvec([tr.word_vectors for tr in traces], labels, membership, targets)

        l_b = None
        if config.transductive:
            ub = rng.choice(unseen_pool, size=min(config.batch_size, unseen_pool.size), replace=False)
            utraces = [model.forward(Tensor(dataset.images[i])) for i in ub]
            uphi = T.stack([tr.phi for tr in utraces])
            l_b = loss_bias(uphi, dataset.cam.values, np.asarray(dataset.split.unseen))

        total = loss_total(l_a, l_lt, l_w, weights, l_b, config.transductive)
        model.zero_grad()
        T.backward(total)
        gnorm = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in model.params)))
        adam_step(model.params, state)

        sums["L_A"] += l_a.item()
        sums["L_LT"] += l_lt.item()
        sums["L_W"] += l_w.item() if l_w is not None else 0.0
        sums["L_B"] += l_b.item() if l_b is not None else 0.0
        sums["total"] += total.item()
        sums["grad_norm"] += gnorm
        nbatch += 1

    report = {k: v / max(nbatch, 1) for k, v in sums.items()}
    if not config.transductive:
        report.pop("L_B")
    report["wall_ms"] = (time.perf_counter() - t0) * 1000.0
    return report


def train_model(model: GvseModel, dataset, config: TrainConfig) -> list[dict]:
    """Run the configured number of epochs; returns one report per epoch."""
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(lr=config.lr)
    weights = LossWeights(gamma=config.gamma, alpha=config.alpha, bias_weight=config.bias_weight)
    reports = []
    for epoch in range(config.epochs):
        report = train_epoch(model, dataset, config, rng, state, weights)
        report["epoch"] = epoch
        logger.info("epoch %d: total=%.4f L_A=%.4f", epoch, report["total"], report["L_A"])
        reports.append(report)
    return reports
