"""BPR objective, Adagrad and the epoch loop."""

import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .data import iter_batches
from .evaluation import MetricsHistory, evaluate
from .errors import ConfigError, DimensionError, NumericError
from .models import GROUPS, ModelConfig, init_model

LAMBDA_GRID = tuple(10.0 ** k for k in range(-3, 3))


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 256
    epochs: int = 20
    lambda_embedding: float = 0.0
    lambda_hidden: float = 0.0
    lambda_output: float = 0.0
    no_reg_epochs: int = 1
    seed: int = 0
    adagrad_epsilon: float = 1e-8
    adagrad_initial_accumulator: float = 0.0
    max_norm_w: Optional[float] = None

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.no_reg_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epoch counts >= 0")
        if min(self.lambdas.values()) < 0:
            raise ConfigError("regularisation coefficients must be non-negative")
        if self.adagrad_initial_accumulator < 0:
            raise ConfigError("adagrad_initial_accumulator must be non-negative")
        if self.max_norm_w is not None and self.max_norm_w <= 0:
            raise ConfigError("max_norm_w must be positive when set")
        return self

    @property
    def lambdas(self):
        return {g: getattr(self, f"lambda_{g}") for g in GROUPS}

    def to_dict(self):
        return asdict(self)


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def l2_penalty(model, lambdas):
    """``sum_g lambda_g * ||tensors in g||^2``."""
    if not lambdas:
        return 0.0
    return float(sum(lambdas.get(g, 0.0) * np.sum(t * t) for _, t, g in model.registry))


def bpr_loss(pos_scores, neg_scores, model=None, lambdas=None):
    """Pairwise BPR loss.

    Returns ``(total, per_pair)`` where ``per_pair = -ln sigmoid(pos - neg)``
    (computed as ``softplus(neg - pos)``) and ``total`` adds the L2 penalty of
    `model` when `lambdas` are given.
    """
    d = np.asarray(pos_scores, dtype=np.float64) - np.asarray(neg_scores, dtype=np.float64)
    per_pair = softplus(-d)
    total = float(np.sum(per_pair))
    if model is not None and lambdas:
        total += l2_penalty(model, lambdas)
    return total, per_pair


def bpr_gradient(model, users, pos, neg, lambdas=None):
    """Gradients of :func:`bpr_loss` summed over the batch.

    Both items of every triplet go through one forward pass; the upstream
    gradient is ``-sigmoid(-d)`` for the positive score and its negation for
    the negative one.  Returns ``(grads, per_pair_losses)``.
    """
    users = np.asarray(users)
    n = len(users)
    scores, cache = model.forward(np.concatenate([users, users]), np.concatenate([pos, neg]))
    d = scores[:n] - scores[n:]
    dd = -sigmoid(-d)
    grads = model.backward(cache, np.concatenate([dd, -dd]))
    if lambdas:
        for name, t, g in model.registry:
            lam = lambdas.get(g, 0.0)
            if lam:
                grads[name] += 2.0 * lam * t
    return grads, softplus(-d)


class Adagrad:
    """Per-coordinate Adagrad: ``acc += g^2; theta -= lr * g / (sqrt(acc) + eps)``."""

    def __init__(self, model, learning_rate=0.05, eps=1e-8, initial_accumulator=0.0):
        self.lr = learning_rate
        self.eps = eps
        self.acc = {name: np.full_like(t, initial_accumulator) for name, t, _ in model.registry}

    def step(self, model, grads):
        for name, t in model.params.items():
            g = grads[name]
            acc = self.acc[name]
            if g.shape != t.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {t.shape}")
            acc += g * g
            t -= self.lr * g / (np.sqrt(acc) + self.eps)


def adagrad_step(theta, grad, acc, lr, eps=1e-8):
    """Functional single-tensor form of :class:`Adagrad`; returns new (theta, acc)."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    acc = np.asarray(acc, dtype=np.float64)
    if not theta.shape == grad.shape == acc.shape:
        raise DimensionError(f"shapes {theta.shape}, {grad.shape}, {acc.shape} differ")
    acc = acc + grad * grad
    return theta - lr * grad / (np.sqrt(acc) + eps), acc


def _clip_output(model, max_norm):
    w = model.params.get("w")
    if w is not None:
        norm = np.linalg.norm(w)
        if norm > max_norm:
            w *= max_norm / norm


def train_epoch(model, ds, optimizer, cfg, epoch):
    """One pass over all training positives; returns the mean per-pair loss.

    L2 gradients are applied only from epoch ``cfg.no_reg_epochs`` on.
    """
    lambdas = cfg.lambdas if epoch >= cfg.no_reg_epochs else None
    total, count = 0.0, 0
    for b, (users, pos, neg) in enumerate(iter_batches(ds, cfg.batch_size, cfg.seed, epoch)):
        grads, losses = bpr_gradient(model, users, pos, neg, lambdas)
        batch_loss = float(np.sum(losses))
        if not np.isfinite(batch_loss):
            raise NumericError(epoch, b, batch_loss)
        optimizer.step(model, grads)
        if cfg.max_norm_w is not None:
            _clip_output(model, cfg.max_norm_w)
        total += batch_loss
        count += len(losses)
    return total / max(count, 1)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    seconds: float
    metrics: dict

    def log_line(self):
        hr = self.metrics.get("HR@10", float("nan"))
        ndcg = self.metrics.get("NDCG@10", float("nan"))
        return f"{self.epoch}\t{self.loss:.6f}\t{self.seconds:.3f}\t{hr:.6f}\t{ndcg:.6f}"


def fit(model, ds, cfg, evaluate_each_epoch=True, ks=(5, 10, 20), log=None, on_epoch=None, threads=1):
    """Train `model` for ``cfg.epochs`` epochs.

    Returns ``(losses, history)``; `history` is a
    :class:`~oncf.evaluation.MetricsHistory` filled after every epoch when
    `evaluate_each_epoch` is set.  `log` receives one tab-separated line per
    epoch; `on_epoch(epoch, model)` runs after each epoch (checkpointing).
    """
    cfg.validate()
    opt = Adagrad(model, cfg.learning_rate, cfg.adagrad_epsilon, cfg.adagrad_initial_accumulator)
    history = MetricsHistory(ks=tuple(ks))
    losses = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        loss = train_epoch(model, ds, opt, cfg, epoch)
        seconds = time.perf_counter() - t0
        metrics = {}
        if evaluate_each_epoch:
            metrics = evaluate(model, ds, ks, threads=threads)
            history.append(metrics)
        losses.append(loss)
        if log is not None:
            log(EpochRecord(epoch, loss, seconds, metrics).log_line())
        if on_epoch is not None:
            on_epoch(epoch, model)
    return losses, history


def pretrain_embeddings(ds, K, cfg, seed=None):
    """Train MF-BPR with the regular loop and return its embedding table."""
    mc = ModelConfig(kind="mf_bpr", K=K, seed=cfg.seed if seed is None else seed)
    model = init_model(mc, ds.n_users, ds.n_items)
    fit(model, ds, cfg, evaluate_each_epoch=False)
    return model.embeddings
