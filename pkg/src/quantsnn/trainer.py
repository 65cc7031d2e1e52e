"""Minibatch SGD with momentum, weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import config_hash
from .data import Dataset
from .network import QuantNet
from .quant import make_rng
from .tensor import softmax_cross_entropy

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr_max: float = 0.1
    lr_min: float = 0.0
    weight_decay: float = 5e-4
    momentum: float = 0.9
    seed: int = 0
    p: int = 2
    noise_adaptor: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (0 <= self.lr_min <= self.lr_max):
            raise ValueError(f"need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.weight_decay < 0 or not (0 <= self.momentum < 1):
            raise ValueError("weight_decay must be >= 0 and momentum in [0, 1)")
        if self.p < 1:
            raise ValueError("p must be a positive integer")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    eval_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total <= 0:
        raise ValueError("cosine schedule needs total > 0 steps")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


class SGD:
    """Heavy-ball SGD; weight decay is coupled into the gradient for W and B only.

    Quantizer scales get momentum but no decay, and are clamped positive
    after each step.
    """

    def __init__(self, net: QuantNet, momentum: float = 0.9, weight_decay: float = 0.0):
        self.net = net
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf = {}

    def _update(self, key, param, grad, lr, decay):
        g = grad + decay * param if decay else grad
        if self.momentum:
            buf = self._buf.get(key)
            buf = g.copy() if buf is None else self.momentum * buf + g
            self._buf[key] = buf
            g = buf
        return g

    def step(self, lr: float) -> None:
        for i, layer in enumerate(self.net.layers):
            for j, (param, grad) in enumerate(layer.params()):
                param -= lr * self._update((i, j), param, grad, lr, self.weight_decay)
            if layer.kind == "quant":
                g = self._update((i, "s"), np.float64(layer.s), np.float64(layer.grad_s), lr, 0.0)
                layer.s = float(layer.s - lr * g)
                layer.clamp_scale()


def evaluate_ann(net: QuantNet, data: Dataset, batch_size: int = 1024) -> float:
    """Fraction of samples whose deterministic-path argmax logit equals the label.

    Ties resolve to the lowest class index.
    """
    if len(data) == 0:
        return float("nan")
    correct = 0
    for lo in range(0, len(data), batch_size):
        logits = net.predict_logits(data.x[lo:lo + batch_size])
        correct += int(np.sum(np.argmax(logits, axis=1) == data.y[lo:lo + batch_size]))
    return correct / len(data)


def train(net: QuantNet, data: Dataset, cfg: TrainConfig, eval_data: Dataset | None = None,
          *, verbose: bool = False) -> tuple[QuantNet, History]:
    """Train ``net`` in place; returns it together with the per-epoch history."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    first = net.layers[0]
    if getattr(first, "in_features", data.dim) != data.dim:
        raise ValueError(f"network expects {first.in_features} inputs, data has {data.dim}")
    if net.n_classes < data.n_classes:
        raise ValueError(f"network has {net.n_classes} outputs, data has {data.n_classes} classes")

    net.set_noise(cfg.noise_adaptor)
    opt = SGD(net, cfg.momentum, cfg.weight_decay)
    n = len(data)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * per_epoch
    history = History()
    step = 0
    for epoch in range(cfg.epochs):
        perm = make_rng(cfg.seed, 0xE90C, epoch).permutation(n)
        noise_rng = make_rng(cfg.seed, 0x401E, epoch)
        net.train()
        losses = []
        for b in range(per_epoch):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min)
            net.zero_grad()
            try:
                logits = net.forward(data.x[idx], noise_rng)
                loss, grad = softmax_cross_entropy(logits, data.y[idx])
                if not math.isfinite(loss):
                    raise FloatingPointError(f"loss became {loss}")
                net.backward(grad)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"{exc} at step {step} (epoch {epoch}, batch {b})") from None
            opt.step(lr)
            losses.append(loss)
            step += 1
        net.eval()
        history.train_loss.append(float(np.mean(losses)))
        history.lr.append(lr)
        history.eval_acc.append(evaluate_ann(net, eval_data if eval_data is not None else data))
        if verbose:
            log.info("epoch %d loss %.4f acc %.4f", epoch, history.train_loss[-1], history.eval_acc[-1])
    return net, history
