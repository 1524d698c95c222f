"""Momentum SGD training, evaluation, sigma traces and effective receptive fields."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from njet.data import LabeledDataset
from njet.nn.functional import softmax_xent
from njet.nn.layers import NJetConv2d, Sequential

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 32
    alpha_l2: float = 0.0
    sigma_lr_scale: float = 1.0
    seed: int = 0
    subsample_r: float | None = None
    arch: str = "toy"
    lr_schedule: str = "constant"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")

    def lr_factor(self, epoch: int) -> float:
        """Multiplier on the learning rate during ``epoch`` (0-based)."""
        if self.lr_schedule == "cosine":
            return 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))
        return 1.0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    layer: int
    sigma: float
    filter_size: int
    train_loss: float
    eval_accuracy: float


@dataclass
class SigmaTrace:
    rows: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)  # one list per epoch

    def sigmas(self, layer=0) -> np.ndarray:
        return np.array([r.sigma for r in self.rows if r.layer == layer])

    def final_sigma(self, layer=0) -> float:
        return float(self.sigmas(layer)[-1])

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "layer", "sigma", "filter_size", "loss", "accuracy"])
            for r in self.rows:
                w.writerow([r.epoch, r.layer, repr(r.sigma), r.filter_size,
                            repr(r.train_loss), repr(r.eval_accuracy)])


def param_kind(layer, name) -> str:
    if isinstance(layer, NJetConv2d):
        if name == "alphas":
            return "alpha"
        if name == "log_sigma":
            return "log_sigma"
    return "other"


def sgd_step(params, grads, velocity, config: TrainConfig, kinds=None, lr_factor=1.0):
    """One momentum step, in place.

    v <- mu v - lr g ; p <- p + v, where lr is scaled by
    ``sigma_lr_scale`` for log-sigma entries and alpha entries also
    decay by lr * alpha_l2 * p. ``kinds`` maps keys to "alpha",
    "log_sigma" or "other" (the default). ``lr_factor`` scales every
    step, including the decay.
    """
    kinds = kinds or {}
    for key, p in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {key!r}")
        kind = kinds.get(key, "other")
        lr = config.learning_rate * lr_factor
        if kind == "log_sigma":
            lr *= config.sigma_lr_scale
        v = velocity.get(key)
        if v is None:
            v = velocity[key] = np.zeros_like(p)
        v *= config.momentum
        v -= lr * g
        if kind == "alpha" and config.alpha_l2:
            p -= (config.learning_rate * lr_factor * config.alpha_l2) * p
        p += v
    return params, velocity


def _model_params(model: Sequential):
    params, grads, kinds = {}, {}, {}
    for key, layer, name in model.named_params():
        params[key] = layer.params[name]
        grads[key] = layer.grads[name]
        kinds[key] = param_kind(layer, name)
    return params, grads, kinds


def num_classes(model: Sequential, in_shape) -> int:
    probe = np.zeros((1, *in_shape), dtype=model.dtype)
    return model.forward(probe, train=False).shape[-1]


def evaluate(model: Sequential, dataset: LabeledDataset, batch_size=256) -> float:
    """Fraction of samples whose argmax logit equals the label (eval-mode batch norm)."""
    preds = []
    for b0 in range(0, len(dataset), batch_size):
        x = dataset.images[b0:b0 + batch_size].astype(model.dtype, copy=False)
        logits = model.forward(x, train=False)
        if logits.shape[1] != dataset.class_count:
            raise ValueError(f"model predicts {logits.shape[1]} classes, dataset has "
                             f"{dataset.class_count}")
        preds.append(logits.argmax(axis=1))
    return float(np.mean(np.concatenate(preds) == dataset.labels))


def train(model: Sequential, dataset: LabeledDataset, config: TrainConfig,
          eval_dataset: LabeledDataset | None = None, callback=None):
    """Train in place; returns ``(model, SigmaTrace)``.

    Mini-batches come from a seeded permutation per epoch. The trace
    holds one row per epoch per N-Jet layer; for models without N-Jet
    layers one row per epoch with layer -1 and NaN sigma.
    """
    k = num_classes(model, dataset.image_shape)
    if k != dataset.class_count:
        raise ValueError(f"model head has {k} outputs, dataset has {dataset.class_count} classes")
    rng = np.random.default_rng(config.seed)
    velocity = {}
    trace = SigmaTrace()
    njets = model.njet_layers()
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for b0 in range(0, n, config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            x = dataset.images[idx].astype(model.dtype, copy=False)
            logits = model.forward(x, train=True)
            loss, dlogits = softmax_xent(logits, dataset.labels[idx])
            model.backward(dlogits)
            params, grads, kinds = _model_params(model)
            sgd_step(params, grads, velocity, config, kinds, config.lr_factor(epoch))
            losses.append(loss)
        for layer in njets:
            if not layer.sigma > 0:
                raise FloatingPointError(f"sigma left the positive range: {layer.sigma}")
        acc = evaluate(model, eval_dataset) if eval_dataset is not None else math.nan
        mean_loss = float(np.mean(losses))
        trace.batch_losses.append(losses)
        if njets:
            for i, layer in enumerate(njets):
                trace.rows.append(TraceRow(epoch, i, layer.sigma, layer.filter_size,
                                           mean_loss, acc))
        else:
            trace.rows.append(TraceRow(epoch, -1, math.nan, 0, mean_loss, acc))
        log.info("epoch %d loss %.4f acc %.4f sigma %s", epoch, mean_loss, acc,
                 [round(l.sigma, 4) for l in njets])
        if callback is not None:
            callback(epoch, model, trace)
    return model, trace


def _spatial_depth(model: Sequential, x):
    """Index one past the last layer producing a rank-4 map."""
    upto = 0
    h = x
    for i, layer in enumerate(model.layers):
        h = layer.forward(h, train=False)
        if h.ndim == 4:
            upto = i + 1
        else:
            break
    return upto


def erf_map(model: Sequential, x, location, upto=None) -> np.ndarray:
    """Mean |d unit / d input| over input channels for one output unit.

    ``location`` is ``(y, x)`` (all channels of that position) or
    ``(channel, y, x)``; the unit lives in the output of the last spatial
    layer unless ``upto`` selects a prefix of the model.
    """
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 3:
        x = x[None]
    if upto is None:
        upto = _spatial_depth(model, x)
    out = model.forward(x, train=False, upto=upto)
    g = np.zeros_like(out)
    if len(location) == 2:
        y, xx = location
        ch = slice(None)
    else:
        ch, y, xx = location
    if not (0 <= y < out.shape[2] and 0 <= xx < out.shape[3]):
        raise IndexError(f"location {(y, xx)} outside the {out.shape[2]}x{out.shape[3]} output")
    g[:, ch, y, xx] = 1.0
    dx = model.backward(g, upto=upto)
    return np.abs(dx).mean(axis=(0, 1))


def second_moment(m: np.ndarray, center=None) -> float:
    """Weighted mean squared distance of a non-negative map from ``center`` (default: centroid)."""
    m = np.asarray(m, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        return 0.0
    yy, xx = np.indices(m.shape)
    if center is None:
        center = ((m * yy).sum() / total, (m * xx).sum() / total)
    cy, cx = center
    return float((m * ((yy - cy) ** 2 + (xx - cx) ** 2)).sum() / total)
