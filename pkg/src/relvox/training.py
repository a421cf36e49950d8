"""Desk-scale training loop and segmentation scoring.

Plain SGD with momentum, batch size 1, soft Dice loss.  The loop is
deterministic for a given seed: case order, updates, and the log are pure
functions of (net, dataset, hyper-parameters, seed).
"""

import copy
import csv
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import NonFiniteError, ShapeError, TrainingDiverged
from .kernels import backward, forward
from .layers import LEARNABLE_FIELDS
from .unet import Network

DICE_SMOOTHING = 1.0


def soft_dice_loss(pred, gt, smooth=DICE_SMOOTHING):
    """1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s)."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target {gt.shape}")
    p = pred.astype(np.float64)
    g = gt.astype(np.float64)
    inter = (p * g).sum()
    denom = p.sum() + g.sum() + smooth
    return float(1.0 - (2.0 * inter + smooth) / denom)


def soft_dice_loss_grad(pred, gt, smooth=DICE_SMOOTHING):
    p = pred.astype(np.float64)
    g = gt.astype(np.float64)
    inter = (p * g).sum()
    denom = p.sum() + g.sum() + smooth
    grad = -(2.0 * g * denom - (2.0 * inter + smooth)) / denom ** 2
    return grad.astype(np.float32)


def dice(pred_bin, gt_bin):
    """2|A n B| / (|A| + |B|); 1.0 when both masks are empty."""
    if pred_bin.shape != gt_bin.shape:
        raise ShapeError(f"mask shape {pred_bin.shape} does not match {gt_bin.shape}")
    a = np.asarray(pred_bin, dtype=bool)
    b = np.asarray(gt_bin, dtype=bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def predict(net: Network, x, threshold=0.5):
    """Forward pass plus strict thresholding of the probability head."""
    out, _ = forward(net, x)
    return out[0] > threshold


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mean_dice: float


@dataclass
class TrainLog:
    records: List[EpochRecord]
    seed: int
    config: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "mean_dice"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.loss:.9g}", f"{r.mean_dice:.9g}"])


def train(net: Network, dataset, epochs=80, lr=0.01, momentum=0.9, seed=0,
          threshold=0.5) -> Tuple[Network, TrainLog]:
    """Train a copy of `net` on (image, mask) cases; the input net is untouched."""
    if not dataset:
        raise ShapeError("training dataset is empty")
    net = copy.deepcopy(net)
    rng = np.random.default_rng(seed)
    velocity = {}
    records = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        dices = []
        for i in order:
            case = dataset[int(i)]
            try:
                out, cache = forward(net, case.image)
                pred = out[0]
                loss = soft_dice_loss(pred, case.mask)
            except NonFiniteError:
                loss = float("nan")
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite in epoch {epoch}",
                    last_good_epoch=epoch - 1,
                    log=TrainLog(records=records, seed=seed, config=_config_echo(net)))
            g = soft_dice_loss_grad(pred, case.mask)[None]
            grads = backward(net, cache, g)
            _sgd_step(net, grads, velocity, lr, momentum)
            losses.append(loss)
            dices.append(dice(pred > threshold, case.mask))
        records.append(EpochRecord(epoch=epoch, loss=float(np.mean(losses)),
                                   mean_dice=float(np.mean(dices))))
    return net, TrainLog(records=records, seed=seed, config=_config_echo(net))


def _config_echo(net):
    if net.config is None:
        return {}
    from dataclasses import asdict
    return asdict(net.config)


def _sgd_step(net, grads, velocity, lr, momentum):
    for lid, layer_grads in grads.items():
        spec = net.layers[lid]
        for name in LEARNABLE_FIELDS.get(type(spec), ()):
            g = layer_grads[name]
            key = (lid, name)
            v = velocity.get(key)
            v = g if v is None else momentum * v + g
            velocity[key] = v
            setattr(spec, name, getattr(spec, name) - np.float32(lr) * v)
