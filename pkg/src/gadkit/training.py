"""Set-prediction training: Hungarian matching of group slots to annotated
groups, per-pair classification and membership losses, an embedding
consistency term, and a from-scratch Adam loop with warmup/decay scheduling
and global gradient clipping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .assignment import group_matching_cost, hungarian
from .data import Clip, ClipFeatures, GroupPrediction
from .errors import DivergenceError, SchemaError, ShapeError
from .model import ModelConfig, ModelOutput, build_inputs, forward
from .rng import SplitMix64


@dataclass(frozen=True)
class TrainSchedule:
    """Optimization knobs.  The learning rate warms up linearly from lr_init
    to lr_peak over warmup_epochs, then decays linearly toward zero."""

    epochs: int = 30
    batch_size: int = 16
    lr_init: float = 1e-5
    lr_peak: float = 1e-4
    warmup_epochs: int = 5
    clip_norm: float = 1.0
    lambda_mem: float = 5.0
    lambda_con: float = 2.0
    tau: float = 0.2
    no_activity_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ShapeError("epochs must be >= 0 and batch_size >= 1")
        if self.warmup_epochs < 0 or (
            self.epochs > 0 and self.warmup_epochs > self.epochs
        ):
            raise ShapeError(
                f"warmup_epochs must be in [0, {self.epochs}], got {self.warmup_epochs}"
            )
        if self.lr_init < 0 or self.lr_peak <= 0:
            raise ShapeError("learning rates must be positive")
        if self.clip_norm <= 0 or self.tau <= 0:
            raise ShapeError("clip_norm and tau must be positive")
        if self.lambda_mem < 0 or self.lambda_con < 0 or self.no_activity_weight < 0:
            raise ShapeError("loss weights must be nonnegative")

    def lr_at(self, epoch: int) -> float:
        if not (0 <= epoch < self.epochs):
            raise ValueError(f"epoch {epoch} outside schedule of {self.epochs}")
        w = self.warmup_epochs
        if epoch < w:
            if w == 1:
                return self.lr_peak
            return self.lr_init + (self.lr_peak - self.lr_init) * epoch / (w - 1)
        return self.lr_peak * (self.epochs - epoch) / (self.epochs - w)


@dataclass
class LossBreakdown:
    """Raw (unweighted) loss terms for one clip.  Sums run over matched
    slot/group pairs; weighting happens in total()."""

    individual: Tensor
    group: Tensor
    membership: Tensor
    consistency: Tensor

    def total(self, lambda_mem: float, lambda_con: float) -> Tensor:
        return (
            self.individual
            + self.group
            + self.membership * lambda_mem
            + self.consistency * lambda_con
        )

    def as_floats(self) -> dict[str, float]:
        return {
            "individual": float(self.individual.data),
            "group": float(self.group.data),
            "membership": float(self.membership.data),
            "consistency": float(self.consistency.data),
        }


# ---------------------------------------------------------------------------
# matching

def match_groups(
    clip: Clip, group_probs: np.ndarray, member_scores: np.ndarray
) -> tuple[int, ...]:
    """Optimal slot for each annotated group (rows past the last annotation
    are no-activity rows).  Returns the slot index per row."""
    k = group_probs.shape[0]
    padded: list = list(clip.groups) + [None] * (k - len(clip.groups))
    slots = [GroupPrediction(group_probs[i], member_scores[i]) for i in range(k)]
    cost = group_matching_cost(padded, clip.actor_ids, slots)
    return hungarian(cost).assignment


# ---------------------------------------------------------------------------
# loss terms

def _onehot(labels: Sequence[int], width: int) -> np.ndarray:
    out = np.zeros((len(labels), width), dtype=np.float64)
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def cross_entropy(logits: Tensor, labels: Sequence[int], weights=None) -> Tensor:
    """Summed softmax cross-entropy over rows; optional per-row weights."""
    lse = ad.logsumexp(logits)
    picked = ad.tsum(ad.mul(logits, Tensor(_onehot(labels, logits.shape[1]))), axis=1)
    per_row = lse - picked
    if weights is not None:
        per_row = ad.mul(per_row, Tensor(np.asarray(weights, dtype=np.float64)))
    return ad.tsum(per_row)


def group_activity_loss(
    group_logits: Tensor,
    assignment: Sequence[int],
    clip: Clip,
    no_activity_weight: float = 1.0,
) -> Tensor:
    """Classification loss of every slot against its matched target; slots
    matched to padding are trained toward the no-activity class."""
    g = len(clip.groups)
    labels = [grp.activity for grp in clip.groups] + [0] * (len(assignment) - g)
    weights = [1.0] * g + [no_activity_weight] * (len(assignment) - g)
    rows = ad.gather(group_logits, list(assignment), axis=0)
    return cross_entropy(rows, labels, weights)


def membership_loss(scores: Tensor, target: np.ndarray) -> Tensor:
    """Binary cross-entropy of membership probabilities against a 0/1
    vector, averaged over actors."""
    m = Tensor(np.asarray(target, dtype=np.float64))
    losses = ad.neg(
        ad.mul(m, ad.log(scores)) + ad.mul(1.0 - m, ad.log(1.0 - scores))
    )
    return ad.tmean(losses)


def membership_loss_from_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Same objective on raw logits via softplus(z) - m*z, stable when the
    scores saturate."""
    m = Tensor(np.asarray(target, dtype=np.float64))
    return ad.tmean(ad.softplus(logits) - ad.mul(m, logits))


def consistency_loss(
    embeddings: Tensor, groups: Sequence[Sequence[int]], tau: float = 0.2
) -> Tensor:
    """Pull same-group embeddings together: for each member, the log-ratio
    of same-group to all-other exponentiated cosine similarities."""
    eligible = [list(g) for g in groups if len(g) >= 2]
    if not eligible:
        return Tensor(0.0)
    n = embeddings.shape[0]
    anchors: list[int] = []
    num_mask_rows = []
    den_mask_rows = []
    for g in eligible:
        in_group = np.zeros(n, dtype=bool)
        in_group[np.asarray(g, dtype=np.int64)] = True
        for j in g:
            anchors.append(j)
            num = in_group.copy()
            num[j] = False
            den = np.ones(n, dtype=bool)
            den[j] = False
            num_mask_rows.append(num)
            den_mask_rows.append(den)
    scaled = ad.mul(ad.cosine_matrix(embeddings), 1.0 / tau)
    rows = ad.gather(scaled, anchors, axis=0)
    num = ad.masked_logsumexp(rows, np.stack(num_mask_rows))
    den = ad.masked_logsumexp(rows, np.stack(den_mask_rows))
    return ad.tsum(den - num)


def individual_action_loss(actor_logits: Tensor, clip: Clip) -> Tensor:
    """Mean cross-entropy of per-actor logits against each actor's group
    activity (no-activity for outliers)."""
    label_of = {a: 0 for a in clip.actor_ids}
    for grp in clip.groups:
        for a in grp.members:
            label_of[a] = grp.activity
    labels = [label_of[a] for a in clip.actor_ids]
    return cross_entropy(actor_logits, labels) * (1.0 / len(labels))


def clip_loss(out: ModelOutput, clip: Clip, schedule: TrainSchedule) -> LossBreakdown:
    """All four loss terms for one clip, matched on detached scores."""
    probs = ad.softmax(out.group_logits).data
    scores = ad.sigmoid(out.membership_logits).data
    assignment = match_groups(clip, probs, scores)
    g = len(clip.groups)

    group = group_activity_loss(
        out.group_logits, assignment, clip, schedule.no_activity_weight
    )

    index_of = {a: i for i, a in enumerate(clip.actor_ids)}
    if g > 0:
        targets = np.zeros((g, len(clip.actor_ids)), dtype=np.float64)
        for i, grp in enumerate(clip.groups):
            for a in grp.members:
                targets[i, index_of[a]] = 1.0
        rows = ad.gather(out.membership_logits, list(assignment[:g]), axis=0)
        per_pair = ad.tmean(
            ad.softplus(rows) - ad.mul(rows, Tensor(targets)), axis=1
        )
        membership = ad.tsum(per_pair)
    else:
        membership = Tensor(0.0)

    groups_idx = [sorted(index_of[a] for a in grp.members) for grp in clip.groups]
    consistency = consistency_loss(out.actor_embed, groups_idx, schedule.tau)
    individual = individual_action_loss(out.actor_logits, clip)
    return LossBreakdown(
        individual=individual,
        group=group,
        membership=membership,
        consistency=consistency,
    )


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adam with bias correction; gradients live on the params themselves."""

    def __init__(
        self,
        params: Sequence[Param],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if lr == 0.0:
                continue
            p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# training loop

def train(
    cfg: ModelConfig,
    params: Mapping[str, Param],
    clips: Sequence[Clip],
    features: Mapping[str, ClipFeatures],
    schedule: TrainSchedule,
    *,
    use_distance_mask: bool = True,
    on_epoch: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Minibatch training over whole clips.  Batches average the clip losses
    in a single graph and take one optimizer step; returns the mean batch
    loss per epoch."""
    prepared = []
    for clip in clips:
        if clip.clip_id not in features:
            raise SchemaError(f"no features for clip {clip.clip_id!r}")
        actor, scene, boxes = build_inputs(clip, features[clip.clip_id], cfg.frames)
        prepared.append((actor, scene, boxes, clip))
    param_list = list(params.values())
    opt = Adam(param_list)
    rng = SplitMix64(schedule.seed)
    history: list[float] = []
    for epoch in range(schedule.epochs):
        order = list(range(len(prepared)))
        rng.shuffle(order)
        lr = schedule.lr_at(epoch)
        batch_losses: list[float] = []
        for start in range(0, len(order), schedule.batch_size):
            batch = order[start : start + schedule.batch_size]
            ad.zero_grads(param_list)
            total: Tensor | None = None
            for idx in batch:
                actor, scene, boxes, clip = prepared[idx]
                out = forward(
                    cfg, params, actor, scene, boxes,
                    use_distance_mask=use_distance_mask,
                )
                term = clip_loss(out, clip, schedule).total(
                    schedule.lambda_mem, schedule.lambda_con
                )
                total = term if total is None else total + term
            loss = total * (1.0 / len(batch))
            if not np.isfinite(loss.data):
                raise DivergenceError(f"non-finite loss in epoch {epoch}")
            ad.backward(loss)
            for p in param_list:
                if not np.all(np.isfinite(p.grad)):
                    raise DivergenceError(
                        f"non-finite gradient on {p.name!r} in epoch {epoch}"
                    )
            ad.clip_grad_norm(param_list, schedule.clip_norm)
            opt.step(lr)
            batch_losses.append(float(loss.data))
        mean_loss = sum(batch_losses) / len(batch_losses)
        history.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return history
