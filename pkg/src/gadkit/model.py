"""Grouping-transformer reference model.

Learnable group tokens and per-frame actor features are refined by a stack
of pre-norm attention blocks: self-attention among actors (restricted by a
center-distance mask) and among group tokens separately, grouping attention
with group tokens as queries over actor keys and values, and cross-attention
of both streams over frame features.  Two feed-forward heads per stream
produce class logits and projected embeddings; a group's membership logit
for an actor is the dot product of their projections.  Frame-wise logits
are averaged over the sampled frames.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .data import (
    Clip,
    ClipFeatures,
    ClipPrediction,
    GroupPrediction,
    derive_member_sets,
    sample_frames,
)
from .errors import DimError, FrameMismatch, ParseError, SchemaError, ShapeError
from .rng import SplitMix64

MAX_CENTER_DISTANCE = math.sqrt(2.0)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs.  Defaults are the reference operating point."""

    dim: int = 256
    heads: int = 4
    layers: int = 6
    group_tokens: int = 12
    num_classes: int = 6
    mask_threshold: float = 0.2
    frames: int = 5
    scene_tokens: int = 4

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads != 0:
            raise ShapeError(
                f"dim {self.dim} must be a positive multiple of heads {self.heads}"
            )
        if self.layers < 1 or self.group_tokens < 1 or self.num_classes < 1:
            raise ShapeError("layers, group_tokens, and num_classes must be >= 1")
        if not (0.0 < self.mask_threshold <= MAX_CENTER_DISTANCE):
            raise ShapeError(
                f"mask_threshold must be in (0, sqrt(2)], got {self.mask_threshold}"
            )
        if self.frames < 1 or self.scene_tokens < 1:
            raise ShapeError("frames and scene_tokens must be >= 1")


_ATTN_BLOCKS = ("actor_self", "group_self", "grouping", "actor_cross", "group_cross")
_CROSS_BLOCKS = ("grouping", "actor_cross", "group_cross")


def init_params(cfg: ModelConfig, rng: SplitMix64) -> dict[str, Param]:
    """Seeded parameter initialization (scaled normal weights, unit norms)."""
    d = cfg.dim
    params: dict[str, Param] = {}

    def w(name: str, rows: int, cols: int) -> None:
        params[name] = Param(name, rng.normals((rows, cols)) * (1.0 / math.sqrt(rows)))

    def b(name: str, size: int) -> None:
        params[name] = Param(name, np.zeros(size))

    def ln(name: str, size: int) -> None:
        params[f"{name}.g"] = Param(f"{name}.g", np.ones(size))
        params[f"{name}.b"] = Param(f"{name}.b", np.zeros(size))

    params["tokens"] = Param("tokens", rng.normals((cfg.group_tokens, d)) * 0.02)
    w("pos.w", 4, d)
    b("pos.b", d)
    for layer in range(cfg.layers):
        for block in _ATTN_BLOCKS:
            prefix = f"L{layer}.{block}"
            for mat in ("wq", "wk", "wv", "wo"):
                w(f"{prefix}.{mat}", d, d)
            for vec in ("bq", "bk", "bv", "bo"):
                b(f"{prefix}.{vec}", d)
            ln(f"{prefix}.lnq", d)
            if block in _CROSS_BLOCKS:
                ln(f"{prefix}.lnkv", d)
    ln("final_actor_ln", d)
    ln("final_group_ln", d)
    for head, out_dim in (
        ("head_action", cfg.num_classes + 1),
        ("head_activity", cfg.num_classes + 1),
        ("head_actor_proj", d),
        ("head_group_proj", d),
    ):
        w(f"{head}.w1", d, d)
        b(f"{head}.b1", d)
        w(f"{head}.w2", d, out_dim)
        b(f"{head}.b2", out_dim)
    return params


def distance_mask(centers: np.ndarray, mu: float) -> np.ndarray:
    """Boolean (N, N) matrix: attention allowed iff the unit-square center
    distance is at most mu, with the diagonal always allowed."""
    c = np.asarray(centers, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 2:
        raise ShapeError(f"centers must be (N, 2), got {c.shape}")
    if mu <= 0:
        raise ShapeError(f"mu must be positive, got {mu}")
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    mask = dist <= mu
    np.fill_diagonal(mask, True)
    return mask


@dataclass
class ModelOutput:
    """Aggregated (frame-averaged) outputs for one clip."""

    actor_embed: Tensor        # (N, D)
    group_embed: Tensor        # (K, D)
    actor_logits: Tensor       # (N, C+1)
    group_logits: Tensor       # (K, C+1)
    membership_logits: Tensor  # (K, N)
    actor_attention: list = field(default_factory=list)  # per frame, layer, head

    def membership_scores(self) -> Tensor:
        return ad.sigmoid(self.membership_logits)


def _mlp(params: dict[str, Param], head: str, x: Tensor) -> Tensor:
    h = ad.relu(ad.linear(x, params[f"{head}.w1"], params[f"{head}.b1"]))
    return ad.linear(h, params[f"{head}.w2"], params[f"{head}.b2"])


def _attention(
    params: dict[str, Param],
    prefix: str,
    q_in: Tensor,
    kv_in: Tensor,
    heads: int,
    mask: np.ndarray | None,
    sink: list | None,
) -> Tensor:
    p = params
    qn = ad.layer_norm(q_in, p[f"{prefix}.lnq.g"], p[f"{prefix}.lnq.b"])
    if kv_in is q_in:
        kn = qn
    else:
        kn = ad.layer_norm(kv_in, p[f"{prefix}.lnkv.g"], p[f"{prefix}.lnkv.b"])
    q = ad.linear(qn, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k = ad.linear(kn, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v = ad.linear(kn, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    d = q.shape[1]
    dh = d // heads
    outs = []
    head_attn = []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = ad.matmul(q[:, cols], ad.transpose(k[:, cols])) * (1.0 / math.sqrt(dh))
        att = ad.masked_softmax(scores, mask)
        if sink is not None:
            head_attn.append(att.data.copy())
        outs.append(ad.matmul(att, v[:, cols]))
    if sink is not None:
        sink.append(head_attn)
    out = ad.linear(ad.concat(outs, axis=1), p[f"{prefix}.wo"], p[f"{prefix}.bo"])
    return q_in + out


def forward(
    cfg: ModelConfig,
    params: dict[str, Param],
    actor_feats: Sequence[np.ndarray],
    scene_feats: Sequence[np.ndarray],
    boxes: np.ndarray,
    *,
    use_distance_mask: bool = True,
    collect_attention: bool = False,
) -> ModelOutput:
    """Run the stack on sampled per-frame features.

    ``actor_feats``/``scene_feats`` hold one (N, D)/(S, D) matrix per
    sampled frame; ``boxes`` is (N, 4) normalized (cx, cy, w, h) used for
    the positional embedding and the distance mask.
    """
    if len(actor_feats) != len(scene_feats) or not actor_feats:
        raise ShapeError("need the same positive number of actor and scene frames")
    boxes = np.asarray(boxes, dtype=np.float64)
    n = actor_feats[0].shape[0]
    if boxes.shape != (n, 4):
        raise ShapeError(f"boxes shape {boxes.shape} does not match {n} actors")
    for m in actor_feats:
        if m.shape[1] != cfg.dim:
            raise DimError(f"actor feature width {m.shape[1]} != model dim {cfg.dim}")
    mask = distance_mask(boxes[:, :2], cfg.mask_threshold) if use_distance_mask else None

    pos = ad.linear(Tensor(boxes), params["pos.w"], params["pos.b"])
    t_frames = len(actor_feats)
    scale = 1.0 / t_frames
    agg: dict[str, Tensor | None] = {
        "actor_embed": None,
        "group_embed": None,
        "actor_logits": None,
        "group_logits": None,
        "membership_logits": None,
    }
    attention: list = []

    def accumulate(key: str, value: Tensor) -> None:
        part = value * scale
        agg[key] = part if agg[key] is None else agg[key] + part

    for t in range(t_frames):
        a = Tensor(actor_feats[t]) + pos
        g = params["tokens"]
        f = Tensor(scene_feats[t])
        frame_attn: list = []
        for layer in range(cfg.layers):
            layer_sink = [] if collect_attention else None
            a = _attention(params, f"L{layer}.actor_self", a, a, cfg.heads, mask, layer_sink)
            if collect_attention:
                frame_attn.append(layer_sink[0])
            g = _attention(params, f"L{layer}.group_self", g, g, cfg.heads, None, None)
            g = _attention(params, f"L{layer}.grouping", g, a, cfg.heads, None, None)
            a = _attention(params, f"L{layer}.actor_cross", a, f, cfg.heads, None, None)
            g = _attention(params, f"L{layer}.group_cross", g, f, cfg.heads, None, None)
        a = ad.layer_norm(a, params["final_actor_ln.g"], params["final_actor_ln.b"])
        g = ad.layer_norm(g, params["final_group_ln.g"], params["final_group_ln.b"])
        psi = _mlp(params, "head_actor_proj", a)
        phi = _mlp(params, "head_group_proj", g)
        accumulate("actor_embed", a)
        accumulate("group_embed", g)
        accumulate("actor_logits", _mlp(params, "head_action", a))
        accumulate("group_logits", _mlp(params, "head_activity", g))
        accumulate("membership_logits", ad.matmul(phi, ad.transpose(psi)))
        if collect_attention:
            attention.append(frame_attn)

    return ModelOutput(
        actor_embed=agg["actor_embed"],
        group_embed=agg["group_embed"],
        actor_logits=agg["actor_logits"],
        group_logits=agg["group_logits"],
        membership_logits=agg["membership_logits"],
        actor_attention=attention,
    )


def infer_groups(
    out: ModelOutput,
    actor_ids: Sequence[int],
    clip_id: str,
    *,
    score_threshold: float = 0.5,
    min_group_size: int = 2,
) -> ClipPrediction:
    """Decode a prediction: drop slots whose argmax class is no-activity,
    give each actor to its best surviving slot when the membership score
    clears the threshold, then dissolve undersized groups to outliers."""
    probs = ad.softmax(out.group_logits).data
    scores = ad.sigmoid(out.membership_logits).data
    n = len(actor_ids)
    if scores.shape[1] != n:
        raise DimError(f"membership covers {scores.shape[1]} actors, clip has {n}")
    surviving = [k for k in range(probs.shape[0]) if int(np.argmax(probs[k])) != 0]
    assigned: dict[int, list[int]] = {k: [] for k in surviving}
    outliers: list[int] = []
    for j in range(n):
        if not surviving:
            outliers.append(actor_ids[j])
            continue
        col = [scores[k, j] for k in surviving]
        best = int(np.argmax(col))
        if col[best] >= score_threshold:
            assigned[surviving[best]].append(actor_ids[j])
        else:
            outliers.append(actor_ids[j])
    groups = []
    for k in surviving:
        if len(assigned[k]) >= min_group_size:
            groups.append(GroupPrediction(probs[k], scores[k]))
        else:
            outliers.extend(assigned[k])
    return ClipPrediction(
        clip_id=clip_id,
        actor_ids=tuple(actor_ids),
        groups=tuple(groups),
        predicted_outliers=frozenset(outliers),
    )


# ---------------------------------------------------------------------------
# clip-level plumbing

def actor_box_features(clip: Clip, frame_index: int = 0) -> np.ndarray:
    """(N, 4) normalized (cx, cy, w, h) at the key frame per actor."""
    rows = []
    for t in clip.tracklets:
        b = t.key_box(frame_index)
        rows.append(
            (
                (b.x1 + b.x2) / 2.0 / clip.width,
                (b.y1 + b.y2) / 2.0 / clip.height,
                b.width / clip.width,
                b.height / clip.height,
            )
        )
    return np.asarray(rows, dtype=np.float64)


def build_inputs(
    clip: Clip,
    feats: ClipFeatures,
    count: int,
    *,
    mode: str = "midpoint",
    rng: SplitMix64 | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Sample frames and gather (actor_feats, scene_feats, boxes) for forward()."""
    if feats.num_frames != clip.num_frames:
        raise FrameMismatch(
            f"clip {clip.clip_id!r} has {clip.num_frames} frames but features "
            f"cover {feats.num_frames}"
        )
    if feats.actor_feats[0].shape[0] != len(clip.tracklets):
        raise DimError(
            f"clip {clip.clip_id!r}: features cover {feats.actor_feats[0].shape[0]} "
            f"actors, clip has {len(clip.tracklets)}"
        )
    idx = sample_frames(clip, count, mode=mode, rng=rng)
    actor = [np.asarray(feats.actor_feats[t]) for t in idx]
    scene = [np.asarray(feats.scene_feats[t]) for t in idx]
    return actor, scene, actor_box_features(clip)


def predict_clip(
    cfg: ModelConfig,
    params: dict[str, Param],
    clip: Clip,
    feats: ClipFeatures,
    *,
    score_threshold: float = 0.5,
    min_group_size: int = 2,
) -> ClipPrediction:
    actor, scene, boxes = build_inputs(clip, feats, cfg.frames)
    out = forward(cfg, params, actor, scene, boxes)
    return infer_groups(
        out,
        clip.actor_ids,
        clip.clip_id,
        score_threshold=score_threshold,
        min_group_size=min_group_size,
    )


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(cfg: ModelConfig, params: dict[str, Param], path: str) -> None:
    payload = {"config": asdict(cfg), "params": ad.save_params(params)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str) -> tuple[ModelConfig, dict[str, Param]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict) or "config" not in payload or "params" not in payload:
        raise SchemaError(f"{path}: checkpoint needs 'config' and 'params'")
    try:
        cfg = ModelConfig(**payload["config"])
        params = ad.load_params(payload["params"])
    except (TypeError, KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed checkpoint ({exc})") from exc
    return cfg, params
