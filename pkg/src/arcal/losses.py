"""Loss stack for the single-object voting detector.

Vote regression pulls positive-seed votes onto the ground-truth center,
the semantic term pushes proposal confidences to 1 inside the object and 0
outside, and the box term regresses center, heading residual and size
residual. The total is the weighted sum 100 * vote + box + 20 * semantic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .network import CENTER_OFFSET, HEADING_RES, SIZE_RES, SCORE

VOTE_WEIGHT = 100.0
SEM_WEIGHT = 20.0
CENTER_WEIGHT = 10.0
HEADING_WEIGHT = 5.0
SIZE_WEIGHT = 10.0

DEFAULT_ALPHA = 1.5
DEFAULT_BETA = 1.0

PROB_CLIP = 1e-7


class TrainingDivergedError(RuntimeError):
    """A loss component became non-finite."""


def wrap_angle_t(x):
    return torch.remainder(x + math.pi, 2.0 * math.pi) - math.pi


@dataclass
class TargetAssignment:
    seed_xyz: torch.Tensor            # (B, S, 3)
    seed_mask: torch.Tensor           # (B, S) bool, seed inside gt box
    seed_offset_targets: torch.Tensor  # (B, S, 3) gt center - seed position
    proposal_mask: torch.Tensor       # (B, P) bool, cluster center inside gt box
    gt_center: torch.Tensor           # (B, 3)
    gt_size: torch.Tensor             # (B, 3)
    gt_yaw: torch.Tensor              # (B,)
    has_gt: torch.Tensor              # (B,) bool

    @property
    def num_positive_seeds(self):
        return int(self.seed_mask.sum())


def _inside_box(points, center, size, yaw):
    """Closed-volume membership test in the box yaw frame; points (..., 3)."""
    c, s = math.cos(yaw), math.sin(yaw)
    rel = points - center
    x = c * rel[..., 0] + s * rel[..., 1]
    y = -s * rel[..., 0] + c * rel[..., 1]
    z = rel[..., 2]
    half = size / 2.0
    return (x.abs() <= half[0]) & (y.abs() <= half[1]) & (z.abs() <= half[2])


def assign_targets(seeds, proposals, gt):
    """Positive seeds/proposals are those whose position lies inside `gt`.

    `gt` is an OrientedBox, None, or a per-sample list of either. With no
    ground truth every mask is empty and the offset targets are zero.
    """
    seed_xyz = seeds.positions.detach()
    cluster = proposals.cluster_centers.detach()
    b, s, _ = seed_xyz.shape
    p = cluster.shape[1]
    dtype = seed_xyz.dtype
    boxes = gt if isinstance(gt, (list, tuple)) else [gt] * b
    if len(boxes) != b:
        raise ValueError(f"expected {b} ground-truth entries, got {len(boxes)}")

    seed_mask = torch.zeros((b, s), dtype=torch.bool)
    offsets = torch.zeros((b, s, 3), dtype=dtype)
    prop_mask = torch.zeros((b, p), dtype=torch.bool)
    gt_center = torch.zeros((b, 3), dtype=dtype)
    gt_size = torch.ones((b, 3), dtype=dtype)
    gt_yaw = torch.zeros(b, dtype=dtype)
    has_gt = torch.zeros(b, dtype=torch.bool)
    for i, box in enumerate(boxes):
        if box is None:
            continue
        center = torch.as_tensor(box.center, dtype=dtype)
        size = torch.as_tensor(box.size, dtype=dtype)
        seed_mask[i] = _inside_box(seed_xyz[i], center, size, box.yaw)
        offsets[i] = center - seed_xyz[i]
        prop_mask[i] = _inside_box(cluster[i], center, size, box.yaw)
        gt_center[i] = center
        gt_size[i] = size
        gt_yaw[i] = box.yaw
        has_gt[i] = True
    offsets[~seed_mask] = 0.0
    return TargetAssignment(seed_xyz, seed_mask, offsets, prop_mask,
                            gt_center, gt_size, gt_yaw, has_gt)


def vote_reg_loss(votes, ta):
    """Mean L1 offset error over positive seeds; 0 when none are positive."""
    delta = votes.positions - ta.seed_xyz
    err = (delta - ta.seed_offset_targets).abs().sum(dim=-1)
    m_pos = ta.seed_mask.sum()
    if m_pos == 0:
        return (delta * 0.0).sum()
    return err[ta.seed_mask].sum() / m_pos


def sem_cls_loss(scores, ta, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
    """Binary cross-entropy confidence loss over positive/negative proposals.

    `scores` are per-proposal probabilities; they are clipped to
    [1e-7, 1 - 1e-7] before the log. A side with zero count contributes 0.
    """
    p = torch.clamp(scores, PROB_CLIP, 1.0 - PROB_CLIP)
    pos, neg = ta.proposal_mask, ~ta.proposal_mask
    loss = (p * 0.0).sum()
    if int(pos.sum()) > 0:
        loss = loss + alpha * (-torch.log(p[pos])).mean()
    if int(neg.sum()) > 0:
        loss = loss + beta * (-torch.log(1.0 - p[neg])).mean()
    return loss


def box_loss(proposals, ta, anchor):
    """Weighted center/heading/size regression over positive proposals.

    Heading compares wrapped residuals (single heading class with reference
    angle 0); size residuals are measured against `anchor`. Each term is
    averaged over the positive proposals; no positives gives 0.
    """
    raw = proposals.raw
    dtype = raw.dtype
    anchor = torch.as_tensor(anchor, dtype=dtype)
    pos = ta.proposal_mask & ta.has_gt.unsqueeze(-1)
    if int(pos.sum()) == 0:
        return (raw * 0.0).sum()
    pred_center = proposals.cluster_centers + raw[..., CENTER_OFFSET]
    center_err = (pred_center - ta.gt_center.unsqueeze(1)).abs().sum(dim=-1)
    gt_res = wrap_angle_t(ta.gt_yaw).unsqueeze(1)
    heading_err = wrap_angle_t(raw[..., HEADING_RES] - gt_res).abs()
    gt_size_res = (ta.gt_size - anchor).unsqueeze(1)
    size_err = (raw[..., SIZE_RES] - gt_size_res).abs().sum(dim=-1)
    return (CENTER_WEIGHT * center_err[pos].mean()
            + HEADING_WEIGHT * heading_err[pos].mean()
            + SIZE_WEIGHT * size_err[pos].mean())


def total_loss(l_vote, l_box, l_sem):
    """Overall objective: 100 * vote + box + 20 * semantic."""
    for name, val in (("vote", l_vote), ("box", l_box), ("semantic", l_sem)):
        scalar = float(val.detach()) if torch.is_tensor(val) else float(val)
        if not math.isfinite(scalar):
            raise TrainingDivergedError(f"{name} loss is non-finite ({scalar})")
    return VOTE_WEIGHT * l_vote + l_box + SEM_WEIGHT * l_sem


def compute_losses(votes, proposals, ta, anchor, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
    """All components plus the weighted total, as a dict of scalars/tensors."""
    l_vote = vote_reg_loss(votes, ta)
    scores = torch.sigmoid(proposals.raw[..., SCORE])
    l_sem = sem_cls_loss(scores, ta, alpha=alpha, beta=beta)
    l_box = box_loss(proposals, ta, anchor)
    return {
        "vote": l_vote,
        "box": l_box,
        "semantic": l_sem,
        "total": total_loss(l_vote, l_box, l_sem),
    }
