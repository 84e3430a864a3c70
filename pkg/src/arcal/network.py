"""Single-object deep-voting detector over raw point clouds.

Backbone is a hierarchical sample/group/pool network: 4 set-abstraction
layers followed by 2 feature-propagation layers, the second SA's points
acting as seeds. Seeds vote for the object center through a 3-layer MLP;
votes are clustered and pooled into per-proposal box parameters.

All sampling is deterministic (FPS start index 0, lowest index wins ties),
so a fixed weight state gives bit-identical detections.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .boxes import OrientedBox, wrap_angle

# Proposal channel layout: 3 + 2*NH + 3*NS + NC with NH = NS = NC = 1.
CENTER_OFFSET = slice(0, 3)
HEADING_CLS = 3
HEADING_RES = 4
SIZE_RES = slice(5, 8)
SCORE = 8
NUM_CHANNELS = 9

MIN_BOX_SIZE = 0.01


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class SASpec:
    npoint: int
    radius: float
    nsample: int
    mlp: tuple

    def __post_init__(self):
        self.mlp = tuple(self.mlp)


@dataclass
class FPSpec:
    mlp: tuple

    def __post_init__(self):
        self.mlp = tuple(self.mlp)


@dataclass
class NetworkConfig:
    """All architecture hyperparameters; only the endpoints are fixed by design."""

    sa: tuple
    fp: tuple
    vote_hidden: tuple
    num_proposals: int
    group_radius: float
    group_size: int
    proposal_mlp: tuple
    head_hidden: tuple
    seed: int = 0
    bn_momentum: float = 0.9  # running-stat retention factor
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.sa = tuple(s if isinstance(s, SASpec) else SASpec(**s) for s in self.sa)
        self.fp = tuple(s if isinstance(s, FPSpec) else FPSpec(**s) for s in self.fp)
        self.vote_hidden = tuple(self.vote_hidden)
        self.proposal_mlp = tuple(self.proposal_mlp)
        self.head_hidden = tuple(self.head_hidden)
        if len(self.sa) != 4:
            raise ValueError("backbone needs exactly 4 set-abstraction layers")
        if len(self.fp) != 2:
            raise ValueError("backbone needs exactly 2 feature-propagation layers")

    @property
    def num_seeds(self):
        return self.sa[1].npoint

    @property
    def seed_feature_dim(self):
        return self.fp[-1].mlp[-1]

    def to_dict(self):
        return asdict(self)


def default_config(seed=0):
    """The paper-scale architecture: 1024 seeds x 256 features, 256 proposals."""
    return NetworkConfig(
        sa=(SASpec(2048, 0.2, 64, (64, 64, 128)),
            SASpec(1024, 0.4, 32, (128, 128, 256)),
            SASpec(512, 0.8, 16, (128, 128, 256)),
            SASpec(256, 1.2, 16, (128, 128, 256))),
        fp=(FPSpec((256, 256)), FPSpec((256, 256))),
        vote_hidden=(256, 256),
        num_proposals=256,
        group_radius=0.3,
        group_size=64,
        proposal_mlp=(128, 128, 128),
        head_hidden=(128, 128),
        seed=seed,
    )


def reduced_config(seed=0):
    """Desk-scale variant for CPU training on small synthetic corpora."""
    return NetworkConfig(
        sa=(SASpec(256, 0.25, 16, (16, 16, 32)),
            SASpec(128, 0.4, 16, (32, 32, 64)),
            SASpec(64, 0.8, 8, (32, 32, 64)),
            SASpec(32, 1.2, 8, (32, 32, 64))),
        fp=(FPSpec((64,)), FPSpec((64,))),
        vote_hidden=(64, 64),
        num_proposals=32,
        group_radius=0.4,
        group_size=16,
        proposal_mlp=(64, 64, 64),
        head_hidden=(64, 64),
        seed=seed,
    )


def tiny_config(seed=0):
    """Few-hundred-parameter variant for finite-difference gradient checks."""
    return NetworkConfig(
        sa=(SASpec(16, 0.5, 8, (3,)),
            SASpec(8, 0.8, 8, (3,)),
            SASpec(6, 1.2, 4, (3,)),
            SASpec(4, 1.6, 4, (3,))),
        fp=(FPSpec((3,)), FPSpec((4,))),
        vote_hidden=(4, 4),
        num_proposals=4,
        group_radius=1.0,
        group_size=4,
        proposal_mlp=(4,),
        head_hidden=(4, 4),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Sampling and grouping primitives
# ---------------------------------------------------------------------------

def farthest_point_sampling(points, m, start=0):
    """Greedy max-min-distance subset of m indices from (N, 3) points.

    Each successive index maximizes the minimum distance to the already
    selected set; ties pick the lowest index. Distances are evaluated in
    float64 so the selection is reproducible against a brute-force oracle.
    When m > N the greedy order over all N points is padded by cycling it.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    pts = _as_f64(points)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("cannot sample from an empty cloud")
    take = min(m, n)
    selected = torch.empty(take, dtype=torch.long)
    selected[0] = start
    min_d2 = ((pts - pts[start]) ** 2).sum(dim=1)
    for i in range(1, take):
        nxt = torch.argmax(min_d2)
        selected[i] = nxt
        d2 = ((pts - pts[nxt]) ** 2).sum(dim=1)
        min_d2 = torch.minimum(min_d2, d2)
    if m > n:
        reps = torch.arange(m - n, dtype=torch.long) % n
        selected = torch.cat([selected, selected[reps]])
    return selected


def ball_query(points, centers, radius, k):
    """Per-center neighbor groups of up to k indices with distance <= radius.

    Indices come in scan order; short groups repeat their first member.
    A group with no member in range gets the center's nearest point with its
    valid flag cleared. Returns (indices (M, k) long, valid (M, k) bool).
    """
    if radius <= 0 or k < 1:
        raise ValueError("radius must be > 0 and k >= 1")
    pts = _as_f64(points)
    ctr = _as_f64(centers)
    n, m = pts.shape[0], ctr.shape[0]
    idx = torch.zeros((m, k), dtype=torch.long)
    valid = torch.zeros((m, k), dtype=torch.bool)
    r2 = float(radius) ** 2
    chunk = max(1, int(2_000_000 // max(n, 1)))
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d2 = ((ctr[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(dim=2)
        in_range = d2 <= r2
        for row in range(hi - lo):
            hits = torch.nonzero(in_range[row], as_tuple=False).flatten()
            if hits.numel() == 0:
                idx[lo + row] = torch.argmin(d2[row])
            else:
                g = hits[:k]
                idx[lo + row, :g.numel()] = g
                idx[lo + row, g.numel():] = g[0]
                valid[lo + row] = True
    return idx, valid


def _as_f64(x):
    if isinstance(x, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64))
    return x.detach().to(torch.float64)


def canonical_order(points):
    """Lexicographic (x, y, z) ordering of an (N, 3) position tensor.

    Clouds are unordered sets; sampling and grouping scan in index order, so
    the detector sorts its input once to make every downstream selection
    independent of storage order.
    """
    pts = _as_f64(points)
    order = torch.arange(pts.shape[0])
    for col in (2, 1, 0):
        order = order[torch.argsort(pts[order, col], stable=True)]
    return order


def three_nn_interpolate(fine_xyz, coarse_xyz, coarse_feats):
    """Inverse-square-distance interpolation of the 3 nearest coarse features.

    With fewer than 3 coarse points the farthest available neighbor is
    duplicated to fill the 3 slots. Weights are normalized to sum to 1.
    """
    d2 = torch.cdist(fine_xyz, coarse_xyz) ** 2
    m = coarse_xyz.shape[-2]
    kk = min(3, m)
    dist, idx = torch.topk(d2, kk, dim=-1, largest=False)
    if kk < 3:
        pad = 3 - kk
        dist = torch.cat([dist] + [dist[..., -1:]] * pad, dim=-1)
        idx = torch.cat([idx] + [idx[..., -1:]] * pad, dim=-1)
    recip = 1.0 / (dist + 1e-8)
    weight = recip / recip.sum(dim=-1, keepdim=True)
    gathered = _gather_features(coarse_feats, idx)
    return (gathered * weight.unsqueeze(-1)).sum(dim=-2)


def _gather_features(feats, idx):
    """feats (B, N, C), idx (B, M, K) -> (B, M, K, C)."""
    b, _, c = feats.shape
    _, m, k = idx.shape
    flat = idx.reshape(b, m * k)
    out = torch.gather(feats, 1, flat.unsqueeze(-1).expand(b, m * k, c))
    return out.reshape(b, m, k, c)


# ---------------------------------------------------------------------------
# Network modules
# ---------------------------------------------------------------------------

class SharedMLP(nn.Module):
    """Per-point MLP: 1x1 convolutions, each followed by batch norm and ReLU."""

    def __init__(self, in_dim, widths, config, conv=nn.Conv2d, bn=nn.BatchNorm2d):
        super().__init__()
        layers = []
        last = in_dim
        for w in widths:
            layers.append(conv(last, w, 1))
            layers.append(bn(w, eps=config.bn_eps, momentum=1.0 - config.bn_momentum))
            layers.append(nn.ReLU(inplace=True))
            last = w
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class SetAbstraction(nn.Module):
    """FPS-sample centers, ball-group neighbors, shared MLP, max-pool per group."""

    def __init__(self, spec, in_dim, config):
        super().__init__()
        self.spec = spec
        self.in_dim = in_dim
        self.mlp = SharedMLP(in_dim + 3, spec.mlp, config)

    def forward(self, xyz, feats):
        """xyz (B, N, 3), feats (B, N, C) or None -> (B, npoint, 3), (B, npoint, C')."""
        if feats is not None and feats.shape[-1] != self.in_dim:
            raise ValueError(
                f"expected {self.in_dim} input feature channels, got {feats.shape[-1]}")
        b = xyz.shape[0]
        new_xyz = []
        grouped = []
        for i in range(b):
            sel = farthest_point_sampling(xyz[i], self.spec.npoint, start=0)
            centers = xyz[i][sel]
            idx, _ = ball_query(xyz[i], centers, self.spec.radius, self.spec.nsample)
            rel = xyz[i][idx] - centers[:, None, :]
            if feats is not None:
                rel = torch.cat([rel, feats[i][idx]], dim=-1)
            new_xyz.append(centers)
            grouped.append(rel)
        new_xyz = torch.stack(new_xyz)
        grouped = torch.stack(grouped)  # (B, npoint, nsample, 3+C)
        out = self.mlp(grouped.permute(0, 3, 2, 1))  # (B, C', nsample, npoint)
        pooled = out.max(dim=2).values  # (B, C', npoint)
        return new_xyz, pooled.permute(0, 2, 1)


class FeaturePropagation(nn.Module):
    """Carry coarse features back to fine positions by 3-NN interpolation."""

    def __init__(self, spec, in_dim, config):
        super().__init__()
        self.mlp = SharedMLP(in_dim, spec.mlp, config, conv=nn.Conv1d, bn=nn.BatchNorm1d)

    def forward(self, fine_xyz, fine_feats, coarse_xyz, coarse_feats):
        interp = three_nn_interpolate(fine_xyz, coarse_xyz, coarse_feats)
        if fine_feats is not None:
            interp = torch.cat([fine_feats, interp], dim=-1)
        out = self.mlp(interp.permute(0, 2, 1))
        return out.permute(0, 2, 1)


@dataclass
class SeedSet:
    positions: torch.Tensor  # (B, S, 3)
    features: torch.Tensor   # (B, S, C)


@dataclass
class VoteSet:
    positions: torch.Tensor  # (B, S, 3)
    features: torch.Tensor   # (B, S, C)


@dataclass
class ProposalSet:
    cluster_centers: torch.Tensor  # (B, P, 3)
    raw: torch.Tensor              # (B, P, 9)


class Backbone(nn.Module):
    def __init__(self, config):
        super().__init__()
        widths = [None] + [s.mlp[-1] for s in config.sa]
        self.sa_layers = nn.ModuleList()
        in_dim = 0
        for spec in config.sa:
            self.sa_layers.append(SetAbstraction(spec, in_dim, config))
            in_dim = spec.mlp[-1]
        # FP1: SA4 features onto SA3 points; FP2: FP1 output onto SA2 points.
        self.fp1 = FeaturePropagation(config.fp[0], widths[3] + widths[4], config)
        self.fp2 = FeaturePropagation(
            config.fp[1], widths[2] + config.fp[0].mlp[-1], config)

    def forward(self, xyz):
        feats = None
        levels = [(xyz, feats)]
        for sa in self.sa_layers:
            xyz, feats = sa(xyz, feats)
            levels.append((xyz, feats))
        (sa2_xyz, sa2_f), (sa3_xyz, sa3_f), (sa4_xyz, sa4_f) = levels[2:5]
        f3 = self.fp1(sa3_xyz, sa3_f, sa4_xyz, sa4_f)
        seed_feats = self.fp2(sa2_xyz, sa2_f, sa3_xyz, f3)
        return SeedSet(sa2_xyz, seed_feats)


class VotingModule(nn.Module):
    """3 fully connected layers over (position, feature) rows; the first two
    carry batch norm + ReLU, the last is linear and emits per-seed offsets."""

    def __init__(self, config):
        super().__init__()
        width = 3 + config.seed_feature_dim
        h1, h2 = config.vote_hidden
        bn = lambda w: nn.BatchNorm1d(w, eps=config.bn_eps,
                                      momentum=1.0 - config.bn_momentum)
        self.fc1 = nn.Linear(width, h1)
        self.bn1 = bn(h1)
        self.fc2 = nn.Linear(h1, h2)
        self.bn2 = bn(h2)
        self.fc3 = nn.Linear(h2, width)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, seeds):
        b, s, c = seeds.features.shape
        x = torch.cat([seeds.positions, seeds.features], dim=-1)
        rows = x.reshape(b * s, 3 + c)
        assert rows.shape[1] == self.fc1.in_features, "voting input width mismatch"
        h = self.relu(self.bn1(self.fc1(rows)))
        h = self.relu(self.bn2(self.fc2(h)))
        delta = self.fc3(h).reshape(b, s, 3 + c)
        return VoteSet(seeds.positions + delta[..., :3],
                       seeds.features + delta[..., 3:])


class ProposalModule(nn.Module):
    """Cluster votes (FPS + ball grouping), pool, and emit 9 channels each."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        in_dim = 3 + config.seed_feature_dim
        self.sa_mlp = SharedMLP(in_dim, config.proposal_mlp, config)
        h1, h2 = config.head_hidden
        bn = lambda w: nn.BatchNorm1d(w, eps=config.bn_eps,
                                      momentum=1.0 - config.bn_momentum)
        self.head = nn.Sequential(
            nn.Conv1d(config.proposal_mlp[-1], h1, 1), bn(h1), nn.ReLU(inplace=True),
            nn.Conv1d(h1, h2, 1), bn(h2), nn.ReLU(inplace=True),
            nn.Conv1d(h2, NUM_CHANNELS, 1))

    def forward(self, votes):
        cfg = self.config
        b = votes.positions.shape[0]
        centers = []
        grouped = []
        for i in range(b):
            pos = votes.positions[i]
            sel = farthest_point_sampling(pos, cfg.num_proposals, start=0)
            ctr = pos[sel]
            idx, _ = ball_query(pos, ctr, cfg.group_radius, cfg.group_size)
            rel = pos[idx] - ctr[:, None, :]
            rel = torch.cat([rel, votes.features[i][idx]], dim=-1)
            centers.append(ctr)
            grouped.append(rel)
        centers = torch.stack(centers)
        grouped = torch.stack(grouped)
        assert grouped.shape[2] == cfg.group_size, "proposal group size mismatch"
        pooled = self.sa_mlp(grouped.permute(0, 3, 2, 1)).max(dim=2).values
        raw = self.head(pooled).permute(0, 2, 1)
        return ProposalSet(centers, raw)


class RobotDetector(nn.Module):
    """Full pipeline: backbone seeds -> votes -> proposals.

    `anchor` is the reference box size from which size residuals are
    predicted; it is stored with the weights.
    """

    def __init__(self, config, anchor=(0.4, 0.3, 0.35)):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        self.backbone = Backbone(config)
        self.voting = VotingModule(config)
        self.proposal = ProposalModule(config)
        self.register_buffer("anchor", torch.tensor(anchor, dtype=torch.float64))

    def set_anchor(self, anchor):
        self.anchor = torch.as_tensor(anchor, dtype=torch.float64)

    def forward(self, points):
        """points (B, N, 3) -> (SeedSet, VoteSet, ProposalSet)."""
        cfg = self.config
        if points.ndim != 3 or points.shape[-1] != 3:
            raise ValueError(f"expected (B, N, 3) points, got {tuple(points.shape)}")
        points = torch.stack([points[i][canonical_order(points[i])]
                              for i in range(points.shape[0])])
        seeds = self.backbone(points)
        b = points.shape[0]
        assert seeds.positions.shape == (b, cfg.num_seeds, 3), "seed count mismatch"
        assert seeds.features.shape == (b, cfg.num_seeds, cfg.seed_feature_dim), \
            "seed feature width mismatch"
        votes = self.voting(seeds)
        assert votes.positions.shape == (b, cfg.num_seeds, 3), "vote shape mismatch"
        assert votes.features.shape == seeds.features.shape, "vote feature mismatch"
        proposals = self.proposal(votes)
        assert proposals.raw.shape == (b, cfg.num_proposals, NUM_CHANNELS), \
            "proposal shape mismatch"
        return seeds, votes, proposals

    def num_parameters(self):
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# Box encoding / decoding
# ---------------------------------------------------------------------------

def decode(proposals, anchor, batch=0):
    """Decode one batch element into (OrientedBox, score) pairs.

    center = cluster center + offset; size = anchor + residual, clamped to
    MIN_BOX_SIZE; yaw = wrapped heading residual (single heading class at 0);
    score = logistic of the class channel.
    """
    anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
    if np.any(anchor <= 0):
        raise ValueError("anchor components must be > 0")
    centers = proposals.cluster_centers[batch].detach().cpu().numpy().astype(np.float64)
    raw = proposals.raw[batch].detach().cpu().numpy().astype(np.float64)
    out = []
    for i in range(raw.shape[0]):
        center = centers[i] + raw[i, CENTER_OFFSET]
        size = np.maximum(anchor + raw[i, SIZE_RES], MIN_BOX_SIZE)
        yaw = wrap_angle(float(raw[i, HEADING_RES]))
        score = 1.0 / (1.0 + math.exp(-float(raw[i, SCORE])))
        out.append((OrientedBox(center, size, yaw), score))
    return out


def encode_box(box, anchor, cluster_center):
    """Raw 9-channel vector whose decode at `cluster_center` reproduces `box`."""
    anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
    raw = np.zeros(NUM_CHANNELS)
    raw[CENTER_OFFSET] = box.center - np.asarray(cluster_center, dtype=np.float64)
    raw[HEADING_RES] = box.yaw
    raw[SIZE_RES] = box.size - anchor
    return raw


def detect(cloud, model):
    """Run the detector on one cloud and return the best (box, score) pair.

    The model canonicalizes point order internally, and the whole path is
    deterministic, so identical input gives bit-identical output.
    """
    if len(cloud) == 0:
        raise ValueError("cannot detect on an empty cloud")
    was_training = model.training
    model.eval()
    try:
        dtype = next(model.parameters()).dtype
        pts = torch.from_numpy(cloud.points).to(dtype).unsqueeze(0)
        with torch.no_grad():
            _, _, proposals = model(pts)
        scored = decode(proposals, model.anchor.cpu().numpy())
        return max(scored, key=lambda bs: bs[1])
    finally:
        if was_training:
            model.train()


def timed_detect(cloud, model):
    t0 = time.perf_counter()
    box, score = detect(cloud, model)
    return box, score, (time.perf_counter() - t0) * 1000.0


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, epoch=0, optimizer=None, history=None, extra=None):
    payload = {
        "config": model.config.to_dict(),
        "anchor": model.anchor.cpu().numpy().tolist(),
        "state_dict": model.state_dict(),
        "epoch": int(epoch),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "history": list(history) if history is not None else [],
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild (model, payload) from a checkpoint archive."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = NetworkConfig(**payload["config"])
    model = RobotDetector(config, anchor=payload["anchor"])
    model.load_state_dict(payload["state_dict"])
    return model, payload
