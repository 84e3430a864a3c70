"""Dataset splitting, the training loop, evaluation metrics and synthetic scenes.

Training follows a milestone-decayed Adam schedule with label-consistent
augmentation and fixed-size subsampling per sample. All randomness is derived
from (master seed, epoch, sample index), so an interrupted run resumed from a
checkpoint reproduces the uninterrupted history exactly.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import augment
from .augment import LabeledCloud, augment_sample, subsample
from .boxes import OrientedBox, box_iou, wrap_angle
from .clouds import PointCloud
from .losses import (TrainingDivergedError, assign_targets, compute_losses,
                     DEFAULT_ALPHA, DEFAULT_BETA)
from .network import RobotDetector, detect, save_checkpoint, load_checkpoint


@dataclass
class TrainConfig:
    epochs: int = 480
    batch_size: int = 8
    base_lr: float = 0.001
    lr_milestones: tuple = ((200, 0.1), (400, 0.1))
    subsample_n: int = 25000
    seed: int = 0
    flip: bool = True
    rotate: bool = True
    scale: bool = True
    scale_range: tuple = (0.85, 1.15)
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    checkpoint_every: int = 20
    # draw a fresh subsample every epoch (the full-scale recipe); fixed draws
    # make small-corpus memorization runs converge much deeper
    resample_each_epoch: bool = True

    def __post_init__(self):
        self.lr_milestones = tuple((int(m), float(f)) for m, f in self.lr_milestones)
        last = -1
        for m, f in self.lr_milestones:
            if m <= last:
                raise ValueError("lr milestones must be strictly increasing")
            if not 0.0 < f <= 1.0:
                raise ValueError(f"lr factor {f} outside (0, 1]")
            last = m


@dataclass
class DatasetSplit:
    train_ids: list
    test_ids: list

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"train/test ids overlap: {sorted(overlap)[:5]}")


def split_dataset(corpus, train_count, seed):
    """Deterministic shuffled split of a corpus (ids or LabeledClouds)."""
    ids = [c.cloud_id if isinstance(c, LabeledCloud) else c for c in corpus]
    if not 0 < train_count < len(ids):
        raise ValueError(
            f"train_count must be in (0, {len(ids)}), got {train_count}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return DatasetSplit(shuffled[:train_count], shuffled[train_count:])


def lr_at(config, epoch):
    """Base rate times every milestone factor whose epoch has been reached."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    lr = config.base_lr
    for milestone, factor in config.lr_milestones:
        if milestone <= epoch:
            lr *= factor
    return lr


def compute_anchor(samples):
    """Per-component mean of label sizes; the reference size for residuals."""
    sizes = [lc.box.size for lc in samples if lc.has_object]
    if not sizes:
        raise ValueError("cannot compute an anchor without labeled objects")
    return np.mean(np.stack(sizes), axis=0)


def _sample_seed(master, epoch, index):
    return np.random.SeedSequence((master, epoch, index)).generate_state(1)[0]


def _prepare_sample(lc, config, epoch, index):
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch, index)))
    aug = augment_sample(lc, rng, flip=config.flip, rotate=config.rotate,
                         scale=config.scale, scale_range=config.scale_range)
    sub_epoch = epoch if config.resample_each_epoch else 0
    cloud = subsample(aug.cloud, config.subsample_n,
                      _sample_seed(config.seed, sub_epoch, index))
    assert len(cloud) == config.subsample_n
    return cloud, aug.box


def train(corpus, split, net_config, train_config, out_dir=None, resume_from=None,
          log=None):
    """Train a detector; returns (model, history).

    Emits a checkpoint every `checkpoint_every` epochs plus a best-by-test-IoU
    one when the split has a test set. A non-finite loss aborts with
    TrainingDivergedError whose `.checkpoint` holds the last good state.
    """
    by_id = {lc.cloud_id: lc for lc in corpus}
    train_samples = [by_id[i] for i in split.train_ids]
    if not train_samples:
        raise ValueError("training set is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        model, payload = load_checkpoint(resume_from)
        optimizer = torch.optim.Adam(model.parameters(), lr=train_config.base_lr,
                                     betas=(0.9, 0.999), eps=1e-8)
        if payload.get("optimizer"):
            optimizer.load_state_dict(payload["optimizer"])
        start_epoch = payload["epoch"]
        history = list(payload.get("history", []))
    else:
        anchor = compute_anchor(train_samples)
        model = RobotDetector(net_config, anchor=anchor)
        optimizer = torch.optim.Adam(model.parameters(), lr=train_config.base_lr,
                                     betas=(0.9, 0.999), eps=1e-8)
        start_epoch = 0
        history = []

    anchor_np = model.anchor.cpu().numpy()
    best_iou = max((h.get("test_iou", -1.0) for h in history), default=-1.0)
    last_good = None

    for epoch in range(start_epoch, train_config.epochs):
        lr = lr_at(train_config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()

        order = np.random.default_rng(
            np.random.SeedSequence((train_config.seed, epoch))).permutation(
                len(train_samples))
        sums = {"total": 0.0, "vote": 0.0, "box": 0.0, "semantic": 0.0}
        n_batches = 0
        for lo in range(0, len(order), train_config.batch_size):
            batch_idx = order[lo:lo + train_config.batch_size]
            clouds, gts = [], []
            for j in batch_idx:
                cloud, box = _prepare_sample(train_samples[j], train_config,
                                             epoch, int(j))
                clouds.append(torch.from_numpy(cloud.points).float())
                gts.append(box)
            points = torch.stack(clouds)

            optimizer.zero_grad()
            seeds, votes, proposals = model(points)
            ta = assign_targets(seeds, proposals, gts)
            try:
                losses = compute_losses(votes, proposals, ta, anchor_np,
                                        alpha=train_config.alpha,
                                        beta=train_config.beta)
            except TrainingDivergedError:
                _abort_diverged(last_good, out_dir)
            total = losses["total"]
            total.backward()
            optimizer.step()
            for key in sums:
                sums[key] += float(losses[key].detach())
            n_batches += 1

        entry = {"epoch": epoch, "lr": lr}
        entry.update({k: v / n_batches for k, v in sums.items()})
        history.append(entry)
        if log:
            log(entry)

        last_good = {
            "state_dict": copy.deepcopy(model.state_dict()),
            "optimizer": copy.deepcopy(optimizer.state_dict()),
            "epoch": epoch + 1,
        }

        checkpoint_due = ((epoch + 1) % train_config.checkpoint_every == 0
                          or epoch + 1 == train_config.epochs)
        if checkpoint_due:
            if out_dir is not None:
                save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}.pt", model,
                                epoch=epoch + 1, optimizer=optimizer,
                                history=history)
            if split.test_ids:
                metrics = evaluate(model, corpus, split.test_ids)
                history[-1]["test_iou"] = metrics["mean_iou"]
                if out_dir is not None and metrics["mean_iou"] > best_iou:
                    best_iou = metrics["mean_iou"]
                    save_checkpoint(out_dir / "best.pt", model,
                                    epoch=epoch + 1, optimizer=optimizer,
                                    history=history)

    return model, history


def _abort_diverged(last_good, out_dir):
    err = TrainingDivergedError("training loss became non-finite")
    err.checkpoint = last_good
    if last_good is not None and out_dir is not None:
        torch.save(last_good, out_dir / "last_good.pt")
        err.checkpoint_path = out_dir / "last_good.pt"
    raise err


def yaw_error_mod_pi(a, b):
    """Absolute yaw difference under the 180-degree rectangle symmetry."""
    e = abs(wrap_angle(a - b)) % math.pi
    return min(e, math.pi - e)


def evaluate(model, corpus, ids):
    """Full-resolution, batch-size-1 detection metrics over `ids`."""
    by_id = {lc.cloud_id: lc for lc in corpus}
    samples = [by_id[i] for i in ids]
    if not samples:
        raise ValueError("evaluation set is empty")
    ious, center_errs, yaw_errs = [], [], []
    hits25 = hits50 = labeled = 0
    for lc in samples:
        box, score = detect(lc.cloud, model)
        if not lc.has_object:
            continue
        labeled += 1
        iou = box_iou(box, lc.box)
        ious.append(iou)
        center_errs.append(float(np.linalg.norm(box.center - lc.box.center)))
        yaw_errs.append(yaw_error_mod_pi(box.yaw, lc.box.yaw))
        hits25 += iou >= 0.25
        hits50 += iou >= 0.5
    return {
        "count": labeled,
        "mean_iou": float(np.mean(ious)) if ious else 0.0,
        "mean_center_error": float(np.mean(center_errs)) if center_errs else 0.0,
        "mean_yaw_error": float(np.mean(yaw_errs)) if yaw_errs else 0.0,
        "detection_rate_iou25": hits25 / labeled if labeled else 0.0,
        "detection_rate_iou50": hits50 / labeled if labeled else 0.0,
    }


# ---------------------------------------------------------------------------
# Synthetic desk-scale scenes
# ---------------------------------------------------------------------------

@dataclass
class SceneSpec:
    robot_length: tuple = (0.35, 0.55)
    robot_width: tuple = (0.22, 0.38)
    robot_height: tuple = (0.25, 0.40)
    # a rectangle's yaw is only defined modulo pi; labels use the canonical half
    yaw_range: tuple = (-math.pi / 2, math.pi / 2)
    floor_extent: float = 1.6
    floor_points: int = 1200
    robot_points: int = 800
    clutter_count: int = 3
    clutter_points: int = 150
    noise_sigma: float = 0.0
    has_object: bool = True


def _box_surface_points(rng, box, n):
    """Uniform-by-area samples on the six faces, corners always included."""
    l, w, h = box.size
    areas = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    counts = np.maximum((areas / areas.sum() * n).astype(int), 4)
    pts = []
    for face, count in enumerate(counts):
        r = rng.random((count, 2))
        if face < 2:  # x = +-l/2
            x = np.full(count, l / 2 if face == 0 else -l / 2)
            local = np.stack([x, (r[:, 0] - 0.5) * w, r[:, 1] * h - h / 2], axis=1)
        elif face < 4:  # y = +-w/2
            y = np.full(count, w / 2 if face == 2 else -w / 2)
            local = np.stack([(r[:, 0] - 0.5) * l, y, r[:, 1] * h - h / 2], axis=1)
        else:  # z = +-h/2
            z = np.full(count, h / 2 if face == 4 else -h / 2)
            local = np.stack([(r[:, 0] - 0.5) * l, (r[:, 1] - 0.5) * w, z], axis=1)
        pts.append(local)
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                pts.append(np.array([[sx * l / 2, sy * w / 2, sz * h / 2]]))
    local = np.concatenate(pts)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def synth_scene(spec, seed, cloud_id=None):
    """Floor plane + box-surface robot + clutter boxes, labeled by construction."""
    rng = np.random.default_rng(seed)
    cloud_id = cloud_id or f"scene_{seed:06d}"
    parts = []

    ext = spec.floor_extent
    floor = np.zeros((spec.floor_points, 3))
    floor[:, :2] = rng.uniform(-ext, ext, size=(spec.floor_points, 2))
    parts.append(floor)

    box = None
    if spec.has_object:
        size = np.array([rng.uniform(*spec.robot_length),
                         rng.uniform(*spec.robot_width),
                         rng.uniform(*spec.robot_height)])
        margin = float(np.linalg.norm(size[:2])) / 2.0 + 0.1
        center = np.array([rng.uniform(-ext + margin, ext - margin),
                           rng.uniform(-ext + margin, ext - margin),
                           size[2] / 2.0])
        box = OrientedBox(center, size, rng.uniform(*spec.yaw_range))
        parts.append(_box_surface_points(rng, box, spec.robot_points))

    for _ in range(spec.clutter_count):
        csize = rng.uniform(0.08, 0.35, size=3)
        for _ in range(50):
            cxy = rng.uniform(-ext + 0.2, ext - 0.2, size=2)
            if box is None:
                break
            gap = np.linalg.norm(cxy - box.center[:2])
            if gap > (np.linalg.norm(box.size[:2]) + np.linalg.norm(csize[:2])) / 2 + 0.1:
                break
        cbox = OrientedBox(np.array([cxy[0], cxy[1], csize[2] / 2.0]), csize,
                           rng.uniform(-math.pi, math.pi))
        parts.append(_box_surface_points(rng, cbox, spec.clutter_points))

    points = np.concatenate(parts)
    if spec.noise_sigma > 0:
        points = points + rng.normal(0.0, spec.noise_sigma, size=points.shape)
    return LabeledCloud(PointCloud(points), box, cloud_id,
                        has_object=spec.has_object)


def synth_corpus(count, seed, spec=None, directory=None, negative_fraction=0.0):
    """Generate `count` scenes; optionally persist them as PLY/JSON pairs."""
    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        scene_spec = spec
        if negative_fraction > 0 and rng.random() < negative_fraction:
            scene_spec = dataclasses.replace(spec, has_object=False)
        out.append(synth_scene(scene_spec, int(rng.integers(2 ** 31)),
                               cloud_id=f"scene_{i:05d}"))
    if directory is not None:
        for lc in out:
            augment.save_labeled(lc, directory)
    return out
