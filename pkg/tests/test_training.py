import math

import numpy as np
import pytest
import torch

from arcal.augment import LabeledCloud
from arcal.boxes import OrientedBox, base_corners, box_from_corners, points_in_box
from arcal.clouds import PointCloud
from arcal.losses import TrainingDivergedError
from arcal.network import (NUM_CHANNELS, ProposalSet, RobotDetector, SeedSet,
                           VoteSet, encode_box, tiny_config)
from arcal.training import (DatasetSplit, SceneSpec, TrainConfig, compute_anchor,
                            evaluate, lr_at, split_dataset, synth_corpus,
                            synth_scene, train, yaw_error_mod_pi)

MICRO_SPEC = SceneSpec(floor_points=120, robot_points=160, clutter_count=0,
                       clutter_points=0, floor_extent=1.0)


def micro_corpus(n=3, seed=5):
    return synth_corpus(n, seed=seed, spec=MICRO_SPEC)


def micro_train_config(**overrides):
    kw = dict(epochs=2, batch_size=2, base_lr=0.001, lr_milestones=(),
              subsample_n=128, seed=0, flip=False, rotate=False, scale=False,
              checkpoint_every=100)
    kw.update(overrides)
    return TrainConfig(**kw)


class TestSplitDataset:
    def test_exact_paper_split(self):
        ids = [f"c{i:04d}" for i in range(597)]
        split = split_dataset(ids, 537, seed=3)
        assert len(split.train_ids) == 537
        assert len(split.test_ids) == 60
        assert set(split.train_ids) | set(split.test_ids) == set(ids)
        assert not set(split.train_ids) & set(split.test_ids)

    def test_deterministic(self):
        ids = [f"c{i}" for i in range(50)]
        a = split_dataset(ids, 40, seed=9)
        b = split_dataset(ids, 40, seed=9)
        assert a.train_ids == b.train_ids and a.test_ids == b.test_ids

    def test_full_train_count_rejected(self):
        with pytest.raises(ValueError):
            split_dataset(["a", "b", "c"], 3, seed=0)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            DatasetSplit(["a", "b"], ["b", "c"])


class TestLrSchedule:
    config = TrainConfig(epochs=480, lr_milestones=((200, 0.1), (400, 0.1)),
                         base_lr=0.001)

    @pytest.mark.parametrize("epoch,expected", [
        (0, 0.001), (199, 0.001), (200, 0.0001), (399, 0.0001),
        (400, 0.00001), (479, 0.00001),
    ])
    def test_paper_schedule(self, epoch, expected):
        assert lr_at(self.config, epoch) == pytest.approx(expected, rel=1e-12)

    def test_non_increasing(self):
        rates = [lr_at(self.config, e) for e in range(480)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_epoch_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(self.config, 480)

    def test_bad_milestones_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_milestones=((200, 0.1), (100, 0.1)))
        with pytest.raises(ValueError):
            TrainConfig(lr_milestones=((200, 1.5),))


class TestSynthScene:
    def test_enough_points_inside_box(self):
        lc = synth_scene(SceneSpec(), seed=11)
        assert len(points_in_box(lc.cloud, lc.box)) >= 500

    def test_deterministic(self):
        a = synth_scene(SceneSpec(), seed=12)
        b = synth_scene(SceneSpec(), seed=12)
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.box.center, b.box.center)

    def test_corner_annotation_recovers_label(self):
        for seed in (13, 14, 15):
            lc = synth_scene(SceneSpec(), seed=seed)
            box = box_from_corners(lc.cloud, base_corners(lc.box),
                                   height_threshold=1.0)
            assert np.all(np.abs(box.center - lc.box.center) <= 1e-3 * lc.box.size)
            assert np.all(np.abs(box.size - lc.box.size) <= 1e-3 * lc.box.size)
            yaw_err = yaw_error_mod_pi(box.yaw, lc.box.yaw)
            assert yaw_err < 1e-3

    def test_negative_scene(self):
        lc = synth_scene(SceneSpec(has_object=False), seed=16)
        assert not lc.has_object and lc.box is None
        assert len(lc.cloud) > 0


class TestComputeAnchor:
    def test_mean_of_sizes(self):
        corpus = micro_corpus()
        anchor = compute_anchor(corpus)
        expected = np.mean([lc.box.size for lc in corpus], axis=0)
        np.testing.assert_allclose(anchor, expected)

    def test_requires_objects(self):
        lc = synth_scene(SceneSpec(has_object=False), seed=17)
        with pytest.raises(ValueError):
            compute_anchor([lc])


class TestTrainLoop:
    def test_history_and_checkpoints(self, tmp_path):
        corpus = micro_corpus()
        split = DatasetSplit([lc.cloud_id for lc in corpus], [])
        model, history = train(corpus, split, tiny_config(seed=1),
                               micro_train_config(epochs=2, checkpoint_every=1),
                               out_dir=tmp_path)
        assert len(history) == 2
        assert all(math.isfinite(h["total"]) for h in history)
        assert (tmp_path / "epoch_0001.pt").exists()
        assert (tmp_path / "epoch_0002.pt").exists()

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        corpus = micro_corpus()
        split = DatasetSplit([lc.cloud_id for lc in corpus], [])
        cfg = tiny_config(seed=2)

        _, full_history = train(corpus, split, cfg,
                                micro_train_config(epochs=4))
        full_model, _ = train(corpus, split, cfg, micro_train_config(epochs=4))

        train(corpus, split, cfg, micro_train_config(epochs=2, checkpoint_every=2),
              out_dir=tmp_path)
        resumed_model, resumed_history = train(
            corpus, split, cfg, micro_train_config(epochs=4),
            resume_from=tmp_path / "epoch_0002.pt")

        assert len(resumed_history) == 4
        for a, b in zip(full_history, resumed_history):
            assert a["total"] == pytest.approx(b["total"], rel=0, abs=0)
        for va, vb in zip(full_model.state_dict().values(),
                          resumed_model.state_dict().values()):
            np.testing.assert_array_equal(va.numpy(), vb.numpy())

    def test_batches_carry_exact_subsample_count(self, monkeypatch):
        import arcal.training as training_mod
        corpus = micro_corpus()
        split = DatasetSplit([lc.cloud_id for lc in corpus], [])
        seen = []
        original = training_mod._prepare_sample

        def spy(lc, config, epoch, index):
            cloud, box = original(lc, config, epoch, index)
            seen.append(len(cloud))
            return cloud, box

        monkeypatch.setattr(training_mod, "_prepare_sample", spy)
        train(corpus, split, tiny_config(seed=3), micro_train_config(epochs=1))
        assert seen and all(n == 128 for n in seen)

    def test_divergence_aborts_with_last_good(self, tmp_path, monkeypatch):
        import arcal.training as training_mod
        corpus = micro_corpus()
        split = DatasetSplit([lc.cloud_id for lc in corpus], [])
        calls = {"n": 0}
        original = training_mod.compute_losses

        def poisoned(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] > 2:
                raise TrainingDivergedError("vote loss is non-finite (nan)")
            return original(*args, **kwargs)

        monkeypatch.setattr(training_mod, "compute_losses", poisoned)
        with pytest.raises(TrainingDivergedError) as exc:
            train(corpus, split, tiny_config(seed=4),
                  micro_train_config(epochs=3), out_dir=tmp_path)
        assert exc.value.checkpoint is not None
        assert (tmp_path / "last_good.pt").exists()


class FakeDetector(torch.nn.Module):
    """Emits one proposal decoding exactly to a preset box with score ~1."""

    def __init__(self, box, anchor=(0.4, 0.3, 0.35)):
        super().__init__()
        self.box = box
        self.register_buffer("anchor", torch.tensor(anchor, dtype=torch.float64))
        self._param = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, points):
        b = points.shape[0]
        cluster = np.zeros(3)
        raw = encode_box(self.box, self.anchor.numpy(), cluster)
        raw[-1] = 10.0  # high confidence
        raw_t = torch.from_numpy(raw).expand(b, 1, NUM_CHANNELS).to(points.dtype)
        centers = torch.zeros((b, 1, 3), dtype=points.dtype)
        seeds = SeedSet(centers, torch.zeros((b, 1, 4), dtype=points.dtype))
        votes = VoteSet(centers, seeds.features)
        return seeds, votes, ProposalSet(centers, raw_t)


class TestEvaluate:
    def test_perfect_model(self):
        corpus = micro_corpus(n=2)
        # a per-scene oracle is impossible with one FakeDetector; use one scene
        lc = corpus[0]
        metrics = evaluate(FakeDetector(lc.box), [lc], [lc.cloud_id])
        assert metrics["mean_iou"] == pytest.approx(1.0, abs=1e-9)
        assert metrics["mean_center_error"] == pytest.approx(0.0, abs=1e-9)
        assert metrics["mean_yaw_error"] == pytest.approx(0.0, abs=1e-9)
        assert metrics["detection_rate_iou50"] == 1.0

    def test_anchor_at_origin_misses(self):
        lc = synth_scene(SceneSpec(floor_extent=1.0), seed=18)
        # push the scene away from the origin so the fixed box cannot overlap
        shifted = LabeledCloud(
            PointCloud(lc.cloud.points + np.array([5.0, 5.0, 0.0])),
            OrientedBox(lc.box.center + [5.0, 5.0, 0.0], lc.box.size, lc.box.yaw),
            lc.cloud_id)
        bogus = FakeDetector(OrientedBox([0, 0, 0.2], [0.4, 0.3, 0.35], 0.0))
        metrics = evaluate(bogus, [shifted], [shifted.cloud_id])
        assert metrics["mean_iou"] == 0.0
        assert metrics["detection_rate_iou25"] == 0.0

    def test_never_mutates_model(self):
        corpus = micro_corpus(n=1)
        model = RobotDetector(tiny_config(seed=5))
        before = {k: v.clone() for k, v in model.state_dict().items()}
        evaluate(model, corpus, [corpus[0].cloud_id])
        for k, v in model.state_dict().items():
            np.testing.assert_array_equal(before[k].numpy(), v.numpy())


class TestYawErrorModPi:
    @pytest.mark.parametrize("a,b,expected", [
        (0.0, 0.0, 0.0),
        (0.3, 0.3 + math.pi, 0.0),
        (0.3, 0.1, 0.2),
        (math.pi - 0.05, -math.pi + 0.05, 0.1),
        (1.5, -1.5, math.pi - 3.0),
    ])
    def test_cases(self, a, b, expected):
        assert yaw_error_mod_pi(a, b) == pytest.approx(expected, abs=1e-9)
