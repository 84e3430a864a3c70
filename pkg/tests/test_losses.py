import math

import numpy as np
import pytest
import torch

from arcal.boxes import OrientedBox, points_in_box
from arcal.clouds import PointCloud
from arcal.losses import (TrainingDivergedError, assign_targets, box_loss,
                          compute_losses, sem_cls_loss, total_loss,
                          vote_reg_loss, wrap_angle_t)
from arcal.network import ProposalSet, SeedSet, VoteSet, encode_box

ANCHOR = np.array([0.4, 0.3, 0.35])


def make_seeds(positions):
    pos = torch.as_tensor(np.asarray(positions, dtype=np.float64)).unsqueeze(0)
    feats = torch.zeros((1, pos.shape[1], 4), dtype=torch.float64)
    return SeedSet(pos, feats)


def make_votes(positions):
    pos = torch.as_tensor(np.asarray(positions, dtype=np.float64)).unsqueeze(0)
    feats = torch.zeros((1, pos.shape[1], 4), dtype=torch.float64)
    return VoteSet(pos, feats)


def make_proposals(centers, raw=None):
    centers = torch.as_tensor(np.asarray(centers, dtype=np.float64)).unsqueeze(0)
    if raw is None:
        raw = torch.zeros((1, centers.shape[1], 9), dtype=torch.float64)
    else:
        raw = torch.as_tensor(np.asarray(raw, dtype=np.float64)).unsqueeze(0)
    return ProposalSet(centers, raw)


GT = OrientedBox([0.0, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0)


class TestAssignTargets:
    def test_seed_at_center_positive_zero_offset(self):
        seeds = make_seeds([GT.center, [5.0, 5.0, 5.0]])
        props = make_proposals([GT.center, [5.0, 5.0, 5.0]])
        ta = assign_targets(seeds, props, GT)
        assert ta.seed_mask[0].tolist() == [True, False]
        np.testing.assert_allclose(ta.seed_offset_targets[0, 0].numpy(), 0.0)
        assert ta.proposal_mask[0].tolist() == [True, False]

    def test_no_ground_truth(self):
        seeds = make_seeds([[0.0, 0, 0], [1, 1, 1.0]])
        props = make_proposals([[0.0, 0, 0]])
        ta = assign_targets(seeds, props, None)
        assert ta.num_positive_seeds == 0
        assert not ta.proposal_mask.any()
        assert not ta.has_gt.any()

    def test_positive_seeds_lie_inside_box(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-2, 2, size=(200, 3))
        seeds = make_seeds(pts)
        props = make_proposals(pts[:50])
        ta = assign_targets(seeds, props, GT)
        inside = set(points_in_box(PointCloud(pts), GT).tolist())
        assert set(torch.nonzero(ta.seed_mask[0]).flatten().tolist()) == inside


class TestVoteRegLoss:
    def test_perfect_votes(self):
        seeds = make_seeds([[0.2, 0.1, 0.4], [0.3, -0.2, 0.6]])
        votes = make_votes([GT.center, GT.center])
        props = make_proposals([GT.center])
        ta = assign_targets(seeds, props, GT)
        assert ta.num_positive_seeds == 2
        assert float(vote_reg_loss(votes, ta)) == pytest.approx(0.0, abs=1e-12)

    def test_single_seed_l1(self):
        seeds = make_seeds([[0.2, 0.1, 0.4]])
        votes = make_votes([np.array(GT.center) + [0.3, 0.0, 0.4]])
        props = make_proposals([GT.center])
        ta = assign_targets(seeds, props, GT)
        assert float(vote_reg_loss(votes, ta)) == pytest.approx(0.7, abs=1e-12)

    def test_two_seed_mean(self):
        seeds = make_seeds([[0.2, 0.1, 0.4], [-0.3, 0.2, 0.7]])
        votes = make_votes([np.array(GT.center) + [0.7, 0.0, 0.0],
                            np.array(GT.center) + [0.0, -0.3, 0.0]])
        props = make_proposals([GT.center])
        ta = assign_targets(seeds, props, GT)
        assert float(vote_reg_loss(votes, ta)) == pytest.approx(0.5, abs=1e-12)

    def test_no_positive_returns_zero(self):
        seeds = make_seeds([[5.0, 5, 5]])
        votes = make_votes([[5.0, 5, 5]])
        props = make_proposals([[5.0, 5, 5]])
        ta = assign_targets(seeds, props, GT)
        assert float(vote_reg_loss(votes, ta)) == 0.0

    def test_translation_covariance(self):
        rng = np.random.default_rng(1)
        seed_pts = rng.uniform(-1, 1, size=(32, 3))
        vote_pts = seed_pts + rng.normal(0, 0.2, size=(32, 3))
        shift = np.array([10.0, -5.0, 3.0])
        moved_gt = OrientedBox(GT.center + shift, GT.size, GT.yaw)

        ta = assign_targets(make_seeds(seed_pts), make_proposals(seed_pts[:8]), GT)
        base = float(vote_reg_loss(make_votes(vote_pts), ta))
        ta2 = assign_targets(make_seeds(seed_pts + shift),
                             make_proposals(seed_pts[:8] + shift), moved_gt)
        moved = float(vote_reg_loss(make_votes(vote_pts + shift), ta2))
        assert moved == pytest.approx(base, abs=1e-9)


class TestSemClsLoss:
    def test_perfect_predictions(self):
        props = make_proposals([GT.center, [5.0, 5, 5]])
        ta = assign_targets(make_seeds([GT.center]), props, GT)
        scores = torch.tensor([[1.0 - 1e-7, 1e-7]], dtype=torch.float64)
        loss = float(sem_cls_loss(scores, ta, alpha=1.5, beta=1.0))
        assert loss <= 1e-6 * 2.5

    def test_hand_computed_bce(self):
        # one positive and one negative both at 0.5 -> (1.5 + 1.0) * ln 2
        props = make_proposals([GT.center, [5.0, 5, 5]])
        ta = assign_targets(make_seeds([GT.center]), props, GT)
        scores = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
        loss = float(sem_cls_loss(scores, ta, alpha=1.5, beta=1.0))
        assert loss == pytest.approx(2.5 * math.log(2.0), abs=1e-9)

    def test_no_object_only_negative_term(self):
        props = make_proposals([[0.0, 0, 0], [1.0, 1, 1]])
        ta = assign_targets(make_seeds([[0.0, 0, 0]]), props, None)
        scores = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
        loss = float(sem_cls_loss(scores, ta, alpha=1.5, beta=1.0))
        assert loss == pytest.approx(math.log(2.0), abs=1e-9)

    def test_monotone_in_positive_score(self):
        props = make_proposals([GT.center, [5.0, 5, 5]])
        ta = assign_targets(make_seeds([GT.center]), props, GT)
        losses = []
        for p in (0.3, 0.5, 0.7, 0.9, 0.99):
            scores = torch.tensor([[p, 0.5]], dtype=torch.float64)
            losses.append(float(sem_cls_loss(scores, ta)))
        assert all(a > b for a, b in zip(losses, losses[1:]))


class TestBoxLoss:
    def test_perfect_prediction(self):
        cluster = np.array([0.2, -0.1, 0.6])
        raw = encode_box(GT, ANCHOR, cluster)
        props = make_proposals([cluster], raw=[raw])
        ta = assign_targets(make_seeds([GT.center]), props, GT)
        assert float(box_loss(props, ta, ANCHOR)) == pytest.approx(0.0, abs=1e-12)

    def test_hand_weighted_sum(self):
        # center L1 0.3, heading 0.2, size L1 0.1 -> 10*.3 + 5*.2 + 10*.1 = 5.0
        cluster = np.array(GT.center)
        raw = np.zeros(9)
        raw[0:3] = [0.3, 0.0, 0.0]
        raw[4] = GT.yaw + 0.2
        raw[5:8] = (GT.size - ANCHOR) + [0.1, 0.0, 0.0]
        props = make_proposals([cluster, [9.0, 9, 9]], raw=[raw, np.zeros(9)])
        ta = assign_targets(make_seeds([GT.center]), props, GT)
        assert ta.proposal_mask[0].tolist() == [True, False]
        assert float(box_loss(props, ta, ANCHOR)) == pytest.approx(5.0, abs=1e-9)

    def test_heading_wraps(self):
        gt = OrientedBox(GT.center, GT.size, math.pi - 0.1)
        cluster = np.array(gt.center)
        raw = np.zeros(9)
        raw[4] = -math.pi + 0.1
        raw[5:8] = gt.size - ANCHOR
        props = make_proposals([cluster], raw=[raw])
        ta = assign_targets(make_seeds([gt.center]), props, gt)
        assert float(box_loss(props, ta, ANCHOR)) == pytest.approx(1.0, abs=1e-9)

    def test_no_positive_returns_zero(self):
        props = make_proposals([[9.0, 9, 9]])
        ta = assign_targets(make_seeds([[9.0, 9, 9]]), props, GT)
        assert float(box_loss(props, ta, ANCHOR)) == 0.0


class TestTotalLoss:
    def test_zero(self):
        assert float(total_loss(torch.tensor(0.0), torch.tensor(0.0),
                                torch.tensor(0.0))) == 0.0

    def test_weighted_sum(self):
        # 100*0.01 + 5.0 + 20*0.1 = 8.0
        total = total_loss(torch.tensor(0.01), torch.tensor(5.0), torch.tensor(0.1))
        assert float(total) == pytest.approx(8.0, abs=1e-12)

    def test_linearity(self):
        a = float(total_loss(torch.tensor(0.02), torch.tensor(1.5), torch.tensor(0.3)))
        b = float(total_loss(torch.tensor(0.04), torch.tensor(3.0), torch.tensor(0.6)))
        assert b == pytest.approx(2 * a, rel=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(TrainingDivergedError):
            total_loss(torch.tensor(float("nan")), torch.tensor(0.0),
                       torch.tensor(0.0))

    def test_nonnegative_components(self):
        rng = np.random.default_rng(2)
        seed_pts = rng.uniform(-1, 1, size=(16, 3))
        votes = make_votes(seed_pts + rng.normal(0, 0.3, (16, 3)))
        props = make_proposals(seed_pts[:4],
                               raw=rng.normal(0, 1, (4, 9)))
        ta = assign_targets(make_seeds(seed_pts), props, GT)
        out = compute_losses(votes, props, ta, ANCHOR)
        for key in ("vote", "box", "semantic", "total"):
            assert float(out[key]) >= 0.0


def test_wrap_angle_t_matches_scalar():
    vals = torch.tensor([0.0, math.pi, -math.pi, 3.5, -3.5, 6.9])
    wrapped = wrap_angle_t(vals)
    assert ((wrapped >= -math.pi) & (wrapped < math.pi)).all()
    diff = torch.remainder(wrapped - vals, 2 * math.pi)
    assert torch.allclose(torch.minimum(diff, 2 * math.pi - diff),
                          torch.zeros(6), atol=1e-6)
