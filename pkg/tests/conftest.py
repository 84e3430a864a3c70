"""Shared fixtures.

The overfit fixture trains the reduced detector once per session on 10
synthetic scenes and is reused by the acceptance suite and the service
quality tests; it takes a few minutes on CPU.
"""

import time

import pytest

from arcal.augment import LabeledCloud, subsample
from arcal.network import FPSpec, NetworkConfig, SASpec
from arcal.training import DatasetSplit, SceneSpec, TrainConfig, synth_corpus, train

OVERFIT_SCENE_SPEC = SceneSpec(
    robot_length=(0.48, 0.56), robot_width=(0.3, 0.38), robot_height=(0.28, 0.36),
    yaw_range=(-1.2, 1.2), floor_extent=1.1, floor_points=600, robot_points=700,
    clutter_count=2, clutter_points=100)

OVERFIT_POINTS = 1500


def overfit_corpus(count=10, seed=101):
    """Equal-sized scenes so a full-size subsample is just a permutation."""
    return [LabeledCloud(subsample(lc.cloud, OVERFIT_POINTS, seed=i), lc.box,
                         lc.cloud_id)
            for i, lc in enumerate(synth_corpus(count, seed=seed,
                                                spec=OVERFIT_SCENE_SPEC))]


def overfit_net_config():
    return NetworkConfig(
        sa=(SASpec(256, 0.25, 16, (16, 16, 32)),
            SASpec(128, 0.4, 16, (32, 32, 64)),
            SASpec(64, 0.8, 8, (32, 32, 64)),
            SASpec(32, 1.2, 8, (32, 32, 64))),
        fp=(FPSpec((128,)), FPSpec((128,))),
        vote_hidden=(128, 128),
        num_proposals=96, group_radius=0.3, group_size=48,
        proposal_mlp=(128, 128, 128), head_hidden=(128, 128), seed=0)


def overfit_train_config(epochs=200):
    return TrainConfig(epochs=epochs, batch_size=5, base_lr=0.003,
                       lr_milestones=((120, 0.2), (170, 0.25)),
                       subsample_n=OVERFIT_POINTS, seed=0,
                       flip=False, rotate=False, scale=False,
                       checkpoint_every=1000, resample_each_epoch=False)


@pytest.fixture(scope="session")
def overfit_run():
    corpus = overfit_corpus()
    split = DatasetSplit([lc.cloud_id for lc in corpus], [])
    start = time.perf_counter()
    model, history = train(corpus, split, overfit_net_config(),
                           overfit_train_config())
    elapsed = time.perf_counter() - start
    return {"model": model, "corpus": corpus, "history": history,
            "train_seconds": elapsed}
