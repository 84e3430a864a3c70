"""Marker-less AR-robot calibration toolkit.

Depth frames become point clouds, a 3-corner annotation flow produces
oriented-box labels, a deep voting detector localizes the robot, and the
detected pose closes the AR-to-map calibration chain.
"""

from .clouds import (DepthFrame, PointCloud, RigidTransform, PlyParseError,
                     calibrate_ar_to_map, compose, depth_to_cloud, filter_range,
                     invert, apply_transform, load_ply, loads_ply, save_ply)
from .boxes import (CornerTriple, OrientedBox, DegenerateCornersError,
                    EmptyObjectError, OrthogonalityError, base_plane,
                    box_from_corners, box_iou, box_to_transform, fourth_corner,
                    points_in_box, wrap_angle)
from .augment import LabeledCloud, flip_axis, random_scale, rotate_z, subsample
from .network import (NetworkConfig, RobotDetector, decode, detect,
                      default_config, reduced_config, tiny_config,
                      farthest_point_sampling, ball_query,
                      load_checkpoint, save_checkpoint)
from .losses import (TargetAssignment, TrainingDivergedError, assign_targets,
                     box_loss, sem_cls_loss, total_loss, vote_reg_loss)
from .training import (DatasetSplit, SceneSpec, TrainConfig, evaluate, lr_at,
                       split_dataset, synth_corpus, synth_scene, train)

__version__ = "0.1.0"
