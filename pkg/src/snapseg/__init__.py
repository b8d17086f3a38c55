"""snapseg: self-supervised snapshot features for point-cloud segmentation.

The pipeline: sample local neighborhoods (snapshots) from an unlabeled
scene, learn features by contrasting snapshot parts and fields of view,
refine them through cluster-id classification, train a linear classifier
on a small labeled budget, and segment whole scenes by letting classified
snapshots vote on every point they cover.
"""

from .clustering import (KMeans, PseudoLabelSet, cluster_pseudo_label,
                         label_cluster_centers, select_random_clusters)
from .encoder import (PointSetEncoder, TrainConfig, TrainingDiverged,
                      gradient_check, load_encoder, save_encoder)
from .evaluation import (ConfusionMatrix, confusion, label_fraction_sweep,
                         metrics, overall_accuracy)
from .pairs import (ContrastPair, HalfCut, half_cut, make_multifov_pairs,
                    make_part_pairs, make_scale_pairs, normalize_points,
                    normalize_sets)
from .sampler import (AdaptiveFovSelector, MultiFovSnapshot, Snapshot,
                      SnapshotLabel, load_snapshots, presample_variance,
                      purity_report, sample_multi_fov, sample_single_fov,
                      save_snapshots, select_fov, vote_label)
from .scene_io import (UNLABELED, ClassRemap, PointCloud, export_colored_ply,
                       load_scene, remap_labels, save_scene)
from .segmenter import (EncoderSvmClassifier, SegmentConfig, VoteTable,
                        fine_tune_for_scene, resolve_votes, segment)
from .spatial_index import KdTree, build, knn, random_anchor
from .svm import LinearSvm, build_weak_training_set, load_svm, save_svm
from .synth import CLASS_NAMES, PALETTE, SceneSpec, generate, scene_digest

__version__ = "0.1.0"
