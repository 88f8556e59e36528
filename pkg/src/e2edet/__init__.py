"""End-to-end detection workbench: one-to-one label assignment, 3D max
filtering over feature pyramids, NMS variants and COCO-style evaluation."""

__version__ = "0.1.0"

from .geometry import (Box, GroundTruth, GroundTruthSet, Prediction, PredictionSet, giou,
                       in_box, in_center_region, iou, pairwise_giou, pairwise_iou)
from .pyramid import (FeaturePyramid, FilterParams, bilinear_resize, hard_3dmf, max_filter_3d,
                      read_pyramid, write_pyramid)
from .dmf import DmfWeights, dmf_backward, dmf_forward
from .losses import LossParams, focal_loss, giou_loss, total_loss
from .quality import QualityParams, quality_matrix
from .matching import Assignment, brute_force_match, hungarian_max, loss_cost_match
from .assign_rules import RULES, RuleConfig, TargetSet, assign
from .detections import Detections
from .metrics import (EvalResult, average_precision, average_recall, duplicate_count, evaluate,
                      match_detections)
from .nms import NmsConfig, greedy_nms, nms_study
from .sim import OracleConfig, SceneConfig, gen_scenes, oracle_predict, run_study, simulate
from .estimators import DetectionEvaluator, LabelAssigner, MaxFilter3D, NMS
