"""Comparative-CNN ordinal age (and gender) estimation in numpy."""

from .comparators import (BinaryComparator, ComparatorBank, binary_target, class_probabilities,
                          comparator_forward, dex_decode, hits_decode, hits_from_outputs,
                          predict_age, ranking_decode, train_comparator_bank)
from .config import RunConfig, load_config, parse_config
from .gradcheck import finite_diff_check
from .loss import (LossConfig, PairBatch, baseline_sweep_loss, comparative_loss,
                   comparative_loss_grad, comparison_label, energy)
from .metrics import EvalReport, mae, make_report, tolerance_accuracy
from .multitask import (HeadSplit, TaskWeights, gender_decode, gender_prototypes, joint_loss,
                        split_embedding)
from .nn import Backbone, Param, ShapeError, sgd_step

__version__ = "0.1.0"

__all__ = [
    "BinaryComparator", "ComparatorBank", "binary_target", "class_probabilities",
    "comparator_forward", "dex_decode", "hits_decode", "hits_from_outputs", "predict_age",
    "ranking_decode", "train_comparator_bank", "RunConfig", "load_config", "parse_config",
    "finite_diff_check", "LossConfig", "PairBatch", "baseline_sweep_loss", "comparative_loss",
    "comparative_loss_grad", "comparison_label", "energy", "EvalReport", "mae", "make_report",
    "tolerance_accuracy", "HeadSplit", "TaskWeights", "gender_decode", "gender_prototypes",
    "joint_loss", "split_embedding", "Backbone", "Param", "ShapeError", "sgd_step",
]
