"""tsunet: 1D U-Net time series segmentation with transfer learning.

Synthetic pretraining corpus generation, label-invariant augmentation,
hand-written training kernels, staged fine-tuning, and sliding-window
streaming inference behind sklearn-style estimators and a CLI.
"""

from .arch import (ArchSpec, MUNet, UNet, build_model, load_model, save_model,
                   transplant_unet_to_munet, transplant_unet_to_unet)
from .augment import AugmentOp, AugmentPolicy, apply, check_invariance
from .errors import ConfigError, DataError, FormatError, NumericError, TsunetError
from .estimators import StreamingDetector, TimeSeriesSegmenter
from .optim import Param, adam_step
from .series import ANOMALY_KINDS, LabeledSeries
from .stream import (AnomalyEvent, NormalizationSpec, SnapshotPlan, detect,
                     ensemble, extract_events, plan_snapshots, resample)
from .synth import (AnomalySpec, NominalFamily, gen_nominal, inject_anomaly,
                    make_pretraining_set, make_shape_task_set)
from .train import (EvalReport, TrainConfig, evaluate, finetune_freeze,
                    finetune_multipliers, iou_per_class, mean_iou,
                    soft_dice_loss, train)

__version__ = "0.1.0"

__all__ = [
    "ANOMALY_KINDS", "AnomalyEvent", "AnomalySpec", "ArchSpec", "AugmentOp",
    "AugmentPolicy", "ConfigError", "DataError", "EvalReport", "FormatError",
    "LabeledSeries", "MUNet", "NominalFamily", "NormalizationSpec",
    "NumericError", "Param", "SnapshotPlan", "StreamingDetector",
    "TimeSeriesSegmenter", "TrainConfig", "TsunetError", "UNet", "adam_step",
    "apply", "build_model", "check_invariance", "detect", "ensemble",
    "evaluate", "extract_events", "finetune_freeze", "finetune_multipliers",
    "gen_nominal", "inject_anomaly", "iou_per_class", "load_model",
    "make_pretraining_set", "make_shape_task_set", "mean_iou",
    "plan_snapshots", "resample", "save_model", "soft_dice_loss", "train",
    "transplant_unet_to_munet", "transplant_unet_to_unet",
]
