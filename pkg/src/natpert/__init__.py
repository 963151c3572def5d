"""Natural perturbed training, adversarial training and accuracy-drop
standardisation on a small numpy CNN."""

from .adversarial import AttackConfig, bim_attack, pgd_example
from .calibrate import CalibrationResult, calibrate_severity, measure_drop
from .datasets import DatasetSource, LabeledImageBatch, load_cifar10, synthetic_shapes
from .model import SgdConfig, SmallConvNet, accuracy, init_params, sgd_step
from .perturb import PerturbationSpec
from .schedules import TrainSchedule, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "bim_attack", "pgd_example",
    "CalibrationResult", "calibrate_severity", "measure_drop",
    "DatasetSource", "LabeledImageBatch", "load_cifar10", "synthetic_shapes",
    "SgdConfig", "SmallConvNet", "accuracy", "init_params", "sgd_step",
    "PerturbationSpec", "TrainSchedule", "train",
]
