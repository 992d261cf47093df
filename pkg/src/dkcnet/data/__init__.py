from .augment import AugmentOp, apply_augmentation, augmentation_kinds
from .balance import (
    BalancePlan,
    ClassPlan,
    execute_balance,
    plan_oversample,
    plan_undersample,
)
from .imaging import crop_fov, fov_bbox, load_image, resize, save_image
from .records import (
    CLASS_NAMES,
    EyeRecord,
    KeywordMap,
    PairRecord,
    load_keyword_map,
    split_pair_labels,
)
from .synthetic import generate_synthetic_dataset

__all__ = [
    "AugmentOp",
    "BalancePlan",
    "CLASS_NAMES",
    "ClassPlan",
    "EyeRecord",
    "KeywordMap",
    "PairRecord",
    "apply_augmentation",
    "augmentation_kinds",
    "crop_fov",
    "execute_balance",
    "fov_bbox",
    "generate_synthetic_dataset",
    "load_image",
    "load_keyword_map",
    "plan_oversample",
    "plan_undersample",
    "resize",
    "save_image",
    "split_pair_labels",
]
