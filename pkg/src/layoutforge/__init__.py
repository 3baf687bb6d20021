"""Label-conditioned room plan and furniture layout generation with a small numpy autodiff engine."""

from .config import RunConfig, load_config
from .dataset import Dataset, DatasetConfig, load_scenes, save_scenes, split, synthesize_dataset
from .domain import FloorPlan, FurnitureItem, Rect, RoomLabel, RoomType, Scene, label_from_dimensions
from .gan import Pipeline, TrainingState, generate, train_epoch
from .metrics import box_iou, layout_iou, mode_accuracy

__all__ = [
    "RunConfig", "load_config", "Dataset", "DatasetConfig", "load_scenes", "save_scenes", "split",
    "synthesize_dataset", "FloorPlan", "FurnitureItem", "Rect", "RoomLabel", "RoomType", "Scene",
    "label_from_dimensions", "Pipeline", "TrainingState", "generate", "train_epoch", "box_iou",
    "layout_iou", "mode_accuracy",
]
__version__ = "0.1.0"
