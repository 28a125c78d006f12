"""Head-body multi-object tracking toolkit."""
from .geometry import BBox, iou, nms
from .pairing import Detection, PairedDetection
from .tracker import Tracker, TrackerConfig

__version__ = "0.1.0"

__all__ = ["BBox", "iou", "nms", "Detection", "PairedDetection", "Tracker", "TrackerConfig"]
