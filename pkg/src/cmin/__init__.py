"""Cross-modal interaction networks for query-based moment retrieval in videos."""

from .config import RunConfig
from .data import Dataset, QueryRecord, SynthConfig, VideoFeatures, gen_synthetic
from .model import CMIN
from .train import Checkpoint, MetricsReport, evaluate, train

__all__ = ["CMIN", "Checkpoint", "Dataset", "MetricsReport", "QueryRecord", "RunConfig",
           "SynthConfig", "VideoFeatures", "evaluate", "gen_synthetic", "train"]
__version__ = "0.1.0"
