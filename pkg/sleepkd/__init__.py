"""Cross-modal knowledge distillation for sleep staging.

Trains an EEG teacher and distills it into an ECG student of the same
segmentation architecture.
"""

__version__ = "0.1.0"

from sleepkd.config import DistillConfig, Settings, load_config
from sleepkd.core.orchestrator import ExperimentOrchestrator

__all__ = ["DistillConfig", "ExperimentOrchestrator", "Settings", "load_config", "__version__"]
