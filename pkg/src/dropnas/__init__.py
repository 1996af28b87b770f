"""Hardware-aware neural dropout search.

Trains a weight-sharing supernet whose dropout layers each offer several
dropout designs, then searches the per-layer configuration space for the best
trade-off between accuracy, calibration, predictive entropy and latency.
"""

from .dropout import DropoutKind, DropoutParams
from .evosearch import AimWeights, EaParams, aim_score, pareto_front, search
from .metrics import EvalMetrics
from .supernet import Choice, SlotSpec, SupernetSpec, train_supernet

__version__ = "0.1.0"
