"""Generalized fiducial inference for sparse covariance matrices."""
__version__ = "0.1.0"

from .density import L2, LINF, NormChoice
from .linalg import ObservationSet, SpdMatrix, fm_distance, log_det
from .models import CliqueModel, CovariateMatrix, SparsityPattern

__all__ = ["CliqueModel", "CovariateMatrix", "L2", "LINF", "NormChoice", "ObservationSet",
           "SparsityPattern", "SpdMatrix", "fm_distance", "log_det", "__version__"]
