"""Large-baseline homography estimation with progressive chains and the
homography identity loss, built on plain numpy arrays."""

from . import algebra, correlation, estimator, evaluation, flow, imaging, objective, synthesis
from .errors import HomoscaleError

__version__ = "0.1.0"
