import abc
from typing import Any, Tuple

from core.config import IdentConfig


class BaseFitter(abc.ABC):
    """
    Abstract base for identification methods.
    Every fitter takes the same data matrices and config and returns the fitted
    representation together with its FitReport.
    """

    NAME = ""

    def __init__(self, name: str):
        self.name = name

    @abc.abstractmethod
    def fit(self, X0, X1, k: int, cfg: IdentConfig, truth=None, init=None) -> Tuple[Any, Any]:
        """Run the method on (X0, X1) for an order-k system."""

    def default_truth_ranks(self, truth):
        """Ranks to reuse from a ground truth of the same format, if any."""
        return None

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"
