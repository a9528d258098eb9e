from core.config import IdentConfig
from modules.ident import lifting_fit
from .base import BaseFitter


class LiftFitter(BaseFitter):
    """Full-tensor lifting baseline; one least-squares solve, no sweeps."""

    NAME = "lift"

    def __init__(self):
        super().__init__("Lifting")

    def fit(self, X0, X1, k: int, cfg: IdentConfig, truth=None, init=None):
        return lifting_fit(X0, X1, k, cfg, truth=truth)
