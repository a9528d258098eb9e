from core.config import IdentConfig
from core.decomp import CPRep
from modules.ident import cp_als_fit
from .base import BaseFitter

DEFAULT_CP_RANK = 3


class CPFitter(BaseFitter):
    NAME = "cp"

    def __init__(self):
        super().__init__("CP-ALS")

    def default_truth_ranks(self, truth):
        return truth.rank if isinstance(truth, CPRep) else None

    def fit(self, X0, X1, k: int, cfg: IdentConfig, truth=None, init=None):
        rank = cfg.cp_rank or self.default_truth_ranks(truth) or DEFAULT_CP_RANK
        return cp_als_fit(X0, X1, cfg, k=k, rank=rank, init=init, truth=truth)
