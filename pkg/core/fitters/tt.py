from core.config import IdentConfig
from core.decomp import TTRep
from core.errors import DomainError
from modules.ident import tt_als_fit
from .base import BaseFitter

DEFAULT_TT_RANK = 3


def default_tt_ranks(n: int, k: int, r: int = DEFAULT_TT_RANK) -> list:
    """Constant interior rank r, clipped so every r_p is attainable."""
    ranks = [1] + [r] * (k - 1) + [1]
    for p in range(1, k):
        ranks[p] = min(ranks[p], ranks[p - 1] * n)
    for p in range(k - 1, 0, -1):
        ranks[p] = min(ranks[p], n * ranks[p + 1])
    return ranks


class TTFitter(BaseFitter):
    NAME = "tt"

    def __init__(self):
        super().__init__("TT-ALS")

    def default_truth_ranks(self, truth):
        return truth.ranks if isinstance(truth, TTRep) else None

    def fit(self, X0, X1, k: int, cfg: IdentConfig, truth=None, init=None):
        ranks = cfg.tt_ranks or self.default_truth_ranks(truth) or default_tt_ranks(X0.shape[0], k)
        if init is None and len(ranks) != k + 1:
            raise DomainError(f"TT ranks {ranks} do not match order k={k}")
        return tt_als_fit(X0, X1, cfg, ranks=ranks, init=init, truth=truth)
