from core.config import IdentConfig
from core.decomp import HTRep
from core.tree import balanced_tree, tree_from_nested
from modules.ident import ht_als_fit
from .base import BaseFitter

DEFAULT_HT_RANK = 3


class HTFitter(BaseFitter):
    NAME = "ht"

    def __init__(self):
        super().__init__("HT-ALS")

    def default_truth_ranks(self, truth):
        return truth.tree if isinstance(truth, HTRep) else None

    def tree_for(self, n: int, k: int, cfg: IdentConfig, truth=None):
        if cfg.ht_tree is not None:
            return tree_from_nested(cfg.ht_tree, cfg.ht_ranks if cfg.ht_ranks is not None else DEFAULT_HT_RANK)
        if cfg.ht_ranks is not None:
            return balanced_tree(k, cfg.ht_ranks)
        matched = self.default_truth_ranks(truth)
        if matched is not None:
            return matched
        tree = balanced_tree(k, DEFAULT_HT_RANK)
        # leaves cannot usefully exceed n
        ranks = [min(node.rank, n) if node.is_leaf else node.rank for node in tree.nodes]
        return tree.with_ranks(ranks)

    def fit(self, X0, X1, k: int, cfg: IdentConfig, truth=None, init=None):
        tree = None if init is not None else self.tree_for(X0.shape[0], k, cfg, truth)
        return ht_als_fit(X0, X1, tree, cfg, init=init, truth=truth)
