"""
Dimension trees for the hierarchical Tucker format.

Nodes are numbered in level order (root 0, then its children left to right,
and so on), so a rank list such as [1, 10, 10, 9, 9, 9, 3] on the balanced
k=4 tree reads node by node as {1234}, {12}, {34}, {1}, {2}, {3}, {4}.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

from loguru import logger

from core.errors import DomainError


@dataclass(frozen=True)
class TreeNode:
    id: int
    modes: tuple[int, ...]
    rank: int
    level: int
    parent: int | None = None
    left: int | None = None
    right: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def is_root(self) -> bool:
        return self.parent is None


@dataclass(frozen=True)
class DimensionTree:
    nodes: tuple[TreeNode, ...]
    _leaf_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.nodes:
            raise DomainError("a dimension tree needs at least one node")
        root = self.nodes[0]
        k = len(root.modes)
        if sorted(root.modes) != list(range(1, k + 1)):
            raise DomainError(f"root must carry modes 1..{k}, got {root.modes}")
        if root.rank != 1:
            raise DomainError(f"root rank must be 1, got {root.rank}")
        leaf_index = {}
        for node in self.nodes:
            if node.rank < 1:
                raise DomainError(f"node {node.id} has non-positive rank {node.rank}")
            if node.is_leaf:
                if len(node.modes) != 1:
                    raise DomainError(f"leaf {node.id} must be a singleton, got {node.modes}")
                leaf_index[node.modes[0]] = node.id
                continue
            left, right = self.nodes[node.left], self.nodes[node.right]
            if set(left.modes) & set(right.modes) or left.modes + right.modes != node.modes:
                raise DomainError(f"node {node.modes} is not the disjoint union of {left.modes} and {right.modes}")
        object.__setattr__(self, "_leaf_index", leaf_index)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def order(self) -> int:
        return len(self.root.modes)

    @property
    def ranks(self) -> list[int]:
        return [node.rank for node in self.nodes]

    @property
    def depth(self) -> int:
        return max(node.level for node in self.nodes)

    @property
    def levels(self) -> list[list[int]]:
        """Node ids grouped by level, root level first."""
        out: list[list[int]] = [[] for _ in range(self.depth + 1)]
        for node in self.nodes:
            out[node.level].append(node.id)
        return out

    def internal_levels(self) -> list[list[int]]:
        return [[i for i in ids if not self.nodes[i].is_leaf] for ids in self.levels]

    @property
    def leaves(self) -> list[int]:
        return [node.id for node in self.nodes if node.is_leaf]

    @property
    def internal_nodes(self) -> list[int]:
        return [node.id for node in self.nodes if not node.is_leaf]

    def leaf_of_mode(self, p: int) -> int:
        try:
            return self._leaf_index[p]
        except KeyError:
            raise DomainError(f"mode {p} is not a leaf of this tree") from None

    @property
    def mode_order(self) -> tuple[int, ...]:
        """Modes as they appear left to right under the root."""
        return self.root.modes

    @property
    def is_contiguous(self) -> bool:
        return self.mode_order == tuple(range(1, self.order + 1))

    def to_nested(self, node_id: int = 0):
        node = self.nodes[node_id]
        if node.is_leaf:
            return node.modes[0]
        return [self.to_nested(node.left), self.to_nested(node.right)]

    def with_ranks(self, ranks: Sequence[int]) -> "DimensionTree":
        ranks = _normalize_ranks(ranks, len(self.nodes))
        return DimensionTree(tuple(replace(node, rank=r) for node, r in zip(self.nodes, ranks)))

    def check_ranks(self, n: int) -> list[str]:
        """Return warnings for ranks that cannot be attained with mode size n."""
        notes = []
        for node in self.nodes:
            if node.is_leaf and node.rank > n:
                notes.append(f"leaf {node.modes} rank {node.rank} exceeds mode size {n}")
            elif not node.is_leaf:
                left, right = self.nodes[node.left], self.nodes[node.right]
                if node.rank > left.rank * right.rank:
                    notes.append(
                        f"node {node.modes} rank {node.rank} exceeds child rank product {left.rank * right.rank}"
                    )
        for note in notes:
            logger.warning(note)
        return notes


def _normalize_ranks(ranks, count: int) -> list[int]:
    if ranks is None:
        ranks = 1
    if isinstance(ranks, int):
        return [1] + [int(ranks)] * (count - 1)
    ranks = [int(r) for r in ranks]
    if len(ranks) != count:
        raise DomainError(f"expected {count} node ranks, got {len(ranks)}")
    return ranks


def _balanced_nested(modes: list[int]):
    if len(modes) == 1:
        return modes[0]
    split = (len(modes) + 1) // 2
    return [_balanced_nested(modes[:split]), _balanced_nested(modes[split:])]


def _flatten(nested) -> list[int]:
    if isinstance(nested, int):
        return [nested]
    return [m for child in nested for m in _flatten(child)]


def tree_from_nested(nested, ranks=None) -> DimensionTree:
    """
    Build a tree from nested pairs, e.g. [[1, 2], [3, 4]].

    `ranks` is a level-order list (root first) or a single int applied to
    every non-root node.
    """
    # level-order walk over the nested structure
    records: list[dict] = []
    queue = deque([(nested, None, 0)])
    while queue:
        item, parent, level = queue.popleft()
        if not isinstance(item, int) and len(item) != 2:
            raise DomainError(f"tree nodes must have exactly two children, got {item!r}")
        node_id = len(records)
        records.append({"id": node_id, "modes": tuple(_flatten(item)), "level": level, "parent": parent})
        if parent is not None:
            slot = "left" if "left" not in records[parent] else "right"
            records[parent][slot] = node_id
        if not isinstance(item, int):
            queue.append((item[0], node_id, level + 1))
            queue.append((item[1], node_id, level + 1))
    rank_list = _normalize_ranks(ranks, len(records))
    nodes = tuple(TreeNode(rank=r, **rec) for rec, r in zip(records, rank_list))
    return DimensionTree(nodes)


def balanced_tree(k: int, ranks=None) -> DimensionTree:
    """Balanced tree over modes 1..k; the left child takes the larger half."""
    if k < 1:
        raise DomainError(f"tree order must be positive, got {k}")
    return tree_from_nested(_balanced_nested(list(range(1, k + 1))), ranks)
