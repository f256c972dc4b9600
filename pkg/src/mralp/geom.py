"""Recursive domain partitions, point assignment and knot selection.

Nodes are addressed by index paths ``(j1, ..., jm)`` with 1-based child
numbers; the empty tuple is the root. Paths compare lexicographically, which
is the ordering used for every stacked quantity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

Path = Tuple[int, ...]

LONGEST = "longest"
CYCLE = "cycle"
QUADTREE = "quadtree"


class EmptyLeafError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.ravel(self.lo))
        hi = tuple(float(v) for v in np.ravel(self.hi))
        if len(lo) != len(hi) or not lo:
            raise ValueError("domain bounds must have equal, non-zero length")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"domain needs lo < hi on every axis, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @classmethod
    def bounding(cls, X, pad: float = 0.0) -> "Domain":
        X = np.asarray(X, dtype=float)
        lo, hi = X.min(axis=0) - pad, X.max(axis=0) + pad
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(tuple(lo), tuple(hi))


@dataclass(frozen=True)
class PartitionSpec:
    """Number of resolutions ``M``, branching ``J`` per resolution and split rule."""

    J: tuple = ()
    rule: str = LONGEST

    def __post_init__(self):
        object.__setattr__(self, "J", tuple(int(j) for j in self.J))
        if self.rule not in (LONGEST, CYCLE, QUADTREE):
            raise ValueError(f"unknown split rule {self.rule!r}")

    @property
    def M(self) -> int:
        return len(self.J)


@dataclass
class Split:
    """How an internal node is cut: axes and the edge coordinates per axis."""

    axes: tuple
    edges: tuple  # one array of J_axis + 1 edges per axis


@dataclass
class PartitionTree:
    domain: Domain
    spec: PartitionSpec
    boxes: Dict[Path, Tuple[np.ndarray, np.ndarray]]
    splits: Dict[Path, Split]
    locations: Optional[np.ndarray] = None
    assignments: Dict[Path, np.ndarray] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.spec.M

    @property
    def n(self) -> int:
        return 0 if self.locations is None else len(self.locations)

    def nodes_at(self, m: int):
        return sorted(p for p in self.boxes if len(p) == m)

    def leaves(self):
        return self.nodes_at(self.M)

    def children(self, path: Path):
        if len(path) >= self.M:
            return []
        return [path + (j,) for j in range(1, self.spec.J[len(path)] + 1)]

    def leaf_order(self) -> np.ndarray:
        """Point ids concatenated over leaves in ascending index order."""
        return np.concatenate([self.assignments[p] for p in self.leaves()]).astype(np.int64)

    def child_index(self, path: Path, X) -> np.ndarray:
        """1-based child number of each row of ``X`` below ``path`` (half-open slabs)."""
        split = self.splits[path]
        idx = np.zeros(len(X), dtype=np.int64)
        stride = 1
        for axis, edges in zip(split.axes, split.edges):
            k = np.searchsorted(edges[1:-1], X[:, axis], side="right")
            idx += k * stride
            stride *= len(edges) - 1
        return idx + 1

    def locate(self, X) -> list:
        """Leaf path of every row of ``X``; rows outside the domain raise."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_inside(X)
        paths = [()] * len(X)
        groups = {(): np.arange(len(X))}
        for m in range(self.M):
            nxt = {}
            for p, ids in groups.items():
                c = self.child_index(p, X[ids])
                for j in np.unique(c):
                    nxt[p + (int(j),)] = ids[c == j]
            groups = nxt
        for p, ids in groups.items():
            for i in ids:
                paths[i] = p
        return paths

    def contains(self, path: Path, X) -> np.ndarray:
        """Whether rows of ``X`` belong to node ``path`` under the assignment rule."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ok = self._inside_mask(X)
        for m in range(len(path)):
            ok &= self.child_index(path[:m], X) == path[m]
        return ok

    def _inside_mask(self, X):
        lo, hi = np.array(self.domain.lo), np.array(self.domain.hi)
        return np.all((X >= lo) & (X <= hi), axis=1)

    def _check_inside(self, X):
        if X.shape[1] != self.domain.dim:
            raise ValueError(f"locations have dimension {X.shape[1]}, domain has {self.domain.dim}")
        bad = np.nonzero(~self._inside_mask(X))[0]
        if len(bad):
            raise ValueError(f"location row {int(bad[0])} lies outside the domain "
                             f"({len(bad)} rows outside in total)")


def _slab_edges(lo, hi, J):
    edges = lo + (hi - lo) * np.arange(J + 1) / J
    edges[-1] = hi
    return edges


def build_partition(domain: Domain, spec: PartitionSpec, *, _allow_unsplit: bool = False) -> PartitionTree:
    """Geometry-only partition tree.

    ``longest``: each box is cut along its longest axis (lowest index on ties)
    into ``J[m]`` equal slabs. ``cycle``: the axis cycles with the resolution.
    ``quadtree``: each box is halved along every axis (requires ``J[m] == 2**d``).
    """
    minJ = 1 if _allow_unsplit else 2
    if any(j < minJ for j in spec.J):
        raise ValueError(f"every J_i must be >= 2, got {spec.J}")
    d = domain.dim
    boxes = {(): (np.array(domain.lo), np.array(domain.hi))}
    splits = {}
    frontier = [()]
    for m, J in enumerate(spec.J):
        nxt = []
        for p in frontier:
            lo, hi = boxes[p]
            if spec.rule == QUADTREE:
                if J != 2 ** d:
                    raise ValueError(f"quadtree rule needs J = {2 ** d}, got {J}")
                axes = tuple(range(d))
            elif spec.rule == CYCLE:
                axes = (m % d,)
            else:
                axes = (int(np.argmax(hi - lo)),)
            counts = [2] * d if spec.rule == QUADTREE else [J]
            edges = tuple(_slab_edges(lo[a], hi[a], c) for a, c in zip(axes, counts))
            splits[p] = Split(axes, edges)
            for j in range(J):
                clo, chi = lo.copy(), hi.copy()
                rem = j
                for a, e in zip(axes, edges):
                    k = rem % (len(e) - 1)
                    rem //= len(e) - 1
                    clo[a], chi[a] = e[k], e[k + 1]
                boxes[p + (j + 1,)] = (clo, chi)
                nxt.append(p + (j + 1,))
        frontier = nxt
    return PartitionTree(domain=domain, spec=spec, boxes=boxes, splits=splits)


def mlp_partition(domain: Domain) -> PartitionTree:
    """The degenerate one-resolution, one-child tree used to express the MLP."""
    return build_partition(domain, PartitionSpec(J=(1,)), _allow_unsplit=True)


def assign_points(tree: PartitionTree, locations) -> PartitionTree:
    """Return a copy of ``tree`` with every node's point ids.

    Leaf id lists keep the input order; an internal node's list is the
    concatenation of its children's lists in ascending child order.
    """
    X = np.atleast_2d(np.asarray(locations, dtype=float))
    if not np.all(np.isfinite(X)):
        bad = np.nonzero(~np.all(np.isfinite(X), axis=1))[0][0]
        raise ValueError(f"location row {int(bad)} is not finite")
    tree._check_inside(X)
    groups = {(): np.arange(len(X))}
    for m in range(tree.M):
        nxt = {}
        for p, ids in groups.items():
            c = tree.child_index(p, X[ids])
            for j in range(1, tree.spec.J[m] + 1):
                nxt[p + (j,)] = ids[c == j]
        groups = nxt
    assignments = {p: np.asarray(ids, dtype=np.int64) for p, ids in groups.items()}
    for m in range(tree.M - 1, -1, -1):
        for p in tree.nodes_at(m):
            assignments[p] = np.concatenate([assignments[c] for c in tree.children(p)]).astype(np.int64)
    if tree.M == 0:
        assignments[()] = np.arange(len(X), dtype=np.int64)
    return PartitionTree(tree.domain, tree.spec, tree.boxes, tree.splits, X, assignments)


def validate_leaves(tree: PartitionTree) -> list:
    """Paths of leaves with no observed points."""
    if not tree.assignments:
        raise ValueError("tree has no point assignments")
    return [p for p in tree.leaves() if len(tree.assignments[p]) == 0]


def require_nonempty_leaves(tree: PartitionTree):
    empty = validate_leaves(tree)
    if empty:
        raise EmptyLeafError(f"{len(empty)} empty leaves, first {empty[0]}")


# ---------------------------------------------------------------- knots

@dataclass(frozen=True)
class RandomSubset:
    """Knots drawn without replacement from the node's points.

    ``sizes[m]`` is the knot count at resolution ``m``; ``None`` takes every
    point. ``exclude_ancestors`` removes points already used as knots higher
    up the same branch (useful with identity projections).
    """

    sizes: tuple
    exclude_ancestors: bool = False
    clip: bool = False


@dataclass(frozen=True)
class Lattice:
    """Regular grid of knots at cell centres; ``dims[m]`` per axis counts at resolution m."""

    dims: tuple


@dataclass(frozen=True)
class Explicit:
    knots: dict


@dataclass
class KnotAllocation:
    knots: Dict[Path, np.ndarray]  # non-leaf nodes only; leaves use their own points
    point_ids: Dict[Path, Optional[np.ndarray]] = field(default_factory=dict)

    def __getitem__(self, path):
        return self.knots[path]


def node_rng(seed: int, path: Path, stream: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, stream, path): independent of visiting order."""
    return np.random.default_rng([int(seed), int(stream), len(path), *path])


def select_knots(tree: PartitionTree, strategy, seed: int = 0) -> KnotAllocation:
    if tree.locations is None:
        raise ValueError("tree has no point assignments")
    X = tree.locations
    knots, ids_out = {}, {}
    for m in range(tree.M):
        for p in tree.nodes_at(m):
            S = tree.assignments[p]
            if isinstance(strategy, Explicit):
                if p not in strategy.knots:
                    raise ValueError(f"no explicit knots for node {p}")
                Q = np.atleast_2d(np.asarray(strategy.knots[p], dtype=float))
                if len(Q) == 0 or not np.all(tree.contains(p, Q)):
                    raise ValueError(f"explicit knots for node {p} must be non-empty and inside it")
                knots[p], ids_out[p] = Q, None
            elif isinstance(strategy, Lattice):
                knots[p], ids_out[p] = _lattice(tree.boxes[p], strategy.dims[m]), None
            elif isinstance(strategy, RandomSubset):
                pool = S
                if strategy.exclude_ancestors:
                    used = [ids_out[p[:k]] for k in range(m)]
                    used = np.concatenate(used) if used else np.empty(0, np.int64)
                    pool = S[~np.isin(S, used)]
                size = strategy.sizes[m]
                size = len(pool) if size is None else int(size)
                if strategy.clip:
                    size = min(size, len(pool))
                if len(pool) == 0:
                    raise ValueError(f"node {p} has no points available for knots")
                if size > len(pool):
                    raise ValueError(f"node {p}: requested {size} knots but only {len(pool)} points")
                if size < 1:
                    raise ValueError(f"node {p}: knot count must be >= 1")
                if size == len(pool):
                    chosen = pool
                else:
                    rng = node_rng(seed, p, stream=1)
                    chosen = np.sort(rng.choice(pool, size=size, replace=False))
                    # keep the node's own ordering of points
                    chosen = pool[np.isin(pool, chosen)]
                knots[p], ids_out[p] = X[chosen], chosen
            else:
                raise TypeError(f"unknown knot strategy {strategy!r}")
    return KnotAllocation(knots, ids_out)


def _lattice(box, dims):
    lo, hi = box
    dims = np.broadcast_to(np.asarray(dims, dtype=int), lo.shape)
    axes = [lo[a] + (hi[a] - lo[a]) * (np.arange(k) + 0.5) / k for a, k in enumerate(dims)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)
