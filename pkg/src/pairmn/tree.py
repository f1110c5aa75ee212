"""Taxonomic-tree pipeline: cumulative counts, per-node subcomposition
slices, subtree tests with FDR control, global combined tests, the L1
Kantorovich-Rubinstein distance and a paired-strata PERMANOVA.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import (DegenerateInput, EmptyReport, InsufficientSamples, InvalidInput,
                     InvalidNode, InvalidTree)
from .estimate import PairedCounts
from .hypotest import (TestResult, bh_fdr, fisher_combine, paired_f_test,
                       second_smallest_combine, unpaired_dm_test)
from .numkit import RngStream

__all__ = [
    "TaxTree",
    "TreeCounts",
    "SubtreeSlice",
    "NodeResult",
    "SubtreeReport",
    "PermanovaResult",
    "aggregate_q",
    "slice_subtree",
    "subtree_tests",
    "global_test",
    "remainder_profile",
    "kr_distance",
    "pairwise_kr",
    "permanova_paired",
]

TESTED = "tested"
SKIP_SMALL_N = "skipped: n<=d"
SKIP_DEGENERATE = "skipped: degenerate"


@dataclass(frozen=True)
class TaxTree:
    """Rooted taxonomy. Node ``k`` has parent ``parent[k]`` (-1 for the root);
    children keep the input order."""

    ids: tuple
    parent: tuple
    ranks: tuple
    names: tuple

    def __post_init__(self):
        k0 = len(self.ids)
        if k0 == 0:
            raise InvalidTree("tree has no nodes")
        if not len(self.parent) == len(self.ranks) == len(self.names) == k0:
            raise InvalidTree("node fields differ in length")
        if len(set(self.ids)) != k0:
            raise InvalidTree("node ids are not unique")
        parent = tuple(int(p) for p in self.parent)
        roots = [k for k, p in enumerate(parent) if p < 0]
        if len(roots) != 1:
            raise InvalidTree(f"expected exactly one root, found {len(roots)}")
        if any(p >= k0 for p in parent):
            raise InvalidTree("parent index out of range")
        children = [[] for _ in range(k0)]
        for k, p in enumerate(parent):
            if p >= 0:
                children[p].append(k)
        order, stack = [], [roots[0]]
        while stack:
            k = stack.pop()
            order.append(k)
            stack.extend(reversed(children[k]))
            if len(order) > k0:
                break
        if len(order) != k0:
            raise InvalidTree("tree is cyclic or disconnected")
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "ranks", tuple(self.ranks))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "root", roots[0])
        object.__setattr__(self, "preorder", tuple(order))

    @classmethod
    def from_records(cls, records: Sequence[tuple]) -> "TaxTree":
        """Build from ``(node_id, parent_id, rank, name)`` tuples; the root's
        parent_id is empty or None. Parents may appear after their children."""
        ids = [str(r[0]) for r in records]
        index = {nid: k for k, nid in enumerate(ids)}
        parent = []
        for nid, pid, *_ in records:
            if pid in (None, ""):
                parent.append(-1)
            elif str(pid) not in index:
                raise InvalidTree(f"node {nid!r} has unknown parent {pid!r}")
            else:
                parent.append(index[str(pid)])
        return cls(tuple(ids), tuple(parent), tuple(r[2] for r in records),
                   tuple(r[3] for r in records))

    def records(self) -> list[tuple]:
        return [(self.ids[k], "" if p < 0 else self.ids[p], self.ranks[k], self.names[k])
                for k, p in enumerate(self.parent)]

    @property
    def n_nodes(self) -> int:
        return len(self.ids)

    @cached_property
    def index(self) -> dict:
        return {nid: k for k, nid in enumerate(self.ids)}

    @cached_property
    def is_internal(self) -> np.ndarray:
        return np.array([len(c) > 0 for c in self.children])

    @property
    def internal_nodes(self) -> list[int]:
        """Internal nodes in preorder."""
        return [k for k in self.preorder if self.children[k]]

    def ancestors(self, k: int) -> list[int]:
        out = []
        p = self.parent[k]
        while p >= 0:
            out.append(p)
            p = self.parent[p]
        return out

    def label(self, k: int) -> str:
        return self.names[k] or self.ids[k]

    def find(self, key: str) -> int:
        """Index of the node whose id or name equals ``key``."""
        if key in self.index:
            return self.index[key]
        hits = [k for k, nm in enumerate(self.names) if nm == key]
        if len(hits) != 1:
            raise InvalidNode(f"{key!r} matches {len(hits)} nodes")
        return hits[0]


def _count_array(assigned, k0: int) -> np.ndarray:
    a = np.asarray(assigned)
    if a.shape[-1:] != (k0,):
        raise InvalidInput(f"last axis must have one entry per node ({k0}), got {a.shape}")
    if a.dtype.kind == "f":
        if not np.all(np.isfinite(a)) or np.any(a != np.round(a)):
            raise InvalidInput("counts must be integers")
    elif a.dtype.kind not in "iu":
        raise InvalidInput("counts must be integers")
    if np.any(a < 0):
        raise InvalidInput("counts must be nonnegative")
    return a.astype(np.int64)


def aggregate_q(tree: TaxTree, assigned) -> np.ndarray:
    """Cumulative counts ``Q(v) = assigned(v) + sum of Q over children``.

    ``assigned`` may have any leading shape; the last axis indexes nodes.
    """
    if not isinstance(tree, TaxTree):
        raise InvalidTree("expected a TaxTree")
    q = _count_array(assigned, tree.n_nodes).copy()
    for k in reversed(tree.preorder):
        p = tree.parent[k]
        if p >= 0:
            q[..., p] += q[..., k]
    return q


@dataclass(frozen=True, eq=False)
class TreeCounts:
    """Directly assigned reads, shape (n subjects, 2 conditions, K0 nodes)."""

    tree: TaxTree
    assigned: np.ndarray
    subject_ids: tuple = None

    def __post_init__(self):
        a = _count_array(self.assigned, self.tree.n_nodes)
        if a.ndim != 3 or a.shape[1] != 2:
            raise InvalidInput(f"assigned must have shape (n, 2, K0), got {a.shape}")
        object.__setattr__(self, "assigned", a)
        ids = self.subject_ids
        ids = tuple(range(a.shape[0])) if ids is None else tuple(ids)
        if len(ids) != a.shape[0]:
            raise InvalidInput("subject_ids length does not match the counts")
        object.__setattr__(self, "subject_ids", ids)

    @property
    def n(self) -> int:
        return self.assigned.shape[0]

    @cached_property
    def q(self) -> np.ndarray:
        return aggregate_q(self.tree, self.assigned)


@dataclass(frozen=True, eq=False)
class SubtreeSlice:
    """Paired subcomposition counts at one internal node.

    Columns of ``x1``/``x2`` are the children in tree order followed by the
    remainder (reads assigned to the node itself). The masks mark subjects
    with positive totals in both conditions and categories that are nonempty
    among those subjects.
    """

    node: int
    x1: np.ndarray
    x2: np.ndarray
    sample_mask: np.ndarray
    category_mask: np.ndarray

    @property
    def totals1(self) -> np.ndarray:
        return self.x1.sum(axis=1)

    @property
    def totals2(self) -> np.ndarray:
        return self.x2.sum(axis=1)

    @property
    def effective_n(self) -> int:
        return int(self.sample_mask.sum())

    @property
    def effective_d(self) -> int:
        return int(self.category_mask.sum())

    @property
    def testable(self) -> bool:
        return self.effective_n > self.effective_d >= 2

    def paired_counts(self) -> PairedCounts:
        s, c = self.sample_mask, self.category_mask
        return PairedCounts(self.x1[s][:, c], self.x2[s][:, c])


def slice_subtree(tree: TaxTree, counts: TreeCounts, k: int) -> SubtreeSlice:
    """Subcomposition counts of the children (plus remainder) of node ``k``."""
    if not 0 <= k < tree.n_nodes:
        raise InvalidNode(f"node index {k} out of range")
    kids = list(tree.children[k])
    if not kids:
        raise InvalidNode(f"node {tree.ids[k]!r} is a leaf")
    q = counts.q
    x = np.concatenate([q[:, :, kids], counts.assigned[:, :, [k]]], axis=2)
    x1, x2 = x[:, 0, :], x[:, 1, :]
    smask = (x1.sum(axis=1) > 0) & (x2.sum(axis=1) > 0)
    cmask = (x1[smask].sum(axis=0) + x2[smask].sum(axis=0)) > 0
    return SubtreeSlice(k, x1, x2, smask, cmask)


@dataclass(frozen=True)
class NodeResult:
    node: int
    node_id: str
    name: str
    rank: str
    result: TestResult | None
    skip_reason: str
    p_adjusted: float | None = None
    rejected: bool = False


@dataclass
class SubtreeReport:
    """One record per internal node, in tree preorder."""

    records: list
    fdr: float
    test: str = "paired"

    def tested(self) -> list:
        return [r for r in self.records if r.result is not None]

    def pvalues(self) -> np.ndarray:
        return np.array([r.result.p_value for r in self.tested()])

    def rejected_nodes(self) -> list[int]:
        return [r.node for r in self.records if r.rejected]

    def by_id(self) -> dict:
        return {r.node_id: r for r in self.records}


def _run_node_test(sl: SubtreeSlice, test: str):
    if test == "paired":
        if sl.effective_d < 2:
            return None, SKIP_DEGENERATE
        if not sl.testable:
            return None, SKIP_SMALL_N
        try:
            return paired_f_test(sl.paired_counts()), TESTED
        except InsufficientSamples:
            return None, SKIP_SMALL_N
        except DegenerateInput:
            return None, SKIP_DEGENERATE
    if test == "dm":
        c = sl.category_mask
        d = int(c.sum())
        if d < 2:
            return None, SKIP_DEGENERATE
        g1, g2 = sl.x1[:, c], sl.x2[:, c]
        n1 = int((g1.sum(axis=1) > 0).sum())
        n2 = int((g2.sum(axis=1) > 0).sum())
        if min(n1, n2) <= d:
            return None, SKIP_SMALL_N
        try:
            return unpaired_dm_test(g1, g2), TESTED
        except (InsufficientSamples, DegenerateInput):
            return None, SKIP_DEGENERATE
    raise InvalidInput(f"unknown test {test!r}")


def subtree_tests(tree: TaxTree, counts: TreeCounts, fdr: float = 0.05,
                  test: str = "paired") -> SubtreeReport:
    """Test every internal node for a difference in subcomposition.

    Parameters
    ----------
    tree, counts
    fdr : float
        Benjamini-Hochberg level applied across the tested nodes.
    test : {"paired", "dm"}
        Paired F-test, or the unpaired Dirichlet-multinomial test that
        treats the two conditions as independent groups.

    Raises
    ------
    EmptyReport
        If no internal node could be tested.
    """
    pending = []
    for k in tree.internal_nodes:
        result, reason = _run_node_test(slice_subtree(tree, counts, k), test)
        pending.append((k, result, reason))
    tested = [i for i, (_, res, _) in enumerate(pending) if res is not None]
    if not tested:
        raise EmptyReport("no internal node could be tested")
    rejected, adjusted = bh_fdr([pending[i][1].p_value for i in tested], fdr)
    adj = dict(zip(tested, zip(adjusted, rejected)))
    records = []
    for i, (k, res, reason) in enumerate(pending):
        p_adj, rej = adj.get(i, (None, False))
        records.append(NodeResult(k, tree.ids[k], tree.names[k], tree.ranks[k], res, reason,
                                  None if p_adj is None else float(p_adj), bool(rej)))
    return SubtreeReport(records, fdr, test)


def global_test(report: SubtreeReport, method: str = "second_smallest") -> float:
    """Combine the tested subtree p-values (``fisher`` or ``second_smallest``)."""
    p = report.pvalues()
    if method == "fisher":
        return fisher_combine(p)
    if method in ("second_smallest", "second"):
        return second_smallest_combine(p)
    raise InvalidInput(f"unknown combination method {method!r}")


def remainder_profile(tree: TaxTree, q) -> np.ndarray:
    """Share of the root count assigned to each node and none of its children.

    Leaves have no children, so their share is ``Q(v) / Q(root)``.
    """
    q = _count_array(q, tree.n_nodes).astype(float)
    rem = q.copy()
    for k, p in enumerate(tree.parent):
        if p >= 0:
            rem[..., p] -= q[..., k]
    root = q[..., tree.root]
    if np.any(root <= 0):
        raise DegenerateInput("root count must be positive")
    return rem / root[..., None]


def kr_distance(tree: TaxTree, qa, qb) -> float:
    """L1 Kantorovich-Rubinstein distance with unit branch lengths."""
    pa = remainder_profile(tree, qa)
    pb = remainder_profile(tree, qb)
    return float(np.sum(np.abs(pa - pb)))


def pairwise_kr(tree: TaxTree, q) -> np.ndarray:
    """Distance matrix between the rows of ``q`` (shape (m, K0))."""
    prof = remainder_profile(tree, q)
    if prof.ndim != 2:
        raise InvalidInput("q must be a 2-D array of per-sample node counts")
    return squareform(pdist(prof, metric="cityblock"))


class PermanovaResult(NamedTuple):
    statistic: float
    p_value: float
    n_perm: int


def _pair_index(subjects, conditions):
    subjects = list(subjects)
    conditions = [int(c) for c in conditions]
    if len(subjects) != len(conditions):
        raise InvalidInput("subjects and conditions differ in length")
    slots: dict = {}
    for i, (s, c) in enumerate(zip(subjects, conditions)):
        if c not in (1, 2):
            raise InvalidInput(f"condition must be 1 or 2, got {c}")
        if (s, c) in slots:
            raise InvalidInput(f"subject {s!r} has two samples for condition {c}")
        slots[(s, c)] = i
    order = list(dict.fromkeys(subjects))
    try:
        first = np.array([slots[(s, 1)] for s in order])
        second = np.array([slots[(s, 2)] for s in order])
    except KeyError as exc:
        raise InvalidInput(f"subject {exc.args[0][0]!r} lacks one condition") from exc
    return first, second


def _pseudo_f(d2: np.ndarray, groups: np.ndarray, n_group: int) -> np.ndarray:
    # groups: (P, N) 0/1 membership of condition 1; both groups have n_group members
    total = d2.sum() / (2 * d2.shape[0])
    g1 = groups
    g2 = 1.0 - groups
    within = (np.einsum("pi,ij,pj->p", g1, d2, g1)
              + np.einsum("pi,ij,pj->p", g2, d2, g2)) / (2 * n_group)
    among = total - within
    df_w = d2.shape[0] - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = among / (within / df_w)
    f = np.where(within > 0, f, np.where(among > 1e-14 * max(total, 1e-300), np.inf, 0.0))
    return np.maximum(f, 0.0)


def permanova_paired(dist, subjects, conditions, n_perm: int = 999, rng=None) -> PermanovaResult:
    """PERMANOVA pseudo-F for condition, permuting labels within subject pairs.

    The sums of squares are those of the Gower-centered matrix
    ``-D^2 / 2``: ``SS_T = sum_{i<j} d_ij^2 / N`` and ``SS_W`` the same sum
    within each condition divided by the group size. Each permutation swaps
    the two condition labels of every subject independently with
    probability 1/2.

    Returns
    -------
    PermanovaResult
        ``p = (1 + #{F_perm >= F_obs}) / (1 + n_perm)``; ties are judged
        with tolerance ``1e-9 * max(F_obs, 1)``.
    """
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InvalidInput("distance matrix must be square")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise InvalidInput("distances must be finite and nonnegative")
    scale = max(float(d.max()), 1.0)
    if np.max(np.abs(d - d.T)) > 1e-10 * scale or np.any(np.diag(d) != 0):
        raise InvalidInput("distance matrix must be symmetric with zero diagonal")
    if n_perm < 99:
        raise InvalidInput("n_perm must be at least 99")
    first, second = _pair_index(subjects, conditions)
    if len(first) * 2 != d.shape[0]:
        raise InvalidInput("every sample must belong to a complete pair")
    rng = RngStream(0) if rng is None else rng
    gen = rng.generator if isinstance(rng, RngStream) else rng
    n = len(first)
    d2 = 0.5 * (d + d.T) ** 2
    obs = np.zeros((1, d.shape[0]))
    obs[0, first] = 1.0
    f_obs = float(_pseudo_f(d2, obs, n)[0])
    swaps = gen.integers(0, 2, size=(n_perm, n)).astype(bool)
    groups = np.zeros((n_perm, d.shape[0]))
    rows = np.arange(n_perm)[:, None]
    groups[rows, np.where(swaps, second, first)] = 1.0
    f_perm = _pseudo_f(d2, groups, n)
    if np.isinf(f_obs):
        hits = int(np.sum(np.isinf(f_perm)))
    else:
        hits = int(np.sum(f_perm >= f_obs - 1e-9 * max(abs(f_obs), 1.0)))
    return PermanovaResult(f_obs, (1 + hits) / (1 + n_perm), n_perm)
