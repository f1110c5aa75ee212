"""Simulation bench: size/power of the flat tests under the two PairMN
generators, and global/per-subtree studies on a taxonomic tree built by
resampling a reference dataset with sparse or dense perturbations.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import numkit
from .errors import DegenerateInput, EmptyReport, InsufficientSamples, InsufficientTests, InvalidInput
from .hypotest import paired_f_test, unpaired_dm_test
from .model import (LogNormalParams, MixedDirichletParams, sample_pairmn_lognormal,
                    sample_pairmn_mixed_dirichlet)
from .numkit import RngStream
from .tree import (TaxTree, TreeCounts, global_test, pairwise_kr,
                   permanova_paired, subtree_tests)

__all__ = [
    "ELL", "PI1", "PI2_ALT", "MU1", "MU2_ALT",
    "mixed_dirichlet_setting",
    "lognormal_setting",
    "SimTable",
    "FlatSimConfig",
    "run_flat_sim",
    "Reference",
    "synthetic_tree",
    "synthetic_reference",
    "TreeSimConfig",
    "gen_tree_counts",
    "gen_tree_pair",
    "run_tree_sim",
    "differential_nodes",
    "default_workers",
]

# Flat-simulation settings (d = 8)
ELL = (0.12, 0.06, 0.08, 0.43, 0.02, 0.14, 0.10, 0.05)
PI1 = (0.15, 0.05, 0.22, 0.30, 0.03, 0.10, 0.07, 0.08)
PI2_ALT = (0.10, 0.10, 0.22, 0.30, 0.03, 0.10, 0.07, 0.08)
THETAS = {"theta_ell": 1.0, "theta_a1": 3.0, "theta_a2": 5.0}
MU1 = (3.0, 1.0, 0.5, 1.0, 0.0, 1.0, 1.0, 0.0)
MU2_ALT = (3.0, 1.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0)

SPARSE_TARGETS = ("g__Streptococcus",)
DENSE_TARGETS = (("g__Streptococcus", "g__Eubacterium", "g__Parabacteroides"),
                 ("g__Porphyromonas", "g__Moraxella", "g__Ruminococcus"))

THREADS_ENV = "PAIRMN_THREADS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def mixed_dirichlet_setting(rho: float, alternative: bool = False,
                            theta_as_concentration: bool = True,
                            thetas: dict | None = None) -> MixedDirichletParams:
    """Mixed-Dirichlet parameters with the default means and ``ell``.

    The default thetas (``theta_ell=1, theta_a1=3, theta_a2=5``) are only
    admissible as concentrations; pass ``thetas`` in (0, 1] to use the
    variance parameterization.
    """
    th = dict(THETAS if thetas is None else thetas)
    return MixedDirichletParams.from_means(
        PI1, PI2_ALT if alternative else PI1, ELL, rho,
        th["theta_a1"], th["theta_a2"], th["theta_ell"], theta_as_concentration)


def lognormal_setting(rho: float, alternative: bool = False, sigma: float = 1.0) -> LogNormalParams:
    d = len(MU1)
    return LogNormalParams(np.array(MU1), np.array(MU2_ALT if alternative else MU1),
                           np.full(d, sigma), np.full(d, sigma), rho)


# ---------------------------------------------------------------------------
# Result table
# ---------------------------------------------------------------------------

@dataclass
class SimTable:
    """Rows of ``key columns + (method, rate, se, reps, failures)``."""

    rows: list = field(default_factory=list)

    def add(self, key: dict, method: str, hits: int, reps: int, failures: int = 0,
            rate: float | None = None):
        r = hits / reps if rate is None else rate
        se = math.sqrt(max(r * (1 - r), 0.0) / reps)
        self.rows.append({**key, "method": method, "rate": r, "se": se,
                          "reps": reps, "failures": failures})

    def select(self, **match) -> list:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def rate(self, **match) -> float:
        hits = self.select(**match)
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0]["rate"]

    def columns(self) -> list:
        cols = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        writer = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue() if fh is None else ""


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Flat simulations
# ---------------------------------------------------------------------------

@dataclass
class FlatSimConfig:
    generator: str = "mixed_dirichlet"
    n_grid: tuple = (20, 50, 100)
    rho_grid: tuple = (0.0, 0.2, 0.4, 0.6)
    hypotheses: tuple = ("null", "alternative")
    total_mean: float = 1000.0
    replicates: int = 2000
    alpha: float = 0.05
    seed: int = 0
    theta_as_concentration: bool = True
    thetas: dict | None = None
    sigma: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.generator not in ("mixed_dirichlet", "lognormal"):
            raise InvalidInput(f"unknown generator {self.generator!r}")
        if not self.n_grid or not self.rho_grid or not self.hypotheses:
            raise InvalidInput("grids must be nonempty")
        if self.replicates < 1:
            raise InvalidInput("replicates must be at least 1")
        if any(h not in ("null", "alternative") for h in self.hypotheses):
            raise InvalidInput("hypotheses must be 'null' or 'alternative'")
        if not 0 < self.alpha < 1:
            raise InvalidInput("alpha must lie in (0, 1)")
        self.n_grid = tuple(int(n) for n in self.n_grid)
        self.rho_grid = tuple(float(r) for r in self.rho_grid)
        self.hypotheses = tuple(self.hypotheses)

    @classmethod
    def from_dict(cls, d: dict) -> "FlatSimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown flat-simulation keys: {sorted(unknown)}")
        return cls(**d)

    def params(self, rho: float, hypothesis: str):
        alt = hypothesis == "alternative"
        if self.generator == "mixed_dirichlet":
            return mixed_dirichlet_setting(rho, alt, self.theta_as_concentration, self.thetas)
        return lognormal_setting(rho, alt, self.sigma)


def _flat_replicate(cfg: FlatSimConfig, params, n: int, rng: RngStream):
    totals = (numkit.poisson(cfg.total_mean, rng, size=n), numkit.poisson(cfg.total_mean, rng, size=n))
    if cfg.generator == "mixed_dirichlet":
        x1, x2 = sample_pairmn_mixed_dirichlet(params, totals, rng)
    else:
        x1, x2 = sample_pairmn_lognormal(params, totals, rng)
    out = []
    for test in (lambda: paired_f_test((x1, x2)), lambda: unpaired_dm_test(x1, x2)):
        try:
            out.append(test().p_value)
        except (DegenerateInput, InsufficientSamples):
            out.append(None)
    return out


def run_flat_sim(cfg: FlatSimConfig) -> SimTable:
    """Rejection rates of the paired F-test and the unpaired DM test.

    Replicate ``r`` of grid point ``g`` uses the substream ``(g, r)`` of
    ``cfg.seed``, so tables are reproducible regardless of ``workers``.
    """
    table = SimTable()
    g = 0
    for hyp in cfg.hypotheses:
        for n in cfg.n_grid:
            for rho in cfg.rho_grid:
                params = cfg.params(rho, hyp)
                root = RngStream(cfg.seed, (g,))
                pv = _map(lambda r: _flat_replicate(cfg, params, n, root.substream(r)),
                          range(cfg.replicates), cfg.workers)
                key = {"generator": cfg.generator, "hypothesis": hyp, "n": n, "rho": rho}
                for j, method in enumerate(("paired", "unpaired_dm")):
                    ps = [p[j] for p in pv]
                    hits = sum(1 for p in ps if p is not None and p < cfg.alpha)
                    table.add(key, method, hits, cfg.replicates, sum(p is None for p in ps))
                g += 1
    return table


# ---------------------------------------------------------------------------
# Tree simulations
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Reference:
    """Reference compositions for resampling.

    ``compositions[i, k]`` is the share of sample i's reads assigned to node
    k and none of its children; ``totals[i]`` is the sample's read count.
    """

    tree: TaxTree
    compositions: np.ndarray
    totals: np.ndarray
    synthetic: bool = False

    def __post_init__(self):
        c = np.asarray(self.compositions, dtype=float)
        t = np.asarray(self.totals, dtype=np.int64)
        if c.ndim != 2 or c.shape[1] != self.tree.n_nodes or c.shape[0] != t.size:
            raise InvalidInput("reference compositions must be (m, K0) with m totals")
        if c.shape[0] < 3:
            raise InvalidInput("reference needs at least 3 samples")
        if np.any(c < 0) or np.any(np.abs(c.sum(axis=1) - 1) > 1e-9) or np.any(t <= 0):
            raise InvalidInput("reference rows must be compositions with positive totals")
        self.compositions = c / c.sum(axis=1, keepdims=True)
        self.totals = t

    @classmethod
    def from_assigned(cls, tree: TaxTree, assigned, synthetic: bool = False) -> "Reference":
        """Reference from directly assigned counts (m, K0); empty samples are dropped."""
        a = np.asarray(assigned, dtype=np.int64)
        tot = a.sum(axis=1)
        keep = tot > 0
        return cls(tree, a[keep] / tot[keep, None], tot[keep], synthetic)


# (node_id, parent_id, rank, name, mean share of reads assigned to the node itself)
_SYNTHETIC_NODES = [
    ("n01", "", "kingdom", "k__Bacteria", 0.010),
    ("n02", "n01", "phylum", "p__Firmicutes", 0.010),
    ("n03", "n02", "class", "c__Bacilli", 0.002),
    ("n04", "n03", "order", "o__Lactobacillales", 0.003),
    ("n05", "n04", "family", "f__Streptococcaceae", 0.003),
    ("n06", "n05", "genus", "g__Streptococcus", 0.060),
    ("n07", "n06", "species", "s__Streptococcus_mitis", 0.004),
    ("n08", "n06", "species", "s__Streptococcus_salivarius", 0.003),
    ("n09", "n06", "species", "s__Streptococcus_parasanguinis", 0.003),
    ("n10", "n05", "genus", "g__Lactococcus", 0.005),
    ("n11", "n04", "family", "f__Lactobacillaceae", 0.004),
    ("n12", "n11", "genus", "g__Lactobacillus", 0.030),
    ("n13", "n03", "order", "o__Bacillales", 0.001),
    ("n14", "n13", "family", "f__Staphylococcaceae", 0.001),
    ("n15", "n14", "genus", "g__Staphylococcus", 0.004),
    ("n16", "n02", "class", "c__Clostridia", 0.010),
    ("n17", "n16", "order", "o__Clostridiales", 0.020),
    ("n18", "n17", "family", "f__Ruminococcaceae", 0.015),
    ("n19", "n18", "genus", "g__Ruminococcus", 0.050),
    ("n20", "n18", "genus", "g__Faecalibacterium", 0.070),
    ("n21", "n17", "family", "f__Lachnospiraceae", 0.020),
    ("n22", "n21", "genus", "g__Blautia", 0.050),
    ("n23", "n21", "genus", "g__Roseburia", 0.040),
    ("n24", "n17", "family", "f__Eubacteriaceae", 0.005),
    ("n25", "n24", "genus", "g__Eubacterium", 0.030),
    ("n26", "n17", "family", "f__Veillonellaceae", 0.005),
    ("n27", "n26", "genus", "g__Veillonella", 0.020),
    ("n28", "n01", "phylum", "p__Bacteroidetes", 0.010),
    ("n29", "n28", "class", "c__Bacteroidia", 0.005),
    ("n30", "n29", "order", "o__Bacteroidales", 0.010),
    ("n31", "n30", "family", "f__Bacteroidaceae", 0.010),
    ("n32", "n31", "genus", "g__Bacteroides", 0.150),
    ("n33", "n30", "family", "f__Porphyromonadaceae", 0.010),
    ("n34", "n33", "genus", "g__Parabacteroides", 0.030),
    ("n35", "n33", "genus", "g__Porphyromonas", 0.020),
    ("n36", "n30", "family", "f__Prevotellaceae", 0.005),
    ("n37", "n36", "genus", "g__Prevotella", 0.060),
    ("n38", "n01", "phylum", "p__Proteobacteria", 0.005),
    ("n39", "n38", "class", "c__Gammaproteobacteria", 0.005),
    ("n40", "n39", "order", "o__Pseudomonadales", 0.003),
    ("n41", "n40", "family", "f__Moraxellaceae", 0.003),
    ("n42", "n41", "genus", "g__Moraxella", 0.015),
    ("n43", "n41", "genus", "g__Acinetobacter", 0.010),
    ("n44", "n39", "order", "o__Enterobacteriales", 0.003),
    ("n45", "n44", "family", "f__Enterobacteriaceae", 0.005),
    ("n46", "n45", "genus", "g__Escherichia", 0.040),
    ("n47", "n38", "class", "c__Betaproteobacteria", 0.003),
    ("n48", "n47", "order", "o__Neisseriales", 0.002),
    ("n49", "n48", "family", "f__Neisseriaceae", 0.003),
    ("n50", "n49", "genus", "g__Neisseria", 0.012),
]


def synthetic_tree() -> TaxTree:
    """The 50-node taxonomy used by the synthetic reference."""
    return TaxTree.from_records([r[:4] for r in _SYNTHETIC_NODES])


def synthetic_reference(seed: int = 20170101, n_samples: int = 200,
                        concentration: float = 50.0, depth_median: float = 3000.0,
                        depth_sdlog: float = 0.5) -> Reference:
    """A SYNTHETIC stand-in for a real reference dataset.

    The mean shares put most Streptococcus reads at the genus itself, most
    Bacilli reads under Lactobacillales and most Streptococcaceae reads
    under Streptococcus, so a perturbation of the genus moves only a few
    subcompositions noticeably. ``concentration=50`` is an overdispersion
    of about 0.02.

    Sample i draws node shares ``P_i ~ Dirichlet(concentration * w)`` around
    fixed mean shares ``w``, a depth from a log-normal around
    ``depth_median``, and reads ``Mult(depth, P_i)``.
    """
    tree = synthetic_tree()
    w = np.array([r[4] for r in _SYNTHETIC_NODES])
    w = w / w.sum()
    rng = RngStream(seed)
    depth = np.maximum(np.round(depth_median * np.exp(
        depth_sdlog * rng.generator.standard_normal(n_samples))), 1).astype(np.int64)
    comp = numkit.dirichlet(concentration * w, rng, size=n_samples)
    assigned = numkit.multinomial(depth, comp, rng)
    return Reference.from_assigned(tree, assigned, synthetic=True)


def _resolve(tree: TaxTree, names) -> list[int]:
    out = []
    for nm in names:
        try:
            out.append(tree.find(nm))
        except Exception as exc:
            raise InvalidInput(f"target node {nm!r} not found in the reference tree") from exc
    return out


def _perturbation_targets(tree: TaxTree, pattern: str, targets=None):
    if pattern == "null":
        return [], []
    if pattern == "sparse":
        return [], _resolve(tree, SPARSE_TARGETS if targets is None else targets)
    if pattern == "dense":
        t1, t2 = DENSE_TARGETS if targets is None else targets
        return _resolve(tree, t1), _resolve(tree, t2)
    raise InvalidInput(f"unknown pattern {pattern!r}")


def gen_tree_counts(reference: Reference, pattern: str, p_eps: float, n: int, rng: RngStream,
                    targets=None, strict_literal: bool = False) -> TreeCounts:
    """Simulate ``n`` subject pairs by resampling the reference.

    For each subject three reference compositions ``P_a, P_b, P_c`` and two
    totals ``N1, N2`` are resampled; the assigned reads are
    ``W1 = Mult(N1, (P_a + P_c) / 2) + E1`` and
    ``W2 = Mult(N2, (P_b + P_c) / 2) + E2``. Perturbations add
    ``Binomial(N, p_eps)`` reads at the target nodes: sparse puts them in
    ``E2`` only; dense puts the first target group in ``E1`` and the second
    in ``E2``. In dense mode ``E1`` uses ``N1`` unless ``strict_literal`` asks
    for the literal ``N2`` subscript.
    """
    if not 0 <= p_eps <= 0.02 + 1e-12:
        raise InvalidInput("p_eps must lie in [0, 0.02]")
    if n < 1:
        raise InvalidInput("n must be positive")
    tree = reference.tree
    t1, t2 = _perturbation_targets(tree, pattern, targets)
    m = reference.totals.size
    gen = rng.generator
    idx = np.array([gen.choice(m, 3, replace=False) for _ in range(n)])
    tot = reference.totals[gen.integers(0, m, size=(n, 2))]
    comp = reference.compositions
    w1 = numkit.multinomial(tot[:, 0], 0.5 * (comp[idx[:, 0]] + comp[idx[:, 2]]), rng)
    w2 = numkit.multinomial(tot[:, 1], 0.5 * (comp[idx[:, 1]] + comp[idx[:, 2]]), rng)
    if t1:
        base = tot[:, 1] if strict_literal else tot[:, 0]
        w1[:, t1] += numkit.binomial(base[:, None], p_eps, rng, size=(n, len(t1)))
    if t2:
        w2[:, t2] += numkit.binomial(tot[:, 1][:, None], p_eps, rng, size=(n, len(t2)))
    return TreeCounts(tree, np.stack([w1, w2], axis=1))


def gen_tree_pair(reference: Reference, pattern: str, p_eps: float, rng: RngStream,
                  targets=None, strict_literal: bool = False):
    """One simulated subject: assigned reads ``W`` and cumulative ``Q``, each (2, K0)."""
    tc = gen_tree_counts(reference, pattern, p_eps, 1, rng, targets, strict_literal)
    return tc.assigned[0], tc.q[0]


def differential_nodes(tree: TaxTree, pattern: str, targets=None) -> set:
    """Internal nodes whose subcomposition changes under the perturbation:
    the targets (when internal) and all their ancestors."""
    t1, t2 = _perturbation_targets(tree, pattern, targets)
    out = set()
    for k in t1 + t2:
        if tree.children[k]:
            out.add(k)
        out.update(tree.ancestors(k))
    return out


@dataclass
class TreeSimConfig:
    pattern: str = "sparse"
    p_eps_grid: tuple = (0.0, 0.005, 0.01, 0.015, 0.02)
    n_grid: tuple = (20, 50, 100)
    replicates: int = 100
    alpha: float = 0.05
    fdr: float = 0.05
    n_perm: int = 199
    seed: int = 0
    targets: tuple | None = None
    strict_literal: bool = False
    methods: tuple = ("pairmn_fisher", "pairmn_second", "dm_second", "permanova")
    workers: int = 1

    def __post_init__(self):
        if self.pattern not in ("null", "sparse", "dense"):
            raise InvalidInput(f"unknown pattern {self.pattern!r}")
        if not self.p_eps_grid or not self.n_grid:
            raise InvalidInput("grids must be nonempty")
        if self.replicates < 1:
            raise InvalidInput("replicates must be at least 1")
        bad = set(self.methods) - {"pairmn_fisher", "pairmn_second", "dm_second", "permanova"}
        if bad:
            raise InvalidInput(f"unknown methods {sorted(bad)}")
        self.p_eps_grid = tuple(float(p) for p in self.p_eps_grid)
        self.n_grid = tuple(int(n) for n in self.n_grid)
        self.methods = tuple(self.methods)
        if self.targets is not None:
            self.targets = (tuple(self.targets) if self.pattern == "sparse"
                            else tuple(tuple(g) for g in self.targets))

    @classmethod
    def from_dict(cls, d: dict) -> "TreeSimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown tree-simulation keys: {sorted(unknown)}")
        return cls(**d)


def _tree_replicate(cfg: TreeSimConfig, reference: Reference, n: int, p_eps: float,
                    rng: RngStream) -> dict:
    tc = gen_tree_counts(reference, cfg.pattern, p_eps, n, rng, cfg.targets, cfg.strict_literal)
    tree = reference.tree
    out = {"global": {}, "rejected": set()}
    if "pairmn_fisher" in cfg.methods or "pairmn_second" in cfg.methods:
        try:
            report = subtree_tests(tree, tc, cfg.fdr, "paired")
            out["rejected"] = set(report.rejected_nodes())
            out["global"]["pairmn_fisher"] = global_test(report, "fisher")
            out["global"]["pairmn_second"] = global_test(report, "second_smallest")
        except (EmptyReport, InsufficientTests):
            pass
    if "dm_second" in cfg.methods:
        try:
            out["global"]["dm_second"] = global_test(subtree_tests(tree, tc, cfg.fdr, "dm"),
                                                     "second_smallest")
        except (EmptyReport, InsufficientTests):
            pass
    if "permanova" in cfg.methods:
        q = np.concatenate([tc.q[:, 0, :], tc.q[:, 1, :]])
        dist = pairwise_kr(tree, q)
        subjects = list(range(n)) * 2
        conds = [1] * n + [2] * n
        out["global"]["permanova"] = permanova_paired(dist, subjects, conds, cfg.n_perm,
                                                      rng.substream(1)).p_value
    return out


def run_tree_sim(cfg: TreeSimConfig, reference: Reference | None = None) -> SimTable:
    """Global rejection rates, per-subtree discovery rates and empirical FDR.

    Rows with ``method`` of the form ``discovery:<node_id>`` give the share
    of replicates in which the node was rejected under BH; the ``fdr`` row
    is the mean false discovery proportion, with ``truth`` nodes being the
    perturbed internal nodes and their ancestors (none when ``p_eps == 0``).
    """
    reference = synthetic_reference() if reference is None else reference
    tree = reference.tree
    truth_all = differential_nodes(tree, cfg.pattern, cfg.targets)
    table = SimTable()
    g = 0
    for n in cfg.n_grid:
        for p_eps in cfg.p_eps_grid:
            root = RngStream(cfg.seed, (g,))
            reps = _map(lambda r: _tree_replicate(cfg, reference, n, p_eps, root.substream(r)),
                        range(cfg.replicates), cfg.workers)
            key = {"pattern": cfg.pattern, "n": n, "p_eps": p_eps}
            for method in cfg.methods:
                ps = [r["global"].get(method) for r in reps]
                hits = sum(1 for p in ps if p is not None and p < cfg.alpha)
                table.add(key, method, hits, cfg.replicates, sum(p is None for p in ps))
            if "pairmn_fisher" in cfg.methods or "pairmn_second" in cfg.methods:
                truth = truth_all if p_eps > 0 else set()
                fdp = [len(r["rejected"] - truth) / max(len(r["rejected"]), 1) for r in reps]
                table.add(key, "fdr", 0, cfg.replicates, rate=float(np.mean(fdp)))
                for k in tree.internal_nodes:
                    hits = sum(1 for r in reps if k in r["rejected"])
                    table.add(key, f"discovery:{tree.ids[k]}", hits, cfg.replicates)
            g += 1
    return table
