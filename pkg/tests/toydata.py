"""Small fixed trees and counts shared by the tests."""

import numpy as np

from pairmn.tree import TaxTree, TreeCounts

# v1 -> (v2, v3, v4), v2 -> (v5, v6)
TOY = [("v1", "", "kingdom", "root"), ("v2", "v1", "phylum", "a"), ("v3", "v1", "phylum", "b"),
       ("v4", "v1", "phylum", "c"), ("v5", "v2", "class", "a1"), ("v6", "v2", "class", "a2")]


def toy_tree():
    return TaxTree.from_records(TOY)


def toy_counts(seed, n=30, shift=0):
    rng = np.random.default_rng(seed)
    base = rng.dirichlet(np.full(6, 4.0), size=n)
    w1 = np.array([rng.multinomial(400, p) for p in base])
    w2 = np.array([rng.multinomial(400, p) for p in base])
    w2[:, 4] += shift
    return TreeCounts(toy_tree(), np.stack([w1, w2], axis=1))
