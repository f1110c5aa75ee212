"""Paired-multinomial tests for count compositions, flat and on taxonomic trees."""

from .errors import (DegenerateInput, EmptyReport, InsufficientSamples, InsufficientTests,
                     InvalidInput, InvalidNode, InvalidTree, PairMNError, ZeroRank)
from .estimate import PairedCounts, lemma1_covariance, unpaired_covariance
from .hypotest import (TestResult, bh_fdr, fisher_combine, paired_f_test,
                       second_smallest_combine, unpaired_dm_test)
from .model import LogNormalParams, MixedDirichletParams, PairMnParams
from .numkit import RngStream, pinv_truncated
from .tree import (TaxTree, TreeCounts, global_test, kr_distance, pairwise_kr,
                   permanova_paired, slice_subtree, subtree_tests)

__version__ = "0.1.0"
