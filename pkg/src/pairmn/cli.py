"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 statistical degeneracy.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import formats
from .errors import (DegenerateInput, EmptyReport, InsufficientSamples, InsufficientTests,
                     InvalidInput, InvalidNode, InvalidTree, ZeroRank)
from .hypotest import paired_f_test
from .numkit import RngStream
from .simbench import (FlatSimConfig, Reference, TreeSimConfig, default_workers, run_flat_sim,
                       run_tree_sim, synthetic_reference)
from .tree import pairwise_kr, permanova_paired, subtree_tests

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3

_INPUT_ERRORS = (InvalidInput, InvalidTree, InvalidNode, OSError, json.JSONDecodeError)
_DEGENERATE_ERRORS = (DegenerateInput, InsufficientSamples, InsufficientTests, ZeroRank, EmptyReport)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_test(args) -> int:
    ids1, cats1, x1 = formats.read_wide_counts(args.counts1)
    ids2, cats2, x2 = formats.read_wide_counts(args.counts2)
    if cats1 != cats2:
        raise InvalidInput("the two files list different categories")
    if sorted(ids1) != sorted(ids2):
        raise InvalidInput("the two files hold different subjects")
    pos = {s: i for i, s in enumerate(ids2)}
    x2 = x2[[pos[s] for s in ids1]]
    res = paired_f_test((x1, x2))
    _emit(json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_tree(args) -> int:
    tree = formats.read_node_table(args.tree)
    counts = formats.read_counts(args.counts, tree)
    report = subtree_tests(tree, counts, args.fdr, args.test)
    d = formats.report_to_dict(report, method=args.global_method)
    _emit(formats.write_report(d), args.out)
    return EXIT_OK


def _load_reference(spec, base: Path) -> Reference:
    if spec in (None, "synthetic"):
        return synthetic_reference()
    if isinstance(spec, dict) and {"tree", "counts"} <= set(spec):
        tree = formats.read_node_table(base / spec["tree"])
        tc = formats.read_counts(base / spec["counts"], tree)
        # every sample of either condition is a reference composition
        return Reference.from_assigned(tree, tc.assigned.reshape(-1, tree.n_nodes))
    raise InvalidInput("reference must be 'synthetic' or {'tree': FILE, 'counts': FILE}")


def cmd_simulate(args) -> int:
    path = Path(args.config)
    cfg = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise InvalidInput("config must be a JSON object")
    kind = cfg.pop("kind", "flat")
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("workers", default_workers())
    if kind == "flat":
        if args.theta_mode is not None:
            cfg["theta_as_concentration"] = args.theta_mode == "concentration"
        table = run_flat_sim(FlatSimConfig.from_dict(cfg))
    elif kind == "tree":
        ref = _load_reference(cfg.pop("reference", None), path.parent)
        if args.strict_literal:
            cfg["strict_literal"] = True
        table = run_tree_sim(TreeSimConfig.from_dict(cfg), ref)
    else:
        raise InvalidInput(f"unknown simulation kind {kind!r}")
    _emit(table.to_csv(), args.out)
    return EXIT_OK


def cmd_distance(args) -> int:
    tree = formats.read_node_table(args.tree)
    counts = formats.read_counts(args.counts, tree)
    q = counts.q
    labels, subjects, conds, rows = [], [], [], []
    for i, sid in enumerate(counts.subject_ids):
        for c in (1, 2):
            labels.append(f"{sid}|{c}")
            subjects.append(sid)
            conds.append(c)
            rows.append(q[i, c - 1])
    dist = pairwise_kr(tree, np.array(rows))
    formats.write_distances(args.out, labels, dist)
    if args.pairs_out:
        formats.write_pairs(args.pairs_out, labels, subjects, conds)
    return EXIT_OK


def cmd_permanova(args) -> int:
    labels, dist = formats.read_distances(args.distances)
    pairs = formats.read_pairs(args.pairs)
    missing = [lab for lab in labels if lab not in pairs]
    if missing:
        raise InvalidInput(f"labels without a pairs entry: {missing[:5]}")
    subjects = [pairs[lab][0] for lab in labels]
    conds = [pairs[lab][1] for lab in labels]
    res = permanova_paired(dist, subjects, conds, args.nperm, RngStream(args.seed or 0))
    out = {"statistic": res.statistic, "p_value": res.p_value, "n_perm": res.n_perm}
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairmn", description="Paired-multinomial tests for count compositions.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
        sp.add_argument("--out", default=None, help="output file (default stdout)")
        return sp

    t = common(sub.add_parser("test", help="paired test on two wide count tables"))
    t.add_argument("--counts1", required=True, help="condition-1 table: subject_id then one column per category")
    t.add_argument("--counts2", required=True, help="condition-2 table with the same subjects and categories")
    t.set_defaults(func=cmd_test)

    t = common(sub.add_parser("tree", help="subtree tests on a taxonomy"))
    t.add_argument("--tree", required=True, help="node table (node_id parent_id rank name)")
    t.add_argument("--counts", required=True, help="long counts (sample_id condition node_id count)")
    t.add_argument("--fdr", type=float, default=0.05, help="BH level (default 0.05)")
    t.add_argument("--global", dest="global_method", choices=("fisher", "second"), default="second",
                   help="global combination rule (default second)")
    t.add_argument("--test", choices=("paired", "dm"), default="paired",
                   help="per-subtree test (default paired)")
    t.set_defaults(func=cmd_tree)

    t = common(sub.add_parser("simulate", help="run a simulation config (JSON) and print CSV"))
    t.add_argument("--config", required=True, help="JSON config with kind flat or tree")
    mode = t.add_mutually_exclusive_group()
    mode.add_argument("--theta-as-concentration", dest="theta_mode", action="store_const",
                      const="concentration", help="read thetas as Dirichlet concentrations (default)")
    mode.add_argument("--theta-as-variance", dest="theta_mode", action="store_const",
                      const="variance", help="read thetas as variance fractions in (0, 1]")
    t.add_argument("--strict-literal", action="store_true",
                   help="dense pattern: draw the condition-1 perturbation from the condition-2 total")
    t.set_defaults(func=cmd_simulate, theta_mode=None)

    t = sub.add_parser("distance", help="pairwise K-R distances between all samples")
    t.add_argument("--tree", required=True, help="node table")
    t.add_argument("--counts", required=True, help="long counts")
    t.add_argument("--out", required=True, help="CSV distance matrix")
    t.add_argument("--pairs-out", default=None, help="also write the label/subject/condition table")
    t.add_argument("--seed", type=int, default=None, help="accepted for symmetry; unused")
    t.set_defaults(func=cmd_distance)

    t = common(sub.add_parser("permanova", help="paired PERMANOVA on a distance matrix"))
    t.add_argument("--distances", required=True, help="CSV from the distance command")
    t.add_argument("--pairs", required=True, help="label/subject/condition TSV")
    t.add_argument("--nperm", type=int, default=999, help="permutations (default 999, at least 99)")
    t.set_defaults(func=cmd_permanova)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except _DEGENERATE_ERRORS as exc:
        print(f"pairmn: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except _INPUT_ERRORS as exc:
        print(f"pairmn: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TypeError, ValueError) as exc:  # bad config values
        print(f"pairmn: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
