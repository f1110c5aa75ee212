"""Readers and writers for node tables, count tables, reports and distances.

All tables are UTF-8 text. Parse errors raise :class:`InvalidInput` with
``path:line`` in the message.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from pathlib import Path

import numpy as np

from .errors import InvalidInput, InvalidTree
from .hypotest import TestResult
from .tree import SubtreeReport, TaxTree, TreeCounts, global_test

__all__ = [
    "NODE_HEADER",
    "COUNTS_HEADER",
    "PAIRS_HEADER",
    "read_node_table",
    "write_node_table",
    "read_counts",
    "write_counts",
    "read_wide_counts",
    "write_wide_counts",
    "report_to_dict",
    "write_report",
    "read_report",
    "read_distances",
    "write_distances",
    "read_pairs",
    "write_pairs",
    "IncompletePairWarning",
]

NODE_HEADER = ["node_id", "parent_id", "rank", "name"]
COUNTS_HEADER = ["sample_id", "condition", "node_id", "count"]
PAIRS_HEADER = ["label", "subject", "condition"]


class IncompletePairWarning(UserWarning):
    """A subject was seen in only one condition and was dropped."""


def _rows(path, header, delimiter="\t"):
    """Yield ``(line_number, fields)`` after checking the header."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise InvalidInput(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        first = next(reader, None)
        if first is None:
            raise InvalidInput(f"{path}:1: empty file")
        if header is not None and [h.strip() for h in first] != header:
            raise InvalidInput(f"{path}:1: expected header {delimiter.join(header)!r}")
        yield 1, first
        for row in reader:
            if not row or all(not f.strip() for f in row):
                continue
            yield reader.line_num, row


def _int(value: str, where: str, what: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise InvalidInput(f"{where}: {what} {value!r} is not an integer") from None
    return v


# ---------------------------------------------------------------------------
# Node table
# ---------------------------------------------------------------------------

def read_node_table(path) -> TaxTree:
    """Parse a node table (``node_id parent_id rank name``)."""
    records = []
    seen = {}
    rows = _rows(path, NODE_HEADER)
    next(rows)
    for line, row in rows:
        if len(row) != 4:
            raise InvalidInput(f"{path}:{line}: expected 4 fields, got {len(row)}")
        nid = row[0].strip()
        if not nid:
            raise InvalidInput(f"{path}:{line}: empty node_id")
        if nid in seen:
            raise InvalidInput(f"{path}:{line}: duplicate node_id {nid!r} (first on line {seen[nid]})")
        seen[nid] = line
        records.append((nid, row[1].strip(), row[2].strip(), row[3].strip()))
    if not records:
        raise InvalidInput(f"{path}: no nodes")
    try:
        return TaxTree.from_records(records)
    except InvalidTree as exc:
        raise InvalidTree(f"{path}: {exc}") from exc


def write_node_table(tree: TaxTree, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(NODE_HEADER)
        w.writerows(tree.records())


# ---------------------------------------------------------------------------
# Long-format assigned counts
# ---------------------------------------------------------------------------

def read_counts(path, tree: TaxTree) -> TreeCounts:
    """Parse long-format assigned counts into :class:`TreeCounts`.

    Missing ``(sample, condition, node)`` entries are 0. Subjects seen in
    only one condition are dropped with an :class:`IncompletePairWarning`.
    Subjects keep their order of first appearance.
    """
    cells = {}
    order = {}
    rows = _rows(path, COUNTS_HEADER)
    next(rows)
    for line, row in rows:
        where = f"{path}:{line}"
        if len(row) != 4:
            raise InvalidInput(f"{where}: expected 4 fields, got {len(row)}")
        sid, cond, nid, cnt = (f.strip() for f in row)
        if not sid:
            raise InvalidInput(f"{where}: empty sample_id")
        c = _int(cond, where, "condition")
        if c not in (1, 2):
            raise InvalidInput(f"{where}: condition must be 1 or 2, got {c}")
        if nid not in tree.index:
            raise InvalidInput(f"{where}: unknown node_id {nid!r}")
        v = _int(cnt, where, "count")
        if v < 0:
            raise InvalidInput(f"{where}: negative count {v}")
        key = (sid, c, tree.index[nid])
        if key in cells:
            raise InvalidInput(f"{where}: duplicate entry for {(sid, c, nid)}")
        cells[key] = v
        order.setdefault(sid, {}).setdefault(c, line)
    complete = [s for s, cs in order.items() if len(cs) == 2]
    dropped = [s for s in order if s not in complete]
    if dropped:
        warnings.warn(f"{path}: dropped {len(dropped)} subject(s) seen in one condition only: "
                      f"{', '.join(dropped[:5])}{' ...' if len(dropped) > 5 else ''}",
                      IncompletePairWarning, stacklevel=2)
    if not complete:
        raise InvalidInput(f"{path}: no subject has both conditions")
    pos = {s: i for i, s in enumerate(complete)}
    a = np.zeros((len(complete), 2, tree.n_nodes), dtype=np.int64)
    for (sid, c, k), v in cells.items():
        if sid in pos:
            a[pos[sid], c - 1, k] = v
    return TreeCounts(tree, a, tuple(complete))


def write_counts(counts: TreeCounts, path, keep_zeros: bool = False) -> None:
    tree = counts.tree
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(COUNTS_HEADER)
        for i, sid in enumerate(counts.subject_ids):
            for c in (0, 1):
                for k in tree.preorder:
                    v = int(counts.assigned[i, c, k])
                    if v or keep_zeros:
                        w.writerow([sid, c + 1, tree.ids[k], v])


# ---------------------------------------------------------------------------
# Wide count matrix (flat test)
# ---------------------------------------------------------------------------

def read_wide_counts(path):
    """Parse ``subject_id <cat1> <cat2> ...`` rows; returns (ids, categories, counts)."""
    rows = _rows(path, None)
    _, header = next(rows)
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0] != "subject_id":
        raise InvalidInput(f"{path}:1: header must start with 'subject_id' and list categories")
    if len(set(header[1:])) != len(header) - 1:
        raise InvalidInput(f"{path}:1: duplicate category names")
    ids, data = [], []
    for line, row in rows:
        where = f"{path}:{line}"
        if len(row) != len(header):
            raise InvalidInput(f"{where}: expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        if sid in ids:
            raise InvalidInput(f"{where}: duplicate subject {sid!r}")
        vals = [_int(v.strip(), where, "count") for v in row[1:]]
        if any(v < 0 for v in vals):
            raise InvalidInput(f"{where}: negative count")
        ids.append(sid)
        data.append(vals)
    if not ids:
        raise InvalidInput(f"{path}: no subjects")
    return ids, header[1:], np.array(data, dtype=np.int64)


def write_wide_counts(path, ids, categories, counts) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["subject_id", *categories])
        for sid, row in zip(ids, np.asarray(counts)):
            w.writerow([sid, *(int(v) for v in row)])


# ---------------------------------------------------------------------------
# Report JSON
# ---------------------------------------------------------------------------

def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _global_block(report: SubtreeReport) -> dict:
    k = len(report.tested())
    fisher = global_test(report, "fisher")
    second = global_test(report, "second_smallest") if k >= 2 else None
    return {"fisher_p": _num(fisher), "second_smallest_p": _num(second), "K_tested": k}


def report_to_dict(report: SubtreeReport, method: str | None = None) -> dict:
    """JSON-ready form of a subtree report with its global block."""
    records = []
    for r in report.records:
        res: TestResult | None = r.result
        records.append({
            "node_id": r.node_id,
            "name": r.name,
            "rank": r.rank,
            "F": None if res is None else _num(res.statistic),
            "df1": None if res is None else res.df1,
            "df2": None if res is None else res.df2,
            "p": None if res is None else _num(res.p_value),
            "p_adjusted": _num(r.p_adjusted),
            "rejected": bool(r.rejected),
            "skip_reason": None if res is not None else r.skip_reason,
        })
    out = {"test": report.test, "fdr": report.fdr, "records": records,
           "global": _global_block(report)}
    if method is not None:
        key = "fisher_p" if method == "fisher" else "second_smallest_p"
        out["global"]["method"] = method
        out["global"]["p"] = out["global"][key]
    return out


def write_report(report, path=None) -> str:
    """Serialize a report (or its dict form); writes to ``path`` when given."""
    d = report if isinstance(report, dict) else report_to_dict(report)
    text = json.dumps(d, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_report(path) -> dict:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(d, dict) or "records" not in d or "global" not in d:
        raise InvalidInput(f"{path}: not a subtree report")
    return d


# ---------------------------------------------------------------------------
# Distance matrix CSV and pair labels
# ---------------------------------------------------------------------------

def write_distances(path, labels, dist) -> None:
    d = np.asarray(dist, dtype=float)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *labels])
        for lab, row in zip(labels, d):
            w.writerow([lab, *(repr(float(v)) for v in row)])


def read_distances(path):
    """Returns ``(labels, matrix)``; row and column labels must agree."""
    rows = _rows(path, None, delimiter=",")
    _, header = next(rows)
    if not header or header[0] != "label":
        raise InvalidInput(f"{path}:1: header must start with 'label'")
    labels = header[1:]
    mat = []
    for i, (line, row) in enumerate(rows):
        if len(row) != len(header):
            raise InvalidInput(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        if i >= len(labels) or row[0] != labels[i]:
            raise InvalidInput(f"{path}:{line}: row label {row[0]!r} does not match the header")
        try:
            mat.append([float(v) for v in row[1:]])
        except ValueError:
            raise InvalidInput(f"{path}:{line}: non-numeric distance") from None
    if len(mat) != len(labels):
        raise InvalidInput(f"{path}: {len(mat)} rows for {len(labels)} labels")
    return labels, np.array(mat, dtype=float).reshape(len(labels), len(labels))


def write_pairs(path, labels, subjects, conditions) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(PAIRS_HEADER)
        for row in zip(labels, subjects, conditions):
            w.writerow(row)


def read_pairs(path):
    """Returns ``{label: (subject, condition)}`` in file order."""
    out = {}
    rows = _rows(path, PAIRS_HEADER)
    next(rows)
    for line, row in rows:
        where = f"{path}:{line}"
        if len(row) != 3:
            raise InvalidInput(f"{where}: expected 3 fields, got {len(row)}")
        lab, subj, cond = (f.strip() for f in row)
        c = _int(cond, where, "condition")
        if c not in (1, 2):
            raise InvalidInput(f"{where}: condition must be 1 or 2")
        if lab in out:
            raise InvalidInput(f"{where}: duplicate label {lab!r}")
        out[lab] = (subj, c)
    return out
