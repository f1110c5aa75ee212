import json
import warnings

import numpy as np
import pytest

from pairmn import formats
from pairmn.errors import InvalidInput, InvalidTree
from pairmn.formats import IncompletePairWarning
from pairmn.tree import TaxTree, TreeCounts, subtree_tests

from toydata import TOY, toy_counts as _toy_counts


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_node_table_round_trip(tmp_path):
    t = TaxTree.from_records(TOY)
    p = tmp_path / "nodes.tsv"
    formats.write_node_table(t, p)
    assert p.read_text().splitlines()[0] == "node_id\tparent_id\trank\tname"
    again = formats.read_node_table(p)
    assert again == t
    formats.write_node_table(again, tmp_path / "b.tsv")
    assert (tmp_path / "b.tsv").read_bytes() == p.read_bytes()


def test_node_table_errors(tmp_path):
    bad = _write(tmp_path / "x.tsv", "node_id\tparent_id\trank\tname\na\t\tk\tA\na\ta\tp\tB\n")
    with pytest.raises(InvalidInput, match=":3:"):
        formats.read_node_table(bad)
    two_roots = _write(tmp_path / "y.tsv", "node_id\tparent_id\trank\tname\na\t\tk\tA\nb\t\tk\tB\n")
    with pytest.raises(InvalidTree):
        formats.read_node_table(two_roots)
    header = _write(tmp_path / "z.tsv", "id\tparent\n")
    with pytest.raises(InvalidInput, match=":1:"):
        formats.read_node_table(header)
    with pytest.raises(InvalidInput):
        formats.read_node_table(tmp_path / "missing.tsv")


def test_counts_round_trip(tmp_path):
    tc = _toy_counts(0, n=5)
    tc = TreeCounts(tc.tree, tc.assigned, tuple(f"s{i}" for i in range(5)))
    p = tmp_path / "c.tsv"
    formats.write_counts(tc, p)
    again = formats.read_counts(p, tc.tree)
    assert again.subject_ids == tc.subject_ids
    assert np.array_equal(again.assigned, tc.assigned)
    formats.write_counts(again, tmp_path / "d.tsv")
    assert (tmp_path / "d.tsv").read_bytes() == p.read_bytes()


def test_counts_missing_default_and_incomplete_pairs(tmp_path):
    t = TaxTree.from_records(TOY)
    p = _write(tmp_path / "c.tsv", "sample_id\tcondition\tnode_id\tcount\n"
               "a\t1\tv5\t3\na\t2\tv6\t4\nb\t1\tv3\t9\n")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        tc = formats.read_counts(p, t)
    assert any(issubclass(x.category, IncompletePairWarning) for x in w)
    assert tc.subject_ids == ("a",)
    assert tc.assigned[0, 0].tolist() == [0, 0, 0, 0, 3, 0]
    assert tc.assigned[0, 1].tolist() == [0, 0, 0, 0, 0, 4]


@pytest.mark.parametrize("line,msg", [
    ("a\t3\tv1\t1", "condition"),
    ("a\t1\tzz\t1", "unknown node_id"),
    ("a\t1\tv1\t-2", "negative"),
    ("a\t1\tv1\tx", "not an integer"),
    ("a\t1\tv1", "expected 4 fields"),
])
def test_counts_line_errors(tmp_path, line, msg):
    t = TaxTree.from_records(TOY)
    p = _write(tmp_path / "c.tsv", "sample_id\tcondition\tnode_id\tcount\na\t2\tv1\t1\n" + line + "\n")
    with pytest.raises(InvalidInput, match=f":3: .*{msg}"):
        formats.read_counts(p, t)


def test_duplicate_counts_rejected(tmp_path):
    t = TaxTree.from_records(TOY)
    p = _write(tmp_path / "c.tsv", "sample_id\tcondition\tnode_id\tcount\na\t1\tv1\t1\na\t1\tv1\t2\n")
    with pytest.raises(InvalidInput, match="duplicate"):
        formats.read_counts(p, t)


def test_report_round_trip(tmp_path):
    tc = _toy_counts(2, n=25)
    rep = subtree_tests(tc.tree, tc)
    d = formats.report_to_dict(rep, method="fisher")
    p = tmp_path / "r.json"
    formats.write_report(d, p)
    back = formats.read_report(p)
    assert back == d
    assert [r["node_id"] for r in back["records"]] == ["v1", "v2"]
    assert back["global"]["K_tested"] == 2
    assert back["global"]["p"] == back["global"]["fisher_p"]
    assert formats.write_report(back) == p.read_text()
    rec = back["records"][0]
    assert set(rec) == {"node_id", "name", "rank", "F", "df1", "df2", "p", "p_adjusted",
                        "rejected", "skip_reason"}
    _write(tmp_path / "bad.json", "{\n  \"records\": [\n")
    with pytest.raises(InvalidInput, match="bad.json:"):
        formats.read_report(tmp_path / "bad.json")


def test_wide_counts_round_trip(tmp_path):
    x = np.array([[1, 2, 3], [4, 5, 6]])
    p = tmp_path / "w.tsv"
    formats.write_wide_counts(p, ["s1", "s2"], ["a", "b", "c"], x)
    ids, cats, y = formats.read_wide_counts(p)
    assert ids == ["s1", "s2"] and cats == ["a", "b", "c"]
    assert np.array_equal(x, y)
    _write(p, "subject_id\ta\tb\ns1\t1\n")
    with pytest.raises(InvalidInput, match=":2:"):
        formats.read_wide_counts(p)


def test_distances_and_pairs_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.random((4, 4))
    d = a + a.T
    np.fill_diagonal(d, 0)
    labels = ["x|1", "x|2", "y|1", "y|2"]
    formats.write_distances(tmp_path / "d.csv", labels, d)
    lab, back = formats.read_distances(tmp_path / "d.csv")
    assert lab == labels and np.array_equal(back, d)
    formats.write_pairs(tmp_path / "p.tsv", labels, ["x", "x", "y", "y"], [1, 2, 1, 2])
    pairs = formats.read_pairs(tmp_path / "p.tsv")
    assert pairs == {"x|1": ("x", 1), "x|2": ("x", 2), "y|1": ("y", 1), "y|2": ("y", 2)}


def test_report_json_is_plain():
    tc = _toy_counts(3)
    text = formats.write_report(subtree_tests(tc.tree, tc))
    json.loads(text)
    assert "NaN" not in text and "Infinity" not in text
