import numpy as np
import pytest
import scipy.stats

from dane.errors import (
    AllNodesIsolated,
    FeatureRowMissing,
    InconsistentFeatureWidth,
    MalformedLine,
    NodeIdOutOfRange,
)
from dane.graph import (
    Graph,
    GraphPair,
    NegativeSampler,
    build_negative_sampler,
    build_propagation,
    load_graph,
    load_labels,
    write_edge_file,
    write_feature_file,
    write_label_file,
)


def path_graph(n, feature_dim=2):
    edges = [(i, i + 1) for i in range(n - 1)]
    return Graph(n, edges, np.arange(n * feature_dim, dtype=float).reshape(n, feature_dim))


def random_graph(n, p, seed, feature_dim=3):
    rng = np.random.default_rng(seed)
    mask = np.triu(rng.random((n, n)) < p, k=1)
    edges = np.argwhere(mask)
    return Graph(n, edges, rng.normal(size=(n, feature_dim)))


# --- Graph construction -------------------------------------------------------


def test_edges_are_canonicalized_and_deduplicated():
    g = Graph(3, [(1, 0), (0, 1), (2, 1), (0, 1)], np.zeros((3, 2)))
    np.testing.assert_array_equal(g.edges, [[0, 1], [1, 2]])
    np.testing.assert_array_equal(g.degrees, [1, 2, 1])


def test_degrees_on_path_graph():
    g = path_graph(4)
    np.testing.assert_array_equal(g.degrees, [1, 2, 2, 1])
    assert g.num_edges == 3


def test_self_loop_rejected_in_constructor():
    with pytest.raises(ValueError):
        Graph(2, [(0, 0)], np.zeros((2, 1)))


def test_edge_out_of_range_rejected():
    with pytest.raises(NodeIdOutOfRange):
        Graph(2, [(0, 5)], np.zeros((2, 1)))


def test_feature_row_count_must_match():
    with pytest.raises(ValueError):
        Graph(3, [(0, 1)], np.zeros((2, 4)))


def test_arrays_are_read_only():
    g = path_graph(3)
    with pytest.raises(ValueError):
        g.edges[0, 0] = 9
    with pytest.raises(ValueError):
        g.features[0, 0] = 9.0


def test_pair_requires_matching_feature_width():
    a = Graph(2, [(0, 1)], np.zeros((2, 3)))
    b = Graph(2, [(0, 1)], np.zeros((2, 4)))
    with pytest.raises(InconsistentFeatureWidth):
        GraphPair(a, b)
    pair = GraphPair(a, Graph(3, [(0, 2)], np.zeros((3, 3))))
    assert pair.source is a


# --- propagation matrix -------------------------------------------------------


def test_propagation_entries_on_path_graph():
    # nodes 0-1-2: degrees 1, 2, 1
    p = build_propagation(path_graph(3)).matrix.toarray()
    assert p[0, 1] == pytest.approx(0.4082482904638631, rel=1e-15)  # 1/sqrt(6)
    assert p[1, 1] == pytest.approx(1.0 / 3.0, rel=1e-15)
    assert p[0, 0] == pytest.approx(0.5, rel=1e-15)
    assert p[0, 2] == 0.0


def test_propagation_two_nodes_single_edge():
    g = Graph(2, [(0, 1)], np.zeros((2, 1)))
    p = build_propagation(g).matrix.toarray()
    np.testing.assert_allclose(p, np.full((2, 2), 0.5), rtol=0, atol=0)


def test_propagation_is_exactly_symmetric():
    g = random_graph(40, 0.1, seed=0)
    m = build_propagation(g).matrix
    diff = (m - m.T).tocoo()
    assert diff.nnz == 0 or np.abs(diff.data).max() == 0.0


def test_propagation_nnz_counts_diagonal_plus_both_orientations():
    g = random_graph(30, 0.15, seed=1)
    p = build_propagation(g)
    assert p.nnz == g.num_nodes + 2 * g.num_edges


def test_propagation_handles_isolated_nodes():
    g = Graph(3, [(0, 1)], np.zeros((3, 1)))
    p = build_propagation(g).matrix.toarray()
    assert p[2, 2] == 1.0  # degree 0: self weight 1/(0+1)
    assert p[2, 0] == p[2, 1] == 0.0


def test_propagation_spectrum_bounded_by_one():
    g = random_graph(25, 0.2, seed=2)
    m = build_propagation(g).matrix.toarray()
    eigenvalues = np.linalg.eigvalsh(m)
    assert np.abs(eigenvalues).max() <= 1.0 + 1e-12


# --- negative sampler ---------------------------------------------------------


def test_sampler_probabilities_three_quarter_power():
    # degrees 16 and 1: weights 8 and 1
    s = NegativeSampler([16, 1], seed=0)
    np.testing.assert_allclose(s.probabilities, [8.0 / 9.0, 1.0 / 9.0], rtol=1e-15)


def test_sampler_never_emits_isolated_nodes():
    s = NegativeSampler([4, 0, 1], seed=3)
    draws = s.sample(200_000)
    assert s.probabilities[1] == 0.0
    assert not (draws == 1).any()
    assert set(np.unique(draws)) <= {0, 2}


def test_sampler_matches_distribution():
    degrees = np.array([1, 2, 3, 4, 10])
    s = NegativeSampler(degrees, seed=4)
    draws = s.sample(200_000)
    counts = np.bincount(draws, minlength=5)
    expected = s.probabilities * draws.size
    _, pvalue = scipy.stats.chisquare(counts, expected)
    assert pvalue > 1e-3


def test_sampler_is_deterministic_per_seed():
    a = NegativeSampler([1, 2, 3], seed=7).sample(1000)
    b = NegativeSampler([1, 2, 3], seed=7).sample(1000)
    c = NegativeSampler([1, 2, 3], seed=8).sample(1000)
    np.testing.assert_array_equal(a, b)
    assert (a != c).any()


def test_sampler_rejects_fully_isolated_graph():
    with pytest.raises(AllNodesIsolated):
        NegativeSampler([0, 0, 0], seed=0)


def test_build_negative_sampler_uses_graph_degrees():
    g = path_graph(3)
    s = build_negative_sampler(g, seed=0)
    w = g.degrees**0.75
    np.testing.assert_allclose(s.probabilities, w / w.sum(), rtol=1e-15)


# --- file round trips ---------------------------------------------------------


def test_graph_file_round_trip(tmp_path):
    g = random_graph(20, 0.2, seed=5)
    write_edge_file(tmp_path / "edges.tsv", g)
    write_feature_file(tmp_path / "features.csv", g)
    back = load_graph(tmp_path / "edges.tsv", tmp_path / "features.csv")
    assert back.edges.tobytes() == g.edges.tobytes()
    assert back.features.tobytes() == g.features.tobytes()


def test_feature_header_is_optional(tmp_path):
    g = random_graph(6, 0.3, seed=6)
    write_edge_file(tmp_path / "e.tsv", g)
    write_feature_file(tmp_path / "f.csv", g, header=True)
    back = load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")
    assert back.features.tobytes() == g.features.tobytes()


def test_label_file_round_trip(tmp_path):
    labels = {0: ("red",), 2: ("blue", "red"), 1: ("blue",)}
    write_label_file(tmp_path / "labels.tsv", labels)
    assert load_labels(tmp_path / "labels.tsv") == labels


def test_edge_comments_and_blanks_are_skipped(tmp_path):
    (tmp_path / "e.tsv").write_text("# header\n\n0\t1\n")
    (tmp_path / "f.csv").write_text("0,1.0\n1,2.0\n")
    g = load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")
    np.testing.assert_array_equal(g.edges, [[0, 1]])


def test_duplicate_and_reversed_edges_are_merged(tmp_path, caplog):
    (tmp_path / "e.tsv").write_text("0\t1\n1\t0\n0\t1\n")
    (tmp_path / "f.csv").write_text("0,1.0\n1,2.0\n")
    with caplog.at_level("WARNING", logger="dane.graph"):
        g = load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")
    assert g.num_edges == 1
    np.testing.assert_array_equal(g.degrees, [1, 1])
    assert any("duplicate" in r.message for r in caplog.records)


def test_self_loops_are_dropped_with_warning(tmp_path, caplog):
    (tmp_path / "e.tsv").write_text("0\t0\n0\t1\n")
    (tmp_path / "f.csv").write_text("0,1.0\n1,2.0\n")
    with caplog.at_level("WARNING", logger="dane.graph"):
        g = load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")
    assert g.num_edges == 1
    assert any("self loop" in r.message for r in caplog.records)


def test_malformed_edge_line(tmp_path):
    (tmp_path / "e.tsv").write_text("0\tx\n")
    (tmp_path / "f.csv").write_text("0,1.0\n1,2.0\n")
    with pytest.raises(MalformedLine):
        load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")


def test_edge_references_unknown_node(tmp_path):
    (tmp_path / "e.tsv").write_text("0\t5\n")
    (tmp_path / "f.csv").write_text("0,1.0\n1,2.0\n")
    with pytest.raises(NodeIdOutOfRange):
        load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")


def test_feature_gap_detected(tmp_path):
    (tmp_path / "e.tsv").write_text("0\t1\n")
    (tmp_path / "f.csv").write_text("0,1.0\n2,2.0\n")
    with pytest.raises(FeatureRowMissing):
        load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")


def test_ragged_feature_rows_rejected(tmp_path):
    (tmp_path / "e.tsv").write_text("0\t1\n")
    (tmp_path / "f.csv").write_text("0,1.0,2.0\n1,3.0\n")
    with pytest.raises(InconsistentFeatureWidth):
        load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")


def test_duplicate_feature_row_rejected(tmp_path):
    (tmp_path / "f.csv").write_text("0,1.0\n0,2.0\n")
    (tmp_path / "e.tsv").write_text("")
    with pytest.raises(MalformedLine):
        load_graph(tmp_path / "e.tsv", tmp_path / "f.csv")


def test_duplicate_label_line_rejected(tmp_path):
    (tmp_path / "l.tsv").write_text("0\ta\n0\tb\n")
    with pytest.raises(MalformedLine):
        load_labels(tmp_path / "l.tsv")


def test_label_line_with_missing_field(tmp_path):
    (tmp_path / "l.tsv").write_text("0\n")
    with pytest.raises(MalformedLine):
        load_labels(tmp_path / "l.tsv")
