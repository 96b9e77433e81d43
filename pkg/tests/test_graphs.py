"""Graph container, adjacency normalization, and feature shuffling."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tard.graphs import (
    InvalidEventError,
    PropagationEvent,
    build_adjacency,
    normalize_adjacency,
    shuffle_features,
    to_prop_graph,
)


def _event(edges, features, label=0, event_id="t"):
    features = np.asarray(features, dtype=np.float64)
    return PropagationEvent(
        id=event_id,
        label=label,
        num_nodes=features.shape[0],
        edges=edges,
        features=features,
    )


class TestPropagationEvent:
    def test_valid_event(self):
        ev = _event([(0, 1), (0, 2)], np.zeros((3, 2)))
        assert ev.feature_dim == 2

    def test_rejects_out_of_range_edge(self):
        with pytest.raises(InvalidEventError):
            _event([(0, 3)], np.zeros((3, 2)))

    def test_rejects_self_edge(self):
        with pytest.raises(InvalidEventError):
            _event([(1, 1)], np.zeros((3, 2)))

    def test_rejects_feature_row_mismatch(self):
        with pytest.raises(InvalidEventError):
            PropagationEvent(
                id="t", label=0, num_nodes=3, edges=[], features=np.zeros((2, 2))
            )

    def test_rejects_non_finite_features(self):
        with pytest.raises(InvalidEventError):
            _event([], [[np.nan, 0.0]])

    def test_rejects_negative_label(self):
        with pytest.raises(InvalidEventError):
            _event([], [[0.0]], label=-1)


class TestBuildAdjacency:
    def test_star(self):
        a = build_adjacency([(0, 1), (0, 2)], 3)
        npt.assert_array_equal(a, [[0, 1, 1], [0, 0, 0], [0, 0, 0]])

    def test_names_bad_edge(self):
        with pytest.raises(InvalidEventError, match=r"\(1, 5\)"):
            build_adjacency([(1, 5)], 3)


class TestNormalizeAdjacency:
    def test_single_node(self):
        npt.assert_array_equal(normalize_adjacency(np.zeros((1, 1))), [[1.0]])

    def test_single_edge_hand_value(self):
        # symmetrized single edge plus self-loops: both degrees 2
        a = build_adjacency([(0, 1)], 2)
        npt.assert_allclose(normalize_adjacency(a), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_directed_rows_sum_to_one(self):
        a = build_adjacency([(0, 1), (0, 2)], 3)
        r = normalize_adjacency(a, mode="directed")
        npt.assert_allclose(r.sum(axis=1), np.ones(3), atol=1e-15)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            normalize_adjacency(np.zeros((1, 1)), mode="bogus")

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_symmetric_with_spectral_radius_at_most_one(self, data):
        n = data.draw(st.integers(1, 8))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        a = (rng.random((n, n)) < 0.3).astype(float)
        np.fill_diagonal(a, 0.0)
        s = normalize_adjacency(a)
        npt.assert_allclose(s, s.T, atol=1e-12)
        eigs = np.linalg.eigvalsh(s)
        assert np.max(np.abs(eigs)) <= 1.0 + 1e-9


class TestShuffleFeatures:
    def test_single_row_identity(self):
        x = np.array([[1.0, 2.0]])
        npt.assert_array_equal(shuffle_features(x, np.random.default_rng(0)), x)

    def test_deterministic_given_seed(self):
        x = np.arange(20.0).reshape(5, 4)
        a = shuffle_features(x, np.random.default_rng(42))
        b = shuffle_features(x, np.random.default_rng(42))
        assert a.tobytes() == b.tobytes()

    def test_input_unmodified_and_multiset_preserved(self):
        x = np.arange(12.0).reshape(4, 3)
        orig = x.copy()
        out = shuffle_features(x, np.random.default_rng(3))
        npt.assert_array_equal(x, orig)
        npt.assert_array_equal(
            np.sort(out, axis=0), np.sort(x, axis=0)
        )

    @given(st.integers(1, 30), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_inverse_permutation_restores(self, n, seed):
        x = np.random.default_rng(7).standard_normal((n, 3))
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n)
        shuffled = x[perm]
        inverse = np.empty(n, dtype=int)
        inverse[perm] = np.arange(n)
        npt.assert_array_equal(shuffled[inverse], x)


class TestToPropGraph:
    def test_single_node(self):
        g = to_prop_graph(_event([], [[1.0, 2.0]]))
        npt.assert_array_equal(g.adj_norm, [[1.0]])

    def test_three_node_star_hand_values(self):
        # center degree 3 (two children + loop), leaves degree 2
        g = to_prop_graph(_event([(0, 1), (0, 2)], np.zeros((3, 1))))
        c, l, m = 1 / 3, 1 / 2, 1 / np.sqrt(6)
        expected = [[c, m, m], [m, l, 0], [m, 0, l]]
        npt.assert_allclose(g.adj_norm, expected, atol=1e-12)
        npt.assert_allclose(g.adj_norm, np.asarray(g.adj_norm).T, atol=1e-15)

    def test_features_copied(self):
        ev = _event([(0, 1)], [[1.0], [2.0]])
        g = to_prop_graph(ev)
        g.features[0, 0] = 99.0
        assert ev.features[0, 0] == 1.0
