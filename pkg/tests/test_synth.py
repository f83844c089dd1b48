import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_mosaic import dataio, synth


def bisect_leaky_inverse(y, slope, lo=-1e6, hi=1e6, iters=200):
    """Invert t -> leaky_relu(t) elementwise by bisection."""
    lo = np.full_like(y, lo)
    hi = np.full_like(y, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = np.where(mid > 0, mid, slope * mid)
        below = f < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def oracle_inverse(net, X):
    h = np.array(X, dtype=float)
    for k in range(net.depth - 1, -1, -1):
        if k < net.depth - 1:
            h = bisect_leaky_inverse(h, net.leaky_slope)
        W = net.layers[k]
        # lower-triangular forward substitution
        e1 = h[:, 0] / W[0, 0]
        e2 = (h[:, 1] - W[1, 0] * e1) / W[1, 1]
        h = np.column_stack([e1, e2])
    return h


def test_identity_mixing_passes_sources_through():
    net = synth.identity_mixing()
    E = np.random.default_rng(0).laplace(size=(20, 2))
    np.testing.assert_array_equal(net(E), E)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_inverse_matches_bisection_oracle(seed):
    net = synth.sample_mixing(seed)
    E = np.random.default_rng(seed).laplace(size=(64, 2))
    X = net(E)
    np.testing.assert_allclose(oracle_inverse(net, X), E, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(net.inverse(X), E, rtol=1e-9, atol=1e-9)


def test_triangular_mixing_is_causal():
    net = synth.sample_mixing(3)
    rng = np.random.default_rng(1)
    E = rng.laplace(size=(100, 2))
    F = E.copy()
    F[:, 1] = rng.laplace(size=100)
    np.testing.assert_array_equal(net(E)[:, 0], net(F)[:, 0])
    assert not np.allclose(net(E)[:, 1], net(F)[:, 1])


def test_confounded_mixing_mixes_both_ways():
    net = synth.sample_mixing(3, triangular=False)
    rng = np.random.default_rng(1)
    E = rng.laplace(size=(100, 2))
    F = E.copy()
    F[:, 1] = rng.laplace(size=100)
    assert not np.allclose(net(E)[:, 0], net(F)[:, 0])
    for W in net.layers:
        assert abs(np.linalg.det(W)) >= synth.DIAG_FLOOR ** 2
    np.testing.assert_allclose(net.inverse(net(E)), E, atol=1e-8)


def test_diagonal_floor():
    for seed in range(20):
        for W in synth.sample_mixing(seed).layers:
            assert W[0, 1] == 0
            assert np.all(np.abs(np.diag(W)) >= synth.DIAG_FLOOR)


def test_laplace_moments():
    spec = synth.SourceSpec(np.array([[0.5, 2.0], [1.0, 1.0], [3.0, 0.3]]))
    pairs = synth.generate_pairs(synth.identity_mixing(), spec, n_per_pair=40000, seed=5)
    for p in pairs:
        E = p.sources
        np.testing.assert_allclose(E.mean(axis=0), 0, atol=0.05 * p.scales.max())
        # Laplace(0, b): variance 2 b^2, mean absolute deviation b
        np.testing.assert_allclose(E.var(axis=0), 2 * p.scales**2, rtol=0.06)
        np.testing.assert_allclose(np.abs(E).mean(axis=0), p.scales, rtol=0.03)


def test_scales_range():
    spec = synth.sample_scales(200, seed=4)
    assert spec.scales.min() >= 0.3 and spec.scales.max() <= 3.0


def test_rank_condition_examples():
    equal = synth.SourceSpec(np.ones((5, 2)))
    assert not synth.check_rank(equal)
    # second source constant across pairs: differences span one direction only
    one_dir = synth.SourceSpec(np.column_stack([[0.5, 1.0, 2.0], [1.0, 1.0, 1.0]]))
    assert not synth.check_rank(one_dir)
    varied = synth.SourceSpec(np.array([[0.5, 1.0], [1.0, 2.0], [2.0, 0.7]]))
    assert synth.check_rank(varied)
    with pytest.raises(synth.RankConditionError):
        synth.generate_pairs(synth.sample_mixing(0), equal, 50)
    # two pairs are exempt
    synth.generate_pairs(synth.sample_mixing(0), synth.SourceSpec(np.ones((2, 2))), 50)


def test_invalid_scales():
    with pytest.raises(ValueError):
        synth.SourceSpec(np.array([[1.0, -1.0]]))
    with pytest.raises(ValueError):
        synth.SourceSpec(np.ones(3))


def test_random_orientation_swaps_columns():
    net = synth.sample_mixing(9)
    spec = synth.sample_scales(40, seed=2)
    pairs = synth.generate_pairs(net, spec, 50, seed=8, orientation="random")
    causes = {p.cause_index for p in pairs}
    assert causes == {1, 2}
    for p in pairs:
        X = net(p.sources)
        expected = X if p.cause_index == 1 else X[:, ::-1]
        np.testing.assert_array_equal(p.observations, expected)


def test_generation_is_seeded():
    net = synth.sample_mixing(11)
    spec = synth.sample_scales(4, seed=3)
    a = synth.generate_pairs(net, spec, 30, seed=1, orientation="random")
    b = synth.generate_pairs(net, spec, 30, seed=1, orientation="random")
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.observations, q.observations)
        assert p.cause_index == q.cause_index
    np.testing.assert_array_equal(synth.sample_mixing(11).layers[2], net.layers[2])


def test_export_round_trip(tmp_path):
    net = synth.sample_mixing(1)
    pairs = synth.generate_pairs(net, synth.sample_scales(3, seed=2), 25, seed=3,
                                 orientation="random")
    synth.export_pairs(pairs, tmp_path, {"seed": 1})
    records = dataio.load_tcep(tmp_path)
    meta = json.loads((tmp_path / "synth_meta.json").read_text())
    assert meta["seed"] == 1 and len(meta["pairs"]) == 3
    for p, r in zip(pairs, records):
        np.testing.assert_array_equal(r.data, p.observations)
        assert r.cause == p.cause_index
        # exported observations invert back to the recorded sources
        X = r.data if r.cause == 1 else r.data[:, ::-1]
        np.testing.assert_allclose(net.inverse(X), p.sources, atol=1e-9)
