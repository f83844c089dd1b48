import numpy as np
import pytest

from causal_mosaic import lica, nn


def best_match_corr(est, truth):
    C = np.abs(np.corrcoef(est.T, truth.T)[:2, 2:])
    return max(min(C[0, 0], C[1, 1]), min(C[0, 1], C[1, 0]))


def rotation(theta):
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


@pytest.mark.parametrize("seed", range(5))
def test_recovers_rotated_laplace_sources(seed):
    rng = np.random.default_rng(seed)
    S = rng.laplace(size=(2000, 2)) / np.sqrt(2)
    X = S @ rotation(rng.uniform(0, np.pi)).T * [2.0, 0.5]
    u = lica.fit_linear_ica(X, seed=seed)
    assert u.converged
    assert best_match_corr(u.transform(X), S) > 0.95


def test_output_is_white_and_rotation_orthonormal():
    rng = np.random.default_rng(0)
    X = rng.laplace(size=(1000, 2)) @ np.array([[1.0, 0.4], [0.3, 2.0]]) + [5, -1]
    u = lica.fit_linear_ica(X)
    Y = u.transform(X)
    np.testing.assert_allclose(np.cov(Y, rowvar=False, bias=True), np.eye(2), atol=1e-8)
    np.testing.assert_allclose(Y.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(u.rotation @ u.rotation.T, np.eye(2), atol=1e-10)


def test_gaussian_sources_still_give_white_output():
    # no preferred rotation exists; the unmixing must remain a valid whitener
    rng = np.random.default_rng(1)
    X = rng.normal(size=(1000, 2)) @ np.array([[1.0, 0.5], [0.0, 1.0]])
    u = lica.fit_linear_ica(X, max_iter=50)
    np.testing.assert_allclose(np.cov(u.transform(X), rowvar=False, bias=True), np.eye(2),
                               atol=1e-8)


def test_degenerate_features():
    rng = np.random.default_rng(2)
    t = rng.normal(size=100)
    with pytest.raises(lica.DegenerateFeaturesError):
        lica.fit_linear_ica(np.column_stack([t, 2 * t]))
    with pytest.raises(ValueError):
        lica.fit_linear_ica(rng.normal(size=(20, 2)))
    with pytest.raises(ValueError):
        lica.fit_linear_ica(rng.normal(size=(100, 3)))


def test_hica_permutation_feeds_swapped_columns():
    rng = np.random.default_rng(3)
    pairs = [rng.laplace(size=(100, 2)) * s for s in ([0.5, 1], [1, 2], [2, 0.7])]
    model = nn.train_tcl(pairs, nn.MlpConfig(depth=2, hidden_width=6, topology="structural"),
                         nn.TrainConfig(max_steps=100, standardize="pooled"))
    with pytest.raises(ValueError):
        lica.hica(model, pairs[0])
    model = lica.fit_hica(model, pairs)
    c1 = lica.hica(model, pairs[0], 1)
    direct = model.unmixing.transform(model.features(pairs[0][:, ::-1]))
    np.testing.assert_array_equal(c1.components, direct)
    assert c1.input_permutation == 1
    c0 = lica.hica(model, pairs[0], 0)
    assert not np.allclose(c0.components, c1.components)
