import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nites import saab
from nites.errors import FitError
from nites.saab import BlockSpec

SPEC12 = BlockSpec(2, 3)


def random_blocks(n=2000, d=12, seed=0):
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(d, d)) * np.linspace(1.5, 0.05, d)
    return rng.normal(size=(n, d)) @ mix.T + rng.uniform(0, 1, d)


def test_block_dim_example():
    k = saab.fit_saab(random_blocks(), SPEC12, keep=11)
    assert SPEC12.block_dim == 12
    assert k.ac_basis.shape == (11, 12)
    assert k.n_out == 12


def test_constant_blocks_dc_only():
    c = np.linspace(0.1, 0.9, 50)[:, None] * np.ones((1, 12))
    k = saab.fit_saab(c, SPEC12, keep=5)
    assert k.kept_ac == 0
    np.testing.assert_allclose(k.eigenvalues, 0, atol=1e-14)
    out = saab.forward(k, c)
    np.testing.assert_allclose(out[:, 0], c[:, 0] * np.sqrt(12), rtol=1e-12)


def test_two_component_model_matches_dense_eigensolver():
    rng = np.random.default_rng(5)
    # two DC-free orthonormal generating directions in dimension 12
    raw = rng.normal(size=(12, 2))
    raw -= raw.mean(axis=0)
    basis, _ = np.linalg.qr(raw)
    coef = rng.normal(size=(5000, 2)) * [3.0, 1.0]
    blocks = coef @ basis.T + 0.4
    k = saab.fit_saab(blocks, SPEC12, keep=2)

    resid = blocks - blocks.mean(axis=1, keepdims=True)
    val, vec = np.linalg.eig(np.cov(resid, rowvar=False, bias=True))
    order = np.argsort(val.real)[::-1]
    oracle = vec.real[:, order[:2]].T
    for got, want in zip(k.ac_basis[:2], oracle):
        cos = min(1.0, abs(got @ want) / np.linalg.norm(want))
        assert np.arccos(cos) < 1e-6
    # and the top-2 span is exactly the generating span
    proj = basis @ (basis.T @ k.ac_basis[:2].T)
    np.testing.assert_allclose(proj, k.ac_basis[:2].T, atol=1e-9)
    np.testing.assert_allclose(k.eigenvalues[2:], 0, atol=1e-12)


def test_fit_needs_two_blocks():
    with pytest.raises(FitError):
        saab.fit_saab(np.ones((1, 12)), SPEC12)


def test_forward_constant_and_zero_block():
    k = saab.fit_saab(random_blocks(), SPEC12, keep=7)
    c = 0.37
    out = saab.forward(k, np.full(12, c))
    assert out[0] == pytest.approx(c * np.sqrt(12), abs=1e-12)
    np.testing.assert_allclose(out[1:], k.bias, atol=1e-12)
    out0 = saab.forward(k, np.zeros(12))
    assert out0[0] == 0
    np.testing.assert_array_equal(out0[1:], k.bias)


def test_forward_training_responses_nonnegative():
    blocks = random_blocks(seed=2)
    k = saab.fit_saab(blocks, SPEC12, keep=11)
    assert saab.forward(k, blocks)[:, 1:].min() >= 0


def test_forward_dimension_mismatch():
    k = saab.fit_saab(random_blocks(), SPEC12, keep=3)
    with pytest.raises(ValueError):
        saab.forward(k, np.zeros(11))
    with pytest.raises(ValueError):
        saab.inverse(k, np.zeros(5))


def test_full_rank_lossless():
    blocks = random_blocks(seed=3)
    k = saab.fit_saab(blocks, SPEC12, keep=11)
    x = np.random.default_rng(8).normal(size=(1000, 12))
    assert np.abs(saab.inverse(k, saab.forward(k, x)) - x).max() <= 1e-9


def test_inverse_constant_response():
    k = saab.fit_saab(random_blocks(), SPEC12, keep=4)
    c = 0.6
    resp = np.concatenate([[c * np.sqrt(12)], np.full(4, k.bias)])
    np.testing.assert_allclose(saab.inverse(k, resp), np.full(12, c), atol=1e-12)


def test_truncation_energy_identity():
    blocks = random_blocks(n=10_000, seed=4)
    k = saab.fit_saab(blocks, SPEC12, keep=6)
    recon = saab.inverse(k, saab.forward(k, blocks), truncated_tail="mean")
    err = ((recon - blocks) ** 2).sum(axis=1).mean()
    assert err == pytest.approx(k.eigenvalues[6:].sum(), rel=0.01)
    # zero-fill adds the squared tail projection of the mean
    recon0 = saab.inverse(k, saab.forward(k, blocks), truncated_tail="zero")
    err0 = ((recon0 - blocks) ** 2).sum(axis=1).mean()
    assert err0 == pytest.approx(err + (k.tail_mean() ** 2).sum(), rel=1e-9)


def test_select_knee_examples():
    assert saab.select_knee([1, 0.5] + [1e-6] * 10, (1, 8)) == 2
    assert saab.select_knee([1.0] * 11, (6, 10)) == 10
    with pytest.raises(ValueError):
        saab.select_knee([], (0, 1))


def test_knee_on_brick_fixture_in_expected_band(bricks):
    from nites import cwsaab, patchio

    patches = patchio.random_crops(bricks, 32, 1000, seed=0)
    blocks = cwsaab.to_blocks(patches, 2).reshape(-1, 12)
    # channel band 6..10 including DC -> 5..9 AC components
    k = saab.fit_saab(blocks, SPEC12, saab.AUTO, knee_bounds=(5, 9))
    assert 6 <= k.n_out <= 10


def test_kernel_invariants():
    k = saab.fit_saab(random_blocks(seed=6), SPEC12, keep=11)
    bank = np.vstack([k.dc_filter, k.ac_basis])
    np.testing.assert_allclose(bank @ bank.T, np.eye(12), atol=1e-9)
    np.testing.assert_allclose(k.dc_filter, 1 / np.sqrt(12))
    assert np.all(np.diff(k.eigenvalues) <= 0)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(3, 40), st.sampled_from([4, 12])),
           elements=st.floats(-5, 5, allow_nan=False, width=64)),
)
def test_property_orthonormal_invertible_energy(blocks):
    d = blocks.shape[1]
    spec = BlockSpec(2, d // 4)
    k = saab.fit_saab(blocks, spec, keep=d - 1)
    k = k.with_kept(d - 1)
    bank = np.vstack([k.dc_filter, k.ac_basis])
    np.testing.assert_allclose(bank @ bank.T, np.eye(d), atol=1e-9)
    assert np.all(np.diff(k.eigenvalues) <= 1e-12)
    out = saab.forward(k, blocks)
    assert out[:, 1:].min() >= -1e-9
    np.testing.assert_allclose(saab.inverse(k, out), blocks, atol=1e-9)
    energy = out[:, 0] ** 2 + ((out[:, 1:] - k.bias) ** 2).sum(axis=1)
    np.testing.assert_allclose(energy, (blocks ** 2).sum(axis=1), rtol=1e-9, atol=1e-9)
