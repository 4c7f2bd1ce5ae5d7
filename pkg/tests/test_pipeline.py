import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csifm.channel import ArrayGeometry, CarrierConfig, MultipathParamSet, synthesize_csi
from csifm.errors import ConfigError, ContractError
from csifm.pipeline import (
    CorruptionPolicy,
    batch_std,
    corrupt_batch,
    detokenize,
    fft,
    fft2,
    inject_noise,
    mu_law,
    mu_law_compress,
    mu_law_inverse,
    structure_target,
    token_layout,
    tokenize,
)

# oracle: ln(1 + 255 * 0.5) / ln(256), evaluated once and frozen
HALF_MAX_MU255 = 0.8757030686492349


def rand_complex(shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# fft ------------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 4, 16, 64])
def test_fft_matches_reference(n):
    x = rand_complex((3, n), n)
    np.testing.assert_allclose(fft(x), np.fft.fft(x), atol=1e-12 * max(n, 1))


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        fft(np.ones(12))


def test_parseval():
    h = rand_complex((16, 16), 4)
    lhs = np.sum(np.abs(h) ** 2)
    rhs = np.sum(np.abs(fft2(h)) ** 2) / h.size
    assert abs(lhs - rhs) / lhs < 1e-9


# mu-law ---------------------------------------------------------------------

def test_mu_law_fixed_points():
    assert mu_law(0.0) == 0.0
    assert mu_law(1.0) == pytest.approx(1.0, abs=1e-15)
    assert mu_law(0.5) == pytest.approx(HALF_MAX_MU255, abs=1e-12)


def test_mu_law_half_max_oracle():
    assert np.log(128.5) / np.log(256) == pytest.approx(HALF_MAX_MU255, abs=1e-15)


def test_compress_examples():
    h = np.array([[0.0, 2.0 * np.exp(0.3j)], [1.0 * np.exp(-1.1j), 0.5]])
    out = mu_law_compress(h)
    assert out[0, 0] == 0
    assert abs(out[0, 1]) == pytest.approx(1.0, abs=1e-15)
    assert abs(out[1, 0]) == pytest.approx(HALF_MAX_MU255, abs=1e-12)
    nz = np.abs(h) > 0
    np.testing.assert_allclose(np.angle(out[nz]), np.angle(h[nz]), atol=1e-12)


def test_compress_zero_matrix():
    assert np.all(mu_law_compress(np.zeros((4, 4))) == 0)


@settings(max_examples=80, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_mu_law_monotone_and_invertible(a, b):
    if a < b:
        assert mu_law(a) < mu_law(b)
    assert mu_law_inverse(mu_law(a)) == pytest.approx(a, abs=1e-9)


def test_compress_is_batched():
    h = rand_complex((5, 4, 8), 1)
    np.testing.assert_allclose(mu_law_compress(h)[2], mu_law_compress(h[2]))


# tokens ---------------------------------------------------------------------

def test_full_scale_token_count():
    x, rows, segs = tokenize(rand_complex((32, 32)), 16)
    assert x.shape == (64, 32)
    assert rows.max() == 31 and set(segs) == {0, 1}


def test_single_token():
    x, rows, segs = tokenize(rand_complex((1, 4)), 4)
    assert x.shape == (1, 8) and rows[0] == 0 and segs[0] == 0


def test_layout_labels():
    rows, segs = token_layout(3, 8, 2)
    k = np.arange(12)
    np.testing.assert_array_equal(rows, k // 4)
    np.testing.assert_array_equal(segs, k % 4)


def test_token_content():
    h = rand_complex((2, 4), 2)
    x, _, _ = tokenize(h, 2)
    # token 3 = row 1, segment 1 = h[1, 2:4]
    np.testing.assert_array_equal(x[3], np.concatenate([h[1, 2:].real, h[1, 2:].imag]))


def test_non_divisible_rejected():
    with pytest.raises(ConfigError):
        tokenize(np.ones((2, 6)), 4)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([(1, 4, 4), (4, 8, 2), (3, 16, 8), (2, 8, 1)]), st.integers(0, 1000))
def test_tokenize_bijection(dims, seed):
    n_a, n_f, L = dims
    h = rand_complex((n_a, n_f), seed)
    x, _, _ = tokenize(h, L)
    assert np.array_equal(detokenize(x, n_a, n_f), h)


# structure target -----------------------------------------------------------

def test_all_ones_single_dc_bin():
    s = structure_target(np.ones((4, 4)))
    assert s[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.abs(s[1:]) < 1e-12)


def test_zero_matrix_zero_target():
    assert np.all(structure_target(np.zeros((4, 4))) == 0)


def test_on_grid_path_concentrates_energy():
    c = CarrierConfig(3.5e9, 5e6, 16, 16)
    geom = ArrayGeometry.ula(16, c.wavelength)
    # u_x = 0.5 lands on an antenna DFT bin, tau = 3 delay bins lands on a frequency bin
    p = MultipathParamSet(np.array([1.0 + 0j]), np.array([3 * c.delay_resolution]),
                          np.array([np.pi / 2]), np.array([np.arccos(0.5)]), 0.0, True, np.zeros(2))
    e = np.abs(fft2(synthesize_csi(p, c, geom))) ** 2
    assert e.max() / e.sum() > 0.999
    s = structure_target(synthesize_csi(p, c, geom))
    assert np.count_nonzero(s > 1e-6) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 15), st.integers(0, 500))
def test_target_invariant_to_cyclic_antenna_shift(shift, seed):
    h = rand_complex((16, 16), seed)
    np.testing.assert_allclose(structure_target(np.roll(h, shift, axis=0)), structure_target(h),
                               atol=1e-12)


# noise ----------------------------------------------------------------------

def test_noise_power_at_zero_db():
    h = rand_complex((16, 16), 7)
    rng = np.random.default_rng(0)
    p_sig = np.mean(np.abs(h) ** 2)
    p_noise = np.mean([np.mean(np.abs(inject_noise(h, 0.0, rng)[0] - h) ** 2) for _ in range(200)])
    assert abs(p_noise / p_sig - 1.0) < 0.03


def test_noiseless_sentinel_and_zero_power():
    h = rand_complex((4, 4))
    out, ok = inject_noise(h, np.inf, np.random.default_rng(0))
    assert ok and np.array_equal(out, h)
    z, ok = inject_noise(np.zeros((4, 4)), 10.0, np.random.default_rng(0))
    assert not ok and np.all(z == 0)


def test_non_finite_rejected():
    with pytest.raises(ContractError):
        inject_noise(np.array([[np.nan]]), 0.0, np.random.default_rng(0))


def test_corruption_fraction():
    h = rand_complex((20_000, 2, 2), 3)
    _, hit = corrupt_batch(h, CorruptionPolicy(), np.random.default_rng(1))
    assert abs(hit.mean() - 0.6) < 0.02


def test_batch_std_guard():
    sd, flagged = batch_std(np.zeros(10))
    assert flagged and sd > 0
    sd, flagged = batch_std(np.array([0.0, 2.0]))
    assert not flagged and sd == 1.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 8), elements=st.floats(-10, 10)))
def test_compressed_magnitude_in_unit_interval(a):
    out = np.abs(mu_law_compress(a + 0j))
    assert np.all(out <= 1 + 1e-12) and np.all(out >= 0)
