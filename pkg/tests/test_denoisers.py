import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pnpunmix._errors import ParameterError
from pnpunmix.data import AbundanceField
from pnpunmix.denoisers import DenoiserSpec, denoise, denoise_array, nlm_channel, residual

AVERAGING = [DenoiserSpec("gaussian", sigma=1.2), DenoiserSpec("median", radius=1),
             DenoiserSpec("nlm", patch_radius=1, search_radius=2, h=0.2)]


def test_identity_returns_equal_field():
    field = AbundanceField(np.random.default_rng(0).random((3, 20)), 4, 5)
    out = denoise(field, DenoiserSpec("identity"))
    np.testing.assert_array_equal(out.data, field.data)
    np.testing.assert_array_equal(residual(field, DenoiserSpec("identity")).data, 0.0)


@pytest.mark.parametrize("spec", AVERAGING, ids=lambda s: s.kind)
def test_constant_preserved(spec):
    field = np.full((2, 7, 6), 0.37)
    np.testing.assert_allclose(denoise_array(field, spec), field, rtol=0, atol=1e-14)


def test_median_removes_center_impulse():
    img = np.zeros((1, 5, 5))
    img[0, 2, 2] = 10.0
    out = denoise_array(img, DenoiserSpec("median", radius=1))
    assert out[0, 2, 2] == 0.0


def test_linear_scale_residual():
    F = np.random.default_rng(1).random((2, 4, 4))
    np.testing.assert_allclose(residual(F, DenoiserSpec("linear_scale", c=0.5)), 0.5 * F)


def test_gaussian_impulse_residual_is_impulse_minus_kernel():
    n = 15
    img = np.zeros((1, n, n))
    img[0, 7, 7] = 1.0
    res = residual(img, DenoiserSpec("gaussian", sigma=1.0))
    # sampled kernel, normalized, truncated at 4 sigma like the filter
    t = np.arange(-4, 5)
    k1 = np.exp(-0.5 * t ** 2)
    k1 /= k1.sum()
    kernel = np.zeros((n, n))
    kernel[3:12, 3:12] = np.outer(k1, k1)
    expected = img[0] - kernel
    np.testing.assert_allclose(res[0], expected, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 6, 7), elements=st.floats(-1, 1)),
       st.sampled_from(AVERAGING))
def test_output_bounded_by_input_range(field, spec):
    out = denoise_array(field, spec)
    assert out.min() >= field.min() - 1e-12
    assert out.max() <= field.max() + 1e-12


def test_channels_are_independent():
    rng = np.random.default_rng(2)
    field = rng.random((3, 9, 9))
    spec = DenoiserSpec("nlm", search_radius=2)
    full = denoise_array(field, spec)
    for r in range(3):
        np.testing.assert_array_equal(full[r], denoise_array(field[[r]], spec)[0])


def test_nlm_brute_force_oracle():
    rng = np.random.default_rng(3)
    img = rng.random((6, 5))
    p, s, h = 1, 2, 0.3
    got = nlm_channel(img, p, s, h)
    pad = np.pad(img, p + s, mode="symmetric")
    want = np.zeros_like(img)
    for i in range(6):
        for j in range(5):
            ci, cj = i + p + s, j + p + s
            ref = pad[ci - p:ci + p + 1, cj - p:cj + p + 1]
            num = den = 0.0
            for di in range(-s, s + 1):
                for dj in range(-s, s + 1):
                    q = pad[ci + di - p:ci + di + p + 1, cj + dj - p:cj + dj + p + 1]
                    w = np.exp(-np.mean((ref - q) ** 2) / h ** 2)
                    num += w * pad[ci + di, cj + dj]
                    den += w
            want[i, j] = num / den
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_nlm_reduces_noise():
    rng = np.random.default_rng(4)
    clean = np.zeros((32, 32))
    clean[:, 16:] = 1.0
    noisy = clean + 0.1 * rng.standard_normal(clean.shape)
    out = nlm_channel(noisy, 1, 3, 0.15)
    assert np.mean((out - clean) ** 2) < 0.5 * np.mean((noisy - clean) ** 2)


def test_spec_validation_and_round_trip():
    with pytest.raises(ParameterError):
        DenoiserSpec("bm3d")
    with pytest.raises(ParameterError):
        DenoiserSpec("gaussian", sigma=0)
    with pytest.raises(ParameterError):
        DenoiserSpec.from_dict({"kind": "median", "window": 3})
    spec = DenoiserSpec("nlm", h=0.05)
    assert DenoiserSpec.from_dict(spec.to_dict()) == spec


def test_rejects_non_3d():
    with pytest.raises(ParameterError):
        denoise_array(np.zeros((4, 4)), DenoiserSpec())
