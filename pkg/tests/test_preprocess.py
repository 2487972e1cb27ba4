import numpy as np
import pytest
from hypothesis import given, strategies as st

from maensemble.core import ConfigError, DegenerateInputError, GrayImage, Preprocessing, circular_fov
from maensemble.preprocess import (
    ClaheParams, IlluminationEqParams, PreprocessParams, VesselParams, WalterKleinParams,
    apply_preprocessing, clahe, default_window, diffusion_inpaint, illumination_equalize,
    local_mean, no_preprocessing, vessel_mask, vessel_removal_inpaint, walter_klein,
    walter_klein_map,
)


def _line_image(h=96, w=96, x0=40, sigma=1.5, contrast=0.3, b=0.5):
    yy, xx = np.mgrid[:h, :w].astype(float)
    img = b * (1 - contrast * np.exp(-0.5 * ((xx - x0) / sigma) ** 2))
    return GrayImage(img, circular_fov(h, w))


# --- walter-klein -------------------------------------------------------------


def test_walter_klein_worked_value():
    assert walter_klein_map(64.0, 0.0, 255.0, 128.0, 1.0, 0.0, 255.0) == pytest.approx(63.75, abs=1e-12)


@given(
    lo=st.floats(-100, 100), span=st.floats(0.1, 200), frac=st.floats(0.02, 0.98),
    r=st.floats(0.2, 5.0), out_lo=st.floats(-10, 10), out_span=st.floats(0.5, 50),
)
def test_walter_klein_anchor_points(lo, span, frac, r, out_lo, out_span):
    hi, mu = lo + span, lo + frac * span
    out_hi = out_lo + out_span
    vals = walter_klein_map(np.array([lo, mu, hi]), lo, hi, mu, r, out_lo, out_hi)
    assert vals[0] == pytest.approx(out_lo, abs=1e-9)
    assert vals[1] == pytest.approx((out_lo + out_hi) / 2, abs=1e-9)
    assert vals[2] == pytest.approx(out_hi, abs=1e-9)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 4), st.floats(0.05, 0.95))
def test_walter_klein_monotone(a, b, r, mu):
    f1, f2 = min(a, b), max(a, b)
    o1, o2 = walter_klein_map(np.array([f1, f2]), 0.0, 1.0, mu, r, 0.0, 1.0)
    assert o1 <= o2 + 1e-12


def test_walter_klein_on_image_uses_fov_statistics(rng):
    data = rng.uniform(0.2, 0.8, (40, 40))
    fov = circular_fov(40, 40)
    data[~fov] = 0.0
    out = walter_klein(GrayImage(data, fov), WalterKleinParams(r=2.0))
    inside = data[fov]
    assert out.data[fov][np.argmin(inside)] == pytest.approx(0.0, abs=1e-12)
    assert out.data[fov][np.argmax(inside)] == pytest.approx(1.0, abs=1e-12)
    assert out.shape == (40, 40) and np.array_equal(out.fov_mask, fov)


def test_walter_klein_constant_image_is_degenerate():
    with pytest.raises(DegenerateInputError):
        walter_klein(GrayImage(np.full((8, 8), 0.3)))


def test_walter_klein_params_validate():
    with pytest.raises(ConfigError):
        WalterKleinParams(r=0)
    with pytest.raises(ConfigError):
        WalterKleinParams(out_min=1.0, out_max=0.5)


# --- CLAHE --------------------------------------------------------------------


def _plain_equalization(q):
    """Reference: global equalization sending the darkest level to 0 and the brightest to 1."""
    levels, counts = np.unique(q, return_counts=True)
    cdf = np.cumsum(counts)
    n, c0 = q.size, cdf[0]
    mapping = {lv: (c - c0) / (n - c0) for lv, c in zip(levels, cdf)}
    return np.vectorize(mapping.get)(q).astype(float)


def test_clahe_constant_image_unchanged():
    img = GrayImage(np.full((32, 32), 0.37))
    assert np.array_equal(clahe(img).data, img.data)


@pytest.mark.parametrize("levels", [(0.2, 0.7), (0.1, 0.4, 0.9)])
def test_clahe_single_tile_matches_plain_equalization(rng, levels):
    q = rng.choice(len(levels), size=(24, 30))
    data = np.asarray(levels)[q]
    out = clahe(GrayImage(data), ClaheParams(tile_grid=(1, 1), clip_limit=1e9))
    np.testing.assert_allclose(out.data, _plain_equalization(q), atol=1e-12)


def test_clahe_checkerboard_spans_full_range_in_every_tile():
    yy, xx = np.mgrid[:64, :64]
    data = np.where((yy // 2 + xx // 2) % 2, 0.35, 0.6)
    out = clahe(GrayImage(data), ClaheParams(tile_grid=(4, 4), clip_limit=1e9)).data
    for i in range(4):
        for j in range(4):
            tile = out[16 * i:16 * (i + 1), 16 * j:16 * (j + 1)]
            assert tile.min() == pytest.approx(0.0) and tile.max() == pytest.approx(1.0)


def test_clahe_preserves_shape_range_and_outside_fov(rng):
    fov = circular_fov(64, 64)
    data = np.where(fov, rng.uniform(0.1, 0.9, (64, 64)), 0.0)
    out = clahe(GrayImage(data, fov))
    assert out.shape == data.shape and np.array_equal(out.fov_mask, fov)
    assert out.data.min() >= 0 and out.data.max() <= 1
    assert np.array_equal(out.data[~fov], data[~fov])


def test_clahe_is_monotone_within_a_tile(rng):
    data = rng.uniform(0, 1, (32, 32))
    out = clahe(GrayImage(data), ClaheParams(tile_grid=(1, 1))).data
    order = np.argsort(data, axis=None)
    assert np.all(np.diff(out.ravel()[order]) >= -1e-12)


def test_clahe_params_validate():
    with pytest.raises(ConfigError):
        ClaheParams(tile_grid=(0, 2))
    with pytest.raises(ConfigError):
        ClaheParams(clip_limit=0)
    with pytest.raises(ConfigError):
        ClaheParams(bins=1)


# --- vessel removal -------------------------------------------------------------


def test_vessel_removal_without_vessels_is_identity():
    img = GrayImage(np.full((64, 64), 0.5), circular_fov(64, 64))
    assert not vessel_mask(img).any()
    assert vessel_removal_inpaint(img) is img


def test_vessel_removal_fills_line_with_background():
    img = _line_image()
    mask = vessel_mask(img)
    assert mask[48, 40] and not mask[48, 60]
    out = vessel_removal_inpaint(img)
    filled = out.data[mask]
    # the untouched line flanks are themselves ~0.02 below background
    assert np.abs(filled - 0.5).max() < 0.025
    assert np.abs(img.data[mask] - 0.5).max() > 0.1


def test_vessel_removal_keeps_pixels_outside_mask():
    img = _line_image()
    mask = vessel_mask(img)
    out = vessel_removal_inpaint(img, mask=mask)
    assert np.array_equal(out.data[~mask], img.data[~mask])
    assert np.all(np.isfinite(out.data))


def test_vessel_removal_full_mask_is_degenerate():
    img = _line_image()
    with pytest.raises(DegenerateInputError):
        vessel_removal_inpaint(img, mask=np.ones(img.shape, bool))


def test_blob_next_to_vessel_survives_removal():
    from maensemble.core import Extractor
    from maensemble.extract import run_extractor

    img = _line_image()
    yy, xx = np.mgrid[:96, :96].astype(float)
    data = img.data * (1 - 0.25 * np.exp(-((xx - 49) ** 2 + (yy - 50) ** 2) / (2 * 1.5 ** 2)))
    out = vessel_removal_inpaint(GrayImage(data, img.fov_mask))
    for ex in Extractor:
        pts = run_extractor(ex, out).points
        assert len(pts) and np.hypot(pts[:, 0] - 49, pts[:, 1] - 50).min() < 2, ex


def test_diffusion_inpaint_reproduces_harmonic_fill():
    # a linear ramp is harmonic, so diffusion recovers it inside the hole
    yy, xx = np.mgrid[:40, :40].astype(float)
    ramp = xx / 39.0
    hole = np.zeros_like(ramp, bool)
    hole[15:25, 15:25] = True
    damaged = np.where(hole, 0.0, ramp)
    out = diffusion_inpaint(damaged, hole, tol=1e-7, max_iter=5000)
    assert np.abs(out - ramp).max() < 1e-3


# --- illumination -----------------------------------------------------------------


@given(st.floats(0, 1), st.floats(0, 1), st.sampled_from([3, 5, 9, 15]))
def test_illumination_constant_image_is_exact(v, mu_d, window):
    fov = circular_fov(31, 45)
    img = GrayImage(np.full((31, 45), v), fov)
    out = illumination_equalize(img, IlluminationEqParams(desired_mean=mu_d, window=window))
    assert np.all(out.data[fov] == mu_d)


def test_illumination_uniform_at_target_unchanged():
    img = GrayImage(np.full((20, 20), 0.4))
    out = illumination_equalize(img, IlluminationEqParams(desired_mean=0.4))
    assert np.array_equal(out.data, img.data)


def test_illumination_ramp_local_means_hit_target():
    yy, xx = np.mgrid[:64, :64].astype(float)
    img = GrayImage(0.2 + 0.5 * xx / 63.0)
    w = 9
    out = illumination_equalize(img, IlluminationEqParams(desired_mean=0.5, window=w))
    # sliding-window mean of the output, away from the border
    from scipy.ndimage import uniform_filter

    means = uniform_filter(out.data, w)[w:-w, w:-w]
    assert np.abs(means - 0.5).max() < 1e-9


def test_local_mean_counts_fov_only():
    fov = np.zeros((9, 9), bool)
    fov[:, :5] = True
    img = GrayImage(np.where(fov, 0.6, 0.0), fov)
    assert np.allclose(local_mean(img, 5)[fov], 0.6)


def test_default_window_is_odd_eighth_of_width():
    assert default_window(768) == 97
    assert default_window(160) == 21
    assert default_window(10) == 3


def test_illumination_params_validate():
    with pytest.raises(ConfigError):
        IlluminationEqParams(window=4)
    with pytest.raises(ConfigError):
        illumination_equalize(GrayImage(np.zeros((4, 4))), IlluminationEqParams(desired_mean=2.0))


# --- shared properties ----------------------------------------------------------------


def test_no_preprocessing_identity(small_dataset):
    img = small_dataset[0].image
    assert no_preprocessing(img) is img
    assert no_preprocessing(no_preprocessing(img)) is img
    wk = walter_klein(img)
    assert np.array_equal(walter_klein(no_preprocessing(img)).data, wk.data)


@pytest.mark.parametrize("kind", list(Preprocessing))
def test_operators_preserve_geometry(small_dataset, kind):
    img = small_dataset[1].image
    out = apply_preprocessing(kind, img, PreprocessParams())
    assert out.shape == img.shape
    assert np.array_equal(out.fov_mask, img.fov_mask)
    assert out.data.min() >= out.vmin and out.data.max() <= out.vmax


def test_vessel_params_validate():
    with pytest.raises(ConfigError):
        VesselParams(percentile=100)
    with pytest.raises(ConfigError):
        VesselParams(line_length=2)
