import numpy as np
import pytest

from misar.analysis import (PSL_FLOOR_DB, compare_before_after, half_power_width, psf_metrics,
                            region_mean, report_csv, report_text, theoretical_widths)
from misar.errors import NumericalError
from misar.imaging import Image3D, VoxelGrid


def _image(values, spacing=0.005, center=(0.0, 0.0, 0.0)):
    v = np.asarray(values, complex)
    return Image3D(v, VoxelGrid.centered(center, spacing, v.shape))


def _sinc_cube(shape=(65, 1, 1), oversample=4, shift=(0.0, 0.0, 0.0)):
    axes = [np.sinc((np.arange(n) - (n - 1) / 2 - s) / oversample) if n > 1 else np.ones(1)
            for n, s in zip(shape, shift)]
    return np.einsum("i,j,k->ijk", *axes)


def test_sinc_psl():
    rep = psf_metrics(_image(_sinc_cube()))
    assert rep.psl_db == pytest.approx(-13.26, abs=0.3)
    # -3 dB width of sinc(u/4) is 0.886 * 4 samples
    assert rep.widths[0] == pytest.approx(0.886 * 4 * 0.005, rel=0.03)
    assert np.isnan(rep.widths[1]) and np.isnan(rep.widths[2])


def test_sinc_3d():
    rep = psf_metrics(_image(_sinc_cube((33, 33, 33))))
    assert rep.psl_db == pytest.approx(-13.26, abs=0.3)
    np.testing.assert_allclose(rep.peak_position, 0.0, atol=1e-12)


def test_delta_image():
    v = np.zeros((9, 9, 9))
    v[4, 4, 4] = 1.0
    rep = psf_metrics(_image(v))
    np.testing.assert_allclose(rep.widths, 0.005, rtol=1e-12)
    assert rep.psl_db == PSL_FLOOR_DB
    assert rep.peak_index == (4, 4, 4)
    assert rep.peak_db == pytest.approx(0.0)


def test_half_power_width_exact():
    cut = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    assert half_power_width(cut, 2, 1.0) == pytest.approx(1.0)
    assert np.isnan(half_power_width(np.ones(1), 0, 1.0))


def test_subvoxel_peak():
    rep = psf_metrics(_image(_sinc_cube((41, 1, 1), shift=(0.3, 0, 0))))
    assert rep.peak_position[0] == pytest.approx(0.3 * 0.005, abs=0.1 * 0.005)


@pytest.mark.parametrize("scale", [1e-6, 0.37, 1.0, 4.0e5])
def test_scale_invariance(scale):
    v = _sinc_cube((33, 17, 9), shift=(0.2, -0.1, 0.3)) * np.exp(0.3j)
    a = psf_metrics(_image(v))
    b = psf_metrics(_image(scale * v))
    np.testing.assert_allclose(b.widths, a.widths, rtol=1e-9)
    assert b.psl_db == pytest.approx(a.psl_db, abs=1e-9)
    np.testing.assert_allclose(b.peak_position, a.peak_position, atol=1e-12)


def test_mirror_symmetry():
    v = _sinc_cube((33, 17, 9), shift=(0.2, -0.1, 0.3))
    a = psf_metrics(_image(v))
    b = psf_metrics(_image(v[::-1, :, ::-1]))
    assert b.peak_position[0] == pytest.approx(-a.peak_position[0], abs=1e-15)
    assert b.peak_position[1] == pytest.approx(a.peak_position[1], abs=1e-15)
    assert b.peak_position[2] == pytest.approx(-a.peak_position[2], abs=1e-15)
    np.testing.assert_allclose(b.widths, a.widths, rtol=1e-12)


def test_flat_and_ambiguous_raise():
    with pytest.raises(NumericalError):
        psf_metrics(_image(np.ones((4, 4, 4))))
    with pytest.raises(NumericalError):
        psf_metrics(_image(np.zeros((4, 4, 4))))
    v = np.zeros((6, 1, 1))
    v[1] = v[4] = 1.0
    with pytest.raises(NumericalError):
        psf_metrics(_image(v))


def test_search_region():
    v = _sinc_cube((41, 1, 1))
    v[2, 0, 0] = 5.0
    img = _image(v)
    assert psf_metrics(img).peak_index == (2, 0, 0)
    rep = psf_metrics(img, ((-0.05, -1, -1), (0.05, 1, 1)))
    assert rep.peak_index == (20, 0, 0)
    with pytest.raises(ValueError):
        psf_metrics(img, ((1.0, 1.0, 1.0), (2.0, 2.0, 2.0)))


def test_compare_identical():
    img = _image(_sinc_cube((33, 9, 9)))
    cmp = compare_before_after(img, img)
    assert cmp.psl_improvement_db == 0
    np.testing.assert_array_equal(cmp.width_change, 0)
    assert cmp.peak_displacement == 0
    keys = dict(cmp.items())
    assert keys["compare.psl_improvement_db"] == 0


def test_compare_grid_mismatch():
    a = _image(_sinc_cube((33, 9, 9)))
    b = _image(_sinc_cube((33, 9, 9)), spacing=0.004)
    with pytest.raises(ValueError):
        compare_before_after(a, b)


def test_theoretical_widths(params, geom):
    th = theoretical_widths(params, geom, 63 * 0.02 * 0.55)
    assert th["bin_spacing"] == pytest.approx(0.03747, abs=1e-5)
    assert th["range"] == pytest.approx(0.0332, abs=1e-4)
    assert th["vertical"] == pytest.approx(0.0167, abs=1e-4)
    assert th["horizontal"] == pytest.approx(0.0119, abs=2e-4)
    assert "horizontal" not in theoretical_widths(params, geom, 0.0)


def test_region_mean():
    v = np.zeros((4, 4, 4))
    v[0] = 2.0
    img = _image(v, spacing=1.0)
    lo, hi = img.grid.bounds()
    assert region_mean(img, lo, hi) == pytest.approx(0.5)
    assert region_mean(img, lo, (lo[0], hi[1], hi[2])) == pytest.approx(2.0)


def test_report_formats():
    items = [("a.x", 0.123456789), ("a.n", 3), ("a.s", "text")]
    assert report_text(items) == "a.x: 0.123457\na.n: 3\na.s: text\n"
    assert report_csv(items) == "key,value\na.x,0.123456789\na.n,3\na.s,text\n"
