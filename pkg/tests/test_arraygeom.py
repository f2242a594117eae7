from types import SimpleNamespace

import numpy as np
import pytest

from misar.arraygeom import (N_ANTENNAS, ArrayGeometry, LayoutMode, build_default_geometry,
                             channel_indices, geometry_from_config, geometry_to_config,
                             perturb_geometry, validate_geometry, virtual_channels)
from misar.config import parse_config
from misar.errors import ConfigError, GeometryError
from misar.simulator import ChannelErrorModel


def test_default_counts(geom):
    assert geom.tx_positions.shape == (8, 3)
    assert geom.rx_positions.shape == (16, 3)
    assert len(virtual_channels(geom)) == 128


def test_planar_virtual_centers_uniform():
    g = build_default_geometry(layout_mode="PLANAR")
    z = np.sort([vc.effective_center[2] for vc in virtual_channels(g)])
    gaps = np.diff(z)
    assert np.all(gaps > 0)
    np.testing.assert_allclose(gaps, 0.5 / 128, rtol=0, atol=1e-15)
    assert gaps[0] * 1e3 == pytest.approx(3.90625)


def test_sumset_covers_grid():
    ti, ri = channel_indices()
    assert sorted(16 * ti + ri) == list(range(128))


def test_arc_radius_exact(geom):
    r = np.linalg.norm(geom.antenna_positions, axis=1)
    np.testing.assert_allclose(r, 1.5, rtol=0, atol=1e-12)
    validate_geometry(geom)


def test_slot_order(geom):
    vcs = virtual_channels(geom)
    assert (vcs[0].tx_index, vcs[0].rx_index) == (0, 0)
    assert (vcs[127].tx_index, vcs[127].rx_index) == (7, 15)
    assert all(vc.sequence_slot == k for k, vc in enumerate(vcs))


def test_midpoint_law(geom):
    for vc in virtual_channels(geom):
        np.testing.assert_array_equal(
            vc.effective_center, (geom.tx_positions[vc.tx_index] + geom.rx_positions[vc.rx_index]) / 2)


def test_collocated_center():
    p = np.array([0.1, -1.2, 0.3])
    g = ArrayGeometry(np.tile(p, (8, 1)), np.tile(p, (16, 1)), layout_mode="PLANAR")
    for vc in virtual_channels(g):
        np.testing.assert_array_equal(vc.effective_center, p)


def test_zero_perturbation_identity(geom):
    g = perturb_geometry(geom, ChannelErrorModel.zero())
    assert g.fingerprint == geom.fingerprint
    np.testing.assert_array_equal(g.tx_positions, geom.tx_positions)


def test_single_antenna_shift(geom):
    off = np.zeros((N_ANTENNAS, 3))
    off[10, 2] = 1e-3
    g = perturb_geometry(geom, ChannelErrorModel(offsets=off))
    d = g.antenna_positions - geom.antenna_positions
    changed = np.flatnonzero(np.any(d != 0, axis=1))
    assert changed.tolist() == [10]
    assert d[10, 2] == pytest.approx(1e-3, abs=1e-15)
    assert g.fingerprint != geom.fingerprint


def test_random_offsets_violate_arc(geom):
    rng = np.random.default_rng(0)
    g = perturb_geometry(geom, ChannelErrorModel(offsets=1e-3 * rng.standard_normal((N_ANTENNAS, 3))))
    with pytest.raises(GeometryError):
        validate_geometry(g)


def test_bad_inputs(geom):
    with pytest.raises(GeometryError):
        ArrayGeometry(np.zeros((7, 3)), np.zeros((16, 3)))
    with pytest.raises(ConfigError):
        build_default_geometry(layout_mode="SPIRAL")
    with pytest.raises(ConfigError):
        build_default_geometry(arc_radius=-1.0)
    with pytest.raises(GeometryError):
        perturb_geometry(geom, SimpleNamespace(offsets=np.ones((23, 3))))


def test_config_round_trip(geom):
    text = geometry_to_config(geom)
    g = geometry_from_config(parse_config(text))
    assert g == geom
    assert g.layout_mode is LayoutMode.ARC
