import numpy as np
import pytest
from scipy.spatial import cKDTree

from misar import calib, fileio, imaging
from misar.calib import ScanGrid
from misar.errors import StageError
from misar.pipeline import (ExperimentSpec, HumanoidParams, build_scene, humanoid_spec, make_humanoid,
                            plate_contrast, point_target_spec, run_experiment)
from misar.tracking import read_track_csv
from misar.waveform import ChirpParams


@pytest.fixture(scope="module")
def humanoid():
    return make_humanoid()


def test_humanoid_counts(humanoid):
    n = len(humanoid.body)
    assert 5e3 <= n <= 5e4
    assert len(humanoid.plate) == 17 * 26 == 442


def test_humanoid_sampling(humanoid):
    lam = ChirpParams().wavelength
    assert humanoid.spacing == pytest.approx(lam / 2)
    d, _ = cKDTree(humanoid.body.positions).query(humanoid.body.positions, k=2)
    assert d[:, 1].max() <= lam / 2


def test_plate_reflectivity_and_placement(humanoid):
    body = np.abs(humanoid.body.reflectivity)
    plate = np.abs(humanoid.plate.reflectivity)
    assert plate.min() >= 3 * body.max() * (1 - 1e-12)
    lo, hi = humanoid.plate_box
    np.testing.assert_allclose(hi - lo, (0.102, 0.0, 0.15), atol=0.01)
    # plate stands in front of (smaller y than) the torso surface it covers
    p = humanoid.plate.positions
    assert np.all(p[:, 1] < humanoid.torso_surface_y(p[:, 0], p[:, 2]))


def test_zero_plate_is_body_only():
    hum = make_humanoid(HumanoidParams(plate_size=(0.0, 0.0)))
    assert len(hum.plate) == 0 and hum.plate_box is None
    np.testing.assert_array_equal(hum.scene.positions, hum.body.positions)
    np.testing.assert_array_equal(hum.scene.reflectivity, hum.body.reflectivity)
    # other plate parameters do not matter without a plate
    other = make_humanoid(HumanoidParams(plate_size=(0.0, 0.15), plate_reflectivity=9.0))
    np.testing.assert_array_equal(other.scene.positions, hum.scene.positions)


def test_undersampled_warning():
    with pytest.warns(UserWarning, match="undersampled"):
        make_humanoid(HumanoidParams(spacing=0.02, plate_size=(0.0, 0.0)))


def test_facing_subset(humanoid):
    f = humanoid.facing()
    assert len(humanoid.plate) < len(f) < len(humanoid.scene)


def test_spec_text_round_trip():
    for spec in (point_target_spec(), humanoid_spec(seed=7, grid_dims=(8, 9, 10))):
        text = spec.to_text()
        base = humanoid_spec() if spec.scene == "humanoid" else None
        back = ExperimentSpec.from_text(text, base)
        assert back.to_text() == text
        assert back == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        point_target_spec(scene="car")
    with pytest.raises(ValueError):
        point_target_spec(n_bursts=0)


def test_spec_aperture():
    spec = point_target_spec()
    t0, t1 = spec.aperture_times()
    assert t0 == 0.0 and t1 == pytest.approx(63 * 0.02 + 127 * 40e-6)
    traj = spec.truth_trajectory()
    assert traj.position_at([(t0 + t1) / 2])[0, 0] == pytest.approx(0.0, abs=1e-12)


def _quick(**kw):
    return point_target_spec(n_bursts=4, grid_dims=(8, 8, 6), **kw)


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_experiment(_quick(), out), out


def test_artifacts(quick_run):
    res, out = quick_run
    for name in ("spec.txt", "scan.csv", "calib.txt", "cube.bin", "measurements.csv", "track.csv",
                 "image.bin", "image_uncal.bin", "report.txt", "report.csv", "timing.txt",
                 "slices/slices.txt"):
        assert (out / name).is_file(), name
    rep = dict(res.report)
    assert rep["calib.converged"] == 1
    assert "compare.psl_improvement_db" in rep
    assert rep["theory.bin_spacing"] == pytest.approx(0.03747, abs=1e-5)
    assert res.value("hash.cube") == rep["hash.cube"]


def test_rerun_is_byte_identical(quick_run, tmp_path):
    _, out = quick_run
    run_experiment(_quick(), tmp_path)
    for name in ("report.txt", "report.csv", "cube.bin", "image.bin", "calib.txt", "track.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


def test_stage_isolation(quick_run):
    # re-imaging the cached cube reproduces image.bin
    res, out = quick_run
    spec = _quick()
    cube = fileio.read_cube(out / "cube.bin")
    sol = calib.solution_from_text((out / "calib.txt").read_text())
    img = imaging.backproject_parallel(calib.compensate(cube, sol), spec.geometry(), spec.truth_trajectory(),
                                       spec.grid(), spec.options(), spec.workers, sol)
    assert fileio.image_to_bytes(img) == (out / "image.bin").read_bytes()


def test_tracked_source(tmp_path):
    res = run_experiment(_quick(trajectory_source="tracked", compare=False), tmp_path)
    t, p, v, _ = read_track_csv((tmp_path / "track.csv").read_text())
    assert v is not None and t.size > 2
    assert res.value("track.source") == "tracked"
    assert not (tmp_path / "image_uncal.bin").exists()


def test_stage_failure_is_tagged(tmp_path):
    spec = _quick(scan=ScanGrid(1.0, 0.0, 0.1))       # collinear stage points
    with pytest.raises(StageError) as exc:
        run_experiment(spec, tmp_path)
    assert exc.value.stage == "calibrate"
    assert str(exc.value).startswith("[calibrate] IdentifiabilityError")
    assert exc.value.exit_code == 5


def test_humanoid_scene_build():
    spec = humanoid_spec()
    scene, hum = build_scene(spec)
    lo, hi = spec.grid().bounds()
    assert np.all(scene.positions >= lo - 0.1 - 1e-12) and np.all(scene.positions <= hi + 0.1 + 1e-12)
    assert len(hum.plate) == 442


def test_plate_contrast_oracle(humanoid):
    # an image that is bright exactly on the plate neighborhood
    grid = imaging.VoxelGrid.centered((0.0, 0.0, 0.0), 0.005, (64, 16, 64))
    lo, hi = humanoid.plate_box
    pts = grid.points()
    on = ((pts[:, 0] >= lo[0]) & (pts[:, 0] <= hi[0]) & (pts[:, 2] >= lo[2]) & (pts[:, 2] <= hi[2])
          & (np.abs(pts[:, 1] - lo[1]) <= 0.01))
    vals = np.where(on, 4.0, 1.0).reshape(grid.dims[::-1]).transpose(2, 1, 0)
    out = plate_contrast(imaging.Image3D(vals.astype(complex), grid), humanoid)
    assert out["contrast_db"] == pytest.approx(20 * np.log10(4.0))
    assert out["plate_voxels"] == on.sum()
    with pytest.raises(ValueError):
        plate_contrast(imaging.Image3D(vals.astype(complex), grid),
                       make_humanoid(HumanoidParams(plate_size=(0.0, 0.0))))
