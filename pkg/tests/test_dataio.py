import warnings

import numpy as np
import pytest

from ultragray.dataio import (BUILTIN_PHANTOMS, Inclusion, Layer, Medium, PhantomSimulator, PhantomSpec,
                              SweepDataset, builtin_phantom, load_dataset, load_phantom_spec, phantom_datasets,
                              phantom_spec_to_toml, read_float_image, read_pgm, save_dataset, sweep_dataset,
                              tilt_pose, validate_rigid, write_float_image, write_pgm)
from ultragray.errors import ConfigurationError, CorruptFileError, UnsupportedFormatError, ValidationError
from ultragray.probe import Pose, ProbeGeometry, rotation_about


def test_pgm_roundtrip_and_layout(tmp_path):
    img = np.random.default_rng(0).random((5, 7))
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n7 5\n255\n") and len(raw) == 11 + 35
    back = read_pgm(tmp_path / "a.pgm")
    np.testing.assert_array_equal(back, np.rint(img * 255) / 255)
    # quantized images survive exactly
    write_pgm(tmp_path / "b.pgm", back)
    np.testing.assert_array_equal(read_pgm(tmp_path / "b.pgm"), back)


def test_pgm_header_comments_and_errors(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])
    (tmp_path / "d.pgm").write_bytes(b"P2\n2 1\n255\n0 255")
    with pytest.raises(CorruptFileError):
        read_pgm(tmp_path / "d.pgm")
    (tmp_path / "e.pgm").write_bytes(b"P5\n2 1\n65535\n\x00\x00\x00\x00")
    with pytest.raises(UnsupportedFormatError):
        read_pgm(tmp_path / "e.pgm")
    (tmp_path / "f.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(CorruptFileError):
        read_pgm(tmp_path / "f.pgm")


def test_float_image_roundtrip(tmp_path):
    img = np.random.default_rng(1).normal(size=(4, 6))
    write_float_image(tmp_path / "x.raw", img)
    np.testing.assert_array_equal(read_float_image(tmp_path / "x.raw"), img.astype(np.float32))
    assert (tmp_path / "x.raw").stat().st_size == 4 * 24


def _dataset(n=4):
    g = ProbeGeometry(4.0, 4.0, 8, 6)
    rng = np.random.default_rng(2)
    frames = [(np.rint(rng.random(g.shape) * 255) / 255, tilt_pose(5.0 * i, 0.3 * i)) for i in range(n)]
    return SweepDataset(frames, g, [5.0 * i for i in range(n)], {"frame_spacing": "0.3"})


def test_dataset_roundtrip(tmp_path):
    ds = _dataset()
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.geometry == ds.geometry and back.tilts == ds.tilts and back.meta == ds.meta
    for (a, p), (b, q) in zip(ds.frames, back.frames):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(p.matrix(), q.matrix())
    assert len(back.select_tilts([5.0, 15.0])) == 2


def test_dataset_validation(tmp_path):
    save_dataset(_dataset(2), tmp_path)
    poses = (tmp_path / "poses.txt").read_text().splitlines()
    (tmp_path / "poses.txt").write_text(poses[0] + "\n")
    with pytest.raises(ValidationError):
        load_dataset(tmp_path)
    flipped = " ".join(["-1", "0", "0", "0", "0", "1", "0", "0", "0", "0", "1", "0", "0", "0", "0", "1"])
    (tmp_path / "poses.txt").write_text(poses[0] + "\n" + flipped + "\n")
    with pytest.raises(ValidationError, match="reflection"):
        load_dataset(tmp_path)
    text = (tmp_path / "manifest.txt").read_text()
    (tmp_path / "manifest.txt").write_text(text.replace("imaging_depth = 4.0", "imaging_depth = -1.0"))
    with pytest.raises(ConfigurationError):
        load_dataset(tmp_path)
    (tmp_path / "manifest.txt").write_text(text.replace("version = 1", "version = 9"))
    with pytest.raises(UnsupportedFormatError):
        load_dataset(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")


def test_validate_rigid_repairs_drift():
    M = np.eye(4)
    M[:3, :3] = rotation_about([1, 2, 3], 0.4)
    M[0, 0] += 5e-7
    with pytest.warns(UserWarning, match="re-orthogonalized"):
        pose = validate_rigid(M)
    np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-12)
    M[0, 0] += 1e-4
    with pytest.raises(ValidationError):
        validate_rigid(M)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        validate_rigid(np.eye(4))


def test_tilt_pose_axes():
    p = tilt_pose(90.0, 1.0, axis="lateral")
    np.testing.assert_allclose(p.axial_axis, [0, -1, 0], atol=1e-12)
    np.testing.assert_allclose(p.translation, [0, 1, 0])
    q = tilt_pose(90.0, 0.0, axis="elevational")
    np.testing.assert_allclose(q.axial_axis, [1, 0, 0], atol=1e-12)
    with pytest.raises(ConfigurationError):
        tilt_pose(0, 0, axis="diagonal")


def _tiny_spec(**kw):
    base = dict(box=[[-4, -4, -1], [4, 4, 6]], layers=[Layer(-1.0, 0.1, 0.1), Layer(3.0, 0.3, 0.0, 1.0, 0.2)],
                inclusions=[Inclusion((0, 0, 1.5), (0.5, 5.0, 0.5), 0.5, 2.0)], speckle_density=2.0, seed=4)
    base.update(kw)
    return PhantomSpec(**base)


def test_medium_lookup():
    m = Medium(_tiny_spec())
    props = m.properties(np.array([[2.0, 0, 0.0], [2.0, 0, 4.0], [0, 0, 1.5], [0, 0, -3.0], [9, 0, 1]]))
    np.testing.assert_allclose(props, [[0.1, 0.1, 1], [0.3, 0.0, 1], [0.5, 2.0, 1], [0, 0, 0], [0, 0, 0]])


def test_transmission_is_beer_lambert():
    # uniform attenuation 0.1/mm below z = -1, probe face at z = 0: T(z) = exp(-0.1 z)
    spec = _tiny_spec(layers=[Layer(-1.0, 0.1, 0.1)], inclusions=[])
    g = ProbeGeometry(2.0, 4.0, 2, 8)
    T = PhantomSimulator(spec).transmission(g, Pose.identity())
    np.testing.assert_allclose(T[:, 0], np.exp(-0.1 * g.depths()), rtol=1e-12)


def test_inclusion_casts_shadow():
    spec = _tiny_spec()
    sim = PhantomSimulator(spec)
    g = ProbeGeometry(6.0, 5.0, 24, 20)
    T = sim.transmission(g, Pose.identity())
    centre, side = 12, 0
    assert T[-1, centre] < 0.2 * T[-1, side]
    img = sim.frame(g, Pose.identity())
    assert img.shape == g.shape and img.min() >= 0 and img.max() <= 1


def test_phantom_is_deterministic():
    g = ProbeGeometry(4.0, 4.0, 8, 8)
    a = sweep_dataset(_tiny_spec(), g, [0.0, 3.0], [0.0, 0.5])
    b = sweep_dataset(_tiny_spec(), g, [0.0, 3.0], [0.0, 0.5])
    for (x, _), (y, _) in zip(a.frames, b.frames):
        np.testing.assert_array_equal(x, y)
    assert a.tilts == [0.0, 0.0, 3.0, 3.0]
    c = sweep_dataset(_tiny_spec(seed=5), g, [0.0], [0.0])
    assert not np.array_equal(c.frames[0][0], a.frames[0][0])


def test_spec_toml_roundtrip(tmp_path):
    for name in BUILTIN_PHANTOMS:
        spec = builtin_phantom(name)
        path = tmp_path / f"{name}.toml"
        path.write_text(phantom_spec_to_toml(spec))
        back = load_phantom_spec(path)
        np.testing.assert_array_equal(back.box, spec.box)
        assert back.layers == spec.layers and back.sweep == spec.sweep
        assert [i.__dict__ for i in back.inclusions] == [
            {**i.__dict__, "center": list(i.center), "axes": list(i.axes)} for i in spec.inclusions]
    with pytest.raises(ConfigurationError):
        builtin_phantom("nope")


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        _tiny_spec(box=[[0, 0, 0], [1, 0, 1]])
    with pytest.raises(ConfigurationError):
        _tiny_spec(layers=[])
    with pytest.raises(ConfigurationError):
        _tiny_spec(inclusions=[Inclusion((20, 0, 0), (1, 1, 1), 0.1)])
    with pytest.raises(ConfigurationError):
        phantom_datasets(_tiny_spec(sweep={"bogus": 1}))


def test_phantom_datasets_plan():
    spec = _tiny_spec(sweep={"tilts": [0.0, 3.0], "eval_tilts": [1.5], "frames": 3, "n_scanlines": 8,
                             "n_depth_samples": 8})
    train, ev = phantom_datasets(spec)
    assert len(train) == 6 and len(ev) == 3 and ev.tilts == [1.5] * 3
    assert train.geometry.shape == (8, 8)
    assert phantom_datasets(spec, eval_tilts=[])[1] is None


def test_three_frame_fixture(tmp_path):
    g = ProbeGeometry(3.0, 2.0, 5, 4)
    rng = np.random.default_rng(0)
    frames = [(rng.random(g.shape), tilt_pose(0.0, y)) for y in (-0.5, 0.0, 0.5)]
    save_dataset(SweepDataset(frames, g), tmp_path)
    ds = load_dataset(tmp_path)
    assert len(ds) == 3 and ds.geometry.shape == (4, 5)
    for (a, p), (b, q) in zip(frames, ds.frames):
        np.testing.assert_allclose(b, np.round(a * 255) / 255, atol=1e-12)
        np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-12)


def test_homogeneous_medium_is_laterally_constant():
    spec = _tiny_spec(layers=[Layer(-1.0, 0.4, 0.05)], inclusions=[], speckle_density=0.0)
    g = ProbeGeometry(4.0, 4.0, 12, 16)
    img = PhantomSimulator(spec).frame(g, Pose.identity())
    np.testing.assert_allclose(img, img[:, :1] * np.ones((1, 12)), atol=1e-12)
    assert np.all(np.diff(img[:, 0]) <= 1e-12) and img[0, 0] > img[-1, 0]


def test_shadow_fixture_darkens_below_the_rod():
    spec = builtin_phantom("shadow")
    train_set, held_out = phantom_datasets(spec)
    sim = PhantomSimulator(spec)
    for img, pose in list(train_set.frames)[::3] + list(held_out.frames):
        T = sim.transmission(train_set.geometry, pose)
        deep = np.arange(T.shape[0]) >= T.shape[0] // 2
        shadow = (T < 0.1) & deep[:, None]
        cols = np.flatnonzero(shadow.any(axis=0))
        far = np.array([np.min(np.abs(c - cols)) >= 6 for c in range(T.shape[1])])
        rows = shadow.any(axis=1)
        assert img[shadow].mean() < 0.5 * img[rows][:, far].mean()


@pytest.mark.parametrize("name", sorted(BUILTIN_PHANTOMS))
def test_shipped_phantom_files_match_builtins(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "phantoms" / f"{name}.toml"
    assert phantom_spec_to_toml(load_phantom_spec(path)) == phantom_spec_to_toml(builtin_phantom(name))
