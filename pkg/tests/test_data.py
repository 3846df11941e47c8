import numpy as np
import pytest

from heatsmoothing import data


def test_blobs_zero_spread_sits_on_centers():
    ds = data.make_blobs(5, n_classes=3, dim=2, spread=0.0)
    np.testing.assert_array_equal(ds.inputs, data.blob_centers(3, 2)[ds.labels])


def test_blobs_deterministic_and_counts():
    a, b = data.make_blobs(20, 4, 3, 0.3, seed=5), data.make_blobs(20, 4, 3, 0.3, seed=5)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(np.bincount(a.labels), [20, 20, 20, 20])


def test_blobs_centers_unit_scale():
    c2 = data.blob_centers(3, 2)
    np.testing.assert_allclose(np.linalg.norm(c2, axis=1), 1.0)
    np.testing.assert_array_equal(data.blob_centers(3, 1)[:, 0], [-1.0, 0.0, 1.0])


def test_blobs_dim_limit():
    with pytest.raises(ValueError):
        data.make_blobs(2, dim=65)


def test_train_test_disjoint():
    tr, te = data.make_blobs(50, seed=1), data.make_blobs(50, seed=1, split="test")
    assert not set(map(tuple, tr.inputs)) & set(map(tuple, te.inputs))


def test_step1d_injected_point_and_labels():
    ds = data.make_step1d(40, boundary=0.0, seed=3, outlier=-0.5)
    assert ds.inputs[-1, 0] == -0.5 and ds.labels[-1] == 1
    x = ds.inputs[:-1, 0]
    np.testing.assert_array_equal(ds.labels[:-1], (x >= 0).astype(int))
    assert np.all(np.abs(x + 0.5) > 0.15)
    assert len(ds) == 40


def test_step1d_minimum_size():
    with pytest.raises(ValueError):
        data.make_step1d(9)


def test_round_trip_exact(tmp_path, rng):
    ds = data.Dataset(rng.standard_normal((25, 3)) * 1e3, rng.integers(0, 4, 25), 4)
    data.save_dataset(ds, tmp_path / "d.csv")
    back = data.load_dataset(tmp_path / "d.csv", n_classes=4)
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_empty_file_rejected(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValueError, match="empty"):
        data.load_dataset(tmp_path / "e.csv")


def test_out_of_range_label_names_row(tmp_path):
    (tmp_path / "b.csv").write_text("x_0,label\n0.5,0\n0.25,7\n")
    with pytest.raises(ValueError, match="line 3"):
        data.load_dataset(tmp_path / "b.csv", n_classes=2)


def test_malformed_row_names_line(tmp_path):
    (tmp_path / "m.csv").write_text("x_0,x_1,label\n1,2,0\n1,oops,1\n")
    with pytest.raises(ValueError, match="line 3"):
        data.load_dataset(tmp_path / "m.csv")
    (tmp_path / "n.csv").write_text("x_0,x_1,label\n1,2\n")
    with pytest.raises(ValueError, match="line 2"):
        data.load_dataset(tmp_path / "n.csv")
