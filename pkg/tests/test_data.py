import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_wd.data import (BadMagicError, CountMismatchError, DataError, Dataset,
                             TruncatedFileError, load_csv, load_idx, make_teacher, parse_minmax,
                             split, synthetic_teacher, write_idx)
from lowrank_wd.linalg import numerical_rank


def write_csv(path, text):
    path.write_text(text)
    return path


def test_csv_identity(tmp_path):
    p = write_csv(tmp_path / "a.csv", "f1,target,f2\n1.5,10,-2\n3,20,0.25\n")
    ds = load_csv(p, "target")
    np.testing.assert_array_equal(ds.X, [[1.5, -2.0], [3.0, 0.25]])
    np.testing.assert_array_equal(ds.y, [10.0, 20.0])
    assert ds.normalization == "none"


def test_csv_zscore(tmp_path, rng):
    data = rng.normal(3.0, 5.0, size=(40, 4))
    lines = ["a,b,c,d,y"] + [",".join(repr(float(v)) for v in row) + ",0" for row in data]
    ds = load_csv(write_csv(tmp_path / "z.csv", "\n".join(lines) + "\n"), "y", "zscore")
    np.testing.assert_allclose(ds.X.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(ds.X.std(axis=0, ddof=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ds.raw_features(), data, rtol=0, atol=1e-10)


def test_csv_zscore_constant_column(tmp_path):
    ds = load_csv(write_csv(tmp_path / "c.csv", "a,y\n4,0\n4,1\n4,2\n"), "y", "zscore")
    np.testing.assert_array_equal(ds.X, np.zeros((3, 1)))


def test_csv_minmax(tmp_path):
    p = write_csv(tmp_path / "m.csv", "px,y\n0,1\n255,2\n100,3\n")
    ds = load_csv(p, "y", "minmax[-1,1]")
    # independent affine recomputation
    expected = np.array([0.0, 255.0, 100.0]) * (2.0 / 255.0) - 1.0
    np.testing.assert_allclose(ds.X[:, 0], expected, rtol=0, atol=1e-15)
    assert ds.X[0, 0] == -1.0 and ds.X[1, 0] == 1.0
    np.testing.assert_allclose(ds.raw_features()[:, 0], [0.0, 255.0, 100.0], atol=1e-10)


def test_parse_minmax():
    assert parse_minmax("minmax") == (-1.0, 1.0)
    assert parse_minmax("minmax[0, 2.5]") == (0.0, 2.5)
    for bad in ("minmax[1,0]", "minmax(0,1)", "minmax[a,b]", "minmax[1]"):
        with pytest.raises(DataError):
            parse_minmax(bad)


@pytest.mark.parametrize("text,needle", [
    ("a,y\n1,2\nx,3\n", ":3: column 1"),
    ("a,y\n1,2\n1,2,3\n", ":3: expected 2 fields"),
    ("a,y\n1,nan\n", ":2: column 2"),
    ("a,b\n1,2\n", "target column"),
    ("", "empty file"),
    ("a,y\n", "no data rows"),
    ("y\n1\n", "no feature columns"),
])
def test_csv_errors(tmp_path, text, needle):
    p = write_csv(tmp_path / "bad.csv", text)
    with pytest.raises(DataError, match=needle):
        load_csv(p, "y")


def test_csv_unknown_normalization(tmp_path):
    with pytest.raises(DataError):
        load_csv(write_csv(tmp_path / "a.csv", "a,y\n1,2\n"), "y", "robust")


def hand_idx(tmp_path):
    """Two 2x3 images assembled byte by byte."""
    img = bytes([0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                 0, 127, 255, 1, 2, 3,
                 255, 254, 0, 10, 20, 30])
    lab = bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 0])
    (tmp_path / "img").write_bytes(img)
    (tmp_path / "lab").write_bytes(lab)
    return tmp_path / "img", tmp_path / "lab", img, lab


def test_idx_hand_fixture(tmp_path):
    ip, lp, img, lab = hand_idx(tmp_path)
    ds = load_idx(ip, lp)
    assert ds.X.shape == (2, 6)
    assert ds.X[0, 0] == -1.0 and ds.X[0, 2] == 1.0
    assert ds.X[0, 1] == pytest.approx(-0.00392156862745098, abs=1e-15)
    np.testing.assert_array_equal(ds.y, [7.0, 0.0])
    assert np.all(np.abs(ds.X) <= 1.0)
    # round trip through the writer reproduces the hand layout bit for bit
    pixels = np.rint(ds.raw_features()).astype(np.uint8).reshape(2, 2, 3)
    write_idx(tmp_path / "img2", tmp_path / "lab2", pixels, ds.y.astype(np.uint8))
    assert (tmp_path / "img2").read_bytes() == img
    assert (tmp_path / "lab2").read_bytes() == lab


def test_idx_errors(tmp_path):
    ip, lp, img, lab = hand_idx(tmp_path)
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">I", 0x804) + img[4:])
    with pytest.raises(BadMagicError):
        load_idx(bad, lp)
    bad.write_bytes(img[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(bad, lp)
    bad.write_bytes(img[:10])
    with pytest.raises(TruncatedFileError):
        load_idx(bad, lp)
    bad.write_bytes(struct.pack(">2I", 0x801, 3) + bytes([1, 2, 3]))
    with pytest.raises(CountMismatchError):
        load_idx(ip, bad)
    assert issubclass(BadMagicError, DataError)


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(DataError):
        Dataset(np.array([[np.inf]]), [1.0])


def test_teacher_rank_and_self_consistency():
    for r in (1, 2, 5):
        ds, teacher = synthetic_teacher(6, 50, r, 0.0, seed=r, return_teacher=True)
        assert numerical_rank(teacher.V) == r
        np.testing.assert_array_equal(teacher.predict(ds.X) - ds.y, 0.0)
    with pytest.raises(ValueError):
        make_teacher(4, 5, 32, np.random.default_rng(0))


def test_teacher_deterministic():
    a = synthetic_teacher(5, 30, 2, 0.1, seed=4)
    b = synthetic_teacher(5, 30, 2, 0.1, seed=4)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()


def test_label_variance_grows_with_noise():
    # var(y) = var(teacher) + noise_std^2; regress over 20 seeds
    sigma = 0.8
    diffs = []
    for seed in range(20):
        clean = synthetic_teacher(4, 4000, 2, 0.0, seed=seed)
        noisy = synthetic_teacher(4, 4000, 2, sigma, seed=seed)
        diffs.append(np.var(noisy.y) - np.var(clean.y))
    assert np.mean(diffs) == pytest.approx(sigma ** 2, rel=0.10)


def _indexed(N):
    X = np.arange(N, dtype=float)[:, None] * np.array([[1.0, -1.0]])
    return Dataset(X, np.arange(N) * 10.0)


def test_split_full_partition():
    ds = _indexed(30)
    tr, te = split(ds, 20, 10, seed=1)
    ids = np.concatenate([tr.X[:, 0], te.X[:, 0]])
    assert sorted(ids) == list(range(30))


def test_split_determinism():
    ds = _indexed(40)
    a, _ = split(ds, 10, 5, seed=3)
    b, _ = split(ds, 10, 5, seed=3)
    c, _ = split(ds, 10, 5, seed=4)
    assert a.X.tobytes() == b.X.tobytes()
    assert a.X.tobytes() != c.X.tobytes()


def test_split_housing_scale():
    ds = _indexed(20640)
    tr, te = split(ds, 1800, 600, seed=0)
    assert len(tr) == 1800 and len(te) == 600
    assert not set(tr.X[:, 0]) & set(te.X[:, 0])


def test_split_errors():
    with pytest.raises(DataError):
        split(_indexed(10), 8, 3)
    with pytest.raises(DataError):
        split(_indexed(10), 10, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.data())
def test_split_preserves_pairing(N, data):
    n_train = data.draw(st.integers(1, N - 1))
    n_test = data.draw(st.integers(1, N - n_train))
    seed = data.draw(st.integers(0, 2**32 - 1))
    ds = _indexed(N)
    tr, te = split(ds, n_train, n_test, seed)
    for part in (tr, te):
        np.testing.assert_array_equal(part.y, part.X[:, 0] * 10.0)
        np.testing.assert_array_equal(part.X[:, 1], -part.X[:, 0])
    assert not set(tr.X[:, 0]) & set(te.X[:, 0])
