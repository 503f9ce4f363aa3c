import struct

import numpy as np
import pytest

from bitsnn.errors import DataError, FormatError, InvalidArgument
from bitsnn.training.config import build_config, load_config
from bitsnn.training.data import load_dataset, read_idx, write_idx


def _idx_pair(tmp_path, imgs, labels, stem="train"):
    ip = tmp_path / f"{stem}-images-idx3-ubyte"
    write_idx(ip, imgs)
    write_idx(tmp_path / f"{stem}-labels-idx1-ubyte", labels)
    return ip


def test_idx_roundtrip(tmp_path, rng):
    for arr in (rng.integers(0, 256, (7, 3, 4), dtype=np.uint8), rng.normal(size=(5, 2)).astype(np.float32)):
        p = tmp_path / "a.idx"
        write_idx(p, arr)
        back = read_idx(p)
        assert back.dtype == arr.dtype
        np.testing.assert_array_equal(back, arr)


def test_idx_header_bytes(tmp_path):
    p = tmp_path / "l.idx"
    write_idx(p, np.arange(100, dtype=np.uint8) % 10)
    raw = p.read_bytes()
    assert raw[:8] == bytes.fromhex("00000801") + struct.pack(">I", 100)
    p = tmp_path / "i.idx"
    write_idx(p, np.zeros((100, 28, 28), dtype=np.uint8))
    assert p.read_bytes()[:4] == bytes.fromhex("00000803")


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(bytes.fromhex("12340801") + b"\0" * 8)
    with pytest.raises(FormatError, match="magic") as e:
        read_idx(p)
    assert e.value.offset == 0


def test_truncated_payload_reports_offset(tmp_path):
    p = tmp_path / "t.idx"
    write_idx(p, np.zeros((10, 4), dtype=np.uint8))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError, match=r"byte offset 47") as e:
        read_idx(p)
    assert e.value.offset == 4 + 8 + 35


def test_idx_dataset_scaled_and_ordered(tmp_path):
    imgs = np.array([[[0, 255], [51, 102]], [[255, 0], [0, 0]]], dtype=np.uint8)
    ds = load_dataset(_idx_pair(tmp_path, imgs, np.array([3, 1], dtype=np.uint8)))
    assert ds.x.shape == (2, 1, 2, 2)
    np.testing.assert_allclose(ds.x[0, 0], [[0, 1], [0.2, 0.4]])
    assert ds.y.tolist() == [3, 1]


def test_label_out_of_range(tmp_path):
    ip = _idx_pair(tmp_path, np.zeros((2, 2, 2), np.uint8), np.array([1, 12], np.uint8))
    with pytest.raises(DataError, match="label 12"):
        load_dataset(ip)


def test_label_count_mismatch(tmp_path):
    ip = _idx_pair(tmp_path, np.zeros((3, 2, 2), np.uint8), np.array([1, 2], np.uint8))
    with pytest.raises(DataError, match="2 labels for 3 images"):
        load_dataset(ip)


def test_labels_path_needs_images_in_name(tmp_path):
    p = tmp_path / "data.idx"
    write_idx(p, np.zeros((1, 2, 2), np.uint8))
    with pytest.raises(DataError, match="labels_path"):
        load_dataset(p)
    write_idx(tmp_path / "y.idx", np.array([4], np.uint8))
    assert load_dataset(p, labels_path=tmp_path / "y.idx").y.tolist() == [4]


def test_csv_label_last(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,c,label\n0,128,255,2\n255,0,0,0\n")
    ds = load_dataset(p, "csv", num_classes=3)
    assert ds.y.tolist() == [2, 0]
    np.testing.assert_allclose(ds.x[0], [0, 128 / 255, 1])


def test_csv_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,label\n0.5,1.5\n")
    with pytest.raises(DataError, match="non-integer"):
        load_dataset(p, "csv")
    p.write_text("a,label\nx,1\n")
    with pytest.raises(FormatError):
        load_dataset(p, "csv")
    p.write_text("a,label\n0.5,3\n")
    with pytest.raises(DataError, match="outside"):
        load_dataset(p, "csv", num_classes=3)


def test_reshape_mismatch(digits):
    with pytest.raises(DataError):
        digits[0].reshaped((1, 9, 9))


def test_digits_set(digits):
    train, test = digits
    assert len(train) + len(test) == 1797
    assert train.x.shape[1:] == (1, 8, 8)
    assert 0 <= train.x.min() and train.x.max() <= 1
    assert set(train.y.tolist()) == set(range(10))


def test_config_roundtrip(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[train]\nepochs = 3\nseed = 7\n[bit_allocation]\nB_w_tar = 3.0\ninit_T = 2\n'
                 '[step_renewal]\nmode = "off"\n')
    spec, cfg = load_config(p)
    assert cfg.epochs == 3 and cfg.seed == 7 and cfg.renewal == "off"
    assert cfg.targets.B_w_tar == 3.0 and spec.init_bits[2] == 2


@pytest.mark.parametrize("doc", [{"train": {"epochs": 0}}, {"train": {"nope": 1}}, {"bogus": {}},
                                 {"step_renewal": {"mode": "sideways"}}])
def test_config_rejects(doc):
    with pytest.raises(InvalidArgument):
        build_config(doc)


def test_shipped_config_loads():
    spec, cfg = load_config("configs/digits.toml")
    assert spec.input_shape == (1, 8, 8) and cfg.renewal == "act-only"


@pytest.mark.parametrize("doc", [{"train": {"momentum": "fast"}}, {"train": {"epochs": 2.5}},
                                 {"bit_allocation": {"learn_bits": 1}}, {"model": {"tau": "2"}}])
def test_config_type_checked(doc):
    with pytest.raises(InvalidArgument, match="expected"):
        build_config(doc)
