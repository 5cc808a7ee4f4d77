import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchnet.aggregation import init_params
from patchnet.boxes import BBox
from patchnet.correlation import CorrelationConfig
from patchnet.fileio import (ConfigError, FormatError, list_frames, load_weights, parse_config,
                             read_groundtruth, read_ppm, save_weights, schema_of, write_csv,
                             write_ppm, write_sequence)
from patchnet.training import TrainConfig


# --- PPM ------------------------------------------------------------------------

@given(h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_ppm_round_trip(tmp_path_factory, h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w, 3)).astype(np.uint8)
    path = tmp_path_factory.mktemp("ppm") / "x.ppm"
    write_ppm(path, img)
    np.testing.assert_array_equal(read_ppm(path), img)


def test_ppm_header_bytes(tmp_path):
    write_ppm(tmp_path / "a.ppm", np.zeros((2, 3, 3), np.uint8))
    assert (tmp_path / "a.ppm").read_bytes() == b"P6\n3 2\n255\n" + bytes(18)


def test_ppm_reads_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    np.testing.assert_array_equal(read_ppm(tmp_path / "c.ppm"), [[[1, 2, 3], [4, 5, 6]]])


@pytest.mark.parametrize("data, msg", [
    (b"P5\n1 1\n255\n\x00", "binary PPM"),
    (b"P6\n1 1\n65535\n" + bytes(6), "8-bit"),
    (b"P6\n2 2\n255\n" + bytes(5), "truncated"),
])
def test_ppm_rejects(tmp_path, data, msg):
    (tmp_path / "bad.ppm").write_bytes(data)
    with pytest.raises(FormatError, match=msg):
        read_ppm(tmp_path / "bad.ppm")


def test_ppm_writer_rejects_float(tmp_path):
    with pytest.raises(FormatError):
        write_ppm(tmp_path / "f.ppm", np.zeros((2, 2, 3)))


# --- weights ----------------------------------------------------------------------

def test_weights_round_trip_bit_exact(tmp_path, rng):
    p = init_params(CorrelationConfig(), seed=4)
    for st_ in p.stages:
        st_.pool_bias = rng.normal(size=(4, 4))
    save_weights(tmp_path / "w.bin", p)
    q = load_weights(tmp_path / "w.bin")
    assert q.config == p.config and q.loss_alpha == p.loss_alpha
    np.testing.assert_array_equal(q.coeffs.weights, p.coeffs.weights)
    for a, b in zip(p.stages, q.stages):
        for name in ("score_conv", "offset_conv", "pool_bias", "score_mask", "offset_mask"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    save_weights(tmp_path / "w2.bin", q)
    assert (tmp_path / "w.bin").read_bytes() == (tmp_path / "w2.bin").read_bytes()


def test_weights_layout(tmp_path):
    cfg = CorrelationConfig(N=4, K=4, template_size=16, search_size=30, corr_stride=2)
    save_weights(tmp_path / "w.bin", init_params(cfg))
    data = (tmp_path / "w.bin").read_bytes()
    assert data[:6] == b"PNETW1"
    assert struct.unpack_from("<7i", data, 6) == (4, 4, 16, 30, 2, 3, 2)
    assert struct.unpack_from("<I", data, 34)[0] == 16          # 4x4 coefficient map
    # trailing field is loss_alpha: one value
    assert struct.unpack_from("<I", data, len(data) - 12)[0] == 1
    assert struct.unpack_from("<d", data, len(data) - 8)[0] == 0.05


def test_weights_count_mismatch(tmp_path):
    cfg = CorrelationConfig(N=4, K=4, template_size=16, search_size=30, corr_stride=2)
    save_weights(tmp_path / "w.bin", init_params(cfg))
    data = bytearray((tmp_path / "w.bin").read_bytes())
    struct.pack_into("<I", data, 34, 15)
    (tmp_path / "bad.bin").write_bytes(bytes(data))
    with pytest.raises(FormatError, match="expected 16"):
        load_weights(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(bytes(data[:100]))
    with pytest.raises(FormatError):
        load_weights(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXXXX" + bytes(data[6:]))
    with pytest.raises(FormatError, match="magic"):
        load_weights(tmp_path / "magic.bin")


# --- config -------------------------------------------------------------------------

SCHEMA = schema_of(CorrelationConfig, TrainConfig)


def test_config_parse():
    text = "# training run\nlr = 0.05\nsteps=10   # short\n\ntrain_fourier = no\nsearch_size = 156\n"
    assert parse_config(text, SCHEMA) == {"lr": 0.05, "steps": 10, "train_fourier": False,
                                          "search_size": 156}


@pytest.mark.parametrize("text, msg", [
    ("lr = 0.1\nsteps = ten\n", "line 2: steps expects int"),
    ("\n\nwhat\n", "line 3: expected key=value"),
    ("momentum = 0.9\nbogus = 1\n", "line 2: unknown key 'bogus'"),
    ("use_bbox = maybe\n", "line 1: use_bbox expects bool"),
])
def test_config_errors_are_line_numbered(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text, SCHEMA)


# --- sequences and CSV -------------------------------------------------------------

def test_sequence_round_trip(tmp_path):
    frames = [np.full((8, 8, 3), i, np.uint8) for i in range(3)]
    gt = {0: [BBox(1, 1, 4, 4), BBox(2, 2, 6, 7)], 1: [BBox(1, 1, 5, 4), BBox(2, 2, 6, 7)],
          2: [BBox(1.5, 1, 5, 4), BBox(2, 2, 6, 7.25)]}
    write_sequence(tmp_path, frames, gt)
    assert [p.name for p in list_frames(tmp_path)] == [f"frame_{i:06d}.ppm" for i in range(3)]
    assert read_groundtruth(tmp_path / "groundtruth.txt") == gt


def test_groundtruth_single_object_and_padding(tmp_path):
    (tmp_path / "g.txt").write_text("0,1,1,3,3\n0,2,2,4,4\n")
    gt = read_groundtruth(tmp_path / "g.txt", n_frames=4)
    assert gt[1] == [BBox(2, 2, 4, 4)] and gt[3] == []


def test_groundtruth_bad_line(tmp_path):
    (tmp_path / "g.txt").write_text("0,1,1,3\n")
    with pytest.raises(FormatError, match="g.txt:1"):
        read_groundtruth(tmp_path / "g.txt")


def test_list_frames_names_first_gap(tmp_path):
    for i in (0, 1, 3, 5):
        write_ppm(tmp_path / f"frame_{i:06d}.ppm", np.zeros((2, 2, 3), np.uint8))
    with pytest.raises(FormatError, match="frame_000002.ppm"):
        list_frames(tmp_path)
    with pytest.raises(FormatError):
        list_frames(tmp_path / "nowhere")


def test_csv_rfc4180(tmp_path):
    text = write_csv(tmp_path / "o.csv", ["a", "b"], [[1, "x,y"], [2, 'say "hi"']])
    assert text == 'a,b\r\n1,"x,y"\r\n2,"say ""hi"""\r\n'
    assert (tmp_path / "o.csv").read_bytes() == text.encode()
    assert write_csv(None, ["a"], []) == "a\r\n"
