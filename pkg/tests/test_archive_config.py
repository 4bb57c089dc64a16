import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from grnn import archive
from grnn.cell import GrnnConfig, GrnnWeights, init_weights
from grnn.config import DataConfig, RunConfig, dump_config, load_config, parse_config
from grnn.errors import ConfigError, MalformedArchiveError
from grnn.train import TrainConfig


def raw_archive(records, payload=b"", version=1, magic=b"GRNN"):
    """Hand-assemble an archive from ``(name, dtype, dims, offset)`` records.

    Offsets are relative to the end of the tensor table."""
    base = 10 + sum(12 + len(name.encode()) + 4 * len(dims) for name, _, dims, _ in records)
    out = struct.pack("<4sHI", magic, version, len(records))
    for name, dtype, dims, offset in records:
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb + struct.pack(f"<BB{len(dims)}IQ", dtype, len(dims),
                                                             *dims, base + offset)
    return out + payload


class TestArchive:
    def test_round_trip_bit_exact(self, tmp_path):
        w = init_weights(GrnnConfig(scale=2, channels=8, num_res_blocks=2), seed=4)
        named = w.named()
        archive.save(tmp_path / "w.grnn", named)
        back = archive.load(tmp_path / "w.grnn")
        assert list(back) == list(named)
        for k in named:
            assert back[k].dtype == np.float32
            assert back[k].tobytes() == named[k].tobytes()
        rebuilt = GrnnWeights.from_named(back)
        assert rebuilt.named().keys() == named.keys()

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(width=32, allow_nan=False)))
    def test_round_trip_any_shape(self, a):
        back = archive.loads(archive.dumps({"t": a, "u": a[..., None]}))
        assert back["t"].shape == a.shape and back["t"].tobytes() == a.tobytes()
        assert back["u"].shape == a.shape + (1,)

    def test_layout(self):
        buf = archive.dumps({"ab": np.array([1.5], np.float32)})
        assert buf[:4] == b"GRNN"
        assert struct.unpack_from("<HI", buf, 4) == (1, 1)
        # name_len, name, dtype, rank, dims, offset
        assert struct.unpack_from("<H2sBBIQ", buf, 10) == (2, b"ab", 1, 1, 1, 28)
        assert struct.unpack_from("<f", buf, 28) == (1.5,)
        assert len(buf) == 32

    def test_empty_archive(self):
        assert archive.loads(archive.dumps({})) == {}

    def test_bad_magic(self):
        buf = bytearray(archive.dumps({"a": np.zeros(2)}))
        buf[:4] = b"NOPE"
        with pytest.raises(MalformedArchiveError, match="magic"):
            archive.loads(bytes(buf))

    def test_bad_version(self):
        with pytest.raises(MalformedArchiveError, match="version"):
            archive.loads(raw_archive([], version=2))

    @pytest.mark.parametrize("cut", [3, 9, 14, 30, -1])
    def test_truncation(self, cut):
        buf = archive.dumps({"weight": np.arange(6, dtype=np.float32).reshape(2, 3)})
        with pytest.raises(MalformedArchiveError):
            archive.loads(buf[:cut])

    def test_unknown_dtype(self):
        buf = raw_archive([("a", 7, (1,), 0)], b"\0" * 4)
        with pytest.raises(MalformedArchiveError, match="dtype"):
            archive.loads(buf)

    def test_duplicate_names(self):
        rec = [("a", 1, (1,), 0), ("a", 1, (1,), 4)]
        with pytest.raises(MalformedArchiveError, match="duplicate"):
            archive.loads(raw_archive(rec, b"\0" * 8))

    def test_overlap(self):
        rec = [("a", 1, (2,), 0), ("b", 1, (2,), 4)]
        with pytest.raises(MalformedArchiveError, match="overlap"):
            archive.loads(raw_archive(rec, b"\0" * 12))

    def test_offset_into_header(self):
        with pytest.raises(MalformedArchiveError, match="bounds"):
            archive.loads(raw_archive([("a", 1, (1,), -20)], b"\0" * 4))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            archive.load(tmp_path / "absent.grnn")


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert cfg.model.channels == 128 and cfg.train.lr0 == 1e-4

    def test_sections(self):
        cfg = parse_config("""
[model]
scale = 2
channels = 16
ghost_trunk = yes

[train]
lr0 = 3e-4
init_seed = 9

[data]
synth_kind = moving-bars
synth_motion = 0.5,1
""")
        assert cfg.model == GrnnConfig(scale=2, channels=16, ghost_trunk=True)
        assert cfg.train.lr0 == 3e-4 and cfg.init_seed == 9
        assert cfg.data.synth_kind == "moving-bars" and cfg.data.synth_motion == "0.5,1"

    @pytest.mark.parametrize("text,match", [
        ("[model]\nwidth = 3\n", "unknown key"),
        ("[optimizer]\nlr = 1\n", "unknown section"),
        ("[train]\nepochs = many\n", "cannot parse"),
        ("[model]\nghost_trunk = maybe\n", "cannot parse"),
        ("[model]\nscale = 0\n", "scale"),
        ("[model]\ncolor_channels = 1\n", "unknown key"),
        ("no section header\n", "section"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)

    def test_dump_round_trip(self):
        cfg = RunConfig(GrnnConfig(scale=3, channels=24, num_res_blocks=2, ghost_trunk=True),
                        TrainConfig(epochs=5, lr0=2e-3, batch=8),
                        DataConfig(synth_clips=3, data_dir="/data/x"), init_seed=4)
        assert parse_config(dump_config(cfg)) == cfg
        assert parse_config(dump_config(RunConfig())) == RunConfig()

    def test_load(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[train]\nepochs = 2\n")
        assert load_config(p).train.epochs == 2
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "missing.ini")
