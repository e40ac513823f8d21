import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripletiris.errors import ChecksumError, FormatError
from tripletiris.evaluation import ScoreSet, TtaEmbedding, compute_eer
from tripletiris.store import EmbeddingStore, export_scores, import_scores, read_store, write_store


def _store(n=3, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingStore(dim, [TtaEmbedding(rng.normal(size=dim), f"c{i % 2}/{i}.png", f"c{i % 2}")
                                for i in range(n)])


class TestRoundTrip:
    def test_empty_store(self, tmp_path):
        write_store(EmbeddingStore(5), tmp_path / "e.bin")
        blob = (tmp_path / "e.bin").read_bytes()
        assert blob[:4] == b"TFEB"
        assert struct.unpack("<III", blob[4:16]) == (1, 5, 0)
        assert read_store(tmp_path / "e.bin") == EmbeddingStore(5)

    def test_dim_768(self, tmp_path):
        write_store(_store(2, 768), tmp_path / "s.bin")
        assert read_store(tmp_path / "s.bin").dim == 768

    def test_float_bits_preserved(self, tmp_path):
        special = np.array([0.0, -0.0, 1e-45, np.float32(np.pi), -3.4e38], dtype=np.float32)
        s = EmbeddingStore(5, [TtaEmbedding(special, "a/0", "a")])
        write_store(s, tmp_path / "s.bin")
        assert read_store(tmp_path / "s.bin").entries[0].values.tobytes() == special.tobytes()

    def test_unicode_ids(self, tmp_path):
        s = EmbeddingStore(1, [TtaEmbedding(np.ones(1), "ïris/ø.png", "ïris")])
        write_store(s, tmp_path / "s.bin")
        assert read_store(tmp_path / "s.bin") == s

    @settings(max_examples=40)
    @given(n=st.integers(0, 6), dim=st.integers(1, 16), seed=st.integers(0, 10_000))
    def test_random_stores(self, tmp_path_factory, n, dim, seed):
        path = tmp_path_factory.mktemp("st") / "s.bin"
        s = _store(n, dim, seed)
        write_store(s, path)
        assert read_store(path) == s

    def test_identical_inputs_identical_bytes(self, tmp_path):
        write_store(_store(), tmp_path / "a.bin")
        write_store(_store(), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


class TestCorruption:
    def test_flipped_payload_byte(self, tmp_path):
        write_store(_store(), tmp_path / "s.bin")
        blob = bytearray((tmp_path / "s.bin").read_bytes())
        blob[30] ^= 0x01
        (tmp_path / "s.bin").write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            read_store(tmp_path / "s.bin")

    def test_wrong_magic(self, tmp_path):
        write_store(_store(), tmp_path / "s.bin")
        blob = b"XXXX" + (tmp_path / "s.bin").read_bytes()[4:]
        (tmp_path / "s.bin").write_bytes(blob)
        with pytest.raises(FormatError, match="magic"):
            read_store(tmp_path / "s.bin")

    def test_version_mismatch(self, tmp_path):
        write_store(_store(), tmp_path / "s.bin")
        body = bytearray((tmp_path / "s.bin").read_bytes()[:-4])
        body[4:8] = struct.pack("<I", 99)
        (tmp_path / "s.bin").write_bytes(bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))
        with pytest.raises(FormatError, match="version"):
            read_store(tmp_path / "s.bin")

    def test_truncated(self, tmp_path):
        write_store(_store(), tmp_path / "s.bin")
        (tmp_path / "s.bin").write_bytes((tmp_path / "s.bin").read_bytes()[:10])
        with pytest.raises(FormatError):
            read_store(tmp_path / "s.bin")


class TestStoreInvariants:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            EmbeddingStore(3, [TtaEmbedding(np.ones(4), "a", "a")])

    def test_duplicate_source(self):
        with pytest.raises(ValueError, match="duplicate"):
            EmbeddingStore(1, [TtaEmbedding(np.ones(1), "a", "a"), TtaEmbedding(np.ones(1), "a", "b")])


class TestScoreExport:
    def test_line_counts_and_order(self, tmp_path):
        s = ScoreSet([0.1, 0.05], [0.9, 0.7, 0.8, 0.6])
        export_scores(s, tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert len(lines) == 7 and lines[0] == "label,score"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["genuine"] * 2 + ["impostor"] * 4
        assert lines[1] == "genuine,0.1" and lines[3] == "impostor,0.9"

    @given(g=st.lists(st.floats(0, 2), min_size=1, max_size=20), i=st.lists(st.floats(0, 2), min_size=1, max_size=20))
    @settings(max_examples=30)
    def test_reimport_reproduces_eer(self, tmp_path_factory, g, i):
        path = tmp_path_factory.mktemp("sc") / "s.csv"
        s = ScoreSet(g, i)
        export_scores(s, path)
        back = import_scores(path)
        np.testing.assert_array_equal(back.genuine, s.genuine)
        assert compute_eer(back) == compute_eer(s)

    def test_empty_impostor(self, tmp_path):
        export_scores(ScoreSet([0.1], []), tmp_path / "s.csv")
        with pytest.raises(ValueError, match="impostor"):
            compute_eer(import_scores(tmp_path / "s.csv"))
