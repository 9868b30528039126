"""Round-trip and corruption tests for the on-disk formats."""

import struct

import numpy as np
import pytest

from evscore.io import (
    AnnotationError,
    AnnotationRecord,
    BadMagicError,
    ChecksumError,
    ConfigMismatchError,
    MissingTensorError,
    TensorShapeError,
    TruncatedFileError,
    UnexpectedTensorError,
    UnsupportedVersionError,
    additive_checksum,
    load_annotations,
    load_checkpoint,
    load_embeddings,
    save_annotations,
    save_checkpoint,
    save_embeddings,
)
from evscore.scoring import ScorerConfig, init_scorer


class TestChecksum:
    def test_empty(self):
        assert additive_checksum(b"") == 0

    def test_byte_sum(self):
        assert additive_checksum(bytes([1, 2, 250])) == 253

    def test_wraps_at_64_bits(self):
        # 2**56 bytes of 0xff would overflow; simulate with the formula
        # on a small prefix instead: the mask keeps the value in range.
        assert additive_checksum(b"\xff" * 1000) == 255 * 1000


class TestEmbeddingFile(object):
    def test_round_trip_exact(self, tmp_path):
        m = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
        path = tmp_path / "m.evsb"
        save_embeddings(path, m)
        np.testing.assert_array_equal(load_embeddings(path), m.astype(np.float64))

    def test_rewrite_is_byte_identical(self, tmp_path):
        m = np.random.default_rng(1).normal(size=(3, 9))
        p1, p2 = tmp_path / "a.evsb", tmp_path / "b.evsb"
        save_embeddings(p1, m)
        save_embeddings(p2, m)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_matrix(self, tmp_path):
        path = tmp_path / "empty.evsb"
        save_embeddings(path, np.zeros((0, 4)))
        out = load_embeddings(path)
        assert out.shape == (0, 4)

    def test_single_vector_promoted_to_row(self, tmp_path):
        path = tmp_path / "q.evsb"
        save_embeddings(path, np.arange(3.0))
        assert load_embeddings(path).shape == (1, 3)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.evsb"
        save_embeddings(path, np.ones((1, 2)))
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            load_embeddings(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v.evsb"
        save_embeddings(path, np.ones((1, 2)))
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(data))
        with pytest.raises(UnsupportedVersionError):
            load_embeddings(path)

    def test_flipped_payload_byte_fails_checksum(self, tmp_path):
        path = tmp_path / "c.evsb"
        save_embeddings(path, np.ones((2, 2)))
        data = bytearray(path.read_bytes())
        data[16] ^= 0x40  # first payload byte
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumError):
            load_embeddings(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "t.evsb"
        save_embeddings(path, np.ones((2, 2)))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TruncatedFileError):
            load_embeddings(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "g.evsb"
        save_embeddings(path, np.ones((2, 2)))
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(TruncatedFileError):
            load_embeddings(path)


@pytest.fixture
def small_config():
    return ScorerConfig(dim=8, subspaces=2, window=3, lambda_init=0.25, seed=5)


class TestCheckpointFile:
    def test_round_trip_bitwise(self, tmp_path, small_config):
        params = init_scorer(small_config)
        path = tmp_path / "p.evck"
        save_checkpoint(path, params, small_config, seed=42)
        loaded, config, seed = load_checkpoint(path)
        assert seed == 42
        assert config.dim == 8 and config.subspaces == 2 and config.window == 3
        assert config.lambda_init == 0.25
        for name, tensor in params.tensors().items():
            np.testing.assert_array_equal(loaded.tensors()[name].value, tensor.value)

    def test_rewrite_is_byte_identical(self, tmp_path, small_config):
        params = init_scorer(small_config)
        p1, p2 = tmp_path / "a.evck", tmp_path / "b.evck"
        save_checkpoint(p1, params, small_config, seed=1)
        save_checkpoint(p2, params, small_config, seed=1)
        assert p1.read_bytes() == p2.read_bytes()

    def test_expected_config_mismatch(self, tmp_path, small_config):
        params = init_scorer(small_config)
        path = tmp_path / "p.evck"
        save_checkpoint(path, params, small_config, seed=0)
        other = ScorerConfig(dim=8, subspaces=2, window=5)
        with pytest.raises(ConfigMismatchError):
            load_checkpoint(path, expected_config=other)

    def test_missing_tensor(self, tmp_path, small_config):
        params = init_scorer(small_config)
        path = tmp_path / "p.evck"
        save_checkpoint(path, params, small_config, seed=0)
        data = bytearray(path.read_bytes())
        # Drop the tensor count by one; the last tensor then reads as the
        # trailing seed, which either truncates or loses a tensor.
        count = struct.unpack_from("<I", data, 28)[0]
        struct.pack_into("<I", data, 28, count - 1)
        path.write_bytes(bytes(data))
        with pytest.raises((MissingTensorError, TruncatedFileError)):
            load_checkpoint(path)

    def test_renamed_tensor_is_unexpected(self, tmp_path, small_config):
        params = init_scorer(small_config)
        path = tmp_path / "p.evck"
        save_checkpoint(path, params, small_config, seed=0)
        data = path.read_bytes().replace(b"attn_q", b"attn_x")
        path.write_bytes(data)
        with pytest.raises((MissingTensorError, UnexpectedTensorError)):
            load_checkpoint(path)

    def test_wrong_shape(self, tmp_path):
        config = ScorerConfig(dim=8, subspaces=2, window=3)
        params = init_scorer(config)
        path = tmp_path / "p.evck"
        save_checkpoint(path, params, config, seed=0)
        data = bytearray(path.read_bytes())
        # Claim a different window so expected shapes still match, but
        # lie about dim: every matrix shape check must trip.
        struct.pack_into("<I", data, 8, 16)
        path.write_bytes(bytes(data))
        with pytest.raises((TensorShapeError, TruncatedFileError, ValueError)):
            load_checkpoint(path)


class TestAnnotations:
    def test_round_trip(self, tmp_path):
        recs = [
            AnnotationRecord("q1", "v1", 1.0, 10, [(2.0, 4.0), (7.0, 9.0)]),
            AnnotationRecord("q2", "v2", 2.5, 0, []),
        ]
        path = tmp_path / "ann.jsonl"
        save_annotations(path, recs)
        assert load_annotations(path) == recs

    def test_empty_file_gives_empty_list(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_annotations(path) == []

    def test_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        rec = AnnotationRecord("q", "v", 1.0, 5, [])
        save_annotations(path, [rec])
        path.write_text("\n" + path.read_text() + "\n\n")
        assert load_annotations(path) == [rec]

    def test_malformed_record_reports_index(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        good = '{"query_id":"q","video_id":"v","fps":1.0,"n_frames":3,"segments":[]}'
        path.write_text(good + "\n" + "{not json}\n")
        with pytest.raises(AnnotationError) as err:
            load_annotations(path)
        assert err.value.record_index == 1

    def test_inverted_segment_rejected(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        bad = '{"query_id":"q","video_id":"v","fps":1.0,"n_frames":3,"segments":[[5,2]]}'
        path.write_text(bad + "\n")
        with pytest.raises(AnnotationError):
            load_annotations(path)

    def test_nonpositive_fps_rejected(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        bad = '{"query_id":"q","video_id":"v","fps":0.0,"n_frames":3,"segments":[]}'
        path.write_text(bad + "\n")
        with pytest.raises(AnnotationError):
            load_annotations(path)
