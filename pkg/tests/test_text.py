import numpy as np
import pytest

from mvsc.errors import FormatError, PairingError
from mvsc.text import (TextEmbeddings, check_pairing, l2_normalize, label_conditioned_embeddings,
                       load_embeddings, synth_embeddings, write_embeddings, zero_embeddings)


def test_roundtrip(tmp_path):
    emb = synth_embeddings(1, 4, 16, [3, 5, 8, 9])
    write_embeddings(tmp_path / "e.mvsctxt", emb)
    back = load_embeddings(tmp_path / "e.mvsctxt", expected_k=4)
    np.testing.assert_allclose(back.matrix, emb.matrix, atol=1e-6)
    assert back.slice_indices == (3, 5, 8, 9)


def test_row_count_mismatch(tmp_path):
    write_embeddings(tmp_path / "e.mvsctxt", synth_embeddings(1, 3, 8))
    with pytest.raises(PairingError):
        load_embeddings(tmp_path / "e.mvsctxt", expected_k=4)


def test_bad_magic(tmp_path):
    path = tmp_path / "e.mvsctxt"
    write_embeddings(path, synth_embeddings(1, 2, 8))
    path.write_bytes(b"MVSCVOL1" + path.read_bytes()[8:])
    with pytest.raises(FormatError):
        load_embeddings(path)


def test_unnormalized_rows_are_renormalized(tmp_path):
    raw = np.random.default_rng(0).standard_normal((3, 6)) * 5
    write_embeddings(tmp_path / "e.mvsctxt", TextEmbeddings(raw))
    back = load_embeddings(tmp_path / "e.mvsctxt")
    np.testing.assert_allclose(np.linalg.norm(back.matrix, axis=1), 1.0, atol=1e-6)


def test_pairing_checks():
    emb = synth_embeddings(0, 3, 8, [1, 2, 3])
    check_pairing(emb, [1, 2, 3])
    with pytest.raises(PairingError):
        check_pairing(emb, [1, 2])
    with pytest.raises(PairingError):
        check_pairing(emb, [1, 2, 4])


class TestSynthetic:
    def test_deterministic(self):
        assert np.array_equal(synth_embeddings(7, 4, 32).matrix, synth_embeddings(7, 4, 32).matrix)
        assert not np.array_equal(synth_embeddings(7, 4, 32).matrix,
                                  synth_embeddings(8, 4, 32).matrix)

    def test_unit_rows(self):
        emb = synth_embeddings(3, 5, 24)
        assert emb.matrix.shape == (6, 24)
        np.testing.assert_allclose(np.linalg.norm(emb.matrix, axis=1), 1.0, atol=1e-6)

    def test_volume_row_is_normalized_mean(self):
        emb = synth_embeddings(3, 5, 24)
        mean = emb.slice_rows.sum(axis=0) / 5
        np.testing.assert_allclose(emb.volume_row, mean / np.sqrt(np.sum(mean**2)), atol=1e-12)


class TestLabelConditioned:
    def _class_mean(self, label, n=20):
        rows = [label_conditioned_embeddings(s, 4, 32, label).slice_rows.mean(axis=0)
                for s in range(n)]
        return np.mean(rows, axis=0)

    def test_class_means_differ(self):
        a, b = self._class_mean(0), self._class_mean(1)
        cos = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
        assert cos < 0.9

    def test_same_label_means_agree(self):
        a = self._class_mean(1)
        b = np.mean([label_conditioned_embeddings(100 + s, 4, 32, 1).slice_rows.mean(axis=0)
                     for s in range(20)], axis=0)
        assert a @ b / np.linalg.norm(a) / np.linalg.norm(b) > 0.9

    def test_unit_rows_and_determinism(self):
        e1 = label_conditioned_embeddings(5, 4, 32, 1)
        e2 = label_conditioned_embeddings(5, 4, 32, 1)
        assert np.array_equal(e1.matrix, e2.matrix)
        np.testing.assert_allclose(np.linalg.norm(e1.matrix, axis=1), 1.0, atol=1e-6)


def test_zero_embeddings_and_normalize_guard():
    z = zero_embeddings(3, 8, [0, 1, 2])
    assert z.matrix.shape == (4, 8) and not z.matrix.any()
    assert not l2_normalize(np.zeros((2, 4))).any()


def test_joint_shuffle_preserves_pairing():
    emb = synth_embeddings(2, 4, 8, [2, 4, 6, 8])
    perm = [2, 0, 3, 1]
    pairs = dict(zip(emb.slice_indices, map(tuple, emb.slice_rows)))
    shuffled = {emb.slice_indices[p]: tuple(emb.slice_rows[p]) for p in perm}
    assert pairs == shuffled
