import numpy as np
import pytest

from ipgo.fileio import (
    ROLE_INSERT_PAIR,
    ROLE_PARAMS,
    ROLE_PROMPT,
    BadMagicError,
    BadVersionError,
    FileFormatError,
    TruncatedFileError,
    read_embedding,
    read_insert_pair,
    read_params,
    read_role,
    write_embedding,
    write_insert_pair,
    write_params,
)
from ipgo.inserts import init_params
from ipgo.linalg import Mat, SeededRng


class TestEmbeddingRoundTrip:
    def test_reference_scale_bit_exact(self, tmp_path):
        mat = SeededRng(1).normal_mat(768, 77)
        path = str(tmp_path / "prompt.ipgo")
        write_embedding(path, mat, ROLE_PROMPT)
        back, role = read_embedding(path)
        assert role == ROLE_PROMPT
        assert back.a.tobytes() == mat.a.tobytes()

    def test_rewrite_is_byte_identical(self, tmp_path):
        mat = SeededRng(2).normal_mat(16, 5)
        p1, p2 = str(tmp_path / "a.ipgo"), str(tmp_path / "b.ipgo")
        write_embedding(p1, mat)
        write_embedding(p2, mat)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_zero_column_rejected(self, tmp_path):
        with pytest.raises(FileFormatError, match="zero-column"):
            write_embedding(str(tmp_path / "e.ipgo"), Mat(np.zeros((4, 0))))

    def test_role_tag_survives(self, tmp_path):
        path = str(tmp_path / "roles.ipgo")
        write_embedding(path, SeededRng(3).normal_mat(4, 2))
        assert read_role(path) == ROLE_PROMPT
        write_insert_pair(path, SeededRng(4).normal_mat(4, 2), SeededRng(5).normal_mat(4, 1))
        assert read_role(path) == ROLE_INSERT_PAIR
        write_params(path, init_params(4, 2, 2, 1, 1, seed=6))
        assert read_role(path) == ROLE_PARAMS

    def test_no_temp_files_left_behind(self, tmp_path):
        write_embedding(str(tmp_path / "x.ipgo"), SeededRng(7).normal_mat(4, 3))
        leftovers = [p for p in tmp_path.iterdir() if p.name.startswith(".ipgo-tmp")]
        assert not leftovers


class TestStructuredErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ipgo"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(BadMagicError):
            read_embedding(str(path))

    def test_bad_version(self, tmp_path):
        path = str(tmp_path / "v.ipgo")
        write_embedding(path, SeededRng(8).normal_mat(4, 2))
        data = bytearray(open(path, "rb").read())
        data[4] = 99
        open(path, "wb").write(bytes(data))
        with pytest.raises(BadVersionError):
            read_embedding(path)

    def test_truncation(self, tmp_path):
        path = str(tmp_path / "t.ipgo")
        write_embedding(path, SeededRng(9).normal_mat(4, 2))
        data = open(path, "rb").read()
        open(path, "wb").write(data[: len(data) - 5])
        with pytest.raises(TruncatedFileError):
            read_embedding(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = str(tmp_path / "x.ipgo")
        write_embedding(path, SeededRng(10).normal_mat(4, 2))
        with open(path, "ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(FileFormatError, match="trailing"):
            read_embedding(path)

    def test_wrong_role_reader(self, tmp_path):
        path = str(tmp_path / "pair.ipgo")
        write_insert_pair(path, SeededRng(11).normal_mat(4, 2), SeededRng(12).normal_mat(4, 2))
        with pytest.raises(FileFormatError, match="role"):
            read_embedding(path)


class TestInsertPairAndParams:
    def test_pair_round_trip(self, tmp_path):
        v_pre = SeededRng(13).normal_mat(6, 2)
        v_suff = SeededRng(14).normal_mat(6, 3)
        path = str(tmp_path / "pair.ipgo")
        write_insert_pair(path, v_pre, v_suff)
        p, s = read_insert_pair(path)
        assert p.a.tobytes() == v_pre.a.tobytes()
        assert s.a.tobytes() == v_suff.a.tobytes()

    def test_pair_allows_one_empty_side(self, tmp_path):
        path = str(tmp_path / "pair0.ipgo")
        write_insert_pair(path, Mat(np.zeros((4, 0))), SeededRng(15).normal_mat(4, 2))
        p, s = read_insert_pair(path)
        assert p.shape == (4, 0) and s.shape == (4, 2)

    def test_pair_rejects_both_empty(self, tmp_path):
        with pytest.raises(FileFormatError):
            write_insert_pair(
                str(tmp_path / "e.ipgo"), Mat(np.zeros((4, 0))), Mat(np.zeros((4, 0)))
            )

    def test_params_round_trip_bit_exact(self, tmp_path):
        params = init_params(8, 3, 2, 2, 1, seed=16)
        from dataclasses import replace

        params = replace(params, theta1_pre=0.25, theta2_suff=-0.125)
        path = str(tmp_path / "params.ipgo")
        write_params(path, params)
        back = read_params(path)
        for f in ("basis_pre", "basis_suff", "coeffs_pre", "coeffs_suff"):
            assert getattr(back, f).a.tobytes() == getattr(params, f).a.tobytes()
        assert back.theta1_pre == 0.25
        assert back.theta2_suff == -0.125
