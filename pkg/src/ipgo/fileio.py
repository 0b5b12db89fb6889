"""Bit-exact binary file format for embedding matrices, learned insert
pairs, and full parameter sets.

Layout (all integers little-endian):

    bytes 0..3   magic "IPGO"
    bytes 4..5   format version, u16 (currently 1)
    byte  6      role, u8: 0 = prompt, 1 = insert_pair, 2 = params
    byte  7      section count, u8 (prompt: 1, insert_pair: 2, params: 5)
    per section: rows u32, cols u32, then rows*cols float64 values,
                 little-endian, column-major

The params role stores, in order: prefix basis, suffix basis, prefix
coefficients, suffix coefficients, then a 4 x 1 section holding the four
angles (theta1_pre, theta2_pre, theta1_suff, theta2_suff). Writes go to a
temporary name in the target directory and are renamed into place, so a
crash never leaves a partial file at the destination.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .inserts import InsertionParams
from .linalg import Mat

MAGIC = b"IPGO"
FORMAT_VERSION = 1

ROLE_PROMPT = "prompt"
ROLE_INSERT_PAIR = "insert_pair"
ROLE_PARAMS = "params"

_ROLE_CODES = {ROLE_PROMPT: 0, ROLE_INSERT_PAIR: 1, ROLE_PARAMS: 2}
_ROLE_NAMES = {v: k for k, v in _ROLE_CODES.items()}
_SECTIONS_PER_ROLE = {ROLE_PROMPT: 1, ROLE_INSERT_PAIR: 2, ROLE_PARAMS: 5}


class FileFormatError(ValueError):
    """Base class for embedding-file errors."""


class BadMagicError(FileFormatError):
    pass


class BadVersionError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


def atomic_write_bytes(path: str, data: bytes):
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ipgo-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _section_bytes(mat: Mat) -> bytes:
    header = struct.pack("<II", mat.rows, mat.cols)
    # column-major payload, little-endian float64
    payload = mat.a.astype("<f8", copy=False).tobytes(order="F")
    return header + payload


def _file_bytes(role: str, sections: list[Mat]) -> bytes:
    expected = _SECTIONS_PER_ROLE[role]
    if len(sections) != expected:
        raise FileFormatError(
            f"role {role!r} stores {expected} sections, got {len(sections)}"
        )
    out = [MAGIC, struct.pack("<HBB", FORMAT_VERSION, _ROLE_CODES[role], len(sections))]
    out.extend(_section_bytes(m) for m in sections)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.path}: truncated file (needed {n} bytes at offset {self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def section(self) -> Mat:
        rows, cols = struct.unpack("<II", self.take(8))
        payload = self.take(rows * cols * 8)
        arr = np.frombuffer(payload, dtype="<f8").reshape((rows, cols), order="F")
        return Mat(arr)


def parse_file_bytes(data: bytes, label: str = "<bytes>") -> tuple[str, list[Mat]]:
    """Parse a whole file image; returns (role, sections)."""
    r = _Reader(data, label)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{label}: not an embedding file (bad magic)")
    version, role_code, n_sections = struct.unpack("<HBB", r.take(4))
    if version != FORMAT_VERSION:
        raise BadVersionError(
            f"{label}: unsupported format version {version} (expected {FORMAT_VERSION})"
        )
    role = _ROLE_NAMES.get(role_code)
    if role is None:
        raise FileFormatError(f"{label}: unknown role code {role_code}")
    if n_sections != _SECTIONS_PER_ROLE[role]:
        raise FileFormatError(
            f"{label}: role {role!r} must carry {_SECTIONS_PER_ROLE[role]} sections, "
            f"found {n_sections}"
        )
    sections = [r.section() for _ in range(n_sections)]
    if r.pos != len(data):
        raise FileFormatError(f"{label}: {len(data) - r.pos} trailing bytes")
    return role, sections


def _read_file(path: str) -> tuple[str, list[Mat]]:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_file_bytes(data, label=path)


def embedding_file_bytes(mat: Mat, role: str = ROLE_PROMPT) -> bytes:
    if role != ROLE_PROMPT:
        raise FileFormatError(
            f"single-matrix files carry the prompt role; use the dedicated "
            f"builder for role {role!r}"
        )
    if mat.cols < 1:
        raise FileFormatError("refusing to write a zero-column embedding")
    return _file_bytes(role, [mat])


def write_embedding(path: str, mat: Mat, role: str = ROLE_PROMPT):
    """Write a single-matrix file (the prompt role)."""
    atomic_write_bytes(path, embedding_file_bytes(mat, role))


def read_embedding(path: str) -> tuple[Mat, str]:
    role, sections = _read_file(path)
    if role != ROLE_PROMPT:
        raise FileFormatError(
            f"{path}: holds role {role!r}, use the matching reader"
        )
    mat = sections[0]
    if mat.cols < 1:
        raise FileFormatError(f"{path}: zero-column embedding")
    return mat, role


def read_role(path: str) -> str:
    """The role tag of a file, without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if len(head) < 8:
        raise TruncatedFileError(f"{path}: shorter than the fixed header")
    if head[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an embedding file (bad magic)")
    version, role_code, _ = struct.unpack("<HBB", head[4:8])
    if version != FORMAT_VERSION:
        raise BadVersionError(f"{path}: unsupported format version {version}")
    role = _ROLE_NAMES.get(role_code)
    if role is None:
        raise FileFormatError(f"{path}: unknown role code {role_code}")
    return role


def insert_pair_file_bytes(v_pre: Mat, v_suff: Mat) -> bytes:
    if v_pre.cols == 0 and v_suff.cols == 0:
        raise FileFormatError("insert pair may not be empty on both sides")
    return _file_bytes(ROLE_INSERT_PAIR, [v_pre, v_suff])


def write_insert_pair(path: str, v_pre: Mat, v_suff: Mat):
    atomic_write_bytes(path, insert_pair_file_bytes(v_pre, v_suff))


def parse_insert_pair_bytes(data: bytes, label: str = "<bytes>") -> tuple[Mat, Mat]:
    role, sections = parse_file_bytes(data, label)
    if role != ROLE_INSERT_PAIR:
        raise FileFormatError(f"{label}: holds role {role!r}, expected insert_pair")
    return sections[0], sections[1]


def read_insert_pair(path: str) -> tuple[Mat, Mat]:
    with open(path, "rb") as fh:
        return parse_insert_pair_bytes(fh.read(), label=path)


def params_file_bytes(params: InsertionParams) -> bytes:
    angles = Mat(
        np.array(
            [
                [params.theta1_pre],
                [params.theta2_pre],
                [params.theta1_suff],
                [params.theta2_suff],
            ]
        )
    )
    sections = [
        params.basis_pre,
        params.basis_suff,
        params.coeffs_pre,
        params.coeffs_suff,
        angles,
    ]
    return _file_bytes(ROLE_PARAMS, sections)


def write_params(path: str, params: InsertionParams):
    atomic_write_bytes(path, params_file_bytes(params))


def parse_params_bytes(data: bytes, label: str = "<bytes>") -> InsertionParams:
    role, sections = parse_file_bytes(data, label)
    if role != ROLE_PARAMS:
        raise FileFormatError(f"{label}: holds role {role!r}, expected params")
    basis_pre, basis_suff, coeffs_pre, coeffs_suff, angles = sections
    if angles.shape != (4, 1):
        raise FileFormatError(f"{label}: angle section must be 4x1, got {angles.shape}")
    return InsertionParams(
        basis_pre=basis_pre,
        basis_suff=basis_suff,
        coeffs_pre=coeffs_pre,
        coeffs_suff=coeffs_suff,
        theta1_pre=float(angles.a[0, 0]),
        theta2_pre=float(angles.a[1, 0]),
        theta1_suff=float(angles.a[2, 0]),
        theta2_suff=float(angles.a[3, 0]),
    )


def read_params(path: str) -> InsertionParams:
    with open(path, "rb") as fh:
        return parse_params_bytes(fh.read(), label=path)
