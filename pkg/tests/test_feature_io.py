import struct

import numpy as np
import pytest

from app.errors import BadMagicError, NonFiniteValueError, TruncatedPayloadError, UnsupportedFormatError
from app.modules.features.feature_io import (
    HEADER,
    SSRF_MAGIC,
    decode_feature_matrix,
    encode_feature_matrix,
    read_feature_csv,
    read_feature_file,
    write_feature_file,
)


def test_decode_two_by_three():
    payload = np.arange(6, dtype='<f4').tobytes()
    data = HEADER.pack(SSRF_MAGIC, 1, 1, 2, 3) + payload
    matrix = decode_feature_matrix(data)
    assert matrix.shape == (2, 3)
    assert matrix[1].tolist() == [3.0, 4.0, 5.0]


def test_truncated_payload():
    data = HEADER.pack(SSRF_MAGIC, 1, 1, 2, 3) + np.zeros(5, dtype='<f4').tobytes()
    with pytest.raises(TruncatedPayloadError):
        decode_feature_matrix(data)


def test_bad_magic():
    data = HEADER.pack(b'NOPE', 1, 1, 1, 1) + np.zeros(1, dtype='<f4').tobytes()
    with pytest.raises(BadMagicError):
        decode_feature_matrix(data)


def test_unsupported_version():
    data = HEADER.pack(SSRF_MAGIC, 9, 1, 1, 1) + np.zeros(1, dtype='<f4').tobytes()
    with pytest.raises(UnsupportedFormatError):
        decode_feature_matrix(data)


def test_non_finite_payload():
    data = HEADER.pack(SSRF_MAGIC, 1, 1, 1, 2) + struct.pack('<ff', 1.0, float('nan'))
    with pytest.raises(NonFiniteValueError):
        decode_feature_matrix(data)
    with pytest.raises(NonFiniteValueError):
        encode_feature_matrix(np.array([[np.inf]]))


def test_file_round_trip_is_bit_exact(tmp_path, rng):
    matrix = rng.standard_normal((7, 5)).astype(np.float32)
    path = tmp_path / 'features.ssrf'
    write_feature_file(path, matrix)
    assert np.array_equal(read_feature_file(path), matrix)
    assert path.read_bytes() == encode_feature_matrix(matrix)


def test_csv_import(tmp_path):
    path = tmp_path / 'features.csv'
    path.write_text('dim0,dim1\n1.5,2\n-3,4.25\n')
    assert read_feature_csv(path).tolist() == [[1.5, 2.0], [-3.0, 4.25]]


def test_csv_header_checked(tmp_path):
    path = tmp_path / 'features.csv'
    path.write_text('a,b\n1,2\n')
    with pytest.raises(BadMagicError):
        read_feature_csv(path)
