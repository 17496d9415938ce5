import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instancematch.container import (
    MAGIC,
    parse_container,
    read_container,
    serialize_container,
    write_container,
)
from instancematch.errors import (
    BadMagic,
    ContainerError,
    DuplicateName,
    TruncatedFile,
    UnknownDtype,
)


def sample_records():
    rng = np.random.default_rng(0)
    return {
        "floats32": rng.normal(size=(2, 3)).astype(np.float32),
        "floats64": rng.normal(size=(4,)),
        "bytes": rng.integers(0, 256, size=(3, 2, 2)).astype(np.uint8),
        "scalar": np.float64(3.5),
        "empty_dim": np.zeros((0, 4), dtype=np.float32),
    }


class TestRoundTrip:
    def test_single_tensor_bit_identical(self):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        blob = serialize_container({"t": arr})
        again = serialize_container(parse_container(blob))
        assert blob == again
        out = parse_container(blob)["t"]
        assert out.dtype == np.float32
        np.testing.assert_array_equal(out, arr)

    def test_every_dtype_round_trips(self):
        records = sample_records()
        out = parse_container(serialize_container(records))
        assert list(out.keys()) == list(records.keys())
        for name, arr in records.items():
            got = out[name]
            assert got.shape == np.asarray(arr).shape
            assert got.dtype == np.asarray(arr).dtype
            np.testing.assert_array_equal(got, arr)

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "data.nids"
        write_container(path, sample_records())
        blob = path.read_bytes()
        assert blob[:4] == MAGIC
        out = read_container(path)
        np.testing.assert_array_equal(out["floats64"], sample_records()["floats64"])


class TestRejection:
    def test_bad_magic(self):
        blob = serialize_container({"t": np.zeros(2, dtype=np.float32)})
        with pytest.raises(BadMagic):
            parse_container(b"XXXX" + blob[4:])

    def test_bad_version(self):
        blob = bytearray(serialize_container({"t": np.zeros(2, dtype=np.float32)}))
        blob[4] = 9
        with pytest.raises(BadMagic):
            parse_container(bytes(blob))

    def test_declared_dims_exceed_data(self):
        # A 4x4 float32 record needs 64 data bytes; hand it only 60.
        blob = serialize_container({"t": np.zeros((4, 4), dtype=np.float32)})
        with pytest.raises(TruncatedFile):
            parse_container(blob[:-4])

    def test_unknown_dtype_code(self):
        blob = bytearray(serialize_container({"t": np.zeros(2, dtype=np.float32)}))
        # dtype code sits right after the 4-byte name length and 1-byte name.
        offset = 4 + 4 + 4 + 4 + 1
        blob[offset] = 7
        with pytest.raises(UnknownDtype):
            parse_container(bytes(blob))

    def test_duplicate_names_rejected_on_read(self):
        single = serialize_container({"t": np.zeros(2, dtype=np.float32)})
        record = single[12:]
        doubled = single[:8] + (2).to_bytes(4, "little") + record + record
        with pytest.raises(DuplicateName):
            parse_container(doubled)

    def test_unsupported_dtype_rejected_on_write(self):
        with pytest.raises(UnknownDtype):
            serialize_container({"t": np.zeros(2, dtype=np.int32)})

    def test_empty_container_rejected_on_write(self):
        with pytest.raises(ContainerError):
            serialize_container({})

    def test_trailing_bytes_rejected(self):
        blob = serialize_container({"t": np.zeros(2, dtype=np.float32)})
        with pytest.raises(ContainerError):
            parse_container(blob + b"\x00")

    def test_every_truncation_offset_rejected(self):
        blob = serialize_container(sample_records())
        for offset in range(len(blob)):
            with pytest.raises(ContainerError):
                parse_container(blob[:offset])

    @given(st.binary(max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_arbitrary_bytes_never_crash(self, data):
        try:
            parse_container(data)
        except ContainerError:
            pass
