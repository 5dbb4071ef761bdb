import pytest

from xchainlab.encoding import DecodeError, EncodeError, Reader, Writer


def test_integer_round_trip():
    w = Writer()
    w.u8(7).u16(300).u32(70_000).u64(1 << 60)
    r = Reader(w.getvalue())
    assert (r.u8(), r.u16(), r.u32(), r.u64()) == (7, 300, 70_000, 1 << 60)
    r.expect_end()


def test_blob_and_text_round_trip():
    w = Writer()
    w.blob(b"\x00\xffpayload").text("héllo").blob(b"")
    r = Reader(w.getvalue())
    assert r.blob() == b"\x00\xffpayload"
    assert r.text() == "héllo"
    assert r.blob() == b""
    r.expect_end()


@pytest.mark.parametrize("value,bits", [(-1, 8), (256, 8), (1 << 16, 16), (1 << 64, 64)])
def test_out_of_range_integers_rejected(value, bits):
    w = Writer()
    with pytest.raises(EncodeError):
        getattr(w, f"u{bits}")(value)


def test_underrun_raises():
    r = Reader(b"\x01")
    with pytest.raises(DecodeError):
        r.u32()


def test_trailing_bytes_detected():
    r = Reader(b"\x01\x02")
    r.u8()
    with pytest.raises(DecodeError):
        r.expect_end()


def test_non_int_rejected():
    with pytest.raises(EncodeError):
        Writer().u32("5")  # type: ignore[arg-type]
