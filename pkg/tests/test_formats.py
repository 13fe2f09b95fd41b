import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phonecal.core import FormatError, PdfMap, PhoneSet
from phonecal.formats import (MAGIC_LOGLIK, MAGIC_POSTERIOR, read_alignment, read_matrix,
                              read_pdf_map, read_pgm, read_phones, read_priors, read_trials,
                              write_alignment, write_matrix, write_pdf_map, write_pgm,
                              write_phones, write_priors, write_trials)
from phonecal.pooling import PhoneSegment, TrialSet

PHONES = PhoneSet(["aa", "b", "sil"])

finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


def test_binary_layout(tmp_path):
    p = tmp_path / "u.fpm"
    write_matrix(p, [[0.25, 0.75]], MAGIC_POSTERIOR)
    raw = p.read_bytes()
    assert raw[:4] == b"FPM1"
    assert raw[4:12] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(raw[12:], "<f4").tolist() == [0.25, 0.75]


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 7)), elements=finite32))
def test_binary_round_trip_bit_exact(tmp_path_factory, mat):
    d = tmp_path_factory.mktemp("bin")
    write_matrix(d / "a.fll", mat, MAGIC_LOGLIK)
    back = read_matrix(d / "a.fll", MAGIC_LOGLIK)
    assert back.tobytes() == mat.astype("<f4").tobytes()
    write_matrix(d / "b.fll", back, MAGIC_LOGLIK)
    assert (d / "a.fll").read_bytes() == (d / "b.fll").read_bytes()


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 7)), elements=finite32))
def test_csv_round_trip_bit_exact(tmp_path_factory, mat):
    d = tmp_path_factory.mktemp("csv")
    write_matrix(d / "a.csv", mat, MAGIC_LOGLIK)
    back = read_matrix(d / "a.csv")
    assert back.tobytes() == mat.tobytes()
    write_matrix(d / "b.csv", back, MAGIC_LOGLIK)
    assert (d / "a.csv").read_text() == (d / "b.csv").read_text()


class TestMatrixErrors:
    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.fpm").write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(FormatError, match="offset 0"):
            read_matrix(tmp_path / "x.fpm")

    def test_wrong_kind(self, tmp_path):
        write_matrix(tmp_path / "x.fll", [[0.0]], MAGIC_LOGLIK)
        with pytest.raises(FormatError, match="FPM1"):
            read_matrix(tmp_path / "x.fll", MAGIC_POSTERIOR)

    def test_truncated(self, tmp_path):
        write_matrix(tmp_path / "x.fpm", [[0.5, 0.5]], MAGIC_POSTERIOR)
        (tmp_path / "y.fpm").write_bytes((tmp_path / "x.fpm").read_bytes()[:-2])
        with pytest.raises(FormatError, match="header implies"):
            read_matrix(tmp_path / "y.fpm")

    def test_csv_ragged(self, tmp_path):
        (tmp_path / "x.csv").write_text("1,2\n3\n")
        with pytest.raises(FormatError, match=":2:"):
            read_matrix(tmp_path / "x.csv")

    def test_csv_size_limit(self, tmp_path):
        (tmp_path / "x.csv").write_text("0.5,0.5\n" * 140000)
        with pytest.raises(FormatError, match="1 MB"):
            read_matrix(tmp_path / "x.csv")


def test_phones_pdf_map_priors_round_trip(tmp_path):
    write_phones(tmp_path / "phones.txt", PHONES)
    assert read_phones(tmp_path / "phones.txt") == PHONES
    pm = PdfMap([2, 0, 0, 1, 2])
    write_pdf_map(tmp_path / "map.txt", pm, PHONES)
    assert np.array_equal(read_pdf_map(tmp_path / "map.txt", PHONES).pdf_to_phone, pm.pdf_to_phone)
    pri = np.array([0.1, 0.2, 0.30000000000000004, 0.15, 0.25])
    write_priors(tmp_path / "pri.txt", pri)
    assert np.array_equal(read_priors(tmp_path / "pri.txt"), pri)


def test_pdf_map_errors(tmp_path):
    (tmp_path / "m.txt").write_text("0\taa\n1 b\n")
    with pytest.raises(FormatError, match="m.txt:2"):
        read_pdf_map(tmp_path / "m.txt", PHONES)
    (tmp_path / "m.txt").write_text("0\taa\n2\tb\n")
    with pytest.raises(FormatError, match="0..D-1"):
        read_pdf_map(tmp_path / "m.txt", PHONES)
    (tmp_path / "m.txt").write_text("0\tzz\n")
    with pytest.raises(FormatError, match="zz"):
        read_pdf_map(tmp_path / "m.txt", PHONES)


def test_alignment_round_trip(tmp_path):
    segs = [PhoneSegment("u1", 0, 0, 4, 1), PhoneSegment("u1", 2, 4, 9), PhoneSegment("u2", 1, 0, 3, 0)]
    write_alignment(tmp_path / "a.csv", segs, PHONES)
    assert read_alignment(tmp_path / "a.csv", PHONES) == segs
    text = (tmp_path / "a.csv").read_text()
    assert text.splitlines()[0] == "utt,phone,start,end,stress"
    assert text.splitlines()[2] == "u1,sil,4,9,"


def test_alignment_errors(tmp_path):
    (tmp_path / "a.csv").write_text("utt,phone,start,end,stress\nu1,aa,5,3,\n")
    with pytest.raises(FormatError, match="a.csv:2"):
        read_alignment(tmp_path / "a.csv", PHONES)
    (tmp_path / "a.csv").write_text("utt,phone,begin,end,stress\n")
    with pytest.raises(FormatError, match="header"):
        read_alignment(tmp_path / "a.csv", PHONES)


def test_trials_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ts = TrialSet([0, 2, 1], rng.normal(size=(3, 3)) * 1e3, [4, 1, 7], [1, -1, 0])
    write_trials(tmp_path / "t.jsonl", ts, PHONES)
    back = read_trials(tmp_path / "t.jsonl", PHONES)
    assert back.llk.tobytes() == ts.llk.tobytes()
    assert np.array_equal(back.labels, ts.labels)
    assert np.array_equal(back.durations, ts.durations)
    assert np.array_equal(back.stress, ts.stress)
    write_trials(tmp_path / "t2.jsonl", back, PHONES)
    assert (tmp_path / "t.jsonl").read_bytes() == (tmp_path / "t2.jsonl").read_bytes()


def test_trials_errors(tmp_path):
    (tmp_path / "t.jsonl").write_text('{"phone": "aa", "n": 1, "stress": null, "llk": [0, 1]}\n')
    with pytest.raises(FormatError, match="t.jsonl:1"):
        read_trials(tmp_path / "t.jsonl", PHONES)
    (tmp_path / "t.jsonl").write_text('{"phone": "aa", "n": 1, "stress": null, "llk": [0, 1, 2]}\nnot json\n')
    with pytest.raises(FormatError, match="t.jsonl:2"):
        read_trials(tmp_path / "t.jsonl", PHONES)


def test_pgm_scale(tmp_path):
    eer = np.array([[np.nan, 0.0, 0.125], [0.25, 0.4, 0.0625]])
    write_pgm(tmp_path / "h.pgm", eer)
    img = read_pgm(tmp_path / "h.pgm")
    assert (tmp_path / "h.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    np.testing.assert_array_equal(img, [[0, 0, 128], [255, 255, 64]])
