import math

import numpy as np
import pytest

from src.core.config import CalendarConfig, IngestConfig
from src.core.exceptions import DataError, ValidationError
from src.data.events import EventSequence, MarkVocabulary
from src.data.ingest import (
    featurize,
    featurize_sequence,
    ingest,
    load_split_dir,
    read_corpus,
    save_split_dir,
    split,
    write_corpus,
)


def write_raw(tmp_path, lines):
    path = tmp_path / "raw.tsv"
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def corpus_of(n):
    return [EventSequence.from_arrays(f"s{i}", [0.0, 1.0, 2.0], [0, 1, 0]) for i in range(n)]


class TestIngest:
    def test_gap_split_drops_short_pieces(self, tmp_path):
        # gaps 1, 200, 2, 3 with a 100 h threshold
        path = write_raw(tmp_path, ["u1\t0:a\t1:b\t201:a\t203:b\t206:a"])
        sequences, vocab = ingest(path, IngestConfig(gap_hours=100.0))
        assert len(sequences) == 1
        assert len(sequences[0]) == 3
        np.testing.assert_allclose(sequences[0].times, [201.0, 203.0, 206.0])
        assert sequences[0].seq_id == "u1#1"
        assert vocab.tokens == ["a", "b"]

    def test_unsplit_stream_keeps_its_id(self, tmp_path):
        path = write_raw(tmp_path, ["u1\t0:a\t1:b\t2:a"])
        sequences, _ = ingest(path)
        assert [s.seq_id for s in sequences] == ["u1"]

    def test_events_sorted_and_ties_shifted(self, tmp_path):
        path = write_raw(tmp_path, ["u1\t2:a\t1:a\t1:b"])
        (seq,), _ = ingest(path)
        times = seq.times
        assert np.all(np.diff(times) > 0)
        assert times[1] - times[0] == pytest.approx(1e-9, abs=1e-12)

    def test_tie_shift_at_large_times(self, tmp_path):
        # 2**25 h: one ulp is wider than the nominal shift
        path = write_raw(tmp_path, ["u1\t33554432:a\t33554432:b\t33554433:a"])
        (seq,), _ = ingest(path)
        assert len(seq) == 3
        assert np.all(np.diff(seq.times) > 0)

    def test_prepared_corpus_reingests_unchanged(self, tmp_path):
        raw = write_raw(tmp_path, [
            "u1\t0:a\t1:b\t201:a\t203:b\t206:a",
            "u2\t5:b\t5:a\t7.25:c\t9:a",
            "u3\t0:c\t0.5:c\t0.75:b",
        ])
        config = IngestConfig(gap_hours=100.0)
        sequences, vocab = ingest(raw, config)
        prepared = tmp_path / "prepared.tsv"
        write_corpus(prepared, sequences, vocab)
        again, same_vocab = ingest(prepared, config, vocabulary=vocab)
        assert again == sequences
        assert same_vocab.tokens == vocab.tokens

    def test_rare_marks_removed(self, tmp_path):
        path = write_raw(tmp_path, ["u1\t0:a\t1:a\t2:b\t3:a"])
        (seq,), vocab = ingest(path, IngestConfig(top_k=1))
        assert vocab.tokens == ["a"]
        assert len(seq) == 3

    def test_length_cap(self, tmp_path):
        cells = "\t".join(f"{t}:a" for t in range(7))
        path = write_raw(tmp_path, [f"u1\t{cells}"])
        sequences, _ = ingest(path, IngestConfig(max_length=3))
        assert [len(s) for s in sequences] == [3, 3]

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = write_raw(tmp_path, ["u1\t0:a\t1:b\t2:a", "u2\t0-a"])
        with pytest.raises(DataError) as info:
            ingest(path)
        assert info.value.line_number == 2
        assert "line 2" in str(info.value)

    def test_nothing_usable(self, tmp_path):
        path = write_raw(tmp_path, ["u1\t0:a\t1:b"])
        with pytest.raises(DataError, match="no usable sequences"):
            ingest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            ingest(tmp_path / "absent.tsv")

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            IngestConfig(gap_hours=0.0)
        with pytest.raises(ValidationError):
            IngestConfig(min_length=5, max_length=4)


class TestFeaturize:
    def test_one_hour_gap(self):
        assert featurize(0.0, 1.0)[0] == pytest.approx(0.0, abs=1e-15)

    def test_first_event_uses_floor(self):
        assert featurize(None, 5.0)[0] == pytest.approx(math.log(1e-6))

    def test_one_second_gap(self):
        assert featurize(0.0, 2.77e-4)[0] == pytest.approx(-8.19149, abs=1e-4)

    def test_calendar_at_epoch(self):
        # 2008-08-01 00:00 UTC, a Friday
        phi = featurize(None, 0.0, CalendarConfig())
        assert phi.shape == (8,)
        np.testing.assert_allclose(phi[1:], [0.0, 7 / 12, 0.0, 4 / 7, 0.0, 0.0, 0.0], atol=1e-12)

    def test_calendar_coordinates_in_unit_interval(self):
        for t in [0.5, 37.25, 1000.0, 8000.0]:
            phi = featurize(t - 0.5, t)
            assert np.all((phi[1:] >= 0.0) & (phi[1:] < 1.0))

    def test_calendar_disabled(self):
        assert featurize(0.0, 2.0, CalendarConfig(enabled=False)).shape == (1,)

    def test_time_going_backwards(self):
        with pytest.raises(ValidationError):
            featurize(2.0, 1.0)

    def test_time_beyond_calendar_range(self):
        with pytest.raises(DataError, match="calendar range"):
            featurize(None, 1e8)

    def test_far_time_without_calendar(self):
        assert featurize(None, 1e8, CalendarConfig(enabled=False)).shape == (1,)

    def test_sequence_matrix(self):
        seq = EventSequence.from_arrays("s", [0.0, 1.0, 3.0], [0, 1, 0])
        X = featurize_sequence(seq)
        assert X.shape == (3, 8)
        assert X[1, 0] == pytest.approx(0.0, abs=1e-15)
        assert X[2, 0] == pytest.approx(math.log(2.0))


class TestSplit:
    def test_sizes_for_ten(self):
        assert split(corpus_of(10), seed=1).sizes() == (8, 1, 1)

    def test_every_sequence_used_once(self):
        parts = split(corpus_of(37), seed=4)
        ids = [s.seq_id for part in parts.parts().values() for s in part]
        assert sorted(ids) == sorted(f"s{i}" for i in range(37))

    @pytest.mark.parametrize("n", [10, 37, 100, 253])
    def test_partition_proportions(self, n):
        parts = split(corpus_of(n), seed=n)
        ids = [[s.seq_id for s in part] for part in parts.parts().values()]
        flat = [i for part in ids for i in part]
        assert len(flat) == len(set(flat)) == n
        for part, fraction in zip(ids, (0.8, 0.1, 0.1)):
            assert abs(len(part) - fraction * n) <= 1

    def test_deterministic(self):
        a = split(corpus_of(50), seed=9)
        b = split(corpus_of(50), seed=9)
        assert [s.seq_id for s in a.test] == [s.seq_id for s in b.test]

    def test_seed_changes_partition(self):
        a = split(corpus_of(50), seed=1)
        b = split(corpus_of(50), seed=2)
        assert [s.seq_id for s in a.train] != [s.seq_id for s in b.train]

    def test_too_small(self):
        with pytest.raises(ValidationError):
            split(corpus_of(2), seed=0)


class TestFiles:
    def test_split_dir_roundtrip(self, tmp_path):
        vocab = MarkVocabulary(["x", "y"])
        parts = split(corpus_of(10), seed=0)
        save_split_dir(tmp_path, parts, vocab)
        loaded, loaded_vocab = load_split_dir(tmp_path)
        assert loaded_vocab.tokens == ["x", "y"]
        assert loaded.sizes() == (8, 1, 1)
        np.testing.assert_array_equal(loaded.test[0].times, parts.test[0].times)

    def test_unknown_mark(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("s\t0:x\t1:zzz\n", encoding="utf-8")
        with pytest.raises(DataError, match="zzz"):
            read_corpus(path, MarkVocabulary(["x"]))

    def test_missing_split_files(self, tmp_path):
        (tmp_path / "vocab.txt").write_text("x\n", encoding="utf-8")
        with pytest.raises(DataError, match="split"):
            load_split_dir(tmp_path)


class TestEvents:
    def test_non_increasing_rejected(self):
        with pytest.raises(ValidationError):
            EventSequence.from_arrays("s", [1.0, 1.0], [0, 0])

    def test_negative_time_rejected(self):
        with pytest.raises(ValidationError):
            EventSequence.from_arrays("s", [-1.0], [0])

    def test_prefix(self):
        seq = EventSequence.from_arrays("s", [0.0, 1.0, 2.0], [0, 1, 0])
        assert len(seq.prefix(2)) == 2
        assert seq.n_transitions == 2

    def test_vocabulary_duplicates(self):
        with pytest.raises(DataError):
            MarkVocabulary(["a", "a"])
