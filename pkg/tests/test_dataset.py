import json
import struct

import numpy as np
import pytest

from eeg2text.dataset import (
    CorpusManifest,
    EEGSegment,
    ManifestEntry,
    SentenceRecord,
    SynthSpec,
    compute_channel_stats,
    decode_blob,
    encode_blob,
    load_corpus,
    normalize_channels,
    split_by_sentence,
    synthesize_corpus,
    write_corpus,
)
from eeg2text.errors import DataError, FormatError, IntegrityError, SplitError


def one_record_corpus(tmp_path, samples):
    seg = EEGSegment(np.asarray(samples, dtype=np.float32))
    record = SentenceRecord("s0", "A", "NR-v1", "hi", [("hi", seg)])
    manifest = CorpusManifest("t", [f"C{i}" for i in range(seg.channels)], 100.0, ["A"],
                              [ManifestEntry("s0", "NR-v1", "A", "hi", "blobs/r0.e2tb")])
    return manifest, [record]


# -- blob format ------------------------------------------------------------


def test_blob_byte_length_c2_m1_t3(tmp_path):
    # magic(4) + version(4) + M(4) + T(4) + 2*3*4 bytes of samples = 40
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    out = write_corpus(manifest, records, tmp_path)
    blob = (out / "blobs/r0.e2tb").read_bytes()
    assert len(blob) == 40


def test_roundtrip_bitwise_on_samples(tmp_path):
    spec = SynthSpec(num_subjects=2, num_sentences=5, channels=3, t_range=(2, 5), seed=3)
    manifest, records = synthesize_corpus(spec)
    out = write_corpus(manifest, records, tmp_path / "c")
    m2, r2 = load_corpus(out)
    assert len(r2) == len(records)
    for a, b in zip(records, r2):
        assert (a.sentence_id, a.subject, a.task, a.text) == (b.sentence_id, b.subject, b.task, b.text)
        assert [w for w, _ in a.words] == [w for w, _ in b.words]
        for (_, sa), (_, sb) in zip(a.words, b.words):
            assert sa.samples.tobytes() == sb.samples.tobytes()


def test_empty_record_list_valid(tmp_path):
    manifest = CorpusManifest("empty", ["C0"], 10.0, ["A"], [])
    out = write_corpus(manifest, [], tmp_path)
    m2, r2 = load_corpus(out)
    assert r2 == [] and m2.records == []


def test_bad_magic_rejected():
    with pytest.raises(FormatError, match="magic"):
        decode_blob(b"XXXX" + b"\x00" * 20, 2, "blob")


def test_bad_version_rejected():
    blob = b"E2TB" + struct.pack("<II", 9, 1)
    with pytest.raises(FormatError, match="version"):
        decode_blob(blob, 2, "blob")


def test_nan_sample_names_record_and_word(tmp_path):
    samples = np.zeros((2, 3), dtype=np.float32)
    samples[0, 1] = np.nan
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    out = write_corpus(manifest, records, tmp_path)
    blob = encode_blob(SentenceRecord("s0", "A", "NR-v1", "hi", [("hi", EEGSegment(samples))]), 2)
    (out / "blobs/r0.e2tb").write_bytes(blob)
    with pytest.raises(DataError, match=r"s0.*word index 0"):
        load_corpus(out)


def test_truncated_blob_is_integrity_error(tmp_path):
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    out = write_corpus(manifest, records, tmp_path)
    path = out / "blobs/r0.e2tb"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(IntegrityError, match="truncated"):
        load_corpus(out)


def test_trailing_bytes_is_integrity_error(tmp_path):
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    out = write_corpus(manifest, records, tmp_path)
    path = out / "blobs/r0.e2tb"
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(IntegrityError, match="trailing"):
        load_corpus(out)


def test_zero_words_is_integrity_error():
    blob = b"E2TB" + struct.pack("<II", 1, 0)
    with pytest.raises(IntegrityError, match="0 words"):
        decode_blob(blob, 2, "blob")


def test_channel_mismatch_is_format_error(tmp_path):
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    manifest.channel_names = ["C0", "C1", "C2"]
    with pytest.raises(FormatError, match="channels"):
        write_corpus(manifest, records, tmp_path)


def test_unwritable_path_is_io_error(tmp_path):
    from eeg2text.errors import IoError

    blocker = tmp_path / "blocker"
    blocker.write_text("plain file, not a directory")
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    with pytest.raises(IoError):
        write_corpus(manifest, records, blocker / "corpus")


def test_duplicate_sentence_id_rejected(tmp_path):
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    manifest.records.append(manifest.records[0])
    with pytest.raises(FormatError, match="duplicate"):
        manifest.validate()


def test_unknown_task_tag_rejected(tmp_path):
    manifest, records = one_record_corpus(tmp_path, np.zeros((2, 3)))
    manifest.records[0].task = "SR-v9"
    with pytest.raises(FormatError, match="task"):
        manifest.validate()


# -- synthesis ----------------------------------------------------------------


def test_synthesis_deterministic():
    spec = SynthSpec(num_subjects=2, num_sentences=6, seed=11)
    m1, r1 = synthesize_corpus(spec)
    m2, r2 = synthesize_corpus(spec)
    assert m1.to_json() == m2.to_json()
    for a, b in zip(r1, r2):
        for (_, sa), (_, sb) in zip(a.words, b.words):
            assert sa.samples.tobytes() == sb.samples.tobytes()


def test_subject_gain_pure_scaling():
    spec = SynthSpec(num_subjects=2, num_sentences=4, channels=5, seed=2, subject_gain_mode=True)
    manifest, records = synthesize_corpus(spec)
    by = {(r.subject, r.sentence_id): r for r in records}
    s0, s1 = manifest.subjects
    for sid in {r.sentence_id for r in records}:
        a, b = by[(s0, sid)], by[(s1, sid)]
        for (_, sa), (_, sb) in zip(a.words, b.words):
            ratio = sb.samples.astype(np.float64) / sa.samples.astype(np.float64)
            # constant per channel
            assert np.allclose(ratio, ratio[:, :1], rtol=1e-4)


def test_collision_pairs_create_exact_cross_subject_equality():
    spec = SynthSpec(num_subjects=4, num_sentences=8, vocab_words=12, channels=6, seed=5,
                     subject_gain_mode=True, collision_pairs=3, punct_prob=0.0)
    manifest, records = synthesize_corpus(spec)
    by = {(r.subject, r.sentence_id): r for r in records}
    subjects = manifest.subjects
    for k in range(3):
        a = by[(subjects[k % 4], f"s{2 * k:04d}")]
        b = by[(subjects[(k + 1) % 4], f"s{2 * k + 1:04d}")]
        assert a.words[0][0] != b.words[0][0]
        assert np.array_equal(a.words[0][1].samples, b.words[0][1].samples)


def test_collision_pairs_require_gain_mode():
    with pytest.raises(DataError):
        SynthSpec(collision_pairs=2, subject_gain_mode=False)


def test_synthesis_precondition():
    with pytest.raises(DataError):
        SynthSpec(num_subjects=0)


# -- splits ---------------------------------------------------------------------


def test_split_10_sentences_8_1_1():
    spec = SynthSpec(num_subjects=1, num_sentences=10, seed=4)
    manifest, records = synthesize_corpus(spec)
    split = split_by_sentence(records, seed=0)
    assert split.counts(records) == {"train": 8, "val": 1, "test": 1}


def test_split_same_sentence_same_split():
    spec = SynthSpec(num_subjects=12, num_sentences=5, seed=4)
    _, records = synthesize_corpus(spec)
    split = split_by_sentence(records, seed=1)
    for text in {r.text for r in records}:
        splits = {split.split_of(r) for r in records if r.text == text}
        assert len(splits) == 1


def test_split_is_partition_and_test_unseen():
    spec = SynthSpec(num_subjects=3, num_sentences=20, seed=9)
    _, records = synthesize_corpus(spec)
    split = split_by_sentence(records, seed=2)
    counts = split.counts(records)
    assert sum(counts.values()) == len(records)
    test_texts = {r.text for r in records if split.split_of(r) == "test"}
    other_texts = {r.text for r in records if split.split_of(r) != "test"}
    assert not (test_texts & other_texts)


def test_split_too_few_sentences():
    spec = SynthSpec(num_subjects=1, num_sentences=2, seed=4)
    _, records = synthesize_corpus(spec)
    with pytest.raises(SplitError):
        split_by_sentence(records)


def test_split_rounding_half_up():
    # 5 unique sentences: val=round(0.5)=1, test=1, train=3
    spec = SynthSpec(num_subjects=1, num_sentences=5, seed=4)
    _, records = synthesize_corpus(spec)
    split = split_by_sentence(records, seed=0)
    assert split.counts(records) == {"train": 3, "val": 1, "test": 1}


def test_split_ratio_validation():
    spec = SynthSpec(num_subjects=1, num_sentences=5, seed=4)
    _, records = synthesize_corpus(spec)
    with pytest.raises(SplitError):
        split_by_sentence(records, ratios=(0.5, 0.2, 0.2))


def test_split_deterministic_and_serializable():
    spec = SynthSpec(num_subjects=2, num_sentences=12, seed=6)
    _, records = synthesize_corpus(spec)
    s1 = split_by_sentence(records, seed=5)
    s2 = split_by_sentence(records, seed=5)
    assert s1.to_json() == s2.to_json()
    doc = json.loads(s1.to_json())
    assert doc["seed"] == 5 and len(doc["sentences"]) == 12


# -- normalization -----------------------------------------------------------------


def test_normalize_train_stats_zero_mean_unit_var(tiny_corpus):
    manifest, records = tiny_corpus
    split = split_by_sentence(records, seed=0)
    train = split.select(records, "train")
    normed, stats = normalize_channels(records, train)
    split_map = {r.key: split.split_of(r) for r in records}
    train_samples = np.concatenate(
        [seg.samples for r in normed if split_map[r.key] == "train" for _, seg in r.words], axis=1
    ).astype(np.float64)
    assert np.abs(train_samples.mean(axis=1)).max() < 1e-5
    assert np.abs(train_samples.var(axis=1) - 1.0).max() < 1e-4


def test_normalize_val_uses_train_stats(tiny_corpus):
    manifest, records = tiny_corpus
    split = split_by_sentence(records, seed=0)
    train = split.select(records, "train")
    normed, _ = normalize_channels(records, train)
    val = [r for r in normed if split.split_of(r) == "val"]
    val_samples = np.concatenate([seg.samples for r in val for _, seg in r.words], axis=1)
    # val stats are not 0/1 in general
    assert np.abs(val_samples.mean(axis=1)).max() > 1e-4


def test_zero_variance_channel_becomes_zero():
    seg = np.vstack([np.full((1, 4), 5.0), np.arange(4)[None, :]]).astype(np.float32)
    rec = SentenceRecord("s0", "A", "NR-v1", "hi", [("hi", EEGSegment(seg))])
    normed, stats = normalize_channels([rec], [rec])
    assert stats.zero_variance == [0]
    assert (normed[0].words[0][1].samples[0] == 0).all()
    assert not (normed[0].words[0][1].samples[1] == 0).all()


def test_stats_require_train_records():
    with pytest.raises(DataError):
        compute_channel_stats([])
