"""Word-aligned EEG corpus: on-disk format, synthesis, splits, normalization.

Corpus directory layout:
    manifest.json               UTF-8 JSON, schema below
    <blob_path per record>      one "E2TB" blob per sentence record

Blob format, little-endian:
    magic b"E2TB" | u32 version=1 | u32 M
    then M times: u32 T_m | C*T_m float32 samples, channel-major
(C comes from the manifest's channel_names.)
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, IntegrityError, IoError, SplitError
from .tokenizer import content_words

log = logging.getLogger(__name__)

BLOB_MAGIC = b"E2TB"
BLOB_VERSION = 1
TASKS = ("NR-v1", "NR-v2", "TSR-v1")


@dataclass
class EEGSegment:
    """Raw signal for one fixated word: (channels, time) float32."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise DataError(f"segment must be (C, T) with C>0, T>=1, got {self.samples.shape}")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def steps(self) -> int:
        return self.samples.shape[1]


@dataclass
class SentenceRecord:
    """One sentence read by one subject: ordered (word, segment) pairs."""

    sentence_id: str
    subject: str
    task: str
    text: str
    words: list  # [(word_string, EEGSegment), ...]

    def __post_init__(self):
        if len(self.words) < 1:
            raise DataError(f"record {self.sentence_id}: needs at least one word")

    @property
    def key(self) -> tuple:
        return (self.task, self.subject, self.sentence_id)

    @property
    def num_words(self) -> int:
        return len(self.words)


@dataclass
class ManifestEntry:
    sentence_id: str
    task: str
    subject: str
    text: str
    blob_path: str


@dataclass
class CorpusManifest:
    name: str
    channel_names: list
    sampling_rate_hz: float
    subjects: list
    records: list  # [ManifestEntry]
    format_version: int = 1

    @property
    def num_channels(self) -> int:
        return len(self.channel_names)

    def validate(self) -> None:
        if len(set(self.channel_names)) != len(self.channel_names):
            raise FormatError("manifest channel_names are not unique")
        if self.num_channels < 1:
            raise FormatError("manifest declares zero channels")
        subjects = set(self.subjects)
        seen = set()
        for r in self.records:
            if r.task not in TASKS:
                raise FormatError(f"record {r.sentence_id}: unknown task {r.task!r}, expected one of {TASKS}")
            if r.subject not in subjects:
                raise FormatError(f"record {r.sentence_id}: subject {r.subject!r} not in manifest subjects")
            key = (r.subject, r.task, r.sentence_id)
            if key in seen:
                raise FormatError(f"duplicate sentence_id {r.sentence_id!r} for subject {r.subject!r}, task {r.task!r}")
            seen.add(key)

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "format_version": self.format_version,
            "channel_names": list(self.channel_names),
            "sampling_rate_hz": self.sampling_rate_hz,
            "subjects": list(self.subjects),
            "records": [
                {
                    "sentence_id": r.sentence_id,
                    "task": r.task,
                    "subject": r.subject,
                    "text": r.text,
                    "blob_path": r.blob_path,
                }
                for r in self.records
            ],
        }
        return json.dumps(doc, indent=2, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"manifest is not valid JSON: {e}") from e
        try:
            if int(doc["format_version"]) != 1:
                raise FormatError(f"unsupported manifest format_version {doc['format_version']}")
            records = [
                ManifestEntry(r["sentence_id"], r["task"], r["subject"], r["text"], r["blob_path"])
                for r in doc["records"]
            ]
            return cls(
                name=doc["name"],
                channel_names=list(doc["channel_names"]),
                sampling_rate_hz=float(doc["sampling_rate_hz"]),
                subjects=list(doc["subjects"]),
                records=records,
            )
        except KeyError as e:
            raise FormatError(f"manifest missing key {e}") from e


# -- blob encode/decode ---------------------------------------------------


def encode_blob(record: SentenceRecord, num_channels: int) -> bytes:
    parts = [BLOB_MAGIC, struct.pack("<II", BLOB_VERSION, len(record.words))]
    for word, seg in record.words:
        if seg.channels != num_channels:
            raise FormatError(
                f"record {record.sentence_id}, word {word!r}: has {seg.channels} channels, manifest says {num_channels}"
            )
        parts.append(struct.pack("<I", seg.steps))
        parts.append(seg.samples.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def decode_blob(blob: bytes, num_channels: int, where: str) -> list:
    """Returns the list of (C, T_m) float32 arrays stored in a blob."""
    if blob[:4] != BLOB_MAGIC:
        raise FormatError(f"{where}: bad magic {blob[:4]!r}")
    (version, m) = struct.unpack_from("<II", blob, 4)
    if version != BLOB_VERSION:
        raise FormatError(f"{where}: unsupported blob version {version}")
    if m < 1:
        raise IntegrityError(f"{where}: blob declares {m} words")
    offset = 12
    segments = []
    for i in range(m):
        if offset + 4 > len(blob):
            raise IntegrityError(f"{where}: truncated at word {i}")
        (t,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if t < 1:
            raise IntegrityError(f"{where}: word {i} declares {t} time steps")
        nbytes = num_channels * t * 4
        if offset + nbytes > len(blob):
            raise IntegrityError(f"{where}: truncated payload at word {i}")
        arr = np.frombuffer(blob, dtype="<f4", count=num_channels * t, offset=offset)
        segments.append(arr.reshape(num_channels, t))
        offset += nbytes
    if offset != len(blob):
        raise IntegrityError(f"{where}: {len(blob) - offset} trailing bytes after word data")
    return segments


# -- corpus read/write ----------------------------------------------------


def write_corpus(manifest: CorpusManifest, records: list, out_dir) -> Path:
    """Write manifest + blobs; records must match manifest entries 1:1 by key."""
    manifest.validate()
    by_key = {r.key: r for r in records}
    if len(by_key) != len(records):
        raise FormatError("duplicate record keys in record list")
    keys = [(e.task, e.subject, e.sentence_id) for e in manifest.records]
    if set(keys) != set(by_key):
        raise FormatError("manifest records and record list do not match")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for entry in manifest.records:
            record = by_key[(entry.task, entry.subject, entry.sentence_id)]
            blob_path = out_dir / entry.blob_path
            blob_path.parent.mkdir(parents=True, exist_ok=True)
            blob_path.write_bytes(encode_blob(record, manifest.num_channels))
        (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write corpus to {out_dir}: {e}") from e
    return out_dir


def load_corpus(corpus_dir) -> tuple:
    """Load and fully validate a corpus directory; rejects non-finite samples."""
    corpus_dir = Path(corpus_dir)
    manifest_path = corpus_dir / "manifest.json"
    try:
        manifest = CorpusManifest.from_json(manifest_path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoError(f"cannot read {manifest_path}: {e}") from e
    manifest.validate()
    records = []
    for entry in manifest.records:
        try:
            blob = (corpus_dir / entry.blob_path).read_bytes()
        except OSError as e:
            raise IoError(f"cannot read blob {entry.blob_path}: {e}") from e
        segments = decode_blob(blob, manifest.num_channels, entry.blob_path)
        words = _split_words(entry.text, len(segments))
        pairs = []
        for i, seg in enumerate(segments):
            if not np.isfinite(seg).all():
                raise DataError(f"record {entry.sentence_id} (subject {entry.subject}): non-finite sample at word index {i}")
            pairs.append((words[i], EEGSegment(seg)))
        records.append(SentenceRecord(entry.sentence_id, entry.subject, entry.task, entry.text, pairs))
    return manifest, records


def _split_words(text: str, m: int) -> list:
    """Word strings for the m fixated segments of a record.

    The blob stores signals only; word labels are the non-punctuation
    tokens of the manifest text. When the sentence has more words than
    segments (fixations were dropped at conversion time), the first m
    words are used as labels.
    """
    words = content_words(text)
    if len(words) >= m:
        return words[:m]
    return words + [""] * (m - len(words))


# -- synthetic corpus -----------------------------------------------------


@dataclass
class SynthSpec:
    num_subjects: int = 2
    num_sentences: int = 20
    vocab_words: int = 24
    channels: int = 8
    t_range: tuple = (8, 16)
    seed: int = 0
    subject_gain_mode: bool = False
    gain_range: tuple = (0.5, 2.0)
    sentence_len_range: tuple = (3, 7)
    noise_scale: float = 0.05
    punct_prob: float = 0.5
    collision_pairs: int = 0
    task: str = "NR-v1"

    def __post_init__(self):
        if min(self.num_subjects, self.num_sentences, self.vocab_words, self.channels) < 1:
            raise DataError("all synthesis counts must be >= 1")
        if self.t_range[0] < 1 or self.t_range[0] > self.t_range[1]:
            raise DataError(f"bad t_range {self.t_range}")
        if self.collision_pairs > 0:
            if not self.subject_gain_mode:
                raise DataError("collision_pairs requires subject_gain_mode")
            if self.num_subjects < 2:
                raise DataError("collision_pairs requires at least 2 subjects")
            if 2 * self.collision_pairs > min(self.vocab_words, self.num_sentences):
                raise DataError("not enough words/sentences for the requested collision pairs")


_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_words(n: int, rng) -> list:
    words, seen = [], set()
    while len(words) < n:
        syllables = rng.integers(1, 4)
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syllables))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def synthesize_corpus(spec: SynthSpec) -> tuple:
    """Deterministic synthetic corpus.

    Every word carries a fixed latent channel pattern. Base segments are
    drawn once per word occurrence (shared across subjects); with
    subject_gain_mode on, subject s sees the base segment scaled
    per-channel by its gain vector g_s, and nothing else differs.

    collision_pairs > 0 reserves word pairs (u, v) with v's pattern set to
    (g_A / g_B) * u's pattern for a rotating subject pair (A, B), and opens
    one sentence with each. Subject B's raw signal for v then equals
    subject A's for u exactly, so only a subject-aware encoder can tell the
    two sentence-initial words apart: the stress case for the subject layer.
    """
    rng = np.random.default_rng(spec.seed)
    lexicon = _pseudo_words(spec.vocab_words, rng)
    patterns = {w: rng.normal(0.0, 1.0, size=spec.channels) for w in lexicon}
    subjects = [f"S{i:02d}" for i in range(spec.num_subjects)]
    gains = {}
    for s in subjects:
        if spec.subject_gain_mode:
            gains[s] = rng.uniform(spec.gain_range[0], spec.gain_range[1], size=spec.channels)
        else:
            gains[s] = np.ones(spec.channels)

    pair_of = {}  # colliding word -> (partner word, gain ratio to apply to partner's base)
    for k in range(spec.collision_pairs):
        u, v = lexicon[2 * k], lexicon[2 * k + 1]
        a = subjects[k % spec.num_subjects]
        b = subjects[(k + 1) % spec.num_subjects]
        ratio = gains[a] / gains[b]
        patterns[v] = patterns[u] * ratio
        pair_of[v] = (u, ratio)

    def base_segment(word):
        t = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        envelope = np.sin(np.pi * (np.arange(t) + 1.0) / (t + 1.0))
        seg = patterns[word][:, None] * envelope[None, :]
        return seg + spec.noise_scale * rng.normal(0.0, 1.0, size=seg.shape)

    sentences = []  # (sentence_id, text, [(word, base_segment)])
    seen_texts = set()
    first_bases = {}  # word -> base segment of its sentence-initial occurrence
    lo, hi = spec.sentence_len_range
    while len(sentences) < spec.num_sentences:
        length = int(rng.integers(lo, hi + 1))
        words = [lexicon[rng.integers(len(lexicon))] for _ in range(length)]
        idx = len(sentences)
        if idx < 2 * spec.collision_pairs:
            words[0] = lexicon[idx]  # pair words open their own sentences
        text = " ".join(words) + ("." if rng.random() < spec.punct_prob else "")
        if text in seen_texts:
            continue
        seen_texts.add(text)
        base = []
        for pos, w in enumerate(words):
            if pos == 0 and w in pair_of and pair_of[w][0] in first_bases:
                partner, ratio = pair_of[w]
                seg = ratio[:, None] * first_bases[partner]
            else:
                seg = base_segment(w)
            base.append((w, seg))
        if words[0] not in first_bases:
            first_bases[words[0]] = base[0][1]
        sentences.append((f"s{len(sentences):04d}", text, base))

    entries, records = [], []
    for subject in subjects:
        g = gains[subject]
        for sid, text, base in sentences:
            pairs = [(w, EEGSegment((g[:, None] * seg).astype(np.float32))) for w, seg in base]
            blob = f"blobs/{spec.task}_{subject}_{sid}.e2tb"
            entries.append(ManifestEntry(sid, spec.task, subject, text, blob))
            records.append(SentenceRecord(sid, subject, spec.task, text, pairs))

    manifest = CorpusManifest(
        name=f"synthetic-{spec.seed}",
        channel_names=[f"C{i:03d}" for i in range(spec.channels)],
        sampling_rate_hz=128.0,
        subjects=subjects,
        records=entries,
    )
    return manifest, records


# -- splits ---------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class SplitAssignment:
    """Split of unique sentence texts, keyed per (task, trimmed text)."""

    assignment: dict = field(default_factory=dict)  # (task, text) -> split name
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def split_of(self, record: SentenceRecord) -> str:
        return self.assignment[(record.task, record.text.strip())]

    def select(self, records: list, split: str) -> list:
        return [r for r in records if self.split_of(r) == split]

    def counts(self, records: list) -> dict:
        out = {"train": 0, "val": 0, "test": 0}
        for r in records:
            out[self.split_of(r)] += 1
        return out

    def to_json(self) -> str:
        rows = [{"task": k[0], "text": k[1], "split": v} for k, v in sorted(self.assignment.items())]
        return json.dumps({"ratios": list(self.ratios), "seed": self.seed, "sentences": rows}, indent=2, ensure_ascii=False)


def split_by_sentence(records: list, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitAssignment:
    """80/10/10 split over unique sentence texts, grouped within each task.

    Per task: round(ratio * U) sentences go to val and test (half up),
    the remainder to train. All records of one sentence share a split,
    so test sentences never appear in train or val.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios {ratios} do not sum to 1")
    rng = np.random.default_rng(seed)
    assignment = {}
    for task in sorted({r.task for r in records}):
        texts = sorted({r.text.strip() for r in records if r.task == task})
        u = len(texts)
        if u < 3:
            raise SplitError(f"task {task}: only {u} unique sentences, need at least 3")
        order = list(rng.permutation(u))
        n_val = _round_half_up(ratios[1] * u)
        n_test = _round_half_up(ratios[2] * u)
        n_train = u - n_val - n_test
        for pos, idx in enumerate(order):
            if pos < n_train:
                split = "train"
            elif pos < n_train + n_val:
                split = "val"
            else:
                split = "test"
            assignment[(task, texts[idx])] = split
    return SplitAssignment(assignment, tuple(ratios), seed)


# -- channel normalization ------------------------------------------------


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    zero_variance: list


def compute_channel_stats(train_records: list, eps: float = 1e-8) -> ChannelStats:
    """Per-channel mean/std pooled over every train sample."""
    if not train_records:
        raise DataError("cannot compute channel stats from an empty train split")
    total = None
    total_sq = None
    count = 0
    for r in train_records:
        for _, seg in r.words:
            x = seg.samples.astype(np.float64)
            s, sq = x.sum(axis=1), (x * x).sum(axis=1)
            total = s if total is None else total + s
            total_sq = sq if total_sq is None else total_sq + sq
            count += x.shape[1]
    mean = total / count
    var = total_sq / count - mean * mean
    var = np.maximum(var, 0.0)
    zero = [int(i) for i in np.nonzero(var < eps)[0]]
    for c in zero:
        log.warning("channel %d has zero variance on the train split; normalizing to zeros", c)
    std = np.sqrt(var + eps)
    return ChannelStats(mean, std, zero)


def normalize_channels(records: list, train_records: list, eps: float = 1e-8) -> tuple:
    """Z-score every record's channels with train-split statistics.

    Zero-variance channels become exactly zero. Returns (new records,
    ChannelStats); input records are left untouched.
    """
    stats = compute_channel_stats(train_records, eps)
    zero_mask = np.zeros(len(stats.mean), dtype=bool)
    zero_mask[stats.zero_variance] = True
    out = []
    for r in records:
        pairs = []
        for w, seg in r.words:
            x = (seg.samples.astype(np.float64) - stats.mean[:, None]) / stats.std[:, None]
            x[zero_mask, :] = 0.0
            pairs.append((w, EEGSegment(x.astype(np.float32))))
        out.append(SentenceRecord(r.sentence_id, r.subject, r.task, r.text, pairs))
    return out, stats
