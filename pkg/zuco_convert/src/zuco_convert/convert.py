"""ZuCo .mat -> portable corpus conversion.

Extracts word-level raw EEG synchronized with eye-tracking fixations:
each word's fixations are concatenated along time in fixation order,
words without fixation data are dropped (logged), sentences with no
fixated word are skipped (logged), and the Cz reference channel is
removed, leaving 104 channels. Output blobs are written atomically, and
re-running a conversion produces byte-identical files.

Corpus format (must stay in lockstep with the decoder package's loader):
manifest.json plus one "E2TB" blob per record, little-endian:
magic "E2TB" | u32 version=1 | u32 M | M x { u32 T | C*T float32,
channel-major }.
"""

from __future__ import annotations

import json
import logging
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import REFERENCE_CHANNEL, ZUCO_CHANNELS
from .reader import ZucoReadError, deref, is_empty, is_reference, iter_refs, read_string, struct_field

log = logging.getLogger(__name__)

BLOB_MAGIC = b"E2TB"
BLOB_VERSION = 1
TASK_TAGS = {("1.0", "NR"): "NR-v1", ("2.0", "NR"): "NR-v2", ("1.0", "TSR"): "TSR-v1"}
SUBJECT_PATTERN = re.compile(r"results([A-Za-z0-9]+?)[_.]")


class ConvertError(Exception):
    pass


class IoError(ConvertError):
    pass


@dataclass
class ZucoSource:
    version: str  # "1.0" | "2.0"
    task: str  # "NR" | "TSR"
    files: list = field(default_factory=list)
    channel_names: list = field(default_factory=lambda: list(ZUCO_CHANNELS))
    sampling_rate_hz: float = 500.0

    def __post_init__(self):
        if (self.version, self.task) not in TASK_TAGS:
            raise ConvertError(f"unsupported dataset/task combination {self.version}/{self.task}")
        self.files = [Path(f) for f in self.files]

    @property
    def task_tag(self) -> str:
        return TASK_TAGS[(self.version, self.task)]

    @classmethod
    def from_dir(cls, directory, version: str, task: str) -> "ZucoSource":
        directory = Path(directory)
        files = sorted(p for p in directory.glob("*.mat") if f"_{task}" in p.name)
        if not files:
            raise IoError(f"no *_{task}*.mat files under {directory}")
        return cls(version=version, task=task, files=files)


def subject_from_filename(path: Path) -> str:
    m = SUBJECT_PATTERN.search(path.name)
    if m:
        return m.group(1)
    return path.stem.split("_")[0]


def _as_channel_major(arr: np.ndarray, n_channels: int, where: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        raise ZucoReadError(f"{where}: fixation array is one-dimensional")
    if arr.ndim != 2:
        raise ZucoReadError(f"{where}: fixation array has {arr.ndim} dimensions")
    if arr.shape[1] == n_channels:
        return arr.T  # stored time-major
    if arr.shape[0] == n_channels:
        return arr
    raise ZucoReadError(f"{where}: no axis matches the {n_channels}-channel roster, shape {arr.shape}")


def _fixation_segments(f, node, n_channels, where):
    """Fixation matrices of one word, channel-major, in fixation order."""
    if node is None or is_empty(node):
        return []
    if is_reference(node):
        out = []
        for i, cell in enumerate(iter_refs(f, node)):
            if is_empty(cell):
                continue
            out.append(_as_channel_major(np.asarray(cell), n_channels, f"{where} fixation {i}"))
        return out
    return [_as_channel_major(np.asarray(node), n_channels, where)]


def read_sentences(path: Path, channel_names: list):
    """Yield (sentence_index, text, [(word, channel-major segment)]) per sentence.

    Words whose fixations are missing are dropped; fixations of one word
    are concatenated along the time axis in order.
    """
    import h5py

    n_channels = len(channel_names)
    try:
        f = h5py.File(path, "r")
    except OSError as e:
        raise IoError(f"cannot open {path}: {e}") from e
    with f:
        if "sentenceData" not in f:
            raise ZucoReadError(f"{path.name}: no sentenceData struct")
        sd = f["sentenceData"]
        contents = struct_field(f, sd, "content")
        words_field = struct_field(f, sd, "word")
        if contents is None or words_field is None:
            raise ZucoReadError(f"{path.name}: sentenceData lacks content/word fields")
        content_refs = list(iter_refs(f, contents))
        word_refs = np.asarray(words_field).flatten()
        for i, content_node in enumerate(content_refs):
            text = read_string(content_node).strip()
            where = f"{path.name} sentence {i}"
            word_struct = deref(f, word_refs[i])
            if is_empty(word_struct):
                log.warning("%s: no word data, skipped", where)
                continue
            wc = struct_field(f, word_struct, "content")
            we = struct_field(f, word_struct, "rawEEG")
            if wc is None or we is None:
                log.warning("%s: word struct lacks content/rawEEG, skipped", where)
                continue
            word_nodes = list(iter_refs(f, wc))
            eeg_refs = np.asarray(we).flatten()
            pairs = []
            for j, word_node in enumerate(word_nodes):
                token = read_string(word_node).strip()
                eeg_node = deref(f, eeg_refs[j]) if j < len(eeg_refs) else None
                segs = _fixation_segments(f, eeg_node, n_channels, f"{where} word {j}")
                if not segs:
                    log.info("%s: word %d (%r) has no fixation data, dropped", where, j, token)
                    continue
                pairs.append((token, np.concatenate(segs, axis=1)))
            if not pairs:
                log.warning("%s: zero fixated words, skipped", where)
                continue
            yield i, text, pairs


def encode_blob(segments: list) -> bytes:
    parts = [BLOB_MAGIC, struct.pack("<II", BLOB_VERSION, len(segments))]
    for seg in segments:
        parts.append(struct.pack("<I", seg.shape[1]))
        parts.append(np.ascontiguousarray(seg, dtype="<f4").tobytes(order="C"))
    return b"".join(parts)


def _write_atomic(path: Path, payload: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def convert(source: ZucoSource, out_dir) -> Path:
    """Convert all files of a source into one corpus directory."""
    out_dir = Path(out_dir)
    (out_dir / "blobs").mkdir(parents=True, exist_ok=True)
    cz = source.channel_names.index(REFERENCE_CHANNEL) if REFERENCE_CHANNEL in source.channel_names else -1
    kept_channels = [c for c in source.channel_names if c != REFERENCE_CHANNEL]
    tag = source.task_tag
    subjects = []
    entries = []
    for path in source.files:
        subject = subject_from_filename(path)
        if subject not in subjects:
            subjects.append(subject)
        for idx, text, pairs in read_sentences(path, source.channel_names):
            segments = []
            for _, seg in pairs:
                if cz >= 0:
                    seg = np.delete(seg, cz, axis=0)
                segments.append(seg)
            sentence_id = f"s{idx:04d}"
            blob_path = f"blobs/{tag}_{subject}_{sentence_id}.e2tb"
            _write_atomic(out_dir / blob_path, encode_blob(segments))
            entries.append({
                "sentence_id": sentence_id,
                "task": tag,
                "subject": subject,
                "text": text,
                "blob_path": blob_path,
            })
    manifest = {
        "name": f"zuco-{source.version}-{source.task}",
        "format_version": 1,
        "channel_names": kept_channels,
        "sampling_rate_hz": source.sampling_rate_hz,
        "subjects": subjects,
        "records": entries,
    }
    _write_atomic(out_dir / "manifest.json",
                  json.dumps(manifest, indent=2, ensure_ascii=False).encode("utf-8"))
    log.info("converted %d records from %d files into %s", len(entries), len(source.files), out_dir)
    return out_dir
