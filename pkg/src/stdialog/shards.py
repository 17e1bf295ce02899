"""Corpus persistence: JSON manifest + checksummed float32 binary shards.

Waveforms are stored little-endian float32 back to back in a flat shard
file; the manifest records per-turn (offset, length) in samples plus a
sha256 over the shard bytes, so truncation or corruption is detected
before any dialog is materialized.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dialog, Turn, WordAlignment

MANIFEST_VERSION = 1
SHARD_NAME = "shard-000.bin"


class CorpusFormatError(ValueError):
    pass


@dataclass
class CorpusManifest:
    version: int
    sample_rate: int
    max_turn_seconds: float
    shard_file: str
    shard_checksum: str
    shard_samples: int
    dialogs: list   # records with turn offsets


@dataclass
class Corpus:
    """Loaded, read-only corpus handle."""
    manifest: CorpusManifest
    dialogs: list

    @property
    def sample_rate(self) -> int:
        return self.manifest.sample_rate

    def vocabulary_words(self) -> list:
        seen = {}
        for d in self.dialogs:
            for t in d.turns:
                for w in t.words:
                    seen[w.word] = True
        return sorted(seen)

    def all_samples(self, k: int) -> list:
        from .corpus import build_samples
        out = []
        for d in self.dialogs:
            out.extend(build_samples(d, k))
        return out


def corpus_in_memory(dialogs: list, sample_rate: int | None = None,
                     max_turn_seconds: float = 10.0) -> Corpus:
    """Wrap generated dialogs in a corpus handle without touching disk."""
    if sample_rate is None:
        if not dialogs or not dialogs[0].turns:
            raise ValueError("cannot infer sample_rate from an empty corpus")
        sample_rate = dialogs[0].turns[0].sample_rate
    manifest = CorpusManifest(
        version=MANIFEST_VERSION, sample_rate=int(sample_rate),
        max_turn_seconds=float(max_turn_seconds), shard_file="",
        shard_checksum="", shard_samples=0, dialogs=[])
    return Corpus(manifest=manifest, dialogs=list(dialogs))


def write_shards(dialogs: list, manifest_path, sample_rate: int | None = None,
                 max_turn_seconds: float = 10.0) -> CorpusManifest:
    """Write dialogs next to ``manifest_path``; returns the manifest."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    if sample_rate is None:
        if not dialogs or not dialogs[0].turns:
            raise ValueError("cannot infer sample_rate from an empty corpus")
        sample_rate = dialogs[0].turns[0].sample_rate
    chunks = []
    records = []
    offset = 0
    for d in dialogs:
        turn_records = []
        for t in d.turns:
            wav = np.ascontiguousarray(t.waveform, dtype="<f4")
            chunks.append(wav.tobytes())
            turn_records.append({
                "turn_index": t.turn_index,
                "offset": offset,
                "length": int(wav.size),
                "words": [[w.word, w.start_time, w.end_time] for w in t.words],
            })
            offset += int(wav.size)
        records.append({"dialog_id": d.dialog_id, "turns": turn_records})
    blob = b"".join(chunks)
    shard_path = manifest_path.parent / SHARD_NAME
    shard_path.write_bytes(blob)
    manifest = CorpusManifest(
        version=MANIFEST_VERSION,
        sample_rate=int(sample_rate),
        max_turn_seconds=float(max_turn_seconds),
        shard_file=SHARD_NAME,
        shard_checksum=hashlib.sha256(blob).hexdigest(),
        shard_samples=offset,
        dialogs=records)
    manifest_path.write_text(json.dumps({
        "version": manifest.version,
        "sample_rate": manifest.sample_rate,
        "max_turn_seconds": manifest.max_turn_seconds,
        "shard_file": manifest.shard_file,
        "shard_checksum": manifest.shard_checksum,
        "shard_samples": manifest.shard_samples,
        "dialogs": manifest.dialogs,
    }, indent=1))
    return manifest


def load_corpus(manifest_path) -> Corpus:
    """Load and verify a corpus; nothing is returned on any integrity error."""
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CorpusFormatError(f"cannot read manifest {manifest_path}: {e}")
    version = raw.get("version")
    if version != MANIFEST_VERSION:
        raise CorpusFormatError(
            f"manifest version {version!r} not supported "
            f"(expected {MANIFEST_VERSION})")
    shard_path = manifest_path.parent / raw["shard_file"]
    try:
        blob = shard_path.read_bytes()
    except OSError as e:
        raise CorpusFormatError(f"cannot read shard {shard_path}: {e}")
    if len(blob) != raw["shard_samples"] * 4:
        raise CorpusFormatError(
            f"shard {shard_path.name} is {len(blob)} bytes, expected "
            f"{raw['shard_samples'] * 4} (truncated or padded)")
    checksum = hashlib.sha256(blob).hexdigest()
    if checksum != raw["shard_checksum"]:
        raise CorpusFormatError(
            f"shard {shard_path.name} checksum mismatch: {checksum} != "
            f"{raw['shard_checksum']}")
    flat = np.frombuffer(blob, dtype="<f4")
    sr = int(raw["sample_rate"])
    dialogs = []
    for rec in raw["dialogs"]:
        turns = []
        for tr in rec["turns"]:
            lo, n = tr["offset"], tr["length"]
            if lo + n > flat.size:
                raise CorpusFormatError(
                    f"dialog {rec['dialog_id']} turn {tr['turn_index']}: "
                    f"offset {lo}+{n} outside shard of {flat.size} samples")
            wav = flat[lo:lo + n].copy()
            words = [WordAlignment(w, float(s), float(e))
                     for w, s, e in tr["words"]]
            turns.append(Turn(turn_index=int(tr["turn_index"]), waveform=wav,
                              words=words, sample_rate=sr))
        dialogs.append(Dialog(dialog_id=rec["dialog_id"], turns=turns))
    manifest = CorpusManifest(
        version=version, sample_rate=sr,
        max_turn_seconds=float(raw["max_turn_seconds"]),
        shard_file=raw["shard_file"], shard_checksum=raw["shard_checksum"],
        shard_samples=int(raw["shard_samples"]), dialogs=raw["dialogs"])
    return Corpus(manifest=manifest, dialogs=dialogs)
