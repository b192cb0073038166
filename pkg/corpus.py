#!/usr/bin/env python3
"""
Corpus data model, JSON Lines manifests, and descriptive statistics.

A manifest holds one JSON object per utterance:

    {"id": "u1", "speaker": "spk01", "session": "2019-06-01",
     "audio": "wav/u1.wav", "duration_s": 3.2, "transcript": "ka nga def",
     "gender": "f", "features": {"avg_pitch_hz": 181.0}}

`id` and `transcript` are required, plus `duration_s` or `audio` (the
duration is then read from the file header). Unknown keys are ignored.
Audio paths are resolved relative to the manifest's directory.
"""

import json
import logging
import math
from collections import Counter, defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import IO, Literal

import numpy as np
import soundfile as sf

from errors import DataError, ManifestError
from text_features import tokenize

logger = logging.getLogger(__name__)

GroupKey = Literal["speaker", "session"]

DURATION_TOLERANCE_S = 0.01

_GROUP_ATTR = {"speaker": "speaker_id", "session": "session_id"}


@dataclass(frozen=True)
class FeatureVector:
    """Per-utterance features used by heuristic splits and regression."""

    duration_s: float
    avg_pitch_hz: float | None
    avg_intensity_db: float | None
    n_tokens: int
    n_types: int
    perplexity: float | None
    oov_rate: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureVector":
        return cls(**{f.name: data.get(f.name) for f in fields(cls)})


FEATURE_FIELDS = tuple(f.name for f in fields(FeatureVector))


@dataclass(frozen=True)
class Utterance:
    """One audio segment and its transcript."""

    id: str
    transcript: tuple[str, ...]
    duration_s: float
    speaker_id: str | None = None
    session_id: str | None = None
    audio_ref: Path | None = None
    gender: str | None = None
    precomputed: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if not self.id:
            raise DataError("utterance id must be non-empty")
        if not (self.duration_s > 0 and math.isfinite(self.duration_s)):
            raise DataError(f"utterance {self.id}: duration_s must be > 0, got {self.duration_s}")
        if not self.transcript:
            raise DataError(f"utterance {self.id}: transcript has no tokens")
        unknown = set(self.precomputed) - set(FEATURE_FIELDS)
        if unknown:
            raise DataError(f"utterance {self.id}: unknown precomputed features {sorted(unknown)}")

    def group(self, group_by: GroupKey) -> str | None:
        """Get the speaker or session this utterance belongs to."""
        return getattr(self, _GROUP_ATTR[group_by])


@dataclass(frozen=True)
class Corpus:
    """Validated, immutable utterance collection."""

    utterances: tuple[Utterance, ...]
    lm_text_ref: Path | None = None
    name: str = "corpus"

    def __post_init__(self):
        if not self.utterances:
            raise DataError("corpus has no utterances")
        seen: set[str] = set()
        for utt in self.utterances:
            if utt.id in seen:
                raise DataError(f"duplicate utterance id: {utt.id}")
            seen.add(utt.id)

    def __len__(self) -> int:
        return len(self.utterances)

    @cached_property
    def by_id(self) -> dict[str, Utterance]:
        return {utt.id: utt for utt in self.utterances}

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(utt.id for utt in self.utterances)

    @cached_property
    def total_duration(self) -> float:
        return math.fsum(utt.duration_s for utt in self.utterances)

    @cached_property
    def grouping(self) -> tuple[str, ...]:
        """Grouping keys populated for every utterance."""
        return tuple(
            key for key in ("speaker", "session")
            if all(utt.group(key) is not None for utt in self.utterances)
        )

    @property
    def heuristic_only(self) -> bool:
        """True when no held-out-group strategy is possible."""
        return not self.grouping

    def duration_of(self, ids: Iterable[str]) -> float:
        by_id = self.by_id
        return math.fsum(by_id[i].duration_s for i in ids)

    def groups(self, group_by: GroupKey) -> dict[str, list[str]]:
        """Map group -> utterance ids (in corpus order); requires a full key."""
        missing = [utt.id for utt in self.utterances if utt.group(group_by) is None]
        if missing:
            raise DataError(
                f"{len(missing)} utterance(s) lack a {group_by} id: {', '.join(missing[:20])}"
            )
        groups: dict[str, list[str]] = defaultdict(list)
        for utt in self.utterances:
            groups[utt.group(group_by)].append(utt.id)
        return dict(sorted(groups.items()))


@dataclass(frozen=True)
class DescriptiveStats:
    """Per-group duration statistics plus transcript word/type counts."""

    group_by: str
    n_groups: int
    total_duration_s: float
    mean_duration_per_group: float
    std_duration_per_group: float
    range_duration_per_group: float
    n_words: int
    n_types: int
    std_defined: bool = True
    gender_counts: dict = field(default_factory=dict, hash=False)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parse_record(record: dict, line_no: int, base_dir: Path, check_audio: bool) -> Utterance:
    if not isinstance(record, dict):
        raise ManifestError("record is not a JSON object", line_no)
    utt_id = record.get("id")
    if not isinstance(utt_id, str) or not utt_id:
        raise ManifestError("missing or empty 'id'", line_no)
    text = record.get("transcript")
    if not isinstance(text, str):
        raise ManifestError(f"{utt_id}: missing 'transcript'", line_no)

    audio_ref = None
    if record.get("audio"):
        audio_ref = Path(record["audio"])
        if not audio_ref.is_absolute():
            audio_ref = base_dir / audio_ref

    duration = record.get("duration_s")
    audio_duration = None
    if audio_ref is not None and check_audio:
        if audio_ref.exists():
            info = sf.info(str(audio_ref))
            audio_duration = info.frames / info.samplerate
        else:
            logger.warning("audio for %s not found: %s", utt_id, audio_ref)

    if duration is None:
        if audio_duration is None:
            raise ManifestError(f"{utt_id}: needs 'duration_s' or a readable 'audio' file", line_no)
        duration = audio_duration
    elif not isinstance(duration, (int, float)) or isinstance(duration, bool):
        raise ManifestError(f"{utt_id}: 'duration_s' must be a number", line_no)
    elif audio_duration is not None and abs(duration - audio_duration) > DURATION_TOLERANCE_S:
        raise ManifestError(
            f"{utt_id}: duration_s {duration} disagrees with audio length {audio_duration:.3f}s",
            line_no,
        )

    try:
        return Utterance(
            id=utt_id,
            transcript=tuple(tokenize(text)),
            duration_s=float(duration),
            speaker_id=record.get("speaker"),
            session_id=record.get("session"),
            audio_ref=audio_ref,
            gender=record.get("gender"),
            precomputed=dict(record.get("features") or {}),
        )
    except DataError as e:
        raise ManifestError(str(e), line_no) from e


def parse_manifest(
    stream: Iterable[str],
    base_dir: Path | None = None,
    lm_text_ref: Path | None = None,
    name: str = "corpus",
    check_audio: bool = True,
) -> Corpus:
    """
    Parse a JSON Lines manifest into a Corpus.

    Args:
        stream: Lines of the manifest (a file object works).
        base_dir: Directory relative audio paths resolve against.
        lm_text_ref: External LM text to attach to the corpus.
        name: Corpus name used in reports.
        check_audio: Read audio headers to fill/verify durations.

    Raises:
        ManifestError: Malformed line, duplicate id, or invariant violation.
    """
    base_dir = base_dir or Path(".")
    utterances: list[Utterance] = []
    seen: dict[str, int] = {}
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"malformed JSON: {e.msg}", line_no) from e
        utt = _parse_record(record, line_no, base_dir, check_audio)
        if utt.id in seen:
            raise ManifestError(f"duplicate id {utt.id!r} (first seen on line {seen[utt.id]})", line_no)
        seen[utt.id] = line_no
        utterances.append(utt)

    if not utterances:
        raise ManifestError("manifest contains no records")
    corpus = Corpus(utterances=tuple(utterances), lm_text_ref=lm_text_ref, name=name)
    if corpus.heuristic_only:
        logger.warning(
            "corpus %s has no complete speaker or session key: random/heuristic/adversarial only",
            name,
        )
    return corpus


def load_manifest(path: Path, lm_text_ref: Path | None = None, check_audio: bool = True) -> Corpus:
    """Read a manifest file; audio paths resolve against its directory."""
    with open(path, "r", encoding="utf-8") as f:
        return parse_manifest(
            f,
            base_dir=path.parent,
            lm_text_ref=lm_text_ref,
            name=path.stem,
            check_audio=check_audio,
        )


def utterance_record(utt: Utterance, base_dir: Path | None = None) -> dict:
    """Convert an utterance back into its manifest record."""
    record: dict = {"id": utt.id}
    if utt.speaker_id is not None:
        record["speaker"] = utt.speaker_id
    if utt.session_id is not None:
        record["session"] = utt.session_id
    if utt.audio_ref is not None:
        audio = utt.audio_ref
        if base_dir is not None:
            try:
                audio = audio.resolve().relative_to(Path(base_dir).resolve())
            except ValueError:
                audio = audio.resolve()
        record["audio"] = audio.as_posix()
    record["duration_s"] = utt.duration_s
    record["transcript"] = " ".join(utt.transcript)
    if utt.gender is not None:
        record["gender"] = utt.gender
    if utt.precomputed:
        record["features"] = dict(sorted(utt.precomputed.items()))
    return record


def dump_manifest(corpus: Corpus, stream: IO[str], base_dir: Path | None = None):
    """Write a corpus as JSON Lines, one record per utterance, in order."""
    for utt in corpus.utterances:
        stream.write(json.dumps(utterance_record(utt, base_dir), ensure_ascii=False) + "\n")


def save_manifest(corpus: Corpus, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        dump_manifest(corpus, f, base_dir=path.parent)


def group_durations(corpus: Corpus, group_by: GroupKey) -> dict[str, float]:
    """Total duration per speaker/session."""
    return {
        group: corpus.duration_of(ids)
        for group, ids in corpus.groups(group_by).items()
    }


def corpus_stats(corpus: Corpus, group_by: GroupKey) -> DescriptiveStats:
    """
    Descriptive statistics over per-group total durations.

    The standard deviation is the sample estimate (n - 1). With a single
    group it is undefined and reported as 0 with std_defined=False.
    """
    totals = np.array(list(group_durations(corpus, group_by).values()), dtype=float)
    std_defined = len(totals) > 1
    words = Counter(tok for utt in corpus.utterances for tok in utt.transcript)

    genders: dict[str, set[str]] = defaultdict(set)
    for utt in corpus.utterances:
        if utt.gender is not None:
            genders[utt.gender].add(utt.group(group_by))

    return DescriptiveStats(
        group_by=group_by,
        n_groups=len(totals),
        total_duration_s=corpus.total_duration,
        mean_duration_per_group=float(totals.mean()),
        std_duration_per_group=float(totals.std(ddof=1)) if std_defined else 0.0,
        range_duration_per_group=float(totals.max() - totals.min()),
        n_words=sum(words.values()),
        n_types=len(words),
        std_defined=std_defined,
        gender_counts={g: len(members) for g, members in sorted(genders.items())},
    )
