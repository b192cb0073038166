#!/usr/bin/env python3
"""
Synthetic corpora with planted speaker effects, plus a mock recognizer.

Each speaker gets a word error rate drawn from N(base, std) and clipped
to [0, 1], a fundamental frequency and an amplitude. Transcripts are
drawn from a Zipf-shaped unigram distribution mixed with a small set of
words the speaker favors, so the train/test token distributions can be
pulled apart. Durations grow with token count. Optional WAV files carry
the speaker's F0 and amplitude so pitch and intensity extraction
recover them.

The mock recognizer corrupts each reference token independently at the
speaker's rate: 40% substitutions, 30% deletions, 30% insertions after
the token. The expected WER of a speaker is therefore its planted rate.

Output mirrors a real corpus (manifest, LM text, hypotheses) plus a
truth.json with the planted parameters.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from audio_features import synth_tone, write_wav
from corpus import Corpus, Utterance, save_manifest
from errors import ConfigError, DataError
from splitters import Split, child_rng

logger = logging.getLogger(__name__)

SUBSTITUTION_SHARE = 0.4
DELETION_SHARE = 0.3
HARMONICS = (1.0, 0.5, 0.25)
FEMALE_F0_HZ = (160.0, 250.0)
MALE_F0_HZ = (85.0, 150.0)


@dataclass(frozen=True)
class SimConfig:
    n_speakers: int = 20
    utterances_per_speaker: int = 30
    utterances_jitter: int = 0
    min_tokens: int = 5
    max_tokens: int = 15
    seconds_per_token: float = 0.3
    duration_noise_s: float = 0.15
    vocab_size: int = 200
    speaker_tilt: float = 0.3
    favored_words: int = 20
    base_error_rate: float = 0.30
    error_std: float = 0.10
    session_offsets: tuple[float, ...] = ()
    lm_sentences: int = 2000
    write_audio: bool = False
    sample_rate: int = 16000
    amplitude_range: tuple[float, float] = (0.02, 0.2)
    seed: int = 0

    def validate(self):
        if self.n_speakers < 2:
            raise ConfigError(f"n_speakers must be >= 2, got {self.n_speakers}")
        if self.utterances_per_speaker - self.utterances_jitter < 1:
            raise ConfigError("configuration yields speakers with zero utterances")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError("need 1 <= min_tokens <= max_tokens")
        if not 0.0 <= self.base_error_rate <= 1.0:
            raise ConfigError(f"base_error_rate must be in [0, 1], got {self.base_error_rate}")
        if self.error_std < 0:
            raise ConfigError("error_std must be >= 0")
        if self.vocab_size < 2 or not 0 < self.favored_words <= self.vocab_size:
            raise ConfigError("vocab_size must be >= 2 and favored_words in [1, vocab_size]")
        if not 0.0 <= self.speaker_tilt <= 1.0:
            raise ConfigError("speaker_tilt must be in [0, 1]")
        if self.seconds_per_token <= 0:
            raise ConfigError("seconds_per_token must be > 0")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown simulation keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        for key in ("session_offsets", "amplitude_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class SpeakerTruth:
    speaker_id: str
    error_rate: float
    f0_hz: float
    amplitude: float
    gender: str
    n_utterances: int
    total_duration_s: float


@dataclass
class GroundTruth:
    """Planted parameters of a simulated corpus."""

    speakers: dict[str, SpeakerTruth]
    session_offsets: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    @property
    def rates(self) -> dict[str, float]:
        return {s: t.error_rate for s, t in self.speakers.items()}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "speakers": {s: asdict(t) for s, t in sorted(self.speakers.items())},
            "session_offsets": dict(sorted(self.session_offsets.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        try:
            speakers = {s: SpeakerTruth(**t) for s, t in data["speakers"].items()}
        except (KeyError, TypeError) as e:
            raise DataError(f"malformed ground truth: {e}") from e
        return cls(speakers=speakers, session_offsets=dict(data.get("session_offsets", {})),
                   seed=int(data.get("seed", 0)))


@dataclass
class SimulatedCorpus:
    corpus: Corpus
    truth: GroundTruth
    lm_sentences: list[list[str]]


def _vocabulary(size: int) -> list[str]:
    return [f"w{i:04d}" for i in range(size)]


def _zipf(size: int) -> np.ndarray:
    weights = 1.0 / np.arange(1, size + 1)
    return weights / weights.sum()


def generate_corpus(config: SimConfig, audio_dir: Path | None = None) -> SimulatedCorpus:
    """
    Sample a corpus, its LM text and the planted per-speaker parameters.

    With config.write_audio, one WAV per utterance is written under
    audio_dir and the utterance duration is the exact audio length.

    Raises:
        ConfigError: Invalid or infeasible configuration.
    """
    config.validate()
    if config.write_audio and audio_dir is None:
        raise ConfigError("write_audio needs an audio directory")

    words = _vocabulary(config.vocab_size)
    base = _zipf(config.vocab_size)
    rng = child_rng(config.seed, "simkit.speakers")

    rates = np.clip(rng.normal(config.base_error_rate, config.error_std, config.n_speakers), 0.0, 1.0)
    sessions = {f"sess{k + 1:02d}": float(off) for k, off in enumerate(config.session_offsets)}
    session_ids = list(sessions)

    utterances: list[Utterance] = []
    speakers: dict[str, SpeakerTruth] = {}
    for s in range(config.n_speakers):
        speaker_id = f"spk{s + 1:03d}"
        gender = "f" if s % 2 == 0 else "m"
        f0 = float(rng.uniform(*(FEMALE_F0_HZ if gender == "f" else MALE_F0_HZ)))
        amplitude = float(rng.uniform(*config.amplitude_range))
        favored = rng.choice(config.vocab_size, size=config.favored_words, replace=False)
        tilted = (1.0 - config.speaker_tilt) * base
        tilted[favored] += config.speaker_tilt / config.favored_words

        urng = child_rng(config.seed, "simkit.utterances", s)
        jitter = config.utterances_jitter
        n_utts = config.utterances_per_speaker + (int(urng.integers(-jitter, jitter + 1)) if jitter else 0)
        total = 0.0
        for k in range(n_utts):
            n_tokens = int(urng.integers(config.min_tokens, config.max_tokens + 1))
            tokens = tuple(words[i] for i in urng.choice(config.vocab_size, size=n_tokens, p=tilted))
            duration = n_tokens * config.seconds_per_token + urng.normal(0.0, config.duration_noise_s)
            duration = max(duration, 0.2)
            utt_id = f"{speaker_id}-{k + 1:04d}"
            audio_ref = None
            if config.write_audio:
                buf = synth_tone(f0, duration, config.sample_rate, amplitude, HARMONICS)
                audio_ref = Path(audio_dir) / f"{utt_id}.wav"
                write_wav(audio_ref, buf)
                duration = buf.duration_s
            total += duration
            utterances.append(Utterance(
                id=utt_id,
                transcript=tokens,
                duration_s=duration,
                speaker_id=speaker_id,
                session_id=session_ids[k % len(session_ids)] if session_ids else None,
                audio_ref=audio_ref,
                gender=gender,
            ))
        speakers[speaker_id] = SpeakerTruth(
            speaker_id=speaker_id,
            error_rate=float(rates[s]),
            f0_hz=f0,
            amplitude=amplitude,
            gender=gender,
            n_utterances=n_utts,
            total_duration_s=total,
        )

    lm_rng = child_rng(config.seed, "simkit.lm")
    lm_sentences = [
        [words[i] for i in lm_rng.choice(
            config.vocab_size, size=int(lm_rng.integers(config.min_tokens, config.max_tokens + 1)), p=base
        )]
        for _ in range(config.lm_sentences)
    ]

    logger.info("simulated %d utterances from %d speakers", len(utterances), config.n_speakers)
    return SimulatedCorpus(
        corpus=Corpus(utterances=tuple(utterances), name="simulated"),
        truth=GroundTruth(speakers=speakers, session_offsets=sessions, seed=config.seed),
        lm_sentences=lm_sentences,
    )


def _corrupt(tokens: tuple[str, ...], rate: float, vocab: list[str], rng: np.random.Generator) -> list[str]:
    out: list[str] = []
    for tok in tokens:
        if rng.random() >= rate:
            out.append(tok)
            continue
        kind = rng.random()
        if kind < SUBSTITUTION_SHARE:
            choices = [w for w in vocab if w != tok] or [tok + "x"]
            out.append(choices[int(rng.integers(len(choices)))])
        elif kind < SUBSTITUTION_SHARE + DELETION_SHARE:
            continue
        else:
            out.append(tok)
            out.append(vocab[int(rng.integers(len(vocab)))])
    return out


def mock_asr(
    corpus: Corpus,
    split: Split,
    rates: dict[str, float],
    seed: int,
    session_offsets: dict[str, float] | None = None,
) -> dict[str, list[str]]:
    """
    Hypotheses for a split's test utterances under per-speaker error rates.

    Every (split, utterance) pair draws from its own child seed, so the
    result does not depend on which other splits are decoded.

    Raises:
        DataError: A test speaker has no rate.
    """
    session_offsets = session_offsets or {}
    test = [corpus.by_id[i] for i in split.test_ids]
    missing = sorted({u.speaker_id or "<none>" for u in test if u.speaker_id not in rates})
    if missing:
        raise DataError(f"no error rate for speaker(s): {', '.join(missing)}")
    vocab = sorted({tok for utt in corpus.utterances for tok in utt.transcript})

    hyps = {}
    for utt in test:
        rate = rates[utt.speaker_id] + session_offsets.get(utt.session_id, 0.0)
        rate = min(1.0, max(0.0, rate))
        rng = child_rng(seed, f"mock_asr/{split.name}/{utt.id}")
        hyps[utt.id] = _corrupt(utt.transcript, rate, vocab, rng)
    return hyps


def write_truth(truth: GroundTruth, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_truth(path: Path) -> GroundTruth:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read ground truth {path}: {e}") from e
    return GroundTruth.from_dict(data)


def write_simulation(config: SimConfig, out_dir: Path) -> dict[str, Path]:
    """
    Generate a corpus and write manifest.jsonl, lm.txt, truth.json (and wav/).

    Returns the written paths by name.
    """
    out_dir = Path(out_dir)
    sim = generate_corpus(config, audio_dir=out_dir / "wav" if config.write_audio else None)
    paths = {
        "manifest": out_dir / "manifest.jsonl",
        "lm_text": out_dir / "lm.txt",
        "truth": out_dir / "truth.json",
    }
    save_manifest(sim.corpus, paths["manifest"])
    paths["lm_text"].write_text(
        "".join(" ".join(s) + "\n" for s in sim.lm_sentences), encoding="utf-8", newline="\n"
    )
    write_truth(sim.truth, paths["truth"])
    return paths
