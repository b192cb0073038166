#!/usr/bin/env python3
"""
Pytest configuration and shared fixtures.
"""

import json
import sys
from pathlib import Path

import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from corpus import Corpus, Utterance
from simkit import SimConfig, write_simulation


def make_corpus(specs, name: str = "test") -> Corpus:
    """
    Build a corpus from (id, transcript, duration[, speaker[, session]]) tuples.
    """
    utterances = []
    for row in specs:
        utt_id, text, duration = row[:3]
        speaker = row[3] if len(row) > 3 else None
        session = row[4] if len(row) > 4 else None
        utterances.append(Utterance(
            id=utt_id,
            transcript=tuple(text.split()),
            duration_s=float(duration),
            speaker_id=speaker,
            session_id=session,
        ))
    return Corpus(utterances=tuple(utterances), name=name)


def write_manifest(path: Path, records: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def small_corpus():
    """Three speakers, two sessions, ten utterances."""
    return make_corpus([
        ("u01", "ka nga def", 2.0, "spk1", "s1"),
        ("u02", "ka ka nga", 3.0, "spk1", "s2"),
        ("u03", "def ghi", 1.5, "spk1", "s1"),
        ("u04", "nga ghi jkl", 2.5, "spk2", "s2"),
        ("u05", "jkl jkl", 1.0, "spk2", "s1"),
        ("u06", "ka def jkl mno", 4.0, "spk2", "s2"),
        ("u07", "mno pqr", 2.0, "spk3", "s1"),
        ("u08", "pqr pqr ka", 3.5, "spk3", "s2"),
        ("u09", "nga mno", 1.5, "spk3", "s1"),
        ("u10", "def def ghi", 2.0, "spk3", "s2"),
    ])


@pytest.fixture
def toy_sentences():
    """LM text 'a b' / 'a c' with hand-derived Witten-Bell probabilities."""
    return [["a", "b"], ["a", "c"]]


@pytest.fixture
def sim_config():
    """Small simulated corpus that runs every text-based strategy quickly."""
    return SimConfig(
        n_speakers=4,
        utterances_per_speaker=12,
        min_tokens=4,
        max_tokens=10,
        vocab_size=60,
        favored_words=8,
        speaker_tilt=0.5,
        lm_sentences=300,
        session_offsets=(0.0, 0.05),
        seed=11,
    )


@pytest.fixture
def sim_dir(tmp_path, sim_config):
    """manifest.jsonl, lm.txt and truth.json of a simulated corpus."""
    paths = write_simulation(sim_config, tmp_path / "sim")
    return paths


@pytest.fixture
def config_file(tmp_path, sim_dir):
    """A config file wired to the simulated corpus and the mock recognizer."""
    config = tmp_path / "config.yaml"
    config.write_text(f"""
workspace: {tmp_path}
output_dir: out
manifest: {sim_dir['manifest']}
lm_text: {sim_dir['lm_text']}
seed: 7
split:
  adversarial_restarts: 2
  adversarial_max_stall: 300
hypotheses:
  mock_asr: {sim_dir['truth']}
plot: false
""")
    return config


@pytest.fixture
def build_corpus():
    """The make_corpus helper, for tests that need their own corpora."""
    return make_corpus


@pytest.fixture
def manifest_writer():
    """The write_manifest helper."""
    return write_manifest
