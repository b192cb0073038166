#!/usr/bin/env python3
"""
Acoustic features of an utterance: duration, average pitch, average intensity.

Pitch is tracked frame by frame with a normalized cross-correlation
function (40 ms window, 10 ms hop, 50-500 Hz search band). A frame is voiced
when its highest correlation peak reaches the voicing threshold; among the
peaks close to that maximum the shortest lag wins, which keeps pure tones
off their sub-harmonics. The utterance pitch is the mean F0 over voiced
frames.

Intensity is 10*log10(mean(x^2) / 4e-10): sample values are read as
pressure in Pascals against the 20 uPa reference. This is a convention
that puts ordinary recordings in the 55-80 dB range, not a calibration.
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view

from errors import AudioFormatError, DataError, WavParseError

logger = logging.getLogger(__name__)

PITCH_WINDOW_S = 0.040
PITCH_HOP_S = 0.010
PITCH_FLOOR_HZ = 50.0
PITCH_CEILING_HZ = 500.0
VOICING_THRESHOLD = 0.3
OCTAVE_TOLERANCE = 0.9  # peaks within this fraction of the best compete on lag
INTENSITY_REFERENCE = 4e-10  # (20 uPa)^2
INTENSITY_FLOOR_DB = -20.0

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE
_SUPPORTED = {(_WAVE_FORMAT_PCM, 16), (_WAVE_FORMAT_IEEE_FLOAT, 32)}


@dataclass(frozen=True)
class AudioBuffer:
    """Mono signal with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("audio buffer must be a non-empty 1-D array")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class AcousticFeatures:
    duration_s: float
    avg_pitch_hz: float | None
    avg_intensity_db: float

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "avg_pitch_hz": self.avg_pitch_hz,
            "avg_intensity_db": self.avg_intensity_db,
        }


def _check_wav_structure(path: Path):
    """Walk the RIFF chunks; reject unsupported codecs and truncated data."""
    size = path.stat().st_size
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) < 12:
            raise WavParseError("file too short for a RIFF header", len(header))
        riff, _, wave = struct.unpack("<4sI4s", header)
        if riff != b"RIFF" or wave != b"WAVE":
            raise AudioFormatError(f"{path.name}: not a RIFF/WAVE file")

        offset = 12
        fmt = None
        while True:
            chunk = f.read(8)
            if len(chunk) < 8:
                raise WavParseError(f"{path.name}: no data chunk before end of file", offset + len(chunk))
            chunk_id, chunk_size = struct.unpack("<4sI", chunk)
            body_offset = offset + 8
            if chunk_id == b"fmt ":
                body = f.read(chunk_size)
                if len(body) < 16:
                    raise WavParseError(f"{path.name}: truncated fmt chunk", body_offset + len(body))
                tag, _, _, _, _, bits = struct.unpack("<HHIIHH", body[:16])
                if tag == _WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                    tag = struct.unpack("<H", body[24:26])[0]
                fmt = (tag, bits)
                if fmt not in _SUPPORTED:
                    raise AudioFormatError(
                        f"{path.name}: unsupported codec (format tag {tag:#06x}, {bits} bits); "
                        "expected 16-bit PCM or 32-bit float"
                    )
            elif chunk_id == b"data":
                if fmt is None:
                    raise WavParseError(f"{path.name}: data chunk before fmt chunk", offset)
                available = size - body_offset
                if chunk_size > available:
                    raise WavParseError(
                        f"{path.name}: data chunk declares {chunk_size} bytes, only {available} present",
                        size,
                    )
                return
            else:
                f.seek(chunk_size + (chunk_size & 1), 1)
            offset = body_offset + chunk_size + (chunk_size & 1)
            if offset > size:
                raise WavParseError(f"{path.name}: chunk {chunk_id!r} runs past end of file", size)


def read_wav(path: Path) -> AudioBuffer:
    """
    Read a 16-bit PCM or 32-bit float WAV file as a mono buffer.

    Multichannel audio is mixed down by averaging channels.

    Raises:
        AudioFormatError: Not RIFF/WAVE, or a codec other than PCM16/float32.
        WavParseError: Truncated or structurally broken file.
    """
    path = Path(path)
    _check_wav_structure(path)
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except sf.LibsndfileError as e:
        raise WavParseError(f"{path.name}: {e}", 0) from e
    samples = np.clip(data.mean(axis=1), -1.0, 1.0)
    return AudioBuffer(samples=samples, sample_rate=int(sample_rate))


def write_wav(path: Path, buf: AudioBuffer, subtype: str = "PCM_16"):
    """Write a mono buffer as PCM_16 or FLOAT WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), buf.samples, buf.sample_rate, subtype=subtype, format="WAV")


def synth_tone(
    f0_hz: float,
    duration_s: float,
    sample_rate: int = 16000,
    amplitude: float = 0.1,
    harmonics: tuple[float, ...] = (1.0,),
) -> AudioBuffer:
    """
    Harmonic tone: sum_k harmonics[k] * sin(2*pi*(k+1)*f0*t), scaled so the
    fundamental has the given amplitude.
    """
    n = max(1, int(round(duration_s * sample_rate)))
    t = np.arange(n) / sample_rate
    signal = np.zeros(n)
    for k, weight in enumerate(harmonics, start=1):
        signal += weight * np.sin(2 * np.pi * k * f0_hz * t)
    return AudioBuffer(samples=np.clip(amplitude * signal, -1.0, 1.0), sample_rate=sample_rate)


def pitch_track(
    buf: AudioBuffer,
    window_s: float = PITCH_WINDOW_S,
    hop_s: float = PITCH_HOP_S,
    floor_hz: float = PITCH_FLOOR_HZ,
    ceiling_hz: float = PITCH_CEILING_HZ,
    voicing_threshold: float = VOICING_THRESHOLD,
) -> np.ndarray:
    """Frame-wise F0 in Hz; NaN marks unvoiced frames."""
    sr = buf.sample_rate
    n = int(round(window_s * sr))
    hop = max(1, int(round(hop_s * sr)))
    if buf.samples.size < n:
        raise DataError(
            f"buffer of {buf.samples.size} samples is shorter than one {window_s * 1000:.0f} ms window"
        )
    min_lag = max(2, int(math.floor(sr / ceiling_hz)))
    max_lag = int(math.ceil(sr / floor_hz))
    if max_lag + 1 >= n:
        raise DataError("analysis window too short for the pitch floor")

    frames = sliding_window_view(buf.samples, n)[::hop]
    energy = np.concatenate(
        [np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1
    )
    lags = np.arange(min_lag - 1, max_lag + 2)
    nccf = np.zeros((frames.shape[0], lags.size))
    for j, lag in enumerate(lags):
        num = np.einsum("ij,ij->i", frames[:, : n - lag], frames[:, lag:])
        denom = np.sqrt(energy[:, n - lag] * (energy[:, n] - energy[:, lag]))
        np.divide(num, denom, out=nccf[:, j], where=denom > 0)

    inner = nccf[:, 1:-1]
    is_peak = (inner >= nccf[:, :-2]) & (inner > nccf[:, 2:])
    peak_vals = np.where(is_peak, inner, -np.inf)
    best = peak_vals.max(axis=1)

    f0 = np.full(frames.shape[0], np.nan)
    for i in np.flatnonzero(best >= voicing_threshold):
        k = int(np.flatnonzero(peak_vals[i] >= OCTAVE_TOLERANCE * best[i])[0]) + 1
        a, b, c = nccf[i, k - 1], nccf[i, k], nccf[i, k + 1]
        curvature = a - 2 * b + c
        delta = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
        f0[i] = np.clip(sr / (lags[k] + delta), floor_hz, ceiling_hz)
    return f0


def estimate_pitch(buf: AudioBuffer, **params) -> float | None:
    """Mean F0 over voiced frames, or None when nothing is voiced."""
    track = pitch_track(buf, **params)
    voiced = track[~np.isnan(track)]
    if voiced.size == 0:
        return None
    return float(voiced.mean())


def estimate_intensity(buf: AudioBuffer, floor_db: float = INTENSITY_FLOOR_DB) -> float:
    """Average intensity in dB re 20 uPa; digital silence returns floor_db."""
    mean_square = float(np.mean(np.square(buf.samples, dtype=np.float64)))
    if mean_square <= 0.0:
        return floor_db
    return max(floor_db, 10.0 * math.log10(mean_square / INTENSITY_REFERENCE))


def extract_acoustic(path: Path, audio_params: dict | None = None) -> AcousticFeatures:
    """Read one WAV file and compute its acoustic features."""
    params = dict(audio_params or {})
    floor_db = params.pop("intensity_floor_db", INTENSITY_FLOOR_DB)
    pitch_params = {
        "window_s": params.get("pitch_window_s", PITCH_WINDOW_S),
        "hop_s": params.get("pitch_hop_s", PITCH_HOP_S),
        "floor_hz": params.get("pitch_floor_hz", PITCH_FLOOR_HZ),
        "ceiling_hz": params.get("pitch_ceiling_hz", PITCH_CEILING_HZ),
        "voicing_threshold": params.get("voicing_threshold", VOICING_THRESHOLD),
    }
    buf = read_wav(path)
    try:
        pitch = estimate_pitch(buf, **pitch_params)
    except DataError:
        logger.warning("%s: too short for pitch analysis, pitch left undefined", Path(path).name)
        pitch = None
    return AcousticFeatures(
        duration_s=buf.duration_s,
        avg_pitch_hz=pitch,
        avg_intensity_db=estimate_intensity(buf, floor_db),
    )
