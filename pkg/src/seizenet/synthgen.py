"""Deterministic synthetic EEG corpus generation.

Background is per-channel pink noise; each subject carries a rhythmic burst
signature (a fixed center frequency in the theta-alpha range) that is added
at annotated intervals with a large amplitude gain, so seizure windows are
separable by band power and training-side overfit tests have headroom.
All randomness flows from one seed through named substreams, so corpora
regenerate bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eegio import Recording, SeizureInterval, write_edf
from .errors import SpecError
from .nn.checkpoint import config_hash
from .rand import Rng

MIN_SEIZURE_GAP_S = 16.0


@dataclass(frozen=True)
class CorpusSpec:
    subjects: int = 4
    records_per_subject: int = 3
    record_s: float = 320.0
    seizures_per_record: int = 3
    seizure_len_s: tuple[float, float] = (12.0, 24.0)
    background_amplitude: float = 20.0
    seizure_gain: float = 4.0
    seizure_freq_range_hz: tuple[float, float] = (3.0, 12.0)
    sample_rate_hz: int = 256
    channels: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.subjects < 1 or self.records_per_subject < 1:
            raise SpecError("need at least one subject and one record each")
        if self.seizures_per_record < 0:
            raise SpecError("seizures_per_record must be >= 0")
        if self.record_s <= 0 or self.sample_rate_hz <= 0 or self.channels < 1:
            raise SpecError("record length, rate, and channels must be positive")
        if self.record_s != int(self.record_s):
            raise SpecError("record_s must be a whole number of seconds")
        lo, hi = self.seizure_len_s
        if not 0 < lo <= hi:
            raise SpecError(f"bad seizure length range {self.seizure_len_s}")
        if self.seizure_gain < 3.0:
            raise SpecError(
                f"seizure_gain must be >= 3 for separability, got "
                f"{self.seizure_gain}"
            )
        f_lo, f_hi = self.seizure_freq_range_hz
        if not 0 < f_lo <= f_hi < self.sample_rate_hz / 2:
            raise SpecError(
                f"seizure frequency range {self.seizure_freq_range_hz} must "
                f"fit below Nyquist"
            )

    def to_dict(self) -> dict:
        return {
            "subjects": self.subjects,
            "records_per_subject": self.records_per_subject,
            "record_s": self.record_s,
            "seizures_per_record": self.seizures_per_record,
            "seizure_len_s": list(self.seizure_len_s),
            "background_amplitude": self.background_amplitude,
            "seizure_gain": self.seizure_gain,
            "seizure_freq_range_hz": list(self.seizure_freq_range_hz),
            "sample_rate_hz": self.sample_rate_hz,
            "channels": self.channels,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "CorpusSpec":
        d = dict(d)
        d["seizure_len_s"] = tuple(d["seizure_len_s"])
        d["seizure_freq_range_hz"] = tuple(d["seizure_freq_range_hz"])
        return CorpusSpec(**d)


def spec_hash(spec: CorpusSpec) -> str:
    return config_hash(spec.to_dict())


def subject_id(index: int) -> str:
    return f"s{index:02d}"


def record_id(subject_index: int, rec_index: int) -> str:
    return f"s{subject_index:02d}_r{rec_index:02d}"


def pink_noise(rng: Rng, n: int) -> np.ndarray:
    """Unit-variance 1/f noise via spectral shaping."""
    freqs = np.fft.rfftfreq(n)
    spectrum = rng.normal(size=freqs.size) + 1j * rng.normal(size=freqs.size)
    spectrum[0] = 0.0
    spectrum[1:] /= np.sqrt(freqs[1:])
    x = np.fft.irfft(spectrum, n)
    return x / (x.std() + 1e-12)


def subject_signature_hz(spec: CorpusSpec, subject_index: int) -> float:
    """Per-subject seizure center frequency (stable across records)."""
    rng = Rng(spec.seed).child("corpus", subject_id(subject_index), "signature")
    lo, hi = spec.seizure_freq_range_hz
    return float(rng.uniform(lo, hi))


def _pack_intervals(spec: CorpusSpec, rng: Rng) -> list[SeizureInterval]:
    n = spec.seizures_per_record
    if n == 0:
        return []
    lo, hi = spec.seizure_len_s
    durations = rng.uniform(lo, hi, size=n)
    slack = spec.record_s - durations.sum() - (n + 1) * MIN_SEIZURE_GAP_S
    if slack < 0:
        raise SpecError(
            f"cannot pack {n} seizures of up to {hi}s plus gaps into a "
            f"{spec.record_s}s record"
        )
    extras = rng.uniform(size=n + 1)
    extras = extras / extras.sum() * slack
    gaps = MIN_SEIZURE_GAP_S + extras
    intervals = []
    cursor = 0.0
    for i in range(n):
        start = round(cursor + gaps[i], 3)
        end = round(start + durations[i], 3)
        intervals.append(SeizureInterval(start, end))
        cursor = end
    return intervals


def generate_recording(
    spec: CorpusSpec, subject_index: int, rec_index: int
) -> Recording:
    """One annotated recording, bit-deterministic in (spec, indices)."""
    fs = spec.sample_rate_hz
    n = int(round(spec.record_s * fs))
    rid = record_id(subject_index, rec_index)
    rng = Rng(spec.seed).child("corpus", rid)

    samples = np.empty((spec.channels, n))
    for c in range(spec.channels):
        samples[c] = spec.background_amplitude * pink_noise(
            rng.child("bg", c), n
        )

    intervals = _pack_intervals(spec, rng.child("intervals"))
    freq = subject_signature_hz(spec, subject_index)
    burst_amp = spec.seizure_gain * spec.background_amplitude
    t = np.arange(n) / fs
    phase_rng = rng.child("phase")
    phases = phase_rng.uniform(0.0, 2.0 * np.pi, size=spec.channels)
    for iv in intervals:
        a = int(round(iv.start_s * fs))
        b = min(int(round(iv.end_s * fs)), n)
        envelope = np.hanning(b - a)
        for c in range(spec.channels):
            samples[c, a:b] += burst_amp * envelope * np.sin(
                2.0 * np.pi * freq * t[a:b] + phases[c]
            )

    return Recording(
        subject_id=subject_id(subject_index),
        record_id=rid,
        sample_rate_hz=fs,
        channels=[f"CH{c:02d}" for c in range(spec.channels)],
        samples=samples,
        seizures=intervals,
    )


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> dict:
    """Write `subject/record.edf` files, annotations.csv, and manifest.json.

    Returns the manifest dict.  Regenerating with an equal spec reproduces
    every byte.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    annotation_lines = []
    for s in range(spec.subjects):
        subject_dir = root / subject_id(s)
        subject_dir.mkdir(exist_ok=True)
        for r in range(spec.records_per_subject):
            rec = generate_recording(spec, s, r)
            rel_path = f"{rec.subject_id}/{rec.record_id}.edf"
            (root / rel_path).write_bytes(write_edf(rec))
            for iv in rec.seizures:
                annotation_lines.append(
                    f"{rec.record_id},{iv.start_s},{iv.end_s}"
                )
            records.append(
                {
                    "subject_id": rec.subject_id,
                    "record_id": rec.record_id,
                    "path": rel_path,
                    "seizures": [[iv.start_s, iv.end_s] for iv in rec.seizures],
                }
            )
    (root / "annotations.csv").write_text(
        "".join(line + "\n" for line in annotation_lines)
    )
    manifest = {
        "spec": spec.to_dict(),
        "spec_hash": spec_hash(spec),
        "records": records,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return manifest
