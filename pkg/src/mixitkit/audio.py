"""Waveform container, gain/mixing arithmetic, energy profiling and WAV I/O.

Samples are float64 throughout; file encodings are converted at the
boundary.  All operations are pure functions on immutable inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroSignal, ShapeMismatch, UnsupportedWavFormat

RMS_SILENCE_FLOOR = 1e-12


@dataclass(frozen=True)
class Waveform:
    """Multichannel PCM signal: samples shaped (channels, length)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[np.newaxis, :]
        if s.ndim != 2:
            raise ShapeMismatch(f"samples must be 1-D or 2-D, got shape {s.shape}")
        if self.sample_rate <= 0:
            raise ShapeMismatch(f"sample_rate must be positive, got {self.sample_rate}")
        if s.size and not np.isfinite(s).all():
            raise ShapeMismatch("samples contain NaN/Inf")
        object.__setattr__(self, "samples", s)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    def crop(self, start: int, length: int) -> "Waveform":
        if start < 0 or start + length > self.length:
            raise ShapeMismatch(
                f"crop [{start}, {start + length}) outside signal of length {self.length}"
            )
        return Waveform(self.samples[:, start:start + length].copy(), self.sample_rate)

    def rms(self) -> float:
        """Joint RMS over all channels (single scalar per waveform)."""
        if self.samples.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass(frozen=True)
class PowerProfile:
    """Per-interval mean-square power trace of a waveform."""

    interval_s: float
    powers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "powers", np.asarray(self.powers, dtype=np.float64))


def rms_normalize(w: Waveform) -> Waveform:
    """Scale so the joint RMS over all channels is exactly 1.

    Raises AllZeroSignal below the 1e-12 RMS floor; silent stems are only
    legal where the caller explicitly allows them (dropout in dynamic
    mixing).
    """
    r = w.rms()
    if r < RMS_SILENCE_FLOOR:
        raise AllZeroSignal(f"waveform RMS {r:.3e} below {RMS_SILENCE_FLOOR:.0e}")
    return Waveform(w.samples / r, w.sample_rate)


def apply_gain_db(w: Waveform, gain_db: float) -> Waveform:
    if not np.isfinite(gain_db):
        raise ShapeMismatch(f"gain_db must be finite, got {gain_db}")
    return Waveform(w.samples * 10.0 ** (gain_db / 20.0), w.sample_rate)


def mix(ws) -> Waveform:
    """Sample-wise sum of waveforms sharing shape and sample rate."""
    ws = list(ws)
    if not ws:
        raise ShapeMismatch("mix() needs at least one waveform")
    first = ws[0]
    for w in ws[1:]:
        if w.samples.shape != first.samples.shape or w.sample_rate != first.sample_rate:
            raise ShapeMismatch(
                f"cannot mix {w.samples.shape}@{w.sample_rate} "
                f"with {first.samples.shape}@{first.sample_rate}"
            )
    total = np.zeros_like(first.samples)
    for w in ws:
        total += w.samples
    return Waveform(total, first.sample_rate)


def power_profile(w: Waveform, interval_s: float = 1.0) -> PowerProfile:
    """Mean-square power per interval, averaged over channels.

    The final partial interval is averaged over its actual length.
    """
    if interval_s <= 0:
        raise ShapeMismatch(f"interval_s must be positive, got {interval_s}")
    ilen = int(round(interval_s * w.sample_rate))
    ilen = max(ilen, 1)
    n = w.length
    k = int(np.ceil(n / ilen)) if n else 0
    powers = np.empty(k)
    sq = w.samples ** 2
    for i in range(k):
        powers[i] = sq[:, i * ilen:min((i + 1) * ilen, n)].mean()
    return PowerProfile(interval_s=interval_s, powers=powers)


# ---------------------------------------------------------------------------
# RIFF WAV I/O: 16-bit PCM and 32-bit IEEE float, 1-2 channels only.
# ---------------------------------------------------------------------------

_FMT_PCM = 0x0001
_FMT_FLOAT = 0x0003
_FMT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class WavInfo:
    """Header-only metadata used by the sample-rate gate."""

    sample_rate: int
    channels: int
    frames: int
    encoding: str  # "pcm16" or "float32"

    @property
    def duration_s(self) -> float:
        return self.frames / self.sample_rate


def _parse_header(fh, path):
    riff, _size, wave = struct.unpack("<4sI4s", fh.read(12))
    if riff != b"RIFF" or wave != b"WAVE":
        raise UnsupportedWavFormat(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data_pos = None
    data_size = None
    while True:
        head = fh.read(8)
        if len(head) < 8:
            break
        cid, csize = struct.unpack("<4sI", head)
        if cid == b"fmt ":
            fmt = fh.read(csize)
        elif cid == b"data":
            data_pos = fh.tell()
            data_size = csize
            fh.seek(csize + (csize & 1), 1)
            continue
        else:
            fh.seek(csize + (csize & 1), 1)
            continue
        if csize & 1:
            fh.seek(1, 1)
    if fmt is None or data_pos is None:
        raise UnsupportedWavFormat(f"{path}: missing fmt/data chunk")
    tag, channels, rate, _bps, _align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _FMT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels not in (1, 2):
        raise UnsupportedWavFormat(f"{path}: {channels} channels unsupported (1-2 only)")
    if tag == _FMT_PCM and bits == 16:
        encoding = "pcm16"
    elif tag == _FMT_FLOAT and bits == 32:
        encoding = "float32"
    else:
        raise UnsupportedWavFormat(
            f"{path}: format tag {tag} / {bits}-bit unsupported "
            "(need 16-bit PCM or 32-bit IEEE float)"
        )
    bytes_per_frame = channels * bits // 8
    frames = data_size // bytes_per_frame
    return WavInfo(rate, channels, frames, encoding), data_pos


def wav_info(path) -> WavInfo:
    """Read the header without decoding samples."""
    with open(path, "rb") as fh:
        info, _ = _parse_header(fh, path)
    return info


def load_wav(path) -> Waveform:
    with open(path, "rb") as fh:
        info, data_pos = _parse_header(fh, path)
        fh.seek(data_pos)
        bytes_per_frame = info.channels * (2 if info.encoding == "pcm16" else 4)
        raw = fh.read(info.frames * bytes_per_frame)
    if info.encoding == "pcm16":
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    else:
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    data = data.reshape(-1, info.channels).T
    return Waveform(data, info.sample_rate)


def save_wav(path, w: Waveform, encoding: str = "float32") -> None:
    """Write a WAV file; encoding is "float32" (default) or "pcm16"."""
    if encoding == "pcm16":
        scaled = np.clip(np.round(w.samples * 32767.0), -32768, 32767)
        payload = scaled.T.astype("<i2").tobytes()
        tag, bits = _FMT_PCM, 16
    elif encoding == "float32":
        payload = w.samples.T.astype("<f4").tobytes()
        tag, bits = _FMT_FLOAT, 32
    else:
        raise UnsupportedWavFormat(f"unknown encoding {encoding!r}")
    ch = w.channels
    align = ch * bits // 8
    fmt = struct.pack("<HHIIHH", tag, ch, w.sample_rate,
                      w.sample_rate * align, align, bits)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE"))
        fh.write(struct.pack("<4sI", b"fmt ", len(fmt)))
        fh.write(fmt)
        fh.write(struct.pack("<4sI", b"data", len(payload)))
        fh.write(payload)
