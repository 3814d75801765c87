"""Forward/inverse STFT with per-sample exact synthesis normalization,
plus the adjoint operators used for backpropagation through the separator.

Conventions:
  * un-normalized forward rFFT, 1/fft_size on the inverse (numpy default);
  * analysis and synthesis use the same window;
  * synthesis divides by the per-sample sum of (analysis * synthesis)
    window products, so reconstruction is exact wherever that sum is
    positive.  With center padding on, that covers every input sample.

Adjoints are the transposes of the real-linear maps, verified against
inner-product identities: <stft(w), S> = <w, stft_adjoint(S)> with the
plain dot product over all real/imaginary entries.  The imaginary parts
of the DC and Nyquist bins are annihilated coordinates (a real-input
rFFT never produces them), and both adjoints treat them as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .errors import IncompatibleConfig, ShapeMismatch

_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 2048
    hop: int = 512
    window: str = "sqrt_hann"
    center_pad: bool = True

    def __post_init__(self):
        n, h = self.fft_size, self.hop
        if n < 4 or (n & (n - 1)) != 0:
            raise IncompatibleConfig(f"fft_size must be a power of two >= 4, got {n}")
        if h <= 0 or n % h != 0 or n // h not in (2, 4, 8):
            raise IncompatibleConfig(
                f"hop {h} must divide fft_size {n} into 2, 4 or 8 parts"
            )
        if self.window not in ("hann", "sqrt_hann"):
            raise IncompatibleConfig(f"unknown window {self.window!r}")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    """Real/imaginary planes of a complex STFT: values shaped (2, M, T, F)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4 or v.shape[0] != 2:
            raise ShapeMismatch(f"spectrogram values must be (2, M, T, F), got {v.shape}")
        if v.size and not np.isfinite(v).all():
            raise ShapeMismatch("spectrogram contains NaN/Inf")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def frames(self) -> int:
        return self.values.shape[2]

    @property
    def bins(self) -> int:
        return self.values.shape[3]

    def to_complex(self) -> np.ndarray:
        return self.values[0] + 1j * self.values[1]

    @staticmethod
    def from_complex(spec: np.ndarray) -> "Spectrogram":
        return Spectrogram(np.stack([spec.real, spec.imag]))


def make_window(cfg: StftConfig) -> np.ndarray:
    n = cfg.fft_size
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    return np.sqrt(hann) if cfg.window == "sqrt_hann" else hann


def _geometry(length: int, cfg: StftConfig):
    """(pad_left, padded_length, frame_count) for a signal of `length`."""
    pad = cfg.fft_size // 2 if cfg.center_pad else 0
    padded = length + 2 * pad
    if padded < cfg.fft_size:
        padded = cfg.fft_size  # right-pad short signals to one full frame
    frames = (padded - cfg.fft_size) // cfg.hop + 1
    return pad, padded, frames


def _frame_view(x: np.ndarray, cfg: StftConfig, frames: int) -> np.ndarray:
    """Strided view (M, T, fft_size) over a padded buffer."""
    m, n = x.shape
    sm, sn = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(m, frames, cfg.fft_size), strides=(sm, cfg.hop * sn, sn),
        writeable=False,
    )


def _window_denominator(cfg: StftConfig, frames: int, padded: int) -> np.ndarray:
    """Per-sample sum of analysis*synthesis window products."""
    win_sq = make_window(cfg) ** 2
    denom = np.zeros(padded)
    for t in range(frames):
        denom[t * cfg.hop:t * cfg.hop + cfg.fft_size] += win_sq
    return denom


def stft(w: Waveform, cfg: StftConfig) -> Spectrogram:
    if w.length < 1:
        raise ShapeMismatch("stft needs at least one sample")
    pad, padded, frames = _geometry(w.length, cfg)
    x = np.zeros((w.channels, padded))
    x[:, pad:pad + w.length] = w.samples
    windowed = _frame_view(x, cfg, frames) * make_window(cfg)
    spec = np.fft.rfft(windowed, axis=-1)
    return Spectrogram.from_complex(spec)


def _check_compat(s: Spectrogram, cfg: StftConfig, frames: int | None = None):
    if s.bins != cfg.bins:
        raise IncompatibleConfig(
            f"spectrogram has {s.bins} bins, cfg implies {cfg.bins}"
        )
    if frames is not None and s.frames != frames:
        raise IncompatibleConfig(
            f"spectrogram has {s.frames} frames, length implies {frames}"
        )


def istft(s: Spectrogram, cfg: StftConfig, length: int, sample_rate: int = 1) -> Waveform:
    """Windowed overlap-add synthesis normalized by the summed squared window."""
    _check_compat(s, cfg)
    pad = cfg.fft_size // 2 if cfg.center_pad else 0
    frames = s.frames
    buf_len = (frames - 1) * cfg.hop + cfg.fft_size
    if length > buf_len - pad:
        raise IncompatibleConfig(
            f"length {length} exceeds synthesizable length {buf_len - pad}"
        )
    spec = s.to_complex()
    spec[..., 0] = spec[..., 0].real
    spec[..., -1] = spec[..., -1].real
    frames_t = np.fft.irfft(spec, n=cfg.fft_size, axis=-1) * make_window(cfg)
    out = np.zeros((s.channels, buf_len))
    for t in range(frames):
        out[:, t * cfg.hop:t * cfg.hop + cfg.fft_size] += frames_t[:, t]
    denom = _window_denominator(cfg, frames, buf_len)
    good = denom > _DENOM_FLOOR
    out[:, good] /= denom[good]
    out[:, ~good] = 0.0
    result = out[:, pad:pad + length]
    if result.shape[1] < length:
        result = np.pad(result, ((0, 0), (0, length - result.shape[1])))
    return Waveform(result, sample_rate)


def stft_adjoint(s: Spectrogram, cfg: StftConfig, length: int, sample_rate: int = 1) -> Waveform:
    """Transpose of the stft linear map, from spectrogram space to samples.

    DC/Nyquist imaginary parts are ignored (forward never emits them);
    interior bins are halved before the inverse FFT so the un-normalized
    forward transform pairs exactly:  y = fft_size * irfft(alpha * S).
    """
    pad, padded, frames = _geometry(length, cfg)
    _check_compat(s, cfg, frames)
    spec = s.to_complex()
    spec[..., 0] = spec[..., 0].real
    spec[..., -1] = spec[..., -1].real
    spec[..., 1:-1] *= 0.5
    frames_t = cfg.fft_size * np.fft.irfft(spec, n=cfg.fft_size, axis=-1)
    frames_t *= make_window(cfg)
    buf = np.zeros((s.channels, padded))
    for t in range(frames):
        buf[:, t * cfg.hop:t * cfg.hop + cfg.fft_size] += frames_t[:, t]
    return Waveform(buf[:, pad:pad + length], sample_rate)


def istft_adjoint(g: Waveform, cfg: StftConfig) -> Spectrogram:
    """Transpose of istft(., cfg, length=g.length) at the canonical frame
    count for that length (the count stft itself would produce)."""
    pad, padded, frames = _geometry(g.length, cfg)
    buf_len = (frames - 1) * cfg.hop + cfg.fft_size
    buf = np.zeros((g.channels, buf_len))
    end = min(pad + g.length, buf_len)
    buf[:, pad:end] = g.samples[:, :end - pad]
    denom = _window_denominator(cfg, frames, buf_len)
    good = denom > _DENOM_FLOOR
    buf[:, good] /= denom[good]
    buf[:, ~good] = 0.0
    win = make_window(cfg)
    framed = _frame_view(buf, cfg, frames) * win
    spec = np.fft.rfft(framed, axis=-1)
    spec[..., 1:-1] *= 2.0 / cfg.fft_size
    spec[..., 0] = spec[..., 0].real / cfg.fft_size
    spec[..., -1] = spec[..., -1].real / cfg.fft_size
    return Spectrogram.from_complex(spec)


def spectrogram_energy(s: Spectrogram) -> float:
    """Hermitian-counted energy: interior bins weighted twice.

    For any waveform w, spectrogram_energy(stft(w, cfg)) equals
    fft_size * sum of windowed-frame energies exactly (Parseval with the
    un-normalized forward transform).
    """
    v = s.values
    e = 2.0 * np.sum(v ** 2) - np.sum(v[..., 0] ** 2) - np.sum(v[..., -1] ** 2)
    return float(e)
