"""Pluggable separator contract and a small band-split mask network.

The network is a deliberately minimal stand-in for heavyweight
time-frequency separators: band-split -> per-band normalization +
linear encoder -> one frame-wise hidden layer -> per-band mask decoder
-> complex masking -> inverse STFT.  Every stage has a closed-form
adjoint, so the backward pass is mathematically exact and checkable
against finite differences.

Masks are bounded complex gates applied as complex multiplication on the
mixture spectrogram: tanh(.) + 1 in [0, 2] for the real (gain-like)
component, plain tanh in [-1, 1] for the imaginary component so phase
can rotate either way and a silent initial imaginary mask sits at a
healthy gradient point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import checkpoint
from .audio import Waveform
from .errors import BandMismatch, IncompatibleConfig, ShapeMismatch, StaleCache
from .stft import Spectrogram, StftConfig, istft, istft_adjoint, stft

NORM_EPS = 1e-5


class SeparatorContract(Protocol):
    """Anything that splits a waveform into a fixed number of stems."""

    output_channels: int

    def separate(self, w: Waveform) -> list[Waveform]: ...


@dataclass(frozen=True)
class BandSplitConfig:
    """Non-overlapping partition of the frequency axis."""

    band_widths: tuple

    def __post_init__(self):
        widths = tuple(int(b) for b in self.band_widths)
        if not widths or any(b < 1 for b in widths):
            raise BandMismatch(f"band widths must all be >= 1, got {widths}")
        object.__setattr__(self, "band_widths", widths)

    @property
    def num_bands(self) -> int:
        return len(self.band_widths)

    @property
    def total_bins(self) -> int:
        return sum(self.band_widths)

    def edges(self):
        lo = 0
        for b in self.band_widths:
            yield lo, lo + b
            lo += b


def geometric_band_widths(total_bins: int, num_bands: int, growth: float = 1.5) -> tuple:
    """Integer band widths growing roughly geometrically, summing exactly."""
    if num_bands < 1 or num_bands > total_bins:
        raise BandMismatch(f"cannot split {total_bins} bins into {num_bands} bands")
    raw = growth ** np.arange(num_bands)
    raw *= total_bins / raw.sum()
    widths = np.maximum(1, np.round(raw).astype(int))
    # push the rounding remainder onto the widest bands, keeping every width >= 1
    diff = total_bins - int(widths.sum())
    i = num_bands - 1
    while diff != 0:
        step = 1 if diff > 0 else -1
        if widths[i] + step >= 1:
            widths[i] += step
            diff -= step
        i = (i - 1) % num_bands
    return tuple(int(b) for b in widths)


def band_split(spec: Spectrogram, cfg: BandSplitConfig) -> list:
    """Slice (2, M, T, F) into per-band tensors; concatenation restores it."""
    if cfg.total_bins != spec.bins:
        raise BandMismatch(
            f"band widths sum to {cfg.total_bins}, spectrogram has {spec.bins} bins"
        )
    return [spec.values[..., lo:hi] for lo, hi in cfg.edges()]


def reassemble_bands(bands) -> Spectrogram:
    return Spectrogram(np.concatenate(list(bands), axis=-1))


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class MaskNetParams:
    """All learnable tensors of the mask network.

    Declaration order (enc, gamma, beta, w, w_bias, dec, dec_bias) is the
    serialization order of the checkpoint format.
    """

    d_model: int
    n_out: int
    channels: int
    band_widths: tuple
    enc: list = field(default_factory=list)        # per band: (D, 2M*b)
    norm_gamma: list = field(default_factory=list)  # per band: (2M*b,)
    norm_beta: list = field(default_factory=list)   # per band: (2M*b,)
    w: np.ndarray = None                            # (D, D)
    w_bias: np.ndarray = None                       # (D,)
    dec: list = field(default_factory=list)         # per band: (N*2M*b, D)
    dec_bias: list = field(default_factory=list)    # per band: (N*2M*b,)

    def __post_init__(self):
        self.band_widths = tuple(int(b) for b in self.band_widths)
        d, n, m = self.d_model, self.n_out, self.channels
        for q, b in enumerate(self.band_widths):
            feat = 2 * m * b
            if self.enc[q].shape != (d, feat):
                raise ShapeMismatch(f"enc[{q}] shape {self.enc[q].shape} != {(d, feat)}")
            if self.dec[q].shape != (n * feat, d):
                raise ShapeMismatch(f"dec[{q}] shape {self.dec[q].shape} != {(n * feat, d)}")
        if self.w.shape != (d, d) or self.w_bias.shape != (d,):
            raise ShapeMismatch("hidden layer shapes inconsistent with d_model")
        arrays = [a for _, a in self.flat()]
        if any(not np.isfinite(a).all() for a in arrays):
            raise ShapeMismatch("parameters contain NaN/Inf")

    @property
    def num_bands(self) -> int:
        return len(self.band_widths)

    def band_config(self) -> BandSplitConfig:
        return BandSplitConfig(self.band_widths)

    def flat(self):
        """(name, array) pairs in declaration order; arrays are live views."""
        out = []
        for q in range(self.num_bands):
            out.append((f"enc.{q}", self.enc[q]))
        for q in range(self.num_bands):
            out.append((f"gamma.{q}", self.norm_gamma[q]))
        for q in range(self.num_bands):
            out.append((f"beta.{q}", self.norm_beta[q]))
        out.append(("w", self.w))
        out.append(("w_bias", self.w_bias))
        for q in range(self.num_bands):
            out.append((f"dec.{q}", self.dec[q]))
        for q in range(self.num_bands):
            out.append((f"dec_bias.{q}", self.dec_bias[q]))
        return out

    def copy(self) -> "MaskNetParams":
        return MaskNetParams(
            d_model=self.d_model, n_out=self.n_out, channels=self.channels,
            band_widths=self.band_widths,
            enc=[a.copy() for a in self.enc],
            norm_gamma=[a.copy() for a in self.norm_gamma],
            norm_beta=[a.copy() for a in self.norm_beta],
            w=self.w.copy(), w_bias=self.w_bias.copy(),
            dec=[a.copy() for a in self.dec],
            dec_bias=[a.copy() for a in self.dec_bias],
        )

    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.flat())


def even_split_bias(n_out: int) -> float:
    """Decoder real-part bias making the initial masks average 1/n_out."""
    return math.atanh(1.0 / n_out - 1.0)


def init_params(seed, d_model: int, n_out: int, band_cfg: BandSplitConfig,
                scale: float = 0.05, channels: int = 1) -> MaskNetParams:
    """Variance-1/fan_in encoder and hidden weights; the decoder matrix is
    damped by `scale` and its bias set so the outputs start as an even
    split of the mixture."""
    rng = np.random.default_rng(seed)
    d, n, m = d_model, n_out, channels
    enc, gamma, beta, dec, dec_bias = [], [], [], [], []
    for b in band_cfg.band_widths:
        feat = 2 * m * b
        enc.append(rng.normal(0.0, 1.0 / np.sqrt(feat), size=(d, feat)))
        gamma.append(np.ones(feat))
        beta.append(np.zeros(feat))
        dec.append(rng.normal(0.0, scale / np.sqrt(d), size=(n * feat, d)))
        bias = np.zeros((n, 2, m, b))
        bias[:, 0] = even_split_bias(n)  # imag plane bias 0 -> mask_i = 0
        dec_bias.append(bias.reshape(-1))
    w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
    return MaskNetParams(
        d_model=d, n_out=n, channels=m, band_widths=band_cfg.band_widths,
        enc=enc, norm_gamma=gamma, norm_beta=beta,
        w=w, w_bias=np.zeros(d), dec=dec, dec_bias=dec_bias,
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    params: MaskNetParams
    stft_cfg: StftConfig
    length: int
    sample_rate: int
    spec: np.ndarray          # (2, M, T, F) mixture spectrogram
    vhat: list                # per band: (T, 2M*b) normalized features
    aff: list                 # per band: (T, 2M*b) after affine
    z: np.ndarray             # (T, Q, D)
    h: np.ndarray             # (T, Q, D) tanh activations
    gates: list               # per band: (T, N, 2, M, b) tanh(mask pre-activation)


def _band_features(spec_vals: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """(2, M, T, b) slice -> (T, 2M*b) per-frame feature rows."""
    xq = spec_vals[..., lo:hi]
    t = xq.shape[2]
    return np.moveaxis(xq, 2, 0).reshape(t, -1)


def masknet_forward(params: MaskNetParams, mixture: Waveform,
                    stft_cfg: StftConfig,
                    band_cfg: BandSplitConfig | None = None):
    """Separate a mixture into n_out waveforms; returns (outputs, cache).

    The cache holds every intermediate the exact backward pass needs and
    is tied to this (params, input) pair.
    """
    if band_cfg is None:
        band_cfg = params.band_config()
    elif band_cfg.band_widths != params.band_widths:
        raise BandMismatch("band config disagrees with the parameters")
    if mixture.channels != params.channels:
        raise ShapeMismatch(
            f"model expects {params.channels} channels, got {mixture.channels}"
        )
    if band_cfg.total_bins != stft_cfg.bins:
        raise BandMismatch(
            f"band widths sum to {band_cfg.total_bins}, stft has {stft_cfg.bins} bins"
        )
    spec = stft(mixture, stft_cfg)
    x = spec.values
    n_frames = x.shape[2]
    d, n, m = params.d_model, params.n_out, params.channels

    vhat_list, aff_list, z_cols = [], [], []
    for q, (lo, hi) in enumerate(band_cfg.edges()):
        v = _band_features(x, lo, hi)
        mu = v.mean(axis=0)
        sd = np.sqrt(v.var(axis=0) + NORM_EPS)
        vhat = (v - mu) / sd
        aff = params.norm_gamma[q] * vhat + params.norm_beta[q]
        vhat_list.append(vhat)
        aff_list.append(aff)
        z_cols.append(aff @ params.enc[q].T)
    z = np.stack(z_cols, axis=1)                      # (T, Q, D)
    h = np.tanh(z @ params.w.T + params.w_bias)       # (T, Q, D)

    gates = []
    out_spec = np.empty((n, 2, m, n_frames, stft_cfg.bins))
    for q, (lo, hi) in enumerate(band_cfg.edges()):
        b = hi - lo
        pre = h[:, q, :] @ params.dec[q].T + params.dec_bias[q]
        gate = np.tanh(pre.reshape(n_frames, n, 2, m, b))
        gates.append(gate)
        gk = gate.transpose(1, 2, 3, 0, 4)            # (N, 2, M, T, b)
        mr, mi = gk[:, 0] + 1.0, gk[:, 1]
        xr, xi = x[0, :, :, lo:hi], x[1, :, :, lo:hi]
        out_spec[:, 0, :, :, lo:hi] = mr * xr - mi * xi
        out_spec[:, 1, :, :, lo:hi] = mr * xi + mi * xr

    outputs = [
        istft(Spectrogram(out_spec[k]), stft_cfg, mixture.length, mixture.sample_rate)
        for k in range(n)
    ]
    cache = ForwardCache(
        params=params, stft_cfg=stft_cfg, length=mixture.length,
        sample_rate=mixture.sample_rate, spec=x,
        vhat=vhat_list, aff=aff_list, z=z, h=h, gates=gates,
    )
    return outputs, cache


def masknet_backward(params: MaskNetParams, cache: ForwardCache, upstream):
    """Parameter gradients for a scalar loss with d(loss)/d(outputs) given.

    upstream: sequence of per-output waveform gradients shaped like the
    forward outputs, or an (N, M, L) array.  Returns a dict keyed like
    params.flat().
    """
    if cache.params is not params:
        raise StaleCache("cache was produced by a different parameter set")
    n, m, d = params.n_out, params.channels, params.d_model
    band_cfg = params.band_config()
    if isinstance(upstream, np.ndarray):
        up = upstream.reshape(n, m, cache.length)
    else:
        up = np.stack([
            u.samples if isinstance(u, Waveform) else np.asarray(u, dtype=np.float64)
            for u in upstream
        ])
    if up.shape != (n, m, cache.length):
        raise ShapeMismatch(f"upstream shape {up.shape} != {(n, m, cache.length)}")

    # through the inverse STFT of every output
    dspec = np.stack([
        istft_adjoint(Waveform(up[k], cache.sample_rate), cache.stft_cfg).values
        for k in range(n)
    ])                                                 # (N, 2, M, T, F)

    x = cache.spec
    n_frames = x.shape[2]
    grads = {}
    dh = np.zeros_like(cache.h)
    for q, (lo, hi) in enumerate(band_cfg.edges()):
        b = hi - lo
        xr, xi = x[0, :, :, lo:hi], x[1, :, :, lo:hi]
        dyr, dyi = dspec[:, 0, :, :, lo:hi], dspec[:, 1, :, :, lo:hi]
        dmr = dyr * xr + dyi * xi                      # (N, M, T, b)
        dmi = -dyr * xi + dyi * xr
        dmask = np.stack([dmr, dmi], axis=1).transpose(3, 0, 1, 2, 4)
        dpre = (dmask * (1.0 - cache.gates[q] ** 2)).reshape(n_frames, -1)
        grads[f"dec.{q}"] = dpre.T @ cache.h[:, q, :]
        grads[f"dec_bias.{q}"] = dpre.sum(axis=0)
        dh[:, q, :] = dpre @ params.dec[q]

    dhpre = dh * (1.0 - cache.h ** 2)
    flat_dhpre = dhpre.reshape(-1, d)
    grads["w"] = flat_dhpre.T @ cache.z.reshape(-1, d)
    grads["w_bias"] = flat_dhpre.sum(axis=0)
    dz = dhpre @ params.w                              # (T, Q, D)

    for q in range(params.num_bands):
        daff = dz[:, q, :] @ params.enc[q]             # (T, 2M*b)
        grads[f"enc.{q}"] = dz[:, q, :].T @ cache.aff[q]
        grads[f"gamma.{q}"] = (daff * cache.vhat[q]).sum(axis=0)
        grads[f"beta.{q}"] = daff.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Model wrapper and checkpoints
# ---------------------------------------------------------------------------

class MaskNetModel:
    """MaskNetParams bound to an STFT configuration; implements the
    separator contract."""

    def __init__(self, params: MaskNetParams, stft_cfg: StftConfig):
        if sum(params.band_widths) != stft_cfg.bins:
            raise BandMismatch(
                f"band widths sum to {sum(params.band_widths)}, "
                f"stft has {stft_cfg.bins} bins"
            )
        self.params = params
        self.stft_cfg = stft_cfg

    @property
    def output_channels(self) -> int:
        return self.params.n_out

    def forward(self, mixture: Waveform):
        return masknet_forward(self.params, mixture, self.stft_cfg)

    def separate(self, mixture: Waveform) -> list[Waveform]:
        outputs, _ = self.forward(mixture)
        return outputs

    def save(self, path) -> None:
        meta = {
            "kind": "masknet",
            "d_model": self.params.d_model,
            "n_out": self.params.n_out,
            "channels": self.params.channels,
            "band_widths": list(self.params.band_widths),
            "stft": {
                "fft_size": self.stft_cfg.fft_size,
                "hop": self.stft_cfg.hop,
                "window": self.stft_cfg.window,
                "center_pad": self.stft_cfg.center_pad,
            },
        }
        checkpoint.save_tensors(path, meta, self.params.flat())

    @classmethod
    def load(cls, path) -> "MaskNetModel":
        meta, tensors = checkpoint.load_tensors(path)
        if meta.get("kind") != "masknet":
            raise IncompatibleConfig(f"{path}: not a masknet checkpoint")
        widths = tuple(meta["band_widths"])
        by_name = dict(tensors)
        q_count = len(widths)
        params = MaskNetParams(
            d_model=meta["d_model"], n_out=meta["n_out"],
            channels=meta["channels"], band_widths=widths,
            enc=[by_name[f"enc.{q}"] for q in range(q_count)],
            norm_gamma=[by_name[f"gamma.{q}"] for q in range(q_count)],
            norm_beta=[by_name[f"beta.{q}"] for q in range(q_count)],
            w=by_name["w"], w_bias=by_name["w_bias"],
            dec=[by_name[f"dec.{q}"] for q in range(q_count)],
            dec_bias=[by_name[f"dec_bias.{q}"] for q in range(q_count)],
        )
        stft_cfg = StftConfig(**meta["stft"])
        return cls(params, stft_cfg)
