"""STFT analysis, overlap-add iSTFT synthesis, mel features, and the
multi-resolution spectral error metric.

Both transforms exist in two forms: plain numpy functions, and tape
operations (suffix ``_t``) whose backward passes apply the exact adjoint of
the forward linear map, so a training loss can see through synthesis and
analysis. Conventions: reflect padding of ``n_fft//2`` at both ends, frames
= ``T//hop + 1``, periodic Hann window, and mel features computed from
magnitude (not power) spectra with an additive floor of 1e-7 before the log.
"""

from __future__ import annotations

import csv
import math
import wave as wavmod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import CVar, Tape, Var, add, linear_mm, log, magnitude
from .ctensor import CTensor, DomainError, ShapeError

MEL_LOG_FLOOR = 1e-7


class ConfigError(ValueError):
    """Invalid analysis/synthesis configuration."""


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


@dataclass(frozen=True)
class StftConfig:
    n_fft: int
    hop: int
    win_length: int
    window: np.ndarray = None
    check: bool = True

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", hann_window(self.win_length))
        win = np.asarray(self.window, dtype=np.float64)
        if win.shape != (self.win_length,):
            raise ConfigError("window length must equal win_length")
        object.__setattr__(self, "window", win)
        if not (0 < self.hop <= self.win_length <= self.n_fft):
            raise ConfigError(
                f"need 0 < hop <= win_length <= n_fft, got "
                f"({self.n_fft}, {self.hop}, {self.win_length})"
            )
        if self.check and not self.invertible():
            raise ConfigError(
                f"window/hop pair violates the overlap-add condition "
                f"(hop={self.hop}, win_length={self.win_length})"
            )

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1

    def padded_window(self) -> np.ndarray:
        if self.win_length == self.n_fft:
            return self.window
        lpad = (self.n_fft - self.win_length) // 2
        out = np.zeros(self.n_fft)
        out[lpad : lpad + self.win_length] = self.window
        return out

    def invertible(self) -> bool:
        """True when the summed squared window stays away from zero in the
        steady state, so normalized overlap-add can reconstruct."""
        w2 = self.padded_window() ** 2
        frames = 4 * (self.n_fft // self.hop) + 8
        env = np.zeros((frames - 1) * self.hop + self.n_fft)
        for m in range(frames):
            env[m * self.hop : m * self.hop + self.n_fft] += w2
        steady = env[self.n_fft : -self.n_fft]
        return bool(steady.min() > 1e-8 * max(steady.max(), 1e-300))


def _frame_count(cfg: StftConfig, n_samples: int) -> int:
    return n_samples // cfg.hop + 1


def _frame_signal(cfg: StftConfig, wave: np.ndarray) -> np.ndarray:
    pad = cfg.n_fft // 2
    xp = np.pad(wave, pad, mode="reflect")
    frames = _frame_count(cfg, wave.shape[0])
    view = np.lib.stride_tricks.sliding_window_view(xp, cfg.n_fft)
    return view[:: cfg.hop][:frames].copy()


def stft(cfg: StftConfig, wave) -> CTensor:
    """Windowed real FFT per frame; returns [frames, n_fft//2 + 1]."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ShapeError("stft expects a 1-D waveform")
    if wave.shape[0] < cfg.win_length:
        raise ShapeError(
            f"waveform of {wave.shape[0]} samples is shorter than the window"
        )
    spec = np.fft.rfft(_frame_signal(cfg, wave) * cfg.padded_window(), axis=1)
    return CTensor(spec.real, spec.imag)


def _ola(cfg: StftConfig, frames: np.ndarray) -> np.ndarray:
    n_frames = frames.shape[0]
    buf = np.zeros((n_frames - 1) * cfg.hop + cfg.n_fft)
    if cfg.n_fft % cfg.hop == 0:
        # hop-aligned frames: one vectorized add per hop-sized chunk
        chunks = cfg.n_fft // cfg.hop
        fv = frames.reshape(n_frames, chunks, cfg.hop)
        for k in range(chunks):
            buf[k * cfg.hop : (k + n_frames) * cfg.hop].reshape(
                n_frames, cfg.hop
            )[:] += fv[:, k, :]
        return buf
    for m in range(n_frames):
        buf[m * cfg.hop : m * cfg.hop + cfg.n_fft] += frames[m]
    return buf


def _ola_envelope(cfg: StftConfig, n_frames: int) -> np.ndarray:
    w2 = cfg.padded_window() ** 2
    return _ola(cfg, np.broadcast_to(w2, (n_frames, cfg.n_fft)))


def istft(cfg: StftConfig, spec: CTensor, length: int | None = None) -> np.ndarray:
    """Inverse real FFT per frame, synthesis-windowed overlap-add, normalized
    by the summed squared window."""
    if spec.re.ndim != 2 or spec.shape[1] != cfg.bins:
        raise ShapeError(f"spectrogram must be [frames, {cfg.bins}], got {spec.shape}")
    if not cfg.invertible():
        raise ConfigError("configuration violates the overlap-add condition")
    n_frames = spec.shape[0]
    if length is None:
        length = (n_frames - 1) * cfg.hop
    win = cfg.padded_window()
    frames = np.fft.irfft(spec.re + 1j * spec.im, cfg.n_fft, axis=1) * win
    buf = _ola(cfg, frames)
    env = np.maximum(_ola_envelope(cfg, n_frames), 1e-12)
    out = buf / env
    pad = cfg.n_fft // 2
    return out[pad : pad + length]


# ---------------------------------------------------------------------------
# tape versions: forward as above, backward = exact adjoint


def _rfft_bin_weights(n_fft: int) -> np.ndarray:
    """Multiplicity of each one-sided bin in the full spectrum (2 except at
    DC and Nyquist)."""
    w = np.full(n_fft // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def stft_t(tape: Tape, cfg: StftConfig, wave: Var) -> CVar:
    value = stft(cfg, wave.value)
    n_samples = wave.value.shape[0]
    win = cfg.padded_window()
    pad = cfg.n_fft // 2
    if n_samples <= pad + 1:
        raise ShapeError("waveform too short to differentiate through stft")

    def bwd(ctx, gs):
        gre, gim = gs
        cw = _rfft_bin_weights(cfg.n_fft)
        h = (gre + 1j * gim) / cw
        gframes = cfg.n_fft * np.fft.irfft(h, cfg.n_fft, axis=1) * win
        gxp = np.zeros(n_samples + 2 * pad)
        scattered = _ola(cfg, gframes)
        gxp[: scattered.shape[0]] = scattered
        # fold reflect-pad gradients back onto their source samples
        gx = gxp[pad : pad + n_samples].copy()
        gx[pad:0:-1] += gxp[:pad]
        tail = gxp[pad + n_samples :]
        gx[n_samples - 2 : n_samples - 2 - tail.shape[0] : -1] += tail
        return (gx,)

    re, im = tape.record("stft", (wave,), (value.re, value.im), bwd)
    return CVar(re, im)


def istft_t(tape: Tape, cfg: StftConfig, spec: CVar, length: int | None = None) -> Var:
    value = istft(cfg, CTensor(spec.re.value, spec.im.value), length)
    n_frames = spec.shape[0]
    out_len = value.shape[0]
    win = cfg.padded_window()
    env = np.maximum(_ola_envelope(cfg, n_frames), 1e-12)
    pad = cfg.n_fft // 2

    def bwd(ctx, gs):
        (g,) = gs
        gbuf = np.zeros(env.shape[0])
        gbuf[pad : pad + out_len] = g
        gbuf /= env
        view = np.lib.stride_tricks.sliding_window_view(gbuf, cfg.n_fft)
        gframes = view[:: cfg.hop][:n_frames]
        cw = _rfft_bin_weights(cfg.n_fft)
        spec_grad = np.fft.rfft(gframes * win, axis=1) * (cw / cfg.n_fft)
        gre = spec_grad.real.copy()
        gim = spec_grad.imag.copy()
        gim[:, 0] = 0.0
        gim[:, -1] = 0.0
        return gre, gim

    return tape.record("istft", (spec.re, spec.im), (value,), bwd)[0]


# ---------------------------------------------------------------------------
# mel features


@dataclass(frozen=True)
class MelFilterbank:
    n_mels: int
    f_max: float
    sample_rate: float
    n_fft: int
    weights: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", self._build())
        if np.any(self.weights < 0):
            raise ConfigError("mel filterbank weights must be nonnegative")
        if np.any(self.weights.sum(axis=1) <= 0):
            raise ConfigError("a mel filter has empty support; increase n_fft")

    @staticmethod
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    @staticmethod
    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    def edge_frequencies(self) -> np.ndarray:
        mels = np.linspace(0.0, self.hz_to_mel(self.f_max), self.n_mels + 2)
        return self.mel_to_hz(mels)

    def _build(self) -> np.ndarray:
        bins = self.n_fft // 2 + 1
        freqs = np.linspace(0.0, self.sample_rate / 2.0, bins)
        edges = self.edge_frequencies()
        w = np.zeros((self.n_mels, bins))
        for i in range(self.n_mels):
            lo, ctr, hi = edges[i], edges[i + 1], edges[i + 2]
            up = (freqs - lo) / max(ctr - lo, 1e-12)
            down = (hi - freqs) / max(hi - ctr, 1e-12)
            w[i] = np.maximum(0.0, np.minimum(up, down))
        return w


def log_mel(cfg: StftConfig, fb: MelFilterbank, wave) -> np.ndarray:
    """log(mel-weighted magnitude + 1e-7), shape [frames, n_mels]."""
    mag = stft(cfg, wave).abs()
    return np.log(mag @ fb.weights.T + MEL_LOG_FLOOR)


def log_mel_t(tape: Tape, cfg: StftConfig, fb: MelFilterbank, wave: Var) -> Var:
    spec = stft_t(tape, cfg, wave)
    mag = magnitude(spec.re, spec.im)
    mel = linear_mm(mag, tape.leaf(fb.weights))
    return log(add(mel, MEL_LOG_FLOOR))


# ---------------------------------------------------------------------------
# multi-resolution spectral error

MR_STFT_RESOLUTIONS = ((512, 128, 512), (1024, 256, 1024), (2048, 512, 2048))


def mr_stft_error(a, b, resolutions=MR_STFT_RESOLUTIONS) -> float:
    """Mean over resolutions of spectral convergence plus log-magnitude L1.

    ``a`` is the reference waveform for the convergence denominator.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"waveform lengths differ: {a.shape} vs {b.shape}")
    total = 0.0
    for n_fft, hop, win in resolutions:
        cfg = StftConfig(n_fft, hop, win)
        sa = stft(cfg, a).abs()
        sb = stft(cfg, b).abs()
        sc = np.linalg.norm(sa - sb) / max(np.linalg.norm(sa), 1e-12)
        lm = np.mean(np.abs(np.log(sa + MEL_LOG_FLOOR) - np.log(sb + MEL_LOG_FLOOR)))
        total += sc + lm
    return total / len(resolutions)


# ---------------------------------------------------------------------------
# file interfaces


class WavError(ValueError):
    """Unsupported or malformed WAV content."""


def write_wav(path, wave_data, sample_rate: int) -> None:
    """PCM16 mono little-endian; float input is clipped to [-1, 1)."""
    samples = np.asarray(wave_data, dtype=np.float64)
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    with wavmod.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read PCM16 mono WAV; anything else is rejected with a clear error."""
    with wavmod.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise WavError(f"expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise WavError(
                f"expected 16-bit PCM, got sample width {fh.getsampwidth()}"
            )
        if fh.getcomptype() != "NONE":
            raise WavError(f"compressed WAV ({fh.getcomptype()}) is not supported")
        raw = fh.readframes(fh.getnframes())
        rate = fh.getframerate()
    pcm = np.frombuffer(raw, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, rate


def write_magnitude_csv(path, spec: CTensor) -> None:
    """Dump spectrogram magnitude rows (one frame per row) as RFC-4180 CSV."""
    mag = spec.abs()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"bin{i}" for i in range(mag.shape[1])])
        for row in mag:
            writer.writerow([repr(v) for v in row])
