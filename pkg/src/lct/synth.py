"""Synthetic EEG-like data with a controllable class difference.

Both classes are per-channel colored noise.  The ictal class adds a
spike-and-wave train (sharp transient plus a slow half-sine each cycle) whose
amplitude is (amplitude_gain - 1) * noise_scale, so amplitude_gain = 1.0 is a
null control: the two classes are then statistically identical and a
classifier should score near chance on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .ingest import CANONICAL_CHANNELS, CANONICAL_SAMPLING_RATE_HZ, RawClassData
from .util import round_half_away


@dataclass
class SynthConfig:
    n_channels: int = 18
    fs: float = CANONICAL_SAMPLING_RATE_HZ
    duration_s: float = 375.0
    spike_freq_hz: float = 3.0
    amplitude_gain: float = 3.0
    noise_alpha: float = 1.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_channels < 1:
            raise ConfigError(f"n_channels must be >= 1, got {self.n_channels}")
        if self.fs <= 0:
            raise ConfigError(f"sampling rate must be positive, got {self.fs}")
        if self.duration_s <= 0:
            raise ConfigError(f"duration must be positive, got {self.duration_s}")
        if self.spike_freq_hz <= 0 or self.spike_freq_hz >= self.fs / 2:
            raise ConfigError(f"spike frequency {self.spike_freq_hz} must lie in "
                              f"(0, fs/2 = {self.fs / 2})")
        if self.amplitude_gain < 1.0:
            raise ConfigError(f"amplitude_gain must be >= 1, got {self.amplitude_gain}")
        if self.noise_scale <= 0:
            raise ConfigError(f"noise_scale must be positive, got {self.noise_scale}")
        if self.noise_alpha < 0:
            raise ConfigError(f"noise_alpha must be >= 0, got {self.noise_alpha}")


def _colored_noise(rng: np.random.Generator, n: int, t: int,
                   alpha: float, scale: float) -> np.ndarray:
    """1/f^alpha noise per channel, renormalized to the requested deviation."""
    white = rng.standard_normal((n, t))
    if alpha == 0.0:
        return white * scale
    spectrum = np.fft.rfft(white, axis=1)
    freq = np.fft.rfftfreq(t)
    shaping = 1.0 / np.power(np.maximum(freq, freq[1]), alpha / 2.0)
    shaped = np.fft.irfft(spectrum * shaping, n=t, axis=1)
    std = shaped.std(axis=1, keepdims=True)
    return shaped / std * scale


def _spike_wave_train(rng: np.random.Generator, n: int, t: int,
                      fs: float, freq: float) -> np.ndarray:
    """Unit-amplitude periodic spike + slow wave, phase shared across channels.

    Channels get a small timing jitter and an amplitude factor in [0.6, 1],
    leaving them strongly correlated the way a generalized discharge is.
    """
    base_phase = rng.uniform(0.0, 1.0)
    jitter_s = rng.uniform(-0.01, 0.01, size=(n, 1))
    channel_amp = rng.uniform(0.6, 1.0, size=(n, 1))
    times = np.arange(t) / fs
    cycle = ((times[None, :] - jitter_s) * freq + base_phase) % 1.0
    spike = np.exp(-0.5 * ((cycle - 0.08) / 0.02) ** 2)
    wave_pos = np.clip((cycle - 0.15) / 0.45, 0.0, 1.0)
    wave = 0.5 * np.sin(np.pi * wave_pos)
    return channel_amp * (spike + wave)


def generate_synthetic(config: SynthConfig) -> RawClassData:
    """Equal-length interictal and ictal stacks from one seeded generator."""
    rng = np.random.default_rng(config.seed)
    t = round_half_away(config.duration_s * config.fs)
    interictal = _colored_noise(rng, config.n_channels, t,
                                config.noise_alpha, config.noise_scale)
    ictal = _colored_noise(rng, config.n_channels, t,
                           config.noise_alpha, config.noise_scale)
    burst = _spike_wave_train(rng, config.n_channels, t, config.fs, config.spike_freq_hz)
    ictal = ictal + (config.amplitude_gain - 1.0) * config.noise_scale * burst
    if config.n_channels == len(CANONICAL_CHANNELS):
        order = CANONICAL_CHANNELS
    else:
        order = tuple(f"SYN{i:02d}" for i in range(config.n_channels))
    return RawClassData(interictal, ictal, order)
