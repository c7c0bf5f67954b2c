"""
Noise Service - white and colored noise synthesis at a prescribed SNR
"""

import hashlib
from typing import Tuple, Union

import numpy as np

from rc_denoise.exceptions import DegenerateSignalError, InvalidArgumentError
from rc_denoise.models import NoiseSpec
from rc_denoise.trajectory import Trajectory

Seed = Union[int, np.random.SeedSequence]

MIN_COLORED_LENGTH = 8


def derive_seed(seed: int, *labels: str) -> int:
    """Stable 64-bit seed for a (master seed, label...) combination"""
    keys = tuple(int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little") for label in labels)
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=keys)
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def rms(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(values ** 2)))


def gaussian_white(n: int, sigma: float, seed: Seed) -> np.ndarray:
    """I.i.d. zero-mean normal samples with standard deviation sigma"""
    if n < 1:
        raise InvalidArgumentError(f"n must be at least 1, got {n}")
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be non-negative, got {sigma}")
    rng = np.random.default_rng(seed)
    return sigma * rng.standard_normal(n)


def colored_noise(n: int, exponent: float, seed: Seed) -> np.ndarray:
    """
    Unit-RMS noise with PSD ∝ f^exponent

    A white spectrum is multiplied by f^(exponent/2), the DC bin is zeroed,
    and the inverse transform is normalized to zero mean and RMS 1.
    """
    if n < MIN_COLORED_LENGTH:
        raise InvalidArgumentError(f"colored noise needs at least {MIN_COLORED_LENGTH} samples, got {n}")
    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    frequencies = np.fft.rfftfreq(n)
    shaping = np.zeros_like(frequencies)
    shaping[1:] = frequencies[1:] ** (exponent / 2.0)
    shaped = np.fft.irfft(spectrum * shaping, n)
    shaped = shaped - shaped.mean()
    return shaped / rms(shaped)


def add_noise(clean: Trajectory, spec: NoiseSpec) -> Tuple[Trajectory, np.ndarray]:
    """
    Noisy copy of `clean` plus the exact injected noise

    Every channel gets its own stream, scaled so RMS(noise) equals
    RMS(channel) / target_snr. The returned realization is noisy − clean.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(clean.n_channels)
    noisy = np.empty_like(clean.values)
    for column, stream in enumerate(streams):
        signal = clean.values[:, column]
        signal_rms = rms(signal)
        if signal_rms == 0.0:
            raise DegenerateSignalError(
                f"channel '{clean.channel_names[column]}' has zero RMS; SNR is undefined"
            )
        if spec.exponent == 0.0:
            unit = gaussian_white(clean.n_steps, 1.0, stream)
            unit = unit / rms(unit)
        else:
            unit = colored_noise(clean.n_steps, spec.exponent, stream)
        noisy[:, column] = signal + unit * (signal_rms / spec.target_snr)
    realization = noisy - clean.values
    noisy_trajectory = Trajectory(clean.t0, clean.dt, noisy, clean.channel_names, {"noise": spec.label})
    return noisy_trajectory, realization
