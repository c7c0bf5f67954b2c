"""
Metrics Service - SNR, denoising gain and Welch PSD analysis
"""

import csv
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal as sps

from rc_denoise.exceptions import DegenerateSignalError, InvalidArgumentError
from rc_denoise.models import DenoisingReport, PSDCurve
from rc_denoise.services.training import nmse
from rc_denoise.trajectory import Trajectory

Signal = Union[np.ndarray, Trajectory]

DEFAULT_SEGMENT = 1024
DEFAULT_OVERLAP = 0.5
DB_FLOOR = 1e-300


def _values(value: Signal) -> np.ndarray:
    if isinstance(value, Trajectory):
        return value.values
    value = np.asarray(value, dtype=float)
    return value[:, None] if value.ndim == 1 else value


def _residual(clean: Signal, candidate: Signal) -> Tuple[np.ndarray, np.ndarray]:
    truth, other = _values(clean), _values(candidate)
    if truth.shape != other.shape:
        raise InvalidArgumentError(f"shape mismatch: {truth.shape} vs {other.shape}")
    return truth, other - truth


# MARK: - SNR

def snr(clean: Signal, candidate: Signal) -> float:
    """
    RMS(clean) / RMS(candidate − clean), all channels pooled

    Returns +inf when the candidate equals the clean signal.
    """
    truth, residual = _residual(clean, candidate)
    signal_rms = float(np.sqrt(np.mean(truth ** 2)))
    if signal_rms == 0.0:
        raise DegenerateSignalError("clean signal has zero RMS; SNR is undefined")
    residual_rms = float(np.sqrt(np.mean(residual ** 2)))
    if residual_rms == 0.0:
        return math.inf
    return signal_rms / residual_rms


def channel_snr(clean: Signal, candidate: Signal) -> np.ndarray:
    truth, residual = _residual(clean, candidate)
    signal_rms = np.sqrt(np.mean(truth ** 2, axis=0))
    if np.any(signal_rms == 0.0):
        raise DegenerateSignalError("a clean channel has zero RMS; SNR is undefined")
    residual_rms = np.sqrt(np.mean(residual ** 2, axis=0))
    with np.errstate(divide="ignore"):
        return np.where(residual_rms == 0.0, np.inf, signal_rms / residual_rms)


def snr_db(value: float) -> float:
    return 20.0 * math.log10(value)


# MARK: - Power spectral density

def welch_psd(
    signal,
    sample_rate: float,
    segment_length: int = DEFAULT_SEGMENT,
    overlap_fraction: float = DEFAULT_OVERLAP,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-sided Hann-windowed Welch PSD

    Density scaling, so that summing the PSD over the frequency grid
    approximates the variance of the signal.
    """
    signal = np.asarray(signal, dtype=float).ravel()
    if segment_length < 2 or segment_length & (segment_length - 1):
        raise InvalidArgumentError(f"segment length must be a power of two, got {segment_length}")
    if signal.size < segment_length:
        raise InvalidArgumentError(f"signal of {signal.size} samples is shorter than the {segment_length}-sample segment")
    if not 0.0 <= overlap_fraction < 1.0:
        raise InvalidArgumentError(f"overlap fraction must be in [0, 1), got {overlap_fraction}")
    if not sample_rate > 0:
        raise InvalidArgumentError(f"sample rate must be positive, got {sample_rate}")
    frequencies, psd = sps.welch(
        signal,
        fs=sample_rate,
        window="hann",
        nperseg=segment_length,
        noverlap=int(segment_length * overlap_fraction),
        detrend="constant",
        return_onesided=True,
        scaling="density",
    )
    return frequencies, psd


def largest_segment(n_samples: int, preferred: int = DEFAULT_SEGMENT) -> int:
    """`preferred`, or the largest power of two fitting in n_samples"""
    if n_samples < 2:
        raise InvalidArgumentError("PSD needs at least 2 samples")
    return min(preferred, 1 << (int(n_samples).bit_length() - 1))


def integrate_psd(frequencies, psd) -> float:
    """Rectangle-rule integral of a PSD on a uniform grid"""
    frequencies = np.asarray(frequencies, dtype=float)
    if frequencies.size < 2:
        raise InvalidArgumentError("PSD grid needs at least 2 points")
    return float(np.sum(psd) * (frequencies[1] - frequencies[0]))


def psd_db(psd) -> np.ndarray:
    """10·log10(PSD), floored to stay finite on zero bins"""
    return 10.0 * np.log10(np.maximum(np.asarray(psd, dtype=float), DB_FLOOR))


def psd_slope(frequencies, psd, f_lo: float, f_hi: float) -> float:
    """Least-squares slope of log10(PSD) against log10(f) on [f_lo, f_hi]"""
    frequencies = np.asarray(frequencies, dtype=float)
    psd = np.asarray(psd, dtype=float)
    band = (frequencies >= f_lo) & (frequencies <= f_hi) & (frequencies > 0)
    if band.sum() < 4:
        raise InvalidArgumentError(f"only {int(band.sum())} PSD points in [{f_lo:g}, {f_hi:g}]; need at least 4")
    if np.any(psd[band] <= 0):
        raise InvalidArgumentError("PSD must be positive on the fitting band")
    slope, _ = np.polyfit(np.log10(frequencies[band]), np.log10(psd[band]), 1)
    return float(slope)


def psd_curve(label: str, signal, sample_rate: float, segment_length: int = DEFAULT_SEGMENT) -> PSDCurve:
    segment = largest_segment(len(signal), segment_length)
    frequencies, psd = welch_psd(signal, sample_rate, segment)
    return PSDCurve(label=label, frequencies=frequencies.tolist(), psd_db=psd_db(psd).tolist())


def write_psd(curve: PSDCurve, path) -> Path:
    """CSV `f_hz,psd_db_per_hz`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["f_hz", "psd_db_per_hz"])
        for f, value in zip(curve.frequencies, curve.psd_db):
            writer.writerow([format(f, ".17g"), format(value, ".17g")])
    return path


# MARK: - Denoising gain

def _as_trajectory(value: Signal, names: Optional[Sequence[str]] = None) -> Trajectory:
    if isinstance(value, Trajectory):
        return value
    values = _values(value)
    names = names or tuple(f"c{i}" for i in range(values.shape[1]))
    return Trajectory(0.0, 1.0, values, names)


def denoising_gain(
    clean: Signal,
    test_input: Signal,
    reconstruction: Signal,
    per_channel: bool = False,
    skip: int = 0,
    psd: bool = False,
    sample_rate: Optional[float] = None,
    segment_length: int = DEFAULT_SEGMENT,
) -> DenoisingReport:
    """
    SNR of the reconstruction over SNR of the test input

    Args:
        clean: ground truth covering every channel of the other two signals
        test_input: noisy signal fed to the denoiser
        reconstruction: denoiser output
        per_channel: average per-channel SNRs instead of pooling channels
        skip: leading rows excluded (reservoir washout)
        psd: attach Welch PSD curves of the noisy, denoised, residual and
            injected-noise signals per channel
        sample_rate: PSD sample rate; defaults to 1/dt of the reconstruction

    Gain is computed on the channels shared by test input and reconstruction;
    NMSE and residual RMS cover all reconstructed channels.
    """
    reconstruction = _as_trajectory(reconstruction)
    test_input = _as_trajectory(test_input, reconstruction.channel_names)
    clean = _as_trajectory(clean, reconstruction.channel_names)
    if not (clean.n_steps == test_input.n_steps == reconstruction.n_steps):
        raise InvalidArgumentError("clean, test input and reconstruction must be aligned")
    if not 0 <= skip < clean.n_steps:
        raise InvalidArgumentError(f"skip={skip} leaves no rows to evaluate")

    shared = tuple(n for n in reconstruction.channel_names if n in test_input.channel_names)
    if not shared:
        raise InvalidArgumentError("test input and reconstruction share no channels")

    truth_all = clean.select(reconstruction.channel_names).values[skip:]
    recon_all = reconstruction.values[skip:]
    truth = clean.select(shared).values[skip:]
    noisy = test_input.select(shared).values[skip:]
    recon = reconstruction.select(shared).values[skip:]

    per_test = channel_snr(truth, noisy)
    per_recon = channel_snr(truth, recon)
    if per_channel:
        snr_test, snr_recon = float(np.mean(per_test)), float(np.mean(per_recon))
    else:
        snr_test, snr_recon = snr(truth, noisy), snr(truth, recon)

    curves: List[PSDCurve] = []
    if psd:
        rate = sample_rate or 1.0 / reconstruction.dt
        for column, name in enumerate(shared):
            curves.extend([
                psd_curve(f"noisy_{name}", noisy[:, column], rate, segment_length),
                psd_curve(f"denoised_{name}", recon[:, column], rate, segment_length),
                psd_curve(f"residual_{name}", recon[:, column] - truth[:, column], rate, segment_length),
                psd_curve(f"noise_{name}", noisy[:, column] - truth[:, column], rate, segment_length),
            ])

    return DenoisingReport(
        nmse=nmse(recon_all, truth_all),
        snr_test=snr_test,
        snr_reconstructed=snr_recon,
        denoising_gain=snr_recon / snr_test,
        channel_names=list(shared),
        residual_rms=dict(zip(
            reconstruction.channel_names,
            np.sqrt(np.mean((recon_all - truth_all) ** 2, axis=0)).tolist(),
        )),
        channel_snr_test=per_test.tolist(),
        channel_snr_reconstructed=per_recon.tolist(),
        psd=curves,
    )
