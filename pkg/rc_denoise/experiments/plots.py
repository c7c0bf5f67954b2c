"""
Plot scripts - gnuplot sources for the CSV tables written by the studies

Scripts reference their CSV by path relative to the script's directory and
render to PNG next to it when run with `gnuplot <script>`.
"""

import os
from pathlib import Path
from typing import Sequence


def _relative(csv_path: Path, script_path: Path) -> str:
    return os.path.relpath(Path(csv_path), Path(script_path).parent)


def _write(script_path: Path, lines: Sequence[str]) -> Path:
    script_path = Path(script_path)
    script_path.parent.mkdir(parents=True, exist_ok=True)
    script_path.write_text("\n".join(lines) + "\n")
    return script_path


def _header(script_path: Path, size: str = "900,700") -> list:
    return [
        "set datafile separator ','",
        f"set terminal pngcairo size {size}",
        f"set output '{Path(script_path).stem}.png'",
    ]


def write_gain_matrix_script(csv_path, script_path) -> Path:
    """Heat map of the gain matrix (rows = training noise, columns = test noise)"""
    data = _relative(csv_path, script_path)
    return _write(script_path, [
        *_header(script_path),
        "set title 'Denoising gain'",
        "set xlabel 'test noise'",
        "set ylabel 'training noise'",
        "set palette rgb 33,13,10",
        f"plot '{data}' matrix rowheaders columnheaders with image notitle, \\",
        f"     '{data}' matrix rowheaders columnheaders using 1:2:(sprintf('%.2f', $3)) with labels notitle",
    ])


def write_sweep_script(gain_csv, maxima_csv, script_path) -> Path:
    """Gain versus σ (top) and the max-x bifurcation panel (bottom)"""
    gains = _relative(gain_csv, script_path)
    maxima = _relative(maxima_csv, script_path)
    return _write(script_path, [
        *_header(script_path, "900,900"),
        "set multiplot layout 2,1",
        "set xlabel 'sigma'",
        "set ylabel 'gain'",
        f"plot '{gains}' skip 1 using 1:3:4 with yerrorlines title 'mean gain'",
        "set ylabel 'max x(t)'",
        f"plot '{maxima}' skip 1 using 1:2 with dots notitle",
        "unset multiplot",
    ])


def write_psd_script(psd_csvs: Sequence[Path], script_path) -> Path:
    """Overlaid PSD curves in dB/Hz on a logarithmic frequency axis"""
    entries = [
        f"'{_relative(path, script_path)}' skip 1 using 1:2 with lines title '{Path(path).stem.replace('_', ' ')}'"
        for path in psd_csvs
    ]
    return _write(script_path, [
        *_header(script_path),
        "set logscale x",
        "set xlabel 'f (Hz)'",
        "set ylabel 'PSD (dB/Hz)'",
        "plot " + ", \\\n     ".join(entries),
    ])


def write_gain_distribution_script(csv_path, script_path) -> Path:
    """Per-color gain values as jittered points"""
    data = _relative(csv_path, script_path)
    return _write(script_path, [
        *_header(script_path),
        "set xlabel 'noise color'",
        "set ylabel 'gain'",
        "set style data points",
        f"plot '{data}' skip 1 using 0:3:xticlabels(1) pointtype 7 notitle",
    ])


def write_nmse_script(csv_path, script_path) -> Path:
    """log10 NMSE per stage and seed from the summary table"""
    data = _relative(csv_path, script_path)
    return _write(script_path, [
        *_header(script_path),
        "set logscale y",
        "set ylabel 'NMSE'",
        "set style data points",
        f"plot '{data}' skip 1 using 0:3:xticlabels(1) pointtype 7 notitle",
    ])
