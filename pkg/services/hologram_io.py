"""
Hologram, image and report files

Holograms are 16-bit binary graymaps (P5, maxval 65535) where pixel v stands for phase
2 pi v / 65536, with a `.txt` sidecar carrying macro_pitch, m, wavelength, creation
seed and the SHA-256 of the graymap. Reports are CSV files whose first line is a
timestamp comment; everything after it is deterministic.
"""

import hashlib
import logging
import os
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import cv2
import numpy as np

from services.errors import HologramFileError, ValidationError
from services.optics import TWO_PI
from services.sorter import PhaseElement, crosstalk_normalized

logger = logging.getLogger(__name__)

MAXVAL = 65535
LEVELS = 65536
POWER_FULL_SCALE = 0.01
REPORT_DECIMALS = 6

# magic, width, height, maxval and the single whitespace byte before the raster
_COMMENT = rb'(?:\s*#[^\n]*)*'
_HEADER = re.compile(
    rb'P5' + _COMMENT + rb'\s+(\d+)' + _COMMENT + rb'\s+(\d+)' + _COMMENT + rb'\s+(\d+)\s'
)


@dataclass(frozen=True)
class HologramMeta:
    macro_pitch: float
    m: int
    wavelength: float
    seed: int = None
    sha256: str = None


def _calculate_checksum(file_path):
    """Calculate SHA-256 checksum of file"""
    sha256_hash = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(4096), b''):
            sha256_hash.update(chunk)
    return sha256_hash.hexdigest()


def sidecar_path(path):
    return Path(path).with_suffix('.txt')


def write_pgm(path, pixels):
    """Write a 16-bit P5 graymap"""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint16)
    if not cv2.imwrite(str(path), pixels):
        raise HologramFileError(f'{path}: could not write graymap')


def _check_header(path):
    """Reject anything but a P5 graymap with maxval 65535 and a complete raster"""
    with open(path, 'rb') as f:
        data = f.read()
    match = _HEADER.match(data)
    if match is None:
        raise HologramFileError(f'{path}: not a binary graymap')
    cols, rows, maxval = (int(group) for group in match.groups())
    if maxval != MAXVAL:
        raise HologramFileError(f'{path}: maxval must be {MAXVAL}, got {maxval}')
    raster = len(data) - match.end()
    if raster != rows * cols * 2:
        raise HologramFileError(f'{path}: raster holds {raster} bytes, expected {rows * cols * 2}')


def read_pgm(path):
    """
    Read a 16-bit P5 graymap

    Returns:
        np.ndarray: uint16 pixels, shape (rows, cols)

    Raises:
        HologramFileError: Wrong magic number, maxval other than 65535 or a short raster
    """
    _check_header(path)
    pixels = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if pixels is None or pixels.dtype != np.uint16 or pixels.ndim != 2:
        raise HologramFileError(f'{path}: could not decode graymap')
    return pixels


def quantize_phase(phases):
    """Nearest 16-bit level; phases just below 2pi clip to 65535"""
    levels = np.rint(np.asarray(phases) * LEVELS / TWO_PI)
    return np.clip(levels, 0, MAXVAL).astype(np.uint16)


def dequantize_phase(pixels):
    return np.asarray(pixels, dtype=np.float64) * TWO_PI / LEVELS


def save_hologram(element, path, wavelength, seed=None):
    """
    Save a phase element as a graymap plus sidecar

    Args:
        element (PhaseElement): Element to save
        path (str): Graymap path; the sidecar goes next to it with a .txt suffix
        wavelength (float): Design wavelength in meters
        seed (int): Seed of the run that produced the element

    Returns:
        HologramMeta: Metadata written to the sidecar
    """
    write_pgm(path, quantize_phase(element.phases))
    meta = HologramMeta(
        macro_pitch=float(element.macro_pitch),
        m=element.m,
        wavelength=float(wavelength),
        seed=seed,
        sha256=_calculate_checksum(path),
    )
    lines = [
        f'macro_pitch = {meta.macro_pitch!r}',
        f'm = {meta.m}',
        f'wavelength = {meta.wavelength!r}',
        f"seed = {'none' if seed is None else seed}",
        f'sha256 = {meta.sha256}',
    ]
    sidecar_path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.info(f'hologram saved: {path} ({meta.m}x{meta.m} macropixels)')
    return meta


def _read_sidecar(path):
    side = sidecar_path(path)
    if not side.exists():
        raise HologramFileError(f'missing sidecar {side}')
    values = {}
    for line in side.read_text(encoding='utf-8').splitlines():
        if line.strip():
            if '=' not in line:
                raise HologramFileError(f'{side}: malformed line {line!r}')
            key, value = (part.strip() for part in line.split('=', 1))
            values[key] = value
    try:
        seed = values.get('seed', 'none')
        return HologramMeta(
            macro_pitch=float(values['macro_pitch']),
            m=int(values['m']),
            wavelength=float(values['wavelength']),
            seed=None if seed == 'none' else int(seed),
            sha256=values.get('sha256'),
        )
    except (KeyError, ValueError) as e:
        raise HologramFileError(f'{side}: missing or malformed field {e}') from e


def load_hologram(path):
    """
    Load a graymap hologram and its sidecar

    Returns:
        tuple[PhaseElement, HologramMeta]: Element and metadata

    Raises:
        HologramFileError: Malformed file, checksum mismatch or size mismatch vs sidecar
    """
    meta = _read_sidecar(path)
    if meta.sha256 and _calculate_checksum(path) != meta.sha256:
        raise HologramFileError(f'{path}: checksum does not match sidecar')
    pixels = read_pgm(path)
    if pixels.shape != (meta.m, meta.m):
        raise HologramFileError(
            f'{path}: graymap is {pixels.shape[1]}x{pixels.shape[0]}, sidecar says m = {meta.m}'
        )
    try:
        element = PhaseElement(dequantize_phase(pixels), meta.macro_pitch)
    except ValidationError as e:
        raise HologramFileError(f'{path}: {e}') from e
    logger.info(f'hologram loaded: {path}')
    return element, meta


def intensity_image(field, normalization='peak', full_scale=POWER_FULL_SCALE):
    """
    16-bit image of |a|^2

    Args:
        field (ComplexField): Field to render
        normalization (str): 'peak' maps the maximum to 65535; 'power' maps a per-sample
            power fraction of `full_scale` to 65535 so frames of one series share a scale
        full_scale (float): Power fraction per sample shown as white

    Returns:
        np.ndarray: uint16 image
    """
    intensity = field.intensity
    if normalization == 'peak':
        peak = intensity.max()
        scaled = intensity / peak if peak > 0 else np.zeros_like(intensity)
    elif normalization == 'power':
        if not full_scale > 0:
            raise ValidationError(f'full scale must be positive, got {full_scale}')
        total = intensity.sum()
        fraction = intensity / total if total > 0 else np.zeros_like(intensity)
        scaled = np.minimum(1.0, fraction / full_scale)
    else:
        raise ValidationError(f"normalization must be 'peak' or 'power', got {normalization!r}")
    return np.rint(scaled * MAXVAL).astype(np.uint16)


def export_intensity(field, path, normalization='peak', full_scale=POWER_FULL_SCALE):
    image = intensity_image(field, normalization, full_scale)
    write_pgm(path, image)
    logger.debug(f'intensity image written: {path}')
    return image


def _timestamp_line():
    return f"# created {datetime.now(timezone.utc).isoformat(timespec='seconds')}"


def round_row(row, decimals=REPORT_DECIMALS):
    """
    Round probabilities to `decimals` places keeping their sum

    Largest-remainder rounding, so a row that sums to 1 prints as summing to exactly 1.
    """
    scale = 10**decimals
    units = np.asarray(row, dtype=np.float64) * scale
    floors = np.floor(units)
    shortfall = int(round(units.sum() - floors.sum()))
    if shortfall > 0:
        # stable order keeps ties deterministic
        order = np.argsort(-(units - floors), kind='stable')
        floors[order[:shortfall]] += 1
    return floors / scale


def _write_lines(path, lines):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write('\n'.join(lines) + '\n')


def write_crosstalk_report(metrics, path, input_labels=None, channel_labels=None):
    """
    Normalized crosstalk matrix with figure-of-merit footer rows

    Args:
        metrics (SortMetrics): Evaluated sorter
        path (str): CSV destination
        input_labels (list[str]): Row labels, one per input mode
        channel_labels (list[str]): Column labels, one per channel
    """
    d = metrics.d
    input_labels = input_labels or [f'mode{n}' for n in range(d)]
    channel_labels = channel_labels or [f'ch{n}' for n in range(d)]
    fmt = f'{{:.{REPORT_DECIMALS}f}}'

    lines = [_timestamp_line(), ','.join(['input', *channel_labels])]
    for label, row in zip(input_labels, crosstalk_normalized(metrics)):
        lines.append(','.join([label, *(fmt.format(value) for value in round_row(row))]))
    for name, value in (
        ('ability', metrics.ability),
        ('efficiency', metrics.efficiency),
        ('e_b', metrics.e_b),
        ('R', metrics.R),
        ('B', metrics.B),
    ):
        lines.append(f'{name},{fmt.format(value)}')
    _write_lines(path, lines)
    logger.info(f'crosstalk report written: {path}')


def write_raw_intensities(metrics, path, input_labels=None, channel_labels=None):
    """Unnormalized channel powers, one row per input mode, plus the input power"""
    d = metrics.d
    input_labels = input_labels or [f'mode{n}' for n in range(d)]
    channel_labels = channel_labels or [f'ch{n}' for n in range(d)]
    lines = [_timestamp_line(), ','.join(['input', *channel_labels, 'input_power'])]
    for label, row, total in zip(input_labels, metrics.raw, metrics.input_powers):
        cells = [f'{value:.9e}' for value in row] + [f'{total:.9e}']
        lines.append(','.join([label, *cells]))
    _write_lines(path, lines)
    logger.info(f'raw intensities written: {path}')


def write_history_csv(history, path):
    """Iteration trace of the best member: iteration, best fitness, ability, e_b"""
    lines = [_timestamp_line(), 'iteration,best_fitness,ability,e_b']
    for t, (fit, ability, e_b) in enumerate(
        zip(history.best_fitness, history.best_ability, history.best_qber)
    ):
        lines.append(f'{t},{fit:.17g},{ability:.17g},{e_b:.17g}')
    _write_lines(path, lines)
    logger.info(f'history written: {path} ({history.iterations} iterations)')


def write_cross_basis_report(matrix, path, input_labels, channel_labels):
    fmt = f'{{:.{REPORT_DECIMALS}f}}'
    lines = [_timestamp_line(), ','.join(['input', *channel_labels])]
    for label, row in zip(input_labels, matrix):
        lines.append(','.join([label, *(fmt.format(value) for value in round_row(row))]))
    _write_lines(path, lines)
    logger.info(f'cross-basis report written: {path}')


class RunDirectory:
    """
    Output folder of one CLI run

    Args:
        directory (str): Folder to write into; SORTER_OUTPUT_DIR (default 'runs') when None
    """

    def __init__(self, directory=None):
        self.directory = Path(directory or os.getenv('SORTER_OUTPUT_DIR', 'runs'))
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        return str(self.directory / name)

    def save_elements(self, elements, wavelength, seed=None):
        """Write element1.pgm (and element2.pgm) with sidecars"""
        paths = []
        for index, element in enumerate(elements, start=1):
            path = self.path(f'element{index}.pgm')
            save_hologram(element, path, wavelength, seed)
            paths.append(path)
        return paths

    def write_reports(self, metrics, input_labels, channel_labels):
        write_crosstalk_report(metrics, self.path('crosstalk.csv'), input_labels, channel_labels)
        write_raw_intensities(
            metrics, self.path('raw_intensities.csv'), input_labels, channel_labels
        )

    def write_config(self, text):
        path = self.path('run.cfg')
        Path(path).write_text(text, encoding='utf-8')
        logger.info(f'resolved configuration written: {path}')
        return path
