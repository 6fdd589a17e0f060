"""
Sorter forward model and evaluation metrics

A sorter is one or two phase elements, each followed by a thin lens of focal length f and
free-space propagation over f. The second element sits in the focal plane of the first
lens. Light landing in each square output channel is integrated into a d x d matrix from
which every quality figure is derived.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from services.errors import ValidationError
from services.optics import (
    TWO_PI,
    PhaseMap,
    apply_phase,
    check_edge_energy,
    edge_energy_fraction,
    lens_phase,
    power,
    propagate,
    snapshot_propagation,
    wrap_phase,
)

logger = logging.getLogger(__name__)

DEFAULT_MACROPIXELS = 125
DEFAULT_MACRO_PITCH = 20e-6
DEFAULT_CHANNEL_SIDE = 200e-6
DEFAULT_CHANNEL_SPACING = 400e-6
DEFAULT_FOCAL = 1.0
DEFAULT_STEPS = 5
FITNESS_FLOOR = 1e-3
INPUT_POWER_TOLERANCE = 1e-3
CLIPPED_INPUT_FRACTION = 1e-6


@dataclass(frozen=True)
class PhaseElement:
    """Hologram of m x m macropixels, phases wrapped to [0, 2pi)"""

    phases: np.ndarray
    macro_pitch: float = DEFAULT_MACRO_PITCH

    def __post_init__(self):
        phases = wrap_phase(self.phases)
        if phases.ndim != 2 or phases.shape[0] != phases.shape[1]:
            raise ValidationError(f'phase element must be square, got shape {phases.shape}')
        if phases.shape[0] < 16:
            raise ValidationError(
                f'phase element needs at least 16 macropixels, got {phases.shape[0]}'
            )
        if not self.macro_pitch > 0:
            raise ValidationError(f'macropixel pitch must be positive, got {self.macro_pitch}')
        phases.flags.writeable = False
        object.__setattr__(self, 'phases', phases)

    @classmethod
    def zeros(cls, m=DEFAULT_MACROPIXELS, macro_pitch=DEFAULT_MACRO_PITCH):
        return cls(np.zeros((m, m)), macro_pitch)

    @property
    def m(self):
        return self.phases.shape[0]

    @property
    def extent(self):
        return self.m * self.macro_pitch


@dataclass(frozen=True)
class Channel:
    """Axis-aligned square detector region in the output plane"""

    x: float
    y: float
    side: float = DEFAULT_CHANNEL_SIDE

    def __post_init__(self):
        if not self.side > 0:
            raise ValidationError(f'channel side must be positive, got {self.side}')

    def index_range(self, center, grid):
        """Half-open sample range [start, stop) covered along one axis"""
        eps = 1e-9
        lo = (center - self.side / 2) / grid.pitch + grid.n // 2
        hi = (center + self.side / 2) / grid.pitch + grid.n // 2
        return math.ceil(lo - eps), math.ceil(hi - eps)

    def slices(self, grid):
        """(row, column) slices of the samples inside the channel"""
        r0, r1 = self.index_range(self.y, grid)
        c0, c1 = self.index_range(self.x, grid)
        return slice(r0, r1), slice(c0, c1)

    def overlaps(self, other):
        reach = (self.side + other.side) / 2
        return abs(self.x - other.x) < reach and abs(self.y - other.y) < reach


@dataclass(frozen=True)
class ChannelLayout:
    """Ordered output channels; channel n is the target of input mode n"""

    channels: tuple

    def __post_init__(self):
        channels = tuple(self.channels)
        object.__setattr__(self, 'channels', channels)
        if not channels:
            raise ValidationError('channel layout is empty')
        for i, a in enumerate(channels):
            for b in channels[i + 1:]:
                if a.overlaps(b):
                    raise ValidationError(f'channels at ({a.x}, {a.y}) and ({b.x}, {b.y}) overlap')

    def __len__(self):
        return len(self.channels)

    @property
    def labels(self):
        return [f'ch{n}' for n in range(len(self.channels))]

    def check_fits(self, grid):
        for channel in self.channels:
            for center in (channel.x, channel.y):
                start, stop = channel.index_range(center, grid)
                if start < 0 or stop > grid.n:
                    raise ValidationError(
                        f'channel at ({channel.x}, {channel.y}) lies outside the '
                        f'{grid.side:g} m aperture'
                    )


def line_layout(d, spacing=DEFAULT_CHANNEL_SPACING, side=DEFAULT_CHANNEL_SIDE):
    """d channels on a horizontal line centered on the axis"""
    offsets = (np.arange(d) - (d - 1) / 2) * spacing
    return ChannelLayout(tuple(Channel(float(x), 0.0, side) for x in offsets))


def grid_layout(columns, rows, spacing=DEFAULT_CHANNEL_SPACING, side=DEFAULT_CHANNEL_SIDE):
    """columns x rows channels, row-major; full-field sets put ell along x and p along y"""
    xs = (np.arange(columns) - (columns - 1) / 2) * spacing
    ys = (np.arange(rows) - (rows - 1) / 2) * spacing
    return ChannelLayout(tuple(Channel(float(x), float(y), side) for y in ys for x in xs))


def corner_layout(offset=DEFAULT_CHANNEL_SPACING, side=DEFAULT_CHANNEL_SIDE):
    """Two channels, lower-left then upper-right"""
    return ChannelLayout((Channel(-offset, -offset, side), Channel(offset, offset, side)))


def default_layout(family, d, columns=None, rows=None, side=DEFAULT_CHANNEL_SIDE):
    if d == 2:
        return corner_layout(side=side)
    if family == 'fullfield' and columns and rows and columns * rows == d:
        return grid_layout(columns, rows, side=side)
    return line_layout(d, side=side)


@dataclass(frozen=True)
class SorterSetup:
    """Sorter geometry; with two planes the second element sits at the first focal plane"""

    grid: object
    layout: ChannelLayout
    planes: int = 1
    focal: float = DEFAULT_FOCAL
    steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if self.planes not in (1, 2):
            raise ValidationError(f'planes must be 1 or 2, got {self.planes}')
        if not self.focal > 0:
            raise ValidationError(f'focal length must be positive, got {self.focal}')
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f'steps must be a positive integer, got {self.steps}')
        self.layout.check_fits(self.grid)

    @property
    def d(self):
        return len(self.layout)


@dataclass
class SortMetrics:
    """Channel intensities and every figure derived from them"""

    raw: np.ndarray
    input_powers: np.ndarray
    B: float = 0.0
    P: np.ndarray = None
    ability: float = 0.0
    efficiencies: np.ndarray = None
    efficiency: float = 0.0
    e_b: float = 0.0
    R: float = 0.0
    F: float = 0.0
    degenerate: list = field(default_factory=list)

    @classmethod
    def from_raw(cls, raw, input_powers=None):
        """
        Derive every metric from a raw channel matrix

        Args:
            raw (np.ndarray): d x d matrix, raw[n, m] = power of input n in channel m
            input_powers (array_like): Power of each input; defaults to 1
        """
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ValidationError(f'raw matrix must be square, got shape {raw.shape}')
        d = raw.shape[0]
        if input_powers is None:
            input_powers = np.ones(d)
        input_powers = np.asarray(input_powers, dtype=np.float64)

        metrics = cls(raw=raw, input_powers=input_powers)
        metrics.B = sorting_performance(raw)
        metrics.P = np.array([sorting_probability(raw[n], n) for n in range(d)])
        metrics.degenerate = [bool(raw[n].sum() == 0) for n in range(d)]
        metrics.ability = float(np.mean(metrics.P))
        metrics.e_b = qber(metrics)
        metrics.efficiencies = np.diag(raw) / input_powers
        metrics.efficiency = float(np.mean(metrics.efficiencies))
        metrics.R = key_rate(d, min(max(metrics.e_b, 0.0), 1.0))
        metrics.F = metrics.B * max(metrics.R, FITNESS_FLOOR)
        if any(metrics.degenerate):
            logger.warning(
                f'all-zero channel rows for inputs '
                f'{[n for n, flag in enumerate(metrics.degenerate) if flag]}; P_n set to 1/d'
            )
        return metrics

    @property
    def d(self):
        return self.raw.shape[0]


def embed_element(element, grid):
    """
    Map a macropixel element onto simulation samples

    Args:
        element (PhaseElement): Hologram
        grid (Grid): Simulation grid; its pitch must divide the macropixel pitch

    Returns:
        PhaseMap: Element centered on the grid, zero phase outside it
    """
    ratio = element.macro_pitch / grid.pitch
    s = round(ratio)
    if s < 1 or abs(ratio - s) > 1e-9 * ratio:
        raise ValidationError(
            f'grid pitch {grid.pitch:g} m does not divide '
            f'macropixel pitch {element.macro_pitch:g} m'
        )
    size = element.m * s
    if size > grid.n:
        raise ValidationError(
            f'element extent {element.extent:g} m exceeds grid extent {grid.side:g} m'
        )
    phases = np.zeros((grid.n, grid.n))
    offset = (grid.n - size) // 2
    phases[offset:offset + size, offset:offset + size] = np.kron(element.phases, np.ones((s, s)))
    return PhaseMap(grid, phases)


def _plane_maps(setup, elements):
    elements = tuple(elements)
    if len(elements) != setup.planes:
        raise ValidationError(
            f'setup has {setup.planes} planes but {len(elements)} elements were given'
        )
    lens = lens_phase(setup.grid, setup.focal)
    return [
        PhaseMap(setup.grid, embed_element(e, setup.grid).phases + lens.phases) for e in elements
    ]


def _forward(setup, maps, field):
    for plane in maps:
        field = propagate(apply_phase(field, plane), setup.focal, setup.steps)
    return field


def _channel_powers(setup, field):
    intensity = field.intensity
    pitch_sq = setup.grid.pitch**2
    return np.array(
        [
            intensity[channel.slices(setup.grid)].sum() * pitch_sq
            for channel in setup.layout.channels
        ]
    )


def run_sorter(setup, elements, inputs, threads=1, monitor=True):
    """
    Send every input through the sorter and evaluate the channel intensities

    Args:
        setup (SorterSetup): Geometry
        elements (sequence[PhaseElement]): One element per plane
        inputs (sequence[ComplexField]): d unit-power input fields, input n targets channel n
        threads (int): Worker threads for per-mode evaluation; results do not depend on it
        monitor (bool): Warn when output light reaches the grid boundary

    Returns:
        SortMetrics: Raw matrix and derived metrics
    """
    inputs = list(inputs)
    if len(inputs) != setup.d:
        raise ValidationError(f'{len(inputs)} inputs given for {setup.d} output channels')
    input_powers = []
    for n, field_in in enumerate(inputs):
        setup.grid.check_same(field_in.grid)
        p_in = power(field_in)
        if abs(p_in - 1.0) > INPUT_POWER_TOLERANCE:
            raise ValidationError(f'input {n} has power {p_in:.6f}, expected 1')
        if edge_energy_fraction(field_in, frame=1) > CLIPPED_INPUT_FRACTION:
            raise ValidationError(f'input {n} is clipped by the grid aperture')
        input_powers.append(p_in)

    maps = _plane_maps(setup, elements)

    def evaluate(field_in):
        output = _forward(setup, maps, field_in)
        if monitor:
            check_edge_energy(output, label='sorter output')
        return _channel_powers(setup, output)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(evaluate, inputs))
    else:
        rows = [evaluate(field_in) for field_in in inputs]

    return SortMetrics.from_raw(np.vstack(rows), input_powers)


def trace_sorter(setup, elements, field_in, interval):
    """
    Intensity frames through the whole sorter, every `interval` meters

    Returns:
        list[np.ndarray]: Frames from the first element to the output plane
    """
    frames = []
    current = field_in
    for index, plane in enumerate(_plane_maps(setup, elements)):
        modulated = apply_phase(current, plane)
        segment = snapshot_propagation(modulated, setup.focal, interval)
        # a phase-only plane leaves intensity unchanged, skip the duplicate frame
        frames.extend(segment if index == 0 else segment[1:])
        current = propagate(modulated, setup.focal, setup.steps)
    return frames


def sorting_performance(raw):
    """B = sum_n (I_n - sum_{m != n} I~_m)"""
    raw = np.asarray(raw, dtype=np.float64)
    diagonal = np.diag(raw)
    wrong = raw.sum(axis=1) - diagonal
    return float(np.sum(diagonal - wrong))


def sorting_probability(row, n):
    """
    P_n = I_n / (I_n + sum_{m != n} I~_m)

    An all-zero row gives 1/d.
    """
    row = np.asarray(row, dtype=np.float64)
    total = row.sum()
    if total == 0:
        return 1.0 / row.size
    return float(row[n] / total)


def qber(metrics):
    """e_b = 1 - mean(P_n), equal a-priori mode probabilities"""
    return 1.0 - float(np.mean(metrics.P))


def shannon_entropy_d(x, d):
    """
    d-dimensional Shannon entropy in bits

    h(x) = -x log2[x / (d - 1)] - (1 - x) log2(1 - x), continuous at 0 and 1.
    """
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f'entropy argument must lie in [0, 1], got {x}')
    if d < 2:
        raise ValidationError(f'dimension must be >= 2, got {d}')
    return float(-(special.xlogy(x, x / (d - 1)) + special.xlogy(1 - x, 1 - x)) / np.log(2))


def key_rate(d, e_b):
    """Secret-key rate R = log2(d) - 2 h_d(e_b) in bits per sifted photon; may be negative"""
    return float(np.log2(d) - 2 * shannon_entropy_d(e_b, d))


def fitness(metrics, iteration, switch_at, floor=FITNESS_FLOOR):
    """B before `switch_at`, B * max(R, floor) from then on"""
    if switch_at < 0:
        raise ValidationError(f'switch_at must be >= 0, got {switch_at}')
    if iteration < switch_at:
        return metrics.B
    return metrics.B * max(metrics.R, floor)


def crosstalk_normalized(metrics):
    """Rows of the raw matrix divided by their sums; all-zero rows become uniform 1/d"""
    raw = metrics.raw
    d = raw.shape[0]
    normalized = np.empty_like(raw, dtype=np.float64)
    for n in range(d):
        total = raw[n].sum()
        normalized[n] = raw[n] / total if total > 0 else np.full(d, 1.0 / d)
    return normalized


def fork_baseline(basis, layout, grid, focal=DEFAULT_FOCAL, m=None, macro_pitch=None):
    """
    Multiplexed fork grating sending each OAM mode to its channel

    phase = arg(sum_n exp(i(-ell_n theta + k_n . r))), k_n = 2 pi c_n / (lambda f)

    Args:
        basis (BasisSpec): Pure-OAM modes (p = 0)
        layout (ChannelLayout): One channel per mode
        grid (Grid): Simulation grid the element will be embedded in
        focal (float): Lens focal length in meters
        m (int): Macropixels per side; defaults to covering the grid
        macro_pitch (float): Macropixel pitch; defaults to the grid pitch

    Returns:
        PhaseElement: The grating
    """
    if any(spec.p != 0 for spec in basis.modes):
        raise ValidationError('fork baseline needs pure-OAM modes (p = 0)')
    if len(layout) != basis.d:
        raise ValidationError(f'{len(layout)} channels given for {basis.d} modes')
    macro_pitch = grid.pitch if macro_pitch is None else macro_pitch
    s = round(macro_pitch / grid.pitch)
    if s < 1:
        raise ValidationError(f'macropixel pitch {macro_pitch:g} m is finer than the grid')
    m = grid.n // s if m is None else m

    offset = (grid.n - m * s) // 2
    centers = (offset + np.arange(m) * s + (s - 1) / 2 - grid.n // 2) * grid.pitch
    x, y = np.meshgrid(centers, centers)
    theta = np.arctan2(y, x)

    total = np.zeros((m, m), dtype=np.complex128)
    for spec, channel in zip(basis.modes, layout.channels):
        kx = TWO_PI * channel.x / (grid.wavelength * focal)
        ky = TWO_PI * channel.y / (grid.wavelength * focal)
        total += np.exp(1j * (-spec.ell * theta + kx * x + ky * y))
    return PhaseElement(np.angle(total), macro_pitch)


def cross_basis_matrix(setup, elements, inputs, threads=1):
    """Normalized crosstalk of foreign-basis inputs through elements tuned for another basis"""
    return crosstalk_normalized(run_sorter(setup, elements, inputs, threads=threads, monitor=False))
