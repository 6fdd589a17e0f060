"""
Scalar field optics: sampled complex fields, phase maps, thin lenses and
angular-spectrum (split-step) free-space propagation
"""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft as sfft

from services.errors import GridMismatchError, ValidationError

logger = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
EDGE_FRAME = 8
EDGE_WARN_FRACTION = 0.01


def wrap_phase(values):
    """
    Wrap phases to [0, 2pi)

    Args:
        values (array_like): Phases in radians

    Returns:
        np.ndarray: Wrapped float64 array
    """
    wrapped = np.mod(np.asarray(values, dtype=np.float64), TWO_PI)
    # np.mod returns exactly 2pi for tiny negative inputs
    return np.where(wrapped >= TWO_PI, 0.0, wrapped)


def _frozen(array):
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Grid:
    """Uniform square sampling grid; the sample at index n // 2 sits on the optical axis"""

    n: int = 256
    pitch: float = 20e-6
    wavelength: float = 780e-9

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 32 or self.n & (self.n - 1):
            raise ValidationError(f'grid size must be a power of two >= 32, got {self.n}')
        if not self.pitch > 0:
            raise ValidationError(f'grid pitch must be positive, got {self.pitch}')
        if not self.wavelength > 0:
            raise ValidationError(f'wavelength must be positive, got {self.wavelength}')

    @property
    def side(self):
        return self.n * self.pitch

    @cached_property
    def axis(self):
        return _frozen((np.arange(self.n) - self.n // 2) * self.pitch)

    @cached_property
    def mesh(self):
        """(X, Y) coordinate arrays; rows run along y"""
        x, y = np.meshgrid(self.axis, self.axis)
        return _frozen(x), _frozen(y)

    @cached_property
    def polar(self):
        """(r, theta) arrays with theta = arctan2(y, x)"""
        x, y = self.mesh
        return _frozen(np.hypot(x, y)), _frozen(np.arctan2(y, x))

    def check_same(self, other):
        if self != other:
            raise GridMismatchError(f'grid mismatch: {self} vs {other}')


@dataclass(frozen=True)
class ComplexField:
    """Sampled complex amplitude; intensity is |amplitude|^2"""

    grid: Grid
    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.complex128)
        if samples.shape != (self.grid.n, self.grid.n):
            raise ValidationError(
                f'field shape {samples.shape} does not match grid size {self.grid.n}'
            )
        object.__setattr__(self, 'samples', _frozen(samples))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n, grid.n), dtype=np.complex128))

    @property
    def intensity(self):
        return np.abs(self.samples) ** 2


@dataclass(frozen=True)
class PhaseMap:
    """Phase screen on a grid, stored wrapped to [0, 2pi)"""

    grid: Grid
    phases: np.ndarray

    def __post_init__(self):
        phases = wrap_phase(self.phases)
        if phases.shape != (self.grid.n, self.grid.n):
            raise ValidationError(
                f'phase map shape {phases.shape} does not match grid size {self.grid.n}'
            )
        object.__setattr__(self, 'phases', _frozen(phases))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n, grid.n)))

    @cached_property
    def transmission(self):
        return _frozen(np.exp(1j * self.phases))


def power(field):
    """Total power sum(|a|^2) * pitch^2"""
    return float(np.sum(field.intensity) * field.grid.pitch**2)


def overlap(a, b):
    """
    Inner product <a|b> on the grid

    Args:
        a (ComplexField): Conjugated field
        b (ComplexField): Second field

    Returns:
        complex: sum(conj(a) * b) * pitch^2
    """
    a.grid.check_same(b.grid)
    return complex(np.vdot(a.samples, b.samples) * a.grid.pitch**2)


def apply_phase(field, phase):
    """Multiply a field pointwise by exp(i * phase)"""
    field.grid.check_same(phase.grid)
    return ComplexField(field.grid, field.samples * phase.transmission)


def lens_phase(grid, focal_length):
    """Thin-lens phase -pi (x^2 + y^2) / (lambda f), wrapped and centered on the axis"""
    if focal_length == 0:
        raise ValidationError('focal length must be non-zero')
    r, _ = grid.polar
    return PhaseMap(grid, -np.pi * r**2 / (grid.wavelength * focal_length))


@lru_cache(maxsize=32)
def _transfer_function(grid, dz):
    """
    Angular-spectrum transfer function for one sub-step

    The on-axis carrier exp(i k dz) is dropped, only kz - k is kept so the phase stays
    small; evanescent components are zeroed.
    """
    freqs = sfft.fftfreq(grid.n, d=grid.pitch)
    fx, fy = np.meshgrid(freqs, freqs)
    rho_sq = fx**2 + fy**2
    inv_wl = 1.0 / grid.wavelength
    kz_sq = inv_wl**2 - rho_sq
    propagating = kz_sq > 0
    # kz - k written without cancellation
    delta_kz = -TWO_PI * rho_sq / (np.sqrt(np.where(propagating, kz_sq, 0.0)) + inv_wl)
    transfer = np.where(propagating, np.exp(1j * delta_kz * dz), 0.0)
    return _frozen(transfer)


def propagate(field, distance, steps=1):
    """
    Advance a field through free space with the angular-spectrum method

    Args:
        field (ComplexField): Input field
        distance (float): Propagation distance in meters, >= 0
        steps (int): Number of equal sub-steps

    Returns:
        ComplexField: Propagated field
    """
    if distance < 0:
        raise ValidationError(f'propagation distance must be >= 0, got {distance}')
    if int(steps) != steps or steps < 1:
        raise ValidationError(f'steps must be a positive integer, got {steps}')
    if distance == 0:
        return field

    transfer = _transfer_function(field.grid, distance / steps)
    spectrum = sfft.fft2(field.samples)
    for _ in range(int(steps)):
        spectrum = spectrum * transfer
    return ComplexField(field.grid, sfft.ifft2(spectrum))


def snapshot_propagation(field, total, interval):
    """
    Record intensity frames every `interval` meters over `total` meters

    Args:
        field (ComplexField): Field at z = 0
        total (float): Total distance in meters
        interval (float): Distance between frames; must divide `total`

    Returns:
        list[np.ndarray]: Intensity maps at z = 0, interval, ..., total
    """
    if total < 0:
        raise ValidationError(f'total distance must be >= 0, got {total}')
    if total == 0:
        return [field.intensity]
    if not interval > 0:
        raise ValidationError(f'snapshot interval must be positive, got {interval}')

    count = round(total / interval)
    if count < 1 or abs(count * interval - total) > 1e-9 * max(total, 1.0):
        raise ValidationError(f'interval {interval} m does not divide total {total} m')

    frames = [field.intensity]
    current = field
    for _ in range(count):
        current = propagate(current, interval, 1)
        frames.append(current.intensity)
    return frames


def centroid(field):
    """Intensity-weighted (x, y) center"""
    x, y = field.grid.mesh
    intensity = field.intensity
    total = intensity.sum()
    if total == 0:
        return 0.0, 0.0
    return float((x * intensity).sum() / total), float((y * intensity).sum() / total)


def beam_radius(field):
    """
    Second-moment beam radii (wx, wy), w = 2 sigma

    Matches the 1/e^2 radius for a Gaussian beam.
    """
    x, y = field.grid.mesh
    intensity = field.intensity
    total = intensity.sum()
    if total == 0:
        return 0.0, 0.0
    cx, cy = centroid(field)
    var_x = ((x - cx) ** 2 * intensity).sum() / total
    var_y = ((y - cy) ** 2 * intensity).sum() / total
    return float(2 * np.sqrt(var_x)), float(2 * np.sqrt(var_y))


def edge_energy_fraction(field, frame=EDGE_FRAME):
    """Fraction of power in the outer `frame` samples of the grid"""
    intensity = field.intensity
    total = intensity.sum()
    if total == 0:
        return 0.0
    inner = intensity[frame:-frame, frame:-frame].sum()
    return float((total - inner) / total)


def check_edge_energy(field, threshold=EDGE_WARN_FRACTION, label='field'):
    """Log a warning when too much power reaches the grid boundary"""
    fraction = edge_energy_fraction(field)
    if fraction > threshold:
        logger.warning(
            f'{label}: {fraction:.2%} of power lies in the outer {EDGE_FRAME}-sample frame; '
            f'light may wrap around the periodic grid'
        )
    return fraction
