"""
Laguerre-Gauss modes, their superpositions and mutually unbiased bases
"""

import logging
from dataclasses import dataclass
from math import factorial

import numpy as np
import sympy
from scipy import special

from services.errors import ValidationError
from services.optics import ComplexField, overlap

logger = logging.getLogger(__name__)

DEFAULT_WAIST = 250e-6
MIN_SAMPLES_PER_WAIST = 8
EDGE_INTENSITY_LIMIT = 1e-6
UNIT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LGSpec:
    """Laguerre-Gauss mode LG(ell, p) with waist w0 at the input plane"""

    ell: int
    p: int = 0
    waist: float = DEFAULT_WAIST

    def __post_init__(self):
        if int(self.ell) != self.ell or int(self.p) != self.p:
            raise ValidationError(f'mode indices must be integers, got ell={self.ell} p={self.p}')
        if self.p < 0:
            raise ValidationError(f'radial index must be >= 0, got {self.p}')
        if not self.waist > 0:
            raise ValidationError(f'waist must be positive, got {self.waist}')

    @property
    def label(self):
        return f'l={self.ell:+d} p={self.p}'


@dataclass(frozen=True)
class BasisSpec:
    """Ordered computational basis of d distinct LG modes sharing one waist"""

    modes: tuple

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, 'modes', modes)
        if len(modes) < 2:
            raise ValidationError(f'a basis needs at least 2 modes, got {len(modes)}')
        if len(set(modes)) != len(modes):
            raise ValidationError('basis modes must be distinct')
        if len({mode.waist for mode in modes}) != 1:
            raise ValidationError('all basis modes must share one waist')

    @property
    def d(self):
        return len(self.modes)

    @property
    def waist(self):
        return self.modes[0].waist

    @property
    def labels(self):
        return [mode.label for mode in self.modes]


@dataclass(frozen=True)
class ModeVector:
    """Normalized superposition sum(c_n LG_n) over a computational basis"""

    basis: BasisSpec
    coeffs: np.ndarray
    label: str = ''

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.complex128).reshape(-1)
        if coeffs.size != self.basis.d:
            raise ValidationError(
                f'expected {self.basis.d} coefficients, got {coeffs.size}'
            )
        norm = float(np.sum(np.abs(coeffs) ** 2))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise ValidationError(f'coefficients must have unit norm, got {norm}')
        coeffs.flags.writeable = False
        object.__setattr__(self, 'coeffs', coeffs)

    @classmethod
    def normalized(cls, basis, coeffs, label=''):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        norm = np.linalg.norm(coeffs)
        if norm == 0:
            raise ValidationError('cannot normalize an all-zero coefficient vector')
        return cls(basis, coeffs / norm, label)

    @classmethod
    def basis_state(cls, basis, index):
        coeffs = np.zeros(basis.d, dtype=np.complex128)
        coeffs[index] = 1.0
        return cls(basis, coeffs, basis.modes[index].label)


@dataclass(frozen=True)
class MUBFamily:
    """d + 1 mutually unbiased bases; bases[k][j] is vector j of basis k, bases[0] = identity"""

    d: int
    bases: tuple

    def __len__(self):
        return len(self.bases)


def default_ells(d):
    """OAM values used when a config gives none: -1,+1 for d = 2, symmetric ranges otherwise"""
    if d == 2:
        return [-1, 1]
    if d % 2:
        half = (d - 1) // 2
        return list(range(-half, half + 1))
    half = d // 2
    return sorted([-k for k in range(1, half + 1)] + list(range(1, half + 1)))


def oam_basis(ells, waist=DEFAULT_WAIST):
    return BasisSpec(tuple(LGSpec(ell, 0, waist) for ell in sorted(ells)))


def radial_basis(ps, waist=DEFAULT_WAIST):
    return BasisSpec(tuple(LGSpec(0, p, waist) for p in sorted(ps)))


def fullfield_basis(ells, ps, waist=DEFAULT_WAIST):
    """Full-field set ordered by (p, ell) lexicographically"""
    return BasisSpec(tuple(LGSpec(ell, p, waist) for p in sorted(ps) for ell in sorted(ells)))


def _lg_amplitude(grid, spec):
    r, theta = grid.polar
    w = spec.waist
    order = abs(spec.ell)
    norm = np.sqrt(2 * factorial(spec.p) / (np.pi * factorial(spec.p + order))) / w
    arg = 2 * r**2 / w**2
    radial = (np.sqrt(2) * r / w) ** order * special.eval_genlaguerre(spec.p, order, arg)
    return norm * radial * np.exp(-(r**2) / w**2) * np.exp(1j * spec.ell * theta)


def sample_lg(grid, spec):
    """
    Sample LG(ell, p) at its waist plane

    Args:
        grid (Grid): Sampling grid
        spec (LGSpec): Mode indices and waist

    Returns:
        ComplexField: Mode normalized to unit power on the grid

    Raises:
        ValidationError: If the waist spans fewer than 8 samples or the mode is clipped
    """
    if spec.waist / grid.pitch < MIN_SAMPLES_PER_WAIST:
        raise ValidationError(
            f'{spec.label}: waist {spec.waist:g} m is under-resolved by pitch {grid.pitch:g} m'
        )

    samples = _lg_amplitude(grid, spec)
    intensity = np.abs(samples) ** 2
    border = np.concatenate(
        [intensity[0, :], intensity[-1, :], intensity[:, 0], intensity[:, -1]]
    )
    if border.max() >= EDGE_INTENSITY_LIMIT * intensity.max():
        raise ValidationError(f'{spec.label}: mode is clipped by the {grid.side:g} m aperture')

    samples /= np.sqrt(intensity.sum() * grid.pitch**2)
    return ComplexField(grid, samples)


def sample_vector(grid, vector):
    """Coherent superposition sum(c_n LG_n) of a ModeVector"""
    samples = np.zeros((grid.n, grid.n), dtype=np.complex128)
    for coeff, spec in zip(vector.coeffs, vector.basis.modes):
        if coeff != 0:
            samples += coeff * sample_lg(grid, spec).samples
    return ComplexField(grid, samples)


def gram_matrix(grid, basis):
    """Pairwise overlaps <LG_i|LG_j> of a basis on a grid"""
    fields = [sample_lg(grid, spec) for spec in basis.modes]
    gram = np.empty((basis.d, basis.d), dtype=np.complex128)
    for i, a in enumerate(fields):
        for j, b in enumerate(fields):
            gram[i, j] = overlap(a, b)
    return gram


def is_unitary(matrix, tol=UNIT_TOLERANCE):
    matrix = np.asarray(matrix)
    return bool(np.allclose(matrix @ matrix.conj().T, np.eye(matrix.shape[0]), rtol=0, atol=tol))


def mub_family(d):
    """
    Complete set of d + 1 mutually unbiased bases for prime d

    Odd primes use the Wootters-Fields construction, vector j of basis k >= 1 has
    components omega^((k-1) l^2 + j l) / sqrt(d); d = 2 uses the Pauli eigenbases.

    Args:
        d (int): Prime dimension

    Returns:
        MUBFamily: Index 0 is the computational basis
    """
    if int(d) != d or not sympy.isprime(int(d)):
        raise ValidationError(f'MUB construction needs a prime dimension, got {d}')
    d = int(d)

    if d == 2:
        s = 1 / np.sqrt(2)
        bases = (
            np.eye(2, dtype=np.complex128),
            np.array([[s, s], [s, -s]], dtype=np.complex128),
            np.array([[s, 1j * s], [s, -1j * s]], dtype=np.complex128),
        )
    else:
        l = np.arange(d)
        j = np.arange(d)[:, None]
        bases = [np.eye(d, dtype=np.complex128)]
        for k in range(d):
            # powers of omega = exp(2 pi i / d), exponents reduced mod d
            exponents = (k * l**2 + j * l) % d
            bases.append(np.exp(2j * np.pi * exponents / d) / np.sqrt(d))
        bases = tuple(bases)

    for basis in bases:
        basis.flags.writeable = False
    return MUBFamily(d, bases)


def unbiasedness_deviation(a, b):
    """
    Max over i, j of | |<a_i|b_j>|^2 - 1/d |

    Args:
        a (np.ndarray): d x d basis matrix, rows are vectors
        b (np.ndarray): d x d basis matrix, rows are vectors

    Returns:
        float: 0 for mutually unbiased bases
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValidationError(f'basis dimension mismatch: {a.shape} vs {b.shape}')
    d = a.shape[0]
    overlaps = np.abs(a.conj() @ b.T) ** 2
    return float(np.max(np.abs(overlaps - 1.0 / d)))


def basis_vectors(family, index, basis):
    """
    ModeVectors of MUB `index` over a computational LG basis

    Args:
        family (MUBFamily): Bases of matching dimension
        index (int): 0 for computational, 1..d for the others
        basis (BasisSpec): LG modes that carry the computational basis
    """
    if family.d != basis.d:
        raise ValidationError(f'MUB dimension {family.d} does not match basis size {basis.d}')
    if not 0 <= index < len(family):
        raise ValidationError(f'MUB index {index} out of range 0..{len(family) - 1}')
    if index == 0:
        return [ModeVector.basis_state(basis, n) for n in range(basis.d)]
    matrix = family.bases[index]
    return [
        ModeVector(basis, matrix[j], f'mub{index}[{j}]') for j in range(basis.d)
    ]
