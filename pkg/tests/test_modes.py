import numpy as np
import pytest

from services.errors import ValidationError
from services.modes import (
    BasisSpec,
    LGSpec,
    ModeVector,
    basis_vectors,
    default_ells,
    fullfield_basis,
    gram_matrix,
    is_unitary,
    mub_family,
    oam_basis,
    radial_basis,
    sample_lg,
    sample_vector,
    unbiasedness_deviation,
)
from services.optics import Grid, power


def test_lg_spec_validation():
    """Test negative radial index and bad waist are rejected"""
    with pytest.raises(ValidationError):
        LGSpec(1, -1)
    with pytest.raises(ValidationError):
        LGSpec(0, 0, waist=0)
    assert LGSpec(-2, 1).label == 'l=-2 p=1'


def test_basis_spec_validation():
    """Test bases need distinct modes with a shared waist"""
    with pytest.raises(ValidationError):
        BasisSpec((LGSpec(1),))
    with pytest.raises(ValidationError):
        BasisSpec((LGSpec(1), LGSpec(1)))
    with pytest.raises(ValidationError):
        BasisSpec((LGSpec(1, 0, 250e-6), LGSpec(-1, 0, 300e-6)))


def test_basis_builders():
    """Test the documented orderings of the basis builders"""
    assert [m.ell for m in oam_basis([1, -1, 0]).modes] == [-1, 0, 1]
    assert [m.p for m in radial_basis([2, 0, 1]).modes] == [0, 1, 2]
    full = fullfield_basis([1, -1], [1, 0])
    assert [(m.p, m.ell) for m in full.modes] == [(0, -1), (0, 1), (1, -1), (1, 1)]


def test_default_ells():
    """Test default OAM values for even and odd dimensions"""
    assert default_ells(2) == [-1, 1]
    assert default_ells(3) == [-1, 0, 1]
    assert default_ells(4) == [-2, -1, 1, 2]
    assert default_ells(5) == [-2, -1, 0, 1, 2]


def test_fundamental_mode(grid):
    """Test LG00 is a centered Gaussian with flat phase"""
    g = sample_lg(grid, LGSpec(0, 0))
    intensity = g.intensity
    c = grid.n // 2
    assert np.unravel_index(intensity.argmax(), intensity.shape) == (c, c)
    assert np.allclose(np.angle(g.samples[c - 20 : c + 20, c - 20 : c + 20]), 0.0)
    assert power(g) == pytest.approx(1.0, abs=1e-12)


def test_vortex_mode(grid):
    """Test LG(1, 0) is dark on axis and winds once"""
    mode = sample_lg(grid, LGSpec(1, 0))
    c = grid.n // 2
    assert mode.intensity[c, c] == 0.0
    right = np.angle(mode.samples[c, c + 10])
    up = np.angle(mode.samples[c + 10, c])
    assert np.angle(np.exp(1j * (up - right))) == pytest.approx(np.pi / 2, abs=1e-9)


@pytest.mark.parametrize('ell, p', [(1, 0), (2, 1), (3, 2)])
def test_opposite_charges_are_conjugate(grid, ell, p):
    """Test LG(-ell, p) has the intensity of LG(ell, p) and the conjugate phase"""
    positive = sample_lg(grid, LGSpec(ell, p))
    negative = sample_lg(grid, LGSpec(-ell, p))
    scale = np.abs(positive.samples).max()
    assert np.abs(negative.intensity - positive.intensity).max() <= 1e-12 * scale**2
    assert np.abs(negative.samples - np.conj(positive.samples)).max() <= 1e-12 * scale


def test_radial_node(grid):
    """Test LG(0, 1) changes sign across its single radial node at r = w0 / sqrt(2)"""
    mode = sample_lg(grid, LGSpec(0, 1))
    c = grid.n // 2
    profile = mode.samples[c, c:].real
    node = 250e-6 / np.sqrt(2)
    inside = int(node / grid.pitch) - 2
    outside = int(node / grid.pitch) + 3
    assert profile[0] * profile[inside] > 0
    assert profile[0] * profile[outside] < 0
    sign_changes = np.count_nonzero(np.diff(np.sign(profile[: 3 * 13])) != 0)
    assert sign_changes == 1


def test_sample_lg_rejections():
    """Test under-resolved and clipped modes raise"""
    with pytest.raises(ValidationError, match='under-resolved'):
        sample_lg(Grid(n=256, pitch=50e-6), LGSpec(0, 0, 250e-6))
    with pytest.raises(ValidationError, match='clipped'):
        sample_lg(Grid(n=32), LGSpec(1, 0, 250e-6))


def test_gram_matrix_is_identity(grid):
    """Test LG modes with ell in [-2, 2] and p in [0, 4] are orthonormal on the grid"""
    basis = fullfield_basis(range(-2, 3), range(5))
    gram = gram_matrix(grid, basis)
    assert np.abs(gram - np.eye(basis.d)).max() < 1e-3


def test_mode_vector_normalization(oam_pair):
    """Test coefficients must be unit norm and normalized() fixes them"""
    with pytest.raises(ValidationError):
        ModeVector(oam_pair, [1, 1])
    with pytest.raises(ValidationError):
        ModeVector(oam_pair, [1, 0, 0])
    vector = ModeVector.normalized(oam_pair, [1, 1j])
    assert np.sum(np.abs(vector.coeffs) ** 2) == pytest.approx(1.0, abs=1e-15)


def test_sample_vector_examples(grid, oam_pair):
    """Test basis vectors, superposition power and the two-lobed pattern"""
    first = sample_vector(grid, ModeVector.basis_state(oam_pair, 0))
    assert np.array_equal(first.samples, sample_lg(grid, oam_pair.modes[0]).samples)

    mixed = sample_vector(grid, ModeVector.normalized(oam_pair, [1, 1]))
    assert power(mixed) == pytest.approx(1.0, abs=1e-4)

    # |e^{-i theta} + e^{i theta}|^2 ~ cos^2 theta: dark along y, bright along x
    c = grid.n // 2
    ring = 9
    assert mixed.intensity[c + ring, c] < 1e-6 * mixed.intensity[c, c + ring]
    assert mixed.intensity[c - ring, c] < 1e-6 * mixed.intensity[c, c - ring]


def test_mub_counts_and_unbiasedness():
    """Test d + 1 bases, unitarity and pairwise unbiasedness for prime d"""
    for d in (2, 3, 5, 7):
        family = mub_family(d)
        assert len(family) == d + 1
        for k, a in enumerate(family.bases):
            assert is_unitary(a)
            for b in family.bases[k + 1 :]:
                assert unbiasedness_deviation(a, b) <= 1e-12


def test_mub_rejects_composite():
    """Test non-prime dimensions raise"""
    with pytest.raises(ValidationError):
        mub_family(4)
    with pytest.raises(ValidationError):
        mub_family(1)


def test_unbiasedness_deviation_examples():
    """Test self comparison, DFT basis and dimension checks"""
    family = mub_family(3)
    assert unbiasedness_deviation(family.bases[1], family.bases[1]) == pytest.approx(1 - 1 / 3)

    d = 5
    dft = np.exp(2j * np.pi * np.outer(np.arange(d), np.arange(d)) / d) / np.sqrt(d)
    assert unbiasedness_deviation(np.eye(d), dft) <= 1e-12

    with pytest.raises(ValidationError):
        unbiasedness_deviation(np.eye(2), np.eye(3))


def test_basis_vectors(oam_pair):
    """Test MUB vectors over an LG basis"""
    family = mub_family(2)
    computational = basis_vectors(family, 0, oam_pair)
    assert [v.label for v in computational] == oam_pair.labels

    diagonal = basis_vectors(family, 1, oam_pair)
    assert np.allclose(np.abs(diagonal[0].coeffs) ** 2, 0.5)
    assert diagonal[1].label == 'mub1[1]'

    with pytest.raises(ValidationError):
        basis_vectors(family, 3, oam_pair)
    with pytest.raises(ValidationError):
        basis_vectors(mub_family(3), 1, oam_pair)
