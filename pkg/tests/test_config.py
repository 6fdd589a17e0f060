import pytest

from services.config import (
    build_basis,
    build_grid,
    build_layout,
    build_setup,
    build_targets,
    format_config,
    load_config,
    parse_config,
)
from services.errors import ValidationError
from services.modes import DEFAULT_WAIST, BasisSpec


def test_minimal_config_defaults(minimal_config):
    """Test omitted keys are filled with the documented defaults"""
    config = parse_config(minimal_config)
    assert config.grid.n == 128
    assert config.grid.pitch == 20e-6
    assert config.grid.wavelength == 780e-9
    assert config.grid.supersample == 1
    assert config.mode.family == 'oam'
    assert config.mode.d == 2
    assert config.mode.ells == (-1, 1)
    assert config.mode.ps == (0,)
    assert config.mode.waist == DEFAULT_WAIST
    assert config.mode.mub == 0
    assert config.layout.centers == ((-400e-6, -400e-6), (400e-6, 400e-6))
    assert config.sorter.planes == 1
    assert config.sorter.focal == 1.0
    assert config.sorter.steps == 5
    assert config.ga.population == 4
    assert config.ga.rank_tau == pytest.approx(4 / 3)
    assert config.ga.macro_pitch == 20e-6
    assert config.output.directory is None


def test_format_is_a_fixed_point(minimal_config):
    """Test formatting then parsing reproduces the configuration"""
    config = parse_config(minimal_config)
    text = format_config(config)
    assert parse_config(text) == config
    assert format_config(parse_config(text)) == text


def test_format_keeps_mub_and_output(minimal_config):
    text = minimal_config.replace('ells = -1, 1', 'ells = -1, 1\nbasis = 2') + (
        '\n[output]\ndirectory = results\ncheckpoint_every = 3\n'
    )
    config = parse_config(text)
    assert config.mode.mub == 2
    assert config.ga.checkpoint_every == 3
    assert parse_config(format_config(config)) == config


def test_comments_and_case():
    """Test both comment markers and inline comments are ignored"""
    text = '; header\n[GRID]\nn = 64 # small\n[mode]\nfamily = oam ; pair\nd = 2\n[ga]\nm = 32\n'
    config = parse_config(text)
    assert config.grid.n == 64
    assert config.mode.ells == (-1, 1)


def test_missing_family():
    """Test an empty mode block is rejected"""
    with pytest.raises(ValidationError, match='mode family required'):
        parse_config('[grid]\nn = 128\n[mode]\n')


def test_dimension_mismatch_between_d_and_modes():
    text = '[mode]\nfamily = oam\nd = 3\nells = -1, 1\n'
    with pytest.raises(ValidationError, match='dimension mismatch') as error:
        parse_config(text)
    assert error.value.line == 3


def test_dimension_mismatch_between_d_and_channels():
    """Test three modes with two channel centers"""
    text = '[mode]\nfamily = oam\nd = 3\n[layout]\ncenters = -4e-4 0, 4e-4 0\n'
    with pytest.raises(ValidationError, match='dimension mismatch') as error:
        parse_config(text)
    assert error.value.line == 5


@pytest.mark.parametrize(
    'text, line',
    [
        ('[mode]\nfamily = oam\nells = 1\n[ga]\nm = 32\n', 3),
        ('[mode]\nfamily = oam\nd = 1\n', 3),
        ('[mode]\nfamily = oam\n\nells =\n', 4),
        ('[mode]\nfamily = radial\nps = 0\n', 3),
        ('[mode]\nfamily = fullfield\nells = 2\nps = 0\n', 3),
    ],
)
def test_single_mode_is_rejected(text, line):
    """Test a mode set smaller than two fails at parse time on its own line"""
    with pytest.raises(ValidationError, match='at least 2') as error:
        parse_config(text)
    assert error.value.line == line


def test_unknown_key_reports_line():
    text = '[grid]\nn = 128\n\n[mode]\nfamily = oam\ncolour = blue\n'
    with pytest.raises(ValidationError, match='unknown key') as error:
        parse_config(text)
    assert error.value.line == 6
    assert str(error.value).startswith('line 6:')


@pytest.mark.parametrize(
    'text',
    [
        '[grid]\nn = 0\n[mode]\nfamily = oam\nd = 2\n',
        '[grid]\npitch = -2e-5\n[mode]\nfamily = oam\nd = 2\n',
        '[grid]\nn = 100\n[mode]\nfamily = oam\nd = 2\n',
        '[mode]\nfamily = oam\nd = 2\nwaist = 0\n',
        '[mode]\nfamily = oam\nd = 2\n[ga]\npopulation = 1\n',
        '[mode]\nfamily = oam\nd = 2\n[ga]\nm = 2.5\n',
        '[mode]\nfamily = oam\nd = 2\n[sorter]\nplanes = 3\n',
        '[mode]\nfamily = oam\nd = 2\n[ga]\nearly_stop = maybe\n',
        '[mode]\nfamily = vortex\n',
        '[mode]\nfamily = oam\nd = 2\n[cavity]\n',
        '[mode]\nfamily = oam\nfamily = radial\n',
        'n = 128\n',
    ],
)
def test_invalid_values(text):
    """Test malformed or non-positive values are rejected with a line number"""
    with pytest.raises(ValidationError) as error:
        parse_config(text)
    assert error.value.line is not None


def test_mub_needs_prime_dimension():
    text = '[mode]\nfamily = oam\nd = 4\nbasis = 1\n'
    with pytest.raises(ValidationError, match='prime'):
        parse_config(text)


def test_macropixels_must_fit_grid():
    text = '[grid]\nn = 64\nsupersample = 2\n[mode]\nfamily = oam\nd = 2\n[ga]\nm = 40\n'
    with pytest.raises(ValidationError, match='do not fit'):
        parse_config(text)


def test_family_defaults():
    """Test default mode lists and layouts per family"""
    radial = parse_config('[mode]\nfamily = radial\nd = 3\n')
    assert radial.mode.ps == (0, 1, 2)
    assert radial.mode.ells == (0,)
    assert [y for _, y in radial.layout.centers] == [0.0, 0.0, 0.0]

    full = parse_config('[mode]\nfamily = fullfield\nells = -1, 1\nps = 0, 1\n')
    assert full.mode.d == 4
    xs = sorted({x for x, _ in full.layout.centers})
    ys = sorted({y for _, y in full.layout.centers})
    assert len(xs) == 2 and len(ys) == 2


def test_build_helpers(config_file):
    """Test the loaded configuration builds a consistent geometry"""
    config = load_config(config_file)
    grid = build_grid(config)
    assert grid.n == 128
    assert grid.pitch == 20e-6

    basis = build_basis(config)
    assert [mode.ell for mode in basis.modes] == [-1, 1]
    assert isinstance(build_targets(config), BasisSpec)

    vectors = build_targets(config, mub=1)
    assert len(vectors) == 2
    assert all(abs(abs(c) ** 2 - 0.5) < 1e-12 for c in vectors[0].coeffs)

    assert len(build_layout(config)) == 2
    setup = build_setup(config)
    assert setup.d == 2
    assert setup.planes == 1


def test_supersampled_grid():
    config = parse_config('[grid]\nn = 256\nsupersample = 2\n[mode]\nfamily = oam\nd = 2\n')
    assert build_grid(config).pitch == pytest.approx(10e-6)


def test_with_seed(config_file):
    config = load_config(config_file)
    reseeded = config.with_seed(99)
    assert reseeded.ga.seed == 99
    assert config.ga.seed == 7
    assert reseeded.grid == config.grid
