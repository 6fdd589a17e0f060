"""
Run configuration: a flat sectioned `key = value` format

    [grid]     n, pitch, wavelength, supersample
    [mode]     family, d, waist, ells, ps, basis
    [layout]   side, centers
    [sorter]   planes, focal, steps
    [ga]       GA hyperparameters
    [output]   directory, checkpoint_every

`pitch` is the macropixel pitch; the simulation grid samples at pitch / supersample.
Lists are comma separated, channel centers are `x y` pairs separated by commas and
comments start with `#` or `;`.
"""

import dataclasses
import logging
from dataclasses import dataclass, field

import sympy

from services.errors import ValidationError
from services.genetic import GAConfig
from services.modes import (
    DEFAULT_WAIST,
    basis_vectors,
    default_ells,
    fullfield_basis,
    mub_family,
    oam_basis,
    radial_basis,
)
from services.optics import Grid
from services.sorter import (
    DEFAULT_CHANNEL_SIDE,
    DEFAULT_FOCAL,
    DEFAULT_MACRO_PITCH,
    DEFAULT_STEPS,
    Channel,
    ChannelLayout,
    SorterSetup,
    default_layout,
)

logger = logging.getLogger(__name__)

FAMILIES = ('oam', 'radial', 'fullfield')
COMPUTATIONAL = 'computational'


@dataclass(frozen=True)
class GridBlock:
    n: int = 256
    pitch: float = DEFAULT_MACRO_PITCH
    wavelength: float = 780e-9
    supersample: int = 1


@dataclass(frozen=True)
class ModeBlock:
    family: str
    d: int
    ells: tuple
    ps: tuple
    waist: float = DEFAULT_WAIST
    mub: int = 0


@dataclass(frozen=True)
class LayoutBlock:
    centers: tuple
    side: float = DEFAULT_CHANNEL_SIDE


@dataclass(frozen=True)
class SorterBlock:
    planes: int = 1
    focal: float = DEFAULT_FOCAL
    steps: int = DEFAULT_STEPS


@dataclass(frozen=True)
class OutputBlock:
    directory: str = None
    checkpoint_every: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration"""

    grid: GridBlock
    mode: ModeBlock
    layout: LayoutBlock
    sorter: SorterBlock
    ga: GAConfig
    output: OutputBlock = field(default_factory=OutputBlock)

    def with_seed(self, seed):
        return dataclasses.replace(self, ga=dataclasses.replace(self.ga, seed=seed))


def _int(text):
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f'expected an integer, got {text!r}')
        return int(value)


def _positive_int(text):
    value = _int(text)
    if value < 1:
        raise ValueError(f'must be a positive integer, got {text!r}')
    return value


def _non_negative_int(text):
    value = _int(text)
    if value < 0:
        raise ValueError(f'must be >= 0, got {text!r}')
    return value


def _positive(text):
    value = float(text)
    if not value > 0:
        raise ValueError(f'must be positive, got {text!r}')
    return value


def _bool(text):
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(f'expected true or false, got {text!r}')


def _int_list(text):
    return tuple(_int(item.strip()) for item in text.split(',') if item.strip())


def _centers(text):
    centers = []
    for pair in text.split(','):
        parts = pair.split()
        if len(parts) != 2:
            raise ValueError(f"channel center must be 'x y', got {pair.strip()!r}")
        centers.append((float(parts[0]), float(parts[1])))
    return tuple(centers)


def _family(text):
    if text not in FAMILIES:
        raise ValueError(f"family must be one of {', '.join(FAMILIES)}, got {text!r}")
    return text


def _mub(text):
    return 0 if text == COMPUTATIONAL else _non_negative_int(text)


_SCHEMA = {
    'grid': {
        'n': _positive_int,
        'pitch': _positive,
        'wavelength': _positive,
        'supersample': _positive_int,
    },
    'mode': {
        'family': _family,
        'd': _positive_int,
        'waist': _positive,
        'ells': _int_list,
        'ps': _int_list,
        'basis': _mub,
    },
    'layout': {'side': _positive, 'centers': _centers},
    'sorter': {'planes': _positive_int, 'focal': _positive, 'steps': _positive_int},
    'ga': {
        'population': _positive_int,
        'm': _positive_int,
        'blur_sigma': float,
        'mutate_frac_start': _positive,
        'mutate_frac_end': _positive,
        'mutate_amp': float,
        'rank_tau': _positive,
        'switch_at': _non_negative_int,
        'budget': _non_negative_int,
        'seed': _non_negative_int,
        'blur_children': _bool,
        'early_stop': _bool,
        'early_stop_window': _positive_int,
        'early_stop_tol': _positive,
        'fitness_floor': _positive,
    },
    'output': {'directory': str, 'checkpoint_every': _non_negative_int},
}


def _read_sections(text):
    """Tokenize into {section: {key: (value, line)}} plus section header lines"""
    sections = {}
    headers = {}
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw
        for marker in ('#', ';'):
            line = line.split(marker, 1)[0]
        line = line.strip()
        if not line:
            continue

        if line.startswith('[') and line.endswith(']'):
            current = line[1:-1].strip().lower()
            if current not in _SCHEMA:
                raise ValidationError(f'unknown section [{current}]', line=number)
            if current in sections:
                raise ValidationError(f'duplicate section [{current}]', line=number)
            sections[current] = {}
            headers[current] = number
            continue

        if '=' not in line:
            raise ValidationError(f"expected 'key = value', got {line!r}", line=number)
        if current is None:
            raise ValidationError('key outside of any section', line=number)
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in _SCHEMA[current]:
            raise ValidationError(f'unknown key {key!r} in [{current}]', line=number)
        if key in sections[current]:
            raise ValidationError(f'duplicate key {key!r} in [{current}]', line=number)
        try:
            sections[current][key] = (_SCHEMA[current][key](value), number)
        except ValueError as e:
            raise ValidationError(f'{current}.{key}: {e}', line=number) from e
    return sections, headers


def _resolve_mode(values, header):
    def get(key, default=None):
        return values[key][0] if key in values else default

    def line_of(key):
        return values[key][1] if key in values else header

    if 'family' not in values:
        raise ValidationError('mode family required', line=header)
    family = get('family')
    d = get('d')
    ells = get('ells')
    ps = get('ps')

    if d is not None and d < 2:
        raise ValidationError(f'dimension must be at least 2, got d = {d}', line=line_of('d'))

    if family == 'oam':
        if ells is None:
            if d is None:
                raise ValidationError('oam family needs d or ells', line=header)
            ells = tuple(default_ells(d))
        ps = (0,) if ps is None else ps
        if ps != (0,):
            raise ValidationError('oam family uses p = 0 only', line=line_of('ps'))
        size = len(ells)
    elif family == 'radial':
        if ps is None:
            if d is None:
                raise ValidationError('radial family needs d or ps', line=header)
            ps = tuple(range(d))
        ells = (0,) if ells is None else ells
        if ells != (0,):
            raise ValidationError('radial family uses ell = 0 only', line=line_of('ells'))
        size = len(ps)
    else:
        if ells is None or ps is None:
            raise ValidationError('fullfield family needs both ells and ps', line=header)
        size = len(ells) * len(ps)
    if size < 2:
        key = {'oam': 'ells', 'radial': 'ps'}.get(family, 'ells')
        raise ValidationError(f'a mode set needs at least 2 modes, got {size}', line=line_of(key))

    if d is not None and d != size:
        raise ValidationError(
            f'dimension mismatch: d = {d} but the mode lists give {size} modes', line=line_of('d')
        )
    if len(set(ells)) != len(ells) or len(set(ps)) != len(ps):
        raise ValidationError('mode lists must not repeat values', line=header)
    if any(p < 0 for p in ps):
        raise ValidationError('radial indices must be >= 0', line=line_of('ps'))

    mub = get('basis', 0)
    if mub:
        if not sympy.isprime(size):
            raise ValidationError(
                f'MUB targets need a prime dimension, got d = {size}', line=line_of('basis')
            )
        if mub > size:
            raise ValidationError(f'MUB index {mub} out of range 0..{size}', line=line_of('basis'))

    return ModeBlock(
        family=family,
        d=size,
        ells=tuple(sorted(ells)),
        ps=tuple(sorted(ps)),
        waist=get('waist', DEFAULT_WAIST),
        mub=mub,
    )


def parse_config(text):
    """
    Parse and validate a run configuration, filling defaults for omitted keys

    Args:
        text (str): Configuration text

    Returns:
        RunConfig: Validated configuration

    Raises:
        ValidationError: Unknown keys, inconsistent dimensions or invalid values,
            with the offending line number
    """
    sections, headers = _read_sections(text)

    def values(name):
        return {key: value for key, (value, _) in sections.get(name, {}).items()}

    def line(name, key=None):
        entries = sections.get(name, {})
        if key in entries:
            return entries[key][1]
        return headers.get(name)

    grid = GridBlock(**values('grid'))
    try:
        Grid(grid.n, grid.pitch / grid.supersample, grid.wavelength)
    except ValidationError as e:
        raise ValidationError(e.message, line=line('grid')) from e
    mode = _resolve_mode(sections.get('mode', {}), headers.get('mode'))

    layout_values = values('layout')
    side = layout_values.get('side', DEFAULT_CHANNEL_SIDE)
    centers = layout_values.get('centers')
    if centers is None:
        columns, rows = len(mode.ells), len(mode.ps)
        generated = default_layout(mode.family, mode.d, columns, rows, side)
        centers = tuple((channel.x, channel.y) for channel in generated.channels)
    if len(centers) != mode.d:
        raise ValidationError(
            f'dimension mismatch: {len(centers)} channels for d = {mode.d}',
            line=line('layout', 'centers'),
        )
    layout = LayoutBlock(centers=centers, side=side)

    sorter = SorterBlock(**values('sorter'))
    if sorter.planes not in (1, 2):
        raise ValidationError(
            f'planes must be 1 or 2, got {sorter.planes}', line=line('sorter', 'planes')
        )

    output = OutputBlock(**values('output'))
    try:
        ga = GAConfig(
            **values('ga'),
            planes=sorter.planes,
            macro_pitch=grid.pitch,
            checkpoint_every=output.checkpoint_every,
        )
    except ValidationError as e:
        raise ValidationError(e.message, line=line('ga')) from e

    if ga.m > grid.n // grid.supersample:
        raise ValidationError(
            f'{ga.m} macropixels at supersample {grid.supersample} do not fit a {grid.n} grid',
            line=line('ga', 'm'),
        )

    config = RunConfig(grid, mode, layout, sorter, ga, output)
    try:
        build_setup(config)
    except ValidationError as e:
        raise ValidationError(e.message, line=line('layout')) from e
    return config


def load_config(path):
    with open(path, encoding='utf-8') as handle:
        text = handle.read()
    logger.info(f'loaded configuration from {path}')
    return parse_config(text)


def _number(value):
    return repr(float(value))


def format_config(config):
    """
    Serialize every key of a RunConfig; parse_config(format_config(c)) == c

    Args:
        config (RunConfig): Configuration to write

    Returns:
        str: Configuration text
    """
    ga = config.ga
    lines = [
        '[grid]',
        f'n = {config.grid.n}',
        f'pitch = {_number(config.grid.pitch)}',
        f'wavelength = {_number(config.grid.wavelength)}',
        f'supersample = {config.grid.supersample}',
        '',
        '[mode]',
        f'family = {config.mode.family}',
        f'd = {config.mode.d}',
        f'waist = {_number(config.mode.waist)}',
        f"ells = {', '.join(str(ell) for ell in config.mode.ells)}",
        f"ps = {', '.join(str(p) for p in config.mode.ps)}",
        f'basis = {config.mode.mub or COMPUTATIONAL}',
        '',
        '[layout]',
        f'side = {_number(config.layout.side)}',
        'centers = ' + ', '.join(f'{_number(x)} {_number(y)}' for x, y in config.layout.centers),
        '',
        '[sorter]',
        f'planes = {config.sorter.planes}',
        f'focal = {_number(config.sorter.focal)}',
        f'steps = {config.sorter.steps}',
        '',
        '[ga]',
    ]
    for key, convert in _SCHEMA['ga'].items():
        value = getattr(ga, key)
        if convert is _bool:
            lines.append(f"{key} = {'true' if value else 'false'}")
        elif isinstance(value, float):
            lines.append(f'{key} = {_number(value)}')
        else:
            lines.append(f'{key} = {value}')
    lines += ['', '[output]']
    if config.output.directory is not None:
        lines.append(f'directory = {config.output.directory}')
    lines.append(f'checkpoint_every = {config.output.checkpoint_every}')
    return '\n'.join(lines) + '\n'


def build_grid(config):
    g = config.grid
    return Grid(g.n, g.pitch / g.supersample, g.wavelength)


def build_basis(config):
    mode = config.mode
    if mode.family == 'oam':
        return oam_basis(mode.ells, mode.waist)
    if mode.family == 'radial':
        return radial_basis(mode.ps, mode.waist)
    return fullfield_basis(mode.ells, mode.ps, mode.waist)


def build_targets(config, mub=None):
    """
    Modes the sorter should separate

    Args:
        config (RunConfig): Configuration
        mub (int): MUB index overriding [mode] basis; 0 selects the computational basis

    Returns:
        BasisSpec | list[ModeVector]: BasisSpec for the computational basis
    """
    basis = build_basis(config)
    index = config.mode.mub if mub is None else mub
    if index == 0:
        return basis
    return basis_vectors(mub_family(basis.d), index, basis)


def build_layout(config):
    side = config.layout.side
    return ChannelLayout(tuple(Channel(x, y, side) for x, y in config.layout.centers))


def build_setup(config):
    return SorterSetup(
        build_grid(config),
        build_layout(config),
        planes=config.sorter.planes,
        focal=config.sorter.focal,
        steps=config.sorter.steps,
    )
