import os

import pytest
from click.testing import CliRunner
from dotenv import load_dotenv

from models import init_registry
from services.modes import oam_basis
from services.optics import Grid
from services.sorter import SorterSetup, corner_layout

load_dotenv()

MINIMAL_CONFIG = """\
# two OAM modes, one hologram
[grid]
n = 128

[mode]
family = oam
ells = -1, 1

[sorter]
planes = 1

[ga]
m = 32
population = 4
budget = 6
switch_at = 3
seed = 7
"""


def pytest_collection_modifyitems(config, items):
    if os.getenv('RUN_SLOW') == '1':
        return
    skip_slow = pytest.mark.skip(reason='set RUN_SLOW=1 to run desk-scale optimizations')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def grid():
    """Default 256 x 256 grid at 20 um"""
    return Grid()


@pytest.fixture
def small_grid():
    return Grid(n=128)


@pytest.fixture
def oam_pair():
    """ell = -1, +1 with the default 250 um waist"""
    return oam_basis([-1, 1])


@pytest.fixture
def small_setup(small_grid):
    return SorterSetup(small_grid, corner_layout(), planes=1)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def registry(tmp_path):
    """Create a temporary SQLite run registry"""
    return init_registry(f"sqlite:///{tmp_path / 'registry.db'}")


@pytest.fixture
def minimal_config():
    return MINIMAL_CONFIG


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text(MINIMAL_CONFIG, encoding='utf-8')
    return str(path)


@pytest.fixture
def cli_env(tmp_path, monkeypatch):
    """Point the registry and default output folder at a temporary directory"""
    monkeypatch.setenv('DATABASE_URL', f"sqlite:///{tmp_path / 'cli.db'}")
    monkeypatch.setenv('SORTER_OUTPUT_DIR', str(tmp_path / 'runs'))
    monkeypatch.delenv('LOG_FILE', raising=False)
    return tmp_path
