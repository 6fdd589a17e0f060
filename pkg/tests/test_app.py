import pytest
from sqlalchemy import select
from sqlalchemy.orm import Session

from app import EXIT_IO, EXIT_OK, EXIT_VALIDATION, cli, main
from models import CommandLog, OptimizationRun, get_engine


def invoke(runner, *args):
    result = runner.invoke(cli, list(args), catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def test_keyrate(runner, cli_env):
    """Test secret-key rates for a qutrit and a five-level system"""
    result = invoke(runner, '--no-registry', 'keyrate', '--d', '3', '--qber', '0.004')
    assert float(result.stdout) == pytest.approx(1.50, abs=0.01)

    result = invoke(runner, '--no-registry', 'keyrate', '--d', '5', '--qber', '0.0232')
    assert float(result.stdout) == pytest.approx(1.91, abs=0.01)


def test_mub_listing(runner, cli_env):
    result = invoke(runner, '--no-registry', 'mub', '--d', '3')
    lines = result.stdout.splitlines()
    assert [line for line in lines if line.startswith('basis')] == [
        'basis 0',
        'basis 1',
        'basis 2',
        'basis 3',
    ]
    deviation = float(lines[-1].rsplit(' ', 1)[-1])
    assert deviation <= 1e-12


def test_validation_exit_code(cli_env, capsys, tmp_path):
    """Test invalid input exits with 1 and a structured error line"""
    assert main(['--no-registry', 'mub', '--d', '4']) == EXIT_VALIDATION
    assert 'error: kind=validation' in capsys.readouterr().err

    bad = tmp_path / 'bad.cfg'
    bad.write_text('[mode]\nfamily = oam\ncolour = blue\n', encoding='utf-8')
    assert main(['--no-registry', 'baseline', '--config', str(bad)]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert err.startswith('error: kind=validation message=line 3:')

    assert main(['--no-registry', 'keyrate', '--d', '3', '--qber', '2']) == EXIT_VALIDATION


def test_io_exit_code(cli_env, capsys, config_file):
    """Test missing files exit with 2"""
    missing = str(cli_env / 'nowhere.cfg')
    assert main(['--no-registry', 'baseline', '--config', missing]) == EXIT_IO
    assert capsys.readouterr().err.startswith('error: kind=io')

    holo = str(cli_env / 'element1.pgm')
    args = ['--no-registry', 'evaluate', '--config', config_file, '--holo', holo]
    assert main(args) == EXIT_IO


def test_keyrate_through_main(cli_env, capsys):
    assert main(['--no-registry', 'keyrate', '--d', '2', '--qber', '0']) == EXIT_OK
    assert capsys.readouterr().out.strip() == '1.0000'


def test_baseline_evaluate_propagate(runner, cli_env, config_file):
    """Test the fork grating can be saved, re-evaluated and traced"""
    out = cli_env / 'fork'
    result = invoke(runner, 'baseline', '--config', config_file, '--output', str(out))
    assert 'ability=' in result.output
    for name in ('element1.pgm', 'element1.txt', 'crosstalk.csv', 'raw_intensities.csv'):
        assert (out / name).exists()

    holo = str(out / 'element1.pgm')
    checked = cli_env / 'checked'
    result = invoke(
        runner,
        'evaluate',
        '--config',
        config_file,
        '--holo',
        holo,
        '--cross-basis',
        '1',
        '--output',
        str(checked),
    )
    assert 'cross-basis 1' in result.output
    assert (checked / 'crosstalk.csv').exists()
    assert (checked / 'cross_basis.csv').exists()

    frames = cli_env / 'frames'
    args = ['propagate', '--config', config_file, '--holo', holo, '--mode', '0']
    result = invoke(runner, *args, '--interval', '0.5', '--output', str(frames))
    assert sorted(p.name for p in frames.glob('*.pgm')) == [
        'frame_0000.pgm',
        'frame_0001.pgm',
        'frame_0002.pgm',
    ]
    radii = [line for line in result.stdout.splitlines() if line.startswith('frame ')]
    assert len(radii) == 3
    assert radii[0].startswith('frame 0000: w_x = ')


def test_optimize_writes_run_folder(runner, cli_env, config_file):
    """Test optimize writes holograms, reports, history and the resolved config"""
    out = cli_env / 'opt'
    result = invoke(runner, 'optimize', '--config', config_file, '--output', str(out))
    assert 'qber=' in result.output
    for name in ('element1.pgm', 'crosstalk.csv', 'history.csv', 'run.cfg'):
        assert (out / name).exists()
    history = (out / 'history.csv').read_text().splitlines()
    assert history[1] == 'iteration,best_fitness,ability,e_b'
    assert len(history) == 2 + 6


def test_optimize_is_deterministic(runner, cli_env, config_file):
    """Test identical seeds give byte-identical histories apart from the timestamp"""
    traces = []
    for name in ('first', 'second'):
        out = cli_env / name
        invoke(runner, '--no-registry', 'optimize', '--config', config_file, '--output', str(out))
        traces.append((out / 'history.csv').read_text().splitlines()[1:])
    assert traces[0] == traces[1]


def test_optimize_islands(runner, cli_env, config_file):
    """Test independent replicas keep the best member"""
    out = cli_env / 'islands'
    args = ['--no-registry', 'optimize', '--config', config_file, '--islands', '2']
    invoke(runner, *args, '--output', str(out))
    assert (out / 'element1.pgm').exists()


def test_runs_are_registered(runner, cli_env, config_file):
    """Test optimize records a run and every command is logged"""
    invoke(runner, 'optimize', '--config', config_file, '--output', str(cli_env / 'opt'))
    main(['baseline', '--config', str(cli_env / 'missing.cfg')])

    engine = get_engine(f"sqlite:///{cli_env / 'cli.db'}")
    with Session(engine) as session:
        runs = session.scalars(select(OptimizationRun)).all()
        logs = session.scalars(select(CommandLog).order_by(CommandLog.id)).all()

    assert len(runs) == 1
    assert runs[0].command == 'optimize'
    assert runs[0].seed == 7
    assert runs[0].iterations == 6
    assert runs[0].success

    assert [(log.command, log.success) for log in logs] == [
        ('optimize', True),
        ('baseline', False),
    ]
    assert logs[0].arguments_dict['config_path'] == config_file


def test_islands_cannot_resume(cli_env, capsys, config_file):
    """Test a checkpoint cannot be split across independent replicas"""
    checkpoint = str(cli_env / 'checkpoint.npz')
    args = ['--no-registry', 'optimize', '--config', config_file, '--islands', '2']
    assert main([*args, '--resume', checkpoint]) == EXIT_VALIDATION
    assert '--islands' in capsys.readouterr().err
    assert not (cli_env / 'runs').exists()
