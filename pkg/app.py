"""
Mode sorter - command-line interface

Requires Python 3.12
"""

import dataclasses
import logging
import os
import sys
from datetime import datetime, timezone
from functools import wraps

import click
import numpy as np
from dotenv import load_dotenv

from models import DEFAULT_DATABASE_URL, init_registry, log_command, record_run
from services import genetic
from services.config import (
    build_basis,
    build_setup,
    build_targets,
    format_config,
    load_config,
)
from services.errors import ValidationError
from services.hologram_io import (
    RunDirectory,
    export_intensity,
    load_hologram,
    write_cross_basis_report,
    write_history_csv,
)
from services.modes import BasisSpec, mub_family, sample_lg, sample_vector, unbiasedness_deviation
from services.optics import ComplexField, beam_radius
from services.sorter import (
    cross_basis_matrix,
    fork_baseline,
    key_rate,
    run_sorter,
    trace_sorter,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def setup_logging(verbose=False):
    handlers = [logging.StreamHandler()]
    if os.getenv('LOG_FILE'):
        handlers.append(logging.FileHandler(os.getenv('LOG_FILE')))
    level = logging.DEBUG if verbose else getattr(logging, os.getenv('LOG_LEVEL', 'INFO').upper())
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def _open_registry(disabled):
    if disabled:
        return None
    try:
        return init_registry(os.getenv('DATABASE_URL', DEFAULT_DATABASE_URL))
    except Exception as e:
        logger.error(f'Run registry unavailable: {str(e)}')
        return None


def registered(command):
    """Log each invocation of a command into the run registry"""

    def decorate(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            registry = click.get_current_context().obj.get('registry')
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                if registry is not None:
                    log_command(registry, command, kwargs, False, str(e))
                raise
            if registry is not None:
                log_command(registry, command, kwargs, True)
            return result

        return wrapper

    return decorate


def _record(ctx, command, config, metrics, output_dir, started_at, **extra):
    registry = ctx.obj.get('registry')
    if registry is None:
        return
    record_run(
        registry,
        command=command,
        config_text=format_config(config),
        seed=config.ga.seed,
        planes=config.sorter.planes,
        d=config.mode.d,
        ability=metrics.ability,
        efficiency=metrics.efficiency,
        qber=metrics.e_b,
        key_rate=metrics.R,
        output_dir=output_dir,
        started_at=started_at,
        finished_at=datetime.now(timezone.utc),
        success=True,
        **extra,
    )


def _input_fields(grid, targets):
    if isinstance(targets, BasisSpec):
        return [sample_lg(grid, spec) for spec in targets.modes]
    return [sample_vector(grid, vector) for vector in targets]


def _input_labels(targets):
    if isinstance(targets, BasisSpec):
        return targets.labels
    return [vector.label for vector in targets]


def _load_elements(paths, planes):
    if len(paths) != planes:
        raise ValidationError(f'{len(paths)} holograms given for a {planes}-plane sorter')
    return tuple(load_hologram(path)[0] for path in paths)


def _echo_metrics(metrics):
    click.echo(
        f'ability={metrics.ability:.6f} efficiency={metrics.efficiency:.6f} '
        f'qber={metrics.e_b:.6f} key_rate={metrics.R:.6f} B={metrics.B:.6f}'
    )


@click.group()
@click.option('--verbose', is_flag=True, help='Debug logging')
@click.option(
    '--threads',
    type=click.IntRange(min=1),
    default=1,
    envvar='SORTER_THREADS',
    show_default=True,
    help='Threads for per-mode propagation',
)
@click.option('--no-registry', is_flag=True, help='Do not record runs in the database')
@click.pass_context
def cli(ctx, verbose, threads, no_registry):
    """Design and evaluate phase-only mode sorters"""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj['threads'] = threads
    ctx.obj['registry'] = _open_registry(no_registry)


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False))
@click.option('--seed', type=click.IntRange(min=0), default=None, help='Override [ga] seed')
@click.option('--resume', type=click.Path(dir_okay=False), default=None, help='Checkpoint file')
@click.option('--islands', type=click.IntRange(min=1), default=1, help='Independent replicas')
@click.option('--output', type=click.Path(file_okay=False), default=None)
@click.option('--progress/--no-progress', default=False)
@click.pass_context
@registered('optimize')
def optimize(ctx, config_path, seed, resume, islands, output, progress):
    """Evolve sorter holograms for the configured modes"""
    if islands > 1 and resume:
        raise ValidationError('--resume continues a single run and cannot be used with --islands')
    started_at = datetime.now(timezone.utc)
    config = load_config(config_path)
    if seed is not None:
        config = config.with_seed(seed)
    setup = build_setup(config)
    targets = build_targets(config)
    out = RunDirectory(output or config.output.directory)
    out.write_config(format_config(config))
    threads = ctx.obj['threads']

    logger.info(
        f'optimize: d={setup.d} planes={setup.planes} budget={config.ga.budget} '
        f'seed={config.ga.seed}'
    )
    if islands > 1:
        results = genetic.run_islands(config.ga, targets, setup, islands, threads=threads)
        best, history = max(results, key=lambda result: result[0].fitness)
    else:
        best, history = genetic.run(
            config.ga,
            targets,
            setup,
            threads=threads,
            resume=resume,
            checkpoint_path=out.path('checkpoint.npz'),
            progress=progress,
        )

    out.save_elements(best.elements, config.grid.wavelength, config.ga.seed)
    out.write_reports(best.metrics, _input_labels(targets), setup.layout.labels)
    write_history_csv(history, out.path('history.csv'))
    _echo_metrics(best.metrics)
    _record(
        ctx,
        'optimize',
        config,
        best.metrics,
        str(out.directory),
        started_at,
        budget=config.ga.budget,
        iterations=history.iterations,
        best_fitness=best.fitness,
    )


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False))
@click.option('--holo', 'holograms', multiple=True, required=True, type=click.Path(dir_okay=False))
@click.option('--cross-basis', type=click.IntRange(min=0), default=None, help='MUB index')
@click.option('--output', type=click.Path(file_okay=False), default=None)
@click.pass_context
@registered('evaluate')
def evaluate(ctx, config_path, holograms, cross_basis, output):
    """Evaluate saved holograms against the configured modes"""
    started_at = datetime.now(timezone.utc)
    config = load_config(config_path)
    setup = build_setup(config)
    targets = build_targets(config)
    elements = _load_elements(holograms, setup.planes)
    threads = ctx.obj['threads']

    metrics = run_sorter(setup, elements, _input_fields(setup.grid, targets), threads=threads)
    out = RunDirectory(output or config.output.directory)
    out.write_reports(metrics, _input_labels(targets), setup.layout.labels)
    _echo_metrics(metrics)

    if cross_basis is not None:
        foreign = build_targets(config, mub=cross_basis)
        matrix = cross_basis_matrix(
            setup, elements, _input_fields(setup.grid, foreign), threads=threads
        )
        write_cross_basis_report(
            matrix, out.path('cross_basis.csv'), _input_labels(foreign), setup.layout.labels
        )
        deviation = float(np.max(np.abs(matrix - 1.0 / setup.d)))
        click.echo(f'cross-basis {cross_basis}: max deviation from 1/d = {deviation:.6f}')

    _record(ctx, 'evaluate', config, metrics, str(out.directory), started_at)


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False))
@click.option('--output', type=click.Path(file_okay=False), default=None)
@click.pass_context
@registered('baseline')
def baseline(ctx, config_path, output):
    """Analytic multiplexed fork grating and its evaluation"""
    started_at = datetime.now(timezone.utc)
    config = load_config(config_path)
    setup = dataclasses.replace(build_setup(config), planes=1)
    basis = build_basis(config)
    element = fork_baseline(
        basis,
        setup.layout,
        setup.grid,
        focal=setup.focal,
        m=config.ga.m,
        macro_pitch=config.grid.pitch,
    )
    metrics = run_sorter(
        setup, (element,), _input_fields(setup.grid, basis), threads=ctx.obj['threads']
    )
    out = RunDirectory(output or config.output.directory)
    out.save_elements((element,), config.grid.wavelength)
    out.write_reports(metrics, basis.labels, setup.layout.labels)
    _echo_metrics(metrics)
    _record(ctx, 'baseline', config, metrics, str(out.directory), started_at)


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False))
@click.option('--holo', 'holograms', multiple=True, required=True, type=click.Path(dir_okay=False))
@click.option('--mode', 'mode_index', required=True, type=click.IntRange(min=0))
@click.option('--interval', required=True, type=float, help='Meters between frames')
@click.option(
    '--normalization', type=click.Choice(['power', 'peak']), default='power', show_default=True
)
@click.option('--output', type=click.Path(file_okay=False), default=None)
@click.pass_context
def propagate(ctx, config_path, holograms, mode_index, interval, normalization, output):
    """Intensity snapshots of one mode travelling through the sorter"""
    config = load_config(config_path)
    setup = build_setup(config)
    targets = build_targets(config)
    fields = _input_fields(setup.grid, targets)
    if mode_index >= len(fields):
        raise ValidationError(f'mode index {mode_index} out of range 0..{len(fields) - 1}')
    elements = _load_elements(holograms, setup.planes)

    frames = trace_sorter(setup, elements, fields[mode_index], interval)
    out = RunDirectory(output or config.output.directory)
    for k, intensity in enumerate(frames):
        frame = ComplexField(setup.grid, np.sqrt(intensity))
        export_intensity(frame, out.path(f'frame_{k:04d}.pgm'), normalization)
        wx, wy = beam_radius(frame)
        click.echo(f'frame {k:04d}: w_x = {wx * 1e3:.3f} mm, w_y = {wy * 1e3:.3f} mm')
    click.echo(f'{len(frames)} frames written to {out.directory}')


@cli.command()
@click.option('--d', 'd', required=True, type=int, help='Prime dimension')
def mub(d):
    """Print a complete set of mutually unbiased bases"""
    family = mub_family(d)
    deviation = 0.0
    for k, matrix in enumerate(family.bases):
        click.echo(f'basis {k}')
        for row in matrix:
            click.echo('  ' + ' '.join(f'{c.real:+.6f}{c.imag:+.6f}j' for c in row))
        for other in family.bases[k + 1 :]:
            deviation = max(deviation, unbiasedness_deviation(matrix, other))
    click.echo(f'max unbiasedness deviation: {deviation:.3e}')


@cli.command()
@click.option('--d', 'd', required=True, type=click.IntRange(min=2), help='Dimension')
@click.option('--qber', required=True, type=click.FloatRange(0.0, 1.0), help='Error rate e_b')
def keyrate(d, qber):
    """Secret-key rate in bits per sifted photon"""
    click.echo(f'{key_rate(d, qber):.4f}')


def _fail(kind, message, code):
    click.echo(f'error: kind={kind} message={message}', err=True)
    return code


def main(argv=None):
    """
    Run the CLI and map failures to exit codes

    Returns:
        int: 0 on success, 1 on validation errors, 2 on I/O errors
    """
    load_dotenv()
    try:
        result = cli.main(args=argv, prog_name='mode-sorter', standalone_mode=False)
    except click.exceptions.Abort:
        return _fail('validation', 'aborted', EXIT_VALIDATION)
    except click.ClickException as e:
        return _fail('validation', e.format_message(), EXIT_VALIDATION)
    except ValueError as e:
        return _fail('validation', str(e), EXIT_VALIDATION)
    except OSError as e:
        return _fail('io', str(e), EXIT_IO)
    return result if isinstance(result, int) else EXIT_OK


def run():
    sys.exit(main())


if __name__ == '__main__':
    run()
