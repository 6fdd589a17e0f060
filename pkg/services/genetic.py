"""
Steady-state genetic algorithm over one- or two-element phase genomes

Each iteration breeds a single child from two rank-selected parents, mutates and blurs
it, evaluates it through the sorter and replaces the worst member if the child is fitter.
The fitness is the sorting performance B until `switch_at`, then B * max(R, floor).
"""

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from tqdm import tqdm

from services.errors import HologramFileError, ValidationError
from services.modes import BasisSpec, sample_lg, sample_vector
from services.optics import TWO_PI, wrap_phase
from services.sorter import (
    DEFAULT_MACRO_PITCH,
    FITNESS_FLOOR,
    PhaseElement,
    fitness,
    run_sorter,
)

logger = logging.getLogger(__name__)

RNG_ALGORITHM = 'PCG64'


@dataclass
class GAConfig:
    """Evolutionary hyperparameters; rank_tau defaults to population / 3"""

    population: int = 10
    m: int = 125
    macro_pitch: float = DEFAULT_MACRO_PITCH
    blur_sigma: float = 1.0
    mutate_frac_start: float = 0.10
    mutate_frac_end: float = 0.0001
    mutate_amp: float = 0.15
    rank_tau: float = None
    switch_at: int = 10_000
    budget: int = 100_000
    seed: int = 0
    planes: int = 1
    blur_children: bool = True
    early_stop: bool = False
    early_stop_window: int = 10_000
    early_stop_tol: float = 1e-4
    checkpoint_every: int = 0
    threads: int = 1
    fitness_floor: float = FITNESS_FLOOR

    def __post_init__(self):
        if self.rank_tau is None:
            self.rank_tau = self.population / 3
        if self.population < 2:
            raise ValidationError(f'population must be >= 2, got {self.population}')
        if self.m < 16:
            raise ValidationError(f'elements need at least 16 macropixels, got {self.m}')
        if not 0 < self.mutate_frac_end <= self.mutate_frac_start <= 1:
            raise ValidationError(
                'mutation fractions must satisfy 0 < end <= start <= 1, got '
                f'start={self.mutate_frac_start} end={self.mutate_frac_end}'
            )
        if not 0 <= self.mutate_amp <= 1:
            raise ValidationError(f'mutation amplitude must lie in [0, 1], got {self.mutate_amp}')
        if self.budget < 0:
            raise ValidationError(f'budget must be >= 0, got {self.budget}')
        if self.switch_at < 0:
            raise ValidationError(f'switch_at must be >= 0, got {self.switch_at}')
        if self.blur_sigma < 0:
            raise ValidationError(f'blur sigma must be >= 0, got {self.blur_sigma}')
        if not self.rank_tau > 0:
            raise ValidationError(f'rank_tau must be positive, got {self.rank_tau}')
        if self.planes not in (1, 2):
            raise ValidationError(f'planes must be 1 or 2, got {self.planes}')
        if self.checkpoint_every < 0:
            raise ValidationError(f'checkpoint interval must be >= 0, got {self.checkpoint_every}')
        if self.threads < 1:
            raise ValidationError(f'threads must be >= 1, got {self.threads}')


@dataclass(eq=False)
class Individual:
    """One genome (1 or 2 elements) with its cached evaluation"""

    elements: tuple
    fitness: float = None
    metrics: object = None


@dataclass
class RunHistory:
    """Per-iteration trace of the best member"""

    best_fitness: list = field(default_factory=list)
    best_ability: list = field(default_factory=list)
    best_qber: list = field(default_factory=list)
    accepted: int = 0
    rng_algorithm: str = RNG_ALGORITHM
    population: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.best_fitness)

    def record(self, best):
        self.best_fitness.append(float(best.fitness))
        self.best_ability.append(float(best.metrics.ability))
        self.best_qber.append(float(best.metrics.e_b))


@dataclass
class GAState:
    cfg: GAConfig
    population: list
    iteration: int = 0
    switched: bool = False
    history: RunHistory = None

    def __post_init__(self):
        if self.history is None:
            self.history = RunHistory()


class SorterContext:
    """
    Sorter geometry plus the sampled input fields a genome is scored against

    Args:
        setup (SorterSetup): Geometry
        inputs (list[ComplexField]): One input per output channel
        threads (int): Per-mode evaluation threads
    """

    def __init__(self, setup, inputs, threads=1):
        self.setup = setup
        self.inputs = list(inputs)
        self.threads = threads
        if len(self.inputs) != setup.d:
            raise ValidationError(f'{len(self.inputs)} targets given for {setup.d} channels')

    @classmethod
    def from_targets(cls, setup, targets, threads=1):
        """Targets are either a BasisSpec or a sequence of ModeVectors"""
        if isinstance(targets, BasisSpec):
            inputs = [sample_lg(setup.grid, spec) for spec in targets.modes]
        else:
            inputs = [sample_vector(setup.grid, vector) for vector in targets]
        return cls(setup, inputs, threads)

    def evaluate(self, elements):
        return run_sorter(self.setup, elements, self.inputs, threads=self.threads, monitor=False)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _score(individual, context, iteration, cfg):
    individual.metrics = context.evaluate(individual.elements)
    individual.fitness = fitness(individual.metrics, iteration, cfg.switch_at, cfg.fitness_floor)
    return individual


def _rank(population):
    # stable, so ties keep their insertion order
    population.sort(key=lambda member: -member.fitness)
    return population


def init_population(cfg, context, rng):
    """
    Random, blurred, evaluated and ranked starting population

    Returns:
        list[Individual]: Sorted by fitness, best first
    """
    population = []
    for _ in range(cfg.population):
        elements = tuple(
            blur_phase(
                PhaseElement(rng.random((cfg.m, cfg.m)) * TWO_PI, cfg.macro_pitch), cfg.blur_sigma
            )
            for _ in range(cfg.planes)
        )
        population.append(_score(Individual(elements), context, 0, cfg))
    logger.info(f'initial population of {cfg.population} evaluated')
    return _rank(population)


def blur_phase(element, sigma):
    """
    Wrap-aware Gaussian blur: cos and sin are filtered separately and recombined

    Args:
        element (PhaseElement): Pattern to smooth
        sigma (float): Kernel width in macropixels

    Returns:
        PhaseElement: Smoothed pattern
    """
    if sigma < 0:
        raise ValidationError(f'blur sigma must be >= 0, got {sigma}')
    if sigma == 0:
        return element
    cos = gaussian_filter(np.cos(element.phases), sigma)
    sin = gaussian_filter(np.sin(element.phases), sigma)
    return PhaseElement(wrap_phase(np.arctan2(sin, cos)), element.macro_pitch)


def rank_weights(size, tau):
    """Selection probabilities proportional to exp(-rank / tau)"""
    weights = np.exp(-np.arange(size) / tau)
    return weights / weights.sum()


def select_parents(population, rng, tau):
    """
    Draw two distinct members without replacement, rank 0 being the best

    Returns:
        tuple[Individual, Individual]: (first, second) parent
    """
    if len(population) < 2:
        raise ValidationError('selection needs at least two members')
    weights = rank_weights(len(population), tau)
    first = rng.choice(len(population), p=weights)
    rest = weights.copy()
    rest[first] = 0.0
    second = rng.choice(len(population), p=rest / rest.sum())
    return population[first], population[second]


def crossover(a, b, rng):
    """
    Child made of one half of each parent, cut horizontally or vertically through the middle

    Each element pair picks its own cut axis and parent order.
    """
    if len(a.elements) != len(b.elements):
        raise ValidationError('parents have different numbers of planes')
    children = []
    for ea, eb in zip(a.elements, b.elements):
        if ea.phases.shape != eb.phases.shape:
            raise ValidationError(f'element shapes differ: {ea.phases.shape} vs {eb.phases.shape}')
        axis = rng.integers(2)
        first, second = (ea, eb) if rng.integers(2) == 0 else (eb, ea)
        half = ea.m // 2
        phases = second.phases.copy()
        if axis == 0:
            phases[:half, :] = first.phases[:half, :]
        else:
            phases[:, :half] = first.phases[:, :half]
        children.append(PhaseElement(phases, ea.macro_pitch))
    return Individual(tuple(children))


def mutation_count(frac, m):
    """round(frac * m^2), halves rounded up"""
    return int(math.floor(frac * m * m + 0.5))


def mutate(element, frac, amp, rng):
    """
    Perturb round(frac * m^2) distinct macropixels by uniform draws in [-amp 2pi, amp 2pi]

    Args:
        element (PhaseElement): Parent pattern
        frac (float): Fraction of macropixels to change
        amp (float): Perturbation amplitude as a fraction of 2pi
    """
    if not 0 <= frac <= 1 or not 0 <= amp <= 1:
        raise ValidationError(
            f'mutation fraction and amplitude must lie in [0, 1], got {frac}, {amp}'
        )
    count = mutation_count(frac, element.m)
    if count == 0:
        return element
    flat = element.phases.ravel().copy()
    chosen = rng.choice(flat.size, size=count, replace=False)
    flat[chosen] += rng.uniform(-amp * TWO_PI, amp * TWO_PI, size=count)
    return PhaseElement(flat.reshape(element.phases.shape), element.macro_pitch)


def mutation_fraction(iteration, cfg):
    """Geometric decay from mutate_frac_start at 0 to mutate_frac_end at the budget"""
    if cfg.budget == 0:
        return cfg.mutate_frac_start
    ratio = cfg.mutate_frac_end / cfg.mutate_frac_start
    return cfg.mutate_frac_start * ratio ** (iteration / cfg.budget)


def rescore(population, iteration, cfg):
    """Recompute cached fitness from cached metrics for the current schedule phase and re-rank"""
    for member in population:
        member.fitness = fitness(member.metrics, iteration, cfg.switch_at, cfg.fitness_floor)
    return _rank(population)


def step(state, context, rng):
    """
    One steady-state iteration: select, cross, mutate, blur, evaluate, replace-worst

    Returns:
        GAState: The same state, advanced by one iteration
    """
    cfg = state.cfg
    t = state.iteration
    if t >= cfg.switch_at and not state.switched:
        rescore(state.population, t, cfg)
        state.switched = True
        logger.info(f'iteration {t}: fitness switched to B * R')

    parent_a, parent_b = select_parents(state.population, rng, cfg.rank_tau)
    child = crossover(parent_a, parent_b, rng)
    frac = mutation_fraction(t, cfg)
    elements = [mutate(e, frac, cfg.mutate_amp, rng) for e in child.elements]
    if cfg.blur_children:
        elements = [blur_phase(e, cfg.blur_sigma) for e in elements]
    child = _score(Individual(tuple(elements)), context, t, cfg)

    worst = state.population[-1]
    if child.fitness > worst.fitness:
        state.population[-1] = child
        _rank(state.population)
        state.history.accepted += 1
        logger.debug(f'iteration {t}: child accepted with fitness {child.fitness:.6g}')

    state.history.record(state.population[0])
    state.iteration = t + 1
    return state


def _stalled(state):
    cfg = state.cfg
    window = cfg.early_stop_window
    t = state.iteration
    if t < window or t - window < cfg.switch_at <= t:
        return False
    trace = state.history.best_fitness
    before, now = trace[t - window - 1] if t > window else trace[0], trace[t - 1]
    return abs(now - before) <= cfg.early_stop_tol * abs(before)


def run(cfg, targets, setup, threads=None, resume=None, checkpoint_path=None, progress=False):
    """
    Optimize sorter elements for a set of target modes

    Args:
        cfg (GAConfig): Hyperparameters
        targets (BasisSpec | list[ModeVector]): Modes to sort, mode n targets channel n
        setup (SorterSetup): Geometry with cfg.planes planes
        threads (int): Per-mode evaluation threads, cfg.threads when omitted
        resume (str): Checkpoint to continue from
        checkpoint_path (str): Where to write checkpoints every cfg.checkpoint_every iterations
        progress (bool): Show a tqdm progress bar

    Returns:
        tuple[Individual, RunHistory]: Best member and the run history
    """
    if cfg.planes != setup.planes:
        raise ValidationError(f'config asks for {cfg.planes} planes, setup has {setup.planes}')
    context = SorterContext.from_targets(setup, targets, threads or cfg.threads)

    if resume:
        state, rng = load_checkpoint(resume, cfg, context)
        logger.info(f'resumed from {resume} at iteration {state.iteration}')
    else:
        rng = make_rng(cfg.seed)
        state = GAState(cfg, init_population(cfg, context, rng))

    for _ in tqdm(range(state.iteration, cfg.budget), disable=not progress, desc='optimizing'):
        step(state, context, rng)
        if cfg.checkpoint_every and checkpoint_path and state.iteration % cfg.checkpoint_every == 0:
            save_checkpoint(state, rng, checkpoint_path)
        if cfg.early_stop and _stalled(state):
            logger.warning(
                f'early stop at iteration {state.iteration}: best fitness improved less than '
                f'{cfg.early_stop_tol:g} over {cfg.early_stop_window} iterations'
            )
            break

    state.history.population = list(state.population)
    best = state.population[0]
    logger.info(
        f'finished after {state.iteration} iterations: ability {best.metrics.ability:.4f}, '
        f'efficiency {best.metrics.efficiency:.4f}, QBER {best.metrics.e_b:.4f}'
    )
    return best, state.history


def run_islands(cfg, targets, setup, replicas, workers=None, threads=None):
    """
    Independent replicas seeded from SeedSequence(cfg.seed).spawn(replicas)

    Returns:
        list[tuple[Individual, RunHistory]]: One result per replica, in replica order
    """
    if replicas < 1:
        raise ValidationError(f'replicas must be >= 1, got {replicas}')
    children = np.random.SeedSequence(cfg.seed).spawn(replicas)
    configs = [
        dataclasses.replace(cfg, seed=int(child.generate_state(1, dtype=np.uint64)[0]))
        for child in children
    ]
    with ThreadPoolExecutor(max_workers=workers or replicas) as pool:
        results = pool.map(lambda replica: run(replica, targets, setup, threads=threads), configs)
        return list(results)


def save_checkpoint(state, rng, path):
    """
    Write population, RNG state, iteration counter and history to an .npz file

    Args:
        state (GAState): Current state
        rng (np.random.Generator): Generator driving the run
        path (str): Destination
    """
    phases = np.array([[e.phases for e in member.elements] for member in state.population])
    meta = {
        'iteration': state.iteration,
        'switched': state.switched,
        'accepted': state.history.accepted,
        'rng_algorithm': RNG_ALGORITHM,
        'rng_state': rng.bit_generator.state,
        'macro_pitch': state.population[0].elements[0].macro_pitch,
        'config': dataclasses.asdict(state.cfg),
    }
    with open(path, 'wb') as handle:
        np.savez_compressed(
            handle,
            phases=phases,
            fitness=np.array([member.fitness for member in state.population]),
            best_fitness=np.array(state.history.best_fitness),
            best_ability=np.array(state.history.best_ability),
            best_qber=np.array(state.history.best_qber),
            meta=np.array(json.dumps(meta)),
        )
    logger.info(f'checkpoint written to {path} at iteration {state.iteration}')


def load_checkpoint(path, cfg, context):
    """
    Restore a GAState and its generator from save_checkpoint output

    Population metrics are recomputed (evaluation is deterministic); fitness values are
    taken from the file.
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data['meta']))
            phases = data['phases']
            fitness_values = data['fitness']
            keys = ('best_fitness', 'best_ability', 'best_qber')
            trace = {key: data[key].tolist() for key in keys}
    except (KeyError, ValueError) as e:
        raise HologramFileError(f'malformed checkpoint {path}: {e}') from e

    if meta.get('rng_algorithm') != RNG_ALGORITHM:
        algorithm = meta.get('rng_algorithm')
        raise HologramFileError(f'checkpoint uses unsupported generator {algorithm}')
    if phases.shape[1] != cfg.planes or phases.shape[2] != cfg.m:
        raise ValidationError(
            f'checkpoint genome shape {phases.shape[1:]} does not match config '
            f'({cfg.planes}, {cfg.m}, {cfg.m})'
        )

    population = []
    for genome, value in zip(phases, fitness_values):
        member = Individual(tuple(PhaseElement(p, meta['macro_pitch']) for p in genome))
        member.metrics = context.evaluate(member.elements)
        member.fitness = float(value)
        population.append(member)

    history = RunHistory(accepted=meta['accepted'], **trace)
    state = GAState(cfg, population, meta['iteration'], meta['switched'], history)
    bit_generator = np.random.PCG64()
    bit_generator.state = meta['rng_state']
    return state, np.random.Generator(bit_generator)
