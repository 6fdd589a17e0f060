"""
Run registry: every optimize/evaluate/baseline invocation is recorded in a small SQL database
"""

import json
import logging
from datetime import datetime, timezone

from sqlalchemy import Boolean, Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import DeclarativeBase, Session

logger = logging.getLogger(__name__)

DEFAULT_DATABASE_URL = 'sqlite:///mode_sorter.db'


def _utcnow():
    return datetime.now(timezone.utc)


class Base(DeclarativeBase):
    pass


class OptimizationRun(Base):
    """One numerical run and its headline figures"""

    __tablename__ = 'optimization_runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(20), nullable=False)
    config_text = Column(Text)
    seed = Column(Integer)
    planes = Column(Integer)
    d = Column(Integer)
    budget = Column(Integer)
    iterations = Column(Integer)
    best_fitness = Column(Float)
    ability = Column(Float)
    efficiency = Column(Float)
    qber = Column(Float)
    key_rate = Column(Float)
    output_dir = Column(String(500))
    started_at = Column(DateTime, default=_utcnow)
    finished_at = Column(DateTime)
    success = Column(Boolean, default=False)
    error_message = Column(Text)

    def __repr__(self):
        status = 'Success' if self.success else 'Failed'
        return f'<OptimizationRun {self.id} {self.command} - {status}>'

    @property
    def summary(self):
        """One-line description of the run"""
        if not self.success:
            return f'{self.command} failed: {self.error_message}'
        if self.ability is None:
            return f'{self.command} d={self.d}'
        return (
            f'{self.command} d={self.d} planes={self.planes}: ability {self.ability:.2%}, '
            f'efficiency {self.efficiency:.2%}, QBER {self.qber:.2%}'
        )

    def to_dict(self):
        """Convert run to dictionary"""
        return {
            'id': self.id,
            'command': self.command,
            'seed': self.seed,
            'planes': self.planes,
            'd': self.d,
            'budget': self.budget,
            'iterations': self.iterations,
            'best_fitness': self.best_fitness,
            'ability': self.ability,
            'efficiency': self.efficiency,
            'qber': self.qber,
            'key_rate': self.key_rate,
            'output_dir': self.output_dir,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None,
            'success': self.success,
            'error_message': self.error_message,
            'summary': self.summary,
        }


class CommandLog(Base):
    """Model for logging CLI invocations"""

    __tablename__ = 'command_logs'

    id = Column(Integer, primary_key=True)
    command = Column(String(20), nullable=False)
    arguments = Column(Text)
    success = Column(Boolean, default=False)
    error_message = Column(Text)
    timestamp = Column(DateTime, default=_utcnow)

    def __repr__(self):
        return f"<CommandLog {self.id} - {'Success' if self.success else 'Failed'}>"

    @property
    def arguments_dict(self):
        """Parse arguments JSON string to dictionary"""
        if self.arguments:
            try:
                return json.loads(self.arguments)
            except json.JSONDecodeError:
                return {}
        return {}


def get_engine(url=None):
    return create_engine(url or DEFAULT_DATABASE_URL)


def init_registry(url=None, drop=False):
    """
    Create registry tables

    Args:
        url (str): SQLAlchemy database URL
        drop (bool): Drop existing tables first

    Returns:
        Engine: Engine bound to the registry
    """
    engine = get_engine(url)
    if drop:
        Base.metadata.drop_all(engine)
    Base.metadata.create_all(engine)
    return engine


def record_run(engine, **fields):
    """
    Store an OptimizationRun row; database failures are logged, never raised

    Returns:
        int: Row id, or None if the write failed
    """
    try:
        with Session(engine) as session:
            run = OptimizationRun(**fields)
            session.add(run)
            session.commit()
            return run.id
    except SQLAlchemyError as e:
        logger.error(f'Error recording run: {str(e)}')
        return None


def log_command(engine, command, arguments, success, error_message=None):
    """Store a CommandLog row; database failures are logged, never raised"""
    try:
        with Session(engine) as session:
            entry = CommandLog(
                command=command,
                arguments=json.dumps(arguments, sort_keys=True, default=str),
                success=success,
                error_message=error_message,
            )
            session.add(entry)
            session.commit()
            return entry.id
    except SQLAlchemyError as e:
        logger.error(f'Error logging command: {str(e)}')
        return None
