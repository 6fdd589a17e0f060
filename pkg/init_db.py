"""
Database initialization script for the run registry
"""

import os
import sys

import click
from dotenv import load_dotenv
from sqlalchemy import inspect

from models import DEFAULT_DATABASE_URL, init_registry

load_dotenv()


def init_database(url, drop=False):
    """Create the registry tables and list their columns"""
    if drop:
        click.echo('Dropping existing tables...')
    click.echo('Creating database tables...')
    engine = init_registry(url, drop=drop)
    click.echo('Database initialized successfully!')

    inspector = inspect(engine)
    click.echo('\nCreated tables:')
    for table in inspector.get_table_names():
        columns = inspector.get_columns(table)
        click.echo(f'  - {table} ({len(columns)} columns)')
        for column in columns:
            click.echo(f"    • {column['name']} ({column['type']})")
        click.echo()
    return engine


@click.command()
@click.option('--url', default=None, help='Database URL (DATABASE_URL by default)')
@click.option('--drop', is_flag=True, help='Drop existing tables first')
def main(url, drop):
    """Mode sorter - database initialization"""
    url = url or os.getenv('DATABASE_URL', DEFAULT_DATABASE_URL)
    try:
        init_database(url, drop)
    except Exception as e:
        click.echo(f'Error initializing database: {str(e)}', err=True)
        sys.exit(1)


if __name__ == '__main__':
    main()
