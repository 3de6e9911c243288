"""Database utilities and declarative base."""
from collections.abc import Iterator
from contextlib import contextmanager
from functools import lru_cache
from pathlib import Path

from sqlalchemy import Engine, create_engine
from sqlalchemy.engine import make_url
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker


class Base(DeclarativeBase):
    """Base class for SQLAlchemy models."""


@lru_cache
def get_engine(database_url: str) -> Engine:
    url = make_url(database_url)
    if url.get_backend_name() == "sqlite" and url.database not in (None, "", ":memory:"):
        Path(url.database).parent.mkdir(parents=True, exist_ok=True)
    engine = create_engine(database_url, echo=False)
    Base.metadata.create_all(engine)
    return engine


@contextmanager
def get_session(database_url: str) -> Iterator[Session]:
    """Provide a session bound to the registry database."""

    factory = sessionmaker(get_engine(database_url), expire_on_commit=False)
    with factory() as session:
        yield session
