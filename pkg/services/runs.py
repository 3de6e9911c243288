"""Run bookkeeping: manifests beside the outputs and a registry row per command."""
from __future__ import annotations

import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from sqlalchemy import select

UTC = timezone.utc

from app.config import Settings
from app.database import get_session
from app.models import RunRecord
from app.schemas import RunManifest
from services.storage import sha256_file, write_text_atomic

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    command: str
    seed: int | None
    started_at: datetime
    started_clock: float
    config: dict[str, Any] = field(default_factory=dict)
    inputs: list[Path] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)
    manifest_path: Path | None = None

    def write_manifest(self, path: Path) -> RunManifest:
        """Checksum the emitted files and write the manifest atomically."""

        manifest = RunManifest(
            command=self.command,
            config=self.config,
            inputs=[str(p) for p in self.inputs],
            outputs=[str(p) for p in self.outputs],
            seed=self.seed,
            checksums={str(p): sha256_file(p) for p in self.outputs},
            started_at=self.started_at,
            duration_seconds=round(time.perf_counter() - self.started_clock, 6),
        )
        write_text_atomic(path, manifest.model_dump_json(indent=2) + "\n")
        self.manifest_path = path
        return manifest


class RunRecorder:
    """Record every command in the run registry with its final status."""

    def __init__(self, settings: Settings) -> None:
        self.settings = settings

    @contextmanager
    def track(self, command: str, *, seed: int | None = None, out_path: Path | None = None) -> Iterator[RunContext]:
        context = RunContext(
            command=command,
            seed=seed,
            started_at=datetime.now(UTC).replace(tzinfo=None),
            started_clock=time.perf_counter(),
        )
        record: RunRecord | None = None
        if self.settings.record_runs:
            record = RunRecord(
                command=command,
                seed=None if seed is None else str(seed),
                status="pending",
                started_at=context.started_at,
                out_path=str(out_path) if out_path else None,
            )
            with get_session(self.settings.database_url) as session:
                session.add(record)
                session.commit()

        status, error = "succeeded", None
        try:
            yield context
        except Exception as exc:
            status, error = "error", str(exc)
            raise
        finally:
            if record is not None:
                with get_session(self.settings.database_url) as session:
                    stored = session.get(RunRecord, record.id)
                    stored.status = status
                    stored.error_message = error
                    stored.finished_at = datetime.now(UTC).replace(tzinfo=None)
                    stored.duration_seconds = time.perf_counter() - context.started_clock
                    stored.manifest_path = str(context.manifest_path) if context.manifest_path else None
                    session.commit()
            logger.info("Run %s finished with status %s", command, status)

    def recent(self, limit: int = 20) -> list[RunRecord]:
        with get_session(self.settings.database_url) as session:
            stmt = select(RunRecord).order_by(RunRecord.started_at.desc()).limit(limit)
            return list(session.execute(stmt).scalars().all())
