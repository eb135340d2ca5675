"""
Run records kept in a SQLite file next to the run outputs.  A record holds
the command line, the resolved configuration and the hashes needed to replay
the run and compare its outputs.
"""
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

from sqlalchemy import JSON, DateTime, Integer, String, Text, create_engine, select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import DeclarativeBase, Mapped, Session, mapped_column

from .checkpoint import load_checkpoint
from .errors import DataIOError, MissingArtifactError

logger = logging.getLogger(__name__)

REGISTRY_FILE = "runs.sqlite"


class Base(DeclarativeBase):
    pass


class RunRecordRow(Base):
    __tablename__ = "runs"

    run_id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    command: Mapped[str] = mapped_column(String(64))
    argv: Mapped[list] = mapped_column(JSON, default=list)
    config: Mapped[dict] = mapped_column(JSON, default=dict)
    run_dir: Mapped[str] = mapped_column(Text, default='')
    manifest_hash: Mapped[str] = mapped_column(String(64), default='')
    checkpoint_path: Mapped[str] = mapped_column(Text, default='')
    metrics_path: Mapped[str] = mapped_column(Text, default='')
    outputs: Mapped[list] = mapped_column(JSON, default=list)
    output_hash: Mapped[str] = mapped_column(String(64), default='')
    status: Mapped[str] = mapped_column(String(16), default='running')
    exit_code: Mapped[int] = mapped_column(Integer, default=0)
    created: Mapped[datetime] = mapped_column(
        DateTime, default=lambda: datetime.now(timezone.utc).replace(tzinfo=None))

    def __repr__(self):
        return f"<RunRecordRow {self.run_id} {self.command} {self.status}>"


def file_hash(path) -> str:
    """
    Content hash of one output.  Checkpoints hash their weights, so the
    container format does not matter; other files hash their bytes.
    """
    path = Path(path)
    if path.suffix == ".pt":
        return load_checkpoint(path).checksum
    return hashlib.sha256(path.read_bytes()).hexdigest()


def outputs_hash(paths, root) -> str:
    """sha256 over (path relative to root, content hash) pairs in sorted order."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(Path(p) for p in paths):
        rel = path.relative_to(root) if path.is_relative_to(root) else path
        digest.update(f"{rel.as_posix()}\t{file_hash(path)}\n".encode())
    return digest.hexdigest()


class RunRegistry:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.out_dir / REGISTRY_FILE
        self.engine = create_engine(f"sqlite:///{self.path}")
        try:
            Base.metadata.create_all(self.engine)
        except SQLAlchemyError as exc:
            raise DataIOError(f"Cannot open run registry {self.path}: {exc}") from exc

    def start(self, command: str, argv: list[str], config: dict) -> int:
        with Session(self.engine) as session:
            row = RunRecordRow(command=command, argv=list(argv), config=config)
            session.add(row)
            session.commit()
            logger.debug("Started run %d (%s)", row.run_id, command)
            return row.run_id

    def run_dir(self, run_id: int) -> Path:
        return self.out_dir / f"run-{run_id:04d}"

    def finish(self, run_id: int, status: str = 'completed', exit_code: int = 0,
               outputs=(), **fields) -> RunRecordRow:
        run_dir = self.run_dir(run_id)
        outputs = [str(p) for p in outputs]
        with Session(self.engine, expire_on_commit=False) as session:
            row = session.get(RunRecordRow, run_id)
            if row is None:
                raise MissingArtifactError(f"No run {run_id} in {self.path}")
            row.status = status
            row.exit_code = exit_code
            row.run_dir = str(run_dir)
            row.outputs = outputs
            if outputs and status == 'completed':
                row.output_hash = outputs_hash(outputs, run_dir)
            for key, value in fields.items():
                setattr(row, key, "" if value is None else str(value))
            session.commit()
            return row

    def get(self, run_id: int) -> RunRecordRow:
        with Session(self.engine, expire_on_commit=False) as session:
            row = session.get(RunRecordRow, run_id)
            if row is None:
                raise MissingArtifactError(f"No run {run_id} in {self.path}")
            return row

    def list_runs(self) -> list[RunRecordRow]:
        with Session(self.engine, expire_on_commit=False) as session:
            return list(session.scalars(select(RunRecordRow).order_by(RunRecordRow.run_id)))

    def write_record_json(self, row: RunRecordRow, path):
        """Plain-text copy of a record next to the run outputs."""
        payload = {
            'run_id': row.run_id, 'command': row.command, 'argv': row.argv,
            'config': row.config, 'manifest_hash': row.manifest_hash,
            'checkpoint_path': row.checkpoint_path, 'metrics_path': row.metrics_path,
            'outputs': row.outputs, 'output_hash': row.output_hash, 'status': row.status,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
