from pathlib import Path
from typing import IO, Optional, Union
import sys

from pydantic import BaseModel


def emit(record: BaseModel, stream: Optional[IO[str]] = None) -> None:
    """Write one record as a JSON line (stdout by default)."""
    stream = stream if stream is not None else sys.stdout
    stream.write(record.model_dump_json() + "\n")
    stream.flush()


class RecordWriter:
    """Append-only JSON-lines file."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", encoding="utf-8")

    def write(self, record: BaseModel) -> None:
        emit(record, self._file)

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "RecordWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
