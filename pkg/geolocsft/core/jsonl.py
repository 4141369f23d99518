import hashlib
from pathlib import Path
from typing import Iterable, Iterator, Type, TypeVar, Union

from pydantic import BaseModel

M = TypeVar("M", bound=BaseModel)
PathLike = Union[str, Path]


def read_models(path: PathLike, model: Type[M]) -> Iterator[M]:
    """Streams a JSONL file as pydantic models, skipping blank lines."""
    with open(path, "r", encoding="utf8") as f:
        for line in f:
            if line.strip():
                yield model.model_validate_json(line)


def write_models(path: PathLike, records: Iterable[BaseModel]) -> int:
    """Writes models one per line and returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf8") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
            count += 1
    return count


def file_sha256(path: PathLike, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()
