"""Line-delimited, tab-separated record files for datasets.

Each file has one header line naming the fields, then one record per line.
String fields are escaped (backslash, tab, newline); every other field is
written as compact JSON, which covers integers, booleans, lists and nested
models.
"""

import json
import typing
from pathlib import Path

from pydantic import BaseModel

from src.corpus.split import DatasetSplit
from src.errors import InputError

M = typing.TypeVar("M", bound=BaseModel)

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n"}


def escape(text: str) -> str:
    """Escapes backslashes, tabs and newlines."""
    return "".join(_ESCAPES.get(char, char) for char in text)


def unescape(text: str) -> str:
    """Reverses `escape`.

    Raises:
        InputError: On a dangling or unknown escape sequence.
    """
    out = []
    chars = iter(text)
    for char in chars:
        if char != "\\":
            out.append(char)
            continue
        code = next(chars, None)
        if code not in _UNESCAPES:
            raise InputError(f"bad escape sequence in {text!r}")
        out.append(_UNESCAPES[code])
    return "".join(out)


def write_records(path: Path, records: list[BaseModel], model: type[BaseModel]) -> None:
    """Writes models of one type as a TSV record file."""
    fields = list(model.model_fields)
    lines = ["\t".join(fields)]
    for record in records:
        values = record.model_dump(mode="json")
        lines.append(
            "\t".join(
                escape(values[f]) if model.model_fields[f].annotation is str else json.dumps(values[f])
                for f in fields
            ),
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_records(path: Path, model: type[M]) -> list[M]:
    """Reads a TSV record file written by `write_records`.

    Raises:
        InputError: If the header does not match the model's fields.
    """
    lines = path.read_text(encoding="utf-8").split("\n")
    header = lines[0].split("\t")
    if header != list(model.model_fields):
        raise InputError(f"{path.name}: header {header} does not match {model.__name__}")
    records = []
    for line in lines[1:]:
        if not line:
            continue
        row = {}
        for name, raw in zip(header, line.split("\t"), strict=True):
            is_text = model.model_fields[name].annotation is str
            row[name] = unescape(raw) if is_text else json.loads(raw)
        records.append(model.model_validate(row))
    return records


def _item_type(name: str) -> type[BaseModel]:
    return typing.get_args(DatasetSplit.model_fields[name].annotation)[0]


def write_split(split: DatasetSplit, directory: Path) -> list[Path]:
    """Writes every dataset of the split as `<name>.tsv`.

    Returns:
        list[Path]: The files written, in field order.
    """
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in DatasetSplit.model_fields:
        path = directory / f"{name}.tsv"
        write_records(path, getattr(split, name), _item_type(name))
        paths.append(path)
    return paths


def read_split(directory: Path) -> DatasetSplit:
    """Reads a split written by `write_split`."""
    return DatasetSplit(
        **{name: read_records(directory / f"{name}.tsv", _item_type(name)) for name in DatasetSplit.model_fields},
    )
