import json
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from streamthink.exceptions import ConfigError, StructureError


def read_jsonl(path: str | Path, encoding: str = "utf-8") -> List[Tuple[int, Dict[str, Any]]]:
    """
    Read a line-delimited JSON file.

    Blank lines are skipped. Each returned item carries its 1-based line
    number so callers can point at the offending record.

    Args:
        path: Path to the file
        encoding: File encoding

    Returns:
        List of (line_number, record) pairs

    Raises:
        StructureError: If a line is not a JSON object
    """
    records: List[Tuple[int, Dict[str, Any]]] = []
    with open(path, "r", encoding=encoding) as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise StructureError(
                    f"Invalid input: {path}:{line_number} is not valid JSON ({e.msg})"
                ) from e
            if not isinstance(record, dict):
                raise StructureError(
                    f"Invalid input: {path}:{line_number} is not a JSON object"
                )
            records.append((line_number, record))
    return records


def dump_jsonl(records: Iterable[Mapping[str, Any]]) -> str:
    """Serialize records to line-delimited JSON text, keeping insertion key order."""
    return "".join(
        json.dumps(record, ensure_ascii=False) + "\n"
        for record in records
    )


def write_jsonl(
    records: Iterable[Mapping[str, Any]],
    output_path: Optional[str | Path] = None,
    encoding: str = "utf-8",
) -> None:
    """
    Write records as line-delimited JSON.

    Args:
        records: Records to write
        output_path: Destination file; stdout when None
        encoding: File encoding
    """
    text = dump_jsonl(records)
    if output_path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding=encoding)


def write_json(record: Any, output_path: str | Path, encoding: str = "utf-8") -> None:
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(record, ensure_ascii=False, indent=2) + "\n", encoding=encoding
    )


def parse_key_value_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """
    Parse flat ``key = value`` lines.

    ``#`` starts a comment anywhere on a line; blank lines are ignored. Later
    keys override earlier ones.

    Args:
        lines: Lines to parse
        source: Name used in error messages

    Returns:
        Mapping of key to raw string value

    Raises:
        ConfigError: If a non-blank line has no ``=`` or an empty key
    """
    values: Dict[str, str] = {}
    for line_number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"Invalid input: {source}:{line_number} expected 'key = value'", key=line
            )
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"Invalid input: {source}:{line_number} has an empty key", key="")
        values[key] = value.strip()
    return values


def read_key_value_file(path: str | Path, encoding: str = "utf-8") -> Dict[str, str]:
    with open(path, "r", encoding=encoding) as f:
        return parse_key_value_lines(f, source=str(path))
