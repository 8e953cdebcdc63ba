"""Shared helpers for the line-oriented ``#moso-*`` text formats.

Every format starts with a header ``#moso-<kind> v1 key=value ...``. Lines that
start with ``##`` carry metadata such as the run manifest and are skipped by
all readers.
"""

import json
import re
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .errors import ParseError

PathLike = Union[str, Path]

_FIELD = re.compile(r"^([A-Za-z_]+)=(\S*)$")


def format_float(value: float) -> str:
    """Shortest decimal string that round-trips to the same 64-bit float."""
    return repr(float(value))


def header_line(fmt: str, **fields) -> str:
    parts = [f"#moso-{fmt} v1"]
    parts += [f"{key}={value}" for key, value in fields.items()]
    return " ".join(parts)


def manifest_line(manifest: Optional[dict]) -> Optional[str]:
    if manifest is None:
        return None
    return "## manifest " + json.dumps(manifest, sort_keys=True, separators=(",", ":"))


def parse_header(line: Optional[str], kind: str, keys: Sequence[str],
                 lineno: int = 1, path: Optional[str] = None) -> Dict[str, str]:
    """Parse a header line and return its ``key=value`` fields.

    Raises:
        ParseError: when the line is absent, carries the wrong kind or version,
            or lacks one of ``keys``.
    """
    if line is None or not line.strip():
        raise ParseError("missing header", line=lineno, path=path)
    tokens = line.split()
    if tokens[0] != f"#moso-{kind}":
        raise ParseError(f"expected a #moso-{kind} header, got {tokens[0]!r}", line=lineno, path=path)
    if len(tokens) < 2 or tokens[1] != "v1":
        raise ParseError(f"unsupported #moso-{kind} version", line=lineno, path=path)
    fields = {}
    for token in tokens[2:]:
        match = _FIELD.match(token)
        if match is None:
            raise ParseError(f"malformed header field {token!r}", line=lineno, path=path)
        fields[match.group(1)] = match.group(2)
    missing = [key for key in keys if key not in fields]
    if missing:
        raise ParseError(f"header lacks {', '.join(missing)}", line=lineno, path=path)
    return fields


def header_int(fields: Dict[str, str], key: str, lineno: int = 1, path: Optional[str] = None) -> int:
    try:
        return int(fields[key])
    except ValueError:
        raise ParseError(f"header field {key} is not an integer: {fields[key]!r}", line=lineno, path=path)


def header_float(fields: Dict[str, str], key: str, lineno: int = 1, path: Optional[str] = None) -> float:
    try:
        return float(fields[key])
    except ValueError:
        raise ParseError(f"header field {key} is not a number: {fields[key]!r}", line=lineno, path=path)


def read_lines(path: PathLike) -> List[str]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", line=raw.count(b"\n", 0, exc.start) + 1,
                         path=str(path))
    return text.splitlines()


def write_lines(path: PathLike, lines: Iterable[Optional[str]]) -> None:
    text = "\n".join(line for line in lines if line is not None) + "\n"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def content_lines(lines: Sequence[str], start: int = 1) -> Iterator[Tuple[int, str]]:
    """Yield ``(lineno, line)`` for body lines, skipping ``##`` metadata and blanks."""
    for index in range(start, len(lines)):
        line = lines[index]
        if line.startswith("##") or not line.strip():
            continue
        yield index + 1, line


def read_manifest(lines: Sequence[str]) -> Optional[dict]:
    for line in lines:
        if line.startswith("## manifest "):
            return json.loads(line[len("## manifest "):])
    return None
