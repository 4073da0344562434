"""UTF-8 ``key=value`` text files, used for every manifest and sidecar."""

from __future__ import annotations

from pathlib import Path


def read_keyvalue(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed line {line!r}")
        out[key.strip()] = value.strip()
    return out


def write_keyvalue(path, items: dict) -> None:
    text = "".join(f"{k}={v}\n" for k, v in items.items())
    Path(path).write_text(text, encoding="utf-8")


def fmt(x) -> str:
    """Round-trippable text for floats, ints and small sequences."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, tuple)):
        return " ".join(fmt(float(v)) if not isinstance(v, (int, str)) else str(v) for v in x)
    return str(x)


def parse_floats(text: str) -> list[float]:
    return [float(t) for t in text.split()]


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")
