"""Plain-text ``key=value`` configuration files."""

from .errors import ConfigurationError, ParseError


def parse_kv_file(path, schema: dict) -> dict:
    """Parse ``path`` against ``schema`` (key -> type).

    Blank lines and ``#`` comments are skipped. Unknown keys, duplicate
    keys and values that do not convert raise with the offending line.
    """
    with open(path) as fh:
        return parse_kv_lines(fh.read().splitlines(), schema, path)


def parse_kv_lines(lines, schema: dict, path=None) -> dict:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ConfigurationError(f"{path or '<config>'}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ParseError(f"duplicate key {key!r}", path, lineno)
        typ = schema[key]
        try:
            out[key] = _convert(value, typ)
        except ValueError:
            raise ParseError(f"{key}: cannot read {value!r} as {typ.__name__}", path, lineno) from None
    return out


def _convert(value: str, typ):
    if typ is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    if typ is int:
        return int(value, 10)
    return typ(value)
