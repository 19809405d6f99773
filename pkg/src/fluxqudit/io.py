"""Configuration parsing and result export.

Config files are plain ``key = value`` lines. Keys may be dotted
(``circuit.beta_L = 1.28``) or grouped under ``[circuit]`` style headers;
both spellings resolve to the same flat dotted key. Keys are
case-insensitive. Floats are written with 17 significant digits so that
exported tables round-trip exactly.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

FLOAT_FORMAT = "{:.17g}"
_ROOT = "__root__"


class ConfigError(ValidationError):
    """Invalid configuration value; carries the offending key and source file."""

    def __init__(self, key, message, source=None):
        self.key = key
        self.source = source
        where = f"{source}: " if source else ""
        super().__init__(f"{where}{key}: {message}")


def parse_config_text(text: str, source=None) -> dict:
    """Flatten a config text into ``{dotted_key: raw string}``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(f"[{_ROOT}]\n" + text, source=str(source or "<config>"))
    except configparser.Error as exc:
        raise ConfigError("<syntax>", str(exc), source) from exc
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = key if section == _ROOT else f"{section.lower()}.{key}"
            flat[name.lower()] = value.strip()
    return flat


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read config ({exc.strerror})", path) from exc
    return parse_config_text(text, source=path)


class ConfigView:
    """Typed access to a flat config dict; errors name the key and source."""

    def __init__(self, values: dict, source=None):
        self.values = {k.lower(): v for k, v in values.items()}
        self.source = source
        self.used = set()

    def has(self, key):
        return key.lower() in self.values

    def _raw(self, key, default):
        key = key.lower()
        if key not in self.values:
            if default is _REQUIRED:
                raise ConfigError(key, "missing required value", self.source)
            return default
        self.used.add(key)
        return self.values[key]

    def float(self, key, default=None):
        raw = self._raw(key, _REQUIRED if default is None else default)
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {raw!r}", self.source) from None

    def int(self, key, default=None):
        raw = self._raw(key, _REQUIRED if default is None else default)
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected an integer, got {raw!r}", self.source) from None

    def str(self, key, default=None):
        return str(self._raw(key, _REQUIRED if default is None else default))

    def bool(self, key, default=False):
        raw = str(self._raw(key, default)).lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(key, f"expected a boolean, got {raw!r}", self.source)

    def floats(self, key, default=None):
        raw = self._raw(key, _REQUIRED if default is None else default)
        if not isinstance(raw, str):
            return [float(v) for v in raw]
        try:
            return [float(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(key, f"expected a list of numbers, got {raw!r}", self.source) from None

    def unused(self):
        return sorted(set(self.values) - self.used)


_REQUIRED = object()


def format_value(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT.format(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    """Return ``(header, rows)`` with numeric cells converted to float."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for row in reader:
            out = []
            for cell in row:
                try:
                    out.append(float(cell))
                except ValueError:
                    out.append(cell)
            rows.append(out)
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, payload):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def trajectory_rows(traj):
    header = [traj.stamp_name] + [f"rho_{k}{k}" for k in range(1, traj.dim + 1)]
    rows = [[s, *occ] for s, occ in zip(traj.stamps, traj.occupations)]
    return header, rows


def write_trajectory_csv(path, traj):
    header, rows = trajectory_rows(traj)
    return write_csv(path, header, rows)


def write_density_dump(path, stamps, matrices):
    """Binary dump: per record a little-endian ``<f8`` stamp, ``<i8`` dimension,
    then the row-major matrix as interleaved ``<f8`` real/imaginary pairs."""
    path = Path(path)
    with path.open("wb") as fh:
        for s, m in zip(stamps, matrices):
            m = np.asarray(m, dtype=np.complex128)
            fh.write(np.asarray([s], dtype="<f8").tobytes())
            fh.write(np.asarray([m.shape[0]], dtype="<i8").tobytes())
            fh.write(m.astype("<c16").tobytes(order="C"))
    return path


def read_density_dump(path):
    data = Path(path).read_bytes()
    stamps, mats, pos = [], [], 0
    while pos < len(data):
        stamps.append(np.frombuffer(data, "<f8", 1, pos)[0])
        dim = int(np.frombuffer(data, "<i8", 1, pos + 8)[0])
        pos += 16
        mats.append(np.frombuffer(data, "<c16", dim * dim, pos).reshape(dim, dim).copy())
        pos += 16 * dim * dim
    return np.array(stamps), mats


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
