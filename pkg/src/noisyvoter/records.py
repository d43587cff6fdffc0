"""Experiment configs, result records, atomic file output and PNM rendering."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .lattice import LatticeWindow

SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"


def _fmt_q(q) -> str:
    return "inf" if q == math.inf else str(int(q))


def parse_q(text) -> float:
    if isinstance(text, (int, float)):
        return text
    t = str(text).strip().lower()
    if t in ("inf", "infinity", "infinite"):
        return math.inf
    return int(t)


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    return tuple(float(x) for x in text.split(",")) if text else ()


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; serialized as ``key=value`` lines."""

    command: str
    delta: float = 0.5
    epsilon: float = 0.5
    q: float = 2
    width: int = 64
    height: int = 64
    boundary: str = "periodic"
    seed: int = 0
    replicas: int = 1000
    depth: int = 10
    s: float = 0.0
    k: int = 0
    h: float = 1e-4
    threshold: float = 0.01
    iterations: int = 10
    init: str = "iid"
    test: str = ""
    exact: bool = False
    eps_grid: tuple = ()
    s_grid: tuple = ()
    out: str = ""
    format: str = "json"
    image: str = ""

    def emit(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "q":
                v = _fmt_q(v)
            elif isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        values: dict[str, Any] = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ValueError(f"bad config line: {raw!r}")
            values[key] = cls.convert(key, val.strip())
        if "command" not in values:
            raise ValueError("config needs a command")
        return cls(**values)

    @staticmethod
    def convert(key: str, val: str):
        kind = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[key]
        if key == "q":
            return parse_q(val)
        if kind == "bool":
            if val.lower() not in ("true", "false"):
                raise ValueError(f"{key} must be true or false")
            return val.lower() == "true"
        if kind == "int":
            return int(val)
        if kind == "float":
            return float(val)
        if kind == "tuple":
            return _parse_floats(val)
        return val

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["q"] = _fmt_q(self.q)
        d["eps_grid"] = list(self.eps_grid)
        d["s_grid"] = list(self.s_grid)
        return d


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


@dataclass
class ResultRecord:
    config: ExperimentConfig
    results: dict = field(default_factory=dict)
    exact: bool = False
    rows: list = field(default_factory=list)
    columns: tuple = ()

    def provenance(self) -> dict:
        return {"tool": "noisyvoter", "version": TOOL_VERSION,
                "seed": self.config.seed, "replicas": 0 if self.exact else self.config.replicas}

    def to_json(self) -> str:
        payload = {"schema_version": SCHEMA_VERSION, "config": self.config.as_dict(),
                   "provenance": self.provenance(), "exact": self.exact,
                   "results": self.results}
        if self.rows:
            payload["table"] = {"columns": list(self.columns), "rows": self.rows}
        return json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(_jsonable({"schema_version": SCHEMA_VERSION,
                                               "config": self.config.as_dict(),
                                               "provenance": self.provenance()}),
                                    sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        if self.rows:
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_csv_cell(v) for v in r])
        else:
            w.writerow(["key", "value"])
            for k in sorted(self.results):
                w.writerow([k, _csv_cell(self.results[k])])
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        raise ValueError(f"unknown format {fmt!r}")


def _csv_cell(v):
    v = _jsonable(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return v


def write_atomic(path: str, data: bytes | str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    if isinstance(data, str):
        data = data.encode()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# images


BACKGROUND = (255, 255, 255)


def default_palette(q: int) -> np.ndarray:
    """``q`` distinct colors, none equal to the background."""
    cols = []
    for j in range(q):
        hue = j / q
        r, g, b = _hsv(hue, 0.75, 0.85)
        cols.append((r, g, b))
    return np.array(cols, dtype=np.uint8)


def _hsv(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, qq, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    r, g, b = [(v, t, p), (qq, v, p), (p, v, t), (p, qq, v), (t, p, v), (v, p, qq)][i]
    return int(r * 255), int(g * 255), int(b * 255)


def _expand(values: np.ndarray, window: LatticeWindow, fill) -> tuple[np.ndarray, np.ndarray]:
    """Full-width raster and the mask of lattice pixels."""
    H = values.shape[0]
    full = np.full((H, window.width), fill, dtype=values.dtype)
    mask = np.zeros((H, window.width), dtype=bool)
    for i in range(H):
        cols = window.columns(i)
        full[i, cols] = values[i]
        mask[i, cols] = True
    return full, mask


def render_spacetime(values: np.ndarray, window: LatticeWindow, binary: bool = False,
                     palette: np.ndarray | None = None, q: float | None = None) -> bytes:
    """PNM image, one pixel per lattice site, off-lattice pixels in background.

    Binary rows give a grayscale P5 image (1 black, 0 white); colors give a
    P6 image through ``palette``.  Partition labels (``q`` infinite) are
    hashed into colors.
    """
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("nothing to render")
    H, W = values.shape[0], window.width
    if binary:
        full, mask = _expand(values.astype(np.uint8), window, 0)
        pix = np.where(mask & (full == 1), 0, 255).astype(np.uint8)
        return f"P5\n{W} {H}\n255\n".encode() + pix.tobytes()
    full, mask = _expand(values.astype(np.int64), window, 0)
    if q is not None and q == math.inf:
        h = (full * np.int64(2654435761)) & 0xFFFFFF
        rgb = np.stack([(h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF], axis=-1).astype(np.uint8)
        rgb[(rgb == BACKGROUND).all(axis=-1)] = (254, 254, 254)
    else:
        n = int(q) if q is not None else int(full.max()) + 1
        palette = default_palette(n) if palette is None else np.asarray(palette, dtype=np.uint8)
        if len(palette) < n or (len(values) and int(values.max()) >= len(palette)):
            raise ValueError(f"palette has {len(palette)} colors, need {n}")
        rgb = palette[full]
    rgb[~mask] = BACKGROUND
    return f"P6\n{W} {H}\n255\n".encode() + rgb.astype(np.uint8).tobytes()


def read_pnm(data: bytes) -> tuple[str, np.ndarray]:
    """Parse a P5/P6 image written by :func:`render_spacetime`."""
    magic, dims, maxval, rest = data.split(b"\n", 3)
    w, h = (int(x) for x in dims.split())
    if magic == b"P5":
        return "P5", np.frombuffer(rest, dtype=np.uint8).reshape(h, w)
    return magic.decode(), np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3)
