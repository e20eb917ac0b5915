"""Artifact formats: grid binaries, 16-bit PGM heatmaps and CSV tables.

Grid binary layout: ASCII ``key=value`` header lines, a line ``end_header``,
then the grid as little-endian float64 in row-major (C) order, so
``values[i, j]`` is at offset ``8 * (i * ncols + j)``.
"""

import csv
import hashlib
import os
from pathlib import Path
import subprocess

import numpy as np

MAGIC = "cgfflab-grid 1"


def fmt(v):
    """Text form for CSV/header values; floats keep 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(fmt(x) for x in v)
    return str(v)


def config_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_tag():
    """``git describe`` of the source tree when available, else the package version."""
    from . import __version__

    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--tags", "--dirty"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_grid(path, values, header):
    values = np.ascontiguousarray(values, dtype="<f8")
    lines = [MAGIC, f"shape={values.shape[0]} {values.shape[1]}"]
    for k, v in header.items():
        s = fmt(v)
        if "\n" in s or "=" in str(k):
            raise ValueError(f"header entry {k!r} cannot be stored")
        lines.append(f"{k}={s}")
    lines.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(values.tobytes(order="C"))


def read_grid(path):
    """Return ``(header, values)``; header values are strings."""
    with open(path, "rb") as f:
        data = f.read()
    marker = b"\nend_header\n"
    cut = data.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: missing end_header")
    lines = data[:cut].decode("ascii").split("\n")
    if lines[0] != MAGIC:
        raise ValueError(f"{path}: not a grid file")
    header = dict(line.split("=", 1) for line in lines[1:])
    shape = tuple(int(s) for s in header["shape"].split())
    values = np.frombuffer(data[cut + len(marker) :], dtype="<f8")
    if values.size != shape[0] * shape[1]:
        raise ValueError(f"{path}: payload has {values.size} values, header says {shape}")
    return header, values.reshape(shape).astype(float)


def field_header(sample):
    m = sample.model
    return {
        "model": m.kind,
        "sides": m.sides,
        "band_lo": sample.band[0],
        "band_hi": sample.band[1],
        "seed": sample.seed,
        "resolution": sample.resolution,
    }


def write_field(path, sample, extra=None):
    header = field_header(sample)
    header.update(extra or {})
    write_grid(path, sample.values, header)


def write_pgm(path, values, comment=None):
    """16-bit binary PGM; value ``v`` maps to ``round((v - lo) / (hi - lo) * 65535)``.

    Image row ``i`` is ``values[i, :]``.  The affine map is stored in a comment
    so pixel values can be turned back into field values.
    """
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    pix = np.rint((v - lo) / span * 65535).astype(">u2")
    rows, cols = v.shape
    head = ["P5", f"# value = {lo:.17g} + {span:.17g} * pixel / 65535"]
    if comment:
        head += [f"# {line}" for line in comment.splitlines()]
    head += [f"{cols} {rows}", "65535"]
    with open(path, "wb") as f:
        f.write(("\n".join(head) + "\n").encode("ascii"))
        f.write(pix.tobytes())


def read_pgm(path):
    """Return ``(pixels, (lo, span))`` for files written by ``write_pgm``."""
    with open(path, "rb") as f:
        data = f.read()
    pos = 0
    tokens, comments = [], []
    while len(tokens) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            comments.append(line)
        else:
            tokens += line.split()
    cols, rows = int(tokens[1]), int(tokens[2])
    pix = np.frombuffer(data[pos:], dtype=">u2").reshape(rows, cols)
    parts = comments[0].split()
    return pix.astype(np.int64), (float(parts[3]), float(parts[5]))


def write_csv(path, header, rows):
    """RFC-4180 CSV (CRLF line ends, minimal quoting)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


def append_csv_row(path, row):
    """Append one dict row, writing the header when the file is new or empty."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(list(row))
        w.writerow([fmt(v) for v in row.values()])
