"""File formats: binary fields, CSV, and 8-bit PGM images.

Binary field layout: one ASCII header line "N W h count\n" (dimension, box
half-width, spacing, cell count) followed by count little-endian float64
values, the full grid flattened in C order with NaN at obstacle cells.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = [
    "write_field_binary",
    "read_field_binary",
    "write_field_csv",
    "write_pgm",
    "write_mask_pgm",
    "render_to_pgm",
]


def write_field_binary(path, domain, values):
    """Header "N W h count" plus the per-axis shape, then raw float64."""
    vals = np.where(domain.active, values, np.nan).astype("<f8")
    shape_tokens = " ".join(str(s) for s in domain.shape)
    header = (
        f"{domain.dimension} {domain.box_half_width!r} "
        f"{domain.spacing!r} {vals.size} {shape_tokens}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vals.tobytes())


def read_field_binary(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) < 4:
            raise ConfigError(f"malformed field header in {path}")
        dim, half_width, spacing, count = (
            int(header[0]), float(header[1]), float(header[2]), int(header[3])
        )
        shape = tuple(int(tok) for tok in header[4:]) or None
        data = np.frombuffer(fh.read(8 * count), dtype="<f8")
        if data.size != count:
            raise ConfigError(f"truncated field file {path}")
    meta = {"dimension": dim, "box_half_width": half_width,
            "spacing": spacing, "count": count, "shape": shape}
    return meta, data


def write_field_csv(path, domain, values):
    mesh = np.meshgrid(*domain.axes, indexing="ij")
    cols = [m.ravel() for m in mesh]
    vals = np.where(domain.active, values, np.nan).ravel()
    names = ",".join(f"x{d + 1}" for d in range(domain.dimension))
    with open(path, "w") as fh:
        fh.write(f"{names},value\n")
        for row in zip(*cols, vals):
            coords = ",".join(repr(float(c)) for c in row[:-1])
            fh.write(f"{coords},{row[-1]!r}\n")


def write_pgm(path, byte_array):
    arr = np.asarray(byte_array)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ConfigError("PGM writer expects a 2-d uint8 array")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _to_bytes(values, lo, hi, inactive=None):
    span = hi - lo
    if span <= 0:
        span = 1.0
    scaled = np.clip((values - lo) / span, 0.0, 1.0)
    out = np.rint(scaled * 255.0).astype(np.uint8)
    if inactive is not None:
        out[inactive] = 0
    return out


def write_mask_pgm(path, domain):
    """0 at obstacle cells, 255 at active cells."""
    write_pgm(path, np.where(domain.active, 255, 0).astype(np.uint8))


def render_to_pgm(path, values, lo=None, hi=None, inactive_mask=None):
    """Affine map of a 2-d value array onto [0, 255]; NaNs render as 0."""
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 2:
        raise ConfigError("renderer expects a 2-d field")
    bad = ~np.isfinite(vals)
    work = np.where(bad, 0.0, vals)
    finite = vals[~bad]
    if lo is None:
        lo = float(np.min(finite)) if finite.size else 0.0
    if hi is None:
        hi = float(np.max(finite)) if finite.size else 1.0
    dead = bad if inactive_mask is None else (bad | inactive_mask)
    write_pgm(path, _to_bytes(work, lo, hi, inactive=dead))
