"""File formats: encodings/points binaries, encodings CSV, PGM images, result CSV."""

import struct

import numpy as np

ENCODINGS_MAGIC = b"COLDENC1"
POINTS_MAGIC = b"COLDPTS1"

# 17 significant digits round-trips any float64 exactly.
FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    """Raised when an input file does not match its declared format."""


def write_encodings(path, means, variances):
    means = np.ascontiguousarray(means, dtype=np.float64)
    variances = np.ascontiguousarray(variances, dtype=np.float64)
    if means.shape != variances.shape or means.ndim != 2:
        raise ValueError("means and variances must be N x D arrays of equal shape")
    n, d = means.shape
    with open(path, "wb") as fh:
        fh.write(ENCODINGS_MAGIC)
        fh.write(struct.pack("<II", n, d))
        # interleave mu then var per record
        rec = np.concatenate([means, variances], axis=1)
        fh.write(rec.astype("<f8").tobytes())


def read_encodings(path):
    """Read an encodings file (binary or CSV); returns (means, variances)."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head == ENCODINGS_MAGIC:
            return _read_encodings_binary(fh, path)
    return _read_encodings_csv(path)


def _read_encodings_binary(fh, path):
    hdr = fh.read(8)
    if len(hdr) != 8:
        raise FormatError(f"{path}: truncated header")
    n, d = struct.unpack("<II", hdr)
    if n < 1 or d < 1:
        raise FormatError(f"{path}: invalid N={n}, D={d}")
    body = fh.read()
    expect = n * 2 * d * 8
    if len(body) != expect:
        raise FormatError(f"{path}: expected {expect} payload bytes, got {len(body)}")
    rec = np.frombuffer(body, dtype="<f8").reshape(n, 2 * d)
    return rec[:, :d].copy(), rec[:, d:].copy()


def _read_encodings_csv(path):
    with open(path, "r") as fh:
        header = fh.readline().strip()
    cols = header.split(",")
    d = sum(1 for c in cols if c.startswith("mu_"))
    if d == 0 or cols != [f"mu_{i}" for i in range(d)] + [f"var_{i}" for i in range(d)]:
        raise FormatError(f"{path}: not a COLDENC1 binary and header is not mu_0..var_{{D-1}}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2 * d:
        raise FormatError(f"{path}: expected {2 * d} columns")
    return data[:, :d].copy(), data[:, d:].copy()


def write_points(path, points):
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be an N x D array")
    n, d = points.shape
    with open(path, "wb") as fh:
        fh.write(POINTS_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(points.astype("<f8").tobytes())


def read_points(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head != POINTS_MAGIC:
            if head == ENCODINGS_MAGIC:
                raise FormatError(f"{path}: this is an encodings file, not a points file")
            raise FormatError(f"{path}: bad magic {head!r}")
        hdr = fh.read(8)
        if len(hdr) != 8:
            raise FormatError(f"{path}: truncated header")
        n, d = struct.unpack("<II", hdr)
        body = fh.read()
    if len(body) != n * d * 8:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).copy()


def read_pgm(path):
    """Read a binary PGM (P5). Returns (pixels, maxval) with pixels as float64."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise FormatError(f"{path}: truncated PGM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a P5 PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid maxval {maxval}")
    i += 1  # single whitespace after maxval
    raster = data[i:]
    if maxval < 256:
        pixels = np.frombuffer(raster, dtype=np.uint8, count=width * height)
    else:
        pixels = np.frombuffer(raster, dtype=">u2", count=width * height)
    return pixels.reshape(height, width).astype(np.float64), maxval


def write_pgm(path, pixels, maxval=255):
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    raster = np.rint(pixels).astype(np.uint8 if maxval < 256 else ">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(raster.tobytes())


def write_csv(path, header, rows):
    """Write rows of mixed values; floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)
