"""Reading and writing raw density frames (CSV and binary PGM)."""

import os

import numpy as np

from .measures import DiscreteMeasure, measure_from_density_grid


def read_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_csv(path, array):
    # repr precision so a reload reproduces the floats exactly
    np.savetxt(path, np.asarray(array, dtype=float), delimiter=",", fmt="%.17g")


def read_pgm(path):
    """Read an 8-bit binary (P5) PGM into a float array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(float)


def write_pgm(path, array):
    """Write ``array`` scaled to 0..255 so that its max maps to 255."""
    a = np.asarray(array, dtype=float)
    peak = a.max()
    img = np.zeros(a.shape, dtype=np.uint8) if peak <= 0 else np.rint(255 * a / peak).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        fh.write(img.tobytes())


def load_density(path):
    ext = os.path.splitext(path)[1].lower()
    raw = read_pgm(path) if ext == ".pgm" else read_csv(path)
    return measure_from_density_grid(raw)


def save_measure(path, mu: DiscreteMeasure):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        write_pgm(path, mu.weights)
    else:
        write_csv(path, mu.weights)
