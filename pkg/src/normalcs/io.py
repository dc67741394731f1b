"""File formats: PGM images, raw float grids, PBM masks, measurement and graph dumps.

PGM/PBM cover interchange with standard tools; the NCS* formats are
little-endian binary dumps with fixed headers for lossless intermediate
storage, so reconstruction pipelines can be split across processes
without rounding drift.
"""

import struct

import numpy as np

from .graph import PatchGraph
from .sensing import Measurements, SamplingPlan

__all__ = [
    "write_pgm",
    "read_pgm",
    "write_raw",
    "read_raw",
    "write_mask",
    "read_mask",
    "write_measurements",
    "read_measurements",
    "write_graph",
    "read_graph",
]

_RAW_MAGIC = b"NCSF"
_MEAS_MAGIC = b"NCSM"
_GRAPH_MAGIC = b"NCSG"


def _read_pnm_header(data, expected):
    if data[:2] != expected:
        raise ValueError("not a %s file" % expected.decode())
    fields = []
    pos = 2
    while len(fields) < (2 if expected == b"P4" else 3):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    return fields, pos + 1


def write_pgm(path, image, bits=8):
    """Store an image as binary PGM, linearly scaling [0, 1] to the int range.

    Values outside [0, 1] are clipped.  16-bit samples are written
    big-endian as the format requires.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    u = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    maxval = (1 << bits) - 1
    q = np.rint(u * maxval).astype(">u2" if bits == 16 else "u1")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (u.shape[1], u.shape[0], maxval))
        fh.write(q.tobytes())


def read_pgm(path):
    """Load a binary PGM into floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    (width, height, maxval), offset = _read_pnm_header(data, b"P5")
    dtype = ">u2" if maxval > 255 else "u1"
    raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    return raw.reshape(height, width).astype(np.float64) / maxval


def write_raw(path, image):
    """Lossless image dump: 16-byte header then row-major little-endian f64."""
    u = np.asarray(image, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_RAW_MAGIC)
        fh.write(struct.pack("<III", u.shape[1], u.shape[0], 0))
        fh.write(u.astype("<f8").tobytes())


def read_raw(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _RAW_MAGIC:
        raise ValueError("not a raw float grid file")
    width, height, _ = struct.unpack("<III", data[4:16])
    values = np.frombuffer(data, dtype="<f8", count=width * height, offset=16)
    return values.reshape(height, width).copy()


def write_mask(path, plan):
    """Store a sampling mask as PBM (P4); sampled cells are black (1)."""
    mask = plan.mask
    with open(path, "wb") as fh:
        fh.write(b"P4\n%d %d\n" % (mask.shape[1], mask.shape[0]))
        fh.write(np.packbits(mask, axis=1).tobytes())


def read_mask(path, line_count=0, rng_seed=0):
    """Load a PBM mask back into a SamplingPlan.

    The file format does not carry the generator's metadata, so
    line_count and rng_seed can be re-attached by the caller.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    (width, height), offset = _read_pnm_header(data, b"P4")
    row_bytes = (width + 7) // 8
    raw = np.frombuffer(data, dtype="u1", count=row_bytes * height, offset=offset)
    bits = np.unpackbits(raw.reshape(height, row_bytes), axis=1)[:, :width]
    return SamplingPlan(mask=bits.astype(bool), line_count=line_count, rng_seed=rng_seed)


def write_measurements(path, measurements):
    """Store measured coefficients: header then interleaved re/im f64 pairs."""
    values = measurements.values
    with open(path, "wb") as fh:
        fh.write(_MEAS_MAGIC)
        fh.write(
            struct.pack(
                "<IdQ",
                values.size,
                measurements.noise_sigma,
                measurements.plan.rng_seed,
            )
        )
        inter = np.empty(2 * values.size)
        inter[0::2] = values.real
        inter[1::2] = values.imag
        fh.write(inter.astype("<f8").tobytes())


def read_measurements(path, plan):
    """Load measurements against the plan they were taken with."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MEAS_MAGIC:
        raise ValueError("not a measurements file")
    m, noise_sigma, seed = struct.unpack("<IdQ", data[4:24])
    if m != plan.sample_count:
        raise ValueError("measurement count %d does not match plan (%d)" % (m, plan.sample_count))
    if seed != plan.rng_seed:
        raise ValueError("plan seed does not match the recorded seed")
    inter = np.frombuffer(data, dtype="<f8", count=2 * m, offset=24)
    return Measurements(values=inter[0::2] + 1j * inter[1::2], plan=plan, noise_sigma=noise_sigma)


def write_graph(path, graph):
    """Store a graph's CSR arrays: offsets u64, neighbors u32, weights f64."""
    with open(path, "wb") as fh:
        fh.write(_GRAPH_MAGIC)
        fh.write(struct.pack("<IQ", graph.node_count, graph.edge_count))
        fh.write(graph.offsets.astype("<u8").tobytes())
        fh.write(graph.neighbors.astype("<u4").tobytes())
        fh.write(graph.weights.astype("<f8").tobytes())


def read_graph(path, width, height):
    """Load a graph dump; the grid shape is supplied by the caller."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _GRAPH_MAGIC:
        raise ValueError("not a graph file")
    n, edge_count = struct.unpack("<IQ", data[4:16])
    if n != width * height:
        raise ValueError("node count %d does not match %dx%d" % (n, width, height))
    pos = 16
    offsets = np.frombuffer(data, dtype="<u8", count=n + 1, offset=pos).astype(np.int64)
    pos += 8 * (n + 1)
    neighbors = np.frombuffer(data, dtype="<u4", count=edge_count, offset=pos).astype(np.int64)
    pos += 4 * edge_count
    weights = np.frombuffer(data, dtype="<f8", count=edge_count, offset=pos).copy()
    return PatchGraph(width=width, height=height, offsets=offsets, neighbors=neighbors, weights=weights)
