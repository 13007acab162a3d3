"""Little-endian binary containers.

Three formats share the same primitives:

* ``3DGP`` point files: magic, u32 point count, then count x 6 float32
  values (x, y, z, r, g, b) row-major.
* ``3DGF`` feature matrices: magic, u32 rows, u32 dim, float32 row-major.
  Edge-feature files prefix every row with u32 source and u32 target ids.
* ``3DGC`` checkpoints are built from ``3DGF`` blocks (see ``projection``).
"""

import struct

import numpy as np

from .errors import ParseError

POINTS_MAGIC = b"3DGP"
FEATURES_MAGIC = b"3DGF"

_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


def _read_u32(buf, offset, what):
    if offset + 4 > len(buf):
        raise ParseError(f"truncated {what}", location=f"byte {offset}")
    return _U32.unpack_from(buf, offset)[0]


def _check_magic(buf, offset, magic):
    got = bytes(buf[offset:offset + 4])
    if got != magic:
        raise ParseError(f"bad magic {got!r}, expected {magic!r}", location=f"byte {offset}")


def encode_points(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 6:
        raise ValueError(f"points must have shape (m, 6), got {points.shape}")
    return POINTS_MAGIC + _U32.pack(points.shape[0]) + points.astype(_F32).tobytes()


def decode_points(buf):
    """Parse a ``3DGP`` buffer into an (m, 6) float64 array."""
    _check_magic(buf, 0, POINTS_MAGIC)
    m = _read_u32(buf, 4, "point count")
    need = 8 + 24 * m
    if len(buf) != need:
        raise ParseError(f"expected {need} bytes for {m} points, got {len(buf)}",
                         location=f"byte {min(len(buf), need)}")
    return np.frombuffer(buf, dtype=_F32, count=6 * m, offset=8).reshape(m, 6).astype(np.float64)


def write_points(path, points):
    with open(path, "wb") as fh:
        fh.write(encode_points(points))


def read_points(path):
    with open(path, "rb") as fh:
        return decode_points(fh.read())


def encode_block(matrix, pairs=None):
    """Encode one ``3DGF`` block; ``pairs`` (rows x 2 ints) makes it an edge block."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    rows, dim = matrix.shape
    head = FEATURES_MAGIC + _U32.pack(rows) + _U32.pack(dim)
    data = matrix.astype(_F32)
    if pairs is None:
        return head + data.tobytes()
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) != rows:
        raise ValueError("one (src, dst) pair per row required")
    rec = np.dtype([("src", "<u4"), ("dst", "<u4"), ("z", _F32, (dim,))])
    packed = np.empty(rows, dtype=rec)
    packed["src"] = pairs[:, 0]
    packed["dst"] = pairs[:, 1]
    packed["z"] = data
    return head + packed.tobytes()


def decode_block(buf, offset=0, edges=None):
    """Decode a ``3DGF`` block starting at ``offset``.

    ``edges=None`` infers the variant from the remaining byte count, which is
    only possible when the block is the last thing in the buffer.

    Returns ``(matrix, pairs_or_None, next_offset)``.
    """
    _check_magic(buf, offset, FEATURES_MAGIC)
    rows = _read_u32(buf, offset + 4, "row count")
    dim = _read_u32(buf, offset + 8, "dim")
    body = offset + 12
    plain_size = rows * dim * 4
    edge_size = rows * (8 + dim * 4)
    remaining = len(buf) - body
    if edges is None:
        if remaining == plain_size:
            edges = False
        elif remaining == edge_size:
            edges = True
        else:
            raise ParseError(f"feature block of {rows}x{dim} does not fit {remaining} bytes",
                             location=f"byte {body}")
    size = edge_size if edges else plain_size
    if remaining < size:
        raise ParseError(f"truncated feature block ({remaining} of {size} bytes)",
                         location=f"byte {len(buf)}")
    if not edges:
        mat = np.frombuffer(buf, dtype=_F32, count=rows * dim, offset=body)
        return mat.reshape(rows, dim).astype(np.float64), None, body + size
    rec = np.dtype([("src", "<u4"), ("dst", "<u4"), ("z", _F32, (dim,))])
    packed = np.frombuffer(buf, dtype=rec, count=rows, offset=body)
    pairs = np.stack([packed["src"], packed["dst"]], axis=1).astype(np.int64)
    mat = packed["z"].reshape(rows, dim).astype(np.float64)
    return mat, pairs, body + size


def write_features(path, matrix, pairs=None):
    with open(path, "wb") as fh:
        fh.write(encode_block(matrix, pairs))


def read_features(path, edges=None):
    """Read a ``3DGF`` file. Returns ``matrix`` or ``(matrix, pairs)`` for edge files."""
    with open(path, "rb") as fh:
        buf = fh.read()
    mat, pairs, end = decode_block(buf, 0, edges=edges)
    if end != len(buf):
        raise ParseError("trailing bytes after feature block", location=f"byte {end}")
    if pairs is None:
        return mat
    return mat, pairs


def read_edge_features(path):
    """Read an edge-feature file into a ``{(src, dst): vector}`` dict."""
    mat, pairs = read_features(path, edges=True)
    return {(int(s), int(d)): mat[i] for i, (s, d) in enumerate(pairs)}
