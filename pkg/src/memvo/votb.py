"""VOTB tensor blobs: a tiny self-describing binary array format.

Layout, all little endian:
  4 bytes  magic "VOTB"
  u32      version (1)
  u32      ndim
  ndim*u32 extents
  payload  row-major float64 values, prod(extents) of them

Round trips are bit exact: the payload is the raw float64 memory of a
C-contiguous array.
"""

import struct

import numpy as np

MAGIC = b"VOTB"
VERSION = 1


def write_votb(path, array):
    """Write a float64 ndarray to path in VOTB form."""
    if np.asarray(array).ndim == 0:
        # ascontiguousarray would silently promote scalars to shape (1,)
        raise ValueError("VOTB stores arrays with at least one axis")
    arr = np.ascontiguousarray(array, dtype=np.float64)
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    header += struct.pack("<%dI" % arr.ndim, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes("C"))


def read_votb(path):
    """Read a VOTB blob back into a float64 ndarray."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise ValueError("%s: truncated VOTB header" % path)
    if raw[:4] != MAGIC:
        raise ValueError("%s: bad magic %r" % (path, raw[:4]))
    version, ndim = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ValueError("%s: unsupported VOTB version %d" % (path, version))
    if ndim == 0:
        raise ValueError("%s: zero-dimensional blob" % path)
    need = 12 + 4 * ndim
    if len(raw) < need:
        raise ValueError("%s: truncated extents" % path)
    extents = struct.unpack("<%dI" % ndim, raw[12:need])
    count = 1
    for e in extents:
        if e == 0:
            raise ValueError("%s: zero extent" % path)
        count *= e
    payload = raw[need:]
    if len(payload) != 8 * count:
        raise ValueError("%s: payload is %d bytes, extents %s need %d"
                         % (path, len(payload), extents, 8 * count))
    flat = np.frombuffer(payload, dtype="<f8")
    return flat.reshape(extents).copy()
