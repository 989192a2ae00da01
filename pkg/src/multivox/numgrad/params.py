"""Named parameter collections and their binary checkpoint format.

Checkpoint layout (little-endian)::

    magic     8 bytes  b"MVXCKPT\\0"
    version   uint32   (currently 1)
    count     uint32
    count x { name_len uint32, name utf-8, rank uint32, dims uint64 x rank,
              values float64 x prod(dims) }
"""

import struct

import numpy as np

from ..errors import CheckpointFormatError, CheckpointIncompatible, IoFailure, ShapeMismatch
from .tensor import Tensor

MAGIC = b"MVXCKPT\0"
FORMAT_VERSION = 1


class ParamSet:
    """Ordered name -> Tensor mapping with fixed shapes.

    Entries added with ``trainable=False`` (feature statistics and the like) are
    persisted but skipped by the optimizer.
    """

    def __init__(self, tag=""):
        self.tag = tag
        self._entries = {}
        self._fixed = set()

    def add(self, name, value, trainable=True):
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self._entries[name] = t
        if not trainable:
            self._fixed.add(name)
        return t

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def trainable(self):
        return [(k, t) for k, t in self._entries.items() if k not in self._fixed]

    def is_trainable(self, name):
        return name not in self._fixed

    def set_value(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        t = self._entries[name]
        if value.shape != t.shape:
            raise ShapeMismatch(f"{name}: shape {t.shape} is fixed, got {value.shape}")
        t.data = value.copy()

    def signature(self):
        return tuple((k, t.shape) for k, t in self._entries.items())

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def grads(self):
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self.trainable()}

    def state(self):
        return {k: t.data.copy() for k, t in self._entries.items()}

    def load_state(self, other):
        """Copy values from another ParamSet (or dict) with an identical shape signature."""
        values = dict(other.items()) if isinstance(other, ParamSet) else dict(other)
        mine = dict(self.signature())
        theirs = {k: np.shape(v.data if isinstance(v, Tensor) else v) for k, v in values.items()}
        if mine != theirs:
            missing = sorted(set(mine) - set(theirs))
            extra = sorted(set(theirs) - set(mine))
            wrong = sorted(k for k in set(mine) & set(theirs) if mine[k] != theirs[k])
            raise CheckpointIncompatible(
                f"{self.tag or 'params'}: signature mismatch (missing={missing[:3]}, "
                f"unexpected={extra[:3]}, wrong_shape={wrong[:3]})"
            )
        for k, v in values.items():
            self.set_value(k, v.data if isinstance(v, Tensor) else v)


def save_checkpoint(params, path):
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, tag=""):
    """Read a checkpoint into a new ParamSet (every entry trainable)."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointIncompatible(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    params = ParamSet(tag)
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q")
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims)
        params.add(name, values)
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{path}: trailing bytes after {count} entries")
    return params


def uniform_init(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
