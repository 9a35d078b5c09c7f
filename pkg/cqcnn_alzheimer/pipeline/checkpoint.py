"""
Checkpoint files: a flat map of named float32 tensors.

Layout (all integers little-endian, no padding):

    b"CQCK" | u32 version (1) | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 ndim | ndim x u32 dims | prod(dims) x f32 values
"""

import collections

import numpy as np

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import BadMagic, BadVersion, Truncated, DuplicateName, BadFormat

_logger = myLogging.log.getLogger("pipeline.checkpoint")

MAGIC = b"CQCK"
VERSION = 1


def _items(tensors):

    # Accept a mapping or a sequence of (name, array) pairs (the latter can carry duplicates)
    return list(tensors.items()) if hasattr(tensors, 'items') else list(tensors)


def encode_checkpoint(tensors):

    items = _items(tensors)

    chunks = [MAGIC, np.array([VERSION, len(items)], dtype='<u4').tobytes()]

    seen = set()

    for name, value in items:

        if name in seen:
            raise DuplicateName("Tensor name %s appears more than once" % name)

        seen.add(name)

        encoded_name = name.encode('utf-8')

        value = np.asarray(value)

        chunks.append(np.array([len(encoded_name)], dtype='<u2').tobytes())
        chunks.append(encoded_name)
        chunks.append(np.array([value.ndim], dtype='u1').tobytes())
        chunks.append(np.array(value.shape, dtype='<u4').tobytes())
        chunks.append(np.ascontiguousarray(value, dtype='<f4').tobytes())

    return b"".join(chunks)


class _Reader(object):

    def __init__(self, raw):

        self._raw = raw
        self._offset = 0

    def take(self, dtype, count, what):

        dtype = np.dtype(dtype)

        size = dtype.itemsize * count

        if self._offset + size > len(self._raw):
            raise Truncated("Checkpoint ends inside %s (offset %s, need %s bytes, %s left)" % (
                what, self._offset, size, len(self._raw) - self._offset))

        values = np.frombuffer(self._raw, dtype=dtype, count=count, offset=self._offset)

        self._offset += size

        return values

    @property
    def exhausted(self):

        return self._offset == len(self._raw)


def decode_checkpoint(raw):

    if len(raw) < 4:
        raise Truncated("Checkpoint shorter than its magic number")

    if raw[:4] != MAGIC:
        raise BadMagic("Not a checkpoint (magic %r)" % raw[:4])

    reader = _Reader(raw)
    reader.take('u1', 4, "the magic number")

    version, count = [int(v) for v in reader.take('<u4', 2, "the header")]

    if version != VERSION:
        raise BadVersion("Unsupported checkpoint version %s (expected %s)" % (version, VERSION))

    tensors = collections.OrderedDict()

    for k in range(count):

        name_length = int(reader.take('<u2', 1, "a name length")[0])

        raw_name = reader.take('u1', name_length, "a tensor name").tobytes()

        try:

            name = raw_name.decode('utf-8')

        except UnicodeDecodeError:

            raise BadFormat("Tensor %s has a name that is not valid UTF-8: %r" % (k, raw_name))

        if name in tensors:
            raise DuplicateName("Tensor name %s appears more than once" % name)

        ndim = int(reader.take('u1', 1, "the rank of %s" % name)[0])

        shape = tuple(int(d) for d in reader.take('<u4', ndim, "the shape of %s" % name))

        values = reader.take('<f4', int(np.prod(shape)), "the values of %s" % name)

        tensors[name] = values.reshape(shape).astype(np.float32)

    if not reader.exhausted:
        _logger.warning("Ignoring trailing bytes after %s tensors" % count)

    return tensors


def save_checkpoint(path, tensors):

    raw = encode_checkpoint(tensors)

    with open(path, 'wb') as f:

        f.write(raw)

    _logger.info("Saved %s tensors to %s" % (len(_items(tensors)), path))

    return raw


def load_checkpoint(path):

    with open(path, 'rb') as f:

        raw = f.read()

    try:

        return decode_checkpoint(raw)

    except (BadMagic, BadVersion, Truncated, DuplicateName, BadFormat) as e:

        raise type(e)("%s: %s" % (path, e.message))
