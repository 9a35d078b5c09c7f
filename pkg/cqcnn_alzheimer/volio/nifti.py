"""
Reader for NIfTI-1 volumes (single file "n+1" and detached "ni1" header/image pairs).

Only 3D scalar volumes stored as signed 16-bit integers or 32-bit floats are supported. Gzip, NIfTI-2 and
orientation handling are out of scope.
"""

import os
import collections

import numpy as np

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import BadMagic, UnsupportedDatatype, Truncated, BadRank

_logger = myLogging.log.getLogger("volio.nifti")

HEADER_SIZE = 348

# Standard NIfTI-1 header layout (348 bytes), little-endian form
header_dtd = [
    ('sizeof_hdr', 'i4'),  # 0
    ('data_type', 'S10'),  # 4
    ('db_name', 'S18'),  # 14
    ('extents', 'i4'),  # 32
    ('session_error', 'i2'),  # 36
    ('regular', 'S1'),  # 38
    ('dim_info', 'u1'),  # 39
    ('dim', 'i2', (8,)),  # 40
    ('intent_p1', 'f4'),  # 56
    ('intent_p2', 'f4'),  # 60
    ('intent_p3', 'f4'),  # 64
    ('intent_code', 'i2'),  # 68
    ('datatype', 'i2'),  # 70
    ('bitpix', 'i2'),  # 72
    ('slice_start', 'i2'),  # 74
    ('pixdim', 'f4', (8,)),  # 76
    ('vox_offset', 'f4'),  # 108
    ('scl_slope', 'f4'),  # 112
    ('scl_inter', 'f4'),  # 116
    ('slice_end', 'i2'),  # 120
    ('slice_code', 'u1'),  # 122
    ('xyzt_units', 'u1'),  # 123
    ('cal_max', 'f4'),  # 124
    ('cal_min', 'f4'),  # 128
    ('slice_duration', 'f4'),  # 132
    ('toffset', 'f4'),  # 136
    ('glmax', 'i4'),  # 140
    ('glmin', 'i4'),  # 144
    ('descrip', 'S80'),  # 148
    ('aux_file', 'S24'),  # 228
    ('qform_code', 'i2'),  # 252
    ('sform_code', 'i2'),  # 254
    ('quatern_b', 'f4'),  # 256
    ('quatern_c', 'f4'),  # 260
    ('quatern_d', 'f4'),  # 264
    ('qoffset_x', 'f4'),  # 268
    ('qoffset_y', 'f4'),  # 272
    ('qoffset_z', 'f4'),  # 276
    ('srow_x', 'f4', (4,)),  # 280
    ('srow_y', 'f4', (4,)),  # 296
    ('srow_z', 'f4', (4,)),  # 312
    ('intent_name', 'S16'),  # 328
    ('magic', 'S4'),  # 344
]

header_dtype = np.dtype(header_dtd).newbyteorder('<')

assert header_dtype.itemsize == HEADER_SIZE

# numpy strips the trailing NUL of "n+1\0" when reading an S4 field
SINGLE_FILE_MAGIC = b'n+1'
PAIR_MAGIC = b'ni1'

# datatype code -> (numpy type without byte order, bits per voxel)
_supported_datatypes = {
    4: ('i2', 16),
    16: ('f4', 32),
}

NiftiHeader = collections.namedtuple("NiftiHeader", ["sizeof_hdr", "dim", "datatype", "bitpix", "vox_offset",
                                                     "scl_slope", "scl_inter", "magic"])


class Volume3D(object):
    """
    A 3D scalar field. Voxel (x, y, z) lives at position x + nx * (y + ny * z) of the flat voxel sequence, so
    the underlying array is indexed as [z, y, x].
    """

    def __init__(self, nx, ny, nz, voxels):

        voxels = np.asarray(voxels, dtype=np.float64)

        assert voxels.size == nx * ny * nz, "Voxel count %s does not match %sx%sx%s" % (voxels.size, nx, ny, nz)
        assert np.all(np.isfinite(voxels)), "Volume contains non-finite voxels"

        self.nx = int(nx)
        self.ny = int(ny)
        self.nz = int(nz)

        self.array = voxels.reshape((self.nz, self.ny, self.nx))

    @property
    def voxels(self):

        return self.array.ravel()

    @classmethod
    def from_function(cls, nx, ny, nz, function):
        """
        Build a volume whose voxel (x, y, z) is function(x, y, z) (used to build fixtures)
        """

        z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing='ij')

        return cls(nx, ny, nz, function(x, y, z))


def _guess_byte_order(raw):

    little = np.frombuffer(raw, dtype='<i4', count=1)[0]

    if little == HEADER_SIZE:
        return '<'

    big = np.frombuffer(raw, dtype='>i4', count=1)[0]

    if big == HEADER_SIZE:
        return '>'

    raise BadMagic("sizeof_hdr is neither 348 little-endian nor big-endian (read %s)" % little)


def parse_header(raw):
    """
    Decode the 348-byte header at the start of raw.

    :param raw: bytes holding at least the header
    :return: (NiftiHeader, byte order character)
    """

    if len(raw) < HEADER_SIZE:
        raise Truncated("NIfTI header needs %s bytes, got %s" % (HEADER_SIZE, len(raw)))

    byte_order = _guess_byte_order(raw)

    hdr = np.frombuffer(raw, dtype=header_dtype.newbyteorder(byte_order), count=1)[0]

    magic = bytes(hdr['magic'])

    if magic not in (SINGLE_FILE_MAGIC, PAIR_MAGIC):
        raise BadMagic("Unrecognized NIfTI magic %r" % raw[344:348])

    header = NiftiHeader(sizeof_hdr=int(hdr['sizeof_hdr']),
                         dim=[int(d) for d in hdr['dim']],
                         datatype=int(hdr['datatype']),
                         bitpix=int(hdr['bitpix']),
                         vox_offset=float(hdr['vox_offset']),
                         scl_slope=float(hdr['scl_slope']),
                         scl_inter=float(hdr['scl_inter']),
                         magic=magic)

    if header.datatype not in _supported_datatypes:
        raise UnsupportedDatatype("Datatype code %s is not supported (only 4 and 16)" % header.datatype)

    if header.bitpix != _supported_datatypes[header.datatype][1]:
        raise UnsupportedDatatype("bitpix %s is inconsistent with datatype %s" % (header.bitpix, header.datatype))

    rank = header.dim[0]

    if rank < 3:
        raise BadRank("dim[0] = %s, a 3D volume is required" % rank)

    if rank > 7:
        raise BadRank("dim[0] = %s is not a valid NIfTI rank" % rank)

    if rank > 3 and any(d > 1 for d in header.dim[4:rank + 1]):
        raise BadRank("Only 3D volumes are supported (dim = %s)" % header.dim)

    return header, byte_order


def parse_nifti(raw, image_bytes=None):
    """
    Parse a NIfTI-1 payload.

    :param raw: the header bytes, followed by the voxel data for single-file ("n+1") volumes
    :param image_bytes: for detached ("ni1") volumes, the content of the image file
    :return: (NiftiHeader, Volume3D)
    """

    header, byte_order = parse_header(raw)

    nx, ny, nz = header.dim[1:4]

    if min(nx, ny, nz) < 1:
        raise BadRank("Non-positive volume dimensions %s" % header.dim[1:4])

    if header.magic == PAIR_MAGIC:

        if image_bytes is None:
            raise Truncated("Detached (ni1) header given without its image data")

        data = image_bytes

    else:

        data = raw

    offset = int(header.vox_offset)
    n_voxels = nx * ny * nz
    needed = offset + n_voxels * header.bitpix // 8

    if len(data) < needed:
        raise Truncated("Voxel data needs %s bytes, got %s" % (needed, len(data)))

    voxel_type = np.dtype(byte_order + _supported_datatypes[header.datatype][0])

    voxels = np.frombuffer(data, dtype=voxel_type, count=n_voxels, offset=offset).astype(np.float64)

    if header.scl_slope != 0:

        voxels = header.scl_slope * voxels + header.scl_inter

    _logger.debug("Parsed NIfTI volume %sx%sx%s (datatype %s, byte order %s)" % (nx, ny, nz, header.datatype,
                                                                                byte_order))

    return header, Volume3D(nx, ny, nz, voxels)


def read_nifti_file(filename):
    """
    Read a .nii file, or a .hdr/.img pair given either of the two names
    """

    root, ext = os.path.splitext(filename)

    if ext.lower() in ('.hdr', '.img'):

        with open(root + '.hdr', 'rb') as f:
            raw = f.read()

        with open(root + '.img', 'rb') as f:
            image_bytes = f.read()

        return parse_nifti(raw, image_bytes)

    with open(filename, 'rb') as f:
        raw = f.read()

    return parse_nifti(raw)


def build_nifti_bytes(volume, datatype=16, scl_slope=0.0, scl_inter=0.0, byte_order='<', magic=SINGLE_FILE_MAGIC,
                      raw_voxels=None):
    """
    Serialize a volume as a single-file NIfTI-1 payload (vox_offset 352). Used to write fixtures and test data.

    :param raw_voxels: stored values to write instead of the volume's voxels (e.g. unscaled integers)
    """

    hdr = np.zeros((), dtype=header_dtype.newbyteorder(byte_order))

    hdr['sizeof_hdr'] = HEADER_SIZE
    hdr['dim'] = [3, volume.nx, volume.ny, volume.nz, 1, 1, 1, 1]
    hdr['datatype'] = datatype
    hdr['bitpix'] = _supported_datatypes[datatype][1]
    hdr['pixdim'] = [1.0] * 8
    hdr['vox_offset'] = 352.0 if magic == SINGLE_FILE_MAGIC else 0.0
    hdr['scl_slope'] = scl_slope
    hdr['scl_inter'] = scl_inter
    hdr['magic'] = magic + b'\x00'

    values = volume.voxels if raw_voxels is None else np.asarray(raw_voxels).ravel()
    voxel_type = np.dtype(byte_order + _supported_datatypes[datatype][0])
    data = values.astype(voxel_type).tobytes()

    if magic == SINGLE_FILE_MAGIC:

        # 4 extension bytes (all zero: no extensions) pad the header to vox_offset
        return hdr.tobytes() + b'\x00' * 4 + data

    return hdr.tobytes(), data
