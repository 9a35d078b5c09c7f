"""
Binary 8-bit PGM ("P5", maxval 255) images.
"""

import re

import numpy as np

from cqcnn_alzheimer.cqException import BadFormat, ShapeMismatch

# magic, width, height, maxval, then exactly one whitespace byte before the raster
_header_re = re.compile(br'^(P\d)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s')


def quantize(image):
    """
    Round an image to the 1/255 grid used by the PGM raster
    """

    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0) / 255.0


def write_pgm(image):
    """
    Serialize an image with pixels in [0, 1] (rows = height, columns = width)

    :return: the PGM bytes
    """

    image = np.asarray(image, dtype=np.float64)

    if image.ndim != 2:
        raise ShapeMismatch("Expected a 2D image, got shape %s" % (image.shape,))

    if np.any(image < 0) or np.any(image > 1) or not np.all(np.isfinite(image)):
        raise BadFormat("Image pixels must lie in [0, 1]")

    height, width = image.shape

    raster = np.round(image * 255.0).astype(np.uint8)

    return ("P5\n%d %d\n255\n" % (width, height)).encode('ascii') + raster.tobytes()


def read_pgm(raw):
    """
    Parse PGM bytes into an image with pixels in [0, 1]
    """

    match = _header_re.match(raw)

    if match is None:
        raise BadFormat("Not a PGM file")

    magic, width, height, maxval = match.groups()

    if magic != b'P5':
        raise BadFormat("Only binary PGM (P5) is supported, got %s" % magic.decode('ascii'))

    if int(maxval) != 255:
        raise BadFormat("Only maxval 255 is supported, got %s" % int(maxval))

    width = int(width)
    height = int(height)

    raster = raw[match.end():]

    if len(raster) < width * height:
        raise BadFormat("Truncated raster: expected %s bytes, got %s" % (width * height, len(raster)))

    pixels = np.frombuffer(raster, dtype=np.uint8, count=width * height)

    return pixels.reshape((height, width)).astype(np.float64) / 255.0


def save_pgm(filename, image):

    with open(filename, 'wb') as f:

        f.write(write_pgm(image))


def load_pgm(filename):

    with open(filename, 'rb') as f:

        raw = f.read()

    try:

        return read_pgm(raw)

    except BadFormat as e:

        raise BadFormat("%s: %s" % (filename, e.message))
