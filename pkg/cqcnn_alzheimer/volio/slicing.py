import collections
import math

import numpy as np
import scipy.ndimage

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import InvalidRequest, EmptyPlan, IndexOutOfRange, ShapeMismatch

_logger = myLogging.log.getLogger("volio.slicing")

AXIAL = 'axial'
CORONAL = 'coronal'
SAGITTAL = 'sagittal'

PLANES = (AXIAL, CORONAL, SAGITTAL)


class SlicePlan(collections.namedtuple("SlicePlan", ["plane", "m", "n", "i", "k1", "k2", "n_slices"])):
    """
    Extraction schedule for one anatomical plane: keep every i-th slice of the m available, then drop
    k1 strided positions at the start and k2 at the end.
    """

    __slots__ = ()

    @property
    def indices(self):

        return [(self.k1 + j) * self.i for j in range(self.n_slices)]


def compute_interval(m, n):
    """
    Interval between consecutive slices when n slices are requested out of m
    """

    if n < 1 or n > m:
        raise InvalidRequest("Cannot extract %s slices out of %s" % (n, m))

    return m // n


def plan_slices(plane, m, n, k1, k2):

    if plane not in PLANES:
        raise InvalidRequest("Unknown plane %s" % plane)

    if k1 < 0 or k2 < 0:
        raise InvalidRequest("Exclusion counts must be non-negative (k1=%s, k2=%s)" % (k1, k2))

    i = compute_interval(m, n)

    available = int(math.ceil(m / float(i)))

    if available <= k1 + k2:
        raise EmptyPlan("Excluding %s+%s slices leaves nothing out of %s strided positions" % (k1, k2, available))

    return SlicePlan(plane=plane, m=m, n=n, i=i, k1=k1, k2=k2, n_slices=available - (k1 + k2))


def plane_extent(volume, plane):
    """
    Number of slices available in a plane: axial moves along z, coronal along x, sagittal along y
    """

    return {AXIAL: volume.nz, CORONAL: volume.nx, SAGITTAL: volume.ny}[plane]


def normalize(pixels):
    """
    Min-max normalization to [0, 1]. Constant inputs map to all zeros.
    """

    pixels = np.asarray(pixels, dtype=np.float64)

    lo = pixels.min()
    hi = pixels.max()

    if hi <= lo:
        return np.zeros_like(pixels)

    return (pixels - lo) / (hi - lo)


def extract_slice(volume, plane, index):
    """
    Return the normalized cross-section of the volume at the given index.

    The first named axis of the plane is the image width, the second its height: axial images are
    (rows=y, cols=x), coronal (rows=z, cols=y), sagittal (rows=x, cols=z).
    """

    extent = plane_extent(volume, plane)

    if not 0 <= index < extent:
        raise IndexOutOfRange("Slice %s is outside the %s extent (0..%s)" % (index, plane, extent - 1))

    # volume.array is indexed [z, y, x]
    if plane == AXIAL:

        section = volume.array[index, :, :]

    elif plane == CORONAL:

        section = volume.array[:, :, index]

    else:

        section = volume.array[:, index, :].T

    return normalize(section)


def slice_volume(volume, plan):
    """
    Generator over (index, image) for every slice selected by the plan
    """

    extent = plane_extent(volume, plan.plane)

    assert plan.m == extent, "Plan built for %s slices, volume has %s in the %s plane" % (plan.m, extent,
                                                                                          plan.plane)

    for index in plan.indices:

        yield index, extract_slice(volume, plan.plane, index)


def resize_bilinear(image, width, height):
    """
    Bilinear resampling with corner-aligned sampling: the corners of the output coincide with the corners of
    the input. Output values are clamped to [0, 1].
    """

    if width < 1 or height < 1:
        raise InvalidRequest("Target size must be positive (got %sx%s)" % (width, height))

    image = np.asarray(image, dtype=np.float64)

    if image.ndim != 2:
        raise ShapeMismatch("Expected a 2D image, got shape %s" % (image.shape,))

    in_height, in_width = image.shape

    if (in_height, in_width) == (height, width):
        return image.copy()

    rows = np.linspace(0.0, in_height - 1, height) if height > 1 else np.zeros(1)
    cols = np.linspace(0.0, in_width - 1, width) if width > 1 else np.zeros(1)

    grid_rows, grid_cols = np.meshgrid(rows, cols, indexing='ij')

    resized = scipy.ndimage.map_coordinates(image, [grid_rows, grid_cols], order=1, mode='nearest')

    return np.clip(resized, 0.0, 1.0)


def binarize(image, threshold=0.5):

    return (np.asarray(image) >= threshold).astype(np.float64)
