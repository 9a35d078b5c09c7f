import numpy as np


def glorot_uniform(stream, shape, fan_in, fan_out, dtype=np.float32):
    """
    Uniform in +-sqrt(6 / (fan_in + fan_out))
    """

    limit = np.sqrt(6.0 / (fan_in + fan_out))

    return ((2.0 * stream.uniform(shape) - 1.0) * limit).astype(dtype)


def he_uniform(stream, shape, fan_in, dtype=np.float32):
    """
    Uniform in +-sqrt(6 / fan_in), for layers followed by a ReLU
    """

    limit = np.sqrt(6.0 / fan_in)

    return ((2.0 * stream.uniform(shape) - 1.0) * limit).astype(dtype)


def conv_fans(shape):
    # shape is [C_out, C_in, K, K]
    receptive = shape[2] * shape[3]

    return shape[1] * receptive, shape[0] * receptive
