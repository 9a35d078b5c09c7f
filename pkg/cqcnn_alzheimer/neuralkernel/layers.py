"""
Forward/backward pairs for the layers used by the classifier and the two U-Nets.

Tensors are plain numpy arrays in channel-first layout ([C, H, W] for feature maps). Every kernel keeps the
dtype of its inputs: models store float32 parameters, while gradient checks can run the very same code in
float64. Each backward function returns the gradients with respect to all inputs of its forward partner.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
import scipy.special

from cqcnn_alzheimer.cqException import ShapeMismatch

CE_EPSILON = 1e-7

VALID = 'valid'
SAME = 'same'


def _require(condition, message):

    if not condition:
        raise ShapeMismatch(message)


def _padding_amount(kernel_size, padding):

    if padding == VALID:
        return 0

    _require(padding == SAME and kernel_size % 2 == 1,
             "Only 'valid' and 'same' (odd kernels) padding are supported, got %s" % padding)

    return (kernel_size - 1) // 2


def _pad(x, pad):

    if pad == 0:
        return x

    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode='constant')


def _windows(x_padded, kernel_size, stride):
    # [C, H', W', K, K]
    return sliding_window_view(x_padded, (kernel_size, kernel_size), axis=(1, 2))[:, ::stride, ::stride]


def _check_conv(x, weights, bias, stride, padding):

    _require(x.ndim == 3, "conv2d input must be [C, H, W], got %s" % (x.shape,))
    _require(weights.ndim == 4 and weights.shape[2] == weights.shape[3],
             "conv2d weights must be [C_out, C_in, K, K], got %s" % (weights.shape,))
    _require(weights.shape[1] == x.shape[0],
             "conv2d weights expect %s input channels, got %s" % (weights.shape[1], x.shape[0]))
    _require(bias is None or bias.shape == (weights.shape[0],), "conv2d bias must be [C_out]")

    kernel_size = weights.shape[2]
    pad = _padding_amount(kernel_size, padding)

    if padding == SAME:
        _require(stride == 1, "'same' padding requires stride 1")

    height = x.shape[1] + 2 * pad
    width = x.shape[2] + 2 * pad

    _require(kernel_size <= height and kernel_size <= width,
             "Kernel %s larger than input %sx%s" % (kernel_size, x.shape[1], x.shape[2]))
    _require((height - kernel_size) % stride == 0 and (width - kernel_size) % stride == 0,
             "Stride %s does not evenly cover an input of %sx%s with kernel %s" % (stride, x.shape[1],
                                                                                  x.shape[2], kernel_size))

    return kernel_size, pad


def conv2d(x, weights, bias, stride=1, padding=VALID):
    """
    Cross-correlation of x [C_in, H, W] with weights [C_out, C_in, K, K] plus bias [C_out]
    """

    kernel_size, pad = _check_conv(x, weights, bias, stride, padding)

    windows = _windows(_pad(x, pad), kernel_size, stride)

    y = np.tensordot(weights, windows, axes=([1, 2, 3], [0, 3, 4]))

    return y + bias[:, None, None]


def conv2d_backward(x, weights, dy, stride=1, padding=VALID):
    """
    :return: (dx, dweights, dbias)
    """

    kernel_size, pad = _check_conv(x, weights, None, stride, padding)

    x_padded = _pad(x, pad)
    windows = _windows(x_padded, kernel_size, stride)

    _require(dy.shape == (weights.shape[0],) + windows.shape[1:3],
             "Upstream gradient shape %s does not match the conv2d output" % (dy.shape,))

    dweights = np.tensordot(dy, windows, axes=([1, 2], [1, 2]))
    dbias = dy.sum(axis=(1, 2))

    # Scatter dy back to the input: full correlation of the (dilated) upstream gradient with the flipped kernel
    n_out, out_h, out_w = dy.shape

    if stride > 1:

        dilated = np.zeros((n_out, (out_h - 1) * stride + 1, (out_w - 1) * stride + 1), dtype=dy.dtype)
        dilated[:, ::stride, ::stride] = dy

    else:

        dilated = dy

    dy_windows = _windows(_pad(dilated, kernel_size - 1), kernel_size, 1)

    dx_padded = np.tensordot(weights[:, :, ::-1, ::-1], dy_windows, axes=([0, 2, 3], [0, 3, 4]))

    assert dx_padded.shape == x_padded.shape

    dx = dx_padded[:, pad:x_padded.shape[1] - pad, pad:x_padded.shape[2] - pad]

    return dx, dweights, dbias


def maxpool2x2(x):
    """
    2x2 max-pooling with stride 2. An odd trailing row/column is dropped.

    :return: (y, argmax) where argmax is needed by the backward pass
    """

    _require(x.ndim == 3, "maxpool2x2 input must be [C, H, W], got %s" % (x.shape,))

    channels, height, width = x.shape

    half_h = height // 2
    half_w = width // 2

    _require(half_h > 0 and half_w > 0, "maxpool2x2 input too small: %sx%s" % (height, width))

    blocks = x[:, :2 * half_h, :2 * half_w].reshape(channels, half_h, 2, half_w, 2)
    blocks = blocks.transpose(0, 1, 3, 2, 4).reshape(channels, half_h, half_w, 4)

    # argmax returns the first maximum, i.e. the first in row-major order within the window
    argmax = np.argmax(blocks, axis=-1)

    y = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    return y, argmax


def maxpool2x2_backward(dy, argmax, input_shape):

    channels, half_h, half_w = dy.shape

    _require(argmax.shape == dy.shape, "maxpool2x2 gradient does not match the forward pass")

    blocks = np.zeros((channels, half_h, half_w, 4), dtype=dy.dtype)
    np.put_along_axis(blocks, argmax[..., None], dy[..., None], axis=-1)

    blocks = blocks.reshape(channels, half_h, half_w, 2, 2).transpose(0, 1, 3, 2, 4)

    dx = np.zeros(input_shape, dtype=dy.dtype)
    dx[:, :2 * half_h, :2 * half_w] = blocks.reshape(channels, 2 * half_h, 2 * half_w)

    return dx


def relu(x):

    return np.maximum(x, 0)


def relu_backward(x, dy):

    return dy * (x > 0)


def dense(x, weights, bias):
    """
    Fully connected layer: weights [N_out, N_in] times x [N_in] plus bias [N_out]
    """

    _require(x.ndim == 1 and weights.ndim == 2 and weights.shape[1] == x.shape[0],
             "dense expects x [%s], got %s" % (weights.shape[1] if weights.ndim == 2 else '?', x.shape))
    _require(bias.shape == (weights.shape[0],), "dense bias must be [%s]" % weights.shape[0])

    return weights.dot(x) + bias


def dense_backward(x, weights, dy):

    _require(dy.shape == (weights.shape[0],), "dense upstream gradient must be [%s]" % weights.shape[0])

    return weights.T.dot(dy), np.outer(dy, x), dy.copy()


def dropout(x, rate, training, stream=None):
    """
    Inverted dropout: in training mode every unit is zeroed with probability rate and survivors are scaled
    by 1 / (1 - rate). Evaluation mode (or rate 0) is the identity.

    :return: (y, scale) where scale is None for the identity
    """

    if not 0.0 <= rate < 1.0:
        raise ValueError("Dropout rate must be in [0, 1), got %s" % rate)

    if not training or rate == 0.0:
        return x, None

    assert stream is not None, "Training-mode dropout needs a random stream"

    keep = stream.keep_mask(x.shape, 1.0 - rate)

    scale = (keep / (1.0 - rate)).astype(x.dtype)

    return x * scale, scale


def dropout_backward(dy, scale):

    if scale is None:
        return dy

    return dy * scale


def sigmoid(x):

    return scipy.special.expit(x)


def sigmoid_backward(y, dy):
    # y is the sigmoid output
    return dy * y * (1 - y)


def softmax(x):

    return scipy.special.softmax(x, axis=-1)


def softmax_backward(y, dy):

    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def cross_entropy(gamma, y):
    """
    Mean cross-entropy between predicted distributions gamma [N, C] (or [C]) and one-hot targets.

    gamma is clamped to [CE_EPSILON, 1] before the log, so a confident mistake has the finite loss -log(CE_EPSILON).
    The gradient is -y / clamp(gamma): the clamp acts as the identity for backpropagation, so a prediction below
    CE_EPSILON gets the largest push, -1 / CE_EPSILON.

    :return: (loss, dgamma)
    """

    gamma = np.asarray(gamma)
    y = np.asarray(y, dtype=gamma.dtype)

    _require(gamma.shape == y.shape, "cross_entropy shapes differ: %s vs %s" % (gamma.shape, y.shape))

    batch = gamma.reshape(-1, gamma.shape[-1])
    targets = y.reshape(batch.shape)

    n = batch.shape[0]

    clamped = np.clip(batch, CE_EPSILON, 1.0)

    loss = -np.sum(targets * np.log(clamped)) / n

    dgamma = -targets / clamped / n

    return float(loss), dgamma.reshape(gamma.shape)


def conv_transpose2x2(x, weights, bias):
    """
    Transposed convolution with 2x2 kernels and stride 2: x [C_in, H, W], weights [C_in, C_out, 2, 2]
    -> [C_out, 2H, 2W]
    """

    _require(x.ndim == 3 and weights.ndim == 4 and weights.shape[0] == x.shape[0] and weights.shape[2:] == (2, 2),
             "conv_transpose2x2 shapes incompatible: x %s, weights %s" % (x.shape, weights.shape))

    channels, height, width = x.shape
    n_out = weights.shape[1]

    y = np.einsum('chw,coab->ohawb', x, weights).reshape(n_out, 2 * height, 2 * width)

    return y + bias[:, None, None]


def conv_transpose2x2_backward(x, weights, dy):

    channels, height, width = x.shape
    n_out = weights.shape[1]

    _require(dy.shape == (n_out, 2 * height, 2 * width), "conv_transpose2x2 upstream gradient has wrong shape")

    blocks = dy.reshape(n_out, height, 2, width, 2)

    dx = np.einsum('ohawb,coab->chw', blocks, weights)
    dweights = np.einsum('chw,ohawb->coab', x, blocks)
    dbias = dy.sum(axis=(1, 2))

    return dx, dweights, dbias


def concat(a, b):
    """
    Channel concatenation of two feature maps of equal spatial size
    """

    _require(a.shape[1:] == b.shape[1:], "Cannot concatenate %s and %s" % (a.shape, b.shape))

    return np.concatenate([a, b], axis=0)


def concat_backward(dy, channels_a):

    return dy[:channels_a], dy[channels_a:]


def bce_with_logits(logits, target):
    """
    Mean binary cross-entropy between sigmoid(logits) and a {0, 1} target

    :return: (loss, dlogits)
    """

    _require(logits.shape == target.shape, "bce shapes differ: %s vs %s" % (logits.shape, target.shape))

    n = logits.size

    # log(1 + exp(z)) - z*m written to stay finite for large |z|
    loss = np.sum(np.maximum(logits, 0) - logits * target + np.log1p(np.exp(-np.abs(logits)))) / n

    dlogits = (sigmoid(logits) - target) / n

    return float(loss), dlogits.astype(logits.dtype)


def soft_dice(probabilities, target, smooth=1.0):
    """
    Soft Dice coefficient (2 sum(p m) + s) / (sum(p) + sum(m) + s), in [0, 1] for p, m in [0, 1]

    :return: (dice, ddice/dprobabilities)
    """

    _require(probabilities.shape == target.shape, "dice shapes differ")

    intersection = np.sum(probabilities * target)
    union = np.sum(probabilities) + np.sum(target)

    dice = (2.0 * intersection + smooth) / (union + smooth)

    ddice = (2.0 * target * (union + smooth) - (2.0 * intersection + smooth)) / (union + smooth) ** 2

    return float(dice), ddice.astype(probabilities.dtype)
