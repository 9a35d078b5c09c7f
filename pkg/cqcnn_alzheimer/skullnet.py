"""
U-Net segmenter used for skull stripping.

The encoder has one block per entry of widths (two same-padded 3x3 convolutions with ReLU each), with a 2x2
max-pooling before every block but the first; the last block is the bottleneck. The decoder mirrors it: a 2x2
stride-2 transposed convolution, concatenation with the encoder block of the same resolution, and a block.
A final 1x1 convolution gives one channel of logits.

The UNet class is also the backbone of the diffusion noise predictor, which adds a per-channel vector to the
bottleneck output (bottleneck_bias).
"""

import collections
import math
import time

import numpy as np

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import ShapeMismatch, EmptyDataset
from cqcnn_alzheimer.neuralkernel import layers
from cqcnn_alzheimer.neuralkernel.initializers import he_uniform, glorot_uniform, conv_fans
from cqcnn_alzheimer.neuralkernel.metrics import dice_iou
from cqcnn_alzheimer.rng import derive_stream

_logger = myLogging.log.getLogger("skullnet")

DEFAULT_WIDTHS = (32, 64, 128, 256, 512)

MASK_THRESHOLD = 0.5


class UNetConfig(collections.namedtuple("UNetConfig", ["input_size", "widths", "width_scale", "in_channels"])):

    __slots__ = ()

    def __new__(cls, input_size=128, widths=DEFAULT_WIDTHS, width_scale=1, in_channels=1):

        widths = tuple(int(w) for w in widths)

        if len(widths) < 1 or min(widths) < 1:
            raise ShapeMismatch("U-Net widths must be positive, got %s" % (widths,))

        factor = 2 ** (len(widths) - 1)

        if input_size < factor or input_size % factor != 0:
            raise ShapeMismatch("Input side %s is not divisible by %s (%s levels)" % (input_size, factor,
                                                                                     len(widths)))

        return super(UNetConfig, cls).__new__(cls, input_size, widths, width_scale, in_channels)

    @property
    def channels(self):
        """
        Channel count of each level after width scaling (ceil(width * scale))
        """

        return [int(math.ceil(w * self.width_scale)) for w in self.widths]

    @property
    def depth(self):

        return len(self.widths)

    @property
    def bottleneck_size(self):

        return self.input_size // 2 ** (self.depth - 1)

    def parameter_shapes(self):

        channels = self.channels

        shapes = collections.OrderedDict()

        previous = self.in_channels

        for level, width in enumerate(channels):

            shapes['enc%d.conv1.w' % level] = (width, previous, 3, 3)
            shapes['enc%d.conv1.b' % level] = (width,)
            shapes['enc%d.conv2.w' % level] = (width, width, 3, 3)
            shapes['enc%d.conv2.b' % level] = (width,)

            previous = width

        for level in reversed(range(self.depth - 1)):

            width = channels[level]

            # Transposed convolution weights are [C_in, C_out, 2, 2]
            shapes['dec%d.up.w' % level] = (channels[level + 1], width, 2, 2)
            shapes['dec%d.up.b' % level] = (width,)
            shapes['dec%d.conv1.w' % level] = (width, 2 * width, 3, 3)
            shapes['dec%d.conv1.b' % level] = (width,)
            shapes['dec%d.conv2.w' % level] = (width, width, 3, 3)
            shapes['dec%d.conv2.b' % level] = (width,)

        shapes['head.w'] = (1, channels[0], 1, 1)
        shapes['head.b'] = (1,)

        return shapes


class UNet(object):

    def __init__(self, config, seed=0, dtype=np.float32, params=None, label="skullnet"):

        self.config = config
        self.dtype = dtype

        self.params = collections.OrderedDict()

        for name, shape in config.parameter_shapes().items():

            if params is not None:

                if name not in params or tuple(params[name].shape) != shape:
                    raise ShapeMismatch("Parameter %s missing or with wrong shape (expected %s)" % (name, shape))

                self.params[name] = np.array(params[name], dtype=dtype)

            elif name.endswith('.b'):

                self.params[name] = np.zeros(shape, dtype=dtype)

            else:

                stream = derive_stream(seed, "%s/init/%s" % (label, name))

                if name.endswith('up.w'):

                    # [C_in, C_out, 2, 2]: each input pixel spreads over a 2x2 block of every output channel
                    self.params[name] = glorot_uniform(stream, shape, shape[0] * 4, shape[1] * 4, dtype=dtype)

                elif name == 'head.w':

                    self.params[name] = glorot_uniform(stream, shape, *conv_fans(shape), dtype=dtype)

                else:

                    self.params[name] = he_uniform(stream, shape, conv_fans(shape)[0], dtype=dtype)

    @property
    def n_parameters(self):

        return int(sum(p.size for p in self.params.values()))

    def _block_forward(self, prefix, x):

        p = self.params

        a1 = layers.conv2d(x, p[prefix + '.conv1.w'], p[prefix + '.conv1.b'], padding=layers.SAME)
        r1 = layers.relu(a1)
        a2 = layers.conv2d(r1, p[prefix + '.conv2.w'], p[prefix + '.conv2.b'], padding=layers.SAME)

        return layers.relu(a2), (x, a1, r1, a2)

    def _block_backward(self, prefix, block_cache, dy, grads):

        p = self.params
        x, a1, r1, a2 = block_cache

        da2 = layers.relu_backward(a2, dy)
        dr1, grads[prefix + '.conv2.w'], grads[prefix + '.conv2.b'] = \
            layers.conv2d_backward(r1, p[prefix + '.conv2.w'], da2, padding=layers.SAME)

        da1 = layers.relu_backward(a1, dr1)
        dx, grads[prefix + '.conv1.w'], grads[prefix + '.conv1.b'] = \
            layers.conv2d_backward(x, p[prefix + '.conv1.w'], da1, padding=layers.SAME)

        return dx

    def forward(self, x, bottleneck_bias=None):
        """
        :param x: [in_channels, S, S] input (a 2D image is accepted for one channel)
        :param bottleneck_bias: optional [C_bottleneck] vector added to every bottleneck pixel
        :return: ([S, S] logits, cache)
        """

        x = np.asarray(x, dtype=self.dtype)

        if x.ndim == 2:
            x = x[None]

        expected = (self.config.in_channels, self.config.input_size, self.config.input_size)

        if x.shape != expected:
            raise ShapeMismatch("U-Net expects input %s, got %s" % (expected, x.shape))

        depth = self.config.depth
        p = self.params

        cache = {'encoder': [], 'pool': [], 'decoder': [], 'up': []}

        skips = []
        h = x

        for level in range(depth):

            if level > 0:

                pool_input_shape = h.shape
                h, argmax = layers.maxpool2x2(h)
                cache['pool'].append((argmax, pool_input_shape))

            h, block_cache = self._block_forward('enc%d' % level, h)

            cache['encoder'].append(block_cache)
            skips.append(h)

        if bottleneck_bias is not None:

            h = h + np.asarray(bottleneck_bias, dtype=self.dtype)[:, None, None]

        for level in reversed(range(depth - 1)):

            prefix = 'dec%d' % level

            up_input = h
            up = layers.conv_transpose2x2(h, p[prefix + '.up.w'], p[prefix + '.up.b'])

            assert up.shape[1:] == skips[level].shape[1:], "Skip connection at level %s: %s vs %s" % (
                level, up.shape, skips[level].shape)

            h, block_cache = self._block_forward(prefix, layers.concat(up, skips[level]))

            cache['up'].append((level, up_input, up.shape[0]))
            cache['decoder'].append(block_cache)

        cache['last'] = h

        logits = layers.conv2d(h, p['head.w'], p['head.b'])

        return logits[0], cache

    def backward(self, cache, dlogits):
        """
        :param dlogits: [S, S] gradient of the loss with respect to the logits
        :return: (grads keyed like self.params, gradient with respect to the bottleneck bias)
        """

        p = self.params
        depth = self.config.depth

        grads = collections.OrderedDict()

        dh, grads['head.w'], grads['head.b'] = layers.conv2d_backward(cache['last'], p['head.w'],
                                                                      np.asarray(dlogits, dtype=self.dtype)[None])

        dskips = [None] * depth

        for (level, up_input, up_channels), block_cache in reversed(list(zip(cache['up'], cache['decoder']))):

            prefix = 'dec%d' % level

            dcat = self._block_backward(prefix, block_cache, dh, grads)

            dup, dskips[level] = layers.concat_backward(dcat, up_channels)

            dh, grads[prefix + '.up.w'], grads[prefix + '.up.b'] = \
                layers.conv_transpose2x2_backward(up_input, p[prefix + '.up.w'], dup)

        # dh is now the gradient at the (biased) bottleneck output
        dbottleneck_bias = dh.sum(axis=(1, 2))

        for level in reversed(range(depth)):

            if dskips[level] is not None:
                dh = dh + dskips[level]

            dh = self._block_backward('enc%d' % level, cache['encoder'][level], dh, grads)

            if level > 0:

                argmax, pool_input_shape = cache['pool'][level - 1]
                dh = layers.maxpool2x2_backward(dh, argmax, pool_input_shape)

        # Subclasses may own parameters outside the U-Net (they add their own gradients)
        return collections.OrderedDict((name, grads[name].astype(self.dtype)) for name in p if name in grads), \
            dbottleneck_bias


def unet_forward(model, image):

    logits, _ = model.forward(image)

    return logits


def segmentation_loss(logits, mask):
    """
    BCE(sigmoid(logits), mask) + (1 - soft Dice)

    :return: (loss, dloss/dlogits, probabilities)
    """

    mask = np.asarray(mask, dtype=logits.dtype)

    bce, dbce = layers.bce_with_logits(logits, mask)

    probabilities = layers.sigmoid(logits)

    dice, ddice = layers.soft_dice(probabilities, mask)

    dlogits = dbce - layers.sigmoid_backward(probabilities, ddice)

    return bce + (1.0 - dice), dlogits.astype(logits.dtype), probabilities


SegmentEpoch = collections.namedtuple("SegmentEpoch", ["epoch", "loss", "dice", "iou", "wall_time"])


def _check_pairs(pairs, size):

    if len(pairs) == 0:
        raise EmptyDataset("No image/mask pairs to work with")

    for image, mask in pairs:

        if image.shape != mask.shape or image.shape != (size, size):
            raise ShapeMismatch("Image %s and mask %s must both be %sx%s" % (image.shape, mask.shape, size, size))


def train_segmenter(model, pairs, epochs, optimizer, seed, on_epoch=None):
    """
    Per-pair updates in a seeded shuffled order. Dice and IoU of every epoch are those of the binarized
    predictions made during the epoch (before each update).

    :param pairs: sequence of (image, mask) [S, S] arrays, mask in {0, 1}
    :return: list of SegmentEpoch
    """

    _check_pairs(pairs, model.config.input_size)

    history = []

    for epoch in range(1, epochs + 1):

        start = time.monotonic()

        order = derive_stream(seed, "skullnet/shuffle/epoch-%d" % epoch).permutation(len(pairs))

        losses = []
        dices = []
        ious = []

        for index in order:

            image, mask = pairs[index]

            logits, cache = model.forward(image)

            loss, dlogits, probabilities = segmentation_loss(logits, mask)

            grads, _ = model.backward(cache, dlogits)

            optimizer.step(model.params, grads)

            dice, iou = dice_iou(probabilities >= MASK_THRESHOLD, mask)

            losses.append(loss)
            dices.append(dice)
            ious.append(iou)

        record = SegmentEpoch(epoch=epoch, loss=float(np.mean(losses)), dice=float(np.mean(dices)),
                              iou=float(np.mean(ious)), wall_time=time.monotonic() - start)

        _logger.info("Epoch %s: loss %.5f, dice %.4f, iou %.4f, %.1f s" % (epoch, record.loss, record.dice,
                                                                           record.iou, record.wall_time))

        history.append(record)

        if on_epoch is not None:
            on_epoch(record)

    return history


def evaluate_segmenter(model, pairs):
    """
    Mean Dice and IoU of the predicted masks over a set of pairs
    """

    _check_pairs(pairs, model.config.input_size)

    scores = [dice_iou(segment_apply(model, image)[0], mask) for image, mask in pairs]

    return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))


def segment_apply(model, image):
    """
    :return: (binary mask, image with everything outside the mask set to zero)
    """

    image = np.asarray(image)

    logits = unet_forward(model, image)

    mask = (layers.sigmoid(logits) >= MASK_THRESHOLD).astype(image.dtype)

    return mask, image * mask


def checkpoint_metadata(model):

    # Widths are stored already scaled
    return collections.OrderedDict([
        ('meta.unet.input_size', np.array([model.config.input_size], dtype=np.float32)),
        ('meta.unet.widths', np.array(model.config.channels, dtype=np.float32)),
    ])


def from_checkpoint(tensors):

    try:

        config = UNetConfig(input_size=int(tensors['meta.unet.input_size'][0]),
                            widths=[int(w) for w in tensors['meta.unet.widths']])

    except KeyError as e:

        raise ShapeMismatch("Not a segmenter checkpoint: missing %s" % e)

    return UNet(config, params=tensors)
