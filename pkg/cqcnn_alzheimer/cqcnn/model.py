"""
The hybrid classifier: a two-layer convolutional trunk reduces a slice to a handful of features, which are
fed as rotation angles to a parameterized quantum circuit. The circuit probability p_q goes through a scalar
affine map and a logistic squash to o_1, and the output distribution is gamma = (o_1, 1 - o_1).

The same trunk can be topped by a classical dense + softmax head, used as the parameter-matched baseline.
"""

import collections

import numpy as np

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import ShapeMismatch
from cqcnn_alzheimer.neuralkernel import layers
from cqcnn_alzheimer.neuralkernel.initializers import glorot_uniform, conv_fans
from cqcnn_alzheimer.qsim import circuit
from cqcnn_alzheimer.rng import derive_stream

_logger = myLogging.log.getLogger("cqcnn.model")

QUANTUM = 'quantum'
CLASSICAL = 'classical_softmax'

_HEADS = (QUANTUM, CLASSICAL)

_fields = ["image_size", "conv1_out", "conv2_out", "kernel", "stride", "dropout_rate", "n_qubits", "fc_width",
           "head"]


class CqcnnConfig(collections.namedtuple("CqcnnConfig", _fields)):

    __slots__ = ()

    def __new__(cls, image_size=128, conv1_out=2, conv2_out=4, kernel=5, stride=1, dropout_rate=0.5, n_qubits=2,
                fc_width=None, head=QUANTUM):

        if fc_width is None or fc_width == 0:
            fc_width = n_qubits

        if head not in _HEADS:
            raise ValueError("Unknown head %s (choose among %s)" % (head, ", ".join(_HEADS)))

        if fc_width < n_qubits:
            raise ShapeMismatch("fc_width (%s) must be at least n_qubits (%s)" % (fc_width, n_qubits))

        return super(CqcnnConfig, cls).__new__(cls, image_size, conv1_out, conv2_out, kernel, stride, dropout_rate,
                                               n_qubits, fc_width, head)

    @classmethod
    def from_experiment(cls, config, head=None, n_qubits=None):
        """
        Build the classifier configuration from an ExperimentConfig, optionally overriding head and qubits
        """

        n_qubits = config['n_qubits'] if n_qubits is None else n_qubits

        if config['wide_fc']:
            fc_width = 4
        elif config['fc_width'] > 0:
            fc_width = config['fc_width']
        else:
            fc_width = n_qubits

        return cls(image_size=config['image_size'], conv1_out=config['conv1_out'], conv2_out=config['conv2_out'],
                   kernel=config['kernel'], stride=config['stride'], dropout_rate=config['dropout_rate'],
                   n_qubits=n_qubits, fc_width=fc_width, head=config['head'] if head is None else head)

    def _conv_out(self, size):

        span = size - self.kernel

        if span < 0 or span % self.stride != 0:
            raise ShapeMismatch("Kernel %s with stride %s does not fit an input of side %s" % (self.kernel,
                                                                                              self.stride, size))

        return span // self.stride + 1

    def shape_trace(self):
        """
        Feature map shapes after conv1, pool1, conv2, pool2 and the flattened size
        """

        side1 = self._conv_out(self.image_size)
        pooled1 = side1 // 2
        side2 = self._conv_out(pooled1)
        pooled2 = side2 // 2

        if pooled2 < 1:
            raise ShapeMismatch("An input of side %s is too small for this trunk" % self.image_size)

        return [(self.conv1_out, side1, side1),
                (self.conv1_out, pooled1, pooled1),
                (self.conv2_out, side2, side2),
                (self.conv2_out, pooled2, pooled2),
                self.conv2_out * pooled2 * pooled2]

    def parameter_shapes(self):

        flat = self.shape_trace()[-1]

        shapes = collections.OrderedDict()

        shapes['conv1.w'] = (self.conv1_out, 1, self.kernel, self.kernel)
        shapes['conv1.b'] = (self.conv1_out,)
        shapes['conv2.w'] = (self.conv2_out, self.conv1_out, self.kernel, self.kernel)
        shapes['conv2.b'] = (self.conv2_out,)
        shapes['fc.w'] = (self.fc_width, flat)
        shapes['fc.b'] = (self.fc_width,)

        if self.head == QUANTUM:

            shapes['out.w'] = (1,)
            shapes['out.b'] = (1,)
            shapes['theta'] = (self.n_qubits,)

        else:

            shapes['head.w'] = (2, self.fc_width)
            shapes['head.b'] = (2,)

        return shapes


def param_count(config):
    """
    Number of trainable scalars of a model with this configuration (theta included)
    """

    return int(sum(np.prod(shape) for shape in config.parameter_shapes().values()))


class CqcnnModel(object):

    def __init__(self, config, seed=0, dtype=np.float32, params=None):

        self.config = config
        self.dtype = dtype

        shapes = config.parameter_shapes()

        if params is None:

            params = self._initialize(shapes, seed)

        else:

            for name, shape in shapes.items():

                if name not in params or tuple(params[name].shape) != shape:
                    raise ShapeMismatch("Parameter %s missing or with wrong shape (expected %s)" % (name, shape))

            params = collections.OrderedDict((name, np.array(params[name], dtype=dtype)) for name in shapes)

        self.params = params

    def _initialize(self, shapes, seed):

        params = collections.OrderedDict()

        for name, shape in shapes.items():

            # One stream per parameter: the trunk is identical whatever head sits on top of it
            stream = derive_stream(seed, "cqcnn/init/%s" % name)

            if name == 'theta':

                params[name] = (stream.uniform(shape) * np.pi).astype(self.dtype)

            elif name == 'out.w':

                params[name] = np.ones(shape, dtype=self.dtype)

            elif name.endswith('.b'):

                params[name] = np.zeros(shape, dtype=self.dtype)

            elif len(shape) == 4:

                params[name] = glorot_uniform(stream, shape, *conv_fans(shape), dtype=self.dtype)

            else:

                params[name] = glorot_uniform(stream, shape, shape[1], shape[0], dtype=self.dtype)

        return params

    @property
    def n_parameters(self):

        return int(sum(p.size for p in self.params.values()))

    def trunk_forward(self, image, training=False, stream=None):
        """
        conv1 -> relu -> pool -> conv2 -> relu -> pool -> dropout -> flatten -> dense

        :return: (fc output, cache)
        """

        image = np.asarray(image)

        expected = (self.config.image_size, self.config.image_size)

        if image.shape != expected:
            raise ShapeMismatch("Expected a %sx%s image, got %s" % (expected + (image.shape,)))

        p = self.params
        stride = self.config.stride

        x = image[None].astype(self.dtype)

        a1 = layers.conv2d(x, p['conv1.w'], p['conv1.b'], stride=stride)
        r1 = layers.relu(a1)
        p1, arg1 = layers.maxpool2x2(r1)

        a2 = layers.conv2d(p1, p['conv2.w'], p['conv2.b'], stride=stride)
        r2 = layers.relu(a2)
        p2, arg2 = layers.maxpool2x2(r2)

        dropped, scale = layers.dropout(p2, self.config.dropout_rate, training, stream)

        flat = dropped.reshape(-1)

        h = layers.dense(flat, p['fc.w'], p['fc.b'])

        cache = {'x': x, 'a1': a1, 'r1': r1, 'arg1': arg1, 'p1': p1, 'a2': a2, 'r2': r2, 'arg2': arg2,
                 'p2': p2, 'scale': scale, 'flat': flat, 'h': h}

        return h, cache

    def _trunk_backward(self, cache, dh, grads):

        p = self.params
        stride = self.config.stride

        dflat, grads['fc.w'], grads['fc.b'] = layers.dense_backward(cache['flat'], p['fc.w'], dh)

        dp2 = layers.dropout_backward(dflat.reshape(cache['p2'].shape), cache['scale'])
        dr2 = layers.maxpool2x2_backward(dp2, cache['arg2'], cache['r2'].shape)
        da2 = layers.relu_backward(cache['a2'], dr2)

        dp1, grads['conv2.w'], grads['conv2.b'] = layers.conv2d_backward(cache['p1'], p['conv2.w'], da2,
                                                                         stride=stride)

        dr1 = layers.maxpool2x2_backward(dp1, cache['arg1'], cache['r1'].shape)
        da1 = layers.relu_backward(cache['a1'], dr1)

        _, grads['conv1.w'], grads['conv1.b'] = layers.conv2d_backward(cache['x'], p['conv1.w'], da1, stride=stride)

    def forward(self, image, training=False, stream=None):
        """
        Output distribution gamma over the two classes.

        :param image: [image_size, image_size] slice
        :param training: enables dropout (which then needs stream)
        :return: (gamma, cache) where cache feeds backward()
        """

        h, cache = self.trunk_forward(image, training, stream)

        p = self.params

        if self.config.head == QUANTUM:

            # The first n_qubits features are the encoding angles, unsquashed
            features = h[:self.config.n_qubits].astype(np.float64)
            theta = p['theta'].astype(np.float64)

            p_q = circuit.pqc_forward(features, theta)

            o1 = layers.sigmoid(p['out.w'][0] * p_q + p['out.b'][0])

            gamma = np.array([o1, 1.0 - o1], dtype=self.dtype)

            cache.update({'features': features, 'theta': theta, 'p_q': p_q, 'o1': o1})

        else:

            logits = layers.dense(h, p['head.w'], p['head.b'])

            gamma = layers.softmax(logits).astype(self.dtype)

        cache['gamma'] = gamma

        return gamma, cache

    def loss(self, cache, label):
        """
        :return: (cross-entropy of gamma against the one-hot label, dloss/dgamma)
        """

        target = np.zeros(2, dtype=self.dtype)
        target[int(label)] = 1.0

        return layers.cross_entropy(cache['gamma'], target)

    def backward(self, cache, label):
        """
        Cross-entropy loss against the one-hot label and its gradient for every parameter

        :return: (loss, grads) with grads keyed like self.params
        """

        p = self.params

        loss, dgamma = self.loss(cache, label)

        grads = collections.OrderedDict()

        if self.config.head == QUANTUM:

            # gamma = (o1, 1 - o1)
            do1 = float(dgamma[0] - dgamma[1])

            dz = layers.sigmoid_backward(cache['o1'], do1)

            grads['out.w'] = np.array([dz * cache['p_q']])
            grads['out.b'] = np.array([dz])

            dp_q = dz * float(p['out.w'][0])

            dfeatures, grads['theta'] = circuit.pqc_backward(cache['features'], cache['theta'], upstream=dp_q)

            dh = np.zeros(self.config.fc_width, dtype=self.dtype)
            dh[:self.config.n_qubits] = dfeatures

        else:

            dlogits = layers.softmax_backward(cache['gamma'], dgamma)

            dh, grads['head.w'], grads['head.b'] = layers.dense_backward(cache['h'], p['head.w'], dlogits)

        self._trunk_backward(cache, dh.astype(self.dtype), grads)

        return loss, collections.OrderedDict((name, np.asarray(grads[name], dtype=self.dtype)) for name in p)

    def predict(self, image):

        gamma, _ = self.forward(image, training=False)

        return int(np.argmax(gamma))


def forward(model, image, mode='eval', stream=None):

    gamma, _ = model.forward(image, training=(mode == 'train'), stream=stream)

    return gamma


def classical_baseline_forward(model, image, mode='eval', stream=None):

    if model.config.head != CLASSICAL:
        raise ShapeMismatch("Model has a %s head, not the classical baseline head" % model.config.head)

    return forward(model, image, mode, stream)


def checkpoint_metadata(config):

    values = [config.image_size, config.conv1_out, config.conv2_out, config.kernel, config.stride,
              config.dropout_rate, config.n_qubits, config.fc_width, _HEADS.index(config.head)]

    return collections.OrderedDict([('meta.cqcnn.config', np.array(values, dtype=np.float32))])


def from_checkpoint(tensors):
    """
    Rebuild a CqcnnModel from checkpoint tensors written with checkpoint_metadata
    """

    if 'meta.cqcnn.config' not in tensors:
        raise ShapeMismatch("Not a classifier checkpoint: missing meta.cqcnn.config")

    values = tensors['meta.cqcnn.config']

    image_size, conv1_out, conv2_out, kernel, stride = [int(v) for v in values[:5]]

    config = CqcnnConfig(image_size=image_size, conv1_out=conv1_out, conv2_out=conv2_out, kernel=kernel,
                         stride=stride, dropout_rate=float(values[5]), n_qubits=int(values[6]),
                         fc_width=int(values[7]), head=_HEADS[int(values[8])])

    return CqcnnModel(config, params=tensors)
