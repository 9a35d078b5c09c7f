"""
Denoising diffusion probabilistic model at desk scale.

Images live in [-1, 1] while they diffuse; x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) eps. A small U-Net
learns to predict the noise eps of x_t given t, and the reverse process uses it to turn pure noise into an
image. Timesteps are 1-based: schedule arrays are indexed with t - 1.
"""

import collections
import time

import numpy as np

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import BadRange, BadTimestep, EmptyBatch, ShapeMismatch
from cqcnn_alzheimer.neuralkernel import layers
from cqcnn_alzheimer.neuralkernel.initializers import glorot_uniform
from cqcnn_alzheimer.rng import derive_stream
from cqcnn_alzheimer.skullnet import UNet, UNetConfig

_logger = myLogging.log.getLogger("diffusion")


class NoiseSchedule(collections.namedtuple("NoiseSchedule", ["T", "betas", "alphas", "alpha_bars"])):

    __slots__ = ()

    def beta(self, t):

        return float(self.betas[t - 1])

    def alpha(self, t):

        return float(self.alphas[t - 1])

    def alpha_bar(self, t):

        return float(self.alpha_bars[t - 1])


def schedule_from_betas(betas):
    """
    Schedule from explicit beta values in [0, 1] (no monotonicity requirement)
    """

    betas = np.asarray(betas, dtype=np.float64)

    if betas.ndim != 1 or betas.shape[0] < 1 or np.any(betas < 0) or np.any(betas > 1):
        raise BadRange("Betas must be a non-empty vector of values in [0, 1]")

    alphas = 1.0 - betas

    return NoiseSchedule(T=betas.shape[0], betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def build_schedule(T, beta_start=1e-4, beta_end=0.02):
    """
    Linear beta schedule from beta_start to beta_end over T steps
    """

    if T < 1:
        raise BadRange("The schedule needs at least one step, got T=%s" % T)

    if not 0.0 < beta_start <= beta_end < 1.0:
        raise BadRange("Need 0 < beta_start <= beta_end < 1, got %s and %s" % (beta_start, beta_end))

    schedule = schedule_from_betas(np.linspace(beta_start, beta_end, T))

    _logger.debug("Schedule T=%s, beta %g -> %g, final alpha_bar %.3g" % (T, beta_start, beta_end,
                                                                          schedule.alpha_bars[-1]))

    return schedule


def _check_timestep(t, schedule):

    if not 1 <= t <= schedule.T:
        raise BadTimestep("Timestep %s outside [1, %s]" % (t, schedule.T))


def forward_step(x_prev, t, schedule, stream):

    _check_timestep(t, schedule)

    x_prev = np.asarray(x_prev, dtype=np.float64)

    alpha = schedule.alpha(t)

    eps = stream.normal(x_prev.shape)

    return np.sqrt(alpha) * x_prev + np.sqrt(1.0 - alpha) * eps


def forward_jump(x0, t, schedule, stream):
    """
    x_t straight from x_0: sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps

    :return: (x_t, eps)
    """

    _check_timestep(t, schedule)

    x0 = np.asarray(x0, dtype=np.float64)

    alpha_bar = schedule.alpha_bar(t)

    eps = stream.normal(x0.shape)

    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps, eps


def timestep_embedding(t, dim):
    """
    Sinusoidal embedding: sin(t w_k) and cos(t w_k) with w_k = 10000 ** (-k / (dim // 2))
    """

    half = dim // 2

    frequencies = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))

    arguments = t * frequencies

    embedding = np.concatenate([np.sin(arguments), np.cos(arguments)])

    if dim % 2 == 1:
        embedding = np.concatenate([embedding, [0.0]])

    return embedding


class NoisePredictorConfig(collections.namedtuple("NoisePredictorConfig",
                                                  ["image_size", "widths", "embedding_dim"])):

    __slots__ = ()

    def unet_config(self):

        return UNetConfig(input_size=self.image_size, widths=self.widths, width_scale=1)


class NoisePredictor(UNet):
    """
    U-Net whose bottleneck receives a learned projection of the timestep embedding
    """

    def __init__(self, config, seed=0, dtype=np.float32, params=None):

        super(NoisePredictor, self).__init__(config.unet_config(), seed=seed, dtype=dtype, params=params,
                                             label="diffusion")

        self.predictor_config = config

        bottleneck = self.config.channels[-1]

        shape = (bottleneck, config.embedding_dim)

        if params is not None:

            if 'temb.w' not in params or tuple(params['temb.w'].shape) != shape:
                raise ShapeMismatch("Parameter temb.w missing or with wrong shape (expected %s)" % (shape,))

            self.params['temb.w'] = np.array(params['temb.w'], dtype=dtype)
            self.params['temb.b'] = np.array(params['temb.b'], dtype=dtype)

        else:

            self.params['temb.w'] = glorot_uniform(derive_stream(seed, "diffusion/init/temb.w"), shape,
                                                   shape[1], shape[0], dtype=dtype)
            self.params['temb.b'] = np.zeros(bottleneck, dtype=dtype)

    def predict(self, x_t, t):
        """
        :return: (eps_hat with the shape of x_t, cache)
        """

        embedding = timestep_embedding(t, self.predictor_config.embedding_dim).astype(self.dtype)

        bias = layers.dense(embedding, self.params['temb.w'], self.params['temb.b'])

        eps_hat, cache = UNet.forward(self, x_t, bottleneck_bias=bias)

        cache['embedding'] = embedding

        return eps_hat, cache

    def predict_backward(self, cache, deps_hat):

        grads, dbias = UNet.backward(self, cache, deps_hat)

        _, grads['temb.w'], grads['temb.b'] = layers.dense_backward(cache['embedding'], self.params['temb.w'],
                                                                    dbias.astype(self.dtype))

        return grads


def noise_predictor_forward(predictor, x_t, t):

    eps_hat, _ = predictor.predict(x_t, t)

    return eps_hat


def train_step(predictor, x0_batch, schedule, optimizer, stream):
    """
    One optimizer step on the noise-prediction loss: for every image a timestep is drawn uniformly in [1, T],
    the image is noised with forward_jump and the squared error between predicted and true noise is summed
    over pixels. The loss is the batch mean of that sum.

    predictor can be any object with predict(x_t, t), predict_backward(cache, d) and params.

    :return: the loss (before the update)
    """

    if len(x0_batch) == 0:
        raise EmptyBatch("train_step needs at least one image")

    losses = []
    total = None

    for x0 in x0_batch:

        t = int(stream.integers(1, schedule.T + 1))

        x_t, eps = forward_jump(x0, t, schedule, stream)

        eps_hat, cache = predictor.predict(x_t, t)

        residual = np.asarray(eps_hat, dtype=np.float64) - eps

        losses.append(float(np.sum(residual ** 2)))

        grads = predictor.predict_backward(cache, 2.0 * residual / len(x0_batch))

        if total is None:

            total = grads

        else:

            for name in total:
                total[name] = total[name] + grads[name]

    optimizer.step(predictor.params, total)

    return float(np.mean(losses))


def to_diffusion_range(images):

    return 2.0 * np.asarray(images, dtype=np.float64) - 1.0


def to_image_range(x):

    return (np.clip(x, -1.0, 1.0) + 1.0) / 2.0


def train_diffusion(predictor, images, schedule, epochs, batch_size, optimizer, seed, on_epoch=None):
    """
    Train the noise predictor on [0, 1] images for a number of epochs.

    :return: list of (epoch, mean loss, wall time)
    """

    if len(images) == 0:
        raise EmptyBatch("No images to train the noise predictor on")

    data = to_diffusion_range(images)

    history = []

    for epoch in range(1, epochs + 1):

        start = time.monotonic()

        order = derive_stream(seed, "diffusion/shuffle/epoch-%d" % epoch).permutation(len(data))
        stream = derive_stream(seed, "diffusion/noise/epoch-%d" % epoch)

        losses = [train_step(predictor, data[order[first:first + batch_size]], schedule, optimizer, stream)
                  for first in range(0, len(data), batch_size)]

        record = (epoch, float(np.mean(losses)), time.monotonic() - start)

        _logger.debug("Epoch %s: loss %.5f" % (epoch, record[1]))

        if epoch == 1 or epoch == epochs or epoch % 50 == 0:
            _logger.info("Epoch %s/%s: loss %.5f" % (epoch, epochs, record[1]))

        history.append(record)

        if on_epoch is not None:
            on_epoch(record)

    return history


def reverse_process(predictor, schedule, shape, stream):
    """
    From x_T ~ N(0, I) down to x_0 with
    x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat(x_t, t)) / sqrt(alpha_t) + sigma_t z,
    sigma_t = sqrt(beta_t) for t > 1 and 0 for t = 1. Returns the raw (unclipped) x_0.
    """

    x = stream.normal(shape)

    for t in range(schedule.T, 0, -1):

        eps_hat = np.asarray(noise_predictor_forward(predictor, x, t), dtype=np.float64)

        beta = schedule.beta(t)

        x = (x - beta / np.sqrt(1.0 - schedule.alpha_bar(t)) * eps_hat) / np.sqrt(schedule.alpha(t))

        if t > 1:
            x = x + np.sqrt(beta) * stream.normal(shape)

    return x


def sample(predictor, schedule, shape, stream):
    """
    Generate one image in [0, 1]
    """

    return to_image_range(reverse_process(predictor, schedule, shape, stream))


def generate(predictor, schedule, n, seed, label="diffusion/sample"):
    """
    Generate n images, image k from its own stream so that any prefix of the output is reproducible
    """

    size = predictor.predictor_config.image_size

    images = []

    for k in range(n):

        images.append(sample(predictor, schedule, (size, size), derive_stream(seed, "%s/%d" % (label, k))))

        _logger.debug("Generated image %s/%s" % (k + 1, n))

    return images


def checkpoint_metadata(predictor, schedule_args):
    """
    Tensors stored next to the weights so that the predictor and its schedule can be rebuilt

    :param schedule_args: (T, beta_start, beta_end)
    """

    config = predictor.predictor_config

    return collections.OrderedDict([
        ('meta.diffusion.schedule', np.array(schedule_args, dtype=np.float32)),
        ('meta.diffusion.image_size', np.array([config.image_size], dtype=np.float32)),
        ('meta.diffusion.widths', np.array(config.widths, dtype=np.float32)),
        ('meta.diffusion.embedding_dim', np.array([config.embedding_dim], dtype=np.float32)),
    ])


def from_checkpoint(tensors):
    """
    Rebuild (predictor, schedule) from checkpoint tensors written with checkpoint_metadata
    """

    try:

        T, beta_start, beta_end = [float(v) for v in tensors['meta.diffusion.schedule']]

        config = NoisePredictorConfig(image_size=int(tensors['meta.diffusion.image_size'][0]),
                                      widths=tuple(int(w) for w in tensors['meta.diffusion.widths']),
                                      embedding_dim=int(tensors['meta.diffusion.embedding_dim'][0]))

    except KeyError as e:

        raise ShapeMismatch("Not a diffusion checkpoint: missing %s" % e)

    weights = {name: value for name, value in tensors.items() if not name.startswith('meta.')}

    return NoisePredictor(config, params=weights), build_schedule(int(T), beta_start, beta_end)
