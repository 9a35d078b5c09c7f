import collections
import time

import numpy as np

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import EmptyDataset, ShapeMismatch
from cqcnn_alzheimer.neuralkernel.metrics import confusion_counts, classify_metrics
from cqcnn_alzheimer.rng import derive_stream

_logger = myLogging.log.getLogger("cqcnn.training")

# Labels are class indexes; label 1 is the positive class for precision/recall/specificity
POSITIVE_LABEL = 1


class LabeledSet(collections.namedtuple("LabeledSet", ["images", "labels"])):
    """
    images: [N, H, W] array, labels: [N] array of {0, 1}
    """

    __slots__ = ()

    def __new__(cls, images, labels):

        images = np.asarray(images)
        labels = np.asarray(labels, dtype=np.int64)

        if images.ndim != 3 or labels.shape != (images.shape[0],):
            raise ShapeMismatch("Need [N, H, W] images and [N] labels, got %s and %s" % (images.shape, labels.shape))

        return super(LabeledSet, cls).__new__(cls, images, labels)

    def __len__(self):

        return self.labels.shape[0]


EpochReport = collections.namedtuple("EpochReport", ["epoch", "loss", "accuracy", "counts", "wall_time",
                                                     "theta_grad_norm"])

Evaluation = collections.namedtuple("Evaluation", ["loss", "counts", "metrics"])


def _check_dataset(dataset):

    if len(dataset) == 0:
        raise EmptyDataset("Cannot train or evaluate on an empty dataset")


def train_epoch(model, dataset, optimizer, seed, epoch=1, batch_size=1):
    """
    One pass over the dataset in a seeded shuffled order. Gradients are averaged over batch_size samples
    before each update (batch_size=1 means one update per sample). The model is updated in place.

    Loss and accuracy are those of the training-mode forward passes, taken before each update.

    :return: an EpochReport
    """

    _check_dataset(dataset)

    start = time.monotonic()

    order = derive_stream(seed, "cqcnn/shuffle/epoch-%d" % epoch).permutation(len(dataset))
    dropout_stream = derive_stream(seed, "cqcnn/dropout/epoch-%d" % epoch)

    losses = []
    predictions = np.zeros(len(dataset), dtype=np.int64)
    theta_norms = []

    for first in range(0, len(dataset), batch_size):

        batch = order[first:first + batch_size]

        accumulated = None

        for index in batch:

            gamma, cache = model.forward(dataset.images[index], training=True, stream=dropout_stream)

            loss, grads = model.backward(cache, dataset.labels[index])

            losses.append(loss)
            predictions[index] = int(np.argmax(gamma))

            if accumulated is None:

                accumulated = grads

            else:

                for name in accumulated:
                    accumulated[name] = accumulated[name] + grads[name]

        for name in accumulated:
            accumulated[name] = (accumulated[name] / len(batch)).astype(model.dtype)

        if 'theta' in accumulated:
            theta_norms.append(float(np.linalg.norm(accumulated['theta'])))

        optimizer.step(model.params, accumulated)

    counts = confusion_counts(predictions, dataset.labels, positive=POSITIVE_LABEL)

    report = EpochReport(epoch=epoch,
                         loss=float(np.mean(losses)),
                         accuracy=classify_metrics(counts)['accuracy'],
                         counts=counts,
                         wall_time=time.monotonic() - start,
                         theta_grad_norm=float(np.mean(theta_norms)) if len(theta_norms) > 0 else None)

    if report.theta_grad_norm is not None:

        _logger.info("Epoch %s: loss %.5f, train accuracy %.4f, |grad theta| %.3g, %.1f s" % (
            epoch, report.loss, report.accuracy, report.theta_grad_norm, report.wall_time))

    else:

        _logger.info("Epoch %s: loss %.5f, train accuracy %.4f, %.1f s" % (epoch, report.loss, report.accuracy,
                                                                          report.wall_time))

    return report


def evaluate(model, dataset):
    """
    Evaluation-mode (no dropout) pass: mean loss, confusion counts and the derived metrics
    """

    _check_dataset(dataset)

    losses = []
    predictions = np.zeros(len(dataset), dtype=np.int64)

    for index in range(len(dataset)):

        gamma, cache = model.forward(dataset.images[index], training=False)

        losses.append(model.loss(cache, dataset.labels[index])[0])
        predictions[index] = int(np.argmax(gamma))

    counts = confusion_counts(predictions, dataset.labels, positive=POSITIVE_LABEL)

    return Evaluation(loss=float(np.mean(losses)), counts=counts, metrics=classify_metrics(counts))


def epochs_to_threshold(accuracies, threshold=0.95):
    """
    First (1-based) epoch whose accuracy reaches the threshold, or None if none does
    """

    for epoch, accuracy in enumerate(accuracies, start=1):

        if accuracy >= threshold:
            return epoch

    return None


def train_model(model, train_set, optimizer, seed, epochs, batch_size=1, test_set=None, on_epoch=None):
    """
    Train for a number of epochs, evaluating on test_set (if given) after each one.

    :param on_epoch: optional callback on_epoch(train_report, test_evaluation_or_None)
    :return: list of (EpochReport, Evaluation or None)
    """

    history = []

    for epoch in range(1, epochs + 1):

        report = train_epoch(model, train_set, optimizer, seed, epoch=epoch, batch_size=batch_size)

        evaluation = None

        if test_set is not None:

            evaluation = evaluate(model, test_set)

            _logger.info("Epoch %s: test loss %.5f, test accuracy %.4f" % (epoch, evaluation.loss,
                                                                           evaluation.metrics['accuracy']))

        history.append((report, evaluation))

        if on_epoch is not None:
            on_epoch(report, evaluation)

    return history
