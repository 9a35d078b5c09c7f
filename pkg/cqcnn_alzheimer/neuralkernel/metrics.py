import collections

import numpy as np

from cqcnn_alzheimer.cqException import ShapeMismatch


class ConfusionCounts(collections.namedtuple("ConfusionCounts", ["tp", "fp", "tn", "fn"])):

    __slots__ = ()

    @property
    def total(self):

        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):

        return ConfusionCounts(*[a + b for a, b in zip(self, other)])


def confusion_counts(predicted, labels, positive=1):
    """
    Count true/false positives/negatives of binary predictions against labels
    """

    predicted = np.asarray(predicted)
    labels = np.asarray(labels)

    if predicted.shape != labels.shape:
        raise ShapeMismatch("%s predictions for %s labels" % (predicted.size, labels.size))

    is_pred_positive = predicted == positive
    is_positive = labels == positive

    return ConfusionCounts(tp=int(np.sum(is_pred_positive & is_positive)),
                           fp=int(np.sum(is_pred_positive & ~is_positive)),
                           tn=int(np.sum(~is_pred_positive & ~is_positive)),
                           fn=int(np.sum(~is_pred_positive & is_positive)))


def _ratio(num, den):

    # 0/0 is reported as 0
    return float(num) / den if den > 0 else 0.0


def classify_metrics(counts):

    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)

    return {'accuracy': _ratio(counts.tp + counts.tn, counts.total),
            'precision': precision,
            'recall': recall,
            'f1': _ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn),
            'specificity': _ratio(counts.tn, counts.tn + counts.fp)}


def dice_iou(pred_mask, true_mask):
    """
    Dice and IoU of two masks, binarized at 0.5. Two empty masks agree perfectly: (1, 1).
    """

    pred_mask = np.asarray(pred_mask)
    true_mask = np.asarray(true_mask)

    if pred_mask.shape != true_mask.shape:
        raise ShapeMismatch("Mask shapes differ: %s vs %s" % (pred_mask.shape, true_mask.shape))

    a = pred_mask >= 0.5
    b = true_mask >= 0.5

    intersection = int(np.sum(a & b))
    size_a = int(np.sum(a))
    size_b = int(np.sum(b))
    union = size_a + size_b - intersection

    if union == 0:
        return 1.0, 1.0

    return 2.0 * intersection / (size_a + size_b), float(intersection) / union
