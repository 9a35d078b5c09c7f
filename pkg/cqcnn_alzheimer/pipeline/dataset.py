"""
Dataset assembly: stratified train/test split of a sliced PGM tree (<plane>/<class>/*.pgm) and class balancing
of the training split with diffusion samples. The result is a YAML manifest.
"""

import collections
import glob
import math
import os

import numpy as np
import yaml

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer import diffusion
from cqcnn_alzheimer.cqException import MissingDiffusionModel, EmptyDataset, ShapeMismatch
from cqcnn_alzheimer.cqcnn.training import LabeledSet
from cqcnn_alzheimer.make_directory import make_dir_if_not_exist
from cqcnn_alzheimer.pipeline.checkpoint import load_checkpoint
from cqcnn_alzheimer.rng import derive_stream
from cqcnn_alzheimer.volio import pgm
from cqcnn_alzheimer.volio.slicing import PLANES, resize_bilinear

_logger = myLogging.log.getLogger("pipeline.dataset")

TRAIN = 'train'
TEST = 'test'

REAL = 'real'
SYNTHETIC = 'synthetic'

ALL_PLANES = '3plane'

Entry = collections.namedtuple("Entry", ["file", "label", "provenance"])


class DatasetManifest(object):
    """
    Per-plane train/test file lists. Every entry carries its class name and whether it is a real slice or a
    diffusion sample.
    """

    def __init__(self, classes, splits, seed=0):
        """
        :param classes: class names; the label of a class is its position in this list
        :param splits: mapping plane -> {'train': [Entry], 'test': [Entry]}
        """

        self.classes = list(classes)
        self.splits = collections.OrderedDict((plane, splits[plane]) for plane in PLANES if plane in splits)
        self.seed = seed

    @property
    def planes(self):

        return list(self.splits.keys())

    def entries(self, plane, split):

        planes = self.planes if plane == ALL_PLANES else [plane]

        entries = []

        for this_plane in planes:

            if this_plane not in self.splits:
                raise EmptyDataset("The manifest has no %s plane" % this_plane)

            entries.extend(self.splits[this_plane][split])

        return entries

    def counts(self, plane, split, provenance=None):

        counts = collections.OrderedDict((name, 0) for name in self.classes)

        for entry in self.entries(plane, split):

            if provenance is None or entry.provenance == provenance:
                counts[entry.label] += 1

        return counts

    def check_test_purity(self):

        for plane in self.planes:

            synthetic = [entry.file for entry in self.splits[plane][TEST] if entry.provenance != REAL]

            assert len(synthetic) == 0, "Synthetic images in the %s test split: %s" % (plane, synthetic)

            train_files = set(entry.file for entry in self.splits[plane][TRAIN])

            overlap = train_files.intersection(entry.file for entry in self.splits[plane][TEST])

            assert len(overlap) == 0, "Files in both splits of %s: %s" % (plane, sorted(overlap))

    def to_dict(self):

        planes = collections.OrderedDict()

        for plane, splits in self.splits.items():

            planes[plane] = {split: [dict(entry._asdict()) for entry in splits[split]] for split in (TRAIN, TEST)}

            planes[plane]['counts'] = {split: dict(self.counts(plane, split)) for split in (TRAIN, TEST)}
            planes[plane]['counts']['synthetic'] = dict(self.counts(plane, TRAIN, SYNTHETIC))

        return {'seed': self.seed, 'classes': self.classes, 'planes': dict(planes)}

    @classmethod
    def from_dict(cls, data):

        splits = {}

        for plane, content in data['planes'].items():

            splits[plane] = {split: [Entry(**entry) for entry in content[split]] for split in (TRAIN, TEST)}

        return cls(data['classes'], splits, seed=data.get('seed', 0))

    def save(self, path):

        with open(path, 'w') as f:

            yaml.safe_dump(self.to_dict(), f, default_flow_style=False)

        _logger.info("Wrote dataset manifest %s" % path)

    @classmethod
    def load(cls, path):

        with open(path) as f:

            return cls.from_dict(yaml.safe_load(f))


def split_counts(n, test_fraction):
    """
    (n_train, n_test) for a class of n files
    """

    n_test = int(math.floor(n * test_fraction + 0.5))

    return n - n_test, n_test


def stratified_split(files_per_class, test_fraction, seed, plane):
    """
    :param files_per_class: mapping class -> sorted list of files
    :return: (train entries, test entries), each sorted by file name
    """

    train = []
    test = []

    for name, files in files_per_class.items():

        order = derive_stream(seed, "split/%s/%s" % (plane, name)).permutation(len(files))

        n_train, n_test = split_counts(len(files), test_fraction)

        test.extend(Entry(files[k], name, REAL) for k in sorted(order[:n_test]))
        train.extend(Entry(files[k], name, REAL) for k in sorted(order[n_test:]))

    return train, test


def _scan(dataset_dir, plane):

    plane_dir = os.path.join(dataset_dir, plane)

    classes = sorted(d for d in os.listdir(plane_dir) if os.path.isdir(os.path.join(plane_dir, d)))

    return collections.OrderedDict((name, sorted(glob.glob(os.path.join(plane_dir, name, '*.pgm'))))
                                   for name in classes)


def _synthesize(config, plane, name, n, image_size, output_dir):

    checkpoint = config['diffusion_checkpoint_%s' % plane]

    if checkpoint is None:
        raise MissingDiffusionModel("Balancing the %s plane needs %s synthetic '%s' images, but no "
                                    "diffusion_checkpoint_%s was given" % (plane, n, name, plane))

    predictor, schedule = diffusion.from_checkpoint(load_checkpoint(checkpoint))

    images = diffusion.generate(predictor, schedule, n, config['seed'], label="synthetic/%s/%s" % (plane, name))

    target_dir = make_dir_if_not_exist(output_dir, 'synthetic', plane, name)

    files = []

    for k, image in enumerate(images):

        filename = os.path.join(target_dir, "synthetic_%04d.pgm" % k)

        pgm.save_pgm(filename, resize_bilinear(image, image_size, image_size))

        files.append(filename)

    return files


def build_dataset(config):
    """
    Split every plane of config['dataset_dir'] and, if config['balance'], top up the minority class of each
    training split with diffusion samples. The manifest is written to <output_dir>/manifest.yaml.

    :return: the DatasetManifest
    """

    config.require('dataset_dir')

    dataset_dir = config['dataset_dir']
    output_dir = make_dir_if_not_exist(config['output_dir'])

    splits = {}
    classes = set()

    planes = [plane for plane in PLANES if os.path.isdir(os.path.join(dataset_dir, plane))]

    if len(planes) == 0:
        raise EmptyDataset("No plane directories (%s) in %s" % (", ".join(PLANES), dataset_dir))

    for plane in planes:

        files_per_class = _scan(dataset_dir, plane)

        train, test = stratified_split(files_per_class, config['test_fraction'], config['seed'], plane)

        counts = collections.Counter(entry.label for entry in train)

        _logger.info("%s: train %s, test %s" % (plane, dict(counts), dict(collections.Counter(e.label
                                                                                           for e in test))))

        if config['balance'] and len(files_per_class) > 1:

            target = max(counts[name] for name in files_per_class)

            if config['minority_class'] != '':

                if config['minority_class'] not in files_per_class:
                    raise EmptyDataset("Minority class %s not found in %s" % (config['minority_class'], plane))

                to_balance = [config['minority_class']]

            else:

                to_balance = [min(files_per_class, key=lambda name: (counts[name], name))]

            for name in to_balance:

                deficit = target - counts[name]

                if deficit <= 0:
                    continue

                _logger.info("%s: generating %s synthetic '%s' images" % (plane, deficit, name))

                synthetic = _synthesize(config, plane, name, deficit, config['image_size'], output_dir)

                train.extend(Entry(f, name, SYNTHETIC) for f in synthetic)

        splits[plane] = {TRAIN: train, TEST: test}
        classes.update(files_per_class.keys())

    manifest = DatasetManifest(sorted(classes), splits, seed=config['seed'])

    manifest.check_test_purity()

    manifest.save(os.path.join(output_dir, 'manifest.yaml'))

    return manifest


def load_images(files, image_size):

    images = np.zeros((len(files), image_size, image_size))

    for k, filename in enumerate(files):

        image = pgm.load_pgm(filename)

        if image.shape != (image_size, image_size):
            image = resize_bilinear(image, image_size, image_size)

        images[k] = image

    return images


def load_split(manifest, plane, split, image_size):
    """
    Images and integer labels of one split, as a LabeledSet
    """

    entries = manifest.entries(plane, split)

    if len(manifest.classes) != 2:
        raise ShapeMismatch("The classifier is binary, the manifest has classes %s" % manifest.classes)

    labels = [manifest.classes.index(entry.label) for entry in entries]

    return LabeledSet(load_images([entry.file for entry in entries], image_size).reshape(-1, image_size, image_size),
                      labels)
