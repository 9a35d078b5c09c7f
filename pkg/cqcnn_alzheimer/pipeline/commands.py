"""
One function per CLI subcommand. Every command takes a validated ExperimentConfig and writes its products
under config['output_dir'].
"""

import collections
import glob
import os

import numpy as np
import yaml

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer import diffusion
from cqcnn_alzheimer import skullnet
from cqcnn_alzheimer.cqException import cqException, EmptyInput, EmptyDataset
from cqcnn_alzheimer.cqcnn import model as cqcnn_model
from cqcnn_alzheimer.cqcnn import training
from cqcnn_alzheimer.make_directory import make_dir_if_not_exist
from cqcnn_alzheimer.neuralkernel.metrics import dice_iou, classify_metrics
from cqcnn_alzheimer.neuralkernel.optimizers import Optimizer
from cqcnn_alzheimer.pipeline import reports
from cqcnn_alzheimer.pipeline.checkpoint import save_checkpoint, load_checkpoint
from cqcnn_alzheimer.pipeline.dataset import DatasetManifest, build_dataset, load_split, load_images, TRAIN, TEST, \
    REAL
from cqcnn_alzheimer.volio import pgm
from cqcnn_alzheimer.volio.nifti import read_nifti_file
from cqcnn_alzheimer.volio.slicing import plan_slices, plane_extent, slice_volume, resize_bilinear, binarize

_logger = myLogging.log.getLogger("pipeline.commands")

CHECKPOINT_FILE = 'model.ckpt'
RUN_FILE = 'run.yaml'

UNLABELED = 'unlabeled'

_VOLUME_EXTENSIONS = ('.nii', '.hdr')


def _with_context(function, path, *args):
    """
    Call function(path, *args), prefixing the file name to the message of any error it raises
    """

    try:

        return function(path, *args)

    except cqException as e:

        raise type(e)("%s: %s" % (path, e.message))


def _find_volumes(input_dir):
    """
    :return: list of (class name, volume path). Volumes directly in input_dir belong to the 'unlabeled' class,
             those in a sub-directory to the class named after it
    """

    def volumes_in(directory):

        return sorted(os.path.join(directory, f) for f in os.listdir(directory)
                      if os.path.splitext(f)[1].lower() in _VOLUME_EXTENSIONS)

    found = [(UNLABELED, path) for path in volumes_in(input_dir)]

    for name in sorted(os.listdir(input_dir)):

        directory = os.path.join(input_dir, name)

        if os.path.isdir(directory):
            found.extend((name, path) for path in volumes_in(directory))

    return found


def _timing(config, seconds):

    return seconds if config['record_timing'] else 0.0


def _save_run_file(run_dir, content):

    with open(os.path.join(run_dir, RUN_FILE), 'w') as f:

        yaml.safe_dump(content, f, default_flow_style=False)


def _load_pgm_tree(directory):
    """
    Sorted relative paths of every .pgm file below directory
    """

    files = sorted(glob.glob(os.path.join(directory, '**', '*.pgm'), recursive=True))

    return [os.path.relpath(f, directory) for f in files]


def cmd_slice(config):
    """
    Slice every NIfTI volume of input_dir into <output_dir>/<plane>/<class>/<volume>_<index>.pgm and write
    <output_dir>/slices.yaml

    :return: mapping plane -> number of images written
    """

    config.require('input_dir')

    volumes = _find_volumes(config['input_dir'])

    if len(volumes) == 0:
        raise EmptyInput("No NIfTI volumes (.nii, .hdr/.img) in %s" % config['input_dir'])

    output_dir = make_dir_if_not_exist(config['output_dir'])
    size = config['image_size']

    written = collections.OrderedDict((plane, 0) for plane in config['planes'])
    listing = collections.OrderedDict()

    for name, path in volumes:

        _, volume = _with_context(read_nifti_file, path)

        stem = os.path.splitext(os.path.basename(path))[0]

        listing[os.path.basename(path)] = {'class': name, 'planes': {}}

        for plane in config['planes']:

            n, k1, k2 = config.slice_request(plane)

            plan = _with_context(lambda p: plan_slices(plane, plane_extent(volume, plane), n, k1, k2), path)

            target_dir = make_dir_if_not_exist(output_dir, plane, name)

            for index, image in slice_volume(volume, plan):

                pgm.save_pgm(os.path.join(target_dir, "%s_%03d.pgm" % (stem, index)),
                             resize_bilinear(image, size, size))

                written[plane] += 1

            listing[os.path.basename(path)]['planes'][plane] = {'interval': plan.i, 'slices': plan.n_slices,
                                                                'indices': [int(i) for i in plan.indices]}

            _logger.info("%s: %s %s slices (interval %s)" % (path, plan.n_slices, plane, plan.i))

    with open(os.path.join(output_dir, 'slices.yaml'), 'w') as f:

        yaml.safe_dump({'volumes': dict(listing), 'written': dict(written)}, f, default_flow_style=False)

    return written


def cmd_build_dataset(config):

    return build_dataset(config)


def _classifier_data(config, manifest_path, plane):

    manifest = DatasetManifest.load(manifest_path)

    train_set = load_split(manifest, plane, TRAIN, config['image_size'])

    if len(train_set) == 0:
        raise EmptyDataset("The %s training split of %s is empty" % (plane, manifest_path))

    test_set = load_split(manifest, plane, TEST, config['image_size'])

    return train_set, (test_set if len(test_set) > 0 else None)


def train_classifier(config, head=None, n_qubits=None, run_name=None, manifest_path=None, data=None):
    """
    Train one classifier run into <output_dir>/<run_name>: epochs.csv, model.ckpt and run.yaml.

    :param data: optional (train_set, test_set) already loaded, to share data between runs
    :return: (run directory, training history)
    """

    run_name = config['run_name'] if run_name is None else run_name
    manifest_path = config['manifest'] if manifest_path is None else manifest_path

    model_config = cqcnn_model.CqcnnConfig.from_experiment(config, head=head, n_qubits=n_qubits)

    if data is None:

        if manifest_path is None:
            config.require('manifest')

        data = _classifier_data(config, manifest_path, config['plane'])

    train_set, test_set = data

    run_dir = make_dir_if_not_exist(config['output_dir'], run_name)

    model = cqcnn_model.CqcnnModel(model_config, seed=config['seed'])

    _logger.info("Run %s: %s head, %s qubits, %s parameters, %s training images" % (
        run_name, model_config.head, model_config.n_qubits, model.n_parameters, len(train_set)))

    optimizer = Optimizer(config['optimizer'], config['lr'])

    qubits = model_config.n_qubits if model_config.head == cqcnn_model.QUANTUM else 0

    rows = []
    csv_path = os.path.join(run_dir, reports.EPOCHS_FILE)

    def on_epoch(report, evaluation):

        common = (run_name, config['plane'], config['skull_stripped'], qubits, config['seed'], report.epoch)

        rows.append(reports.epoch_row(*(common + ('train', report.loss,
                                                  classify_metrics(report.counts),
                                                  _timing(config, report.wall_time)))))

        if evaluation is not None:
            rows.append(reports.epoch_row(*(common + ('test', evaluation.loss, evaluation.metrics, 0.0))))

        reports.write_epoch_csv(csv_path, rows)

    history = training.train_model(model, train_set, optimizer, config['seed'], config['epochs'],
                                   batch_size=config['batch_size'], test_set=test_set, on_epoch=on_epoch)

    # Header-only file when no epoch ran
    reports.write_epoch_csv(csv_path, rows)

    tensors = collections.OrderedDict(model.params)
    tensors.update(cqcnn_model.checkpoint_metadata(model_config))

    save_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE), tensors)

    total_time = sum(_timing(config, report.wall_time) for report, _ in history)

    summary = {'run': run_name, 'plane': config['plane'], 'skull_stripped': bool(config['skull_stripped']),
               'head': model_config.head, 'qubits': qubits, 'seed': config['seed'],
               'parameters': model.n_parameters, 'epochs': config['epochs'], 'optimizer': config['optimizer'],
               'training_time': reports.format_hms(total_time)}

    if len(history) > 0:

        report, evaluation = history[-1]

        summary['final_train_accuracy'] = report.accuracy

        if evaluation is not None:
            summary['final_test'] = dict(evaluation.metrics)

    _save_run_file(run_dir, summary)

    return run_dir, history


def _train_segmenter(config):

    config.require('image_dir', 'mask_dir')

    pairs = []

    for relative in _load_pgm_tree(config['image_dir']):

        image = pgm.load_pgm(os.path.join(config['image_dir'], relative))
        mask = binarize(pgm.load_pgm(os.path.join(config['mask_dir'], relative)))

        pairs.append((resize_bilinear(image, config['image_size'], config['image_size']),
                      binarize(resize_bilinear(mask, config['image_size'], config['image_size']))))

    unet_config = skullnet.UNetConfig(input_size=config['image_size'], width_scale=config['width_scale'])

    model = skullnet.UNet(unet_config, seed=config['seed'])

    _logger.info("Segmenter: channels %s, %s parameters, %s pairs" % (unet_config.channels, model.n_parameters,
                                                                       len(pairs)))

    run_dir = make_dir_if_not_exist(config['output_dir'], config['run_name'])

    history = skullnet.train_segmenter(model, pairs, config['segment_epochs'],
                                       Optimizer(config['optimizer'], config['lr']), config['seed'])

    reports.write_segment_csv(os.path.join(run_dir, 'segmentation.csv'),
                              [{'epoch': r.epoch, 'loss': r.loss, 'dice': r.dice, 'iou': r.iou,
                                'epoch_time_s': _timing(config, r.wall_time)} for r in history])

    tensors = collections.OrderedDict(model.params)
    tensors.update(skullnet.checkpoint_metadata(model))

    save_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE), tensors)

    return run_dir, history


def _diffusion_images(config):
    """
    Real training images of the minority class of one plane of the manifest, or every image of image_dir
    """

    size = config['image_size']

    if config['manifest'] is not None:

        manifest = DatasetManifest.load(config['manifest'])

        counts = manifest.counts(config['plane'], TRAIN, REAL)

        name = config['minority_class'] if config['minority_class'] != '' else \
            min(counts, key=lambda c: (counts[c], c))

        files = [entry.file for entry in manifest.entries(config['plane'], TRAIN)
                 if entry.label == name and entry.provenance == REAL]

        _logger.info("Noise predictor trained on %s real '%s' %s images" % (len(files), name, config['plane']))

    else:

        config.require('image_dir')

        files = [os.path.join(config['image_dir'], f) for f in _load_pgm_tree(config['image_dir'])]

    return load_images(files, size)


def _train_diffusion(config):

    images = _diffusion_images(config)

    schedule_args = (config['diffusion_steps'], config['beta_start'], config['beta_end'])
    schedule = diffusion.build_schedule(*schedule_args)

    predictor = diffusion.NoisePredictor(diffusion.NoisePredictorConfig(image_size=config['image_size'],
                                                                        widths=tuple(config['diffusion_widths']),
                                                                        embedding_dim=config['embedding_dim']),
                                         seed=config['seed'])

    run_dir = make_dir_if_not_exist(config['output_dir'], config['run_name'])

    history = diffusion.train_diffusion(predictor, images, schedule, config['diffusion_epochs'],
                                        config['diffusion_batch'], Optimizer(config['optimizer'], config['lr']),
                                        config['seed'])

    reports.write_diffusion_csv(os.path.join(run_dir, 'diffusion.csv'),
                                [{'epoch': epoch, 'loss': loss, 'epoch_time_s': _timing(config, seconds)}
                                 for epoch, loss, seconds in history])

    tensors = collections.OrderedDict(predictor.params)
    tensors.update(diffusion.checkpoint_metadata(predictor, schedule_args))

    save_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE), tensors)

    return run_dir, history


def cmd_train(config):

    dispatch = {'cqcnn': train_classifier, 'skullnet': _train_segmenter, 'diffusion': _train_diffusion}

    return dispatch[config['model']](config)


def cmd_segment_train(config):

    return _train_segmenter(config)


def cmd_diffuse_train(config):

    return _train_diffusion(config)


def cmd_segment_apply(config):
    """
    Write <output_dir>/masks and <output_dir>/stripped trees mirroring image_dir. With mask_dir, the Dice and
    IoU of every image are written to <output_dir>/segmentation_scores.csv.

    :return: number of images processed
    """

    config.require('checkpoint', 'image_dir')

    model = skullnet.from_checkpoint(load_checkpoint(config['checkpoint']))

    size = model.config.input_size

    relatives = _load_pgm_tree(config['image_dir'])

    if len(relatives) == 0:
        raise EmptyInput("No PGM images in %s" % config['image_dir'])

    scores = []

    for relative in relatives:

        image = resize_bilinear(pgm.load_pgm(os.path.join(config['image_dir'], relative)), size, size)

        mask, stripped = skullnet.segment_apply(model, image)

        for kind, result in (('masks', mask), ('stripped', stripped)):

            target = os.path.join(config['output_dir'], kind, relative)

            make_dir_if_not_exist(os.path.dirname(target))

            pgm.save_pgm(target, result)

        if config['mask_dir'] is not None:

            truth = resize_bilinear(pgm.load_pgm(os.path.join(config['mask_dir'], relative)), size, size)

            dice, iou = dice_iou(mask, binarize(truth))

            scores.append({'file': relative, 'dice': dice, 'iou': iou})

    if len(scores) > 0:

        reports.write_table(os.path.join(config['output_dir'], 'segmentation_scores.csv'), ('file', 'dice', 'iou'),
                            scores)

        _logger.info("Mean Dice %.4f, mean IoU %.4f" % (np.mean([s['dice'] for s in scores]),
                                                        np.mean([s['iou'] for s in scores])))

    return len(relatives)


def cmd_diffuse_sample(config):
    """
    Write n_samples generated images to <output_dir>/samples
    """

    config.require('checkpoint')

    predictor, schedule = diffusion.from_checkpoint(load_checkpoint(config['checkpoint']))

    target_dir = make_dir_if_not_exist(config['output_dir'], 'samples')

    images = diffusion.generate(predictor, schedule, config['n_samples'], config['seed'])

    files = []

    for k, image in enumerate(images):

        files.append(os.path.join(target_dir, "sample_%04d.pgm" % k))

        pgm.save_pgm(files[-1], image)

    _logger.info("Wrote %s samples to %s" % (len(files), target_dir))

    return files


def cmd_evaluate(config):
    """
    Evaluate a trained classifier on the test split of the manifest and write <output_dir>/evaluation.yaml
    """

    config.require('checkpoint', 'manifest')

    model = cqcnn_model.from_checkpoint(load_checkpoint(config['checkpoint']))

    manifest = DatasetManifest.load(config['manifest'])

    test_set = load_split(manifest, config['plane'], TEST, model.config.image_size)

    evaluation = training.evaluate(model, test_set)

    output_dir = make_dir_if_not_exist(config['output_dir'])

    with open(os.path.join(output_dir, 'evaluation.yaml'), 'w') as f:

        yaml.safe_dump({'checkpoint': config['checkpoint'], 'plane': config['plane'], 'loss': evaluation.loss,
                        'counts': dict(evaluation.counts._asdict()), 'metrics': dict(evaluation.metrics)},
                       f, default_flow_style=False)

    _logger.info("Test accuracy %.4f (%s images)" % (evaluation.metrics['accuracy'], len(test_set)))

    return evaluation


def cmd_report(config):
    """
    Summary of the runs in run_dirs, written to <output_dir>/summary.csv
    """

    config.require('run_dirs')

    table = reports.cmd_report(config['run_dirs'], config['accuracy_threshold'])

    output_dir = make_dir_if_not_exist(config['output_dir'])

    reports.write_summary(os.path.join(output_dir, 'summary.csv'), table)

    return table


def cmd_run_matrix(config):
    """
    Train one classifier per (plane, skull stripped, qubits, seed) of the matrix keys and summarize them in
    <output_dir>/summary.csv
    """

    config.require('manifest', 'stripped_manifest')

    run_dirs = []

    for plane in config['matrix_planes']:

        for stripped, manifest_path in ((False, config['manifest']), (True, config['stripped_manifest'])):

            data = _classifier_data(config, manifest_path, plane)

            for qubits in config['matrix_qubits']:

                for seed in config['matrix_seeds']:

                    run_config = config.replace(plane=plane, skull_stripped=stripped, n_qubits=qubits, seed=seed,
                                                head=cqcnn_model.QUANTUM)

                    run_name = "%s-%s-q%d-s%d" % (plane, 'stripped' if stripped else 'raw', qubits, seed)

                    run_dir, _ = train_classifier(run_config, run_name=run_name, data=data)

                    run_dirs.append(run_dir)

    table = reports.cmd_report(run_dirs, config['accuracy_threshold'])

    reports.write_summary(os.path.join(config['output_dir'], 'summary.csv'), table)

    return table


_CONVERGENCE_COLUMNS = ('model', 'qubits', 'parameters', 'epochs_to_threshold', 'final_train_accuracy')


def cmd_convergence(config):
    """
    Classical baseline, 2-qubit and 3-qubit heads trained on the same data and seed; epochs needed by each to
    reach the training-accuracy threshold go to <output_dir>/convergence.csv (nan when never reached)
    """

    config.require('manifest')

    data = _classifier_data(config, config['manifest'], config['plane'])

    rows = []

    for head, qubits in ((cqcnn_model.CLASSICAL, config['n_qubits']), (cqcnn_model.QUANTUM, 2),
                         (cqcnn_model.QUANTUM, 3)):

        label = 'classical' if head == cqcnn_model.CLASSICAL else 'quantum'

        run_config = config.replace(n_qubits=qubits)

        run_dir, history = train_classifier(run_config, head=head, n_qubits=qubits,
                                            run_name="convergence-%s-q%d" % (label, qubits), data=data)

        accuracies = [report.accuracy for report, _ in history]

        reached = training.epochs_to_threshold(accuracies, config['accuracy_threshold'])

        model_config = cqcnn_model.CqcnnConfig.from_experiment(run_config, head=head, n_qubits=qubits)

        rows.append({'model': label, 'qubits': qubits if head == cqcnn_model.QUANTUM else 0,
                     'parameters': cqcnn_model.param_count(model_config),
                     'epochs_to_threshold': float(reached) if reached is not None else float('nan'),
                     'final_train_accuracy': accuracies[-1] if len(accuracies) > 0 else float('nan')})

    output_dir = make_dir_if_not_exist(config['output_dir'])

    reports.write_table(os.path.join(output_dir, 'convergence.csv'), _CONVERGENCE_COLUMNS, rows)

    return rows


_ABLATION_COLUMNS = ('optimizer', 'loss') + reports.METRICS


def cmd_ablate_optimizers(config):
    """
    The quantum classifier trained with each update rule on the same data and seed; final test metrics (train
    metrics without a test split) go to <output_dir>/optimizers.csv
    """

    config.require('manifest')

    data = _classifier_data(config, config['manifest'], config['plane'])

    rows = []

    for kind in ('adam', 'sgd', 'rmsprop', 'adagrad'):

        run_config = config.replace(optimizer=kind, head=cqcnn_model.QUANTUM)

        _, history = train_classifier(run_config, run_name="optimizer-%s" % kind, data=data)

        if len(history) == 0:
            continue

        report, evaluation = history[-1]

        if evaluation is not None:

            loss, metrics = evaluation.loss, evaluation.metrics

        else:

            loss, metrics = report.loss, classify_metrics(report.counts)

        row = {'optimizer': kind, 'loss': loss}
        row.update(metrics)

        rows.append(row)

    output_dir = make_dir_if_not_exist(config['output_dir'])

    reports.write_table(os.path.join(output_dir, 'optimizers.csv'), _ABLATION_COLUMNS, rows)

    return rows
