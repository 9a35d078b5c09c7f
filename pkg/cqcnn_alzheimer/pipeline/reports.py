"""
CSV products: per-epoch curves written during training and the per-configuration summary built from a set of
run directories. Tables are handled with astropy.table.
"""

import collections
import os

import numpy as np
from astropy.table import Table

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import NoRuns
from cqcnn_alzheimer.cqcnn.training import epochs_to_threshold

_logger = myLogging.log.getLogger("pipeline.reports")

EPOCHS_FILE = 'epochs.csv'

METRICS = ('accuracy', 'precision', 'recall', 'f1', 'specificity')

EPOCH_COLUMNS = ('run', 'plane', 'skull_stripped', 'qubits', 'seed', 'epoch', 'split', 'loss') + METRICS + \
                ('epoch_time_s',)

_EPOCH_DTYPES = (str, str, int, int, int, int, str, float) + (float,) * len(METRICS) + (float,)

SEGMENT_COLUMNS = ('epoch', 'loss', 'dice', 'iou', 'epoch_time_s')
DIFFUSION_COLUMNS = ('epoch', 'loss', 'epoch_time_s')

SUMMARY_COLUMNS = ('plane', 'skull_stripped', 'qubits', 'runs') + \
                  tuple("%s_%s" % (metric, stat) for metric in METRICS + ('training_time',)
                        for stat in ('mean', 'std')) + \
                  ('epochs_to_threshold_mean',)

_FLOAT_FORMAT = '%.6f'
_TIME_FORMAT = '%.3f'


def format_hms(seconds):
    """
    Seconds as hh:mm:ss (rounded to the second)
    """

    total = int(round(seconds))

    return "%02d:%02d:%02d" % (total // 3600, (total % 3600) // 60, total % 60)


def _make_table(names, dtypes, rows):

    if len(rows) == 0:

        return Table(names=names, dtype=dtypes)

    return Table(rows=[tuple(row[name] for name in names) for row in rows], names=names)


def _write(table, path):

    for name in table.colnames:

        if table[name].dtype.kind == 'f':
            table[name].info.format = _TIME_FORMAT if name.endswith('time_s') else _FLOAT_FORMAT

    table.write(path, format='ascii.csv', overwrite=True)

    _logger.debug("Wrote %s rows to %s" % (len(table), path))


def epoch_row(run, plane, skull_stripped, qubits, seed, epoch, split, loss, metrics, epoch_time):

    row = {'run': run, 'plane': plane, 'skull_stripped': int(bool(skull_stripped)), 'qubits': int(qubits),
           'seed': int(seed), 'epoch': int(epoch), 'split': split, 'loss': float(loss),
           'epoch_time_s': float(epoch_time)}

    for metric in METRICS:
        row[metric] = float(metrics[metric])

    return row


def write_epoch_csv(path, rows):

    _write(_make_table(EPOCH_COLUMNS, _EPOCH_DTYPES, rows), path)


def write_segment_csv(path, rows):

    _write(_make_table(SEGMENT_COLUMNS, (int, float, float, float, float), rows), path)


def write_diffusion_csv(path, rows):

    _write(_make_table(DIFFUSION_COLUMNS, (int, float, float), rows), path)


def read_table(path):
    """
    Read a CSV written by this module. A header-only file gives None.
    """

    with open(path) as f:

        n_lines = sum(1 for line in f if line.strip() != '')

    if n_lines <= 1:
        return None

    return Table.read(path, format='ascii.csv')


RunResult = collections.namedtuple("RunResult", ["key", "metrics", "training_time", "epochs_to_threshold"])


def summarize_run(run_dir, threshold=0.95):
    """
    Final metrics of a run (last test evaluation, or last training epoch if the run had no test split), total
    training time and epochs to the train-accuracy threshold

    :return: a RunResult, or None for a run without epochs
    """

    table = read_table(os.path.join(run_dir, EPOCHS_FILE))

    if table is None:

        _logger.warning("Run %s has no epochs, skipping it" % run_dir)

        return None

    train = table[table['split'] == 'train']
    test = table[table['split'] == 'test']

    final = test[-1] if len(test) > 0 else train[-1]

    key = (str(final['plane']), int(final['skull_stripped']), int(final['qubits']))

    return RunResult(key=key,
                     metrics={metric: float(final[metric]) for metric in METRICS},
                     training_time=float(np.sum(train['epoch_time_s'])),
                     epochs_to_threshold=epochs_to_threshold(list(train['accuracy']), threshold))


def _mean_std(values):

    values = np.asarray(values, dtype=np.float64)

    # Sample standard deviation; a single run has std 0
    std = float(np.std(values, ddof=1)) if values.shape[0] > 1 else 0.0

    return float(np.mean(values)), std


def cmd_report(run_dirs, threshold=0.95):
    """
    Group runs by (plane, skull stripped, qubits) and compute mean and sample standard deviation of every
    metric and of the training time.

    :return: the summary as an astropy Table (columns SUMMARY_COLUMNS)
    """

    results = [summarize_run(run_dir, threshold) for run_dir in run_dirs]

    results = [result for result in results if result is not None]

    if len(results) == 0:
        raise NoRuns("No completed runs among %s" % ", ".join(run_dirs))

    groups = collections.OrderedDict()

    for result in results:
        groups.setdefault(result.key, []).append(result)

    rows = []

    for (plane, skull_stripped, qubits), group in groups.items():

        row = {'plane': plane, 'skull_stripped': skull_stripped, 'qubits': qubits, 'runs': len(group)}

        for metric in METRICS:

            row['%s_mean' % metric], row['%s_std' % metric] = _mean_std([r.metrics[metric] for r in group])

        time_mean, time_std = _mean_std([r.training_time for r in group])

        row['training_time_mean'] = format_hms(time_mean)
        row['training_time_std'] = format_hms(time_std)

        reached = [r.epochs_to_threshold for r in group if r.epochs_to_threshold is not None]

        row['epochs_to_threshold_mean'] = float(np.mean(reached)) if len(reached) > 0 else float('nan')

        rows.append(row)

        _logger.info("%s, skull stripped %s, %s qubits: accuracy %.4f +- %.4f over %s run(s)" % (
            plane, bool(skull_stripped), qubits, row['accuracy_mean'], row['accuracy_std'], len(group)))

    return Table(rows=[tuple(row[name] for name in SUMMARY_COLUMNS) for row in rows], names=SUMMARY_COLUMNS)


def write_summary(path, table):

    _write(table, path)


def write_table(path, names, rows):
    """
    Write a small table of dict rows (used by the comparison commands)
    """

    _write(_make_table(names, None, rows), path)
