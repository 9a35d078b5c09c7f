import argparse
import sys

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.configuration import get_config
from cqcnn_alzheimer.cqException import cqException, ConfigurationError
from cqcnn_alzheimer.pipeline import commands

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

_subcommands = [
    ('slice', commands.cmd_slice, "Slice NIfTI volumes into per-plane PGM images"),
    ('segment-train', commands.cmd_segment_train, "Train the skull-stripping U-Net"),
    ('segment-apply', commands.cmd_segment_apply, "Skull-strip a PGM tree with a trained U-Net"),
    ('diffuse-train', commands.cmd_diffuse_train, "Train a diffusion noise predictor"),
    ('diffuse-sample', commands.cmd_diffuse_sample, "Generate images with a trained noise predictor"),
    ('build-dataset', commands.cmd_build_dataset, "Split and balance a sliced dataset"),
    ('train', commands.cmd_train, "Train the model selected by the 'model' key"),
    ('evaluate', commands.cmd_evaluate, "Evaluate a trained classifier on the test split"),
    ('report', commands.cmd_report, "Summarize run directories into a CSV"),
    ('run-matrix', commands.cmd_run_matrix, "Train and summarize the plane x skull-stripping x qubits matrix"),
    ('convergence', commands.cmd_convergence, "Epochs to threshold for classical, 2-qubit and 3-qubit heads"),
    ('ablate-optimizers', commands.cmd_ablate_optimizers, "Compare the four update rules"),
]


class _ArgumentParser(argparse.ArgumentParser):

    def error(self, message):

        # Bad command lines are validation errors, like bad configuration files
        raise ConfigurationError("%s: %s" % (self.prog, message))


def build_parser():

    parser = _ArgumentParser(prog='cqcnn_pipeline.py',
                             description='Hybrid classical-quantum classification of brain MRI slices')

    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    for name, function, description in _subcommands:

        sub = subparsers.add_parser(name, help=description, description=description)

        sub.add_argument('--config', help="Path to configuration file", type=get_config, required=True)
        sub.add_argument("--loglevel", help="Level of log detail (DEBUG, INFO)", default='info')
        sub.add_argument("--logfile", help="Name of the log file (default: no log file)", default=None)

        sub.set_defaults(function=function)

    return parser


def main(argv=None):
    """
    Run one subcommand and return the process exit code: 0 on success, 1 for validation errors (command line
    or configuration), 2 for any other failure
    """

    try:

        args = build_parser().parse_args(argv)

    except ConfigurationError as e:

        sys.stderr.write("%s\n" % e.message)

        return EXIT_VALIDATION

    myLogging.setup_logging(args.loglevel, args.logfile)

    logger = myLogging.log.getLogger("cqcnn_pipeline")

    try:

        args.function(args.config)

    except ConfigurationError as e:

        logger.error(e.message)

        return EXIT_VALIDATION

    except cqException as e:

        logger.error("%s failed: %s" % (args.command, e.message))

        return EXIT_RUNTIME

    except Exception:

        logger.exception("%s failed" % args.command)

        return EXIT_RUNTIME

    logger.info("%s completed" % args.command)

    return EXIT_OK
