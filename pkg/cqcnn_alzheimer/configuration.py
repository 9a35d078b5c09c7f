import configparser
import collections
import fractions
import os

from cqcnn_alzheimer.cqException import ConfigurationError

# The file has no sections: a fake one is prepended before handing it to configparser
_SECTION = 'experiment'

PLANES = ('axial', 'coronal', 'sagittal')


def _parse_bool(value):

    lowered = value.strip().lower()

    if lowered in ('true', 'yes', '1', 'on'):
        return True

    if lowered in ('false', 'no', '0', 'off'):
        return False

    raise ValueError("not a boolean: %s" % value)


def _parse_str_list(value):

    return [token.strip() for token in value.split(",") if token.strip() != '']


def _parse_int_list(value):

    return [int(token) for token in _parse_str_list(value)]


def _parse_fraction(value):

    scale = fractions.Fraction(value.strip())

    if scale <= 0:
        raise ValueError("must be positive")

    return scale


def _parse_path(value):

    value = value.strip()

    if value == '':
        return None

    return os.path.abspath(os.path.expandvars(os.path.expanduser(value)))


def _parse_path_list(value):

    return [_parse_path(token) for token in _parse_str_list(value)]


def _one_of(*choices):

    def parser(value):

        value = value.strip().lower()

        if value not in choices:
            raise ValueError("must be one of %s" % ", ".join(choices))

        return value

    return parser


# Option = (parser, default text, must exist on disk, comment for the default file)
Option = collections.namedtuple("Option", ["parser", "default", "must_exist", "comment"])

_schema = collections.OrderedDict([

    ('General', collections.OrderedDict([
        ('seed', Option(int, '0', False, "Seed from which every random stream is derived")),
        ('output_dir', Option(_parse_path, 'out', False, "Where all products of a command are written")),
        ('model', Option(_one_of('cqcnn', 'diffusion', 'skullnet'), 'cqcnn', False,
                         "Model trained by the 'train' command")),
    ])),

    ('Slicing', collections.OrderedDict([
        ('input_dir', Option(_parse_path, '', True,
                             "Directory of NIfTI volumes, optionally with one sub-directory per class")),
        ('planes', Option(_parse_str_list, 'axial,coronal,sagittal', False, "Planes to slice")),
        ('image_size', Option(int, '128', False, "Side of the square images fed to every model")),
        ('axial_n', Option(int, '40', False, "Requested number of axial slices (before exclusions)")),
        ('axial_k1', Option(int, '10', False, "Axial slices excluded at the start")),
        ('axial_k2', Option(int, '18', False, "Axial slices excluded at the end")),
        ('coronal_n', Option(int, '40', False, "Requested number of coronal slices")),
        ('coronal_k1', Option(int, '10', False, "Coronal slices excluded at the start")),
        ('coronal_k2', Option(int, '18', False, "Coronal slices excluded at the end")),
        ('sagittal_n', Option(int, '40', False, "Requested number of sagittal slices")),
        ('sagittal_k1', Option(int, '13', False, "Sagittal slices excluded at the start")),
        ('sagittal_k2', Option(int, '15', False, "Sagittal slices excluded at the end")),
    ])),

    ('Segmentation', collections.OrderedDict([
        ('image_dir', Option(_parse_path, '', True, "PGM tree of images (segment-train, segment-apply)")),
        ('mask_dir', Option(_parse_path, '', True, "PGM tree of brain masks matching image_dir file names")),
        ('checkpoint', Option(_parse_path, '', True, "Trained checkpoint read by apply/sample/evaluate")),
        ('width_scale', Option(_parse_fraction, '1', False,
                               "Channel multiplier for the U-Nets, e.g. 1/8 for desk-scale runs")),
        ('segment_epochs', Option(int, '30', False, "Epochs of segmenter training")),
    ])),

    ('Diffusion', collections.OrderedDict([
        ('diffusion_steps', Option(int, '1000', False, "Number of noising steps T")),
        ('beta_start', Option(float, '1e-4', False, "First value of the linear beta schedule")),
        ('beta_end', Option(float, '0.02', False, "Last value of the linear beta schedule")),
        ('diffusion_widths', Option(_parse_int_list, '16,32,64', False,
                                    "Channel widths of the noise predictor, one per depth")),
        ('embedding_dim', Option(int, '32', False, "Dimension of the sinusoidal timestep embedding")),
        ('diffusion_epochs', Option(int, '800', False, "Epochs of noise-predictor training")),
        ('diffusion_batch', Option(int, '8', False, "Images per noise-predictor update")),
        ('n_samples', Option(int, '16', False, "Images generated by diffuse-sample")),
    ])),

    ('Dataset', collections.OrderedDict([
        ('dataset_dir', Option(_parse_path, '', True, "PGM tree written by 'slice': <plane>/<class>/*.pgm")),
        ('minority_class', Option(str, '', False, "Class topped up with synthetic images (default: smallest)")),
        ('test_fraction', Option(float, '0.1', False, "Fraction of each class held out for testing")),
        ('balance', Option(_parse_bool, 'true', False, "Top up the minority class with diffusion samples")),
        ('diffusion_checkpoint_axial', Option(_parse_path, '', True, "Diffusion checkpoint, axial plane")),
        ('diffusion_checkpoint_coronal', Option(_parse_path, '', True, "Diffusion checkpoint, coronal plane")),
        ('diffusion_checkpoint_sagittal', Option(_parse_path, '', True, "Diffusion checkpoint, sagittal plane")),
    ])),

    ('Classifier', collections.OrderedDict([
        ('manifest', Option(_parse_path, '', True, "Dataset manifest written by build-dataset")),
        ('plane', Option(_one_of('axial', 'coronal', 'sagittal', '3plane'), 'axial', False,
                         "Plane of the dataset (3plane pools all of them)")),
        ('skull_stripped', Option(_parse_bool, 'false', False, "Whether the dataset was skull-stripped")),
        ('head', Option(_one_of('quantum', 'classical_softmax'), 'quantum', False, "Classifier head")),
        ('n_qubits', Option(int, '2', False, "Qubits of the quantum head (2 or 3)")),
        ('fc_width', Option(int, '0', False, "Width of the fully connected layer (0 means n_qubits)")),
        ('wide_fc', Option(_parse_bool, 'false', False, "Use fc_width=4 whatever the number of qubits")),
        ('conv1_out', Option(int, '2', False, "Filters of the first convolution")),
        ('conv2_out', Option(int, '4', False, "Filters of the second convolution")),
        ('kernel', Option(int, '5', False, "Convolution kernel side")),
        ('stride', Option(int, '1', False, "Convolution stride")),
        ('dropout_rate', Option(float, '0.5', False, "Dropout rate after the convolutional trunk")),
        ('lr', Option(float, '0.001', False, "Learning rate")),
        ('epochs', Option(int, '10', False, "Training epochs")),
        ('batch_size', Option(int, '1', False, "Samples per update (gradients are averaged)")),
        ('optimizer', Option(_one_of('adam', 'sgd', 'rmsprop', 'adagrad'), 'adam', False, "Update rule")),
        ('run_name', Option(str, 'run', False, "Name of the run, used in CSV rows and directory names")),
        ('record_timing', Option(_parse_bool, 'false', False,
                                 "Write wall-clock times to the CSVs (reruns are then no longer byte-identical)")),
    ])),

    ('Report', collections.OrderedDict([
        ('run_dirs', Option(_parse_path_list, '', True, "Comma-separated run directories to summarize")),
        ('stripped_manifest', Option(_parse_path, '', True,
                                     "Manifest of the skull-stripped dataset, used by run-matrix")),
        ('accuracy_threshold', Option(float, '0.95', False, "Train accuracy for the epochs-to-threshold column")),
        ('matrix_planes', Option(_parse_str_list, 'axial,coronal,sagittal,3plane', False,
                                 "Planes of the run matrix")),
        ('matrix_qubits', Option(_parse_int_list, '2,3', False, "Qubit counts of the run matrix")),
        ('matrix_seeds', Option(_parse_int_list, '0', False, "Seeds of the run matrix (one run per seed)")),
    ])),
])


def _flat_schema():

    flat = collections.OrderedDict()

    for section in _schema.values():
        flat.update(section)

    return flat


class ExperimentConfig(object):
    """
    Validated, typed view of a configuration file. Values are accessed with config['key'].
    """

    def __init__(self, values, config_file=None):

        self._values = values
        self.config_file = config_file

    def __getitem__(self, key):

        return self._values[key]

    def __contains__(self, key):

        return key in self._values

    def keys(self):

        return self._values.keys()

    def require(self, *keys):

        for key in keys:

            value = self._values[key]

            if value is None or value == '' or value == []:

                raise ConfigurationError("Configuration key '%s' is required by this command" % key)

    def replace(self, **overrides):
        """
        Return a copy with some values replaced (values must already be typed)
        """

        values = collections.OrderedDict(self._values)

        for key, value in overrides.items():

            if key not in values:
                raise ConfigurationError("Unknown configuration key '%s'" % key)

            values[key] = value

        return ExperimentConfig(values, self.config_file)

    @property
    def fc_width(self):

        if self._values['wide_fc']:
            return 4

        return self._values['fc_width'] if self._values['fc_width'] > 0 else self._values['n_qubits']

    def slice_request(self, plane):

        return self._values['%s_n' % plane], self._values['%s_k1' % plane], self._values['%s_k2' % plane]


def parse_config_text(text, config_file=None):

    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=('#',),
                                       inline_comment_prefixes=('#',), delimiters=('=',))
    parser.optionxform = str

    try:

        parser.read_string("[%s]\n%s" % (_SECTION, text))

    except configparser.Error as e:

        raise ConfigurationError("Could not parse configuration: %s" % e)

    if parser.sections() != [_SECTION]:
        raise ConfigurationError("Sections are not allowed in the configuration file")

    schema = _flat_schema()

    given = parser[_SECTION]

    unknown = [key for key in given.keys() if key not in schema]

    if len(unknown) > 0:
        raise ConfigurationError("Unknown configuration key(s): %s" % ", ".join(unknown))

    values = collections.OrderedDict()

    for key, option in schema.items():

        raw = given.get(key, option.default)

        try:

            value = option.parser(raw)

        except (ValueError, ZeroDivisionError) as e:

            raise ConfigurationError("Bad value '%s' for configuration key '%s': %s" % (raw, key, e))

        values[key] = value

    config = ExperimentConfig(values, config_file)

    _validate(config)

    return config


def _validate(config):

    schema = _flat_schema()

    for key, option in schema.items():

        if not option.must_exist:
            continue

        paths = config[key] if isinstance(config[key], list) else [config[key]]

        for path in paths:

            if path is not None and not os.path.exists(path):
                raise ConfigurationError("Path %s (key '%s') does not exist" % (path, key))

    for plane in config['planes'] + config['matrix_planes']:

        if plane not in PLANES + ('3plane',):
            raise ConfigurationError("Unknown plane '%s'" % plane)

    if '3plane' in config['planes']:
        raise ConfigurationError("'planes' selects planes to slice, 3plane is not one of them")

    if config['n_qubits'] not in (2, 3):
        raise ConfigurationError("n_qubits must be 2 or 3, got %s" % config['n_qubits'])

    for q in config['matrix_qubits']:

        if q not in (2, 3):
            raise ConfigurationError("matrix_qubits entries must be 2 or 3, got %s" % q)

    if config.fc_width < config['n_qubits']:
        raise ConfigurationError("fc_width (%s) must be at least n_qubits (%s)" % (config.fc_width,
                                                                                  config['n_qubits']))

    if not 0.0 <= config['dropout_rate'] < 1.0:
        raise ConfigurationError("dropout_rate must be in [0, 1)")

    if not 0.0 < config['test_fraction'] < 1.0:
        raise ConfigurationError("test_fraction must be in (0, 1)")

    for key in ('image_size', 'epochs', 'batch_size', 'segment_epochs', 'diffusion_epochs', 'diffusion_batch',
                'diffusion_steps', 'embedding_dim', 'kernel', 'stride', 'conv1_out', 'conv2_out'):

        minimum = 0 if 'epochs' in key else 1

        if config[key] < minimum:
            raise ConfigurationError("%s must be >= %s" % (key, minimum))

    if config['lr'] < 0:
        raise ConfigurationError("lr must be non-negative")


def get_config(config_file):
    """
    Read and validate a configuration file. Can be used directly as an argparse type.
    """

    path = os.path.abspath(os.path.expandvars(os.path.expanduser(config_file)))

    if not os.path.exists(path):
        raise ConfigurationError("Configuration path %s does not exist! " % path)

    with open(path, encoding='utf-8') as f:

        text = f.read()

    return parse_config_text(text, config_file=path)


def default_config():

    return parse_config_text('')


def default_config_text():

    lines = []

    for section, options in _schema.items():

        lines.append("")
        lines.append("#### %s" % section)

        for key, option in options.items():

            lines.append("")
            lines.append("# %s" % option.comment)
            lines.append("%s = %s" % (key, option.default))

    return "\n".join(lines) + "\n"
