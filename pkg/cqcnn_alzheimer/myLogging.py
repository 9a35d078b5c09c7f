import logging as log
# LEAVE THIS HERE: it is used by other modules
import logging.config as logconfig

import yaml

from cqcnn_alzheimer.data_files import get_data_file_path


def setup_logging(level='INFO', logfile=None):
    """
    Configure the root logger from the packaged logging.yaml.

    :param level: level for the console handler (the log file always gets DEBUG)
    :param logfile: name of the log file. If None, no file handler is installed
    """

    path = get_data_file_path('logging.yaml')

    with open(path, 'rt') as f:

        config = yaml.safe_load(f.read())

    # Now overwrite the loglevel for the console
    config['handlers']['console']['level'] = level.upper()

    if logfile is None:

        del config['handlers']['logfile']
        config['root']['handlers'] = ['console']

    else:

        # Overwrite the filename for the log file
        config['handlers']['logfile']['filename'] = logfile

    logconfig.dictConfig(config)
