import os

from cqcnn_alzheimer import myLogging
from cqcnn_alzheimer.cqException import cqException

_logger = myLogging.log.getLogger("make_directory")


def make_dir_if_not_exist(*parts):
    """
    Join the path components and create the directory (with its parents) if needed.

    :return: the joined path
    """

    path = os.path.join(*parts)

    if os.path.isdir(path):

        return path

    if os.path.exists(path):

        raise cqException("Cannot create directory %s: a file with the same name exists" % path)

    try:

        os.makedirs(path)

    except OSError as e:

        _logger.error("Could not make the directory %s" % path)

        raise cqException("Could not make the directory %s: %s" % (path, e))

    _logger.debug("Created directory %s" % path)

    return path
