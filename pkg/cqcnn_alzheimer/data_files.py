import os
from importlib import resources


def get_data_file_path(data_file):
    """
    Returns the absolute path to the required data files.

    :param data_file: relative path to the data file, relative to the cqcnn_alzheimer/data path.
    So to get the path to data/logging.yaml you need to use data_file="logging.yaml"
    :return: absolute path of the data file
    """

    file_path = resources.files("cqcnn_alzheimer").joinpath("data", data_file)

    if not file_path.is_file():

        raise IOError("Could not read or find data file %s. Try reinstalling cqcnn_alzheimer. If this does not "
                      "fix your problem, open an issue on github." % data_file)

    return os.path.abspath(str(file_path))
