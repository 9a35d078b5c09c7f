#!/usr/bin/env python

"""Command line front-end of the pipeline: slicing, skull stripping, diffusion balancing, training and reports.
Run 'cqcnn_pipeline.py <command> --help' for the options of a command."""

import sys

from cqcnn_alzheimer.pipeline.cli import main

# execute only if run from command line
if __name__ == "__main__":

    sys.exit(main())
