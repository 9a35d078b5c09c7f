from setuptools import setup

import glob

data_files = ['data/logging.yaml']

setup(
    name='cqcnn_alzheimer',
    version='1.0',
    packages=['cqcnn_alzheimer',
              'cqcnn_alzheimer.volio',
              'cqcnn_alzheimer.neuralkernel',
              'cqcnn_alzheimer.qsim',
              'cqcnn_alzheimer.cqcnn',
              'cqcnn_alzheimer.pipeline'],
    description='Hybrid classical-quantum CNN for Alzheimer detection on MRI slices, with diffusion-based '
                'class balancing and U-Net skull stripping',
    scripts=glob.glob('scripts/*.py'),

    package_data={
              'cqcnn_alzheimer': data_files,
           },
    include_package_data=True,
    python_requires='>=3.9',
    install_requires=[
            'numpy >= 1.17',
            'scipy >=0.18',
            'astropy>=1.3.3',
            'numexpr',
            'pyyaml'
        ],
    extras_require={
        'test': ['pytest']
    }
)
