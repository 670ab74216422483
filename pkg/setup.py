from setuptools import setup
# To use a consistent encoding
from codecs import open
from os import path
from semfuse import __version__

here = path.abspath(path.dirname(__file__))

with open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='semfuse',
    version=__version__,  # YY.MM.patch
    description='Semantic labeling of RGB-D scans: synchronization, TSDF '
                'fusion, multi-model 2D consensus, 3D label lifting, '
                'evaluation and a resumable per-scene task graph.',
    long_description=long_description,  # [1]
    # Author details
    author='Francisco del Campo R.',
    author_email='fdelcampo@csn.uchile.cl',
    license='MIT',  # [2]
    python_requires='>=3.9',
    install_requires=['numpy',
                      'scipy',
                      'scikit-image',
                      'Pillow',
                      'matplotlib>=3.6'],
    extras_require={'test': ['pytest']},
    packages=['semfuse'],
    package_dir={'semfuse': 'semfuse'},
    # See https://pypi.python.org/pypi?%3Aaction=list_classifiers
    classifiers=[
        # How mature is this project? Common values are
        #   3 - Alpha
        #   4 - Beta
        #   5 - Production/Stable
        'Development Status :: 4 - Beta',  # [3]
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Image Recognition',
        # Pick your license as you wish (should match "license" above)
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3 :: Only',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10'
        ],
    keywords='RGB-D semantic-segmentation TSDF point-cloud labeling',
    entry_points={
        'console_scripts': [
            'semfuse=semfuse.cli:main',
        ],
    },
    )

# [1] on the PyPI the field "long_description" will be used
#     as the description of the package on the website.
# [2] Specifying a licence is important for Open Source software
# [3] Maturity of package.
