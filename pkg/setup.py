from setuptools import setup, find_packages
from io import open
from os import path

from po_forge import __version__

here = path.abspath(path.dirname(__file__))

with open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='po_forge',
    version=__version__,
    license='MIT',
    description='Identification and double-robust estimation of causal '
                'functionals in discrete-instrument potential-outcomes '
                'models.',
    long_description=long_description,
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Topic :: Scientific/Engineering',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
    ],
    packages=find_packages(),
    install_requires=[
        'numpy', 'scipy', 'scikit-learn', 'kivy', 'trio', 'tree_config'],
    extras_require={
        'dev': [
            'pytest>=3.6', 'pytest-cov', 'flake8', 'sphinx-rtd-theme',
            'coveralls', 'pytest-trio', 'sphinxcontrib-trio'],
    },
    package_data={
        'po_forge':
            []},
    entry_points={
        'console_scripts': ['po-forge=po_forge.cli:run'],
    },
)
