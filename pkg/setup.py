#!/usr/bin/env python3

from setuptools import setup

setup(
    name = 'pyinvert',
    version = '0.1.0',
    description = 'Recover latent and class vectors from conditional GAN images',
    long_description = open("README.md", "r").read(),
    long_description_content_type = "text/markdown",
    author = 'pyinvert developers',
    packages = ['invert'],
    install_requires = ['numpy >= 1.17', 'Pillow', 'matplotlib'],
    entry_points = {
        'console_scripts': ['pyinvert = invert.cli:main']
    },
    keywords = ('gan', 'inversion', 'latent', 'optimization'),
    classifiers = [
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research'
    ],
    setup_requires = ['pytest-runner'],
    tests_require = ['pytest', 'pytest-timeout']
)
