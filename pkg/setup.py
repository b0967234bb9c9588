#!/usr/bin/env python3
import pathlib

from setuptools import setup

HERE = pathlib.Path(__file__).parent

# The text of the README file
README = (HERE / "README.md").read_text()

setup(
    name="mixedboot",
    description="Random effect block bootstraps for random intercept linear mixed models",
    long_description=README,
    long_description_content_type="text/markdown",
    license="AGPL-3.0",
    version="2026.1",
    packages=[
        "mixedboot",
        "mixedboot.lib",
        "mixedboot.tests",
    ],
    zip_safe=False,
    scripts=["bin/mixedboot.py"],
    keywords="mixed model bootstrap random effects REML confidence interval simulation",
    python_requires="~=3.8",
    install_requires=[
        "configparser>=5.0.1",
        "numpy>=1.22",
        "scipy>=1.7",
        "pandas>=1.5",
    ],
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: GNU Affero General Public License v3 or later (AGPLv3+)",
        "Environment :: Console",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Operating System :: POSIX :: Linux",
        "Typing :: Typed",
        "Framework :: Pytest",
        "Framework :: Flake8",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "Programming Language :: Python :: 3.8",
    ],
)
