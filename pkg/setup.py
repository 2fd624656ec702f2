#!/usr/bin/env python3
"""Setup script for coworld - offline visual RL transfer with co-trained world models."""

from setuptools import setup, find_packages
from pathlib import Path

# Read the README file
this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text()

setup(
    name="coworld",
    version="0.1.0",
    author="Jos-few43",
    author_email="",
    description="Offline visual reinforcement learning transfer by co-training source and target world models",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(where=".", exclude=["tests", "tests.*", "examples", "examples.*"]),
    package_dir={"": "."},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Environment :: Console",
    ],
    python_requires=">=3.10",
    install_requires=[
        "rich>=14.0.0",
        "platformdirs>=4.0.0",
        "torch>=2.1.0",
        "numpy>=1.24.0",
        "gymnasium>=0.29.0",
        "matplotlib>=3.7.0",
    ],
    extras_require={
        "test": ["pytest>=7.0.0"],
    },
    entry_points={
        "console_scripts": [
            "coworld=src.main:main",
        ],
    },
    keywords="reinforcement-learning world-models offline-rl transfer-learning dreamer",
)
