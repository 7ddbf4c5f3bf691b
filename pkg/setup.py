#!/usr/bin/env python3
"""
Setup script for the BSDE stability lab
Discrete-to-continuous convergence experiments for BSDEs with jumps
"""

from setuptools import setup, find_packages
from pathlib import Path

# Read the README file
this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text()

setup(
    name="bsde-lab",
    version="0.1.0",
    description="Stability lab for backward stochastic differential equations with jumps",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="BSDE Lab Contributors",
    packages=find_packages(exclude=("tests", "tests.*")),
    package_dir={"": "."},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Intended Audience :: Education",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    keywords="bsde jumps skorokhod picard monte-carlo convergence",
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.21.0,<2.0.0",
        "pandas>=2.0.0,<3.0.0",
        "scipy>=1.9.0,<2.0.0",
        "pyyaml>=6.0,<7.0",
        "pydantic>=2.0.0,<3.0.0",
    ],
    extras_require={
        "web": ["fastapi>=0.100.0", "uvicorn>=0.15.0"],
        "jit": ["numba>=0.57.0"],
        "dev": [
            "pytest>=7.0.0",
            "pytest-cov>=4.0.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "bsde-lab=tools.cli:main",
            "bsde-lab-api=tools.lab_api_server:main",
        ],
    },
    include_package_data=True,
    package_data={
        "": ["samples/*.txt", "config/*.yaml", "README.md"],
    },
    zip_safe=False,
)
